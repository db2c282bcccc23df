"""P1 finite-element matrices for the damped scalar wave equation.

For per-triangle constant density ``rho`` and modulus ``chi = rho v_p^2``::

    B_jm = int rho psi_m psi_j               (mass)
    C_jm = int chi grad psi_m . grad psi_j   (stiffness)
    E_jm = int_{absorbing} (chi / v_p) psi_m psi_j
    h_j  = int rho G psi_j                   (load)

The geometric parts of every element integral are computed once per mesh by
:class:`Assembler`; assembling for new coefficients is then a weighted sum.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .geometry import InclusionParams, LayeredModel, region_labels, region_properties
from .mesh import ABSORBING, Mesh


class AssemblyError(ValueError):
    pass


@dataclass(frozen=True)
class SourceField:
    """Gaussian emitters on the surface: ``G(x) = A/(pi kappa) sum_k exp(-|x-x_k|^2/kappa)``."""
    emitters: np.ndarray
    kappa: float = 0.04
    amplitude: float = 1.0

    def __post_init__(self):
        e = np.atleast_1d(np.asarray(self.emitters, dtype=float))
        if e.ndim == 1:
            e = np.column_stack([e, np.zeros(len(e))])
        object.__setattr__(self, "emitters", e)
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")

    def __call__(self, p) -> np.ndarray:
        p = np.atleast_2d(np.asarray(p, dtype=float))
        out = np.zeros(len(p))
        for x, y in self.emitters:
            out += np.exp(-((p[:, 0] - x) ** 2 + (p[:, 1] - y) ** 2) / self.kappa)
        return self.amplitude * out / (np.pi * self.kappa)


_MASS_REF = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
_EDGE_REF = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
# three-point rule, exact for quadratics
_GAUSS_BARY = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])


def _pattern(rows: np.ndarray, cols: np.ndarray, n: int):
    """CSR pattern of the given COO entries and the entry -> nonzero map."""
    keys = rows.astype(np.int64) * n + cols
    uniq, inv = np.unique(keys, return_inverse=True)
    r = uniq // n
    indptr = np.concatenate([[0], np.cumsum(np.bincount(r, minlength=n))])
    return (uniq % n).astype(np.int32), indptr.astype(np.int32), inv.ravel()


@dataclass
class AssembledSystem:
    B: sp.csr_matrix
    C: sp.csr_matrix
    E: sp.csr_matrix
    h_vec: np.ndarray
    rho_t: np.ndarray = field(repr=False)
    vp_t: np.ndarray = field(repr=False)
    assembler: "Assembler" = field(repr=False)

    @property
    def dof_count(self) -> int:
        return self.B.shape[0]

    @property
    def max_speed(self) -> float:
        return float(self.vp_t.max())


class Assembler:
    """Per-mesh geometric element data reused for any coefficient field."""

    def __init__(self, mesh: Mesh, source: SourceField):
        self.mesh = mesh
        self.source = source
        pts, tri = mesh.points, mesh.triangles
        n = mesh.n_points
        self.n = n
        area = mesh.areas()
        if np.any(area <= 0):
            raise AssemblyError("mesh has non-positive triangle areas")
        p = pts[tri]
        # gradients of the barycentric basis: rows are grad psi_i
        d = np.stack([p[:, 1] - p[:, 2], p[:, 2] - p[:, 0], p[:, 0] - p[:, 1]], axis=1)
        grads = np.stack([d[:, :, 1], -d[:, :, 0]], axis=2) / (2.0 * area)[:, None, None]
        self.mass_geo = (area[:, None, None] * _MASS_REF).reshape(-1, 9)
        self.stiff_geo = (area[:, None, None] * np.einsum("tik,tjk->tij", grads, grads)).reshape(-1, 9)
        rows = np.repeat(tri, 3, axis=1)
        cols = np.tile(tri, (1, 3))
        self.indices, self.indptr, inv = _pattern(rows.ravel(), cols.ravel(), n)
        self.tri_map = inv.reshape(-1, 9)

        qp = np.einsum("qk,tkd->tqd", _GAUSS_BARY, p)
        g = source(qp.reshape(-1, 2)).reshape(-1, 3)
        self.load_geo = (area / 3.0)[:, None] * (g @ _GAUSS_BARY)

        edge_ids = np.flatnonzero(mesh.edge_kinds == ABSORBING)
        edges = mesh.edges[edge_ids]
        self.edge_owner = mesh.edge_triangle(edge_ids)
        length = np.linalg.norm(pts[edges[:, 0]] - pts[edges[:, 1]], axis=1)
        self.edge_geo = (length[:, None, None] * _EDGE_REF).reshape(-1, 4)
        er = np.repeat(edges, 2, axis=1)
        ec = np.tile(edges, (1, 2))
        self.e_indices, self.e_indptr, einv = _pattern(er.ravel(), ec.ravel(), n)
        self.edge_map = einv.reshape(-1, 4)

    def _csr(self, data, indices, indptr) -> sp.csr_matrix:
        return sp.csr_matrix((data, indices, indptr), shape=(self.n, self.n))

    def coefficients(self, model: LayeredModel, inclusion: InclusionParams | None,
                     labels: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Per-triangle ``(rho, v_p)``; labels default to barycenter membership."""
        if labels is None:
            labels = region_labels(model, inclusion, self.mesh.barycenters())
        rho, vp = region_properties(model, inclusion)
        labels = np.asarray(labels)
        if labels.min() < 0 or labels.max() >= len(rho):
            raise AssemblyError(f"triangle labels outside 0..{len(rho) - 1}")
        return rho[labels], vp[labels]

    def assemble(self, rho_t: np.ndarray, vp_t: np.ndarray) -> AssembledSystem:
        chi = rho_t * vp_t**2
        nnz = len(self.indices)
        B = np.bincount(self.tri_map.ravel(), (rho_t[:, None] * self.mass_geo).ravel(), nnz)
        C = np.bincount(self.tri_map.ravel(), (chi[:, None] * self.stiff_geo).ravel(), nnz)
        damp = (rho_t * vp_t)[self.edge_owner]
        E = np.bincount(self.edge_map.ravel(), (damp[:, None] * self.edge_geo).ravel(),
                        len(self.e_indices))
        h = np.bincount(self.mesh.triangles.ravel(), (rho_t[:, None] * self.load_geo).ravel(), self.n)
        return AssembledSystem(self._csr(B, self.indices, self.indptr),
                               self._csr(C, self.indices, self.indptr),
                               self._csr(E, self.e_indices, self.e_indptr),
                               h, rho_t.copy(), vp_t.copy(), self)

    def update(self, base: AssembledSystem, rho_t: np.ndarray, vp_t: np.ndarray) -> AssembledSystem:
        """Reassemble touching only triangles whose coefficients changed."""
        changed = np.flatnonzero((rho_t != base.rho_t) | (vp_t != base.vp_t))
        if changed.size == 0:
            return base
        d_rho = rho_t[changed] - base.rho_t[changed]
        d_chi = rho_t[changed] * vp_t[changed] ** 2 - base.rho_t[changed] * base.vp_t[changed] ** 2
        nnz = len(self.indices)
        idx = self.tri_map[changed].ravel()
        B = base.B.data + np.bincount(idx, (d_rho[:, None] * self.mass_geo[changed]).ravel(), nnz)
        C = base.C.data + np.bincount(idx, (d_chi[:, None] * self.stiff_geo[changed]).ravel(), nnz)
        E = base.E.data
        hit = np.flatnonzero(np.isin(self.edge_owner, changed))
        if hit.size:
            own = self.edge_owner[hit]
            d_damp = rho_t[own] * vp_t[own] - base.rho_t[own] * base.vp_t[own]
            E = E + np.bincount(self.edge_map[hit].ravel(), (d_damp[:, None] * self.edge_geo[hit]).ravel(),
                                len(self.e_indices))
        tri = self.mesh.triangles[changed]
        h = base.h_vec + np.bincount(tri.ravel(), (d_rho[:, None] * self.load_geo[changed]).ravel(), self.n)
        return AssembledSystem(self._csr(B, self.indices, self.indptr),
                               self._csr(C, self.indices, self.indptr),
                               self._csr(E, self.e_indices, self.e_indptr),
                               h, rho_t.copy(), vp_t.copy(), self)


def assemble(mesh: Mesh, model: LayeredModel, inclusion: InclusionParams | None,
             source: SourceField, labels: np.ndarray | None = "mesh",
             assembler: Assembler | None = None) -> AssembledSystem:
    """Assemble ``B, C, E, h`` on ``mesh``.

    ``labels="mesh"`` uses the mesh's own region labels (the right choice for
    meshes built for this inclusion); ``None`` relabels by barycenter, which is
    how fixed meshes follow a moving inclusion.
    """
    asm = assembler or Assembler(mesh, source)
    if isinstance(labels, str):
        labels = mesh.labels
    rho_t, vp_t = asm.coefficients(model, inclusion, labels)
    return asm.assemble(rho_t, vp_t)


def update_inclusion(base: AssembledSystem, mesh: Mesh, model: LayeredModel,
                     old_inc: InclusionParams | None, new_inc: InclusionParams | None) -> AssembledSystem:
    """Fixed-mesh update from ``old_inc`` to ``new_inc`` (barycenter labelling)."""
    asm = base.assembler
    if asm.mesh is not mesh:
        raise AssemblyError("base system was assembled on a different mesh")
    if old_inc == new_inc:
        return base
    rho_t, vp_t = asm.coefficients(model, new_inc)
    return asm.update(base, rho_t, vp_t)


def lumped(B: sp.csr_matrix) -> sp.csr_matrix:
    """Row-sum lumped mass."""
    return sp.diags(np.asarray(B.sum(axis=1)).ravel()).tocsr()
