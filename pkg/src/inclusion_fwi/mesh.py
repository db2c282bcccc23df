"""Triangulations of the layered scene: uniform, stratified and fully adapted.

Adapted meshes follow the distance-function force relaxation of Persson and
Strang, run on a point set whose interface nodes (layer lines, ellipse
boundary, rectangle sides) are pinned so that neighbouring regions share
vertices.  Interface segments missing from the final Delaunay triangulation
are split until every one of them is an edge.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from .geometry import (
    GeometryError, InclusionParams, LayeredModel, Rect, SignedDistance,
    ellipse_clearance, ellipse_curvature_radius, ellipse_point, ellipse_sd,
    region_labels, scene_signed_distances,
)

log = logging.getLogger(__name__)

SURFACE, ABSORBING, INTERIOR = 0, 1, 2
EDGE_KINDS = {SURFACE: "surface", ABSORBING: "absorbing", INTERIOR: "interior"}


class MeshError(RuntimeError):
    """Mesh generation failed; ``mesh`` holds the last state when available."""

    def __init__(self, msg: str, mesh: "Mesh | None" = None, displacement: float | None = None):
        super().__init__(msg)
        self.mesh = mesh
        self.displacement = displacement


class MeshConfigError(ValueError):
    pass


@dataclass
class Mesh:
    points: np.ndarray
    triangles: np.ndarray
    labels: np.ndarray
    surface_y: float = 0.0
    _edges: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.triangles = np.asarray(self.triangles, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)

    @property
    def n_points(self) -> int:
        return len(self.points)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def areas(self) -> np.ndarray:
        return triangle_areas(self.points, self.triangles)

    def barycenters(self) -> np.ndarray:
        return self.points[self.triangles].mean(axis=1)

    def _edge_table(self):
        if self._edges is None:
            t = self.triangles
            e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
            e.sort(axis=1)
            uniq, inv, counts = np.unique(e, axis=0, return_inverse=True, return_counts=True)
            self._edges = (uniq, inv.ravel(), counts)
        return self._edges

    @property
    def edges(self) -> np.ndarray:
        return self._edge_table()[0]

    @property
    def edge_kinds(self) -> np.ndarray:
        """Classification of :attr:`edges`: surface, absorbing or interior."""
        uniq, _, counts = self._edge_table()
        kinds = np.full(len(uniq), INTERIOR)
        bnd = counts == 1
        y = self.points[uniq, 1]
        on_surface = np.all(np.abs(y - self.surface_y) < 1e-12, axis=1)
        kinds[bnd & on_surface] = SURFACE
        kinds[bnd & ~on_surface] = ABSORBING
        return kinds

    def boundary_edges(self, kind: int) -> np.ndarray:
        return self.edges[self.edge_kinds == kind]

    def edge_triangle(self, edge_ids: np.ndarray) -> np.ndarray:
        """Index of the (first) triangle owning each edge."""
        _, inv, _ = self._edge_table()
        owner = np.empty(len(self.edges), dtype=np.int64)
        tri_of = np.tile(np.arange(self.n_triangles), 3)
        owner[inv[::-1]] = tri_of[::-1]
        return owner[edge_ids]

    def min_edge_length(self) -> float:
        e = self.edges
        return float(np.min(np.linalg.norm(self.points[e[:, 0]] - self.points[e[:, 1]], axis=1)))


@dataclass(frozen=True)
class MeshSpec:
    regime: str
    h: float
    model: LayeredModel
    inclusion: InclusionParams | None = None

    def __post_init__(self):
        if self.regime not in ("uniform", "stratified", "adapted"):
            raise MeshConfigError(f"unknown mesh regime {self.regime!r}")
        if not self.h > 0:
            raise MeshConfigError("h must be positive")

    @property
    def rect(self) -> Rect:
        return self.model.rect


def triangle_areas(points, triangles) -> np.ndarray:
    p = points[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def triangle_quality(points, triangles) -> np.ndarray:
    """``2 r_in / r_circ``: 1 for equilateral triangles, 0 for degenerate ones."""
    p = points[triangles]
    a = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
    b = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
    c = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
    return (b + c - a) * (c + a - b) * (a + b - c) / (a * b * c)


def _orient(points, triangles) -> np.ndarray:
    tri = np.array(triangles, dtype=np.int64)
    neg = triangle_areas(points, tri) < 0
    tri[neg] = tri[neg][:, [0, 2, 1]]
    return tri


def _divisions(length: float, h: float, exact: bool, what: str) -> int:
    n = length / h
    if exact:
        k = int(round(n))
        if k < 1 or abs(n - k) > 1e-9 * max(n, 1.0):
            raise MeshConfigError(f"{what} length {length:g} is not an integer multiple of h={h:g}")
        return k
    return max(1, int(np.ceil(n - 1e-9)))


def _grid_mesh(xs: np.ndarray, ys: np.ndarray):
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    nx = len(xs)
    i, j = np.meshgrid(np.arange(nx - 1), np.arange(len(ys) - 1), indexing="xy")
    i, j = i.ravel(), j.ravel()
    p00 = j * nx + i
    p10 = p00 + 1
    p01 = p00 + nx
    p11 = p01 + 1
    tri = np.concatenate([np.column_stack([p00, p10, p11]), np.column_stack([p00, p11, p01])])
    return pts, tri


def uniform_mesh(spec: MeshSpec) -> Mesh:
    """Structured grid of squares of side ``h``, each split into two triangles."""
    r = spec.rect
    nx = _divisions(r.width, spec.h, True, "x")
    ny = _divisions(r.height, spec.h, True, "y")
    xs = np.linspace(r.x_min, r.x_max, nx + 1)
    ys = np.linspace(r.y_min, r.y_max, ny + 1)
    pts, tri = _grid_mesh(xs, ys)
    tri = _orient(pts, tri)
    labels = region_labels(spec.model, spec.inclusion, pts[tri].mean(axis=1))
    return Mesh(pts, tri, labels, r.y_max)


def stratified_mesh(spec: MeshSpec) -> Mesh:
    """Grid whose rows include every layer interface."""
    r = spec.rect
    bounds = spec.model.bounds
    gaps = -np.diff(np.asarray(spec.model.interfaces))
    if gaps.size and gaps.min() < spec.h / 2:
        raise MeshConfigError(f"layer interfaces closer than h/2 (gap {gaps.min():g})")
    nx = _divisions(r.width, spec.h, True, "x")
    xs = np.linspace(r.x_min, r.x_max, nx + 1)
    rows = [bounds[-1:]]
    for top, bot in zip(bounds[-2::-1], bounds[::-1]):
        n = _divisions(top - bot, spec.h, False, "layer")
        rows.append(np.linspace(bot, top, n + 1)[1:])
    ys = np.concatenate(rows)
    pts, tri = _grid_mesh(xs, ys)
    tri = _orient(pts, tri)
    labels = region_labels(spec.model, spec.inclusion, pts[tri].mean(axis=1))
    return Mesh(pts, tri, labels, r.y_max)


# ---------------------------------------------------------------------------
# adapted meshes


def _line_nodes(x0: float, x1: float, h: float) -> np.ndarray:
    n = max(1, int(np.ceil((x1 - x0) / h - 1e-9)))
    return np.linspace(x0, x1, n + 1)


def _ellipse_line_crossings(inc: InclusionParams, y0: float) -> np.ndarray:
    """Parametric angles where the ellipse boundary meets ``y = y0``."""
    A = inc.a * np.sin(inc.theta)
    B = inc.b * np.cos(inc.theta)
    R = np.hypot(A, B)
    c = (y0 - inc.c_y) / R
    if abs(c) >= 1.0:
        return np.empty(0)
    phi = np.arctan2(B, A)
    d = np.arccos(c)
    return np.mod(np.array([phi - d, phi + d]), 2 * np.pi)


def _arc_params(inc: InclusionParams, t0: float, t1: float, h: float, n_quad: int = 400) -> np.ndarray:
    """Interior node angles on the arc ``(t0, t1)`` with curvature-limited spacing."""
    t = np.linspace(t0, t1, n_quad + 1)
    dl = np.hypot(inc.a * np.sin(t), inc.b * np.cos(t))
    spacing = np.clip(ellipse_curvature_radius(inc, t), h / 4, h)
    w = dl / spacing
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (w[1:] + w[:-1]) * np.diff(t))])
    n = max(1, int(round(cum[-1])))
    if n <= 1:
        return np.empty(0)
    return np.interp(np.linspace(0, cum[-1], n + 1)[1:-1], cum, t)


@dataclass
class _Interfaces:
    """Pinned interface nodes kept as curve parameters so segments can be split."""
    inc: InclusionParams
    rect: Rect
    ellipse_t: list           # sorted angles in [0, 2pi)
    line_pieces: list          # (y, sorted xs) per straight interface piece
    boundary: np.ndarray       # rectangle-side nodes

    def ellipse_nodes(self) -> np.ndarray:
        return ellipse_point(self.inc, np.asarray(self.ellipse_t))

    def points(self) -> tuple[np.ndarray, list]:
        """All pinned points and index pairs of the interface segments."""
        blocks = [self.boundary]
        segments = []
        offset = len(self.boundary)
        for y, xs in self.line_pieces:
            blocks.append(np.column_stack([xs, np.full(len(xs), y)]))
            idx = np.arange(offset, offset + len(xs))
            segments += [("line", (y, k), a, b) for k, (a, b) in enumerate(zip(idx[:-1], idx[1:]))]
            offset += len(xs)
        e = self.ellipse_nodes()
        blocks.append(e)
        idx = np.arange(offset, offset + len(e))
        segments += [("ellipse", k, a, b) for k, (a, b) in enumerate(zip(idx, np.roll(idx, -1)))]
        pts = np.concatenate(blocks)
        return pts, segments


def _build_interfaces(model: LayeredModel, inc: InclusionParams, h: float) -> _Interfaces:
    rect = model.rect
    breaks = []
    pieces = []
    for y in model.interfaces:
        tc = _ellipse_line_crossings(inc, y)
        if len(tc) == 2:
            xa, xb = sorted(ellipse_point(inc, tc)[:, 0])
            if xb - xa < h / 4:
                raise MeshError(f"inclusion nearly tangent to the interface y={y:g}")
            breaks.extend(tc)
            spans = [(rect.x_min, xa), (xb, rect.x_max)]
        else:
            spans = [(rect.x_min, rect.x_max)]
        for x0, x1 in spans:
            pieces.append((y, _line_nodes(x0, x1, h)))
    breaks = sorted(np.mod(breaks, 2 * np.pi)) if breaks else [0.0]
    ts = []
    for k, t0 in enumerate(breaks):
        t1 = breaks[k + 1] if k + 1 < len(breaks) else breaks[0] + 2 * np.pi
        ts.append(t0)
        ts.extend(_arc_params(inc, t0, t1, h))
    ellipse_t = sorted(np.mod(ts, 2 * np.pi))

    bounds = model.bounds
    side_y = [np.array([bounds[-1]])]
    for top, bot in zip(bounds[-2::-1], bounds[::-1]):
        side_y.append(_line_nodes(bot, top, h)[1:])
    side_y = np.concatenate(side_y)
    xs = _line_nodes(rect.x_min, rect.x_max, h)
    inner_y = side_y[1:-1]
    boundary = np.concatenate([
        np.column_stack([xs, np.full(len(xs), rect.y_max)]),
        np.column_stack([xs, np.full(len(xs), rect.y_min)]),
        np.column_stack([np.full(len(inner_y), rect.x_min), inner_y]),
        np.column_stack([np.full(len(inner_y), rect.x_max), inner_y]),
    ])
    return _Interfaces(inc, rect, ellipse_t, pieces, boundary)


def _dedupe(points: np.ndarray, tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Unique points and the map from input rows to unique rows."""
    tree = cKDTree(points)
    pairs = tree.query_pairs(tol, output_type="ndarray")
    parent = np.arange(len(points))
    for i, j in sorted(map(tuple, np.sort(pairs, axis=1)), key=lambda p: p[1]):
        root = i
        while parent[root] != root:
            root = parent[root]
        parent[j] = root
    keep = parent == np.arange(len(points))
    new_index = np.cumsum(keep) - 1
    return points[keep], new_index[parent]


def _lattice(rect: Rect, step: float, shift: float = 0.0) -> np.ndarray:
    dy = step * np.sqrt(3) / 2
    ys = np.arange(rect.y_max - dy / 2 - shift * dy, rect.y_min, -dy)
    rows = []
    for k, y in enumerate(ys):
        x0 = rect.x_min + (0.25 + 0.5 * (k % 2) + shift) * step
        xs = np.arange(x0, rect.x_max, step)
        rows.append(np.column_stack([xs, np.full(len(xs), y)]))
    return np.concatenate(rows)


class _SizeField:
    """Target edge length: ``h`` far away, the ellipse node spacing near it."""

    def __init__(self, ellipse_nodes: np.ndarray, h: float, grading: float = 0.5):
        spacing = np.linalg.norm(np.roll(ellipse_nodes, -1, axis=0) - ellipse_nodes, axis=1)
        spacing = np.maximum(spacing, np.roll(spacing, 1))
        self.tree = cKDTree(ellipse_nodes)
        self.spacing = spacing
        self.h = h
        self.grading = grading

    def __call__(self, p: np.ndarray) -> np.ndarray:
        d, i = self.tree.query(p)
        return np.minimum(self.h, self.spacing[i] + self.grading * d)


def _edges_of(tri: np.ndarray) -> np.ndarray:
    e = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0)


def _seed_free_points(rect: Rect, pinned: np.ndarray, size: _SizeField, h: float,
                      shift: float) -> np.ndarray:
    levels = [(h, 0.75 * h, np.inf), (h / 2, 0.375 * h, 0.75 * h), (h / 4, 0.0, 0.375 * h)]
    chunks = []
    for step, lo, hi in levels:
        p = _lattice(rect, step, shift)
        s = size(p)
        chunks.append(p[(s >= lo) & (s < hi)])
    free = np.concatenate(chunks)
    inner = ((free[:, 0] > rect.x_min) & (free[:, 0] < rect.x_max)
             & (free[:, 1] > rect.y_min) & (free[:, 1] < rect.y_max))
    free = free[inner]
    d, _ = cKDTree(pinned).query(free)
    return free[d > 0.6 * size(free)]


def _region_sd(regions: list, region_of: np.ndarray, p: np.ndarray) -> np.ndarray:
    d = np.empty(len(p))
    for r in np.unique(region_of):
        sel = region_of == r
        d[sel] = regions[r](p[sel])
    return d


def _relax(free: np.ndarray, pinned: np.ndarray, region_of: np.ndarray, regions: list,
           size: _SizeField, h: float, max_iter: int, step: float = 0.2,
           retri_tol: float = 0.1, stop_tol: float = 1e-3, margin: float = 0.3):
    """Move free points by bar repulsion while pinned points stay put.

    Free points are held ``margin * size`` inside their own region so that
    only pinned nodes ever sit on an interface.
    """
    n_pin = len(pinned)
    n = n_pin + len(free)
    pts = np.concatenate([pinned, free])
    last = None
    move = np.inf
    for it in range(max_iter):
        if last is None or np.max(np.linalg.norm(pts - last, axis=1)) > retri_tol * h:
            last = pts.copy()
            bars = _edges_of(Delaunay(pts).simplices)
            s_pts = size(pts)
            rest = 0.5 * (s_pts[bars[:, 0]] + s_pts[bars[:, 1]])
            d = _region_sd(regions, region_of, pts[n_pin:])
            near = np.flatnonzero(d > -(margin * s_pts[n_pin:] + 2.5 * retri_tol * h))
        vec = pts[bars[:, 0]] - pts[bars[:, 1]]
        length = np.sqrt(np.einsum("ij,ij->i", vec, vec))
        force = np.maximum(rest - length, 0.0) / np.maximum(length, 1e-300)
        fx = vec[:, 0] * force
        fy = vec[:, 1] * force
        tx = np.bincount(bars[:, 0], fx, n) - np.bincount(bars[:, 1], fx, n)
        ty = np.bincount(bars[:, 0], fy, n) - np.bincount(bars[:, 1], fy, n)
        new = pts.copy()
        new[n_pin:, 0] += step * tx[n_pin:]
        new[n_pin:, 1] += step * ty[n_pin:]
        interior = np.ones(len(free), dtype=bool)
        if near.size:
            q = new[n_pin:]
            sub = q[near]
            reg = region_of[near]
            dn = _region_sd(regions, reg, sub)
            lim = -margin * s_pts[n_pin:][near]
            bad = dn > lim
            if np.any(bad):
                for r in np.unique(reg[bad]):
                    sel = bad & (reg == r)
                    g = regions[r].gradient(sub[sel])
                    g /= np.maximum(np.linalg.norm(g, axis=1), 1e-300)[:, None]
                    sub[sel] -= (dn[sel] - lim[sel])[:, None] * g
                q[near] = sub
                interior[near[bad]] = False
        disp = np.linalg.norm(new[n_pin:] - pts[n_pin:], axis=1)[interior]
        move = disp.max() if disp.size else 0.0
        pts = new
        if move < stop_tol * h:
            return pts[n_pin:], it + 1, move
    return pts[n_pin:], max_iter, move


def _point_in_convex_polygon(poly: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Closed membership for a counterclockwise convex polygon."""
    a = poly
    b = np.roll(poly, -1, axis=0)
    e = b - a
    rel = p[:, None, :] - a[None, :, :]
    cross = e[None, :, 0] * rel[:, :, 1] - e[None, :, 1] * rel[:, :, 0]
    scale = np.linalg.norm(e, axis=1)[None, :]
    return np.all(cross >= -1e-12 * scale, axis=1)


def _adapted_once(model: LayeredModel, inc: InclusionParams, h: float, max_iter: int,
                  shift: float, settle_tol: float = 1e-2) -> Mesh:
    iface = _build_interfaces(model, inc, h)
    regions = scene_signed_distances(model, inc)
    size = _SizeField(iface.ellipse_nodes(), h)

    pinned, _ = iface.points()
    pinned, _ = _dedupe(pinned)
    free = _seed_free_points(model.rect, pinned, size, h, shift)
    region_of = region_labels(model, inc, free)
    free, iters, move = _relax(free, pinned, region_of, regions, size, h, max_iter)
    if iters >= max_iter and move > settle_tol * h:
        pts = np.concatenate([pinned, free])
        tri = _orient(pts, Delaunay(pts).simplices)
        raise MeshError(f"force relaxation did not settle in {max_iter} iterations "
                        f"(last displacement {move / h:.2e} h)",
                        Mesh(pts, tri, region_labels(model, inc, pts[tri].mean(axis=1))), move)

    for _ in range(30):
        raw, segments = iface.points()
        pinned, remap = _dedupe(raw)
        pts = np.concatenate([pinned, free])
        tri = Delaunay(pts).simplices
        present = {tuple(e) for e in _edges_of(tri)}
        missing = [s for s in segments if tuple(sorted((remap[s[2]], remap[s[3]]))) not in present]
        if not missing:
            break
        drop = np.zeros(len(free), dtype=bool)
        new_t = []
        for kind, key, ia, ib in missing:
            pa, pb = raw[ia], raw[ib]
            mid, rad = 0.5 * (pa + pb), 0.5 * np.linalg.norm(pb - pa)
            drop |= np.linalg.norm(free - mid, axis=1) < rad * (1 + 1e-9)
            if kind == "ellipse":
                t = iface.ellipse_t
                t0 = t[key]
                t1 = t[(key + 1) % len(t)] + (2 * np.pi if key + 1 == len(t) else 0.0)
                new_t.append(np.mod(0.5 * (t0 + t1), 2 * np.pi))
            else:
                y, k = key
                for n_piece, (yy, xs) in enumerate(iface.line_pieces):
                    if yy == y and xs[0] <= pa[0] <= xs[-1] and xs[0] <= pb[0] <= xs[-1]:
                        iface.line_pieces[n_piece] = (yy, np.sort(np.append(xs, mid[0])))
                        break
        iface.ellipse_t = sorted(list(iface.ellipse_t) + new_t)
        free = free[~drop]
    else:
        raise MeshError("interface segments could not be recovered")

    tri = _orient(pts, tri)
    areas = triangle_areas(pts, tri)
    tri = tri[areas > 1e-14]
    cent = pts[tri].mean(axis=1)
    labels = model.layer_index(cent[:, 1])
    poly = iface.ellipse_nodes()
    labels = np.where(_point_in_convex_polygon(poly, cent), model.n_layers, labels)
    used = np.unique(tri)
    if len(used) < len(pts):
        remap = -np.ones(len(pts), dtype=np.int64)
        remap[used] = np.arange(len(used))
        pts, tri = pts[used], remap[tri]
    return Mesh(pts, tri, labels, model.rect.y_max)


def adapted_mesh(spec: MeshSpec, max_iter: int = 500, min_quality: float = 0.3) -> Mesh:
    """Mesh conforming to every layer interface and to the inclusion boundary."""
    inc = spec.inclusion
    if inc is None:
        raise MeshConfigError("adapted meshes need an inclusion")
    if ellipse_clearance(spec.rect, inc) < 2 * spec.h * (1 - 1e-9):
        raise GeometryError("inclusion must clear the rectangle boundary by at least 2h")
    if inc.a == inc.b:
        # circles: orientation is meaningless, fix it so output is theta-free
        inc = InclusionParams(inc.c_x, inc.c_y, inc.a, inc.b, 0.0, inc.rho, inc.v_p)
    last_err = None
    for shift in (0.0, 1.0 / 3.0):
        try:
            mesh = _adapted_once(spec.model, inc, spec.h, max_iter, shift)
        except MeshError as err:
            last_err = err
            continue
        q = triangle_quality(mesh.points, mesh.triangles).min()
        if q >= min_quality:
            return mesh
        last_err = MeshError(f"minimum triangle quality {q:.3f} below {min_quality}", mesh)
        log.debug("adapted mesh quality %.3f, retrying with shifted seeding", q)
    raise last_err


def build_mesh(spec: MeshSpec) -> Mesh:
    return {"uniform": uniform_mesh, "stratified": stratified_mesh,
            "adapted": adapted_mesh}[spec.regime](spec)


# ---------------------------------------------------------------------------
# audits


@dataclass
class ConformityReport:
    ok: bool
    violating_triangles: np.ndarray

    def __str__(self):
        return "ok" if self.ok else f"{len(self.violating_triangles)} triangles straddle region boundaries"


def conformity_check(mesh: Mesh, regions: list[SignedDistance], tol: float = 1e-9) -> ConformityReport:
    """Each triangle's vertices and barycenter must lie in a single region."""
    vert = np.array([sd(mesh.points) for sd in regions])            # R x N
    bary = np.array([sd(mesh.barycenters()) for sd in regions])     # R x M
    worst = np.maximum(vert[:, mesh.triangles].max(axis=2), bary)    # R x M
    ok = np.any(worst <= tol, axis=0)
    bad = np.flatnonzero(~ok)
    return ConformityReport(bad.size == 0, bad)


def topology_audit(mesh: Mesh) -> list[str]:
    """Problems found in orientation, edge manifoldness and boundary placement."""
    problems = []
    areas = mesh.areas()
    if np.any(areas <= 1e-14):
        problems.append(f"{np.sum(areas <= 1e-14)} triangles not positively oriented")
    _, _, counts = mesh._edge_table()
    if np.any(counts > 2):
        problems.append(f"{np.sum(counts > 2)} edges shared by more than two triangles")
    bnd = mesh.edges[counts == 1]
    p = mesh.points[bnd]
    x0, x1 = mesh.points[:, 0].min(), mesh.points[:, 0].max()
    y0, y1 = mesh.points[:, 1].min(), mesh.points[:, 1].max()
    on_side = np.zeros(len(bnd), dtype=bool)
    for axis, v in ((0, x0), (0, x1), (1, y0), (1, y1)):
        on_side |= np.all(np.abs(p[:, :, axis] - v) < 1e-10, axis=1)
    if not np.all(on_side):
        problems.append(f"{np.sum(~on_side)} boundary edges inside the domain")
    return problems


# ---------------------------------------------------------------------------
# text format


def write_mesh(mesh: Mesh, path) -> None:
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"points {mesh.n_points} / triangles {mesh.n_triangles}\n")
        np.savetxt(fh, mesh.points, fmt="%.17g")
        np.savetxt(fh, np.column_stack([mesh.triangles, mesh.labels]), fmt="%d")


def read_mesh(path) -> Mesh:
    with Path(path).open() as fh:
        header = fh.readline().split()
        n, m = int(header[1]), int(header[4])
        pts = np.loadtxt(fh, max_rows=n, ndmin=2)
        tl = np.loadtxt(fh, max_rows=m, dtype=np.int64, ndmin=2)
    return Mesh(pts, tl[:, :3], tl[:, 3], float(pts[:, 1].max()))
