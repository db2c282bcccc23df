"""Forward map from inclusion parameters to surface receiver traces, and synthetic data."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .fem import Assembler, AssembledSystem, SourceField
from .geometry import InclusionParams, LayeredModel
from .mesh import Mesh, MeshSpec, adapted_mesh, build_mesh
from .wavesolver import RickerSignal, SolverConfig, Stepper, TimeGrid, cfl_bound, check_cfl, solve


class ObservationConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Acquisition:
    """Surface emitters/receivers, recording grid and source wavelet."""
    receivers: np.ndarray = field(default_factory=lambda: -1.02 + 0.04 * np.arange(52))
    emitters: np.ndarray = field(default_factory=lambda: -1.0 + 0.04 * np.arange(51))
    record_dt: float = 0.1
    T_final: float = 2.5
    frequency: float = 2.0
    kappa: float = 0.04
    f0: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "receivers", np.asarray(self.receivers, dtype=float))
        object.__setattr__(self, "emitters", np.asarray(self.emitters, dtype=float))
        if self.record_dt <= 0 or self.T_final < self.record_dt:
            raise ObservationConfigError("need 0 < record_dt <= T_final")

    @property
    def n_times(self) -> int:
        return int(round(self.T_final / self.record_dt))

    @property
    def times(self) -> np.ndarray:
        """Recording instants ``record_dt, 2 record_dt, ..., T_final`` (t=0 left out)."""
        return self.record_dt * np.arange(1, self.n_times + 1)

    def stride(self, dt: float) -> int:
        k = self.record_dt / dt
        if abs(k - round(k)) > 1e-9 * k or round(k) < 1:
            raise ObservationConfigError(f"record_dt={self.record_dt:g} is not a multiple of dt={dt:g}")
        return int(round(k))

    def source(self) -> SourceField:
        return SourceField(self.emitters, self.kappa)

    def signal(self) -> RickerSignal:
        return RickerSignal(self.f0, self.frequency)

    def same_geometry(self, other: "Acquisition") -> bool:
        return (np.array_equal(self.receivers, other.receivers) and np.array_equal(self.emitters, other.emitters)
                and self.kappa == other.kappa and self.record_dt == other.record_dt
                and self.T_final == other.T_final)


def default_acquisition(frequency: float = 2.0) -> Acquisition:
    return Acquisition(frequency=frequency)


@dataclass
class DataMatrix:
    """Receiver-by-time displacement matrix (J x M)."""
    values: np.ndarray
    acquisition: Acquisition

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        shape = (len(self.acquisition.receivers), self.acquisition.n_times)
        if self.values.shape != shape:
            raise ObservationConfigError(f"data shape {self.values.shape} does not match acquisition {shape}")
        if not np.all(np.isfinite(self.values)):
            raise ObservationConfigError("data contains non-finite entries")

    def write_csv(self, path) -> None:
        header = "x," + ",".join(f"{t:.10g}" for t in self.acquisition.times)
        body = np.column_stack([self.acquisition.receivers, self.values])
        np.savetxt(path, body, delimiter=",", header=header, comments="", fmt="%.17g")

    @classmethod
    def read_csv(cls, path, acquisition: Acquisition | None = None) -> "DataMatrix":
        with open(path) as fh:
            times = np.array([float(v) for v in fh.readline().strip().split(",")[1:]])
        body = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if acquisition is None:
            dt = times[0]
            acquisition = Acquisition(receivers=body[:, 0], record_dt=dt, T_final=times[-1])
        elif not np.allclose(acquisition.times, times) or not np.allclose(acquisition.receivers, body[:, 0]):
            raise ObservationConfigError(f"{path}: receivers/times differ from the acquisition")
        return cls(body[:, 1:], acquisition)


@dataclass(frozen=True)
class NoiseInfo:
    r: float
    sigma: float
    sigma_noise: float
    seed: int | None

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.__dict__, indent=2))

    @classmethod
    def read_json(cls, path) -> "NoiseInfo":
        return cls(**json.loads(Path(path).read_text()))


def noise_sigma(d_true) -> float:
    """Root-mean-square of all entries."""
    v = np.asarray(getattr(d_true, "values", d_true), dtype=float)
    if v.size == 0:
        raise ObservationConfigError("empty data")
    return float(np.sqrt(np.mean(v**2)))


def add_noise(d_true: DataMatrix, r: float, rng_seed: int | None) -> tuple[DataMatrix, NoiseInfo]:
    """``d = d_true + (r/100) sigma beta`` with independent standard normal ``beta`` per entry."""
    if r < 0:
        raise ObservationConfigError("noise level must be non-negative")
    sigma = noise_sigma(d_true)
    s = sigma * r / 100.0
    info = NoiseInfo(float(r), sigma, s, rng_seed)
    if r == 0:
        return DataMatrix(d_true.values.copy(), d_true.acquisition), info
    beta = np.random.default_rng(rng_seed).standard_normal(d_true.values.shape)
    return DataMatrix(d_true.values + s * beta, d_true.acquisition), info


def receiver_operator(mesh: Mesh, receivers: np.ndarray, y: float | None = None) -> sp.csr_matrix:
    """Sparse ``J x N`` matrix evaluating the P1 interpolant at surface points."""
    y = mesh.surface_y if y is None else y
    p = mesh.points[mesh.triangles]
    x0, y0 = p[:, 0, 0], p[:, 0, 1]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    rows, cols, vals = [], [], []
    for j, x in enumerate(np.asarray(receivers, dtype=float)):
        qx, qy = x - x0, y - y0
        l1 = (qx * d2[:, 1] - qy * d2[:, 0]) / det
        l2 = (d1[:, 0] * qy - d1[:, 1] * qx) / det
        lam = np.column_stack([1.0 - l1 - l2, l1, l2])
        hit = np.flatnonzero(lam.min(axis=1) >= -1e-10)
        if hit.size == 0:
            raise ObservationConfigError(f"receiver at x={x:g} lies outside the mesh")
        t = hit[0]
        w = np.clip(lam[t], 0.0, None)
        rows += [j] * 3
        cols += list(mesh.triangles[t])
        vals += list(w / w.sum())
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(receivers), mesh.n_points))


class ObservationOperator:
    """``nu -> o_ap(nu)`` for one or more acquisitions sharing source geometry.

    Fixed regimes (uniform, stratified) build the mesh and geometric element
    data once and relabel triangles by barycenter for each inclusion; the
    adapted regime remeshes for every inclusion. Several acquisitions that only
    differ in frequency/amplitude are marched together in one solve.
    """

    def __init__(self, model: LayeredModel, regime: str, h: float,
                 acquisitions: Acquisition | list[Acquisition], solver: SolverConfig = SolverConfig(),
                 mesh: Mesh | None = None):
        acqs = [acquisitions] if isinstance(acquisitions, Acquisition) else list(acquisitions)
        if not acqs:
            raise ObservationConfigError("no acquisition given")
        for a in acqs[1:]:
            if not acqs[0].same_geometry(a):
                raise ObservationConfigError("acquisitions must share emitters, receivers and recording grid")
        self.single = isinstance(acquisitions, Acquisition)
        self.model, self.regime, self.h = model, regime, h
        self.acqs, self.solver = acqs, solver
        a0 = acqs[0]
        self.stride = a0.stride(solver.dt)
        self.grid = TimeGrid(solver.dt, self.stride * a0.n_times)
        self.source = a0.source()
        self.signals = [a.signal() for a in acqs]
        self.n_solves = 0
        if regime != "adapted":
            self.mesh = mesh or build_mesh(MeshSpec(regime, h, model))
            self.assembler = Assembler(self.mesh, self.source)
            self.R = receiver_operator(self.mesh, a0.receivers)
        else:
            self.mesh = self.assembler = self.R = None

    def system(self, inclusion: InclusionParams | None) -> tuple[AssembledSystem, sp.csr_matrix]:
        if self.regime == "adapted" and inclusion is not None:
            mesh = adapted_mesh(MeshSpec("adapted", self.h, self.model, inclusion))
            asm = Assembler(mesh, self.source)
            rho_t, vp_t = asm.coefficients(self.model, inclusion, mesh.labels)
            return asm.assemble(rho_t, vp_t), receiver_operator(mesh, self.acqs[0].receivers)
        if self.assembler is None:
            # adapted regime without inclusion: a layer-conforming grid is exact
            self.mesh = build_mesh(MeshSpec("stratified", self.h, self.model))
            self.assembler = Assembler(self.mesh, self.source)
            self.R = receiver_operator(self.mesh, self.acqs[0].receivers)
        rho_t, vp_t = self.assembler.coefficients(self.model, inclusion)
        return self.assembler.assemble(rho_t, vp_t), self.R

    def check_cfl(self, inclusion: InclusionParams | None) -> None:
        if self.solver.enforce_cfl:
            check_cfl(self.solver.dt, cfl_bound(self.model, inclusion, self.h), self.solver.cfl_safety)

    def values(self, inclusion: InclusionParams | None) -> list[np.ndarray]:
        """Raw ``J x M`` arrays, one per acquisition."""
        self.check_cfl(inclusion)
        sys, R = self.system(inclusion)
        M = self.acqs[0].n_times
        out = np.zeros((M, len(self.acqs[0].receivers), len(self.signals)))
        stride = self.stride

        def sink(n, a):
            if n % stride == 0 and n > 0:
                out[n // stride - 1] = (R @ a.reshape(sys.dof_count, -1))

        st = Stepper(sys, self.grid.dt, self.solver.variant, self.solver.lumped_mass)
        solve(sys, self.grid, self.signals, sink=sink, monitor_every=self.solver.monitor_every,
              blowup=self.solver.blowup, stepper=st)
        self.n_solves += 1
        return [out[:, :, k].T.copy() for k in range(len(self.signals))]

    def forward(self, nu) -> list[np.ndarray]:
        """Parameter-vector form used by the estimators."""
        return self.values(InclusionParams.from_array(nu))

    def __call__(self, inclusion: InclusionParams | None):
        vals = self.values(inclusion)
        data = [DataMatrix(v, a) for v, a in zip(vals, self.acqs)]
        return data[0] if self.single else data


def observe(model: LayeredModel, inclusion: InclusionParams | None, mesh_spec: MeshSpec,
            acquisition: Acquisition, solver_config: SolverConfig = SolverConfig()) -> DataMatrix:
    op = ObservationOperator(model, mesh_spec.regime, mesh_spec.h, acquisition, solver_config)
    return op(inclusion)


def with_frequency(acq: Acquisition, fM: float) -> Acquisition:
    return replace(acq, frequency=fM)
