"""MAP estimation by damped Gauss-Newton (Levenberg-Marquardt-Fletcher) and the
Laplace approximation of the posterior around the MAP point."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .bayes import ObserveFn, PosteriorSpec, canonical, misfit, prior_quadratic
from .geometry import PARAM_NAMES

Mapper = Callable[[Callable, Sequence], list]
# forward-map failures that mean "this parameter vector is unusable"
FORWARD_ERRORS = (ArithmeticError, RuntimeError, ValueError)


class EstimateConfigError(ValueError):
    pass


@dataclass
class LmfConfig:
    omega0: float = 1e-2
    max_iters: int = 40
    tol_step: float = 1e-4
    tol_cost: float = 1e-8
    eta: np.ndarray | None = None          # absolute steps; default eta_scale * prior std
    eta_scale: float = 1e-2
    max_rejects: int = 20
    mesh_regime: str = "uniform"
    eta_grid: Sequence[float] = ()
    canonicalize: bool = True              # map b > a or out-of-range theta proposals to the same ellipse

    def __post_init__(self):
        if self.omega0 <= 0 or self.tol_step <= 0 or self.tol_cost <= 0 or self.max_iters < 1:
            raise EstimateConfigError("omega0, tolerances and max_iters must be positive")
        if self.eta is not None:
            self.eta = np.asarray(self.eta, dtype=float)
            if np.any(self.eta <= 0):
                raise EstimateConfigError("finite-difference steps must be positive")

    def steps(self, spec: PosteriorSpec) -> np.ndarray:
        if self.eta is not None:
            return self.eta
        return self.eta_scale * spec.prior_std


def _stack(values: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([np.ravel(v) for v in values])


def _weights(spec: PosteriorSpec) -> np.ndarray:
    """Per-entry ``1 / sigma^2`` over the stacked data vector."""
    return np.concatenate([np.full(d.size, w) for d, w in zip(spec.datasets, spec.noise_weights())])


class _Safe:
    """Forward map returning ``None`` on failure (picklable for process pools)."""

    def __init__(self, observe_fn: ObserveFn):
        self.observe_fn = observe_fn

    def __call__(self, nu):
        try:
            return _stack(self.observe_fn(nu))
        except FORWARD_ERRORS:
            return None


def _difference_point(spec: PosteriorSpec, nu: np.ndarray, i: int, eta: float, prefer: float = 1.0):
    """Feasible ``(point, sign, eta)`` for column ``i``, trying ``prefer`` first and
    halving ``eta`` when neither side is feasible."""
    for _ in range(30):
        e = np.zeros_like(nu)
        e[i] = eta
        for s in (prefer, -prefer):
            if spec.feasible(nu + s * e):
                return nu + s * e, s, eta
        eta /= 2.0
    raise EstimateConfigError(f"no feasible difference point for parameter {i}")


def fd_jacobian(spec: PosteriorSpec, nu, cfg: LmfConfig, observe_fn: ObserveFn,
                base: np.ndarray | None = None, mapper: Mapper = map) -> np.ndarray:
    """One-sided difference quotients of the stacked forward map.

    Column ``i`` uses ``nu + eta_i e_i``; when that leaves the constraint set
    the backward point ``nu - eta_i e_i`` is used instead, and when both do the
    step is halved until one side is feasible. A forward failure at a
    difference point (e.g. a mesh that misses the quality bound) is retried on
    the other side and then with halved steps.
    """
    nu = np.asarray(nu, dtype=float)
    eta = np.array(cfg.steps(spec), dtype=float)
    points, signs = [], []
    for i in range(nu.size):
        pt, s, eta[i] = _difference_point(spec, nu, i, eta[i])
        points.append(pt)
        signs.append(s)
    call = _Safe(observe_fn)
    if base is None:
        o0 = call(nu)
        if o0 is None:
            raise EstimateConfigError("forward map fails at the linearization point")
    else:
        o0 = _stack(base) if isinstance(base, (list, tuple)) else np.ravel(base)
    outs = list(mapper(call, points))
    for i, o in enumerate(outs):
        tries = 0
        while o is None:
            tries += 1
            if tries > 8:
                raise EstimateConfigError(f"forward map fails around parameter {i}")
            if tries % 2 == 0:
                eta[i] /= 2.0
            pt, signs[i], eta[i] = _difference_point(spec, nu, i, eta[i], prefer=-signs[i])
            o = call(pt)
        outs[i] = o
    return np.column_stack([(o - o0) * (s / eta[i]) for i, (o, s) in enumerate(zip(outs, signs))])


def gn_system(F: np.ndarray, residual: np.ndarray, spec: PosteriorSpec, nu) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Newton Hessian ``F^T W F + Gamma_pr^-1`` and gradient of ``J``."""
    w = _weights(spec)
    FW = F.T * w
    H = FW @ F + spec.prior_prec
    g = FW @ residual + spec.prior_prec @ (np.asarray(nu, dtype=float) - spec.prior_mean)
    return 0.5 * (H + H.T), g


def lmf_step(H: np.ndarray, g: np.ndarray, omega: float) -> np.ndarray:
    """Solve ``(H + omega diag(H)) xi = -g``."""
    if omega < 0:
        raise EstimateConfigError("omega must be non-negative")
    A = np.atleast_2d(H) + omega * np.diag(np.diag(np.atleast_2d(H)))
    L = np.linalg.cholesky(A)
    y = np.linalg.solve(L, -np.atleast_1d(g))
    return np.linalg.solve(L.T, y)


@dataclass
class TraceRow:
    iteration: int
    nu: np.ndarray
    J: float
    omega: float
    accepted: bool


@dataclass
class LmfResult:
    nu_map: np.ndarray
    J: float
    status: str
    iterations: int
    trace: list[TraceRow] = field(default_factory=list)
    n_forward: int = 0

    @property
    def stalled(self) -> bool:
        return self.status == "stalled"


def _evaluate(spec: PosteriorSpec, nu, observe_fn: ObserveFn):
    """``(J, stacked prediction)``, with ``J = inf`` on infeasible or failing points."""
    if not spec.feasible(nu):
        return np.inf, None
    try:
        o = observe_fn(np.asarray(nu, dtype=float))
    except FORWARD_ERRORS:
        return np.inf, None
    return misfit(spec, o) + prior_quadratic(spec, nu), _stack(o)


def lmf_optimize(spec: PosteriorSpec, cfg: LmfConfig, observe_fn: ObserveFn, nu0=None,
                 mapper: Mapper = map, log: Callable[[str], None] | None = None) -> LmfResult:
    """Damped Gauss-Newton from ``nu0`` (prior mean by default).

    The damping is halved after an accepted step and doubled after a rejected
    proposal; ``max_rejects`` consecutive rejections end the run as "stalled".
    """
    nu = np.array(spec.prior_mean if nu0 is None else nu0, dtype=float)
    data = _stack(spec.datasets)
    J, o = _evaluate(spec, nu, observe_fn)
    n_fwd = 1
    if not np.isfinite(J):
        raise EstimateConfigError("starting point is infeasible or the forward map fails there")
    omega = cfg.omega0
    trace = [TraceRow(0, nu.copy(), J, omega, True)]
    status = "max_iters"
    it = 0
    while it < cfg.max_iters:
        if J < cfg.tol_cost:
            status = "converged_cost"
            break
        F = fd_jacobian(spec, nu, cfg, observe_fn, base=o, mapper=mapper)
        n_fwd += nu.size
        H, g = gn_system(F, o - data, spec, nu)
        rejects = 0
        while True:
            xi = lmf_step(H, g, omega)
            if np.linalg.norm(xi) < cfg.tol_step:
                status = "converged_step"
                break
            cand = nu + xi
            if cfg.canonicalize and spec.constrained and spec.dim == 7:
                cand = canonical(cand)
            J_c, o_c = _evaluate(spec, cand, observe_fn)
            n_fwd += 1
            accepted = J_c < J
            trace.append(TraceRow(it + 1, cand, J_c, omega, accepted))
            if accepted:
                nu, J, o = cand, J_c, o_c
                omega /= 2.0
                break
            omega *= 2.0
            rejects += 1
            if rejects >= cfg.max_rejects:
                status = "stalled"
                break
        if status in ("converged_step", "stalled"):
            break
        it += 1
        if log:
            log(f"iter {it}: J={J:.6g} omega={omega:.3g} nu={np.array2string(nu, precision=4)}")
    return LmfResult(nu, J, status, it, trace, n_fwd)


@dataclass
class SweepPoint:
    eta_scale: float
    nu: np.ndarray
    J: float
    is_map: bool = False


def eta_sweep(spec: PosteriorSpec, cfg: LmfConfig, observe_fn: ObserveFn,
              mapper: Mapper = map) -> list[SweepPoint]:
    """Optimize once per finite-difference scale; distinct terminal points are
    reported and the lowest-cost one is flagged as the MAP."""
    if len(cfg.eta_grid) == 0:
        raise EstimateConfigError("empty eta grid")
    points: list[SweepPoint] = []
    for s in cfg.eta_grid:
        run_cfg = LmfConfig(**{**cfg.__dict__, "eta": None, "eta_scale": float(s), "eta_grid": ()})
        res = lmf_optimize(spec, run_cfg, observe_fn, mapper=mapper)
        if all(np.linalg.norm(res.nu_map - p.nu) > 10 * cfg.tol_step for p in points):
            points.append(SweepPoint(float(s), res.nu_map, res.J))
    best = min(range(len(points)), key=lambda k: points[k].J)
    points[best].is_map = True
    return points


@dataclass
class LaplaceResult:
    map: np.ndarray
    gamma_pt: np.ndarray
    jacobian: np.ndarray

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.diag(self.gamma_pt))

    def write_json(self, path, names: Sequence[str] = PARAM_NAMES) -> None:
        names = list(names)[: self.map.size]
        Path(path).write_text(json.dumps({
            "map": dict(zip(names, self.map.tolist())),
            "covariance": self.gamma_pt.tolist(),
            "std": dict(zip(names, self.std.tolist())),
        }, indent=2))


def posterior_covariance(F: np.ndarray, spec: PosteriorSpec) -> np.ndarray:
    H = (F.T * _weights(spec)) @ F + spec.prior_prec
    G = np.linalg.inv(0.5 * (H + H.T))
    return 0.5 * (G + G.T)


def laplace(spec: PosteriorSpec, nu_map, cfg: LmfConfig, observe_fn: ObserveFn,
            mapper: Mapper = map) -> LaplaceResult:
    """Gaussian approximation with covariance ``(F^T Gamma_n^-1 F + Gamma_pr^-1)^-1``."""
    nu_map = np.asarray(nu_map, dtype=float)
    if not spec.feasible(nu_map):
        raise EstimateConfigError("MAP point violates the constraints")
    F = fd_jacobian(spec, nu_map, cfg, observe_fn, mapper=mapper)
    return LaplaceResult(nu_map, posterior_covariance(F, spec), F)


def sqrtm_spd(A: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    """Symmetric square root with eigenvalues floored at ``floor``."""
    lam, V = np.linalg.eigh(0.5 * (A + A.T))
    return (V * np.sqrt(np.maximum(lam, floor))) @ V.T


def laplace_sample(result: LaplaceResult, n: int, rng_seed: int | None) -> np.ndarray:
    if n < 1:
        raise EstimateConfigError("need at least one sample")
    w = np.random.default_rng(rng_seed).standard_normal((n, result.map.size))
    return result.map + w @ sqrtm_spd(result.gamma_pt)


def write_trace_csv(result: LmfResult, path, names: Sequence[str] = PARAM_NAMES) -> None:
    dim = result.nu_map.size
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["iteration", *list(names)[:dim], "J", "omega", "accepted"])
        for r in result.trace:
            wr.writerow([r.iteration, *[repr(float(v)) for v in r.nu], repr(float(r.J)),
                         repr(float(r.omega)), int(r.accepted)])
