"""Affine-invariant ensemble sampler (stretch moves) and posterior summaries."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .bayes import ObserveFn, PosteriorSpec, misfit, prior_quadratic
from .estimate import FORWARD_ERRORS, Mapper
from .geometry import PARAM_NAMES, InclusionParams, Rect, ellipse_quadratic


class SamplerConfigError(ValueError):
    pass


class SamplerAbort(RuntimeError):
    def __init__(self, msg: str, store: "ChainStore | None" = None):
        super().__init__(msg)
        self.store = store


@dataclass
class EnsembleConfig:
    W: int = 32
    S: int = 400
    B: int | None = None            # burn-in, default S // 5
    a: float = 2.0
    rng_seed: int = 0
    mesh_regime: str = "uniform"
    dim: int = 7
    reject_window: int = 100
    max_reject_frac: float = 0.99
    collapse_tol: float = 1e-12

    def __post_init__(self):
        if self.B is None:
            self.B = self.S // 5
        if self.W <= 2 * self.dim:
            raise SamplerConfigError(f"W={self.W} walkers: the stretch move needs W > 2P = {2 * self.dim}")
        if self.a <= 1:
            raise SamplerConfigError("stretch parameter a must exceed 1")
        if not 0 <= self.B < self.S:
            raise SamplerConfigError("burn-in must satisfy 0 <= B < S")
        if self.mesh_regime == "adapted":
            raise SamplerConfigError("sampling runs on a fixed mesh (uniform or stratified)")


def draw_stretch(a: float, u):
    """Inverse CDF of ``g(z) ~ z^{-1/2}`` on ``[1/a, a]``."""
    if a <= 1:
        raise SamplerConfigError("stretch parameter a must exceed 1")
    s = np.sqrt(a)
    return (np.asarray(u) * (s - 1.0 / s) + 1.0 / s) ** 2


def stretch_cdf(z, a: float):
    s = np.sqrt(a)
    return (np.sqrt(np.clip(z, 1.0 / a, a)) - 1.0 / s) / (s - 1.0 / s)


def derangement(W: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform permutation without fixed points (rejection of random permutations)."""
    if W < 2:
        raise SamplerConfigError("a derangement needs at least two elements")
    idx = np.arange(W)
    while True:
        p = rng.permutation(W)
        if not np.any(p == idx):
            return p


class LogPosterior:
    """``-J(nu)`` with ``-inf`` outside the constraints or when the forward map fails."""

    def __init__(self, spec: PosteriorSpec, observe_fn: ObserveFn | None):
        self.spec = spec
        self.observe_fn = observe_fn
        self.prior_only = not np.any(spec.noise_weights() > 0)

    def evaluate(self, nu) -> tuple[float, bool]:
        """``(log posterior, forward failure flag)``."""
        if not self.spec.feasible(nu):
            return -np.inf, False
        lp = -prior_quadratic(self.spec, nu)
        if self.prior_only:
            return lp, False
        try:
            o = self.observe_fn(np.asarray(nu, dtype=float))
        except FORWARD_ERRORS:
            return -np.inf, True
        return lp - misfit(self.spec, o), False

    def __call__(self, nu) -> float:
        return self.evaluate(nu)[0]


@dataclass
class ChainStore:
    samples: np.ndarray      # (S, W, P) states after each step
    log_post: np.ndarray     # (S, W)
    accepted: np.ndarray     # (S, W) bool
    initial: np.ndarray      # (W, P)
    z: np.ndarray            # (S, W) stretch factors drawn
    failures: int = 0

    @property
    def acceptance_count(self) -> np.ndarray:
        return self.accepted.sum(axis=0)

    @property
    def acceptance_rate(self) -> float:
        return float(self.accepted.mean()) if self.accepted.size else 0.0

    def post_burn(self, B: int) -> np.ndarray:
        return self.samples[B:].reshape(-1, self.samples.shape[-1])

    def post_burn_logp(self, B: int) -> np.ndarray:
        return self.log_post[B:].ravel()

    def map_estimate(self, B: int) -> np.ndarray:
        flat = self.post_burn_logp(B)
        return self.post_burn(B)[int(np.argmax(flat))].copy()


def _rng(seed: int, k: int) -> np.random.Generator:
    """Independent stream for stage ``k`` (0 = initialization, k = step k)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k,)))


def _spread(X: np.ndarray) -> float:
    return float(np.max(X.max(axis=0) - X.min(axis=0)))


def step_ensemble(X: np.ndarray, logp: np.ndarray, logpost: Callable, a: float,
                  rng: np.random.Generator, mapper: Mapper = map):
    """One synchronous sweep: every walker proposes against the step-start snapshot.

    Returns ``(X_new, logp_new, accepted, z, n_failures)``.
    """
    W, P = X.shape
    sigma = derangement(W, rng)
    z = draw_stretch(a, rng.random(W))
    u = rng.random(W)
    partner = X[sigma]
    prop = partner + z[:, None] * (X - partner)
    evals = list(mapper(_evaluate_with(logpost), prop))
    lp_prop = np.array([e[0] for e in evals])
    n_fail = sum(1 for e in evals if e[1])
    with np.errstate(invalid="ignore"):
        log_alpha = (P - 1) * np.log(z) + lp_prop - logp
    accept = np.isfinite(lp_prop) & (np.log(u) < log_alpha)
    X_new = np.where(accept[:, None], prop, X)
    logp_new = np.where(accept, lp_prop, logp)
    return X_new, logp_new, accept, z, n_fail


def _evaluate_with(logpost):
    return logpost.evaluate if hasattr(logpost, "evaluate") else (lambda nu: (logpost(nu), False))


def initialize(spec: PosteriorSpec, cfg: EnsembleConfig, logpost: Callable, mapper: Mapper = map,
               max_rounds: int = 20) -> tuple[np.ndarray, np.ndarray]:
    """Walkers drawn from the prior truncated to the constraints; walkers whose
    forward solve fails are redrawn."""
    rng = _rng(cfg.rng_seed, 0)
    X = spec.sample_prior(cfg.W, rng)
    logp = np.array([e[0] for e in mapper(_evaluate_with(logpost), X)])
    for _ in range(max_rounds):
        bad = np.flatnonzero(~np.isfinite(logp))
        if bad.size == 0:
            break
        X[bad] = spec.sample_prior(bad.size, rng)
        logp[bad] = [e[0] for e in mapper(_evaluate_with(logpost), X[bad])]
    else:
        raise SamplerAbort("could not initialize walkers with finite log posterior")
    if _spread(X) <= cfg.collapse_tol:
        raise SamplerAbort("initial ensemble is collapsed (all walkers identical)")
    return X, logp


def run(spec: PosteriorSpec, cfg: EnsembleConfig, observe_fn: ObserveFn | None = None,
        logpost: Callable | None = None, mapper: Mapper = map, init: np.ndarray | None = None,
        log: Callable[[str], None] | None = None) -> tuple[ChainStore, np.ndarray]:
    """Run ``S`` ensemble steps; returns the chains and the highest-posterior
    post-burn-in sample."""
    logpost = logpost or LogPosterior(spec, observe_fn)
    if init is None:
        X, logp = initialize(spec, cfg, logpost, mapper)
    else:
        X = np.array(init, dtype=float)
        if X.shape != (cfg.W, cfg.dim):
            raise SamplerConfigError(f"initial ensemble must have shape {(cfg.W, cfg.dim)}")
        logp = np.array([e[0] for e in mapper(_evaluate_with(logpost), X)])
        if not np.all(np.isfinite(logp)):
            raise SamplerAbort("initial walkers must have finite log posterior")
        if _spread(X) <= cfg.collapse_tol:
            raise SamplerAbort("initial ensemble is collapsed (all walkers identical)")
    S, W, P = cfg.S, cfg.W, cfg.dim
    store = ChainStore(np.empty((S, W, P)), np.empty((S, W)), np.zeros((S, W), bool), X.copy(),
                       np.empty((S, W)))
    for k in range(S):
        X, logp, acc, z, nf = step_ensemble(X, logp, logpost, cfg.a, _rng(cfg.rng_seed, k + 1), mapper)
        store.samples[k], store.log_post[k], store.accepted[k], store.z[k] = X, logp, acc, z
        store.failures += nf
        if k + 1 >= cfg.reject_window:
            window = store.accepted[k + 1 - cfg.reject_window: k + 1]
            if 1.0 - window.mean() > cfg.max_reject_frac:
                _truncate(store, k + 1)
                raise SamplerAbort(f"more than {cfg.max_reject_frac:.0%} of moves rejected over steps "
                                   f"{k + 2 - cfg.reject_window}..{k + 1}", store)
        if (k + 1) % cfg.reject_window == 0 and _spread(X) <= cfg.collapse_tol:
            _truncate(store, k + 1)
            raise SamplerAbort(f"ensemble collapsed at step {k + 1}", store)
        if log and (k + 1) % 10 == 0:
            log(f"step {k + 1}/{S}: acceptance {store.accepted[:k + 1].mean():.3f}, "
                f"best logp {store.log_post[:k + 1].max():.4g}")
    return store, store.map_estimate(cfg.B)


def _truncate(store: ChainStore, n: int) -> None:
    store.samples, store.log_post = store.samples[:n], store.log_post[:n]
    store.accepted, store.z = store.accepted[:n], store.z[:n]


# ---------------------------------------------------------------------------
# summaries


@dataclass(frozen=True)
class GridSpec:
    rect: Rect
    nx: int = 60
    ny: int = 60

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        r = self.rect
        xs = r.x_min + (np.arange(self.nx) + 0.5) * r.width / self.nx
        ys = r.y_min + (np.arange(self.ny) + 0.5) * r.height / self.ny
        return xs, ys


def membership_contour(samples: np.ndarray, grid: GridSpec) -> np.ndarray:
    """``(ny, nx)`` fraction of samples whose ellipse contains each cell center."""
    samples = np.atleast_2d(samples)
    if samples.shape[0] == 0:
        raise SamplerConfigError("no samples")
    xs, ys = grid.centers()
    P = np.stack(np.meshgrid(xs, ys), axis=-1).reshape(-1, 2)
    uniq, counts = np.unique(samples, axis=0, return_counts=True)
    acc = np.zeros(len(P))
    for nu, c in zip(uniq, counts):
        acc += c * (ellipse_quadratic(InclusionParams.from_array(nu), P) <= 1.0)
    return (acc / samples.shape[0]).reshape(grid.ny, grid.nx)


JOINT_FIELDS = (("rho", "v_p"), ("c_x", "c_y"))


def histograms(samples: np.ndarray, fields: Sequence[str] = PARAM_NAMES, bins: int = 30,
               joint: Sequence[tuple[str, str]] = JOINT_FIELDS) -> dict:
    """pdf-normalized 1-D histograms per field and 2-D joint histograms."""
    samples = np.atleast_2d(samples)
    if samples.shape[0] == 0:
        raise SamplerConfigError("no samples")
    col = {n: i for i, n in enumerate(PARAM_NAMES)}
    out = {}
    for f in fields:
        x = samples[:, col[f]]
        out[f] = _hist1(x, bins)
    for f, g in joint:
        out[(f, g)] = _hist2(samples[:, col[f]], samples[:, col[g]], bins)
    return out


def _edges(x: np.ndarray, bins: int) -> np.ndarray:
    lo, hi = float(x.min()), float(x.max())
    if hi - lo <= 1e-12 * max(1.0, abs(lo)):
        w = 1e-6 * max(1.0, abs(lo))
        lo, hi = lo - w, hi + w
    return np.linspace(lo, hi, bins + 1)


def _hist1(x: np.ndarray, bins: int):
    return np.histogram(x, bins=_edges(x, bins), density=True)


def _hist2(x: np.ndarray, y: np.ndarray, bins: int):
    return np.histogram2d(x, y, bins=[_edges(x, bins), _edges(y, bins)], density=True)


def mode_masses(x: np.ndarray, y: np.ndarray, bandwidth: tuple[float, float],
                bounds: tuple[tuple[float, float], tuple[float, float]], n: int = 80) -> np.ndarray:
    """Probability mass of each mode of a fixed-bandwidth 2-D density estimate.

    Samples are binned on an ``n x n`` grid over ``bounds``, smoothed by a
    Gaussian of the given bandwidth, and every cell is assigned to the local
    maximum reached by steepest ascent. Masses are returned in decreasing order.
    """
    (x0, x1), (y0, y1) = bounds
    H, _, _ = np.histogram2d(x, y, bins=n, range=[[x0, x1], [y0, y1]])
    sig = (bandwidth[0] * n / (x1 - x0), bandwidth[1] * n / (y1 - y0))
    D = ndimage.gaussian_filter(H, sig, mode="constant")
    D /= D.sum()
    pad = np.pad(D, 1, constant_values=-1.0)
    shifts = [(di, dj) for di in (-1, 0, 1) for dj in (-1, 0, 1)]
    neigh = np.stack([pad[1 + di: n + 1 + di, 1 + dj: n + 1 + dj] for di, dj in shifts])
    best = np.argmax(neigh, axis=0)
    nxt = np.empty((n, n), dtype=np.int64)
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    di = np.array([s[0] for s in shifts])[best]
    dj = np.array([s[1] for s in shifts])[best]
    nxt = ((ii + di) * n + (jj + dj)).ravel()
    # follow the pointers until they stop moving
    root = nxt.copy()
    for _ in range(2 * n):
        new = root[root]
        if np.array_equal(new, root):
            break
        root = new
    masses = np.bincount(root, weights=D.ravel(), minlength=n * n)
    masses = np.sort(masses[masses > 0])[::-1]
    return masses


def dominance_ratio(masses: np.ndarray) -> float:
    """Largest mode mass over the second largest (inf for a single mode)."""
    return float(masses[0] / masses[1]) if len(masses) > 1 else np.inf


def integrated_autocorr(x: np.ndarray, c: float = 5.0) -> float:
    """Integrated autocorrelation time with the self-consistent window ``M >= c tau``.

    ``x`` is a 1-D series (e.g. the ensemble mean of one parameter per step).
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 2 or np.var(x) == 0:
        return 1.0
    f = np.fft.rfft(x - x.mean(), n=2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n]
    acf /= acf[0]
    taus = 2.0 * np.cumsum(acf) - 1.0
    m = np.arange(n)
    ok = m >= c * taus
    return float(taus[np.argmax(ok)] if ok.any() else taus[-1])


# ---------------------------------------------------------------------------
# output


def write_chains_csv(store: ChainStore, path, names: Sequence[str] = PARAM_NAMES) -> None:
    S, W, P = store.samples.shape
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["step", "walker", *list(names)[:P], "log_post", "accepted"])
        for k in range(S):
            for w in range(W):
                wr.writerow([k + 1, w, *[repr(float(v)) for v in store.samples[k, w]],
                             repr(float(store.log_post[k, w])), int(store.accepted[k, w])])


def write_contour_csv(grid_values: np.ndarray, grid: GridSpec, path) -> None:
    xs, ys = grid.centers()
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["y\\x", *[f"{x:.10g}" for x in xs]])
        for y, row in zip(ys, grid_values):
            wr.writerow([f"{y:.10g}", *[f"{v:.10g}" for v in row]])


def write_histograms_csv(hists: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["field", "x_lo", "x_hi", "y_lo", "y_hi", "density"])
        for key, h in hists.items():
            if isinstance(key, tuple):
                dens, ex, ey = h
                for i in range(dens.shape[0]):
                    for j in range(dens.shape[1]):
                        wr.writerow([f"{key[0]}|{key[1]}", ex[i], ex[i + 1], ey[j], ey[j + 1], dens[i, j]])
            else:
                dens, ex = h
                for i in range(len(dens)):
                    wr.writerow([key, ex[i], ex[i + 1], "", "", dens[i]])


def write_manifest(cfg: EnsembleConfig, store: ChainStore, nu_map: np.ndarray, path, extra: dict | None = None) -> None:
    doc = {"config": asdict(cfg), "seed": cfg.rng_seed, "acceptance_rate": store.acceptance_rate,
           "acceptance_count": store.acceptance_count.tolist(), "forward_failures": store.failures,
           "map": dict(zip(PARAM_NAMES, np.asarray(nu_map).tolist()))}
    doc.update(extra or {})
    Path(path).write_text(json.dumps(doc, indent=2))
