"""Gaussian prior on the inclusion parameters, Gaussian likelihood and MAP cost.

Normalization constants are dropped throughout: only differences of
log-densities and minimizers are ever used.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .geometry import DEFAULT_RECT, LayeredModel, Rect

ObserveFn = Callable[[np.ndarray], Sequence[np.ndarray]]

# variances of (c_x, c_y, a, b, theta); material variances come from the layers
GEOMETRY_PRIOR_VAR = (1.0, 1.0, 0.5, 0.5, 0.1)


class PriorConfigError(ValueError):
    pass


class ContractError(ValueError):
    pass


def default_prior(model: LayeredModel) -> tuple[np.ndarray, np.ndarray]:
    """Material prior from the layer ranges: ``(rho_bar, vp_bar)`` and ``Gamma_pr``."""
    rho = np.asarray(model.rho, dtype=float)
    vp = np.asarray(model.v_p, dtype=float)
    mean = np.array([(rho.max() + rho.min()) / 2, (vp.max() + vp.min()) / 2])
    s_rho = (rho.max() - rho.min()) / 2
    s_vp = (vp.max() - vp.min()) / 2
    if s_rho <= 0 or s_vp <= 0:
        raise PriorConfigError("layers share one material value: degenerate material prior")
    cov = np.diag([*GEOMETRY_PRIOR_VAR, s_rho**2, s_vp**2])
    return mean, cov


def in_constraints(nu, rect: Rect = DEFAULT_RECT) -> bool:
    """Physical and identifiable parameters.

    Positive sizes and materials, ``b <= a``, ``theta`` in ``[-pi/2, pi/2)``
    and the disk of radius ``a`` about the center inside the rectangle.
    """
    c_x, c_y, a, b, theta, rho, vp = np.asarray(nu, dtype=float)
    if not np.all(np.isfinite(nu)):
        return False
    if a <= 0 or b <= 0 or rho <= 0 or vp <= 0 or b > a:
        return False
    if not (-np.pi / 2 <= theta < np.pi / 2):
        return False
    return (c_x - a >= rect.x_min and c_x + a <= rect.x_max
            and c_y - a >= rect.y_min and c_y + a <= rect.y_max)


def canonical(nu) -> np.ndarray:
    """Same ellipse with ``b <= a`` and ``theta`` wrapped into ``[-pi/2, pi/2)``.

    Swapping the semi-axes while turning by a quarter turn, or turning by a
    half turn, leaves the inclusion unchanged.
    """
    nu = np.array(nu, dtype=float)
    if nu[3] > nu[2]:
        nu[2], nu[3] = nu[3], nu[2]
        nu[4] += np.pi / 2
    nu[4] = (nu[4] + np.pi / 2) % np.pi - np.pi / 2
    return nu


@dataclass
class PosteriorSpec:
    """Everything the posterior density needs besides the forward map.

    ``sigma_noise`` is one value shared by all datasets or one per dataset; an
    infinite value switches the likelihood off (prior-only target). With
    ``constrained=False`` (analytic test targets) every finite vector is feasible.
    """
    prior_mean: np.ndarray
    prior_cov: np.ndarray
    sigma_noise: float | Sequence[float]
    datasets: list[np.ndarray] = field(default_factory=list)
    rect: Rect = DEFAULT_RECT
    constrained: bool = True

    def __post_init__(self):
        self.prior_mean = np.asarray(self.prior_mean, dtype=float)
        self.prior_cov = np.atleast_2d(np.asarray(self.prior_cov, dtype=float))
        self.datasets = [np.asarray(d, dtype=float) for d in self.datasets]
        p = self.prior_mean.size
        if self.prior_cov.shape != (p, p):
            raise PriorConfigError("prior covariance shape does not match the mean")
        if not np.allclose(self.prior_cov, self.prior_cov.T):
            raise PriorConfigError("prior covariance is not symmetric")
        try:
            L = np.linalg.cholesky(self.prior_cov)
        except np.linalg.LinAlgError as exc:
            raise PriorConfigError("prior covariance is not positive definite") from exc
        self.prior_prec = np.linalg.inv(self.prior_cov)
        self.prior_prec = 0.5 * (self.prior_prec + self.prior_prec.T)
        self._chol = L
        s = np.atleast_1d(np.asarray(self.sigma_noise, dtype=float))
        if np.any(s <= 0):
            raise PriorConfigError("sigma_noise must be positive")
        if s.size == 1:
            s = np.full(max(len(self.datasets), 1), s[0])
        elif s.size != len(self.datasets):
            raise PriorConfigError("one sigma_noise per dataset required")
        self.sigmas = s
        if not self.feasible(self.prior_mean):
            raise PriorConfigError("prior mean violates the constraints")

    @property
    def dim(self) -> int:
        return self.prior_mean.size

    @property
    def prior_std(self) -> np.ndarray:
        return np.sqrt(np.diag(self.prior_cov))

    def feasible(self, nu) -> bool:
        if not self.constrained or self.dim != 7:
            return bool(np.all(np.isfinite(nu)))
        return in_constraints(nu, self.rect)

    def noise_weights(self) -> np.ndarray:
        """``1 / sigma^2`` per dataset (0 for an infinite sigma)."""
        return 1.0 / self.sigmas**2

    def sample_prior(self, n: int, rng: np.random.Generator, max_tries: int = 1000) -> np.ndarray:
        """Draws from the prior truncated to the constraint set (rejection)."""
        out = np.empty((n, self.dim))
        k = 0
        for _ in range(max_tries):
            draws = self.prior_mean + rng.standard_normal((n, self.dim)) @ self._chol.T
            for d in draws:
                if self.feasible(d):
                    out[k] = d
                    k += 1
                    if k == n:
                        return out
        raise PriorConfigError("could not draw feasible prior samples")


def prior_quadratic(spec: PosteriorSpec, nu) -> float:
    d = np.asarray(nu, dtype=float) - spec.prior_mean
    return 0.5 * float(d @ spec.prior_prec @ d)


def log_prior(spec: PosteriorSpec, nu) -> float:
    if not spec.feasible(nu):
        return -np.inf
    return -prior_quadratic(spec, nu)


def misfit(spec: PosteriorSpec, o_values: Sequence[np.ndarray]) -> float:
    """``sum_k |o_k - d_k|^2 / (2 sigma_k^2)``."""
    if len(o_values) != len(spec.datasets):
        raise ContractError(f"{len(o_values)} predictions for {len(spec.datasets)} datasets")
    total = 0.0
    for o, d, w in zip(o_values, spec.datasets, spec.noise_weights()):
        o = np.asarray(o, dtype=float)
        if o.shape != d.shape:
            raise ContractError(f"prediction shape {o.shape} != data shape {d.shape}")
        if w > 0:
            total += 0.5 * w * float(np.sum((o - d) ** 2))
    return total


def log_likelihood(spec: PosteriorSpec, o_values: Sequence[np.ndarray]) -> float:
    return -misfit(spec, o_values)


def cost(spec: PosteriorSpec, nu, observe_fn: ObserveFn) -> float:
    """``J(nu)``: data misfit plus prior quadratic; ``+inf`` outside the constraints."""
    if not spec.feasible(nu):
        return np.inf
    if not np.any(spec.noise_weights() > 0):
        return prior_quadratic(spec, nu)
    return misfit(spec, observe_fn(np.asarray(nu, dtype=float))) + prior_quadratic(spec, nu)


def log_posterior(spec: PosteriorSpec, nu, observe_fn: ObserveFn) -> float:
    return -cost(spec, nu, observe_fn)
