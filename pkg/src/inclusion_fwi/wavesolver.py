"""Explicit time marching of ``B a'' + E a' + C a = f(t) h`` with P1 matrices."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .fem import AssembledSystem, lumped
from .geometry import InclusionParams, LayeredModel, region_properties

VARIANTS = ("first_order", "second_order")


class StabilityError(RuntimeError):
    def __init__(self, msg: str, step: int):
        super().__init__(msg)
        self.step = step


class CFLError(ValueError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    dt: float
    n_steps: int

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.n_steps < 2:
            raise ValueError("need at least two steps")

    @property
    def T_final(self) -> float:
        return self.n_steps * self.dt

    @classmethod
    def from_final_time(cls, dt: float, T_final: float) -> "TimeGrid":
        return cls(dt, int(round(T_final / dt)))


@dataclass(frozen=True)
class RickerSignal:
    f0: float = 0.1
    fM: float = 2.0

    def __post_init__(self):
        if self.fM <= 0:
            raise ValueError("fM must be positive")

    def __call__(self, t):
        return ricker(t, self)


def ricker(t, sig: RickerSignal):
    s = (np.pi * sig.fM * np.asarray(t, dtype=float)) ** 2
    return sig.f0 * (1.0 - 2.0 * s) * np.exp(-s)


@dataclass
class WaveState:
    a_prev: np.ndarray
    a_curr: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "WaveState":
        return cls(np.zeros(n), np.zeros(n))


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 1e-3
    variant: str = "second_order"
    cfl_safety: float = 0.9
    enforce_cfl: bool = True
    lumped_mass: bool = False
    monitor_every: int = 50
    blowup: float = 1e6

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")


def cfl_bound(model: LayeredModel, inclusion: InclusionParams | None, h: float) -> float:
    """Largest stable step ``min (h / 2) / v_p`` over all regions."""
    if h <= 0:
        raise ValueError("h must be positive")
    _, vp = region_properties(model, inclusion)
    return float(h / (2.0 * vp.max()))


def check_cfl(dt: float, dt_max: float, safety: float = 0.9) -> None:
    if dt > safety * dt_max:
        raise CFLError(f"dt={dt:g} exceeds {safety:g} x CFL bound {dt_max:g}")


class Stepper:
    """Recurrence matrices for one (system, dt, variant), factorized once."""

    def __init__(self, sys: AssembledSystem, dt: float, variant: str = "second_order",
                 lumped_mass: bool = False):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        B = lumped(sys.B) if lumped_mass else sys.B
        C, E = sys.C, sys.E
        self.dt = dt
        self.load = dt * dt * sys.h_vec
        if variant == "second_order":
            lhs = B + (0.5 * dt) * E
            self.K_curr = (2.0 * B - dt * dt * C).tocsr()
            self.K_prev = (-B + (0.5 * dt) * E).tocsr()
        else:
            lhs = B
            self.K_curr = (2.0 * B - dt * dt * C - dt * E).tocsr()
            self.K_prev = (-B + dt * E).tocsr()
        if lumped_mass and variant == "first_order":
            d = lhs.diagonal()
            self._solve = lambda r: r / d
        else:
            try:
                lu = splu(sp.csc_matrix(lhs))
            except RuntimeError as exc:
                raise np.linalg.LinAlgError(f"factorization failed: {exc}") from exc
            self._solve = lu.solve

    def advance(self, a_prev: np.ndarray, a_curr: np.ndarray, f_n) -> np.ndarray:
        """One step; with 2-D states each column carries its own amplitude ``f_n[k]``."""
        rhs = self.K_curr @ a_curr + self.K_prev @ a_prev
        if np.any(f_n):
            rhs += np.multiply.outer(self.load, f_n)
        return self._solve(rhs)


def step(sys: AssembledSystem, state: WaveState, dt: float, f_n: float,
         variant: str = "second_order", stepper: Stepper | None = None) -> WaveState:
    st = stepper or Stepper(sys, dt, variant)
    a_next = st.advance(state.a_prev, state.a_curr, f_n)
    if not np.all(np.isfinite(a_next)):
        raise StabilityError("non-finite coefficients", -1)
    return WaveState(state.a_curr, a_next)


def solve(sys: AssembledSystem, grid: TimeGrid, sig, variant: str = "second_order",
          sink: Callable[[int, np.ndarray], None] | None = None, monitor_every: int = 50,
          blowup: float = 1e6, lumped_mass: bool = False, stepper: Stepper | None = None) -> np.ndarray:
    """March from ``a^0 = a^1 = 0`` to ``a^{n_steps}``, calling ``sink(n, a^n)``.

    ``sig`` is a signal or a list of signals; a list is marched as the columns
    of one ``(dof, k)`` state sharing a single factorization. Returns the final
    coefficients.
    """
    st = stepper or Stepper(sys, grid.dt, variant, lumped_mass)
    t = np.arange(grid.n_steps + 1) * grid.dt
    if isinstance(sig, (list, tuple)):
        f = np.column_stack([s(t) for s in sig])
        shape = (sys.dof_count, len(sig))
    else:
        f = np.asarray(sig(t), dtype=float)
        shape = (sys.dof_count,)
    a_prev, a_curr = np.zeros(shape), np.zeros(shape)
    if sink is not None:
        sink(0, a_prev)
        sink(1, a_curr)
    for k in range(1, grid.n_steps):
        a_next = st.advance(a_prev, a_curr, f[k])
        if (k + 1) % monitor_every == 0 or k + 1 == grid.n_steps:
            amax = np.max(np.abs(a_next))
            if not np.isfinite(amax) or amax > blowup:
                raise StabilityError(f"|a|_inf={amax:.3g} at step {k + 1}", k + 1)
        a_prev, a_curr = a_curr, a_next
        if sink is not None:
            sink(k + 1, a_curr)
    return a_curr


def discrete_energy(sys: AssembledSystem, a_prev: np.ndarray, a_curr: np.ndarray, dt: float) -> float:
    """Staggered energy ``|(a^{n+1}-a^n)/dt|_B^2 / 2 + (a^{n+1})^T C a^n / 2``.

    Without forcing the centered-damping recurrence never increases it.
    """
    v = (a_curr - a_prev) / dt
    return 0.5 * float(v @ (sys.B @ v)) + 0.5 * float(a_curr @ (sys.C @ a_prev))


def write_snapshot(path, points: np.ndarray, values: np.ndarray, t: float) -> None:
    """Full-field dump: ``# t=...`` then ``x y value`` per mesh point."""
    np.savetxt(path, np.column_stack([points, values]), header=f"t={t:.10g}")
