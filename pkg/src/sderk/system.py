"""Ito SDE problem abstraction and the modified-drift construction.

A system  dX^j = a^j(X,t) dt + sum_k b^j_k(X,t) dW^k  with strong solutions
can be integrated by Runge-Kutta stage machinery once the drift is corrected
by half the diffusion-Jacobian contraction.  This module holds the system
container, the corrected drift, and the displacement (increment) function
that all stage-based schemes consume.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "SdeError",
    "DomainError",
    "BlowUpError",
    "UnsupportedNoiseError",
    "SdeSystem",
    "NoiseIncrement",
    "StepResult",
    "fd_contraction",
    "modified_drift",
    "increment_function",
]


class SdeError(Exception):
    """Base class for integration errors."""


class DomainError(SdeError):
    """A coefficient function returned a non-finite value."""


class BlowUpError(SdeError):
    """A step produced a non-finite state.

    Attributes
    ----------
    t : float
        Time at which the step started.
    state : ndarray
        Last finite state.
    """

    def __init__(self, t: float, state, detail: str = ""):
        self.t = float(t)
        self.state = np.asarray(state)
        msg = f"solution blew up at t={t!r}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class UnsupportedNoiseError(SdeError):
    """Scheme requires diagonal or commutative noise (Levy areas are not simulated)."""


@dataclass(frozen=True)
class SdeSystem:
    """An Ito SDE  dX^j = a^j dt + sum_k b^j_k dW^k  on R^n with m Wiener processes.

    Parameters
    ----------
    n : int
        State dimension.
    m : int
        Number of independent Wiener processes (0 gives a deterministic ODE).
    drift : callable(x, t) -> (n,) array
    diffusion : callable(x, t) -> (n, m) array
        Column k is the coefficient vector of dW^k.
    diffusion_contraction : callable(x, t) -> (n,) array, optional
        Analytic C^j = sum_k sum_i b^i_k * d b^j_k / d x^i.  When omitted a
        central finite-difference fallback is used.
    diffusion_apply : callable(x, t, dw) -> (n,) array, optional
        Fused evaluation of diffusion(x, t) @ dw for systems whose columns
        have structure worth exploiting; must agree with the matrix form.
    increment : callable(x, t, dt, dw) -> (n,) array, optional
        Fused stage displacement (a - C/2) dt + diffusion @ dw.  Performance
        hook for hot loops; must agree with the generic composition.
    commutative : bool or None
        User assertion that the noise fields commute (required by the
        derivative-free Milstein scheme for m > 1).  Never verified here.

    Evaluations must be free of mutable shared state; one instance may be
    used concurrently by independent trajectory workers.
    """

    n: int
    m: int
    drift: Callable[[np.ndarray, float], np.ndarray]
    diffusion: Callable[[np.ndarray, float], np.ndarray]
    diffusion_contraction: Callable[[np.ndarray, float], np.ndarray] | None = None
    diffusion_apply: Callable[[np.ndarray, float, np.ndarray], np.ndarray] | None = None
    increment: Callable[[np.ndarray, float, float, np.ndarray], np.ndarray] | None = None
    commutative: bool | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("state dimension n must be >= 1")
        if self.m < 0:
            raise ValueError("noise dimension m must be >= 0")


@dataclass(frozen=True)
class NoiseIncrement:
    """A time step paired with its Wiener increments.

    ``dw_lo`` is a bookkeeping-only compensation vector: the mathematical
    value of component k is ``dw[k] + dw_lo[k]`` with ``|dw_lo| <= ulp(dw)``.
    It exists so that Brownian-bridge splitting can reproduce a parent
    increment bit-exactly under exactly-rounded summation (``math.fsum``);
    numerical consumers use ``dw`` alone.
    """

    dt: float
    dw: np.ndarray
    dw_lo: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        object.__setattr__(self, "dw", np.atleast_1d(np.asarray(self.dw, dtype=float)))
        if self.dw_lo is None:
            object.__setattr__(self, "dw_lo", np.zeros_like(self.dw))
        else:
            object.__setattr__(self, "dw_lo", np.atleast_1d(np.asarray(self.dw_lo, dtype=float)))
        if not (self.dt >= 0.0 and np.isfinite(self.dt)):
            raise ValueError(f"dt must be finite and >= 0, got {self.dt!r}")
        if not np.isfinite(self.dw).all():
            raise ValueError("Wiener increments must be finite")

    @property
    def m(self) -> int:
        return self.dw.shape[0]


@dataclass(frozen=True)
class StepResult:
    """State after one step, plus the embedded error estimate when the scheme has one."""

    state: np.ndarray
    embedded_error: np.ndarray | None = None


def fd_contraction(sys: SdeSystem, x: np.ndarray, t: float) -> np.ndarray:
    """Central-difference approximation of C^j = sum_k sum_i b^i_k db^j_k/dx^i.

    Per-coordinate step 1e-6 * max(1, |x_i|); second-order accurate.
    """
    x = np.asarray(x, dtype=float)
    b = np.asarray(sys.diffusion(x, t), dtype=float)
    out = np.zeros(sys.n)
    for i in range(sys.n):
        h = 1e-6 * max(1.0, abs(x[i]))
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        bp = np.asarray(sys.diffusion(xp, t), dtype=float)
        bm = np.asarray(sys.diffusion(xm, t), dtype=float)
        if not (np.isfinite(bp).all() and np.isfinite(bm).all()):
            raise DomainError(
                f"diffusion non-finite at perturbed point (coordinate {i}, t={t!r})"
            )
        out += ((bp - bm) / (2.0 * h)) @ b[i, :]
    return out


def modified_drift(sys: SdeSystem, x: np.ndarray, t: float) -> np.ndarray:
    """Drift corrected by half the diffusion contraction: a^j - C^j / 2.

    This is the effective time-derivative of the solution viewed as a
    function of (t, W); it is what the Runge-Kutta stages integrate.
    Uses the analytic contraction when the system provides one, otherwise
    the finite-difference fallback.
    """
    a = np.asarray(sys.drift(x, t), dtype=float)
    if sys.m == 0:
        if not np.isfinite(a).all():
            raise DomainError(_nonfinite_msg("drift", a, x, t))
        return a
    if sys.diffusion_contraction is not None:
        c = np.asarray(sys.diffusion_contraction(x, t), dtype=float)
    else:
        c = fd_contraction(sys, x, t)
    out = a - 0.5 * c
    if not np.isfinite(out).all():
        if not np.isfinite(a).all():
            raise DomainError(_nonfinite_msg("drift", a, x, t))
        raise DomainError(_nonfinite_msg("diffusion contraction", c, x, t))
    return out


def increment_function(sys: SdeSystem, x: np.ndarray, t: float, inc: NoiseIncrement) -> np.ndarray:
    """Stage displacement f_j = (a^j - C^j/2) dt + sum_k b^j_k dW^k.

    Linear in (dt, dw) jointly for fixed (x, t).  Propagates modified-drift
    domain errors.
    """
    if sys.increment is not None:
        return sys.increment(x, t, inc.dt, inc.dw)
    f = modified_drift(sys, x, t) * inc.dt
    if sys.m:
        if sys.diffusion_apply is not None:
            f = f + sys.diffusion_apply(x, t, inc.dw)
        else:
            f = f + np.asarray(sys.diffusion(x, t), dtype=float) @ inc.dw
    return f


def _nonfinite_msg(which: str, val: np.ndarray, x: np.ndarray, t: float) -> str:
    bad = np.flatnonzero(~np.isfinite(np.atleast_1d(val)))
    return f"{which} returned non-finite component(s) {bad.tolist()} at t={t!r}, x={np.asarray(x).tolist()}"
