"""Fixed-step one-step maps: Euler-Maruyama, derivative-free Milstein, and
the order-2 / order-4 stochastic Runge-Kutta schemes.

All steppers are pure functions (state, t, increment) -> StepResult and are
safe for concurrent use across trajectories.  The Runge-Kutta schemes feed
the same (dt, dw) displacement to every stage; only the state and the stage
time move.  That convention is what makes the stage combination reproduce
the stochastic Taylor expansion.
"""

from __future__ import annotations

import enum
import math

import numpy as np

from .system import (
    BlowUpError,
    NoiseIncrement,
    SdeSystem,
    StepResult,
    UnsupportedNoiseError,
    increment_function,
)
from .tableau import DOP853_TABLEAU, RK4_TABLEAU, ButcherTableau

__all__ = [
    "SchemeId",
    "em_step",
    "milstein_df_step",
    "srk2_step",
    "srk4_step",
    "step",
]


class SchemeId(enum.Enum):
    """The four integrators, keyed by their CLI names."""

    EULER_MARUYAMA = "em"
    MILSTEIN_DF = "milstein"
    SRK2 = "srk2"
    SRK4 = "srk4"

    @classmethod
    def from_name(cls, name: str) -> "SchemeId":
        try:
            return cls(name)
        except ValueError:
            valid = ", ".join(s.value for s in cls)
            raise ValueError(f"unknown scheme {name!r}; valid schemes: {valid}") from None


def _checked(x1: np.ndarray, t: float, x: np.ndarray, err: np.ndarray | None = None) -> StepResult:
    if not np.isfinite(x1).all():
        raise BlowUpError(t, x)
    return StepResult(x1, err)


def em_step(sys: SdeSystem, x: np.ndarray, t: float, inc: NoiseIncrement) -> StepResult:
    """Euler-Maruyama: x + a dt + sum_k b_k dW^k.  Strong order 1/2."""
    x = np.asarray(x, dtype=float)
    x1 = x + np.asarray(sys.drift(x, t), dtype=float) * inc.dt
    if sys.m:
        x1 = x1 + np.asarray(sys.diffusion(x, t), dtype=float) @ inc.dw
    return _checked(x1, t, x)


def milstein_df_step(sys: SdeSystem, x: np.ndarray, t: float, inc: NoiseIncrement) -> StepResult:
    """Derivative-free Milstein (Kloeden-Platen supporting-value form).

    Adds to Euler-Maruyama, per noise pair (k, l), the correction

        (b_l(x + a dt + b_k sqrt(dt)) - b_l(x)) (dW^k dW^l - delta_kl dt) / (2 sqrt(dt)).

    Valid for scalar, diagonal, or commutative noise; multi-channel systems
    must carry the user's commutativity assertion (Levy areas are not
    simulated here).  Strong order 1.
    """
    if sys.m > 1 and sys.commutative is not True:
        raise UnsupportedNoiseError(
            "derivative-free Milstein needs commutative noise for m > 1; "
            "set SdeSystem.commutative = True to assert it"
        )
    x = np.asarray(x, dtype=float)
    a = np.asarray(sys.drift(x, t), dtype=float)
    x1 = x + a * inc.dt
    if sys.m:
        b = np.asarray(sys.diffusion(x, t), dtype=float)
        x1 = x1 + b @ inc.dw
        if inc.dt > 0:
            sq = math.sqrt(inc.dt)
            base = x + a * inc.dt
            for k in range(sys.m):
                bk = np.asarray(sys.diffusion(base + b[:, k] * sq, t), dtype=float)
                prods = inc.dw[k] * inc.dw
                prods[k] -= inc.dt
                x1 = x1 + ((bk - b) @ prods) / (2.0 * sq)
    return _checked(x1, t, x)


def _rk_pass(tab: ButcherTableau, sys: SdeSystem, x: np.ndarray, t: float,
             inc: NoiseIncrement) -> StepResult:
    """Run the stage recursion with a fixed (dt, dw) displacement."""
    x = np.asarray(x, dtype=float)
    K = np.empty((tab.s, sys.n))
    for i in range(tab.s):
        xi = x + tab.a[i, :i] @ K[:i] if i else x
        K[i] = increment_function(sys, xi, t + tab.c[i] * inc.dt, inc)
    x1 = x + tab.b @ K
    err = (tab.b - tab.b_emb) @ K if tab.b_emb is not None else None
    return _checked(x1, t, x, err)


def srk2_step(sys: SdeSystem, x: np.ndarray, t: float, inc: NoiseIncrement) -> StepResult:
    """Four-stage stochastic Runge-Kutta, strong order 2.

    The classical fourth-order stage pattern applied to the displacement
    function; reduces to classical RK4 when the diffusion vanishes.
    """
    return _rk_pass(RK4_TABLEAU, sys, x, t, inc)


def srk4_step(sys: SdeSystem, x: np.ndarray, t: float, inc: NoiseIncrement) -> StepResult:
    """Twelve-stage stochastic Runge-Kutta, strong order 4, with embedded error.

    Built from the Hairer-Wanner eighth-order method; the returned
    ``embedded_error`` is the difference against the published companion
    lower-order weights and drives the adaptive controller.
    """
    return _rk_pass(DOP853_TABLEAU, sys, x, t, inc)


_DISPATCH = {
    SchemeId.EULER_MARUYAMA: em_step,
    SchemeId.MILSTEIN_DF: milstein_df_step,
    SchemeId.SRK2: srk2_step,
    SchemeId.SRK4: srk4_step,
}


def step(scheme: SchemeId, sys: SdeSystem, x: np.ndarray, t: float,
         inc: NoiseIncrement) -> StepResult:
    """Dispatch one step to the named scheme."""
    return _DISPATCH[scheme](sys, x, t, inc)
