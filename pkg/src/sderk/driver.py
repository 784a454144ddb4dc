"""Trajectory drivers: fixed-step runs and the adaptive embedded-error loop.

The adaptive driver advances with the order-4 scheme and, on rejection,
splits the current increment with the Brownian-bridge rule instead of
redrawing it, so the realized Wiener path is preserved across rejections.
Second halves wait on a LIFO stack; fresh increments are drawn only when
that stack is empty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .noise import RngStream, WienerGrid, bridge_split, sample_increment
from .steppers import SchemeId, srk4_step, step
from .system import NoiseIncrement, SdeError, SdeSystem

__all__ = [
    "StepController",
    "PendingIncrements",
    "StiffnessError",
    "Trajectory",
    "error_norm",
    "integrate_adaptive",
    "integrate_fixed",
]


class StiffnessError(SdeError):
    """Persistent rejection drove the step size below dt_min."""

    def __init__(self, t, state, norm):
        self.t = float(t)
        self.state = np.asarray(state)
        self.norm = float(norm)
        super().__init__(
            f"step size fell below dt_min at t={t!r} with error norm {norm!r}; "
            "the problem may be stiff or blowing up"
        )


@dataclass(frozen=True)
class StepController:
    """Mixed absolute/relative tolerance step-size control parameters."""

    atol: float = 1e-8
    rtol: float = 1e-8
    safety: float = 0.9
    min_scale: float = 0.2
    max_scale: float = 5.0
    dt_min: float = 1e-12
    dt_max: float = math.inf

    def __post_init__(self):
        if not (self.atol > 0 and self.rtol >= 0):
            raise ValueError("tolerances must be positive")
        if not (0 < self.min_scale < 1 < self.max_scale):
            raise ValueError("need 0 < min_scale < 1 < max_scale")
        if not (0 < self.dt_min <= self.dt_max):
            raise ValueError("need 0 < dt_min <= dt_max")


class PendingIncrements:
    """LIFO stack of increments committed to the realized path but not yet consumed.

    Nested rejections push their second halves here; last-in-first-out order
    guarantees the next attempt always refines the earliest uncovered
    subinterval.
    """

    def __init__(self):
        self._stack: list[NoiseIncrement] = []

    def push(self, inc: NoiseIncrement) -> None:
        self._stack.append(inc)

    def pop(self) -> NoiseIncrement:
        return self._stack.pop()

    def __len__(self) -> int:
        return len(self._stack)

    def __bool__(self) -> bool:
        return bool(self._stack)


def error_norm(err: np.ndarray, x_old: np.ndarray, x_new: np.ndarray,
               ctrl: StepController) -> float:
    """RMS of the error components scaled by atol + rtol * max(|old|, |new|)."""
    scale = ctrl.atol + ctrl.rtol * np.maximum(np.abs(x_old), np.abs(x_new))
    q = err / scale
    return math.sqrt(float(q @ q) / q.shape[0])


@dataclass
class Trajectory:
    """Recorded states of one integration run.

    Row 0 is the initial condition.  ``w`` is the running sum of consumed
    Wiener increments, ``dt_used`` the step that produced each row, and
    ``rejected`` flags rows whose step was retried after at least one
    rejection.  ``roots``/``leaves`` hold the drawn and consumed increments
    when bookkeeping was requested.
    """

    t: np.ndarray
    x: np.ndarray
    w: np.ndarray
    dt_used: np.ndarray
    rejected: np.ndarray
    n_accepted: int = 0
    n_rejected: int = 0
    max_error_norm: float = 0.0
    roots: list = field(default=None)  # type: ignore[assignment]
    leaves: list = field(default=None)  # type: ignore[assignment]

    @property
    def t_end(self) -> float:
        return float(self.t[-1])

    @property
    def x_end(self) -> np.ndarray:
        return self.x[-1]

    @property
    def w_end(self) -> np.ndarray:
        return self.w[-1]


class _Recorder:
    def __init__(self, n, m, stride):
        self.stride = max(1, int(stride))
        self.rows_t, self.rows_x, self.rows_w = [], [], []
        self.rows_dt, self.rows_rej = [], []
        self.count = 0  # accepted steps seen

    def record(self, t, x, w, dt_used, rejected, force=False):
        if force or self.count % self.stride == 0:
            self.rows_t.append(t)
            self.rows_x.append(np.array(x, dtype=float))
            self.rows_w.append(np.array(w, dtype=float))
            self.rows_dt.append(dt_used)
            self.rows_rej.append(rejected)

    def build(self, **meta) -> Trajectory:
        return Trajectory(
            t=np.array(self.rows_t),
            x=np.array(self.rows_x),
            w=np.array(self.rows_w),
            dt_used=np.array(self.rows_dt),
            rejected=np.array(self.rows_rej, dtype=np.uint8),
            **meta,
        )


def integrate_adaptive(sys: SdeSystem, x0, t0: float, t_end: float,
                       ctrl: StepController, rng: RngStream, *,
                       dt0: float | None = None, stride: int = 1,
                       post_accept=None, record_increments: bool = False,
                       _force_reject=None) -> Trajectory:
    """Integrate [t0, t_end] with the order-4 scheme under embedded-error control.

    Accepted steps rescale the next fresh draw by
    ``clamp(safety * norm**(-1/5), min_scale, max_scale)``; rejected steps are
    bridge-split, the first half is attempted immediately and the second half
    is pushed onto the pending stack.  Fresh increments are drawn only when
    nothing is pending, and the last fresh draw lands exactly on t_end.

    ``post_accept(x, t) -> x`` lets callers transform accepted states (e.g.
    renormalization).  ``_force_reject(attempt_index) -> bool`` is a test-only
    hook that rejects a step regardless of its error norm.

    Raises StiffnessError when rejection would push dt below ctrl.dt_min.
    """
    if not t_end > t0:
        raise ValueError("t_end must exceed t0")
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    t = t0
    w = np.zeros(sys.m)
    proposed = dt0 if dt0 is not None else (t_end - t0) / 100.0
    proposed = min(max(proposed, ctrl.dt_min), ctrl.dt_max)

    pending = PendingIncrements()
    rec = _Recorder(sys.n, sys.m, stride)
    rec.record(t, x, w, 0.0, 0)
    rec.count = 1
    roots: list[NoiseIncrement] = []
    leaves: list[NoiseIncrement] = []
    n_accepted = n_rejected = 0
    max_norm = 0.0
    attempts = 0
    rejected_since_accept = 0
    at_end = False

    # Non-finite intermediates are expected near blow-up and surface as
    # exceptions; keep numpy quiet about them.
    with np.errstate(over="ignore", invalid="ignore"):
        while True:
            if pending:
                inc = pending.pop()
                final = at_end and not pending
            else:
                if at_end or t_end - t <= 0:
                    break
                dt = min(proposed, ctrl.dt_max)
                remaining = t_end - t
                if dt >= remaining or remaining - dt < ctrl.dt_min:
                    dt = remaining
                    at_end = True
                inc = sample_increment(rng, dt, sys.m)
                if record_increments:
                    roots.append(inc)
                final = at_end
            res = srk4_step(sys, x, t, inc)
            norm = error_norm(res.embedded_error, x, res.state, ctrl)
            reject = norm > 1.0
            if _force_reject is not None and _force_reject(attempts):
                reject = True
            attempts += 1
            if reject:
                if inc.dt * 0.5 < ctrl.dt_min:
                    raise StiffnessError(t, x, norm)
                first, second = bridge_split(inc, rng)
                pending.push(second)
                pending.push(first)
                n_rejected += 1
                rejected_since_accept += 1
                continue
            # accept
            x = res.state
            if post_accept is not None:
                x = np.asarray(post_accept(x, t + inc.dt), dtype=float)
            w = w + inc.dw
            t = t_end if (final and not pending) else t + inc.dt
            if record_increments:
                leaves.append(inc)
            n_accepted += 1
            max_norm = max(max_norm, norm)
            rec.record(t, x, w, inc.dt, 1 if rejected_since_accept else 0,
                       force=(final and not pending))
            rec.count += 1
            rejected_since_accept = 0
            scale = ctrl.max_scale if norm == 0.0 else ctrl.safety * norm ** (-0.2)
            scale = min(max(scale, ctrl.min_scale), ctrl.max_scale)
            proposed = min(max(inc.dt * scale, ctrl.dt_min), ctrl.dt_max)
            if at_end and not pending:
                break

    return rec.build(
        n_accepted=n_accepted,
        n_rejected=n_rejected,
        max_error_norm=max_norm,
        roots=roots if record_increments else None,
        leaves=leaves if record_increments else None,
    )


def integrate_fixed(sys: SdeSystem, x0, t0: float, t_end: float | None = None,
                    dt: float | None = None, scheme: SchemeId = SchemeId.SRK4,
                    rng: RngStream | None = None, grid: WienerGrid | None = None,
                    stride: int = 1) -> Trajectory:
    """Uniform stepping with the chosen scheme.

    Increments come either from ``rng`` (fresh draws) or from a supplied
    ``grid`` (fixed-path studies; the grid fixes t0, dt, and the step count).
    In rng mode a trailing partial step is taken when dt does not divide the
    interval.  Records every ``stride``-th step, always including the final
    state.
    """
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    if grid is not None:
        if grid.m != sys.m:
            raise ValueError(f"grid has m={grid.m}, system needs m={sys.m}")
        t0 = grid.t0
        dt = grid.dt_fine
        n_steps = grid.n_steps
        partial = 0.0
    else:
        if rng is None or dt is None or t_end is None:
            raise ValueError("rng mode needs rng, dt, and t_end")
        if dt <= 0:
            raise ValueError("dt must be > 0")
        span = t_end - t0
        n_exact = span / dt
        n_steps = round(n_exact)
        # within 0.5 ulp of an integer counts as exact; otherwise take a
        # trailing partial step
        if abs(n_exact - n_steps) > 1e-9 * max(1.0, abs(n_exact)):
            n_steps = int(n_exact)
            partial = span - n_steps * dt
        else:
            partial = 0.0

    w = np.zeros(sys.m)
    t = t0
    rec = _Recorder(sys.n, sys.m, stride)
    rec.record(t, x, w, 0.0, 0)
    rec.count = 1
    try:
        for l in range(n_steps):
            inc = grid.increment(l) if grid is not None else sample_increment(rng, dt, sys.m)
            res = step(scheme, sys, x, t, inc)
            x = res.state
            w = w + inc.dw
            t = t0 + (l + 1) * dt
            is_last = l == n_steps - 1 and not partial
            rec.record(t, x, w, inc.dt, 0, force=is_last)
            rec.count += 1
        if partial:
            inc = sample_increment(rng, partial, sys.m)
            res = step(scheme, sys, x, t, inc)
            x = res.state
            w = w + inc.dw
            t = t_end
            rec.record(t, x, w, partial, 0, force=True)
            rec.count += 1
    except SdeError as exc:
        exc.step_index = rec.count - 1  # type: ignore[attr-defined]
        raise
    return rec.build(n_accepted=rec.count - 1, n_rejected=0, max_error_norm=0.0)
