"""Benchmark SDEs with closed-form pathwise solutions.

Six problems, each pairing an SdeSystem with an oracle that evaluates the
exact solution on a realized Wiener grid: a nonlinear tangent equation, a
two-noise geometric motion, a three-noise rotational pair, a non-autonomous
linear equation, the stochastic Ginzburg-Landau equation (oracle needs a
Riemann-sum integral of the path), and a sech-diffusion equation (oracle
needs an Ito-sum integral).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .noise import WienerGrid
from .system import SdeError, SdeSystem

__all__ = [
    "ProblemId",
    "BenchmarkProblem",
    "PathAccumulator",
    "PoleProximityError",
    "make_problem",
    "exact",
    "accumulate",
    "PROBLEM_NAMES",
]

_POLE_MARGIN = 1e-6


class PoleProximityError(SdeError):
    """The tangent-problem oracle was evaluated too close to a pole."""

    def __init__(self, t, theta):
        self.t = float(t)
        self.theta = float(theta)
        super().__init__(
            f"exact solution within {_POLE_MARGIN:g} of a tangent pole at t={t!r}"
        )


class ProblemId(enum.Enum):
    TAN = "tan"
    GEOM_BM2 = "geom2"
    ROTATIONAL_2X3 = "rot23"
    NON_AUTONOMOUS = "nonauto"
    GINZBURG_LANDAU = "gl"
    SECH = "sech"

    @classmethod
    def from_name(cls, name: str) -> "ProblemId":
        try:
            return cls(name)
        except ValueError:
            valid = ", ".join(p.value for p in cls)
            raise ValueError(f"unknown problem {name!r}; valid problems: {valid}") from None


PROBLEM_NAMES = tuple(p.value for p in ProblemId)


@dataclass(frozen=True)
class PathAccumulator:
    """Left-endpoint partial integral over a contiguous prefix of a grid.

    ``riemann`` mode accumulates integrand(s, W_s) * dt; ``ito`` mode
    accumulates integrand(s) * dW_s.  Values fold in strict time order, so
    concatenating segments reproduces a single-pass sum exactly.
    """

    mode: str  # 'riemann' | 'ito'
    value: float = 0.0
    last_time: float | None = None
    w_last: float = 0.0

    def __post_init__(self):
        if self.mode not in ("riemann", "ito"):
            raise ValueError("mode must be 'riemann' or 'ito'")


def accumulate(acc: PathAccumulator, segment: WienerGrid,
               integrand: Callable) -> PathAccumulator:
    """Extend the partial integral over one contiguous grid segment.

    The segment must start where the accumulator stopped.  For riemann mode
    the integrand is called as integrand(s, w); for ito mode as integrand(s).
    """
    if segment.m != 1:
        raise ValueError("path integrals are defined for single-noise grids")
    if acc.last_time is not None and not math.isclose(
            acc.last_time, segment.t0, rel_tol=1e-12, abs_tol=1e-12):
        raise ValueError(
            f"segment starts at {segment.t0!r} but accumulator stopped at {acc.last_time!r}"
        )
    value = acc.value
    w = acc.w_last
    t = segment.t0
    dt = segment.dt_fine
    dws = segment.increments[:, 0]
    if acc.mode == "riemann":
        for l in range(segment.n_steps):
            value += integrand(segment.t0 + l * dt, w) * dt
            w += dws[l]
    else:
        for l in range(segment.n_steps):
            value += integrand(segment.t0 + l * dt) * dws[l]
            w += dws[l]
    return PathAccumulator(acc.mode, value, segment.t_end, w)


@dataclass(frozen=True)
class BenchmarkProblem:
    """An SdeSystem plus its exact-solution oracle over a realized path."""

    id: ProblemId
    sys: SdeSystem
    params: dict
    x0: np.ndarray
    t0: float
    dt_paper: float
    _oracle_path: Callable[[WienerGrid], np.ndarray]

    @property
    def name(self) -> str:
        return self.id.value

    def exact_path(self, grid: WienerGrid) -> np.ndarray:
        """Exact solution at every node of ``grid``, shape (L+1, n)."""
        if grid.m != self.sys.m:
            raise ValueError(f"grid has m={grid.m}, problem needs m={self.sys.m}")
        if not math.isclose(grid.t0, self.t0, rel_tol=1e-12, abs_tol=1e-12):
            raise ValueError(f"grid starts at {grid.t0!r}, problem at {self.t0!r}")
        return self._oracle_path(grid)

    def exact(self, t: float, grid: WienerGrid) -> np.ndarray:
        """Exact solution at a single grid node time t."""
        idx = (t - grid.t0) / grid.dt_fine
        l = round(idx)
        if abs(idx - l) > 1e-6:
            raise ValueError(f"t={t!r} is not a node of the grid")
        prefix = WienerGrid(grid.t0, grid.dt_fine, grid.increments[:l])
        return self._oracle_path(prefix)[-1]


def make_problem(id: ProblemId | str, params: dict | None = None,
                 preset: str | None = None, dt_paper: float | None = None) -> BenchmarkProblem:
    """Build one of the six benchmark problems.

    ``params`` overrides individual coefficients.  The geometric problem has
    a named preset ``fig2-like`` (a0=0.1, b1=b2=1.0) whose solution decays;
    its default (a0=1.0, b1=b2=0.5) grows.  ``dt_paper`` overrides the
    reference step-size metadata and must be positive.
    """
    pid = ProblemId.from_name(id) if isinstance(id, str) else id
    builder = _BUILDERS[pid]
    p = dict(_DEFAULTS[pid])
    if preset is not None:
        if pid is not ProblemId.GEOM_BM2 or preset not in _GEOM_PRESETS:
            raise ValueError(f"unknown preset {preset!r} for problem {pid.value!r}")
        p.update(_GEOM_PRESETS[preset])
    if params:
        unknown = set(params) - set(p)
        if unknown:
            raise ValueError(f"unknown parameter(s) {sorted(unknown)} for problem {pid.value!r}")
        p.update(params)
    dt = _DT_PAPER[pid] if dt_paper is None else float(dt_paper)
    if not dt > 0:
        raise ValueError("dt metadata must be > 0")
    return builder(p, dt)


def exact(problem: BenchmarkProblem, t: float, grid: WienerGrid) -> np.ndarray:
    return problem.exact(t, grid)


# -- tan: dX = (1+X)(1+X^2) dt + (1+X^2) dW,  X_t = tan(t + W_t + arctan X0)

def _tan_pole_check(theta: np.ndarray, times: np.ndarray) -> None:
    frac = np.mod(theta - math.pi / 2, math.pi)
    dist = np.minimum(frac, math.pi - frac)
    bad = np.flatnonzero(dist < _POLE_MARGIN)
    if bad.size:
        raise PoleProximityError(times[bad[0]], theta[bad[0]])


def _build_tan(p: dict, dt_paper: float) -> BenchmarkProblem:
    x0 = float(p["x0"])

    def drift(x, t):
        return (1.0 + x) * (1.0 + x * x)

    def diffusion(x, t):
        return (1.0 + x * x)[:, None]

    def contraction(x, t):
        return (1.0 + x * x) * (2.0 * x)

    sys = SdeSystem(1, 1, drift, diffusion, contraction, commutative=True)
    off = math.atan(x0)

    def oracle(grid: WienerGrid) -> np.ndarray:
        theta = grid.times() + off
        theta[1:] += np.cumsum(grid.increments[:, 0])
        _tan_pole_check(theta, grid.times())
        return np.tan(theta)[:, None]

    return BenchmarkProblem(ProblemId.TAN, sys, p, np.array([x0]), 0.0, dt_paper, oracle)


# -- geom2: dX = a0 X dt + b1 X dW1 + b2 X dW2

def _build_geom2(p: dict, dt_paper: float) -> BenchmarkProblem:
    a0, b1, b2, x0 = (float(p[k]) for k in ("a0", "b1", "b2", "x0"))

    def drift(x, t):
        return a0 * x

    def diffusion(x, t):
        return np.column_stack((b1 * x, b2 * x))

    def contraction(x, t):
        return (b1 * b1 + b2 * b2) * x

    sys = SdeSystem(1, 2, drift, diffusion, contraction, commutative=True)
    rate = a0 - 0.5 * (b1 * b1 + b2 * b2)

    def oracle(grid: WienerGrid) -> np.ndarray:
        w = grid.path()
        expo = rate * grid.times() + b1 * w[:, 0] + b2 * w[:, 1]
        return (x0 * np.exp(expo))[:, None]

    return BenchmarkProblem(ProblemId.GEOM_BM2, sys, p, np.array([x0]), 0.0, dt_paper, oracle)


# -- rot23: two coupled linear SDEs in three Wiener processes

def _build_rot23(p: dict, dt_paper: float) -> BenchmarkProblem:
    def drift(x, t):
        return -1.5 * x

    def diffusion(x, t):
        return np.array([
            [x[0], -x[0], -x[1]],
            [x[1], -x[1], x[0]],
        ])

    def contraction(x, t):
        # B1^2 + B2^2 + B3^2 = I with B1 = I, B2 = -I, B3 = rotation
        return x.copy()

    sys = SdeSystem(2, 3, drift, diffusion, contraction, commutative=True)

    def oracle(grid: WienerGrid) -> np.ndarray:
        w = grid.path()
        amp = np.exp(-2.0 * grid.times() + w[:, 0] - w[:, 1])
        return np.column_stack((amp * np.cos(w[:, 2]), amp * np.sin(w[:, 2])))

    return BenchmarkProblem(
        ProblemId.ROTATIONAL_2X3, sys, p, np.array([1.0, 0.0]), 0.0, dt_paper, oracle
    )


# -- nonauto: dX = [2X/(1+t) + (1+t)^2/2] dt + (1+t)^2/2 dW

def _build_nonauto(p: dict, dt_paper: float) -> BenchmarkProblem:
    x0 = float(p["x0"])

    def drift(x, t):
        return 2.0 / (1.0 + t) * x + 0.5 * (1.0 + t) ** 2

    def diffusion(x, t):
        return np.array([[0.5 * (1.0 + t) ** 2]])

    def contraction(x, t):
        return np.zeros(1)

    sys = SdeSystem(1, 1, drift, diffusion, contraction, commutative=True)

    def oracle(grid: WienerGrid) -> np.ndarray:
        tt = grid.times()
        w = grid.path()[:, 0]
        val = (1.0 + tt) ** 2 * x0 + 0.5 * (1.0 + tt) ** 2 * (w + tt)
        return val[:, None]

    return BenchmarkProblem(
        ProblemId.NON_AUTONOMOUS, sys, p, np.array([x0]), 0.0, dt_paper, oracle
    )


# -- gl: stochastic Ginzburg-Landau; oracle integrates exp(2 alpha s + 2 sigma W_s)
#    by a left Riemann sum on the grid

def _build_gl(p: dict, dt_paper: float) -> BenchmarkProblem:
    alpha, sigma, x0 = (float(p[k]) for k in ("alpha", "sigma", "x0"))

    def drift(x, t):
        return -x ** 3 + (alpha + 0.5 * sigma * sigma) * x

    def diffusion(x, t):
        return (sigma * x)[:, None]

    def contraction(x, t):
        return sigma * sigma * x

    sys = SdeSystem(1, 1, drift, diffusion, contraction, commutative=True)

    def oracle(grid: WienerGrid) -> np.ndarray:
        tt = grid.times()
        w = grid.path()[:, 0]
        vals = np.exp(2.0 * alpha * tt[:-1] + 2.0 * sigma * w[:-1]) * grid.dt_fine
        integral = np.zeros(tt.shape[0])
        np.cumsum(vals, out=integral[1:])
        num = x0 * np.exp(alpha * tt + sigma * w)
        return (num / np.sqrt(1.0 + 2.0 * x0 * x0 * integral))[:, None]

    return BenchmarkProblem(
        ProblemId.GINZBURG_LANDAU, sys, p, np.array([x0]), 0.0, dt_paper, oracle
    )


# -- sech: dX = -tanh X (a + b^2 sech^2 X / 2) dt + b sech X dW;
#    oracle integrates exp(a s) dW_s by the left Ito sum on the grid

def _build_sech(p: dict, dt_paper: float) -> BenchmarkProblem:
    a, b, x0 = (float(p[k]) for k in ("a", "b", "x0"))

    def drift(x, t):
        sech = 1.0 / np.cosh(x)
        return -np.tanh(x) * (a + 0.5 * b * b * sech * sech)

    def diffusion(x, t):
        return (b / np.cosh(x))[:, None]

    def contraction(x, t):
        sech = 1.0 / np.cosh(x)
        return -b * b * sech * sech * np.tanh(x)

    sys = SdeSystem(1, 1, drift, diffusion, contraction, commutative=True)

    def oracle(grid: WienerGrid) -> np.ndarray:
        tt = grid.times()
        vals = np.exp(a * tt[:-1]) * grid.increments[:, 0]
        integral = np.zeros(tt.shape[0])
        np.cumsum(vals, out=integral[1:])
        inner = np.exp(-a * tt) * (math.sinh(x0) + integral)
        return np.arcsinh(inner)[:, None]

    return BenchmarkProblem(ProblemId.SECH, sys, p, np.array([x0]), 0.0, dt_paper, oracle)


_GEOM_PRESETS = {
    "fig2-like": {"a0": 0.1, "b1": 1.0, "b2": 1.0},
}

_DEFAULTS = {
    ProblemId.TAN: {"x0": 1.0},
    ProblemId.GEOM_BM2: {"a0": 1.0, "b1": 0.5, "b2": 0.5, "x0": 1.0},
    ProblemId.ROTATIONAL_2X3: {},
    ProblemId.NON_AUTONOMOUS: {"x0": 1.0},
    ProblemId.GINZBURG_LANDAU: {"alpha": 0.01, "sigma": 4.0, "x0": 1.0},
    ProblemId.SECH: {"a": 0.02, "b": 1.0, "x0": 1.0},
}

_DT_PAPER = {
    ProblemId.TAN: 2.5e-5,
    ProblemId.GEOM_BM2: 1e-2,
    ProblemId.ROTATIONAL_2X3: 1e-2,
    ProblemId.NON_AUTONOMOUS: 1e-3,
    ProblemId.GINZBURG_LANDAU: 5e-6,
    ProblemId.SECH: 1e-5,
}

_BUILDERS = {
    ProblemId.TAN: _build_tan,
    ProblemId.GEOM_BM2: _build_geom2,
    ProblemId.ROTATIONAL_2X3: _build_rot23,
    ProblemId.NON_AUTONOMOUS: _build_nonauto,
    ProblemId.GINZBURG_LANDAU: _build_gl,
    ProblemId.SECH: _build_sech,
}
