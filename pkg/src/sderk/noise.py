"""Seeded Gaussian streams, Wiener grids, bridge splitting, and coarsening.

Reproducibility contract: identical (seed, stream_id) pairs give bit-identical
draw sequences; distinct stream_ids give statistically independent streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .system import NoiseIncrement

__all__ = [
    "RngStream",
    "WienerGrid",
    "sample_increment",
    "bridge_split",
    "coarsen",
]


class RngStream:
    """Deterministic per-trajectory Gaussian stream.

    Built on the counter-based Philox generator keyed by (seed, stream_id),
    with numpy's ziggurat normal transform.  Each stream owns its generator,
    so draw parity can never straddle stream boundaries.  Streams are meant
    to be owned by a single trajectory worker and never shared.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        if self.stream_id < 0:
            raise ValueError("stream_id must be >= 0")
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        self._gen = np.random.Generator(np.random.Philox(ss))

    def normal(self, scale: float = 1.0, size=None):
        return self._gen.normal(0.0, scale, size)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


@dataclass(frozen=True)
class WienerGrid:
    """Uniform-step realization of m Wiener paths via their increments.

    ``increments[l, k]`` ~ N(0, dt_fine) is the increment of W^k over
    [t0 + l dt, t0 + (l+1) dt].  All paths start at zero: W^k(t0) = 0.
    """

    t0: float
    dt_fine: float
    increments: np.ndarray  # (L, m)

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        if inc.ndim != 2:
            raise ValueError("increments must have shape (L, m)")
        object.__setattr__(self, "increments", inc)
        if not (self.dt_fine > 0 and np.isfinite(self.dt_fine)):
            raise ValueError("dt_fine must be finite and > 0")

    @property
    def n_steps(self) -> int:
        return self.increments.shape[0]

    @property
    def m(self) -> int:
        return self.increments.shape[1]

    @property
    def t_end(self) -> float:
        return self.t0 + self.n_steps * self.dt_fine

    def times(self) -> np.ndarray:
        """Node times t0 + l*dt for l = 0..L."""
        return self.t0 + self.dt_fine * np.arange(self.n_steps + 1)

    def path(self) -> np.ndarray:
        """W at the grid nodes, shape (L+1, m); running left-fold of increments."""
        w = np.zeros((self.n_steps + 1, self.m))
        np.cumsum(self.increments, axis=0, out=w[1:])
        return w

    @classmethod
    def sample(cls, rng: RngStream, t0: float, dt_fine: float, n_steps: int, m: int) -> "WienerGrid":
        if dt_fine <= 0:
            raise ValueError("dt_fine must be > 0")
        inc = rng.normal(scale=math.sqrt(dt_fine), size=(n_steps, m))
        return cls(t0, dt_fine, inc)

    def increment(self, l: int) -> NoiseIncrement:
        return NoiseIncrement(self.dt_fine, self.increments[l].copy())


def sample_increment(rng: RngStream, dt: float, m: int) -> NoiseIncrement:
    """Draw m independent N(0, dt) Wiener increments over a step dt > 0."""
    if not (dt > 0 and np.isfinite(dt)):
        raise ValueError(f"dt must be finite and > 0, got {dt!r}")
    if m < 0:
        raise ValueError("m must be >= 0")
    return NoiseIncrement(dt, rng.normal(scale=math.sqrt(dt), size=m))


def _two_sum(a, b):
    """Error-free sum: returns (s, e) doubles with s + e == a + b exactly."""
    s = a + b
    bv = s - a
    av = s - bv
    e = (a - av) + (b - bv)
    return s, e


def bridge_split(inc: NoiseIncrement, rng: RngStream) -> tuple[NoiseIncrement, NoiseIncrement]:
    """Split a rejected increment into two conditionally consistent halves.

    Returns (dt/2, dw/2 - y) followed by (dt/2, dw/2 + y), with y drawn
    N(0, dt/2) independently per Wiener component.  The second half carries
    an error-free compensation term so that summing both halves (dw plus
    dw_lo, with ``math.fsum``) reproduces the parent increment bit-exactly;
    a bare float sum of two IEEE halves cannot represent the parent whenever
    |y| is large relative to |dw|.
    """
    if inc.dt <= 0:
        raise ValueError("cannot split an increment with dt <= 0")
    half = 0.5 * inc.dt
    y = rng.normal(scale=math.sqrt(half), size=inc.m)
    first = 0.5 * inc.dw - y
    # Exact remainder (dw + dw_lo) - first as an unevaluated two-double sum.
    r1, e1 = _two_sum(inc.dw, -first)
    s2, e2 = _two_sum(e1, inc.dw_lo)
    r, c = _two_sum(r1, s2)
    lo = c + e2
    return (
        NoiseIncrement(half, first),
        NoiseIncrement(half, r, lo),
    )


def coarsen(grid: WienerGrid, factor: int) -> WienerGrid:
    """Block-sum a grid's increments by an integer factor dividing its length.

    Coarse increment j is the in-order left-fold of fine increments
    j*factor .. (j+1)*factor - 1, so both grids realize the same Wiener path
    at the shared node times (bit-identical under the same summation order).
    """
    factor = int(factor)
    if factor < 1:
        raise ValueError("factor must be >= 1")
    L = grid.n_steps
    if L % factor != 0:
        raise ValueError(f"factor {factor} does not divide the number of steps {L}")
    if factor == 1:
        return grid
    blocks = grid.increments.reshape(L // factor, factor, grid.m)
    acc = blocks[:, 0, :].copy()
    for i in range(1, factor):
        acc += blocks[:, i, :]
    return WienerGrid(grid.t0, grid.dt_fine * factor, acc)
