"""Limiting overshoot built from strict ascending ladder heights.

The stationary overshoot ``R_inf`` has density ``P(H > y) / E[H]`` where
``H = S_{T_+}``; equivalently ``R_inf = U * H*`` with ``H*`` drawn size-biased
from the ladder-height law and ``U`` uniform on (0, 1).  Its k-th moment is
``E[H^{k+1}] / ((k+1) E[H])``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import InsufficientSamples, TruncationNotConverged
from .expfam import TiltedFamily
from .ladder import DEFAULT_BUDGET, SimBudget, simulate_overshoots
from .rng import RngStream

MIN_POPULATION = 100


@dataclass(frozen=True)
class Estimate:
    """A Monte Carlo point estimate with its standard error."""

    value: float
    se: float

    def __iter__(self):
        return iter((self.value, self.se))


def sample_moment(x: np.ndarray, k: int) -> Estimate:
    """Sample mean of ``x**k`` and its standard error."""
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        raise InsufficientSamples("need at least two samples for a standard error")
    xk = x**k
    return Estimate(float(xk.mean()), float(xk.std(ddof=1) / math.sqrt(x.size)))


def ratio_estimate(num: np.ndarray, den: np.ndarray) -> Estimate:
    """``mean(num)/mean(den)`` with a delta-method standard error."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    n = num.size
    mx, my = den.mean(), num.mean()
    r = my / mx
    cov = np.cov(np.vstack([num, den]), ddof=1)
    var = (cov[0, 0] - 2.0 * r * cov[0, 1] + r * r * cov[1, 1]) / (mx * mx * n)
    return Estimate(float(r), float(math.sqrt(max(var, 0.0))))


@dataclass(frozen=True)
class LadderPopulation:
    """Immutable sample of first ladder heights ``S_{T_+}`` and epochs ``T_+``."""

    heights: np.ndarray
    t_plus_values: np.ndarray
    theta: float
    censored: int = 0

    def __post_init__(self):
        h = np.array(self.heights, dtype=float)
        t = np.array(self.t_plus_values, dtype=np.int64)
        if h.size < 1:
            raise InsufficientSamples("a ladder population needs at least one height")
        if h.shape != t.shape:
            raise ValueError("heights and t_plus_values must have equal length")
        if not np.all(h > 0):
            raise ValueError("ladder heights must be strictly positive")
        h.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "heights", h)
        object.__setattr__(self, "t_plus_values", t)
        object.__setattr__(self, "_sorted", np.sort(h))

    @property
    def n(self) -> int:
        return int(self.heights.size)

    def tail(self, s) -> np.ndarray:
        """Empirical ``P(H > s)``."""
        srt = self._sorted
        return 1.0 - np.searchsorted(srt, s, side="right") / srt.size

    def save(self, path: Union[str, Path]) -> None:
        header = f"theta={self.theta!r} censored={self.censored}\nheight t_plus"
        data = np.column_stack([self.heights, self.t_plus_values.astype(float)])
        np.savetxt(path, data, fmt=["%.17g", "%d"], header=header)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "LadderPopulation":
        theta, censored = math.nan, 0
        with open(path) as fh:
            first = fh.readline()
        for tok in first.lstrip("# ").split():
            key, _, val = tok.partition("=")
            if key == "theta":
                theta = float(val)
            elif key == "censored":
                censored = int(val)
        data = np.loadtxt(path, ndmin=2)
        return cls(data[:, 0], data[:, 1].astype(np.int64), theta, censored)


def build_population(family: TiltedFamily, theta: float, n: int, stream: RngStream,
                     budget: SimBudget = DEFAULT_BUDGET,
                     workers: Optional[int] = None) -> LadderPopulation:
    """Simulate ``n`` independent first ladder steps."""
    batch = simulate_overshoots(family, theta, 0.0, n, stream, budget, workers)
    return LadderPopulation(batch.s_tau, batch.tau, float(theta), batch.censored)


def _require(pop: LadderPopulation, n_min: int = MIN_POPULATION) -> None:
    if pop.n < n_min:
        raise InsufficientSamples(f"population has {pop.n} heights, need >= {n_min}")


def limit_moment(pop: LadderPopulation, k: int) -> Estimate:
    """``E[R_inf^k] = E[H^{k+1}] / ((k+1) E[H])`` as a ratio estimator."""
    _require(pop)
    h = pop.heights
    if np.all(h == h[0]):
        return Estimate(float(h[0] ** k / (k + 1)), 0.0)
    return ratio_estimate(h ** (k + 1) / (k + 1), h)


def ladder_ratio(pop: LadderPopulation, k: int) -> Estimate:
    """``E[H^{k+1}] / E[H]``, the ladder-renewal Lorden ratio."""
    est = limit_moment(pop, k)
    return Estimate(est.value * (k + 1), est.se * (k + 1))


def sample_stationary(pop: LadderPopulation, stream, size: Optional[int] = None):
    """Draw from the stationary overshoot law.

    A ladder height is picked with probability proportional to its value and
    multiplied by an independent uniform(0, 1).
    """
    _require(pop)
    gen = stream if isinstance(stream, np.random.Generator) else stream.generator()
    m = 1 if size is None else int(size)
    h = pop.heights
    cdf = np.cumsum(h)
    idx = np.searchsorted(cdf, gen.random(m) * cdf[-1], side="right")
    draws = gen.random(m) * h[np.minimum(idx, h.size - 1)]
    return float(draws[0]) if size is None else draws


# ---------------------------------------------------------------------------
# renewal function and the renewal equation for the overshoot tail
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RenewalEstimate:
    value: float
    se: float
    last_term: float
    n_max: int


def renewal_estimate(pop: LadderPopulation, x: float, n_max: int, stream,
                     n_paths: int = 20_000, rel_tol: float = 1e-3) -> RenewalEstimate:
    """Bootstrap estimate of ``U+(x) = sum_{n=0}^{n_max} P(H_n <= x)``.

    Partial sums of heights resampled from ``pop`` play the role of the
    ladder-height renewal process.  ``last_term`` is the estimated
    ``P(H_{n_max} <= x)``; by positivity of the heights later terms are no
    larger, and the estimate is rejected when it exceeds ``rel_tol`` times
    the running sum.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    if x < 0:
        return RenewalEstimate(0.0, 0.0, 0.0, n_max)
    gen = stream if isinstance(stream, np.random.Generator) else stream.generator()
    draws = pop.heights[gen.integers(0, pop.n, size=(n_paths, n_max))]
    partial = np.cumsum(draws, axis=1)
    counts = 1 + (partial <= x).sum(axis=1)
    value = float(counts.mean())
    last = float((partial[:, -1] <= x).mean())
    if last > rel_tol * value:
        raise TruncationNotConverged(
            f"P(H_{n_max} <= {x}) ~ {last:.3g} exceeds rel_tol * U(x); raise n_max"
        )
    se = float(counts.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
    return RenewalEstimate(value, se, last, n_max)


def renewal_function(pop: LadderPopulation, x: float, n_max: int, stream,
                     n_paths: int = 20_000, rel_tol: float = 1e-3) -> float:
    return renewal_estimate(pop, x, n_max, stream, n_paths, rel_tol).value


def renewal_tail_integral(pop: LadderPopulation, b: float, y: float, stream,
                          n_paths: int = 20_000) -> Estimate:
    """``int_[0,b] P(H > b + y - t) U+(dt)`` against the bootstrap renewal measure.

    The renewal measure of each bootstrap path is a sum of unit atoms at its
    partial sums ``H_0 = 0, H_1, ...``, so the integral is evaluated exactly at
    the atoms (no grid).  Paths are extended until every one has passed ``b``.
    """
    gen = stream if isinstance(stream, np.random.Generator) else stream.generator()
    h = pop.heights
    total = pop.tail(b + y) * np.ones(n_paths)  # n = 0 atom at t = 0
    level = np.zeros(n_paths)
    alive = np.ones(n_paths, dtype=bool)
    while alive.any():
        idx = np.flatnonzero(alive)
        level[idx] += h[gen.integers(0, pop.n, size=idx.size)]
        inside = level[idx] <= b
        hit = idx[inside]
        total[hit] += pop.tail(b + y - level[hit])
        alive[idx[~inside]] = False
    se = float(total.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
    return Estimate(float(total.mean()), se)


@dataclass(frozen=True)
class RenewalCheck:
    """Both sides of the renewal equation for ``P(R_b > y)``."""

    b: float
    y: float
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    n_overshoot: int
    n_ladder: int
    censored: int

    @property
    def difference(self) -> float:
        return self.lhs - self.rhs

    @property
    def combined_se(self) -> float:
        return math.hypot(self.lhs_se, self.rhs_se)

    @property
    def within_3se(self) -> bool:
        return abs(self.difference) <= 3.0 * self.combined_se


def check_renewal_equation(family: TiltedFamily, theta: float, b: float, y: float,
                           stream: RngStream, budget: SimBudget = DEFAULT_BUDGET,
                           n: int = 100_000, n_batches: int = 20,
                           paths_per_batch: int = 10_000,
                           workers: Optional[int] = None) -> RenewalCheck:
    """Compare direct MC of ``P(R_b > y)`` with the renewal-equation integral.

    The right-hand side is computed on ``n_batches`` disjoint slices of an
    independent ladder population, each with its own bootstrap renewal
    paths; the batch spread gives a standard error covering both the
    ladder-tail and the renewal-measure noise.
    """
    if not (b > 0 and y > 0):
        raise ValueError("b and y must be positive")
    batch = simulate_overshoots(family, theta, b, n, stream.child("overshoot"), budget, workers)
    exceed = (batch.overshoot > y).astype(float)
    lhs = float(exceed.mean())
    lhs_se = float(exceed.std(ddof=1) / math.sqrt(exceed.size)) if exceed.size > 1 else 0.0

    pop = build_population(family, theta, n, stream.child("ladder"), budget, workers)
    slices = np.array_split(np.arange(pop.n), n_batches)
    values = []
    for j, sl in enumerate(slices):
        sub = LadderPopulation(pop.heights[sl], pop.t_plus_values[sl], pop.theta)
        est = renewal_tail_integral(sub, b, y, stream.child("renewal", j), paths_per_batch)
        values.append(est.value)
    values = np.array(values)
    rhs = float(values.mean())
    rhs_se = float(values.std(ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0
    return RenewalCheck(b=float(b), y=float(y), lhs=lhs, lhs_se=lhs_se, rhs=rhs,
                        rhs_se=rhs_se, n_overshoot=batch.n, n_ladder=pop.n,
                        censored=batch.censored + pop.censored)
