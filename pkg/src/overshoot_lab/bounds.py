"""Lorden-type overshoot moment bounds, rate fitting and the two counterexamples.

Notation follows the code, not any single reference:

* ``A = E_theta[(X^+)^{k+1}] / mu_theta`` -- the C_k = 1 bound.
* ``B = C * k * Gamma(k) / r**k`` -- amplitude of the exponential correction.
* classical bound ``(k+2)/(k+1) * A``; corrected bound ``A/(k+1) + B exp(-r b)``;
  strengthened (false in general) bound ``A / k``.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import expfam
from .errors import InsufficientSignal, NonStandardFamily
from .expfam import BaseKind, TiltedFamily
from .ladder import DEFAULT_BUDGET, SimBudget, simulate_overshoots
from .rng import RngStream
from .stationary import Estimate, sample_moment

PASS, FAIL, INCONCLUSIVE = "pass", "fail", "inconclusive"
SIGMAS = 3.0


def verdict(mc: float, se: float, rhs: float, sigmas: float = SIGMAS) -> str:
    """Three-way comparison of an MC estimate against an upper bound."""
    if mc + sigmas * se <= rhs:
        return PASS
    if mc - sigmas * se > rhs:
        return FAIL
    return INCONCLUSIVE


def gamma_int(k: int) -> int:
    """``Gamma(k) = (k-1)!`` for positive integer ``k``."""
    if int(k) != k or k < 1:
        raise ValueError(f"k must be a positive integer, got {k}")
    return math.factorial(int(k) - 1)


def lorden_ratio(family: TiltedFamily, theta: float, k: int) -> float:
    """``A_{theta,k} = E[(X^+)^{k+1}] / mu_theta``."""
    mu = expfam.mean(family, theta)
    if not mu > 0:
        raise ValueError(f"mean must be positive, got mu={mu} at theta={theta}")
    return expfam.plus_moment(family, theta, k + 1) / mu


def classical_bound(family: TiltedFamily, theta: float, k: int,
                    canonical: bool = False) -> float:
    """``(k+2)/(k+1) * E[(X^+)^{k+1}] / mu_theta``.

    With ``canonical=True`` (only meaningful for ``k = 1``) the factor 3/2 is
    dropped, giving Lorden's original mean bound.
    """
    if not theta > 0 and family.kind is not BaseKind.POINT_MASS:
        raise ValueError("classical bound needs theta > 0")
    a = lorden_ratio(family, theta, k)
    if canonical:
        if k != 1:
            raise ValueError("the canonical variant exists only for k = 1")
        return a
    return (k + 2) / (k + 1) * a


def classical_bound_ladder(heights: np.ndarray, k: int) -> Estimate:
    """Classical bound applied to the ladder renewal process, ``(k+2)/(k+1) E[H^{k+1}]/E[H]``."""
    from .stationary import ratio_estimate

    h = np.asarray(heights, dtype=float)
    est = ratio_estimate(h ** (k + 1), h)
    f = (k + 2) / (k + 1)
    return Estimate(f * est.value, f * est.se)


@dataclass(frozen=True)
class BoundInputs:
    A: float
    C_const: float
    r: float
    k: int
    theta: float = math.nan

    def __post_init__(self):
        if not (self.A > 0 and self.C_const > 0 and self.r > 0):
            raise ValueError("A, C and r must be positive")
        if int(self.k) != self.k or self.k < 1:
            raise ValueError("k must be a positive integer")

    @property
    def B(self) -> float:
        return self.C_const * self.k * gamma_int(self.k) / self.r**self.k

    @classmethod
    def from_family(cls, family: TiltedFamily, theta: float, k: int,
                    C_const: float, r: float) -> "BoundInputs":
        return cls(lorden_ratio(family, theta, k), C_const, r, k, float(theta))

    @classmethod
    def from_amplitude(cls, A: float, amplitude: float, r: float, k: int,
                       theta: float = math.nan) -> "BoundInputs":
        """Inputs whose ``B`` equals a fitted moment-level ``amplitude``."""
        return cls(A, amplitude * r**k / (k * gamma_int(k)), r, k, theta)


def corrected_bound(inputs: BoundInputs, b: float) -> float:
    """``A/(k+1) + B exp(-r b)``."""
    if b < 0:
        raise ValueError("b must be nonnegative")
    return inputs.A / (inputs.k + 1) + inputs.B * math.exp(-inputs.r * b)


def threshold_b0(inputs: BoundInputs) -> float:
    """Level beyond which the corrected bound is at most ``A``.

    ``(1/r) * ln_+((k+1) B / (k A))``.
    """
    arg = (inputs.k + 1) * inputs.B / (inputs.k * inputs.A)
    if arg <= 1.0:
        return 0.0
    return math.log(arg) / inputs.r


# ---------------------------------------------------------------------------
# exponential rate fit
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RateFit:
    C_hat: float
    r_hat: float
    fit_quality: float
    used: Tuple[float, ...]
    excluded: Tuple[float, ...]


def linear_fit(x: Sequence[float], y: Sequence[float]) -> Tuple[float, float, float]:
    """Least-squares line ``y = intercept + slope x``; returns (slope, intercept, R^2)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (intercept + slope * x)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def fit_rate(series: Iterable[Sequence[float]], min_points: int = 4) -> RateFit:
    """Fit ``diff(b) ~ C exp(-r b)`` by least squares on ``ln diff``.

    ``series`` holds ``(b, diff)`` or ``(b, diff, se)`` entries.  Points with
    ``diff <= 3*se`` (or ``diff <= 0``) are below the noise floor and are
    excluded.
    """
    used, excluded = [], []
    for entry in series:
        b, diff = float(entry[0]), float(entry[1])
        se = float(entry[2]) if len(entry) > 2 else 0.0
        (used if diff > SIGMAS * se and diff > 0 else excluded).append((b, diff))
    if len(used) < min_points:
        raise InsufficientSignal(
            f"only {len(used)} of {len(used) + len(excluded)} points above the noise floor; "
            f"need {min_points}"
        )
    bs = [u[0] for u in used]
    slope, intercept, r2 = linear_fit(bs, [math.log(u[1]) for u in used])
    return RateFit(math.exp(intercept), -slope, r2, tuple(bs), tuple(e[0] for e in excluded))


# ---------------------------------------------------------------------------
# MC verification against the bounds
# ---------------------------------------------------------------------------


@dataclass
class BoundRow:
    """One ``(theta, b, k)`` cell of a bound report."""

    theta: float
    b: float
    k: int
    mc: float
    se: float
    n: int
    censored: int
    rhs_classical: float
    rhs_corrected: float
    rhs_ck1: float
    rhs_strengthened: float
    verdict_classical: str = ""
    verdict_corrected: str = ""
    verdict_ck1: str = ""
    verdict_strengthened: str = ""
    C: float = math.nan
    r: float = math.nan
    b0: float = math.nan

    def __post_init__(self):
        for name in ("classical", "corrected", "ck1", "strengthened"):
            rhs = getattr(self, f"rhs_{name}")
            v = verdict(self.mc, self.se, rhs) if math.isfinite(rhs) else ""
            setattr(self, f"verdict_{name}", v)

    @property
    def censored_fraction(self) -> float:
        total = self.n + self.censored
        return self.censored / total if total else 0.0

    def as_dict(self) -> Dict[str, object]:
        return asdict(self)


BOUND_COLUMNS = [
    "theta", "b", "k", "mc", "se", "n", "censored", "rhs_classical", "rhs_corrected",
    "rhs_ck1", "rhs_strengthened", "verdict_classical", "verdict_corrected",
    "verdict_ck1", "verdict_strengthened", "C", "r", "b0",
]


def bound_row(family: TiltedFamily, theta: float, b: float, k: int,
              overshoot: np.ndarray, censored: int = 0,
              C_const: Optional[float] = None, r: Optional[float] = None) -> BoundRow:
    """Evaluate every bound for one cell from its overshoot sample."""
    est = sample_moment(overshoot, k)
    A = lorden_ratio(family, theta, k)
    corrected, b0 = math.nan, math.nan
    if C_const is not None and r is not None:
        inputs = BoundInputs(A, C_const, r, k, theta)
        corrected = corrected_bound(inputs, b)
        b0 = threshold_b0(inputs)
    return BoundRow(
        theta=float(theta), b=float(b), k=int(k), mc=est.value, se=est.se,
        n=int(np.asarray(overshoot).size), censored=int(censored),
        rhs_classical=(k + 2) / (k + 1) * A, rhs_corrected=corrected, rhs_ck1=A,
        rhs_strengthened=A / k,
        C=math.nan if C_const is None else float(C_const),
        r=math.nan if r is None else float(r), b0=b0,
    )


def verify_bounds(family: TiltedFamily, theta: float, b_grid: Sequence[float],
                  k_list: Sequence[int], n: int, stream: RngStream,
                  budget: SimBudget = DEFAULT_BUDGET, C_const: Optional[float] = None,
                  r: Optional[float] = None, workers: Optional[int] = None) -> List[BoundRow]:
    """MC overshoot moments on a b-grid compared with every bound."""
    rows = []
    for b in b_grid:
        batch = simulate_overshoots(family, theta, b, n, stream.child("b", repr(float(b))),
                                    budget, workers)
        for k in k_list:
            rows.append(bound_row(family, theta, b, k, batch.overshoot, batch.censored,
                                  C_const, r))
    return rows


@dataclass
class SmallDriftReport:
    k: int
    rows: List[BoundRow]
    theta_k_proxy: Optional[float]

    @property
    def any_fail(self) -> bool:
        return any(r.verdict_ck1 == FAIL for r in self.rows)


def verify_small_drift_uniformity(family: TiltedFamily, k: int, theta_grid: Sequence[float],
                                  b_grid: Sequence[float], stream: RngStream, n: int = 100_000,
                                  budget: SimBudget = DEFAULT_BUDGET,
                                  workers: Optional[int] = None) -> SmallDriftReport:
    """Check ``E[R_b^k] <= A_{theta,k}`` over a small-drift grid.

    The reported ``theta_k_proxy`` is the largest grid ``theta`` at which every
    ``b`` passes; it is an empirical stand-in with no claimed relation to any
    theoretical threshold.
    """
    if family.base.non_standard:
        raise NonStandardFamily(f"{family.base.description} is not a standard family")
    thetas = [float(t) for t in theta_grid]
    if not thetas or any(t <= 0 for t in thetas) or thetas != sorted(thetas):
        raise ValueError("theta_grid must be strictly positive and ascending")
    rows = []
    proxy = None
    for th in thetas:
        cell = verify_bounds(family, th, b_grid, [k], n, stream.child("theta", repr(th)),
                             budget, workers=workers)
        rows.extend(cell)
        if all(r.verdict_ck1 == PASS for r in cell):
            proxy = th
    return SmallDriftReport(k, rows, proxy)


# ---------------------------------------------------------------------------
# counterexamples
# ---------------------------------------------------------------------------


@dataclass
class DeterministicCounterexample:
    c: float
    k: int
    lhs: Union[Fraction, float]
    rhs: Union[Fraction, float]
    fails: bool
    window: Tuple[float, float]
    midpoint: float
    midpoint_lhs: float
    midpoint_fails: bool
    elapsed_s: float = 0.0


def counterexample_deterministic(c: Union[int, float, Fraction], k: int) -> DeterministicCounterexample:
    """Increments identically ``c``: the strengthened bound fails at ``b = 0``.

    At ``b = 0``, ``tau = 1`` and ``R_0 = c``; the left side is ``c**k`` and the
    right side ``c**(k+1)/(k c) = c**k / k``.  Both are computed with exact
    rationals.  For ``b`` in ``(0, c (1 - k**(-1/k)))`` still ``tau = 1`` and
    ``(c - b)**k > c**k / k``; the window midpoint is checked too.
    """
    t0 = time.perf_counter()
    if int(k) != k or k < 2:
        raise ValueError("k must be an integer > 1")
    k = int(k)
    cq = Fraction(c)
    if cq <= 0:
        raise ValueError("c must be positive")
    lhs = cq**k
    rhs = cq ** (k + 1) / (k * cq)
    hi = float(cq) * (1.0 - k ** (-1.0 / k))
    mid = hi / 2.0
    mid_lhs = (float(cq) - mid) ** k
    return DeterministicCounterexample(
        c=float(cq), k=k, lhs=lhs, rhs=rhs, fails=lhs > rhs, window=(0.0, hi),
        midpoint=mid, midpoint_lhs=mid_lhs, midpoint_fails=mid_lhs > float(rhs),
        elapsed_s=time.perf_counter() - t0,
    )


def uniform_tilt_barrier(k: int, a: float = expfam.SQRT3) -> float:
    """``b = a (1 - k**(-1/k)) / 2``."""
    return a * (1.0 - k ** (-1.0 / k)) / 2.0


@dataclass
class UniformTiltRow:
    theta: float
    b: float
    k: int
    mc: float
    se: float
    n: int
    censored: int
    rhs_strengthened: float
    verdict: str

    @property
    def fails_as_predicted(self) -> bool:
        return self.verdict == FAIL


@dataclass
class UniformTiltCounterexample:
    k: int
    a: float
    b: float
    limit_lhs: float
    limit_rhs: float
    rows: List[UniformTiltRow] = field(default_factory=list)
    theta0_proxy: Optional[float] = None

    @property
    def limit_fails(self) -> bool:
        return self.limit_lhs > self.limit_rhs


def counterexample_uniform_tilt(k: int, theta_grid: Sequence[float], n: int,
                                stream: RngStream, budget: SimBudget = DEFAULT_BUDGET,
                                family: Optional[TiltedFamily] = None,
                                workers: Optional[int] = None) -> UniformTiltCounterexample:
    """Tilted ``Uniform[-sqrt 3, sqrt 3]``: the strengthened bound fails for large tilt.

    For each ``theta`` the MC estimate of ``E[R_b^k]`` is compared with
    ``E[(X^+)^{k+1}] / (k mu_theta)``.  ``theta0_proxy`` is the smallest grid
    tilt from which on every verdict is ``fail``.
    """
    if int(k) != k or k < 2:
        raise ValueError("k must be an integer > 1")
    family = family or TiltedFamily.uniform()
    if family.kind is not BaseKind.UNIFORM_SYMMETRIC or family.base.non_standard:
        raise ValueError("the uniform-tilt counterexample needs Uniform[-sqrt 3, sqrt 3]")
    thetas = [float(t) for t in theta_grid]
    if not thetas or any(t <= 0 for t in thetas) or thetas != sorted(thetas):
        raise ValueError("theta_grid must be strictly positive and ascending")
    a = family.base.param
    b = uniform_tilt_barrier(k, a)
    report = UniformTiltCounterexample(k=k, a=a, b=b, limit_lhs=(a - b) ** k,
                                       limit_rhs=a**k / k)
    for th in thetas:
        batch = simulate_overshoots(family, th, b, n, stream.child("theta", repr(th)),
                                    budget, workers)
        est = sample_moment(batch.overshoot, k)
        rhs = lorden_ratio(family, th, k) / k
        report.rows.append(UniformTiltRow(th, b, k, est.value, est.se, batch.n,
                                          batch.censored, rhs, verdict(est.value, est.se, rhs)))
    proxy = None
    for row in reversed(report.rows):
        if not row.fails_as_predicted:
            break
        proxy = row.theta
    report.theta0_proxy = proxy
    return report


# ---------------------------------------------------------------------------
# rate-fit series
# ---------------------------------------------------------------------------


@dataclass
class MomentGapPoint:
    b: float
    mc: float
    se: float
    limit: float
    limit_se: float

    @property
    def diff(self) -> float:
        return abs(self.mc - self.limit)

    @property
    def combined_se(self) -> float:
        return math.hypot(self.se, self.limit_se)


def moment_gap_series(family: TiltedFamily, theta: float, limits: Dict[int, Estimate],
                      b_grid: Sequence[float], n: int, stream: RngStream,
                      budget: SimBudget = DEFAULT_BUDGET,
                      workers: Optional[int] = None) -> Dict[int, List[MomentGapPoint]]:
    """``|E[R_b^k] - E[R_inf^k]|`` per level, for every ``k`` in ``limits``.

    All orders share the overshoot sample of a level.
    """
    out: Dict[int, List[MomentGapPoint]] = {k: [] for k in limits}
    for b in b_grid:
        batch = simulate_overshoots(family, theta, b, n, stream.child("b", repr(float(b))),
                                    budget, workers)
        for k, lim in limits.items():
            est = sample_moment(batch.overshoot, k)
            out[k].append(MomentGapPoint(float(b), est.value, est.se, lim.value, lim.se))
    return out


def fit_rate_from_gaps(points: Sequence[MomentGapPoint]) -> RateFit:
    return fit_rate([(p.b, p.diff, p.combined_se) for p in points])
