"""One-dimensional optimal-transport diagnostics on empirical laws.

Everything here is computed exactly on the piecewise-constant empirical
CDFs; there is no binning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import expfam
from .errors import EmptyLaw
from .expfam import TiltedFamily
from .ladder import DEFAULT_BUDGET, SimBudget, simulate_overshoots
from .rng import RngStream
from .stationary import LadderPopulation, build_population, limit_moment, sample_stationary


@dataclass(frozen=True)
class EmpiricalLaw:
    """Uniform-weight empirical law of a finite sample, kept sorted."""

    sorted_values: np.ndarray

    def __post_init__(self):
        v = np.sort(np.asarray(self.sorted_values, dtype=float).ravel())
        if v.size == 0:
            raise EmptyLaw("an empirical law needs at least one value")
        v.setflags(write=False)
        object.__setattr__(self, "sorted_values", v)

    @classmethod
    def of(cls, values) -> "EmpiricalLaw":
        return cls(values)

    @property
    def n(self) -> int:
        return int(self.sorted_values.size)

    def cdf(self, t) -> np.ndarray:
        return np.searchsorted(self.sorted_values, t, side="right") / self.n

    def quantile(self, u) -> np.ndarray:
        """Generalised inverse ``inf{t : F(t) >= u}``."""
        u = np.asarray(u, dtype=float)
        idx = np.ceil(u * self.n).astype(np.int64) - 1
        return self.sorted_values[np.clip(idx, 0, self.n - 1)]

    def moment(self, k: int) -> float:
        return float(np.mean(self.sorted_values**k))

    def moment_from_tail(self, k: int) -> float:
        """``k * int_0^inf y^{k-1} (1 - F(y)) dy``, integrated exactly between atoms.

        Requires nonnegative values.
        """
        v = self.sorted_values
        if v[0] < 0:
            raise ValueError("tail-integral moments need a nonnegative law")
        pts = np.concatenate(([0.0], v))
        surv = 1.0 - np.arange(v.size) / v.size  # 1 - F on [pts[i], pts[i+1])
        return float(np.sum(surv * (pts[1:] ** k - pts[:-1] ** k)))


def _as_law(x) -> EmpiricalLaw:
    return x if isinstance(x, EmpiricalLaw) else EmpiricalLaw(x)


def w1_empirical(x, y) -> float:
    """``int |F_x(t) - F_y(t)| dt`` by an exact sweep over all atoms."""
    x, y = _as_law(x), _as_law(y)
    if x.n == y.n:
        return float(np.mean(np.abs(x.sorted_values - y.sorted_values)))
    pts = np.union1d(x.sorted_values, y.sorted_values)
    gaps = np.diff(pts)
    diff = np.abs(x.cdf(pts[:-1]) - y.cdf(pts[:-1]))
    return float(np.sum(diff * gaps))


def w1_sweep(x, y) -> float:
    """The CDF sweep of :func:`w1_empirical` without the equal-size shortcut."""
    x, y = _as_law(x), _as_law(y)
    pts = np.union1d(x.sorted_values, y.sorted_values)
    return float(np.sum(np.abs(x.cdf(pts[:-1]) - y.cdf(pts[:-1])) * np.diff(pts)))


@dataclass
class Coupling:
    pairs: np.ndarray  # shape (m, 2)
    mean_abs: float
    exact: float


def quantile_coupling(x, y, u_draws: Sequence[float]) -> Coupling:
    """Pair ``(F_x^{-1}(u), F_y^{-1}(u))`` for each uniform ``u``.

    ``exact`` is ``int_0^1 |F_x^{-1} - F_y^{-1}| du`` computed over the merged
    breakpoints ``{i/n_x} U {j/n_y}`` of the two quantile step functions.
    """
    x, y = _as_law(x), _as_law(y)
    u = np.asarray(u_draws, dtype=float)
    pairs = np.column_stack([x.quantile(u), y.quantile(u)])
    mean_abs = float(np.mean(np.abs(pairs[:, 0] - pairs[:, 1]))) if u.size else math.nan
    if x.n == y.n:
        exact = float(np.mean(np.abs(x.sorted_values - y.sorted_values)))
    else:
        # merge i/n_x and j/n_y exactly on the integer grid of n_x * n_y
        grid = np.union1d(np.arange(1, x.n + 1) * y.n, np.arange(1, y.n + 1) * x.n)
        total = x.n * y.n
        lo = np.concatenate(([0], grid[:-1]))
        # on (lo, g] the quantile indices are ceil(g/n_y) - 1 and ceil(g/n_x) - 1
        xi = -(-grid // y.n) - 1
        yi = -(-grid // x.n) - 1
        widths = (grid - lo) / total
        exact = float(np.sum(widths * np.abs(x.sorted_values[xi] - y.sorted_values[yi])))
    return Coupling(pairs, mean_abs, exact)


def smoothed_tv(x, y, grid_step: float = 1e-3) -> float:
    """Total variation between ``X + U`` and ``Y + U`` with ``U ~ Uniform(0, 1)``.

    The smoothed density of an empirical law is ``F(t) - F(t - 1)``, a step
    function with breaks at the atoms and at the atoms shifted by one.  The
    half-L1 distance is summed exactly over those breaks, so ``grid_step``
    (kept for callers that pass a reporting resolution) does not affect it.
    """
    if not grid_step > 0:
        raise ValueError("grid_step must be positive")
    x, y = _as_law(x), _as_law(y)
    xs, ys = x.sorted_values, y.sorted_values
    xs1, ys1 = xs + 1.0, ys + 1.0
    pts = np.unique(np.concatenate([xs, xs1, ys, ys1]))
    left = pts[:-1]
    # atoms a with a <= t < fl(a + 1), counted against the same rounded
    # breakpoints so no atom's support is stretched or clipped
    fx = (np.searchsorted(xs, left, side="right") - np.searchsorted(xs1, left, side="right")) / x.n
    fy = (np.searchsorted(ys, left, side="right") - np.searchsorted(ys1, left, side="right")) / y.n
    return float(0.5 * np.sum(np.abs(fx - fy) * np.diff(pts)))


def lipschitz_error(L: float, C_const: float, r: float, b: float) -> float:
    """Envelope ``L * (C/r) * exp(-r b)`` for ``|E g(R_b) - E g(R_inf)|``."""
    if L < 0:
        raise ValueError("Lipschitz constant must be nonnegative")
    if not (C_const > 0 and r > 0):
        raise ValueError("C and r must be positive")
    return L * (C_const / r) * math.exp(-r * b)


def hinge(a: float) -> Tuple[Callable[[np.ndarray], np.ndarray], float]:
    """``y -> (y - a)^+`` with Lipschitz constant 1."""
    return (lambda y: np.maximum(np.asarray(y) - a, 0.0)), 1.0


def exp_decay(lam: float) -> Tuple[Callable[[np.ndarray], np.ndarray], float]:
    """``y -> exp(-lam y)`` with Lipschitz constant ``lam`` on ``y >= 0``."""
    return (lambda y: np.exp(-lam * np.asarray(y))), float(lam)


def realised_functional_error(g: Callable[[np.ndarray], np.ndarray], x, y) -> float:
    """``|mean g(x) - mean g(y)|`` on two samples."""
    x, y = _as_law(x), _as_law(y)
    return float(abs(np.mean(g(x.sorted_values)) - np.mean(g(y.sorted_values))))


# ---------------------------------------------------------------------------
# reports over a b-grid
# ---------------------------------------------------------------------------


@dataclass
class TransportRow:
    theta: float
    b: float
    n: int
    censored: int
    w1: float
    coupling_mean_abs: float
    coupling_exact: float
    smoothed_tv: float
    w1_bound_theoretical: float
    hinge_error: float
    exp_error: float
    C: float
    r: float


TRANSPORT_COLUMNS = [
    "theta", "b", "n", "censored", "w1", "coupling_mean_abs", "coupling_exact",
    "smoothed_tv", "w1_bound_theoretical", "hinge_error", "exp_error", "C", "r",
]


@dataclass
class TransportReport:
    rows: List[TransportRow]
    fitted_r: float
    fitted_C: float
    fit_r2: float
    slope: float


def transport_report(family: TiltedFamily, theta: float, b_grid: Sequence[float], n: int,
                     stream: RngStream, budget: SimBudget = DEFAULT_BUDGET,
                     pop: Optional[LadderPopulation] = None,
                     C_const: Optional[float] = None, r: Optional[float] = None,
                     workers: Optional[int] = None) -> TransportReport:
    """W1, coupling and smoothed TV between ``R_b`` and ``R_inf`` samples.

    ``R_inf`` draws (same size ``n``) come from size-biased ladder sampling.
    A least-squares line through ``(b, ln W1)`` gives the empirical decay rate;
    when ``C_const``/``r`` are not supplied, that fit also sets the envelope.
    """
    from .bounds import linear_fit

    if pop is None:
        pop = build_population(family, theta, n, stream.child("ladder"), budget, workers)
    r_inf = EmpiricalLaw(sample_stationary(pop, stream.child("stationary", 0), size=n))
    u = stream.child("coupling", 0).generator().random(n)
    g_hinge, _ = hinge(1.0)
    g_exp, _ = exp_decay(1.0)
    laws, cens = [], []
    for b in b_grid:
        batch = simulate_overshoots(family, theta, b, n, stream.child("b", repr(float(b))),
                                    budget, workers)
        laws.append(EmpiricalLaw(batch.overshoot))
        cens.append(batch.censored)
    w1s = [w1_empirical(law, r_inf) for law in laws]
    if len(w1s) >= 2 and all(w > 0 for w in w1s):
        slope, intercept, r2 = linear_fit(list(b_grid), [math.log(w) for w in w1s])
    else:
        slope, intercept, r2 = math.nan, math.nan, math.nan
    fitted_r, fitted_C = -slope, math.exp(intercept)
    env_C, env_r = C_const, r
    if env_C is None or env_r is None:
        env_r = fitted_r
        env_C = fitted_C * fitted_r  # W1 envelope is (C/r) exp(-r b)
    if not (env_r > 0 and env_C > 0):
        # no decaying fit: no envelope is used
        env_C, env_r = math.nan, math.nan
    rows = []
    for b, law, c, w in zip(b_grid, laws, cens, w1s):
        cp = quantile_coupling(law, r_inf, u)
        env = env_C / env_r * math.exp(-env_r * b) if math.isfinite(env_r) else math.nan
        rows.append(TransportRow(
            theta=float(theta), b=float(b), n=law.n, censored=int(c), w1=w,
            coupling_mean_abs=cp.mean_abs, coupling_exact=cp.exact,
            smoothed_tv=smoothed_tv(law, r_inf), w1_bound_theoretical=env,
            hinge_error=realised_functional_error(g_hinge, law, r_inf),
            exp_error=realised_functional_error(g_exp, law, r_inf),
            C=float(env_C), r=float(env_r),
        ))
    return TransportReport(rows, fitted_r, fitted_C, r2, slope)


# ---------------------------------------------------------------------------
# Wald identity for the mean first-passage time
# ---------------------------------------------------------------------------


@dataclass
class WaldCheck:
    theta: float
    b: float
    n: int
    censored: int
    mu: float
    tau_mean: float
    tau_se: float
    overshoot_mean: float
    overshoot_se: float
    residual: float
    residual_se: float
    kappa: float
    continuity_error: float
    envelope: float

    @property
    def within_3se(self) -> bool:
        return abs(self.residual) <= 3.0 * self.residual_se


def tau_wald_check(family: TiltedFamily, theta: float, b: float, n: int, stream: RngStream,
                   budget: SimBudget = DEFAULT_BUDGET, pop: Optional[LadderPopulation] = None,
                   C_const: Optional[float] = None, r: Optional[float] = None,
                   workers: Optional[int] = None) -> WaldCheck:
    """``E[tau(b)] = (b + E[R_b]) / mu`` on a common sample, plus the continuity correction.

    The residual's standard error comes from the per-replicate quantity
    ``tau - (b + R_b)/mu``, which accounts for the positive correlation
    between ``tau`` and ``R_b``.  ``continuity_error`` is
    ``|mean tau - (b + kappa)/mu|`` with ``kappa = E[R_inf]`` from a ladder
    population; ``envelope`` is ``C/(r mu) exp(-r b)`` when constants are given.
    """
    mu = expfam.mean(family, theta)
    batch = simulate_overshoots(family, theta, b, n, stream.child("walk"), budget, workers)
    tau = batch.tau.astype(float)
    over = batch.overshoot
    m = tau.size
    d = tau - (b + over) / mu

    def se(v):
        return float(v.std(ddof=1) / math.sqrt(m)) if m > 1 else 0.0

    if pop is None:
        pop = build_population(family, theta, n, stream.child("ladder"), budget, workers)
    kappa = limit_moment(pop, 1).value
    envelope = math.nan
    if C_const is not None and r is not None:
        envelope = C_const / (r * mu) * math.exp(-r * b)
    return WaldCheck(
        theta=float(theta), b=float(b), n=m, censored=batch.censored, mu=mu,
        tau_mean=float(tau.mean()), tau_se=se(tau),
        overshoot_mean=float(over.mean()), overshoot_se=se(over),
        residual=float(d.mean()), residual_se=se(d), kappa=kappa,
        continuity_error=float(abs(tau.mean() - (b + kappa) / mu)), envelope=envelope,
    )
