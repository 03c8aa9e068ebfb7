"""Random-walk level crossings, overshoots and strict ascending ladder steps.

Every replicate owns one :class:`~overshoot_lab.rng.RngStream`.  Increments
are drawn in chunks whose sizes depend only on ``(family, theta, b)``, and
partial sums are accumulated strictly left to right, so a replicate's sample
does not depend on how replicates are grouped or which worker runs them.
"""

from __future__ import annotations

import enum
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import expfam
from .errors import BudgetExceeded, NonStandardFamily
from .expfam import BaseKind, TiltedFamily
from .rng import RngStream


class BudgetPolicy(enum.Enum):
    ERROR = "error"
    CENSOR = "censor"


@dataclass(frozen=True)
class SimBudget:
    max_steps: int = 10_000_000
    policy: BudgetPolicy = BudgetPolicy.ERROR

    def __post_init__(self):
        if self.max_steps < 1000:
            raise ValueError(f"max_steps must be >= 1000, got {self.max_steps}")
        if not isinstance(self.policy, BudgetPolicy):
            object.__setattr__(self, "policy", BudgetPolicy(self.policy))


DEFAULT_BUDGET = SimBudget()


@dataclass
class OvershootSample:
    """One first crossing of level ``b``.

    ``s_before`` is ``S_{tau-1}`` and ``last_increment`` is ``X_tau``.  A
    censored record has ``tau == 0`` and NaN in the real-valued fields.
    """

    tau: int
    s_tau: float
    overshoot: float
    b: float
    s_before: float = 0.0
    last_increment: float = 0.0
    censored: bool = False
    path: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass
class LadderSample:
    t_plus: int
    height: float
    censored: bool = False


def _check_drift(family: TiltedFamily, theta: float) -> None:
    if family.kind is BaseKind.POINT_MASS:
        return
    if not theta > 0:
        raise ValueError(f"positive drift required: theta must be > 0, got {theta}")


def _first_chunk(family: TiltedFamily, theta: float, b: float) -> int:
    mu = expfam.mean(family, theta)
    guess = (b + 1.0) / mu if mu > 0 else 64.0
    return int(min(max(1.5 * guess + 16.0, 16.0), 8192.0))


def simulate_overshoot(family: TiltedFamily, theta: float, b: float, stream,
                       budget: SimBudget = DEFAULT_BUDGET,
                       record_path: bool = False) -> OvershootSample:
    """Walk ``S_n`` until it first exceeds ``b``.

    Parameters
    ----------
    stream : RngStream or numpy Generator
        Source of increments; one per replicate.
    record_path : bool
        Keep the partial sums ``S_1..S_tau`` on the returned sample.

    Raises
    ------
    BudgetExceeded
        No crossing within ``budget.max_steps`` and the policy is ``ERROR``.
    """
    theta = family.check_theta(theta)
    _check_drift(family, theta)
    b = float(b)
    if b < 0:
        raise ValueError(f"level b must be nonnegative, got {b}")
    gen = stream if isinstance(stream, np.random.Generator) else stream.generator()
    return _walk(family, theta, b, gen, budget, 0.0, 0, _first_chunk(family, theta, b),
                 [] if record_path else None)


def _walk(family, theta, b, gen, budget, s, n, chunk, pieces):
    # resumes a walk at S_n = s; ``pieces`` collects partial sums when not None
    while n < budget.max_steps:
        size = min(chunk, budget.max_steps - n)
        x = expfam.sample_array(family, theta, gen, size)
        # sequential cumsum seeded with the running sum: identical rounding
        # to step-by-step accumulation whatever the chunk boundaries
        cs = np.cumsum(np.concatenate(([s], x)))[1:]
        hit = np.flatnonzero(cs > b)
        if hit.size:
            j = int(hit[0])
            if pieces is not None:
                pieces.append(cs[: j + 1])
            return _finish(family, b, n + j + 1, float(cs[j]),
                           float(cs[j - 1]) if j > 0 else s, float(x[j]),
                           np.concatenate(pieces) if pieces is not None else None)
        if pieces is not None:
            pieces.append(cs)
        s = float(cs[-1])
        n += size
        chunk = min(2 * chunk, 1 << 20)

    if budget.policy is BudgetPolicy.ERROR:
        raise BudgetExceeded(
            f"no crossing of b={b} within {budget.max_steps} steps at theta={theta}; "
            "drift too small for this budget"
        )
    return OvershootSample(tau=0, s_tau=math.nan, overshoot=math.nan, b=b,
                           s_before=s, last_increment=math.nan, censored=True)


def _finish(family, b, tau, s_tau, s_before, last, path):
    sample = OvershootSample(tau=tau, s_tau=s_tau, overshoot=s_tau - b, b=b,
                             s_before=s_before, last_increment=last, path=path)
    _assert_crossing(family, sample)
    return sample


def _assert_crossing(family: TiltedFamily, smp: OvershootSample) -> None:
    # S_{tau-1} <= b < S_tau, and the overshoot never exceeds the crossing jump
    if not (smp.s_before <= smp.b < smp.s_tau):
        raise AssertionError(f"crossing invariant violated: {smp}")
    slack = 8.0 * np.finfo(float).eps * (abs(smp.b) + abs(smp.last_increment) + 1.0)
    if smp.overshoot > max(smp.last_increment, 0.0) + slack:
        raise AssertionError(f"overshoot exceeds crossing increment: {smp}")
    if family.base.bounded and smp.overshoot > family.base.support_max + slack:
        raise AssertionError(f"overshoot exceeds bounded support: {smp}")


def simulate_ladder(family: TiltedFamily, theta: float, stream,
                    budget: SimBudget = DEFAULT_BUDGET) -> LadderSample:
    """First strict ascending ladder epoch ``T_+`` and height ``S_{T_+}``.

    ``T_+`` is the first passage time above level 0, so this is the
    overshoot walk with ``b = 0``.
    """
    smp = simulate_overshoot(family, theta, 0.0, stream, budget)
    if smp.censored:
        return LadderSample(t_plus=0, height=math.nan, censored=True)
    return LadderSample(t_plus=smp.tau, height=smp.s_tau)


def ladder_epochs(path: Sequence[float]) -> np.ndarray:
    """1-based indices of the strict ascending ladder epochs along ``path``.

    ``path`` holds ``S_1, S_2, ...``; ``S_0 = 0`` is implicit.
    """
    path = np.asarray(path, dtype=float)
    prev_max = np.maximum.accumulate(np.concatenate(([0.0], path)))[:-1]
    return np.flatnonzero(path > prev_max) + 1


def verify_ladder_decomposition(family: TiltedFamily, theta: float, b: float, stream,
                                budget: SimBudget = DEFAULT_BUDGET) -> bool:
    """Check on one path that ``tau(b)`` is the ``v(b)``-th ladder epoch.

    ``v(b)`` is the index of the first ladder height above ``b``.
    """
    if not b > 0:
        raise ValueError("b must be positive")
    smp = simulate_overshoot(family, theta, b, stream, budget, record_path=True)
    if smp.censored:
        raise BudgetExceeded("censored path cannot be decomposed")
    epochs = ladder_epochs(smp.path)
    heights = smp.path[epochs - 1]
    above = np.flatnonzero(heights > b)
    if above.size == 0:
        return False
    v = int(above[0]) + 1
    return int(epochs[v - 1]) == smp.tau


# ---------------------------------------------------------------------------
# replicate batches
# ---------------------------------------------------------------------------


@dataclass
class OvershootBatch:
    """Uncensored crossings of one cell, in replicate order."""

    theta: float
    b: float
    tau: np.ndarray
    s_tau: np.ndarray
    overshoot: np.ndarray
    n_requested: int
    censored: int = 0

    @property
    def n(self) -> int:
        return int(self.overshoot.size)

    @property
    def censored_fraction(self) -> float:
        return self.censored / self.n_requested if self.n_requested else 0.0


def resolve_workers(workers: Optional[int] = None) -> int:
    if workers is None:
        workers = int(os.environ.get("OVERSHOOT_LAB_WORKERS", "1") or 1)
    return max(1, int(workers))


def _run_block(args):
    family, theta, b, stream, start, stop, budget = args
    m = stop - start
    tau = np.zeros(m, dtype=np.int64)
    s_tau = np.full(m, math.nan)
    chunk = min(_first_chunk(family, theta, b), budget.max_steps)
    gens = [stream.child(i).generator() for i in range(start, stop)]
    # first chunk of every replicate at once; stragglers continue one by one
    x = np.stack([expfam.sample_array(family, theta, g, chunk) for g in gens])
    cs = np.cumsum(x, axis=1)
    above = cs > b
    crossed = above.any(axis=1)
    j = np.argmax(above, axis=1)
    rows = np.flatnonzero(crossed)
    jr = j[rows]
    tau[rows] = jr + 1
    s_tau[rows] = cs[rows, jr]
    s_before = np.where(jr > 0, cs[rows, np.maximum(jr - 1, 0)], 0.0)
    _assert_block(family, b, s_tau[rows], s_before, x[rows, jr])
    for r in np.flatnonzero(~crossed):
        smp = _walk(family, theta, b, gens[r], budget, float(cs[r, -1]), chunk,
                    min(2 * chunk, 1 << 20), None)
        if not smp.censored:
            tau[r] = smp.tau
            s_tau[r] = smp.s_tau
    return tau, s_tau


def _assert_block(family, b, s_tau, s_before, last):
    if not (np.all(s_before <= b) and np.all(s_tau > b)):
        raise AssertionError("crossing invariant violated in block")
    over = s_tau - b
    slack = 8.0 * np.finfo(float).eps * (abs(b) + np.abs(last) + 1.0)
    if np.any(over > np.maximum(last, 0.0) + slack):
        raise AssertionError("overshoot exceeds crossing increment in block")
    if family.base.bounded and np.any(over > family.base.support_max + slack):
        raise AssertionError("overshoot exceeds bounded support in block")


def simulate_overshoots(family: TiltedFamily, theta: float, b: float, n: int,
                        stream: RngStream, budget: SimBudget = DEFAULT_BUDGET,
                        workers: Optional[int] = None,
                        block_size: int = 4096) -> OvershootBatch:
    """``n`` independent crossings; replicate ``i`` uses ``stream.child(i)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    workers = resolve_workers(workers)
    blocks = [
        (family, theta, b, stream, lo, min(lo + block_size, n), budget)
        for lo in range(0, n, block_size)
    ]
    if workers == 1 or len(blocks) == 1:
        parts = [_run_block(blk) for blk in blocks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_block, blocks))
    tau = np.concatenate([p[0] for p in parts])
    s_tau = np.concatenate([p[1] for p in parts])
    ok = tau > 0
    return OvershootBatch(
        theta=float(theta),
        b=float(b),
        tau=tau[ok],
        s_tau=s_tau[ok],
        overshoot=s_tau[ok] - float(b),
        n_requested=int(n),
        censored=int((~ok).sum()),
    )


def require_standard(family: TiltedFamily) -> None:
    if family.base.non_standard:
        raise NonStandardFamily(f"{family.base.description} is not a standard family")
