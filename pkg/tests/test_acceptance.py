"""Acceptance criteria, each at its stated tolerance.

Every test carries a ``criterion`` marker; ``conftest.py`` prints one
PASS/FAIL line per criterion at the end of the run.  All Monte Carlo draws
come from streams under the fixed acceptance seed, which is the seed in
``configs/acceptance.cfg``.
"""

import math
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from overshoot_lab import expfam
from overshoot_lab.bounds import (
    FAIL, BoundInputs, classical_bound_ladder, corrected_bound, counterexample_deterministic,
    counterexample_uniform_tilt, fit_rate_from_gaps, lorden_ratio, moment_gap_series,
    threshold_b0, uniform_tilt_barrier, verdict, verify_small_drift_uniformity,
)
from overshoot_lab.cli import main
from overshoot_lab.expfam import SQRT3, TiltedFamily
from overshoot_lab.ladder import simulate_overshoots
from overshoot_lab.rng import RngStream
from overshoot_lab.stationary import (
    build_population, check_renewal_equation, limit_moment, sample_moment,
)
from overshoot_lab.transport import quantile_coupling, smoothed_tv, tau_wald_check, transport_report
from overshoot_lab.transport import w1_empirical

SEED = 12345
N = 10**5
ROOT = RngStream.root(SEED).child("acceptance")
GAUSS = TiltedFamily.gaussian()
UNIF = TiltedFamily.uniform()
CONFIG = Path(__file__).resolve().parent.parent / "configs" / "acceptance.cfg"

criterion = pytest.mark.criterion


class _Cache:
    """Shared samples, so criteria reuse one population and one batch per cell."""

    def __init__(self):
        self.pops = {}
        self.batches = {}

    def pop(self, family, theta):
        key = (family.kind.name, theta)
        if key not in self.pops:
            self.pops[key] = build_population(
                family, theta, N, ROOT.child("ladder", family.kind.name, repr(theta)))
        return self.pops[key]

    def batch(self, family, theta, b):
        key = (family.kind.name, theta, b)
        if key not in self.batches:
            self.batches[key] = simulate_overshoots(
                family, theta, b, N, ROOT.child("overshoot", family.kind.name, repr(theta),
                                                repr(float(b))))
        return self.batches[key]


@pytest.fixture(scope="session")
def cache():
    return _Cache()


@criterion(1, "deterministic counterexample, exact, < 1 ms")
class TestCriterion1:
    @pytest.mark.parametrize("c,k", [(1, 2), (2, 3), (Fraction(1, 2), 5)])
    def test_exact(self, c, k, detail):
        t0 = time.perf_counter()
        ce = counterexample_deterministic(c, k)
        elapsed = time.perf_counter() - t0
        assert isinstance(ce.lhs, Fraction) and isinstance(ce.rhs, Fraction)
        assert ce.lhs == Fraction(c) ** k and ce.rhs == Fraction(c) ** k / k
        assert ce.lhs > ce.rhs
        assert elapsed < 1e-3
        detail(f"({c},{k}) {ce.lhs}>{ce.rhs}")

    def test_one_two_example(self):
        ce = counterexample_deterministic(1, 2)
        assert float(ce.lhs) == 1.0 and float(ce.rhs) == 0.5


@criterion(2, "uniform-tilt counterexample, theta=25, N=1e5, < 30 s")
class TestCriterion2:
    def test_uniform_tilt(self, detail):
        b = uniform_tilt_barrier(2)
        assert b == pytest.approx(SQRT3 * (1 - 2**-0.5) / 2, rel=1e-15)
        assert b == pytest.approx(0.25365, abs=1e-5)
        t0 = time.perf_counter()
        rep = counterexample_uniform_tilt(2, [25.0], N, ROOT.child("a2"))
        elapsed = time.perf_counter() - t0
        row = rep.rows[0]
        rhs = expfam.plus_moment(UNIF, 25.0, 3) / (2 * expfam.mean(UNIF, 25.0))
        assert row.rhs_strengthened == pytest.approx(rhs, rel=1e-12)
        assert row.mc - 3 * row.se > rhs
        assert rep.limit_lhs == pytest.approx(2.186, abs=1e-3)
        assert rep.limit_rhs == pytest.approx(1.5, rel=1e-15)
        assert rep.limit_lhs > rep.limit_rhs
        assert elapsed < 30
        detail(f"mc-3se={row.mc - 3 * row.se:.4f} > rhs={rhs:.4f}, {elapsed:.1f}s")


@criterion(3, "limit moment vs overshoot at b=50, Gaussian theta=0.5, < 60 s")
class TestCriterion3:
    def test_limit_moment(self, cache, detail):
        t0 = time.perf_counter()
        pop = cache.pop(GAUSS, 0.5)
        far = cache.batch(GAUSS, 0.5, 50.0)
        elapsed = time.perf_counter() - t0
        assert pop.n == N and far.n == N
        for k in (1, 2):
            lim = limit_moment(pop, k)
            mc = sample_moment(far.overshoot, k)
            z = abs(lim.value - mc.value) / math.hypot(lim.se, mc.se)
            assert z <= 3
            detail(f"k={k} z={z:.2f}")
        assert elapsed < 60


@criterion(4, "limit moment never exceeds the plus-moment bound")
class TestCriterion4:
    @pytest.mark.parametrize("family", [GAUSS, UNIF], ids=["gaussian", "uniform"])
    @pytest.mark.parametrize("theta", [0.1, 0.5])
    def test_bound(self, cache, family, theta):
        pop = cache.pop(family, theta)
        mu = expfam.mean(family, theta)
        for k in (1, 2, 3):
            lim = limit_moment(pop, k)
            rhs = expfam.plus_moment(family, theta, k + 1) / ((k + 1) * mu)
            assert lim.value <= rhs + 3 * lim.se
            assert verdict(lim.value, lim.se, rhs) != FAIL


@criterion(5, "classical bound on the ladder renewal process never fails")
class TestCriterion5:
    @pytest.mark.parametrize("b", [1.0, 2.0, 5.0, 10.0])
    def test_classical_ladder(self, cache, b):
        # the overshoot of the ladder renewal process over b is R_b pathwise
        pop = cache.pop(GAUSS, 0.5)
        batch = cache.batch(GAUSS, 0.5, b)
        for k in (1, 2):
            mc = sample_moment(batch.overshoot, k)
            rhs = classical_bound_ladder(pop.heights, k)
            assert mc.value - 3 * mc.se <= rhs.value
            assert verdict(mc.value, mc.se, rhs.value) != FAIL


@criterion(6, "Wald identity within 3 SE, exact for the point mass")
class TestCriterion6:
    @pytest.mark.parametrize("theta", [0.25, 0.5])
    @pytest.mark.parametrize("b", [5.0, 10.0, 20.0])
    def test_gaussian(self, theta, b, cache):
        w = tau_wald_check(GAUSS, theta, b, N, ROOT.child("wald", repr(theta), repr(b)),
                           pop=cache.pop(GAUSS, theta))
        assert w.n == N and w.censored == 0
        assert abs(w.residual) <= 3 * w.residual_se

    def test_point_mass(self):
        w = tau_wald_check(TiltedFamily.point_mass(1.0), 0.0, 2.5, 1000, ROOT.child("wald-pm"))
        assert w.tau_mean == 3.0 and w.residual == 0.0


@criterion(7, "renewal-equation residual within 3 SE, exact for the point mass")
class TestCriterion7:
    def test_gaussian(self, detail):
        rc = check_renewal_equation(GAUSS, 0.5, 8.0, 0.5, ROOT.child("renewal"), n=N)
        assert abs(rc.difference) <= 3 * rc.combined_se
        detail(f"lhs={rc.lhs:.5f} rhs={rc.rhs:.5f} se={rc.combined_se:.5f}")

    @pytest.mark.parametrize("y,expect", [(0.4, 1.0), (0.6, 0.0)])
    def test_point_mass(self, y, expect):
        rc = check_renewal_equation(TiltedFamily.point_mass(1.0), 0.0, 2.5, y,
                                    ROOT.child("renewal-pm"), n=2000, n_batches=4,
                                    paths_per_batch=50)
        assert rc.lhs == rc.rhs == expect and rc.difference == 0.0


def _random_pairs():
    rng = np.random.default_rng(SEED)
    draws = [rng.normal, rng.exponential, rng.standard_cauchy, rng.random]
    pairs = []
    for i in range(100):
        n = int(rng.integers(1, 2000))
        x = draws[i % 4](size=n) * rng.uniform(0.1, 10)
        y = draws[(i // 4) % 4](size=n) * rng.uniform(0.1, 10) + rng.normal()
        pairs.append((x, y))
    return pairs


@criterion(8, "transport: coupling = W1, smoothed TV <= min(1, W1), ln W1 decays")
class TestCriterion8:
    def test_coupling_equals_w1(self):
        for x, y in _random_pairs():
            cp = quantile_coupling(x, y, [0.5])
            assert abs(cp.exact - w1_empirical(x, y)) <= 1e-9 * max(1.0, abs(cp.exact))

    def test_smoothed_tv_below_w1(self):
        for x, y in _random_pairs():
            assert smoothed_tv(x, y) <= min(1.0, w1_empirical(x, y)) + 1e-12

    def test_log_w1_fit(self, cache, detail):
        rep = transport_report(GAUSS, 0.5, [2.0, 4.0, 6.0, 8.0, 10.0, 12.0], N,
                               ROOT.child("transport"), pop=cache.pop(GAUSS, 0.5))
        detail(f"slope={rep.slope:.4f} R2={rep.fit_r2:.3f} r_hat={rep.fitted_r:.4f}")
        assert rep.slope < 0
        assert rep.fit_r2 >= 0.8
        assert rep.fitted_r > 0


@pytest.fixture(scope="session")
def fitted_inputs(cache):
    """``BoundInputs`` with (C, r) from the rate fit, and the fit's own samples."""
    pop = cache.pop(GAUSS, 0.5)
    limits = {k: limit_moment(pop, k) for k in (1, 2)}
    grid = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]
    gaps = moment_gap_series(GAUSS, 0.5, limits, grid, N, ROOT.child("rate-fit"))
    out = {}
    for k in (1, 2):
        fit = fit_rate_from_gaps(gaps[k])
        A = lorden_ratio(GAUSS, 0.5, k)
        out[k] = (BoundInputs.from_amplitude(A, fit.C_hat, fit.r_hat, k, 0.5), fit, gaps[k])
    return out


@criterion(9, "C_k=1 regime beyond b0 with fitted (C, r)")
class TestCriterion9:
    @pytest.mark.parametrize("k", [1, 2])
    def test_mc_beyond_b0(self, cache, fitted_inputs, k, detail):
        inp, fit, gaps = fitted_inputs[k]
        assert fit.r_hat > 0
        b0 = threshold_b0(inp)
        assert math.isfinite(b0)
        cells = [(p.b, p.mc, p.se) for p in gaps if p.b >= b0]
        for b in (1.0, 2.0, 5.0, 10.0):
            if b >= b0:
                mc = sample_moment(cache.batch(GAUSS, 0.5, b).overshoot, k)
                cells.append((b, mc.value, mc.se))
        assert cells
        for b, mc, se in cells:
            assert mc - 3 * se <= inp.A, b
        detail(f"k={k} r_hat={fit.r_hat:.3f} b0={b0:.3f} cells={len(cells)}")

    @pytest.mark.parametrize("k", [1, 2])
    def test_algebraic(self, fitted_inputs, k):
        inp = fitted_inputs[k][0]
        b0 = threshold_b0(inp)
        for b in b0 + np.concatenate([[0.0], np.geomspace(1e-9, 100.0, 400)]):
            assert corrected_bound(inp, float(b)) <= inp.A * (1 + 1e-12)


@criterion(10, "small-drift uniformity at theta=0.05")
class TestCriterion10:
    @pytest.mark.parametrize("family", [GAUSS, UNIF], ids=["gaussian", "uniform"])
    @pytest.mark.parametrize("k", [1, 2])
    def test_small_drift(self, family, k):
        rep = verify_small_drift_uniformity(family, k, [0.05], [0.1, 0.5, 1.0, 2.0, 5.0],
                                            ROOT.child("small-drift", family.kind.name), n=N)
        assert len(rep.rows) == 5
        for row in rep.rows:
            assert row.mc - 3 * row.se <= row.rhs_ck1
            assert row.verdict_ck1 != FAIL


@criterion(11, "report on the acceptance config is byte-identical across runs and workers")
class TestCriterion11:
    def test_determinism(self, tmp_path):
        outs = []
        for name, workers in (("first", "1"), ("second", "1"), ("workers2", "2")):
            out = tmp_path / name
            code = main(["report", "--config", str(CONFIG), "--out", str(out), "--quiet",
                         "--workers", workers])
            assert code in (0, 1)
            outs.append(out)
        names = sorted(p.name for p in outs[0].iterdir())
        assert {"bounds.csv", "transport.csv", "counterexamples.csv",
                "ladder_population.txt"} <= set(names)
        for other in outs[1:]:
            assert sorted(p.name for p in other.iterdir()) == names
            for name in names:
                assert (outs[0] / name).read_bytes() == (other / name).read_bytes(), name
