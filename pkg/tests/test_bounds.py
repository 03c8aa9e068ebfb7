import math
import time
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from overshoot_lab import expfam
from overshoot_lab.bounds import (
    FAIL, INCONCLUSIVE, PASS, BoundInputs, BoundRow, bound_row, classical_bound,
    corrected_bound, counterexample_deterministic, counterexample_uniform_tilt, fit_rate,
    gamma_int, lorden_ratio, threshold_b0, uniform_tilt_barrier, verdict,
    verify_small_drift_uniformity,
)
from overshoot_lab.errors import InsufficientSignal, NonStandardFamily
from overshoot_lab.expfam import SQRT3, TiltedFamily
from overshoot_lab.rng import RngStream

GAUSS = TiltedFamily.gaussian()


def inputs_with_B(A, B, r, k):
    return BoundInputs.from_amplitude(A, B, r, k)


class TestFormulas:
    def test_gamma(self):
        assert [gamma_int(k) for k in (1, 2, 3, 4)] == [1, 1, 2, 6]

    def test_classical_point_mass(self):
        assert classical_bound(TiltedFamily.point_mass(1.0), 0.0, 1) == pytest.approx(1.5)

    def test_classical_gaussian(self):
        expect = 1.5 * expfam.plus_moment(GAUSS, 0.5, 2) / 0.5
        assert classical_bound(GAUSS, 0.5, 1) == pytest.approx(expect, rel=1e-14)
        assert classical_bound(GAUSS, 0.5, 1, canonical=True) == pytest.approx(expect / 1.5)

    def test_corrected_examples(self):
        assert corrected_bound(inputs_with_B(1.0, 2.0, 1.0, 1), 0.0) == pytest.approx(2.5)
        assert corrected_bound(inputs_with_B(1.0, 2.0, 1.0, 1), 100.0) == pytest.approx(0.5)
        inp = BoundInputs(4.0, 1.0, 0.5, 2)
        assert inp.B == pytest.approx(8.0)
        assert corrected_bound(inp, 0.0) == pytest.approx(4 / 3 + 8, rel=1e-14)

    def test_threshold_examples(self):
        assert threshold_b0(inputs_with_B(10.0, 2.0, 0.5, 1)) == 0.0
        assert threshold_b0(inputs_with_B(1.0, 2.0, 1.0, 1)) == pytest.approx(math.log(4))
        assert threshold_b0(inputs_with_B(1.0, 1e-300, 1.0, 1)) == 0.0

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0.01, 100), st.floats(0.01, 100), st.floats(0.05, 5), st.integers(1, 4),
           st.floats(0, 20))
    def test_corrected_below_A_beyond_b0(self, A, B, r, k, extra):
        inp = inputs_with_B(A, B, r, k)
        b0 = threshold_b0(inp)
        assert corrected_bound(inp, b0 + extra) <= A * (1 + 1e-12)

    def test_verdicts(self):
        assert verdict(1.0, 0.1, 1.5) == PASS
        assert verdict(1.0, 0.1, 0.5) == FAIL
        assert verdict(1.0, 0.1, 1.1) == INCONCLUSIVE

    def test_row_verdicts(self):
        row = BoundRow(0.5, 1.0, 1, 1.0, 0.1, 100, 0, 2.0, math.nan, 0.5, 1.1)
        assert row.verdict_classical == PASS and row.verdict_corrected == ""
        assert row.verdict_ck1 == FAIL and row.verdict_strengthened == INCONCLUSIVE


class TestFitRate:
    def test_exact_exponential(self):
        fit = fit_rate([(b, 2 * math.exp(-0.7 * b)) for b in range(1, 7)])
        assert fit.C_hat == pytest.approx(2.0, abs=1e-6)
        assert fit.r_hat == pytest.approx(0.7, abs=1e-6)
        assert fit.fit_quality == pytest.approx(1.0)

    def test_one_percent_noise(self):
        rng = np.random.default_rng(3)
        series = [(b, 2 * math.exp(-0.7 * b) * (1 + 0.01 * rng.standard_normal()))
                  for b in range(1, 7)]
        assert fit_rate(series).r_hat == pytest.approx(0.7, rel=0.05)

    def test_flat_series_rejected(self):
        with pytest.raises(InsufficientSignal):
            fit_rate([(b, 0.001, 0.01) for b in range(1, 7)])

    def test_noise_floor_exclusion(self):
        series = [(b, 2 * math.exp(-0.7 * b), 1e-3) for b in range(1, 13)]
        fit = fit_rate(series)
        assert max(fit.used) < 10 and min(fit.excluded) >= 9


class TestCells:
    def test_bound_row_point_mass(self):
        fam = TiltedFamily.point_mass(1.0)
        row = bound_row(fam, 0.0, 0.0, 2, np.ones(100))
        assert row.mc == 1.0 and row.se == 0.0
        assert row.rhs_strengthened == 0.5 and row.verdict_strengthened == FAIL
        assert row.verdict_classical == PASS

    def test_small_drift_rejects_point_mass(self):
        with pytest.raises(NonStandardFamily):
            verify_small_drift_uniformity(TiltedFamily.point_mass(1.0), 1, [0.1], [1.0],
                                          RngStream.root(0), n=1000)

    def test_small_drift_single_cell(self):
        rep = verify_small_drift_uniformity(GAUSS, 1, [0.05], [0.1], RngStream.root(1),
                                            n=10**5)
        assert rep.rows[0].verdict_ck1 == PASS

    def test_small_drift_proxy_is_largest_all_pass(self):
        grid = [0.05, 0.1, 0.2, 0.4]
        rep = verify_small_drift_uniformity(GAUSS, 2, grid, [0.5, 2.0], RngStream.root(2),
                                            n=5000)
        all_pass = [t for t in grid
                    if all(r.verdict_ck1 == PASS for r in rep.rows if r.theta == t)]
        assert rep.theta_k_proxy == max(all_pass)
        assert not rep.any_fail


class TestCounterexamples:
    @pytest.mark.parametrize("c,k,lhs,rhs", [(1, 2, 1, Fraction(1, 2)), (2, 3, 8, Fraction(8, 3)),
                                             (Fraction(1, 2), 5, Fraction(1, 32),
                                              Fraction(1, 160))])
    def test_deterministic(self, c, k, lhs, rhs):
        t0 = time.perf_counter()
        ce = counterexample_deterministic(c, k)
        assert time.perf_counter() - t0 < 1e-3
        assert ce.lhs == lhs and ce.rhs == rhs and ce.fails

    def test_deterministic_window(self):
        ce = counterexample_deterministic(1, 2)
        assert ce.window[1] == pytest.approx(1 - 2**-0.5)
        assert ce.midpoint == pytest.approx(0.1464, abs=1e-4)
        assert ce.midpoint_lhs == pytest.approx(0.7285, abs=1e-4) and ce.midpoint_fails

    def test_deterministic_guards(self):
        with pytest.raises(ValueError):
            counterexample_deterministic(1, 1)
        with pytest.raises(ValueError):
            counterexample_deterministic(-1, 2)

    def test_uniform_barrier(self):
        b = uniform_tilt_barrier(2)
        assert b == pytest.approx(0.25365, abs=1e-5)
        assert (SQRT3 - b) ** 2 == pytest.approx(2.1857, abs=1e-4)

    def test_uniform_tilt_fails_at_large_theta(self):
        rep = counterexample_uniform_tilt(2, [25.0], 10**5, RngStream.root(3))
        assert rep.limit_fails and rep.limit_rhs == pytest.approx(1.5)
        row = rep.rows[0]
        assert row.mc - 3 * row.se > row.rhs_strengthened
        assert rep.theta0_proxy == 25.0

    def test_uniform_tilt_guards(self):
        with pytest.raises(ValueError):
            counterexample_uniform_tilt(1, [25.0], 1000, RngStream.root(0))
        with pytest.raises(ValueError):
            counterexample_uniform_tilt(2, [25.0], 1000, RngStream.root(0), family=GAUSS)

    def test_lorden_ratio_positive(self):
        assert lorden_ratio(GAUSS, 0.5, 1) > 0
