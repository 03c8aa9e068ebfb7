import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from overshoot_lab import expfam
from overshoot_lab.errors import NonStandardFamily, ThetaOutOfRange
from overshoot_lab.expfam import SQRT3, QuadratureConfig, TiltedFamily
from overshoot_lab.rng import RngStream

mp.mp.dps = 30

GAUSS = TiltedFamily.gaussian()
UNIF = TiltedFamily.uniform()


def mp_unif_psi(theta, a=SQRT3):
    # oracle: ln of (1/2a) * integral of e^{theta x} over [-a, a]
    return float(mp.log(mp.quad(lambda x: mp.exp(theta * x), [-a, a]) / (2 * a)))


def mp_unif_plus(theta, m, a=SQRT3):
    z = mp.quad(lambda x: mp.exp(theta * x), [-a, a])
    return float(mp.quad(lambda x: x**m * mp.exp(theta * x), [0, a]) / z)


def gauss_plus(theta, m):
    # closed-form partial moments of N(theta, 1) on (0, inf)
    Phi, phi = 0.5 * math.erfc(-theta / math.sqrt(2)), math.exp(-theta**2 / 2) / math.sqrt(2 * math.pi)
    if m == 1:
        return theta * Phi + phi
    if m == 2:
        return (theta**2 + 1) * Phi + theta * phi
    if m == 3:
        return (theta**3 + 3 * theta) * Phi + (theta**2 + 2) * phi
    if m == 4:
        return (theta**4 + 6 * theta**2 + 3) * Phi + (theta**3 + 5 * theta) * phi
    raise ValueError(m)


class TestLogMgf:
    @pytest.mark.parametrize("fam", [GAUSS, UNIF])
    def test_zero_at_origin(self, fam):
        assert expfam.log_mgf(fam, 0.0) == 0.0

    def test_gaussian_half(self):
        assert expfam.log_mgf(GAUSS, 0.5) == pytest.approx(0.125, abs=1e-15)
        assert expfam.log_mgf_quadrature(GAUSS, 0.5) == pytest.approx(0.125, abs=1e-10)

    def test_uniform_theta_one(self):
        # ln(sinh(sqrt3)/sqrt3) = 0.4577960..., not 0.44024
        oracle = mp_unif_psi(1.0)
        assert oracle == pytest.approx(0.45779602, abs=1e-8)
        assert expfam.log_mgf(UNIF, 1.0) == pytest.approx(oracle, abs=1e-12)
        assert expfam.log_mgf_quadrature(UNIF, 1.0) == pytest.approx(oracle, abs=1e-10)

    @pytest.mark.parametrize("theta", [1e-6, 1e-3, 0.1, 2.0, 10.0, 50.0])
    def test_uniform_stable_across_scales(self, theta):
        assert expfam.log_mgf(UNIF, theta) == pytest.approx(mp_unif_psi(theta), rel=1e-12, abs=1e-15)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.0, 4.9), st.floats(0.0, 4.9), st.floats(0.0, 1.0))
    def test_convexity(self, t1, t2, lam):
        for fam in (GAUSS, UNIF):
            mid = expfam.log_mgf(fam, lam * t1 + (1 - lam) * t2)
            chord = lam * expfam.log_mgf(fam, t1) + (1 - lam) * expfam.log_mgf(fam, t2)
            assert mid <= chord + 1e-12

    def test_out_of_range(self):
        with pytest.raises(ThetaOutOfRange):
            expfam.log_mgf(GAUSS, 6.0)
        with pytest.raises(ThetaOutOfRange):
            expfam.log_mgf(UNIF, -0.1)

    def test_point_mass(self):
        fam = TiltedFamily.point_mass(2.0)
        assert expfam.log_mgf(fam, 0.7) == pytest.approx(1.4)


class TestMean:
    @pytest.mark.parametrize("fam", [GAUSS, UNIF])
    def test_zero_at_origin(self, fam):
        assert expfam.mean(fam, 0.0) == pytest.approx(0.0, abs=1e-15)

    def test_gaussian(self):
        assert expfam.mean(GAUSS, 0.3) == pytest.approx(0.3)
        assert expfam.mean_quadrature(GAUSS, 0.3) == pytest.approx(0.3, abs=1e-9)

    def test_uniform_large_tilt_near_edge(self):
        assert abs(expfam.mean(UNIF, 50.0) - SQRT3) < 0.03

    @pytest.mark.parametrize("theta", [0.01, 0.2, 1.0, 3.0, 4.5])
    def test_fd_quadrature_closed_form_agree(self, theta):
        for fam in (GAUSS, UNIF):
            m = expfam.mean(fam, theta)
            assert expfam.mean_finite_difference(fam, theta) == pytest.approx(m, abs=1e-7)
            assert expfam.mean_quadrature(fam, theta) == pytest.approx(m, abs=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(1e-4, 4.9))
    def test_positive_drift(self, theta):
        assert expfam.mean(GAUSS, theta) > 0
        assert expfam.mean(UNIF, theta) > 0

    def test_variance_positive(self):
        assert expfam.variance(GAUSS, 1.0) == pytest.approx(1.0)
        assert expfam.variance(UNIF, 0.0) == pytest.approx(1.0, abs=1e-12)
        assert 0 < expfam.variance(UNIF, 5.0) < 1


class TestPlusMoment:
    def test_symmetric_half_variance(self):
        assert expfam.plus_moment(GAUSS, 0.0, 2) == pytest.approx(0.5, abs=1e-10)
        assert expfam.plus_moment(UNIF, 0.0, 2) == pytest.approx(0.5, abs=1e-10)

    def test_point_mass(self):
        assert expfam.plus_moment(TiltedFamily.point_mass(1.0), 0.3, 3) == 1.0

    @pytest.mark.parametrize("theta", [0.1, 0.5, 2.0])
    @pytest.mark.parametrize("m", [1, 2, 3, 4])
    def test_gaussian_closed_form(self, theta, m):
        assert expfam.plus_moment(GAUSS, theta, m) == pytest.approx(gauss_plus(theta, m), rel=1e-9)

    @pytest.mark.parametrize("theta", [0.1, 1.0, 25.0])
    @pytest.mark.parametrize("m", [2, 3])
    def test_uniform_oracle(self, theta, m):
        assert expfam.plus_moment(UNIF, theta, m) == pytest.approx(mp_unif_plus(theta, m), rel=1e-9)

    def test_negative_tilt_identity(self):
        # E_theta[e^{-theta X}] = e^{-psi(theta)}
        for fam in (GAUSS, UNIF):
            for theta in (0.3, 1.7):
                assert expfam.negative_tilt_expectation(fam, theta) == pytest.approx(
                    math.exp(-expfam.log_mgf(fam, theta)), rel=1e-9)


class TestFamilies:
    def test_nonstandard_uniform_rejected(self):
        with pytest.raises(NonStandardFamily):
            TiltedFamily.uniform(1.0)
        fam = TiltedFamily.uniform(1.0, unstandardised=True)
        assert fam.base.non_standard

    def test_point_mass_non_standard(self):
        assert TiltedFamily.point_mass(1.0).base.non_standard

    def test_gaussian_truncation_guard(self):
        with pytest.raises(ValueError):
            TiltedFamily.gaussian(quadrature=QuadratureConfig(truncation_radius=5.0))


class TestSampling:
    def test_point_mass_constant(self):
        fam = TiltedFamily.point_mass(2.0)
        gen = RngStream.root(1).generator()
        assert np.all(expfam.sample_array(fam, 0.0, gen, 100) == 2.0)
        assert expfam.sample(fam, 0.0, RngStream.root(1)) == 2.0

    def test_uniform_mean(self):
        n = 10**6
        x = expfam.sample_array(UNIF, 1.0, RngStream.root(11).generator(), n)
        sd = math.sqrt(expfam.variance(UNIF, 1.0))
        assert abs(x.mean() - expfam.mean(UNIF, 1.0)) <= 3 * sd / math.sqrt(n)
        assert x.min() >= -SQRT3 and x.max() <= SQRT3

    def test_gaussian_plus_second_moment(self):
        n = 10**6
        x = expfam.sample_array(GAUSS, 0.5, RngStream.root(12).generator(), n)
        y = np.maximum(x, 0.0) ** 2
        se = y.std(ddof=1) / math.sqrt(n)
        assert abs(y.mean() - expfam.plus_moment(GAUSS, 0.5, 2)) <= 3 * se

    @pytest.mark.parametrize("theta", [0.0, 1e-9, 5.0, 50.0])
    def test_uniform_extreme_tilts_in_support(self, theta):
        x = expfam.sample_array(UNIF, theta, RngStream.root(3).generator(), 10_000)
        assert np.all(np.isfinite(x))
        assert x.min() >= -SQRT3 and x.max() <= SQRT3

    def test_same_stream_same_draw(self):
        s = RngStream.root(5).child(1, 2)
        assert expfam.sample(GAUSS, 0.5, s) == expfam.sample(GAUSS, 0.5, s)
