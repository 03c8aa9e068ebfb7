"""Standard exponential families over a fixed base measure.

The tilted law is ``F_theta(dx) = exp(theta*x - psi(theta)) F_0(dx)`` with
``psi`` the log moment generating function of ``F_0``.  Three base measures
are shipped:

* ``UniformSymmetric(a)`` -- uniform on ``[-a, a]``; standardised iff ``a = sqrt(3)``.
* ``StandardGaussian`` -- the tilt of N(0, 1) by ``theta`` is N(theta, 1).
* ``PointMass(c)`` -- degenerate at ``c > 0``.  Not standardised and lattice;
  only admitted for the deterministic counterexample and renewal-mode tests.

Both continuous bases are absolutely continuous, hence strongly non-lattice.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np
from scipy import integrate

from .errors import NonStandardFamily, QuadratureFailure, ThetaOutOfRange

SQRT3 = math.sqrt(3.0)


class BaseKind(enum.Enum):
    UNIFORM_SYMMETRIC = "uniform"
    STANDARD_GAUSSIAN = "gaussian"
    POINT_MASS = "point_mass"


@dataclass(frozen=True)
class BaseMeasure:
    """Base law ``F_0``.  Use the classmethod constructors."""

    kind: BaseKind
    param: float = 0.0
    description: str = ""
    standardised: bool = True

    @classmethod
    def uniform(cls, a: float = SQRT3, unstandardised: bool = False) -> "BaseMeasure":
        if not a > 0:
            raise ValueError(f"half-width must be positive, got {a}")
        is_std = math.isclose(a, SQRT3, rel_tol=0.0, abs_tol=1e-12)
        if not is_std and not unstandardised:
            raise NonStandardFamily(
                f"UniformSymmetric(a={a}) has variance {a * a / 3:g} != 1; "
                "pass unstandardised=True to allow it"
            )
        return cls(BaseKind.UNIFORM_SYMMETRIC, float(a), f"Uniform[-{a:g}, {a:g}]", is_std)

    @classmethod
    def gaussian(cls) -> "BaseMeasure":
        return cls(BaseKind.STANDARD_GAUSSIAN, 0.0, "N(0, 1)", True)

    @classmethod
    def point_mass(cls, c: float) -> "BaseMeasure":
        if not c > 0:
            raise ValueError(f"point mass location must be positive, got {c}")
        return cls(BaseKind.POINT_MASS, float(c), f"delta_{c:g} (non-standard)", False)

    @property
    def non_standard(self) -> bool:
        return not self.standardised

    @property
    def bounded(self) -> bool:
        return self.kind is not BaseKind.STANDARD_GAUSSIAN

    @property
    def support_max(self) -> float:
        if self.kind is BaseKind.STANDARD_GAUSSIAN:
            return math.inf
        return self.param


@dataclass(frozen=True)
class QuadratureConfig:
    abs_tol: float = 1e-13
    rel_tol: float = 1e-11
    max_subdivisions: int = 200
    truncation_radius: float = 12.0

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("quadrature tolerances must be strictly positive")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be >= 1")


_DEFAULT_THETA_MAX = {
    BaseKind.UNIFORM_SYMMETRIC: 50.0,
    BaseKind.STANDARD_GAUSSIAN: 5.0,
    BaseKind.POINT_MASS: 50.0,
}


@dataclass(frozen=True)
class TiltedFamily:
    """A base measure together with its admissible tilt range ``[0, theta_max]``."""

    base: BaseMeasure
    theta_max: Optional[float] = None
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)

    def __post_init__(self):
        if self.theta_max is None:
            object.__setattr__(self, "theta_max", _DEFAULT_THETA_MAX[self.base.kind])
        if not self.theta_max > 0:
            raise ValueError("theta_max must be positive")
        if (
            self.base.kind is BaseKind.STANDARD_GAUSSIAN
            and self.quadrature.truncation_radius < 12.0
        ):
            raise ValueError("truncation_radius must be >= 12 for the Gaussian base")

    @classmethod
    def gaussian(cls, **kw) -> "TiltedFamily":
        return cls(BaseMeasure.gaussian(), **kw)

    @classmethod
    def uniform(cls, a: float = SQRT3, unstandardised: bool = False, **kw) -> "TiltedFamily":
        return cls(BaseMeasure.uniform(a, unstandardised), **kw)

    @classmethod
    def point_mass(cls, c: float, **kw) -> "TiltedFamily":
        return cls(BaseMeasure.point_mass(c), **kw)

    @property
    def kind(self) -> BaseKind:
        return self.base.kind

    def check_theta(self, theta: float) -> float:
        theta = float(theta)
        if not 0.0 <= theta <= self.theta_max:
            raise ThetaOutOfRange(f"theta={theta} outside [0, {self.theta_max}]")
        return theta


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------


def log_mgf(family: TiltedFamily, theta: float) -> float:
    """Cumulant function ``psi(theta) = ln E_0[exp(theta X)]``."""
    theta = family.check_theta(theta)
    kind, p = family.kind, family.base.param
    if kind is BaseKind.STANDARD_GAUSSIAN:
        return 0.5 * theta * theta
    if kind is BaseKind.POINT_MASS:
        return theta * p
    if theta == 0.0:
        return 0.0
    z = p * theta
    if z < 1e-8:
        return z * z / 6.0
    if z < 1.0:
        return math.log1p(_sinh_minus_x(z) / z)
    # ln(sinh z / z) rewritten to stay finite for large z
    return z - math.log(2.0 * z) + math.log1p(-math.exp(-2.0 * z))


def _sinh_minus_x(z: float) -> float:
    # sinh z - z by its all-positive series; no cancellation for z < 1
    term, total, j = z, 0.0, 1
    while True:
        term *= z * z / ((2 * j) * (2 * j + 1))
        total += term
        if term <= 1e-17 * total:
            return total
        j += 1


def _xcosh_minus_sinh(z: float) -> float:
    # z cosh z - sinh z = sum_{n>=1} 2n z^{2n+1} / (2n+1)!
    fact_term, total, n = z, 0.0, 1
    while True:
        fact_term *= z * z / ((2 * n) * (2 * n + 1))
        t = 2 * n * fact_term
        total += t
        if t <= 1e-17 * total:
            return total
        n += 1


def mean(family: TiltedFamily, theta: float) -> float:
    """Drift ``mu_theta = psi'(theta)``."""
    theta = family.check_theta(theta)
    kind, p = family.kind, family.base.param
    if kind is BaseKind.STANDARD_GAUSSIAN:
        return theta
    if kind is BaseKind.POINT_MASS:
        return p
    if theta == 0.0:
        return 0.0
    z = p * theta
    if z < 1e-8:
        return p * z / 3.0
    if z < 1.0:
        return p * _xcosh_minus_sinh(z) / (z * math.sinh(z))
    return p / math.tanh(z) - 1.0 / theta


def variance(family: TiltedFamily, theta: float) -> float:
    """``psi''(theta) = Var_theta(X)``."""
    theta = family.check_theta(theta)
    kind, p = family.kind, family.base.param
    if kind is BaseKind.STANDARD_GAUSSIAN:
        return 1.0
    if kind is BaseKind.POINT_MASS:
        return 0.0
    z = p * theta
    if z < 1e-8:
        return p * p / 3.0
    if z < 1.0:
        sh = math.sinh(z)
        return p * p * _sinh_minus_x(z) * (sh + z) / (z * z * sh * sh)
    return 1.0 / theta**2 - p * p / math.sinh(z) ** 2


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------


def _support(family: TiltedFamily, theta: float) -> Tuple[float, float]:
    if family.kind is BaseKind.STANDARD_GAUSSIAN:
        r = family.quadrature.truncation_radius
        return theta - r, theta + r
    a = family.base.param
    return -a, a


def _tilted_density(family: TiltedFamily, theta: float, psi: float) -> Callable[[float], float]:
    if family.kind is BaseKind.STANDARD_GAUSSIAN:
        c = 1.0 / math.sqrt(2.0 * math.pi)
        return lambda x: c * math.exp(theta * x - psi - 0.5 * x * x)
    a = family.base.param
    return lambda x: math.exp(theta * x - psi) / (2.0 * a)


def _quad(fn, lo, hi, qc: QuadratureConfig, what: str) -> float:
    value, err, info = integrate.quad(
        fn, lo, hi, epsabs=qc.abs_tol, epsrel=qc.rel_tol, limit=qc.max_subdivisions,
        full_output=True,
    )[:3]
    if err > max(qc.abs_tol, qc.rel_tol * abs(value)):
        raise QuadratureFailure(
            f"{what}: error estimate {err:.3g} exceeds tolerance "
            f"(abs {qc.abs_tol:g}, rel {qc.rel_tol:g}) after {info['last']} subdivisions"
        )
    return value


def tilted_expectation(family: TiltedFamily, theta: float, g: Callable[[float], float],
                       lo: Optional[float] = None, hi: Optional[float] = None) -> float:
    """``E_theta[g(X) ; lo <= X <= hi]`` by adaptive quadrature.

    Point masses are evaluated exactly.
    """
    theta = family.check_theta(theta)
    if family.kind is BaseKind.POINT_MASS:
        c = family.base.param
        inside = (lo is None or c >= lo) and (hi is None or c <= hi)
        return float(g(c)) if inside else 0.0
    s_lo, s_hi = _support(family, theta)
    lo = s_lo if lo is None else max(lo, s_lo)
    hi = s_hi if hi is None else min(hi, s_hi)
    if hi <= lo:
        return 0.0
    dens = _tilted_density(family, theta, log_mgf(family, theta))
    return _quad(lambda x: g(x) * dens(x), lo, hi, family.quadrature, "tilted expectation")


def plus_moment(family: TiltedFamily, theta: float, m: int) -> float:
    """``E_theta[(X^+)^m]``, the positive-part moment of one increment."""
    if int(m) != m or m < 1:
        raise ValueError(f"m must be a positive integer, got {m}")
    m = int(m)
    theta = family.check_theta(theta)
    if family.kind is BaseKind.POINT_MASS:
        return family.base.param**m
    return tilted_expectation(family, theta, lambda x: x**m, lo=0.0)


def log_mgf_quadrature(family: TiltedFamily, theta: float) -> float:
    """``psi`` by direct integration against ``F_0``; independent of :func:`log_mgf`."""
    theta = family.check_theta(theta)
    if family.kind is BaseKind.POINT_MASS:
        return theta * family.base.param
    if family.kind is BaseKind.STANDARD_GAUSSIAN:
        r = family.quadrature.truncation_radius
        c = 1.0 / math.sqrt(2.0 * math.pi)
        lo, hi = theta - r, theta + r
        val = _quad(lambda x: c * math.exp(theta * x - 0.5 * x * x), lo, hi,
                    family.quadrature, "log_mgf")
        return math.log(val)
    a = family.base.param
    # shift by theta*a so the integrand stays O(1) at large tilts
    val = _quad(lambda x: math.exp(theta * (x - a)) / (2.0 * a), -a, a,
                family.quadrature, "log_mgf")
    return math.log(val) + theta * a


def mean_quadrature(family: TiltedFamily, theta: float) -> float:
    return tilted_expectation(family, theta, lambda x: x)


def _log_mgf_signed(family: TiltedFamily, theta: float) -> float:
    # the shipped continuous bases are symmetric, so psi is even
    if theta < 0.0:
        if family.kind is BaseKind.POINT_MASS:
            return theta * family.base.param
        theta = -theta
    return log_mgf(family, theta)


def mean_finite_difference(family: TiltedFamily, theta: float) -> float:
    """Central difference of :func:`log_mgf` with step ``max(1e-6, 1e-6*theta)``."""
    theta = family.check_theta(theta)
    h = max(1e-6, 1e-6 * theta)
    if theta + h > family.theta_max:
        return (log_mgf(family, theta) - log_mgf(family, theta - h)) / h
    return (_log_mgf_signed(family, theta + h) - _log_mgf_signed(family, theta - h)) / (2.0 * h)


def negative_tilt_expectation(family: TiltedFamily, theta: float) -> float:
    """``E_theta[exp(-theta X)]``; equals ``exp(-psi(theta))`` exactly."""
    return tilted_expectation(family, theta, lambda x: math.exp(-theta * x))


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def sample_array(family: TiltedFamily, theta: float, gen: np.random.Generator,
                 size: int) -> np.ndarray:
    """``size`` i.i.d. draws from ``F_theta`` using generator ``gen``."""
    theta = family.check_theta(theta)
    kind, p = family.kind, family.base.param
    if kind is BaseKind.POINT_MASS:
        return np.full(size, p)
    if kind is BaseKind.STANDARD_GAUSSIAN:
        return theta + gen.standard_normal(size)
    u = gen.random(size)
    if theta == 0.0:
        return p * (2.0 * u - 1.0)
    # inverse CDF of the tilted uniform, in a form that cannot overflow:
    # x = a + ln(e^{-2a theta} + u (1 - e^{-2a theta})) / theta
    q = math.exp(-2.0 * p * theta)
    x = p + np.log(q + u * (1.0 - q)) / theta
    return np.clip(x, -p, p)


def sample(family: TiltedFamily, theta: float, stream) -> float:
    """One draw from ``F_theta``.  ``stream`` is an RngStream or a Generator."""
    gen = stream if isinstance(stream, np.random.Generator) else stream.generator()
    return float(sample_array(family, theta, gen, 1)[0])
