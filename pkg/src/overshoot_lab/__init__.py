"""Monte Carlo and quadrature tools for random-walk overshoot moments.

Modules
-------
expfam      exponentially tilted base measures (closed forms, quadrature, sampling)
ladder      level crossings, overshoots and ladder steps of seeded random walks
stationary  limiting overshoot law built from ladder heights; renewal checks
bounds      Lorden-type bounds, rate fits, verdicts and counterexamples
transport   W1, quantile coupling, smoothed TV and the Wald identity
cli         experiment runner
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    BudgetExceeded, ConfigError, EmptyLaw, InsufficientSamples, InsufficientSignal,
    NonStandardFamily, OvershootLabError, QuadratureFailure, ThetaOutOfRange,
    TruncationNotConverged,
)
from .expfam import BaseMeasure, QuadratureConfig, TiltedFamily  # noqa: E402
from .ladder import BudgetPolicy, SimBudget  # noqa: E402
from .rng import RngStream  # noqa: E402

__all__ = [
    "BaseMeasure", "BudgetExceeded", "BudgetPolicy", "ConfigError", "EmptyLaw",
    "InsufficientSamples", "InsufficientSignal", "NonStandardFamily", "OvershootLabError",
    "QuadratureConfig", "QuadratureFailure", "RngStream", "SimBudget", "ThetaOutOfRange",
    "TiltedFamily", "TruncationNotConverged", "__version__",
]
