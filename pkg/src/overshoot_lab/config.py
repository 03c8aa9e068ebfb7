"""Flat ``key = value`` experiment configuration.

One entry per line, ``#`` starts a comment, lists are comma separated.
Every key has a type, a unit and a default in :data:`SCHEMA`; unknown or
duplicated keys are errors.  Levels ``b`` and ``y`` are measured in units of
the base standard deviation (1 for standardised bases).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

from .errors import ConfigError
from .expfam import QuadratureConfig, TiltedFamily
from .ladder import BudgetPolicy, SimBudget


def _floats(text: str) -> List[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _ints(text: str) -> List[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _pairs(text: str) -> List[Tuple[float, int]]:
    out = []
    for item in text.split(","):
        if item.strip():
            c, _, k = item.partition(":")
            out.append((float(c), int(k)))
    return out


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        t = text.strip().lower()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return t
    return parse


def _opt_float(text: str) -> Optional[float]:
    t = text.strip().lower()
    return None if t in ("", "auto", "none") else float(t)


# key: (parser, default, unit, description)
SCHEMA: Dict[str, Tuple[Callable[[str], Any], Any, str, str]] = {
    "family": (_choice("gaussian", "uniform", "point_mass"), "gaussian", "-", "base measure"),
    "family_param": (_opt_float, None, "sd", "uniform half-width or point-mass location"),
    "theta_max": (_opt_float, None, "-", "admissible tilt bound"),
    "theta_grid": (_floats, [0.5], "-", "tilts for bounds/transport/renewal/simulate"),
    "b_grid": (_floats, [1.0, 2.0, 5.0, 10.0], "sd", "levels for bound verification"),
    "k_list": (_ints, [1, 2], "-", "moment orders"),
    "n_replicates": (int, 100_000, "replicates", "MC replicates per cell"),
    "master_seed": (int, None, "-", "64-bit master seed (required)"),
    "max_steps": (int, 10_000_000, "steps", "walk step budget"),
    "budget_policy": (_choice("error", "censor"), "error", "-", "on budget exhaustion"),
    "quad_abs_tol": (float, 1e-13, "-", "quadrature absolute tolerance"),
    "quad_rel_tol": (float, 1e-11, "-", "quadrature relative tolerance"),
    "quad_max_subdivisions": (int, 200, "-", "quadrature subdivision limit"),
    "truncation_radius": (float, 12.0, "sd", "Gaussian quadrature half-width"),
    "rate_fit_b_grid": (_floats, [0.1 * i for i in range(1, 11)], "sd", "levels for the rate fit"),
    "C": (_opt_float, None, "-", "override fitted CDF constant"),
    "r": (_opt_float, None, "1/sd", "override fitted exponential rate"),
    "transport_b_grid": (_floats, [2.0, 4.0, 6.0, 8.0, 10.0, 12.0], "sd", "levels for W1"),
    "wald_b_grid": (_floats, [4.0, 8.0, 12.0], "sd", "levels for the Wald check"),
    "renewal_b_grid": (_floats, [8.0], "sd", "levels for the renewal-equation check"),
    "renewal_y": (float, 0.5, "sd", "tail point y in P(R_b > y)"),
    "small_drift_theta_grid": (_floats, [0.025, 0.05, 0.1, 0.2], "-", "small-drift tilts"),
    "small_drift_b_grid": (_floats, [0.1, 0.5, 1.0, 2.0, 5.0], "sd", "small-drift levels"),
    "a1_cases": (_pairs, [(1.0, 2), (2.0, 3), (0.5, 5)], "-", "deterministic (c:k) cases"),
    "a2_k": (int, 2, "-", "moment order for the uniform-tilt case"),
    "a2_theta_grid": (_floats, [5.0, 10.0, 25.0, 50.0], "-", "tilts for the uniform-tilt case"),
    "out_dir": (str, "reports", "path", "output directory"),
    "format": (_choice("csv", "json", "both"), "both", "-", "report format"),
    "workers": (int, 1, "processes", "worker processes"),
}

# keys that never influence a reported value
_NON_SEMANTIC = {"out_dir", "format", "workers"}


@dataclass
class ExperimentConfig:
    family: str = "gaussian"
    family_param: Optional[float] = None
    theta_max: Optional[float] = None
    theta_grid: List[float] = field(default_factory=lambda: [0.5])
    b_grid: List[float] = field(default_factory=lambda: [1.0, 2.0, 5.0, 10.0])
    k_list: List[int] = field(default_factory=lambda: [1, 2])
    n_replicates: int = 100_000
    master_seed: Optional[int] = None
    max_steps: int = 10_000_000
    budget_policy: str = "error"
    quad_abs_tol: float = 1e-13
    quad_rel_tol: float = 1e-11
    quad_max_subdivisions: int = 200
    truncation_radius: float = 12.0
    rate_fit_b_grid: List[float] = field(default_factory=lambda: [0.1 * i for i in range(1, 11)])
    C: Optional[float] = None
    r: Optional[float] = None
    transport_b_grid: List[float] = field(default_factory=lambda: [2.0, 4.0, 6.0, 8.0, 10.0, 12.0])
    wald_b_grid: List[float] = field(default_factory=lambda: [4.0, 8.0, 12.0])
    renewal_b_grid: List[float] = field(default_factory=lambda: [8.0])
    renewal_y: float = 0.5
    small_drift_theta_grid: List[float] = field(default_factory=lambda: [0.025, 0.05, 0.1, 0.2])
    small_drift_b_grid: List[float] = field(default_factory=lambda: [0.1, 0.5, 1.0, 2.0, 5.0])
    a1_cases: List[Tuple[float, int]] = field(default_factory=lambda: [(1.0, 2), (2.0, 3), (0.5, 5)])
    a2_k: int = 2
    a2_theta_grid: List[float] = field(default_factory=lambda: [5.0, 10.0, 25.0, 50.0])
    out_dir: str = "reports"
    format: str = "both"
    workers: int = 1
    source: str = field(default="<defaults>", compare=False)

    # -- derived objects -------------------------------------------------

    def make_family(self) -> TiltedFamily:
        qc = QuadratureConfig(self.quad_abs_tol, self.quad_rel_tol,
                              self.quad_max_subdivisions, self.truncation_radius)
        kw = {"quadrature": qc}
        if self.theta_max is not None:
            kw["theta_max"] = self.theta_max
        if self.family == "gaussian":
            return TiltedFamily.gaussian(**kw)
        if self.family == "uniform":
            if self.family_param is None:
                return TiltedFamily.uniform(**kw)
            return TiltedFamily.uniform(self.family_param, **kw)
        if self.family_param is None:
            raise ConfigError("point_mass needs family_param", field="family_param")
        return TiltedFamily.point_mass(self.family_param, **kw)

    def make_budget(self) -> SimBudget:
        return SimBudget(self.max_steps, BudgetPolicy(self.budget_policy))

    def canonical(self) -> str:
        """Key-sorted text of every value that can affect a result."""
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            if f.name in _NON_SEMANTIC or f.name == "source":
                continue
            lines.append(f"{f.name}={getattr(self, f.name)!r}")
        return "\n".join(lines)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    # -- validation ------------------------------------------------------

    def validate(self, subcommand: Optional[str] = None) -> "ExperimentConfig":
        if self.master_seed is None:
            raise ConfigError("master_seed is required", field="master_seed")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed must be an unsigned 64-bit integer", field="master_seed")
        for name in ("theta_grid", "b_grid", "k_list", "rate_fit_b_grid", "transport_b_grid",
                     "wald_b_grid", "renewal_b_grid", "small_drift_theta_grid",
                     "small_drift_b_grid", "a1_cases", "a2_theta_grid"):
            if not getattr(self, name):
                raise ConfigError("grid must be nonempty", field=name)
        for name in ("theta_grid", "small_drift_theta_grid", "a2_theta_grid"):
            if any(t < 0 for t in getattr(self, name)):
                raise ConfigError("tilts must be nonnegative", field=name)
        for name in ("b_grid", "rate_fit_b_grid", "transport_b_grid", "wald_b_grid",
                     "renewal_b_grid", "small_drift_b_grid"):
            if any(b < 0 for b in getattr(self, name)):
                raise ConfigError("levels must be nonnegative", field=name)
        if any(k < 1 for k in self.k_list):
            raise ConfigError("moment orders must be >= 1", field="k_list")
        if self.n_replicates < 1:
            raise ConfigError("n_replicates must be positive", field="n_replicates")
        if subcommand not in (None, "simulate", "counterexample-a1") and self.n_replicates < 1000:
            raise ConfigError("verifier subcommands need n_replicates >= 1000",
                              field="n_replicates")
        if self.max_steps < 1000:
            raise ConfigError("max_steps must be >= 1000", field="max_steps")
        if (self.C is None) != (self.r is None):
            raise ConfigError("C and r must be given together", field="C")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1", field="workers")
        try:
            self.make_family()
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc), field="family") from exc
        return self


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    values: Dict[str, Any] = {}
    seen: Dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError("expected 'key = value'", line=lineno)
        if key not in SCHEMA:
            raise ConfigError("unknown key", line=lineno, field=key)
        if key in seen:
            raise ConfigError(f"duplicate key (first on line {seen[key]})", line=lineno, field=key)
        seen[key] = lineno
        parser = SCHEMA[key][0]
        try:
            values[key] = parser(val.strip())
        except ValueError as exc:
            raise ConfigError(f"bad value {val.strip()!r}: {exc}", line=lineno, field=key) from exc
    return ExperimentConfig(**values, source=source)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(text, str(path))


def schema_text() -> str:
    """Human-readable schema table."""
    rows = [f"{'key':<24} {'unit':<11} {'default':<28} description"]
    for key, (_, default, unit, doc) in SCHEMA.items():
        shown = "(required)" if key == "master_seed" else repr(default)
        if len(shown) > 27:
            shown = shown[:24] + "..."
        rows.append(f"{key:<24} {unit:<11} {shown:<28} {doc}")
    return "\n".join(rows)
