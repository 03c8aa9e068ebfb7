"""Command-line experiment runner.

``overshoot-lab <subcommand> --config FILE [--seed N] [--out DIR] [--format F]
[--workers N] [--quiet]``

Exit status: 0 when no asserted inequality fails (for the counterexample
subcommands, 0 when the predicted failure is reproduced), 1 otherwise,
2 for configuration errors and 3 for simulation errors.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from contextlib import contextmanager
from dataclasses import asdict, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from . import __version__, expfam
from .bounds import (
    BOUND_COLUMNS, FAIL, BoundInputs, RateFit, bound_row, classical_bound_ladder,
    counterexample_deterministic, counterexample_uniform_tilt, fit_rate_from_gaps,
    lorden_ratio, moment_gap_series, verdict,
)
from .config import ExperimentConfig, load_config, schema_text
from .errors import ConfigError, InsufficientSignal, OvershootLabError
from .expfam import TiltedFamily
from .ladder import OvershootBatch, resolve_workers, simulate_overshoots
from .reporting import emit_report
from .rng import RngStream
from .stationary import (
    Estimate, LadderPopulation, build_population, check_renewal_equation, limit_moment,
    sample_moment,
)
from .transport import TRANSPORT_COLUMNS, tau_wald_check, transport_report

SUBCOMMANDS = ("simulate", "bounds", "small-drift", "counterexample-a1", "counterexample-a2",
               "transport", "renewal-check", "rate-fit", "report")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_SIM = 0, 1, 2, 3

SIMULATE_COLUMNS = ["theta", "b", "n", "censored", "tau_mean", "tau_se", "overshoot_mean",
                    "overshoot_se", "overshoot_m2", "overshoot_m2_se"]
BOUNDS_COLUMNS = BOUND_COLUMNS + ["rhs_classical_ladder", "rhs_classical_ladder_se",
                                  "verdict_classical_ladder", "ck1_asserted"]
SMALL_DRIFT_COLUMNS = ["theta", "b", "k", "mc", "se", "n", "censored", "rhs_ck1",
                       "verdict_ck1", "theta_k_proxy"]
COUNTEREXAMPLE_COLUMNS = ["case", "theta", "b", "k", "c", "lhs", "se", "n", "censored", "rhs",
                          "verdict", "note"]
TRANSPORT_CLI_COLUMNS = TRANSPORT_COLUMNS + ["fit_slope", "fit_r2", "verdict_coupling",
                                             "verdict_tv"]
WALD_COLUMNS = ["theta", "b", "n", "censored", "mu", "tau_mean", "tau_se", "overshoot_mean",
                "overshoot_se", "residual", "residual_se", "kappa", "continuity_error",
                "envelope", "verdict"]
RENEWAL_COLUMNS = ["theta", "b", "y", "lhs", "lhs_se", "rhs", "rhs_se", "difference",
                   "combined_se", "n_overshoot", "n_ladder", "censored", "verdict"]
RATE_FIT_COLUMNS = ["theta", "k", "b", "mc", "se", "limit", "limit_se", "diff", "combined_se",
                    "used", "C_hat", "r_hat", "fit_r2"]

COUPLING_TOL = 1e-9
TV_TOL = 1e-12


class CellError(OvershootLabError):
    """A simulation error tagged with the grid cell that raised it."""


@contextmanager
def _cell(**coords):
    try:
        yield
    except CellError:
        raise
    except OvershootLabError as exc:
        where = ", ".join(f"{k}={v}" for k, v in coords.items())
        raise CellError(f"[{where}] {type(exc).__name__}: {exc}") from exc


class Runner:
    """Executes pipelines for one validated configuration.

    Every sample is drawn from ``root.child(<pipeline>, ...)`` so a cell gets
    the same numbers whether it runs alone or inside ``report``.
    """

    def __init__(self, config: ExperimentConfig, out_dir: Path, fmt: str,
                 workers: int, quiet: bool = False):
        self.config = config
        self.out_dir = Path(out_dir)
        self.fmt = fmt
        self.workers = workers
        self.quiet = quiet
        self.family = config.make_family()
        self.budget = config.make_budget()
        self.root = RngStream.root(config.master_seed)
        self.n = config.n_replicates
        self._batches: Dict[Tuple, OvershootBatch] = {}
        self._pops: Dict[float, LadderPopulation] = {}
        self._fits: Dict[float, Dict[int, Optional[RateFit]]] = {}
        self._gaps: Dict[float, dict] = {}
        self.written: List[Path] = []

    # -- shared samples ----------------------------------------------------

    def batch(self, theta: float, b: float, *labels) -> OvershootBatch:
        key = (theta, b) + labels
        if key not in self._batches:
            with _cell(theta=theta, b=b):
                stream = self.root.child(*labels)
                self._batches[key] = simulate_overshoots(self.family, theta, b, self.n, stream,
                                                         self.budget, self.workers)
        return self._batches[key]

    def population(self, theta: float) -> LadderPopulation:
        if theta not in self._pops:
            with _cell(theta=theta, b=0.0):
                self._pops[theta] = build_population(
                    self.family, theta, self.n, self.root.child("ladder", repr(theta)),
                    self.budget, self.workers)
        return self._pops[theta]

    def rate_fits(self, theta: float) -> Dict[int, Optional[RateFit]]:
        if theta not in self._fits:
            pop = self.population(theta)
            limits = {k: limit_moment(pop, k) for k in self.config.k_list}
            with _cell(theta=theta, stage="rate-fit"):
                gaps = moment_gap_series(self.family, theta, limits, self.config.rate_fit_b_grid,
                                         self.n, self.root.child("rate-fit", repr(theta)),
                                         self.budget, self.workers)
            fits = {}
            for k, pts in gaps.items():
                try:
                    fits[k] = fit_rate_from_gaps(pts)
                except InsufficientSignal as exc:
                    self.say(f"[rate-fit] theta={theta} k={k}: {exc}", err=True)
                    fits[k] = None
            self._gaps[theta] = gaps
            self._fits[theta] = fits
        return self._fits[theta]

    def constants(self, theta: float, k: int) -> Tuple[Optional[float], Optional[float]]:
        """``(C, r)`` for the envelopes: config override, else converted rate fit."""
        if self.config.C is not None:
            return self.config.C, self.config.r
        fit = self.rate_fits(theta).get(k)
        if fit is None or not (fit.r_hat > 0 and fit.C_hat > 0):
            return None, None
        A = lorden_ratio(self.family, theta, k)
        inputs = BoundInputs.from_amplitude(A, fit.C_hat, fit.r_hat, k, theta)
        return inputs.C_const, inputs.r

    # -- output --------------------------------------------------------------

    def say(self, msg: str, err: bool = False) -> None:
        if err:
            print(msg, file=sys.stderr)
        elif not self.quiet:
            print(msg)

    def meta(self, subcommand: str, rows, **extra) -> dict:
        censored = sum(int(_get(r, "censored") or 0) for r in rows)
        m = {
            "tool": "overshoot-lab",
            "version": __version__,
            "subcommand": subcommand,
            "config_hash": self.config.config_hash(),
            "seed": self.config.master_seed,
            "family": self.family.base.description,
            "n_replicates": self.n,
            "censored_total": censored,
            "C_r_source": "config" if self.config.C is not None else "rate-fit",
        }
        m.update(extra)
        return m

    def emit(self, rows, stem: str, columns, meta: dict) -> None:
        self.written.extend(emit_report(rows, self.fmt, self.out_dir, stem, columns, meta))

    def save_population(self) -> None:
        theta = self.config.theta_grid[0]
        path = self.out_dir / "ladder_population.txt"
        path.parent.mkdir(parents=True, exist_ok=True)
        self.population(theta).save(path)
        if path not in self.written:
            self.written.append(path)

    # -- pipelines -----------------------------------------------------------

    def run_simulate(self) -> bool:
        rows = []
        for th in self.config.theta_grid:
            for b in self.config.b_grid:
                bt = self.batch(th, b, "bounds", repr(th), "b", repr(b))
                tau = sample_moment(bt.tau.astype(float), 1)
                m1 = sample_moment(bt.overshoot, 1)
                m2 = sample_moment(bt.overshoot, 2)
                rows.append(dict(theta=th, b=b, n=bt.n, censored=bt.censored,
                                 tau_mean=tau.value, tau_se=tau.se, overshoot_mean=m1.value,
                                 overshoot_se=m1.se, overshoot_m2=m2.value,
                                 overshoot_m2_se=m2.se))
                self.say(f"[simulate] theta={th:g} b={b:g}: E[tau]={tau.value:.6g} "
                         f"E[R]={m1.value:.6g} censored={bt.censored}")
        self.emit(rows, "simulate", SIMULATE_COLUMNS, self.meta("simulate", rows))
        self.save_population()
        return True

    def run_bounds(self) -> bool:
        rows, ok = [], True
        for th in self.config.theta_grid:
            pop = self.population(th)
            for b in self.config.b_grid:
                bt = self.batch(th, b, "bounds", repr(th), "b", repr(b))
                for k in self.config.k_list:
                    C, r = self.constants(th, k)
                    row = bound_row(self.family, th, b, k, bt.overshoot, bt.censored, C, r)
                    lad = classical_bound_ladder(pop.heights, k)
                    v_lad = verdict(row.mc, math.hypot(row.se, lad.se), lad.value)
                    ck1_asserted = math.isfinite(row.b0) and b >= row.b0
                    d = row.as_dict()
                    d.update(rhs_classical_ladder=lad.value, rhs_classical_ladder_se=lad.se,
                             verdict_classical_ladder=v_lad, ck1_asserted=ck1_asserted)
                    rows.append(d)
                    asserted = [row.verdict_classical, v_lad, row.verdict_corrected]
                    if ck1_asserted:
                        asserted.append(row.verdict_ck1)
                    ok &= FAIL not in asserted
                    self.say(f"[bounds] theta={th:g} b={b:g} k={k}: "
                             f"classical={row.verdict_classical} ladder={v_lad} "
                             f"corrected={row.verdict_corrected or 'n/a'} "
                             f"ck1={row.verdict_ck1}{'' if ck1_asserted else ' (b<b0)'} "
                             f"strengthened={row.verdict_strengthened}")
        self.emit(rows, "bounds", BOUNDS_COLUMNS, self.meta("bounds", rows))
        self.save_population()
        return ok

    def run_small_drift(self) -> bool:
        if self.family.base.non_standard:
            raise ConfigError("small-drift needs a standard family", field="family")
        rows, ok = [], True
        thetas = sorted(self.config.small_drift_theta_grid)
        proxy: Dict[int, Optional[float]] = {k: None for k in self.config.k_list}
        per_theta: Dict[Tuple[float, int], bool] = {}
        for th in thetas:
            for b in self.config.small_drift_b_grid:
                bt = self.batch(th, b, "small-drift", repr(th), "b", repr(b))
                for k in self.config.k_list:
                    row = bound_row(self.family, th, b, k, bt.overshoot, bt.censored)
                    rows.append(dict(theta=th, b=b, k=k, mc=row.mc, se=row.se, n=row.n,
                                     censored=row.censored, rhs_ck1=row.rhs_ck1,
                                     verdict_ck1=row.verdict_ck1))
                    per_theta[(th, k)] = per_theta.get((th, k), True) and row.verdict_ck1 == "pass"
                    ok &= row.verdict_ck1 != FAIL
                    self.say(f"[small-drift] theta={th:g} b={b:g} k={k}: ck1={row.verdict_ck1}")
        for k in self.config.k_list:
            for th in thetas:
                if per_theta[(th, k)]:
                    proxy[k] = th
        for row in rows:
            row["theta_k_proxy"] = math.nan if proxy[row["k"]] is None else proxy[row["k"]]
        self.emit(rows, "small_drift", SMALL_DRIFT_COLUMNS, self.meta("small-drift", rows))
        return ok

    def _a1_rows(self):
        rows, ok = [], True
        for c, k in self.config.a1_cases:
            ce = counterexample_deterministic(c, k)
            rows.append(dict(case="a1", theta=math.nan, b=0.0, k=k, c=ce.c, lhs=float(ce.lhs),
                             se=0.0, n=0, censored=0, rhs=float(ce.rhs),
                             verdict=FAIL if ce.fails else "pass",
                             note=f"exact {ce.lhs} > {ce.rhs}"))
            rows.append(dict(case="a1-window", theta=math.nan, b=ce.midpoint, k=k, c=ce.c,
                             lhs=ce.midpoint_lhs, se=0.0, n=0, censored=0, rhs=float(ce.rhs),
                             verdict=FAIL if ce.midpoint_fails else "pass",
                             note=f"window (0, {ce.window[1]!r})"))
            ok &= ce.fails and ce.midpoint_fails
            self.say(f"[counterexample-a1] c={c:g} k={k}: LHS={ce.lhs} RHS={ce.rhs} "
                     f"strengthened={'fail' if ce.fails else 'pass'}")
        return rows, ok

    def _a2_rows(self):
        qc = self.family.quadrature
        fam = TiltedFamily.uniform(quadrature=qc)
        k = self.config.a2_k
        with _cell(stage="counterexample-a2", k=k):
            rep = counterexample_uniform_tilt(k, sorted(self.config.a2_theta_grid), self.n,
                                              self.root.child("counterexample-a2"), self.budget,
                                              fam, self.workers)
        rows = [dict(case="a2-limit", theta=math.inf, b=rep.b, k=k, c=rep.a, lhs=rep.limit_lhs,
                     se=0.0, n=0, censored=0, rhs=rep.limit_rhs,
                     verdict=FAIL if rep.limit_fails else "pass", note="theta -> infinity")]
        for row in rep.rows:
            rows.append(dict(case="a2", theta=row.theta, b=row.b, k=k, c=rep.a, lhs=row.mc,
                             se=row.se, n=row.n, censored=row.censored,
                             rhs=row.rhs_strengthened, verdict=row.verdict, note=""))
            self.say(f"[counterexample-a2] theta={row.theta:g} b={row.b:.6g} k={k}: "
                     f"strengthened={row.verdict}")
        self.say(f"[counterexample-a2] limit: {rep.limit_lhs:.6g} vs {rep.limit_rhs:.6g}; "
                 f"theta0 proxy={rep.theta0_proxy}")
        return rows, rep.limit_fails and rep.theta0_proxy is not None

    def run_counterexample(self, which: str) -> bool:
        rows, ok = [], True
        if which in ("a1", "both"):
            r, o = self._a1_rows()
            rows += r
            ok &= o
        if which in ("a2", "both"):
            r, o = self._a2_rows()
            rows += r
            ok &= o
        self.emit(rows, "counterexamples", COUNTEREXAMPLE_COLUMNS,
                  self.meta(f"counterexample-{which}", rows))
        return ok

    def run_transport(self) -> bool:
        rows, wald_rows, ok = [], [], True
        for th in self.config.theta_grid:
            pop = self.population(th)
            with _cell(theta=th, stage="transport"):
                rep = transport_report(self.family, th, self.config.transport_b_grid, self.n,
                                       self.root.child("transport", repr(th)), self.budget,
                                       pop, self.config.C, self.config.r, self.workers)
            for tr in rep.rows:
                v_cp = "pass" if abs(tr.coupling_exact - tr.w1) <= COUPLING_TOL else FAIL
                v_tv = "pass" if tr.smoothed_tv <= min(1.0, tr.w1) + TV_TOL else FAIL
                ok &= FAIL not in (v_cp, v_tv)
                rows.append(dict(asdict(tr), fit_slope=rep.slope, fit_r2=rep.fit_r2,
                                 verdict_coupling=v_cp, verdict_tv=v_tv))
                self.say(f"[transport] theta={th:g} b={tr.b:g}: W1={tr.w1:.4g} "
                         f"TV~={tr.smoothed_tv:.4g} coupling={v_cp} tv={v_tv}")
            self.say(f"[transport] theta={th:g}: ln W1 slope={rep.slope:.4g} R2={rep.fit_r2:.3g}")
            for b in self.config.wald_b_grid:
                with _cell(theta=th, b=b, stage="wald"):
                    w = tau_wald_check(self.family, th, b, self.n,
                                       self.root.child("wald", repr(th), repr(b)), self.budget,
                                       pop, self.config.C, self.config.r, self.workers)
                v = "pass" if w.within_3se else FAIL
                ok &= v != FAIL
                wald_rows.append(dict(asdict(w), verdict=v))
                self.say(f"[wald] theta={th:g} b={b:g}: residual={w.residual:.3g} "
                         f"se={w.residual_se:.3g} {v}")
        self.emit(rows, "transport", TRANSPORT_CLI_COLUMNS, self.meta("transport", rows))
        self.emit(wald_rows, "wald", WALD_COLUMNS, self.meta("transport", wald_rows))
        return ok

    def run_renewal(self) -> bool:
        rows, ok = [], True
        y = self.config.renewal_y
        for th in self.config.theta_grid:
            for b in self.config.renewal_b_grid:
                with _cell(theta=th, b=b, stage="renewal"):
                    rc = check_renewal_equation(self.family, th, b, y,
                                                self.root.child("renewal", repr(th), repr(b)),
                                                self.budget, self.n, workers=self.workers)
                v = "pass" if rc.within_3se else FAIL
                ok &= v != FAIL
                rows.append(dict(asdict(rc), theta=th, difference=rc.difference,
                                 combined_se=rc.combined_se, verdict=v))
                self.say(f"[renewal-check] theta={th:g} b={b:g} y={y:g}: lhs={rc.lhs:.5g} "
                         f"rhs={rc.rhs:.5g} {v}")
        self.emit(rows, "renewal", RENEWAL_COLUMNS, self.meta("renewal-check", rows))
        return ok

    def run_rate_fit(self) -> bool:
        rows = []
        for th in self.config.theta_grid:
            fits = self.rate_fits(th)
            for k, pts in self._gaps[th].items():
                fit = fits[k]
                for p in pts:
                    rows.append(dict(theta=th, k=k, b=p.b, mc=p.mc, se=p.se, limit=p.limit,
                                     limit_se=p.limit_se, diff=p.diff,
                                     combined_se=p.combined_se,
                                     used=fit is not None and p.b in fit.used,
                                     C_hat=fit.C_hat if fit else math.nan,
                                     r_hat=fit.r_hat if fit else math.nan,
                                     fit_r2=fit.fit_quality if fit else math.nan))
                if fit:
                    self.say(f"[rate-fit] theta={th:g} k={k}: C={fit.C_hat:.4g} "
                             f"r={fit.r_hat:.4g} R2={fit.fit_quality:.3g} "
                             f"points={len(fit.used)}")
        self.emit(rows, "rate_fit", RATE_FIT_COLUMNS, self.meta("rate-fit", rows))
        return True

    def run(self, subcommand: str) -> bool:
        if subcommand == "simulate":
            return self.run_simulate()
        if subcommand == "bounds":
            return self.run_bounds()
        if subcommand == "small-drift":
            return self.run_small_drift()
        if subcommand == "counterexample-a1":
            return self.run_counterexample("a1")
        if subcommand == "counterexample-a2":
            return self.run_counterexample("a2")
        if subcommand == "transport":
            return self.run_transport()
        if subcommand == "renewal-check":
            return self.run_renewal()
        if subcommand == "rate-fit":
            return self.run_rate_fit()
        if subcommand == "report":
            ok = self.run_simulate()
            ok &= self.run_rate_fit()
            ok &= self.run_bounds()
            if not self.family.base.non_standard:
                ok &= self.run_small_drift()
            ok &= self.run_transport()
            ok &= self.run_renewal()
            ok &= self.run_counterexample("both")
            return ok
        raise ValueError(f"unknown subcommand {subcommand!r}")


def _get(row, name):
    return row.get(name) if isinstance(row, dict) else getattr(row, name, None)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="overshoot-lab",
                                description="Monte Carlo checks of overshoot moment bounds.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("subcommand", choices=SUBCOMMANDS + ("schema",))
    p.add_argument("--config", help="key = value experiment file")
    p.add_argument("--seed", type=int, help="override master_seed")
    p.add_argument("--out", help="output directory (overrides out_dir)")
    p.add_argument("--format", choices=("csv", "json", "both"), help="report format")
    p.add_argument("--workers", type=int,
                   help="worker processes (fallback: $OVERSHOOT_LAB_WORKERS, then config)")
    p.add_argument("--quiet", action="store_true", help="suppress per-cell verdict lines")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.subcommand == "schema":
        print(schema_text())
        return EXIT_OK
    try:
        if not args.config:
            raise ConfigError("--config is required")
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, master_seed=args.seed)
        cfg.validate(args.subcommand)
    except ConfigError as exc:
        print(f"ConfigError: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.workers is not None:
        workers = resolve_workers(args.workers)
    elif os.environ.get("OVERSHOOT_LAB_WORKERS"):
        workers = resolve_workers(None)
    else:
        workers = cfg.workers
    runner = Runner(cfg, Path(args.out or cfg.out_dir), args.format or cfg.format, workers,
                    args.quiet)
    try:
        ok = runner.run(args.subcommand)
    except ConfigError as exc:
        print(f"ConfigError: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OvershootLabError as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_SIM
    if not args.quiet:
        for path in runner.written:
            print(f"wrote {path}")
    return EXIT_OK if ok else EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
