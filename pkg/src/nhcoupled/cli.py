"""Command-line front end: ``list``, ``run``, ``reproduce`` and ``check``."""
from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from .analysis import DRIFT_FACTOR, DRIFT_FLOOR
from .checks import run_checks
from .harness import (COLUMN_TITLES, Scenario, builtin_scenarios, default_jobs, run_all, shortened,
                      summary_table)
from .integrators import DEFAULT_SETTINGS, SolverSettings, StepperKind
from .model import SYSTEM_IDS, CatalogError, SingularConstraintError, catalog

EXIT_OK, EXIT_CONFIG, EXIT_STEP, EXIT_MISMATCH = 0, 1, 2, 3

VECTOR_KEYS = {"x0", "xdot0"}
FLOAT_KEYS = {"eps", "dt", "t_end", "z0", "zdot0", "drift_factor", "drift_floor", "newton_tol"}
INT_KEYS = {"jobs", "log_every", "newton_max_iter"}
STR_KEYS = {"system", "method", "out"}
KNOWN_KEYS = VECTOR_KEYS | FLOAT_KEYS | INT_KEYS | STR_KEYS


class ConfigError(ValueError):
    """Invalid configuration file or flag value."""


@dataclass
class Config:
    values: Dict[str, object] = field(default_factory=dict)

    def get(self, key, default=None):
        return self.values.get(key, default)

    def settings(self) -> SolverSettings:
        try:
            return SolverSettings(
                newton_tol=float(self.get("newton_tol", DEFAULT_SETTINGS.newton_tol)),
                newton_max_iter=int(self.get("newton_max_iter", DEFAULT_SETTINGS.newton_max_iter)),
                constraint_tol=DEFAULT_SETTINGS.constraint_tol,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def drift(self):
        factor = float(self.get("drift_factor", DRIFT_FACTOR))
        floor = float(self.get("drift_floor", DRIFT_FLOOR))
        if factor < 0 or floor < 0:
            raise ConfigError("drift thresholds must be non-negative")
        return factor, floor


def _convert(key: str, raw):
    if key not in KNOWN_KEYS:
        raise ConfigError(f"unknown key {key!r}")
    if raw is None:
        return None
    try:
        if key in VECTOR_KEYS:
            vals = tuple(float(v) for v in str(raw).replace(",", " ").split())
            if not vals:
                raise ValueError("empty vector")
        elif key in FLOAT_KEYS:
            vals = float(raw)
        elif key in INT_KEYS:
            vals = int(raw)
        else:
            return str(raw).strip()
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    for v in np.atleast_1d(vals):
        if not math.isfinite(v):
            raise ConfigError(f"{key} must be finite")
    return vals


def parse_config_text(text: str) -> Config:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        out[key] = _convert(key, val)
    return Config(out)


def load_config(path: Optional[str], args: argparse.Namespace) -> Config:
    cfg = Config()
    if path:
        try:
            with open(path) as fh:
                cfg = parse_config_text(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for key in KNOWN_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            cfg.values[key] = _convert(key, val)
    return cfg


# -- commands ----------------------------------------------------------------


def cmd_list(out=None) -> int:
    out = out or sys.stdout
    out.write(f"{'system':<24}{'n_x':>4}{'r':>3}{'m':>3}  {'group':<8}{'rho':<11}{'eps':<4}\n")
    for name in SYSTEM_IDS:
        spec = catalog(name)
        eps = "yes" if name in ("cvt_pendulum", "knife_edge") else "no"
        out.write(f"{name:<24}{spec.n_x:>4}{spec.r:>3}{spec.m:>3}  {spec.group:<8}{spec.rho:<11}{eps:<4}\n")
    return EXIT_OK


def scenario_from_config(cfg: Config) -> Scenario:
    system = cfg.get("system")
    if not system:
        raise ConfigError("missing required key 'system'")
    try:
        spec = catalog(system, cfg.get("eps", 0.0))
    except CatalogError as exc:
        raise ConfigError(str(exc.args[0])) from exc
    x0 = cfg.get("x0", (0.0,) * spec.n_x)
    xdot0 = cfg.get("xdot0", (0.0,) * spec.n_x)
    if len(x0) != spec.n_x or len(xdot0) != spec.n_x:
        raise ConfigError(f"{system} needs x0 and xdot0 of length {spec.n_x}")
    z0 = cfg.get("z0", 0.0)
    resid = float(np.linalg.norm(spec.constraint(z0) @ np.asarray(xdot0)))
    if resid > DEFAULT_SETTINGS.constraint_tol:
        raise ConfigError(f"xdot0 violates the constraint at z0 (|A xdot| = {resid:.2e})")
    try:
        StepperKind.from_name(cfg.get("method", "dla0.5"))
        return Scenario(system, spec.epsilon, cfg.get("method", "dla0.5"), cfg.get("dt", 0.1),
                        cfg.get("t_end", 10.0), tuple(x0), z0, tuple(xdot0), cfg.get("zdot0", 1.0),
                        log_every=cfg.get("log_every", 1))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_run(cfg: Config, out=None) -> int:
    out = out or sys.stdout
    scenario = scenario_from_config(cfg)
    settings = cfg.settings()
    factor, floor = cfg.drift()
    try:
        scenario.regime
    except ArithmeticError as exc:
        raise ConfigError(f"unsupported driver data: {exc}") from exc
    res = run_all([scenario], 1, cfg.get("out", "out"), factor, floor, settings)[0]
    for key, rep in res.reports.items():
        out.write(f"{key:<9} {rep.classification:<8} slope={rep.slope:.3e} early_max={rep.early_max:.3e}\n")
    for path in res.files:
        out.write(f"wrote {path}\n")
    if not res.ok:
        out.write(f"step failure: {res.failure}\n")
        return EXIT_STEP
    return EXIT_OK


def cmd_reproduce(cfg: Config, out=None) -> int:
    out = out or sys.stdout
    settings = cfg.settings()
    factor, floor = cfg.drift()
    jobs = int(cfg.get("jobs", default_jobs()))
    if jobs < 1:
        raise ConfigError("jobs must be >= 1")
    scenarios = builtin_scenarios()
    if cfg.get("t_end") is not None:
        scenarios = shortened(scenarios, float(cfg.get("t_end")))
    start = time.perf_counter()
    results = run_all(scenarios, jobs, cfg.get("out"), factor, floor, settings)
    elapsed = time.perf_counter() - start
    failed = [r for r in results if not r.ok]
    out.write("knife edge, total energy H:\n")
    for r in results:
        if r.scenario.system == "knife_edge" and "H" in r.reports:
            out.write(f"  eps={r.scenario.epsilon:<4g} {r.scenario.method:<7} {r.reports['H'].classification}\n")
    table = summary_table(results)
    out.write("\ncvt_pendulum (driver energy, passenger energy, latitude); ● bounded, ○ drift\n")
    out.write(table.render() + "\n")
    mism = table.mismatches()
    for m, c, i, got, want in mism:
        which = "cell" if i is None else ("h", "E", "latitude")[i]
        out.write(f"mismatch: {m} {COLUMN_TITLES[c]} {which}: produced {got}, reference {want}\n")
    n_bad = sum(3 if i is None else 1 for _, _, i, _, _ in mism)
    out.write(f"{len(results)} runs in {elapsed:.1f} s with {jobs} worker(s); "
              f"{60 - n_bad}/60 table symbols agree\n")
    if failed:
        for r in failed:
            out.write(f"step failure in {r.scenario.stem}: {r.failure}\n")
        return EXIT_STEP
    return EXIT_OK if not mism else EXIT_MISMATCH


def cmd_check(cfg: Config, out=None) -> int:
    out = out or sys.stdout
    results = run_checks(cfg.settings())
    for r in results:
        out.write(r.line() + "\n")
    return EXIT_OK if all(r.passed for r in results) else EXIT_MISMATCH


# -- argument parsing --------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    defaults = (f"defaults: newton_tol={DEFAULT_SETTINGS.newton_tol:g}, "
                f"newton_max_iter={DEFAULT_SETTINGS.newton_max_iter}, "
                f"constraint_tol={DEFAULT_SETTINGS.constraint_tol:g}, drift_factor={DRIFT_FACTOR:g}, "
                f"drift_floor={DRIFT_FLOOR:g}, monodromy ODE rtol=atol=1e-12. "
                "Exit codes: 0 ok, 1 usage/config, 2 step failure, 3 verification mismatch.")
    parser = argparse.ArgumentParser(prog="nhcoupled", description="Nonholonomically coupled systems benchmark.",
                                     epilog=defaults)
    sub = parser.add_subparsers(dest="command")
    sub.add_parser("list", help="list catalog systems", epilog=defaults)

    def common(p):
        p.add_argument("--config", help="file of 'key = value' lines; flags override it")
        p.add_argument("--newton-tol", dest="newton_tol", help="Newton residual tolerance")
        p.add_argument("--drift-factor", dest="drift_factor", help="trend / early-amplitude ratio for drift")
        p.add_argument("--out", help="output directory for CSV/SVG files")

    run = sub.add_parser("run", help="run one scenario", epilog=defaults)
    common(run)
    run.add_argument("--system", choices=SYSTEM_IDS)
    run.add_argument("--eps")
    run.add_argument("--method", help="dla<alpha>, dla01, lf, dd or ref")
    run.add_argument("--dt")
    run.add_argument("--t-end", dest="t_end")
    run.add_argument("--x0", help="comma-separated passenger position")
    run.add_argument("--z0")
    run.add_argument("--xdot0", help="comma-separated passenger velocity (must satisfy the constraint)")
    run.add_argument("--zdot0")

    rep = sub.add_parser("reproduce", help="run the 30 reference scenarios and print the summary table",
                         epilog=defaults)
    common(rep)
    rep.add_argument("--jobs", help="worker processes (default: number of processors)")
    rep.add_argument("--t-end", dest="t_end", help="override every scenario's final time")

    chk = sub.add_parser("check", help="run the verification suite", epilog=defaults)
    chk.add_argument("--config")
    chk.add_argument("--newton-tol", dest="newton_tol")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    if args.command is None:
        parser.print_help()
        return EXIT_CONFIG
    try:
        if args.command == "list":
            return cmd_list()
        cfg = load_config(getattr(args, "config", None), args)
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "reproduce":
            return cmd_reproduce(cfg)
        return cmd_check(cfg)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    except SingularConstraintError as exc:
        sys.stderr.write(f"runtime error: {exc}\n")
        return EXIT_STEP


if __name__ == "__main__":
    sys.exit(main())
