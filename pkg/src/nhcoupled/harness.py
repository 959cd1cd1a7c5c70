"""Benchmark scenarios, drift summary table and CSV/SVG emission."""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .analysis import (DRIFT_FACTOR, DRIFT_FLOOR, DriftReport, driver_regime, drift_report, monodromy,
                       poincare_sections)
from .dynamics import invariant_series
from .integrators import (DEFAULT_SETTINGS, BENCHMARK_METHODS, SolverSettings, StepFailure, StepperKind,
                          Trajectory, integrate)
from .model import FullState, catalog

log = logging.getLogger(__name__)

OSCILLATING_ZDOT = 1.8973666
ROTATING_ZDOT = 2.82842712

COLUMNS = (
    (0.0, "oscillating"),
    (0.0, "rotating"),
    (0.1, "oscillating"),
    (0.1, "rotating"),
)
COLUMN_TITLES = ("eps=0 osc", "eps=0 rot", "eps!=0 osc", "eps!=0 rot")

BOUNDED, DRIFT = "●", "○"

# reference table; symbols per cell are (driver energy, passenger energy, latitude)
REFERENCE_TABLE = {
    "dla0.5": ("●●●", "●●●", "●●●", "○○○"),
    "dla0.4": ("○●○", "○●○", "○●○", "○○○"),
    "dla01": ("●●●", "●●●", "●●●", "○○○"),
    "lf": ("●●●", "●●●", "●●●", "●●●"),
    "dd": ("○○○", "○○○", "○○○", "○○○"),
}


@dataclass(frozen=True)
class Scenario:
    """One benchmark run: system, perturbation, method, step and initial data."""

    system: str
    epsilon: float
    method: str
    h: float
    t_end: float
    x0: Tuple[float, ...]
    z0: float
    xdot0: Tuple[float, ...]
    zdot0: float
    log_every: int = 1

    def __post_init__(self):
        StepperKind.from_name(self.method)
        for name in ("epsilon", "h", "t_end", "z0", "zdot0"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.h <= 0 or self.t_end <= 0:
            raise ValueError("step size and t_end must be positive")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")
        if len(self.x0) != len(self.xdot0):
            raise ValueError("x0 and xdot0 must have the same length")

    @property
    def regime(self) -> str:
        return driver_regime(catalog(self.system, self.epsilon), self.z0, self.zdot0)

    @property
    def stem(self) -> str:
        """File stem ``<system>[-<regime>]_<eps>_<method>``."""
        system = self.system
        spec = catalog(self.system, self.epsilon)
        # a periodic driver with a potential can either oscillate or rotate
        if spec.z_periodic and any(spec.driver_force(z) != 0.0 for z in np.linspace(0.0, 6.0, 7)):
            system = f"{system}-{self.regime}"
        return f"{system}_{self.epsilon:g}_{self.method}"

    def initial_state(self) -> FullState:
        return FullState(np.array(self.x0, dtype=float), float(self.z0), np.array(self.xdot0, dtype=float),
                         float(self.zdot0))


def builtin_scenarios(methods: Sequence[str] = BENCHMARK_METHODS) -> List[Scenario]:
    """The 30 reference runs: 2 knife-edge and 4 CVT set-ups, each with every method."""
    out = []
    for eps in (0.0, 0.1):
        for m in methods:
            out.append(Scenario("knife_edge", eps, m, math.pi / 10, 100.0, (0.0, 0.0), math.pi / 2,
                                (0.0, 0.0), 1.0, log_every=1))
    for eps, regime in COLUMNS:
        zd = OSCILLATING_ZDOT if regime == "oscillating" else ROTATING_ZDOT
        for m in methods:
            out.append(Scenario("cvt_pendulum", eps, m, 0.1, 3000.0, (1.0, 1.0), 0.0, (0.0, 0.0), zd,
                                log_every=10))
    return out


@dataclass
class ScenarioResult:
    scenario: Scenario
    trajectory: Optional[Trajectory]
    reports: Dict[str, DriftReport]
    latitude: Optional[Tuple[np.ndarray, np.ndarray]]
    failure: Optional[str] = None
    files: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.failure is None

    def symbols(self) -> str:
        """Three-symbol cell ``(h, E, latitude)``; ``-`` marks a missing entry."""
        out = ""
        for key in ("h", "E", "latitude"):
            rep = self.reports.get(key)
            out += "-" if rep is None else (BOUNDED if rep.bounded else DRIFT)
        return out


def run_scenario(scenario: Scenario, out_dir: Optional[str] = None, drift_factor: float = DRIFT_FACTOR,
                 floor: float = DRIFT_FLOOR, settings: SolverSettings = DEFAULT_SETTINGS,
                 keep_trajectory: bool = True) -> ScenarioResult:
    """Integrate a scenario, classify its invariants and optionally write CSV/SVG files."""
    spec = catalog(scenario.system, scenario.epsilon)
    stepper = StepperKind.from_name(scenario.method)
    failure = None
    try:
        traj = integrate(spec, stepper, scenario.initial_state(), scenario.h, scenario.t_end, settings=settings)
    except StepFailure as exc:
        failure = str(exc)
        traj = exc.partial
        log.error("%s: %s", scenario.stem, exc)
    reports: Dict[str, DriftReport] = {}
    latitude = None
    files: List[str] = []
    if traj is None or len(traj) < 10:
        return ScenarioResult(scenario, traj, reports, latitude, failure or "too few steps", files)

    big_h, small_h, energy = invariant_series(spec, traj.x, traj.z, traj.xdot, traj.zdot)
    for key, series in (("H", big_h), ("h", small_h), ("E", energy)):
        reports[key] = drift_report(traj.times, series, key, drift_factor, floor)

    axis = None
    if spec.m == 2:
        axis = monodromy(spec, scenario.z0, scenario.zdot0).axis
    if axis is not None:
        sections = poincare_sections(traj, spec)
        if len(sections) >= 10:
            lat = sections.u @ axis
            latitude = (sections.times, lat)
            reports["latitude"] = drift_report(sections.times, lat, "latitude", drift_factor, floor)

    if out_dir is not None:
        files = _emit(scenario, traj.times, (big_h, small_h, energy), latitude, Path(out_dir))
    return ScenarioResult(scenario, traj if keep_trajectory else None, reports, latitude, failure, files)


def _emit(scenario, times, series, latitude, out_dir: Path) -> List[str]:
    out_dir.mkdir(parents=True, exist_ok=True)
    stride = scenario.log_every
    idx = np.arange(0, len(times), stride)
    if idx[-1] != len(times) - 1:
        idx = np.append(idx, len(times) - 1)
    errs = [np.abs(s - s[0])[idx] for s in series]
    stem = out_dir / scenario.stem
    files = []
    path = emit_csv(("t", "H_err", "h_err", "E_err"), [times[idx], *errs], f"{stem}.invariants.csv")
    files.append(path)
    plot = {name: (times[idx], e) for name, e in zip(("H", "h", "E"), errs)}
    files.append(emit_svg_plot(plot, f"{stem}.invariants.svg", log_scale=True,
                               title=f"{scenario.stem}: invariant errors", ylabel="|I(t) - I(0)|"))
    if latitude is not None:
        t, lat = latitude
        files.append(emit_csv(("t", "latitude"), [t, lat], f"{stem}.latitude.csv"))
        files.append(emit_svg_plot({"latitude error": (t, np.abs(lat - lat[0]))}, f"{stem}.latitude.svg",
                                   log_scale=True, title=f"{scenario.stem}: latitude at sections",
                                   ylabel="|lat - lat(0)|"))
    return files


def _run_packed(args):
    scenario, out_dir, drift_factor, floor, settings = args
    return run_scenario(scenario, out_dir, drift_factor, floor, settings, keep_trajectory=False)


def run_all(scenarios: Sequence[Scenario], jobs: int = 1, out_dir: Optional[str] = None,
            drift_factor: float = DRIFT_FACTOR, floor: float = DRIFT_FLOOR,
            settings: SolverSettings = DEFAULT_SETTINGS) -> List[ScenarioResult]:
    """Run scenarios, in a process pool when ``jobs > 1``; results keep the input order."""
    packed = [(s, out_dir, drift_factor, floor, settings) for s in scenarios]
    if jobs <= 1 or len(scenarios) <= 1:
        return [_run_packed(p) for p in packed]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_packed, packed))


# -- summary table -----------------------------------------------------------


@dataclass
class SummaryTable:
    """Methods x driver set-ups grid of ``(h, E, latitude)`` symbol triples."""

    methods: Tuple[str, ...]
    cells: Dict[Tuple[str, int], str]

    def cell(self, method: str, column: int) -> str:
        return self.cells.get((method, column), "pending")

    def rows(self):
        for m in self.methods:
            yield m, tuple(self.cell(m, c) for c in range(len(COLUMNS)))

    def render(self) -> str:
        width = max(len(t) for t in COLUMN_TITLES) + 2
        lines = ["method".ljust(8) + "".join(t.center(width) for t in COLUMN_TITLES)]
        for m, cells in self.rows():
            lines.append(m.ljust(8) + "".join(c.center(width) for c in cells))
        return "\n".join(lines)

    def mismatches(self, reference: Dict[str, Sequence[str]] = REFERENCE_TABLE):
        """List of ``(method, column, symbol index, produced, expected)``."""
        out = []
        for m, cells in self.rows():
            for c, (got, want) in enumerate(zip(cells, reference[m])):
                if got == "pending":
                    out.append((m, c, None, got, want))
                    continue
                for i, (g, w) in enumerate(zip(got, want)):
                    if g != w:
                        out.append((m, c, i, g, w))
        return out

    def matches(self, reference: Dict[str, Sequence[str]] = REFERENCE_TABLE) -> bool:
        return not self.mismatches(reference)


def _column_of(scenario: Scenario) -> Optional[int]:
    if scenario.system != "cvt_pendulum":
        return None
    key = (0.0 if scenario.epsilon == 0.0 else 0.1, scenario.regime)
    return COLUMNS.index(key) if key in COLUMNS else None


def summary_table(results: Iterable[ScenarioResult], methods: Sequence[str] = BENCHMARK_METHODS) -> SummaryTable:
    cells = {}
    for res in results:
        col = _column_of(res.scenario)
        if col is None or res.scenario.method not in methods or not res.ok:
            continue
        cells[(res.scenario.method, col)] = res.symbols()
    return SummaryTable(tuple(methods), cells)


# -- emission ----------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def emit_csv(header: Sequence[str], columns: Sequence[np.ndarray], path) -> str:
    """Write equal-length columns under ``header``; an empty series yields a header-only file."""
    cols = [np.asarray(c, dtype=float).ravel() for c in columns]
    if len(cols) != len(header) or len({len(c) for c in cols}) > 1:
        raise ValueError("header and columns must match in count and columns in length")
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in zip(*cols))
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return str(path)


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def emit_svg_plot(series: Dict[str, Tuple[np.ndarray, np.ndarray]], path, log_scale: bool = False,
                  title: str = "", xlabel: str = "t", ylabel: str = "") -> str:
    """Self-contained 960x540 polyline chart; identical inputs give identical bytes."""
    width, height = 960, 540
    left, right, top, bottom = 80, 180, 40, 60
    pw, ph = width - left - right, height - top - bottom
    prepared = []
    for name, (t, y) in series.items():
        t = np.asarray(t, dtype=float)
        y = np.asarray(y, dtype=float)
        if log_scale:
            y = np.log10(np.maximum(np.abs(y), 1e-17))
        prepared.append((name, t, y))
    finite = [np.concatenate([p[1] for p in prepared]) if prepared else np.zeros(0),
              np.concatenate([p[2] for p in prepared]) if prepared else np.zeros(0)]
    tmin, tmax = (float(finite[0].min()), float(finite[0].max())) if finite[0].size else (0.0, 1.0)
    ymin, ymax = (float(finite[1].min()), float(finite[1].max())) if finite[1].size else (0.0, 1.0)
    if tmax <= tmin:
        tmax = tmin + 1.0
    if ymax <= ymin:
        ymin, ymax = ymin - 0.5, ymax + 0.5

    def px(t):
        return left + (t - tmin) / (tmax - tmin) * pw

    def py(y):
        return top + (ymax - y) / (ymax - ymin) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
           f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" font-size="16">{_esc(title)}</text>',
           f'<text x="{left + pw / 2:.1f}" y="{height - 15}" text-anchor="middle" font-size="14">'
           f'{_esc(xlabel)}</text>',
           f'<text x="20" y="{top + ph / 2:.1f}" text-anchor="middle" font-size="14" '
           f'transform="rotate(-90 20 {top + ph / 2:.1f})">{_esc(ylabel)}{" (log10)" if log_scale else ""}</text>']
    for i in range(5):
        tv = tmin + i * (tmax - tmin) / 4
        yv = ymin + i * (ymax - ymin) / 4
        out.append(f'<text x="{px(tv):.1f}" y="{top + ph + 18}" text-anchor="middle" font-size="11">{tv:.4g}</text>')
        label = f"1e{yv:.1f}" if log_scale else f"{yv:.3g}"
        out.append(f'<text x="{left - 6}" y="{py(yv) + 4:.1f}" text-anchor="end" font-size="11">{label}</text>')
    for j, (name, t, y) in enumerate(prepared):
        colour = _PALETTE[j % len(_PALETTE)]
        if t.size:
            pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(t, y))
            out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1" points="{pts}"/>')
        ly = top + 20 + 20 * j
        out.append(f'<line x1="{left + pw + 15}" y1="{ly}" x2="{left + pw + 40}" y2="{ly}" '
                   f'stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 46}" y="{ly + 4}" font-size="12">{_esc(name)}</text>')
    out.append("</svg>")
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write("\n".join(out) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return str(path)


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def default_jobs() -> int:
    return os.cpu_count() or 1


def shortened(scenarios: Sequence[Scenario], t_end: float) -> List[Scenario]:
    return [replace(s, t_end=t_end) for s in scenarios]
