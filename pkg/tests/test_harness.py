import math
from dataclasses import replace

import numpy as np
import pytest

from nhcoupled.analysis import drift_report
from nhcoupled.harness import (REFERENCE_TABLE, ROTATING_ZDOT, Scenario, ScenarioResult, builtin_scenarios,
                               emit_csv, emit_svg_plot, run_all, run_scenario, summary_table)


def knife(eps=0.0, method="dd"):
    return Scenario("knife_edge", eps, method, math.pi / 10, 100.0, (0.0, 0.0), math.pi / 2, (0.0, 0.0), 1.0)


def test_builtin_scenarios():
    sc = builtin_scenarios()
    assert len(sc) == 30
    knives = [s for s in sc if s.system == "knife_edge"]
    assert len(knives) == 10 and all(s.h == math.pi / 10 and s.t_end == 100.0 for s in knives)
    cvt = [s for s in sc if s.system == "cvt_pendulum"]
    assert sum(s.zdot0 == ROTATING_ZDOT for s in cvt) == 10
    assert {s.regime for s in cvt} == {"oscillating", "rotating"}
    assert len({s.stem for s in sc}) == 30


def test_scenario_validation():
    with pytest.raises(ValueError):
        replace(knife(), method="euler")
    with pytest.raises(ValueError):
        replace(knife(), h=-0.1)
    with pytest.raises(ValueError):
        replace(knife(), t_end=math.inf)


def test_stems():
    assert knife(0.1, "lf").stem == "knife_edge_0.1_lf"
    cvt = Scenario("cvt_pendulum", 0.0, "dla0.5", 0.1, 10.0, (1.0, 1.0), 0.0, (0.0, 0.0), ROTATING_ZDOT)
    assert cvt.stem == "cvt_pendulum-rotating_0_dla0.5"


def test_knife_edge_dd_run(tmp_path):
    res = run_scenario(knife(), str(tmp_path))
    assert res.ok
    assert res.reports["H"].errors.max() <= 1e-9
    assert len(res.files) == 2
    lines = (tmp_path / "knife_edge_0_dd.invariants.csv").read_text().splitlines()
    assert lines[0] == "t,H_err,h_err,E_err"
    assert len(lines) == 321
    times = [float(row.split(",")[0]) for row in lines[1:]]
    assert all(b > a for a, b in zip(times, times[1:]))


def test_knife_edge_lf_drifts():
    assert run_scenario(knife(0.1, "lf")).reports["H"].classification == "drift"


def test_outputs_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    sc = Scenario("cvt_pendulum", 0.1, "lf", 0.1, 60.0, (1.0, 1.0), 0.0, (0.0, 0.0), ROTATING_ZDOT,
                  log_every=10)
    fa = run_scenario(sc, str(a)).files
    fb = run_scenario(sc, str(b)).files
    assert len(fa) == 4
    for x, y in zip(fa, fb):
        assert open(x, "rb").read() == open(y, "rb").read()
    lat = (a / "cvt_pendulum-rotating_0.1_lf.latitude.csv").read_text().splitlines()
    assert lat[0] == "t,latitude"
    inv = (a / "cvt_pendulum-rotating_0.1_lf.invariants.csv").read_text().splitlines()
    assert len(inv) == 62


def test_emit_csv_shapes(tmp_path):
    p = tmp_path / "e.csv"
    emit_csv(("t", "latitude"), [[], []], p)
    assert p.read_text() == "t,latitude\n"
    emit_csv(("t", "latitude"), [[0, 1, 2], [0.5, 0.25, 0.125]], p)
    assert len(p.read_text().splitlines()) == 4
    with pytest.raises(ValueError):
        emit_csv(("t",), [[0, 1], [1, 2]], p)
    with pytest.raises(OSError):
        emit_csv(("t",), [[0]], tmp_path / "missing" / "x.csv")


def test_svg(tmp_path):
    p = tmp_path / "plot.svg"
    emit_svg_plot({"H": ([0, 1, 2], [0.0, 1e-3, 2e-3]), "E": ([0, 1, 2], [1, 2, 3])}, p, log_scale=True,
                  title="a < b")
    text = p.read_text()
    assert 'width="960" height="540"' in text
    assert text.count("<polyline") == 2 and ">H<" in text and ">E<" in text
    assert "a &lt; b" in text and "(log10)" in text
    emit_svg_plot({}, tmp_path / "empty.svg")


def _fake(method, eps, zd, symbols):
    t = np.linspace(0, 100, 101)
    reports = {}
    for key, sym in zip(("h", "E", "latitude"), symbols):
        reports[key] = drift_report(t, t if sym == "○" else np.zeros_like(t), key)
    sc = Scenario("cvt_pendulum", eps, method, 0.1, 100.0, (1.0, 1.0), 0.0, (0.0, 0.0), zd)
    return ScenarioResult(sc, None, reports, None)


def test_summary_table_matches_reference_when_fed_it():
    results = []
    zds = (1.8973666, ROTATING_ZDOT, 1.8973666, ROTATING_ZDOT)
    epss = (0.0, 0.0, 0.1, 0.1)
    for method, cells in REFERENCE_TABLE.items():
        for c, cell in enumerate(cells):
            results.append(_fake(method, epss[c], zds[c], cell))
    table = summary_table(results)
    assert table.matches()
    assert "●●●" in table.render()
    partial = summary_table(results[:-1])
    assert partial.cell("dd", 3) == "pending"
    assert len(partial.mismatches()) == 1


def test_run_all_order_independent_of_jobs():
    sc = [replace(s, t_end=5.0) for s in builtin_scenarios()[:4]]
    serial = run_all(sc, jobs=1)
    pooled = run_all(sc, jobs=2)
    assert [r.scenario for r in serial] == sc == [r.scenario for r in pooled]
    for a, b in zip(serial, pooled):
        assert a.reports["H"].slope == b.reports["H"].slope


def test_step_failure_is_reported():
    from nhcoupled.integrators import SolverSettings
    sc = replace(knife(0.1, "dd"), t_end=3.0)
    res = run_scenario(sc, settings=SolverSettings(newton_tol=1e-30, newton_max_iter=1))
    assert not res.ok and "did not converge" in res.failure
