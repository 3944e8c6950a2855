import csv
import json

import pytest

from circlepsi import cli
from circlepsi.harness import (
    ConfigError,
    Record,
    RunConfig,
    SuiteReport,
    emit_plot_data,
    load_config,
    run_suite,
)


def test_config_precedence(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nsuite = zeta\nmodes = 512\nseed = 3\ngrid = 12, 16\n")
    cfg = load_config(str(path), environ={})
    assert (cfg.suite, cfg.modes, cfg.seed, cfg.grid) == ("zeta", 512, 3, (12, 16))
    cfg = load_config(str(path), environ={"CIRCLEPSI_MODES": "1024"})
    assert cfg.modes == 1024
    cfg = load_config(str(path), {"modes": 256, "seed": None}, environ={"CIRCLEPSI_MODES": "1024"})
    assert cfg.modes == 256 and cfg.seed == 3


@pytest.mark.parametrize(
    "bad",
    [{"tolerance": 0}, {"tolerance": 1.5}, {"modes": -4}, {"suite": "nope"}, {"overlap": 1.0}, {"grid": "0"}, {"modes": "x"}],
)
def test_config_errors(bad):
    with pytest.raises(ConfigError):
        load_config(overrides=bad, environ={})


def test_unknown_config_key(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("colour = red\n")
    with pytest.raises(ConfigError):
        load_config(str(path), environ={})


def test_report_is_deterministic_and_sorted(tmp_path):
    cfg = load_config(overrides={"suite": "zeta,residue", "pairs": 3, "seed": 5, "modes": 1024}, environ={})
    r1, r2 = run_suite(cfg), run_suite(cfg)
    j1, j2 = r1.to_json(), r2.to_json()
    j1.pop("timing"), j2.pop("timing")
    assert json.dumps(j1, sort_keys=True) == json.dumps(j2, sort_keys=True)
    names = [r["name"] for r in j1["records"]]
    assert names == sorted(names)
    assert j1["config"]["seed"] == 5
    assert j1["conventions"] == {"sigma": -1, "curvatureFactor": -0.5, "ddOrientation": -1}
    assert all(r["anchor"] for r in j1["records"]) and j1["pass"]


def test_worker_count_does_not_change_records():
    base = {"suite": "zeta", "pairs": 4, "modes": 512}
    one = run_suite(load_config(overrides={**base, "workers": 1}, environ={})).to_json()
    four = run_suite(load_config(overrides={**base, "workers": 4}, environ={})).to_json()
    assert one["records"] == four["records"]


def test_failing_record_and_crash_are_reported():
    rep = SuiteReport(RunConfig(), [Record("b", "anchor b", 1, 0, 1.0, 0.5), Record("a", "anchor a", 0, 0, 0.0, 0.5)])
    assert not rep.passed
    assert [r.name for r in rep.failures()] == ["b"]
    assert [r["name"] for r in rep.to_json()["records"]] == ["a", "b"]


def test_dd_class_suite_records():
    cfg = load_config(overrides={"suite": "dd-class", "grid": "12"}, environ={})
    rep = run_suite(cfg)
    recs = {r.name: r for r in rep.records}
    assert recs["dd-class/cech-L3"].lhs == 1 and recs["dd-class/cech-L4"].lhs == 1
    assert recs["dd-class/integral-H-grid012"].lhs == pytest.approx(1, abs=1e-6)
    assert rep.passed
    assert len(rep.series["h-slice"]["rows"]) == 12 * 12


def test_emit_empty_and_series(tmp_path):
    paths = emit_plot_data({"records": [], "series": {}}, str(tmp_path / "empty"))
    with open(paths[0]) as fh:
        rows = list(csv.reader(fh))
    assert rows == [["name", "anchor", "lhs", "rhs", "gap", "tolerance", "pass"]]
    rep = {"records": [], "series": {"stokes": {"header": ["h", "gap"], "rows": [[1.0, 0.4], [0.5, 0.1], [0.25, 0.025]]}}}
    paths = emit_plot_data(rep, str(tmp_path / "conv"))
    with open(paths[1]) as fh:
        rows = list(csv.reader(fh))
    gaps = [float(r[1]) for r in rows[1:]]
    assert rows[0] == ["h", "gap"] and gaps == sorted(gaps, reverse=True)


def test_cli_exit_codes(tmp_path, capsys):
    assert cli.main(["run", "--suite", "residue", "--tolerance", "0"]) == 2
    assert cli.main(["run", "--suite", "missing"]) == 2
    with pytest.raises(SystemExit) as exc:
        cli.main(["run", "--modes", "abc"])
    assert exc.value.code == 2
    out = tmp_path / "rep.json"
    assert cli.main(["run", "--suite", "residue", "--modes", "1024", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["pass"] is True
    assert cli.main(["emit", str(out), "--out", str(tmp_path / "csv")]) == 0
    assert cli.main(["emit", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2
    assert cli.main(["list"]) == 0
    assert "trace-defect" in capsys.readouterr().out


def test_cli_failing_suite_exits_one(monkeypatch):
    from circlepsi import harness

    def failing(cfg):
        return [lambda: [Record("x/fail", "forced", 1, 0, 1.0, 0.1)]], {}

    monkeypatch.setitem(harness.SUITES, "forced", (failing, "always fails"))
    assert cli.main(["run", "--suite", "forced"]) == 1


def test_crashing_task_becomes_failing_record(monkeypatch):
    from circlepsi import harness

    def boom():
        raise RuntimeError("kaput")

    monkeypatch.setitem(harness.SUITES, "boom", (lambda cfg: ([boom], {}), "crashes"))
    rep = run_suite(load_config(overrides={"suite": "boom"}, environ={}))
    assert not rep.passed and "kaput" in rep.records[0].anchor


def test_cache_dir_is_used(tmp_path):
    cache = tmp_path / "cache"
    cfg = load_config(overrides={"suite": "residue", "modes": 512, "cache_dir": str(cache)}, environ={})
    first = run_suite(cfg).to_json()["records"]
    assert any(cache.iterdir())
    for f in cache.iterdir():
        f.write_bytes(b"garbage")
    with pytest.warns(RuntimeWarning):
        again = run_suite(cfg).to_json()["records"]
    assert again == first
