import csv
import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from hiergame.cli import (
    CSV_COLUMNS,
    ExperimentConfig,
    emit_report,
    fit_rate,
    load_config,
    load_reports,
    main,
    parse_config,
    run_experiment,
    write_outputs,
)
from hiergame.errors import ConfigError
from hiergame.game import make_benchmark
from hiergame.metrics import assemble_mvi, gap
from hiergame.solver import theorem_gap_schedule, vrhgs

MINIMAL = {"benchmark": "quad-duopoly", "scheme": "exact", "schedule": "theorem_gap(T=20)",
           "replicas": 10, "master_seed": 42}


def _small(**kw):
    d = dict(MINIMAL, schedule="theorem_gap(T=4)", replicas=2)
    d.update(kw)
    return d


def _write(tmp_path, data, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data) if isinstance(data, dict) else data)
    return p


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_minimal_config_parses(tmp_path):
    cfg = parse_config(_write(tmp_path, MINIMAL))
    assert cfg.benchmark.name == "quad-duopoly" and cfg.schedule.kind == "theorem_gap"
    assert cfg.schedule.T == 20 and cfg.T_values() == [20] and cfg.replicas == 10


@pytest.mark.parametrize("patch,field", [
    ({"schedule": "theorem_gap(T=3)"}, "schedule"),
    ({"replicas": 0}, "replicas"),
    ({"master_seed": 2**64}, "master_seed"),
    ({"benchmark": "quad-triopoly"}, "benchmark"),
    ({"scheme": "approximate"}, "scheme"),
    ({"replica": 3}, "replica"),
    ({"schedule": {"kind": "theorem_gap", "T": 10, "gama0": 1.0}}, "gama0"),
    ({"schedule": "as_convergence(T=10, gamma0=1.0, eta0=0.5)"}, "schedule"),
])
def test_invalid_configs_name_the_field(patch, field):
    with pytest.raises(ConfigError, match=field):
        load_config(dict(MINIMAL, **patch))


def test_explicit_and_structured_schedules():
    cfg = load_config(dict(MINIMAL, schedule={"kind": "explicit", "K": 2, "gamma": [0.1, 0.1],
                                              "eta": [0.1, 0.1], "delta": [0.1, 0.1], "b": [2, 3]}))
    assert cfg.T_values() == [2]
    with pytest.raises(ConfigError, match="eps"):
        load_config(dict(MINIMAL, scheme="inexact",
                         schedule={"kind": "explicit", "K": 2, "gamma": [0.1], "eta": [0.1],
                                   "delta": [0.1], "b": [2]}))


def test_yaml_error_reports_line(tmp_path):
    p = _write(tmp_path, "benchmark: quad-duopoly\nschedule: [unclosed\nreplicas: 1\n")
    with pytest.raises(ConfigError, match=r"cfg\.yaml:\d+:\d+"):
        parse_config(p)


def test_missing_file():
    with pytest.raises(ConfigError):
        parse_config("/nonexistent/cfg.yaml")


def test_empty_and_single_epoch_csv(tmp_path, duopoly):
    p = emit_report([], "csv", tmp_path / "e.csv")
    assert _read(p) == [list(CSV_COLUMNS)]
    from hiergame.solver import Schedule
    s = Schedule(T=1, K=1, gamma=[0.1], eta=[0.1], delta=[0.1], b=[1], eps=[0.0])
    rep = vrhgs(duopoly, s, 0)
    rows = _read(emit_report([rep], "csv", tmp_path / "one.csv"))
    assert len(rows) == 2 and rows[1][0] == "1" and rows[1][-1] == "0"


def test_json_round_trip(tmp_path, duopoly):
    reps = [vrhgs(duopoly, theorem_gap_schedule(4), 3, replica=r, trace_every=3) for r in range(2)]
    p = emit_report(reps, "json", tmp_path / "r.json")
    assert "NaN" not in p.read_text()
    back = load_reports(p)
    assert back == reps


def test_runs_are_deterministic_and_gap_column_matches(tmp_path):
    cfg = load_config(_small())
    a = write_outputs(run_experiment(cfg), tmp_path / "a")
    b = write_outputs(run_experiment(cfg), tmp_path / "b")
    for pa, pb in zip(a, b):
        if pa.suffix == ".csv":
            assert pa.read_bytes() == pb.read_bytes()
    assert load_reports(a[2]) == load_reports(b[2])
    rows = _read(tmp_path / "a" / "summary.csv")[1:]
    reps = load_reports(tmp_path / "a" / "reports.json")
    problem = assemble_mvi(make_benchmark("quad-duopoly"))
    for row, rep in zip(rows, reps):
        assert abs(float(row[2]) - gap(problem, rep.weighted_average)) <= 1e-10
        assert float(row[2]) == rep.final_gap


def test_replica_independence(tmp_path):
    many = run_experiment(load_config(_small(replicas=3)))
    one = run_experiment(load_config(_small(replicas=1)))
    assert many.reports[(4, 0)] == one.reports[(4, 0)]
    emit_report([many.reports[(4, 0)]], "csv", tmp_path / "x.csv")
    emit_report([one.reports[(4, 0)]], "csv", tmp_path / "y.csv")
    assert (tmp_path / "x.csv").read_bytes() == (tmp_path / "y.csv").read_bytes()


def test_workers_do_not_change_results():
    a = run_experiment(load_config(_small()))
    b = run_experiment(load_config(_small(workers=2)))
    assert a.reports == b.reports


def test_sweep_fits_rate(tmp_path):
    res = run_experiment(load_config(_small(sweep=[4, 6], replicas=1)))
    assert res.ratefit is not None and np.isfinite(res.ratefit.p)
    write_outputs(res, tmp_path)
    assert json.loads((tmp_path / "ratefit.json").read_text())["T_values"] == [4, 6]


def test_fit_rate_recovers_exponent():
    T = [20, 50, 100, 200]
    rf = fit_rate(T, [3.0 * t**-1.0 for t in T])
    assert rf.p == pytest.approx(1.0, abs=1e-12) and rf.c == pytest.approx(3.0, rel=1e-12)
    assert rf.r2 == pytest.approx(1.0)


def test_main_exit_codes(tmp_path, capsys):
    good = _write(tmp_path, _small(), "good.yaml")
    assert main(["--config", str(good), "--out", str(tmp_path / "o"), "--seed", "7"]) == 0
    rows = _read(tmp_path / "o" / "runs.csv")
    assert rows[0] == list(CSV_COLUMNS) and len(rows) == 1 + 2 * 4
    bad = _write(tmp_path, dict(MINIMAL, replicas=0), "bad.yaml")
    assert main(["--config", str(bad)]) == 2
    assert main(["--config", str(good), "--replicas", "0"]) == 2
    assert main(["--config", str(good), "--sweep", "4,x"]) == 2
    fail = _write(tmp_path, _small(benchmark={"name": "quad-duopoly", "x0": [3.0, 0.0]}), "f.yaml")
    assert main(["--config", str(fail), "--out", str(tmp_path / "f")]) == 3
    assert json.loads((tmp_path / "f" / "failures.json").read_text())[0]["error"].startswith("DomainError")
    capsys.readouterr()


def test_console_entry_point(tmp_path):
    cfg = _write(tmp_path, _small(replicas=1))
    out = subprocess.run([sys.executable, "-m", "hiergame", "--config", str(cfg), "--out",
                          str(tmp_path / "o")], capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert (tmp_path / "o" / "summary.csv").exists()


def test_overrides_revalidate():
    cfg = load_config(MINIMAL)
    assert cfg.with_overrides(master_seed=5, replicas=None).master_seed == 5
    assert isinstance(cfg, ExperimentConfig)


def test_shipped_configs_parse():
    from pathlib import Path
    configs = sorted((Path(__file__).parent.parent / "configs").glob("*.yaml"))
    assert configs
    for p in configs:
        parse_config(p)
