import csv
import json

import numpy as np
import pytest

from drmpc.cli import main
from drmpc.config import RunConfig, load_config
from drmpc.errors import ConfigError
from drmpc.simulator import read_run_csv


def _write(path, text):
    path.write_text(text)
    return path


def test_bundled_config_builds_benchmark(config_path, benchmark_problem):
    cfg = load_config(config_path)
    problem = cfg.build_problem()
    np.testing.assert_allclose(problem.riccati.P, benchmark_problem.riccati.P)
    assert cfg.scenario_config().name == "a"
    assert cfg.solver_config().tol_cut == 1e-7


def test_missing_and_unknown_fields(config_path, tmp_path):
    text = config_path.read_text()
    with pytest.raises(ConfigError, match="plant.G0"):
        load_config(_write(tmp_path / "a.toml", text.replace("G0 = [-2.0, -10.0, -2.0, -2.0]", "")))
    with pytest.raises(ConfigError, match="cost.horizon"):
        load_config(_write(tmp_path / "b.toml", text.replace("N = 3", "horizon = 3")))
    with pytest.raises(ConfigError, match="section"):
        RunConfig.from_dict({"plant": {}})
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path / "c.toml", "[plant\n"))


def test_custom_scenario_needs_moments(config_path):
    cfg = load_config(config_path)
    with pytest.raises(ConfigError, match="mu0"):
        cfg.scenario_config("custom")
    cfg.scenario.mu0, cfg.scenario.sigma0 = 0.2, 0.05
    assert cfg.scenario_config("custom").mu0 == 0.2
    with pytest.raises(ConfigError, match="unknown scenario"):
        cfg.scenario_config("z")


def _csv_bytes(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.glob("*.csv"))}


def test_echo_reproduces_run(config_path, tmp_path):
    first, second = tmp_path / "first", tmp_path / "second"
    args = ["--scenario", "a", "--runs", "2", "--steps", "5", "--seed", "7"]
    assert main(["simulate", "--config", str(config_path), "--out", str(first)] + args) == 0
    echo = first / "config.json"
    assert json.loads(echo.read_text())["scenario"]["steps"] == 5
    assert main(["simulate", "--config", str(echo), "--out", str(second)]) == 0
    assert _csv_bytes(first) == _csv_bytes(second)
    assert len(_csv_bytes(first)) == 3  # two runs plus the aggregate


@pytest.fixture(scope="module")
def nominal_logs(tmp_path_factory, config_path):
    out = tmp_path_factory.mktemp("nominal")
    assert main(["simulate", "--config", str(config_path), "--scenario", "nominal",
                 "--runs", "1", "--steps", "8", "--out", str(out)]) == 0
    return out


def test_audit_clean_log(nominal_logs, capsys):
    capsys.readouterr()
    assert main(["audit", str(nominal_logs), "--json"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["flagged"] == {}
    assert all(v >= -1e-6 for v in report["min_margins"].values())
    rows = list(csv.reader(open(nominal_logs / "audit.csv")))
    assert rows[0][:2] == ["run", "k"]


def test_audit_flags_tampered_log(nominal_logs, tmp_path, capsys):
    capsys.readouterr()
    bad = tmp_path / "bad"
    bad.mkdir()
    (bad / "config.json").write_bytes((nominal_logs / "config.json").read_bytes())
    src = nominal_logs / "run_000.csv"
    rows = list(csv.reader(open(src)))
    col = rows[0].index("J")
    rows[3][col] = str(float(rows[3][col]) * 0.5)  # claim a cost the plan cannot achieve
    with open(bad / "run_000.csv", "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    assert main(["audit", str(bad), "--json"]) == 1
    flagged = json.loads(capsys.readouterr().out)["flagged"]
    assert "minimax_nominal" in flagged["run_000"]


def test_exit_codes(config_path, tmp_path, capsys):
    # structural: terminal scaling below the admissible threshold
    low = _write(tmp_path / "low.toml", config_path.read_text().replace("l_c = 2.0", "l_c = 0.001"))
    assert main(["bounds", "--config", str(low)]) == 3
    assert main(["solve", "--config", str(config_path), "--state=1,2,3"]) == 2
    assert main(["solve", "--config", str(config_path), "--state=a,b"]) == 2
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["audit", str(empty)]) == 2
    assert main(["bounds", "--config", str(tmp_path / "missing.toml")]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_solve_and_bounds_json(config_path, capsys):
    assert main(["solve", "--config", str(config_path), "--state=-5,-2", "--json"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["diagnostics"]["termination"] == "converged"
    assert out["upper_value"] - out["J"] <= 1e-6 * abs(out["J"])
    assert main(["bounds", "--config", str(config_path), "--json"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["constants"]["k0"] == 0.25
    assert out["bound"]["total"] > 0
    assert out["warnings"]  # the benchmark closed loop is not a contraction
