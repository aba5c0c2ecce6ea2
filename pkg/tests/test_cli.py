import csv
import json
from pathlib import Path

import numpy as np
import pytest

from netfuse.cli import main
from netfuse.model import load_scenario, scenario_hash
from netfuse.pipeline import run_batch

SCEN = Path(__file__).resolve().parents[1] / "src" / "netfuse" / "scenarios" / "tracking3.json"


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(Path(d).iterdir()) if p.name != "runtime.json"}


def _read_csv(path):
    lines = Path(path).read_text().splitlines()
    assert lines[0].startswith("# netfuse seed=")
    return list(csv.reader(lines[1:]))


def test_identical_config_gives_identical_files(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["--mode", "monte-carlo", "--runs", "4", "--seed", "7"]
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    fa, fb = _files(a), _files(b)
    assert fa.keys() == fb.keys() and any(n.endswith(".csv") for n in fa)
    assert fa == fb


def test_thread_count_does_not_change_outputs(tmp_path, monkeypatch):
    args = ["--mode", "monte-carlo", "--runs", "3", "--seed", "3"]
    monkeypatch.setenv("NETFUSE_THREADS", "1")
    assert main(args + ["--out", str(tmp_path / "one")]) == 0
    monkeypatch.setenv("NETFUSE_THREADS", "4")
    assert main(args + ["--out", str(tmp_path / "four")]) == 0
    assert _files(tmp_path / "one") == _files(tmp_path / "four")


def test_different_seed_changes_outputs(tmp_path):
    assert main(["--seed", "1", "--out", str(tmp_path / "a")]) == 0
    assert main(["--seed", "2", "--out", str(tmp_path / "b")]) == 0
    assert _files(tmp_path / "a")["mse.csv"] != _files(tmp_path / "b")["mse.csv"]


def test_stamp_carries_seed_and_scenario_hash(tmp_path):
    assert main(["run", "--seed", "11", "--out", str(tmp_path)]) == 0
    sc = load_scenario("tracking3.json")
    import dataclasses

    h = scenario_hash(dataclasses.replace(sc, seed=11, monte_carlo_runs=sc.monte_carlo_runs))
    first = (tmp_path / "mse.csv").read_text().splitlines()[0]
    assert first == f"# netfuse seed=11 scenario={h}"
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["seed"] == 11 and summary["scenario_hash"] == h


def test_single_mode_artifacts(tmp_path):
    assert main(["run", "--mode", "single", "--out", str(tmp_path)]) == 0
    for name in ("mse.csv", "channel_trace.csv", "receiver_trace.csv", "truth.csv",
                 "estimator_trace.csv", "fusion_trace.csv", "summary.json", "runtime.json"):
        assert (tmp_path / name).exists(), name
    rows = _read_csv(tmp_path / "mse.csv")
    assert rows[0] == ["estimator", "position", "velocity", "acceleration"]
    assert [r[0] for r in rows[1:]] == ["sensor0", "sensor1", "sensor2", "fused"]


def test_monte_carlo_writes_bounds(tmp_path):
    assert main(["run", "--mode", "monte-carlo", "--runs", "2", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "bounds.csv").exists() and (tmp_path / "step_errors.csv").exists()


def test_report_dir_alias(tmp_path):
    assert main(["run", "--report-dir", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "mse.csv").exists()


def test_golden_mode(tmp_path):
    assert main(["run", "--mode", "golden-fig2", "--out", str(tmp_path)]) == 0
    s = json.loads((tmp_path / "summary.json").read_text())
    rows = _read_csv(tmp_path / "receiver_trace.csv")
    held = {int(r[0]): int(r[2]) for r in rows[1:]}
    assert held[5] == 3 and held[9] == 8 and held[12] == 11
    assert s["logic-zoh"]["discarded"] == [2, 7, 9, 10]
    assert (tmp_path / "receiver_trace_zoh.csv").exists()


def test_steady_state_mode(tmp_path):
    assert main(["run", "--mode", "steady-state", "--out", str(tmp_path)]) == 0
    rows = _read_csv(tmp_path / "steady_state.csv")
    assert len(rows) == 4


def test_hinf_mode_reports_certificate(tmp_path):
    assert main(["run", "--mode", "hinf-check", "--out", str(tmp_path)]) == 0
    s = json.loads((tmp_path / "summary.json").read_text())
    text = json.dumps(s)
    assert "feasible" in text and "max_eig" in text


def test_compare_baselines(tmp_path):
    for base in ("zoh", "one-step-prediction", "stale-hold"):
        out = tmp_path / base
        assert main(["compare", "--baseline", base, "--runs", "2", "--out", str(out)]) == 0
        rows = _read_csv(out / "compare.csv")
        assert {r[0] for r in rows[1:]} == {"proposed", base}


def test_exit_code_config_errors(tmp_path):
    assert main(["run", "--scenario", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2
    assert main(["run", "--runs", "0", "--out", str(tmp_path)]) == 2
    assert main(["run", "--channel", "pigeon", "--out", str(tmp_path)]) == 2
    bad = json.loads(SCEN.read_text())
    bad["horizon"] = -3
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(bad))
    assert main(["run", "--scenario", str(p), "--out", str(tmp_path)]) == 2


def test_exit_code_bad_thread_env(tmp_path, monkeypatch):
    monkeypatch.setenv("NETFUSE_THREADS", "many")
    assert main(["run", "--out", str(tmp_path)]) == 2


def test_exit_code_numerical_failure(tmp_path):
    cfg = json.loads(SCEN.read_text())
    cfg["alpha"] = 50.0
    cfg["system"]["P0"] = (100 * np.eye(3)).tolist()
    cfg["horizon"] = 20
    p = tmp_path / "blowup.json"
    p.write_text(json.dumps(cfg))
    assert main(["run", "--scenario", str(p), "--out", str(tmp_path / "o")]) == 3


def test_lossless_channel_passes_filtered_estimates_through():
    sc = load_scenario("tracking3.json")
    b = run_batch(sc, [0, 1], channel="lossless")
    assert np.all(b.tau == 0)
    np.testing.assert_array_equal(b.x_local, b.x_raw)
    assert b.disorders.sum() == 0 and b.discarded.sum() == 0


@pytest.mark.parametrize("channel", ["logic-zoh", "zoh", "lossless"])
def test_all_channels_run(tmp_path, channel):
    assert main(["run", "--channel", channel, "--out", str(tmp_path)]) == 0
