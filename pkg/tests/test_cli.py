from __future__ import annotations

import json
import re
import subprocess
import sys

import numpy as np
import pytest

from lpbf_tf import datastore
from lpbf_tf.cli import EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION, main

ERROR_LINE = re.compile(r"^error: code=(\d) kind=(\w+) message=.+$")


def error_line(capsys):
    lines = capsys.readouterr().err.strip().splitlines()
    assert len(lines) == 1, lines
    m = ERROR_LINE.match(lines[0])
    assert m, lines[0]
    return int(m.group(1)), m.group(2)


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli")
    argv = ["simulate", "--out", str(out), "--tag", "small", "--side", "0.2", "--layers", "2"]
    assert main(argv) == EXIT_OK
    return out / "small"


def test_simulate_writes_dataset(small_dataset):
    ds = datastore.ingest(small_dataset)
    assert ds.n_layers == 2
    assert ds.manifest["geometry"]["part_side"] == pytest.approx(0.2e-3)


def test_zero_power_gives_constant_traces(tmp_path, capsys):
    argv = ["simulate", "--out", str(tmp_path), "--side", "0.2", "--layers", "2", "--dwell", "20", "--power", "0"]
    assert main(argv) == EXIT_OK
    ds = datastore.ingest(tmp_path / "dataset")
    assert np.all(ds.trace.temps[np.isfinite(ds.trace.temps)] == 27.0)
    assert "energy balance" in capsys.readouterr().out


def test_published_dataset_names(tmp_path):
    argv = ["simulate", "--published", "--out", str(tmp_path), "--layers", "1", "--dwell", "20"]
    assert main(argv) == EXIT_OK
    assert sorted(p.name for p in tmp_path.iterdir()) == ["dataset1", "dataset2", "dataset3"]
    sides = {n: datastore.ingest(tmp_path / n).manifest["geometry"]["part_side"] for n in ("dataset1", "dataset2", "dataset3")}
    assert sides == pytest.approx({"dataset1": 0.2e-3, "dataset2": 0.8e-3, "dataset3": 0.4e-3})


@pytest.mark.parametrize(
    "argv",
    [
        ["simulate"],
        ["simulate", "--out", "x", "--side", "-1"],
        ["simulate", "--out", "x", "--absorptivity", "2"],
        ["forecast", "--out", "x"],
        ["forecast", "--out", "x", "--dataset", "missing-dir"],
        ["forecast", "--out", "x", "--sigma-m", "-1"],
        ["identify", "--out", "x", "--dataset", "missing-dir"],
        ["identify", "--dataset", "d", "--out", "x", "--population", "2"],
        ["bogus"],
    ],
)
def test_validation_failures_exit_2(argv, capsys):
    assert main(argv) == EXIT_VALIDATION
    code, _ = error_line(capsys)
    assert code == EXIT_VALIDATION


def test_numerical_failure_exits_3(tmp_path, capsys):
    argv = ["simulate", "--out", str(tmp_path), "--side", "0.2", "--layers", "1", "--scheme", "explicit"]
    assert main(argv) == EXIT_NUMERICAL
    code, kind = error_line(capsys)
    assert code == EXIT_NUMERICAL and kind == "StabilityError"


def test_config_file_supplies_flags(tmp_path, small_dataset):
    cfg = tmp_path / "run.yaml"
    cfg.write_text(f"dataset: {small_dataset}\nout: {tmp_path / 'out'}\nsigma-m: 4.0\nno_plots: true\n")
    assert main(["forecast", "--config", str(cfg)]) == EXIT_OK
    assert (tmp_path / "out" / "rmse.csv").exists()
    assert not (tmp_path / "out" / "traces.svg").exists()
    # explicit flags beat the file
    assert main(["forecast", "--config", str(cfg), "--out", str(tmp_path / "other")]) == EXIT_OK
    assert (tmp_path / "other" / "rmse.csv").exists()


def test_config_unknown_key_rejected(tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"sigma_q": 1}))
    assert main(["forecast", "--config", str(cfg)]) == EXIT_VALIDATION
    assert error_line(capsys)[0] == EXIT_VALIDATION


def test_perfect_sensor_estimate_equals_measurements(tmp_path, small_dataset):
    out = tmp_path / "fc"
    assert main(["forecast", "--dataset", str(small_dataset), "--out", str(out), "--sigma-m", "0", "--no-plots"]) == EXIT_OK
    est = datastore.read_trace(out / "kalman.csv")
    truth = datastore.ingest(small_dataset)
    sched = truth.schedule()
    rel = est.times - np.array(sched.deposition_times)[sched.epoch_at(est.times) - 1]
    real = rel <= 70.0 + 1e-9
    want = truth.trace.values_at(est.times[real], width=2)
    got = est.temps[real]
    np.testing.assert_allclose(got[np.isfinite(want)], want[np.isfinite(want)], rtol=0, atol=1e-6)


def test_forecast_outputs(tmp_path, small_dataset):
    out = tmp_path / "fc"
    assert main(["forecast", "--dataset", str(small_dataset), "--out", str(out)]) == EXIT_OK
    names = {p.name for p in out.iterdir()}
    assert {"rmse.csv", "errors.csv", "kalman.csv", "open_loop.csv", "diagnostics.csv", "forecast.json",
            "traces.svg", "errors.svg", "diagnostics.svg"} <= names
    head = (out / "diagnostics.csv").read_text().splitlines()[0]
    assert head == "time_s,layer_index,mode,covariance,gain"


def test_identify_outputs(tmp_path, small_dataset):
    out = tmp_path / "id"
    argv = ["identify", "--dataset", str(small_dataset), "--out", str(out), "--population", "8", "--generations", "3"]
    assert main(argv) == EXIT_OK
    sched = datastore.read_schedule(out / "params.json")
    assert sched.epoch_numbers() == [1, 2]
    rows = (out / "rom_rmse.csv").read_text().splitlines()
    assert rows[0] == "layer_index,small_rom_rmse_c,fit_rmse_c" and len(rows) == 3


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "lpbf_tf.cli", "forecast", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == EXIT_VALIDATION
    assert ERROR_LINE.match(proc.stderr.strip())
