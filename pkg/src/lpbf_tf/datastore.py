"""Dataset files, report tables and quick-look plots.

A dataset directory holds ``manifest.json`` and ``trace.csv``. The trace
is stored long-form (one row per time and layer) so the layer count may
grow during the build. All floats are written with nine significant
digits, which makes export followed by ingest idempotent.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import LpbfError, ValidationError
from .rom import BuildSchedule, ParamSchedule
from .traces import ThermalTrace

TRACE_HEADER = ("time_s", "layer_index", "temperature_c")
RMSE_HEADER = ("layer_index", "rom_rmse_c", "kalman_rmse_c")
UNITS = {"time": "s", "temperature": "degC"}
FMT = "%.9g"


def fmt(x: float) -> str:
    return FMT % x


class DatasetIOError(LpbfError, OSError):
    """Reading or writing a dataset file failed."""


def write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise DatasetIOError(f"{path}: {exc.strerror or exc}") from exc


def _read_text(path: Path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DatasetIOError(f"{path}: {exc.strerror or exc}") from exc


def dump_json(obj, path) -> None:
    write_text(Path(path), json.dumps(obj, indent=2, sort_keys=True) + "\n")


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def trace_to_csv(trace: ThermalTrace) -> str:
    rows = []
    for t, row, k in zip(trace.times, trace.temps, trace.n_active):
        ts = fmt(t)
        rows.extend((ts, j + 1, fmt(row[j])) for j in range(k))
    return csv_text(TRACE_HEADER, rows)


def write_trace(trace: ThermalTrace, path) -> None:
    write_text(Path(path), trace_to_csv(trace))


def read_trace(path, kind: str = "ground-truth") -> ThermalTrace:
    """Parse a long-form trace CSV; errors name the offending data row."""
    text = _read_text(Path(path))
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != TRACE_HEADER:
        raise ValidationError(f"{path}: header must be {','.join(TRACE_HEADER)}, got {header}")
    times, rows = [], []
    prev_t = -np.inf
    for r, rec in enumerate(reader, start=1):
        where = f"{path}: row {r}"
        if len(rec) != 3:
            raise ValidationError(f"{where}: expected 3 columns, got {len(rec)}")
        try:
            t, j, v = float(rec[0]), int(rec[1]), float(rec[2])
        except ValueError:
            raise ValidationError(f"{where}: cannot parse {rec}") from None
        if not np.isfinite(t):
            raise ValidationError(f"{where} column time_s: non-finite time")
        if not np.isfinite(v):
            raise ValidationError(f"{where} column temperature_c: non-finite temperature")
        if t < prev_t:
            raise ValidationError(f"{where} column time_s: time goes backwards ({t:g} after {prev_t:g})")
        if t > prev_t:
            times.append(t)
            rows.append([])
            prev_t = t
        if j != len(rows[-1]) + 1:
            raise ValidationError(f"{where} column layer_index: expected layer {len(rows[-1]) + 1}, got {j}")
        rows[-1].append(v)
    width = max((len(r) for r in rows), default=0)
    temps = np.full((len(rows), width), np.nan)
    for i, r in enumerate(rows):
        temps[i, : len(r)] = r
    try:
        return ThermalTrace(np.array(times), temps, kind)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


@dataclass
class Dataset:
    """A trace with its manifest."""

    name: str
    trace: ThermalTrace
    manifest: dict = field(default_factory=dict)
    path: Path | None = None

    @property
    def n_layers(self) -> int:
        return self.trace.n_layers

    def schedule(self, dt: float | None = None) -> BuildSchedule:
        """Deposition times and peaks read off the trace (first sample of each layer)."""
        tr = self.trace
        dep, peaks = [], []
        for j in range(1, tr.n_layers + 1):
            t, v = tr.layer(j)
            dep.append(float(t[0]))
            peaks.append(float(v[0]))
        if dt is None:
            rate = self.manifest.get("sample_rate_hz")
            dt = 1.0 / rate if rate else float(np.median(np.diff(tr.times)))
        proc = self.manifest.get("process", {})
        t_amb = float(proc.get("t_ambient", 27.0))
        return BuildSchedule(tr.n_layers, tuple(dep), float(tr.times[-1]), tuple(peaks),
                             t_base=t_amb, t_ambient=t_amb, dt=float(dt))


def export(dataset: Dataset, out_dir) -> Path:
    """Write ``manifest.json`` and ``trace.csv`` into ``out_dir``."""
    out = Path(out_dir)
    manifest = dict(dataset.manifest)
    manifest.update({"name": dataset.name, "units": UNITS, "n_layers": dataset.n_layers,
                     "n_samples": len(dataset.trace), "trace_file": "trace.csv"})
    write_trace(dataset.trace, out / "trace.csv")
    dump_json(manifest, out / "manifest.json")
    return out


def ingest(path) -> Dataset:
    """Load a dataset directory (or its manifest file) and validate it."""
    path = Path(path)
    manifest_path = path / "manifest.json" if path.is_dir() else path
    try:
        manifest = json.loads(_read_text(manifest_path))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{manifest_path}: invalid JSON at line {exc.lineno} column {exc.colno}") from None
    units = manifest.get("units")
    if units != UNITS:
        raise ValidationError(f"{manifest_path}: units must be {UNITS}, got {units}")
    trace = read_trace(manifest_path.parent / manifest.get("trace_file", "trace.csv"))
    if "n_layers" in manifest and manifest["n_layers"] != trace.n_layers:
        raise ValidationError(
            f"{manifest_path}: manifest declares {manifest['n_layers']} layers, trace has {trace.n_layers}"
        )
    return Dataset(manifest.get("name", manifest_path.parent.name), trace, manifest, manifest_path.parent)


def write_schedule(schedule: ParamSchedule, path) -> None:
    dump_json(schedule.to_dict(), path)


def read_schedule(path) -> ParamSchedule:
    try:
        return ParamSchedule.from_dict(json.loads(_read_text(Path(path))))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON at line {exc.lineno}") from None


def layer_rmse(pred: ThermalTrace, truth: ThermalTrace, schedule: BuildSchedule, split_time: float) -> np.ndarray:
    """RMSE of layer ``n`` during epoch ``n`` over relative times above ``split_time``."""
    out = np.full(schedule.n_layers, np.nan)
    for n in range(1, schedule.n_layers + 1):
        t, _ = schedule.epoch_grid(n)
        t = t[t - schedule.deposition_times[n - 1] > split_time + 1e-9]
        if t.size == 0:
            raise ValidationError(f"epoch {n} has no samples after the split time")
        diff = pred.values_at(t, width=n)[:, n - 1] - truth.values_at(t, width=n)[:, n - 1]
        if np.any(np.isnan(diff)):
            raise ValidationError(f"layer {n} is missing from a compared trace")
        out[n - 1] = np.sqrt(np.mean(diff**2))
    return out


@dataclass
class Report:
    """Per-layer RMSE rows and the series written next to them."""

    rom_rmse: np.ndarray
    kalman_rmse: np.ndarray
    files: list

    @property
    def table(self) -> np.ndarray:
        return np.column_stack([np.arange(1, self.rom_rmse.size + 1), self.rom_rmse, self.kalman_rmse])

    def kalman_wins(self) -> int:
        return int(np.sum(self.kalman_rmse < self.rom_rmse))


def rmse_csv(rom, kalman) -> str:
    rows = [(j + 1, fmt(a), fmt(b)) for j, (a, b) in enumerate(zip(rom, kalman))]
    return csv_text(RMSE_HEADER, rows)


def _long_rows(times, columns: dict, n_active) -> list:
    rows = []
    names = list(columns)
    for i, t in enumerate(times):
        for j in range(int(n_active[i])):
            rows.append([fmt(t), j + 1] + [columns[c](i, j) for c in names])
    return rows


def report(
    truth: ThermalTrace,
    kalman: ThermalTrace,
    open_loop: ThermalTrace,
    schedule: BuildSchedule,
    split_time: float,
    diagnostics=None,
    out_dir=None,
    plots: bool = True,
) -> Report:
    """RMSE table (open loop vs Kalman), error series and filter diagnostics.

    Nothing is written when ``out_dir`` is None.
    """
    rom_rmse = layer_rmse(open_loop, truth, schedule, split_time)
    kal_rmse = layer_rmse(kalman, truth, schedule, split_time)
    files = []
    if out_dir is not None:
        out = Path(out_dir)
        write_text(out / "rmse.csv", rmse_csv(rom_rmse, kal_rmse))
        files.append(out / "rmse.csv")
        times = kalman.times
        ref = truth.values_at(times, width=kalman.n_layers)
        ol = open_loop.values_at(times, width=kalman.n_layers)
        err_rows = _long_rows(
            times,
            {
                "open_loop_error_c": lambda i, j: fmt(ol[i, j] - ref[i, j]),
                "kalman_error_c": lambda i, j: fmt(kalman.temps[i, j] - ref[i, j]),
            },
            kalman.n_active,
        )
        write_text(out / "errors.csv", csv_text(("time_s", "layer_index", "open_loop_error_c", "kalman_error_c"), err_rows))
        files.append(out / "errors.csv")
        write_trace(kalman, out / "kalman.csv")
        write_trace(open_loop, out / "open_loop.csv")
        files += [out / "kalman.csv", out / "open_loop.csv"]
        if diagnostics is not None:
            cov, gain, modes = diagnostics.covariances, diagnostics.gains, diagnostics.modes
            diag_rows = _long_rows(
                diagnostics.times,
                {
                    "mode": lambda i, j: modes[i],
                    "covariance": lambda i, j: fmt(cov[i, j, j]),
                    "gain": lambda i, j: fmt(gain[i, j, j]),
                },
                kalman.n_active,
            )
            write_text(out / "diagnostics.csv",
                        csv_text(("time_s", "layer_index", "mode", "covariance", "gain"), diag_rows))
            files.append(out / "diagnostics.csv")
        if plots:
            files += quicklook(truth, kalman, open_loop, out, diagnostics)
    return Report(rom_rmse, kal_rmse, files)


def quicklook(truth, kalman, open_loop, out_dir, diagnostics=None) -> list:
    """Deterministic SVG plots of the traces, errors and filter diagnostics."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    written = []
    with matplotlib.rc_context({"svg.hashsalt": "lpbf-tf", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(8, 4))
        for j in range(kalman.n_layers):
            t, v = truth.layer(j + 1)
            ax.plot(t, v, color="0.6", lw=0.8)
            t, v = kalman.layer(j + 1)
            ax.plot(t, v, lw=0.8)
        ax.set(xlabel="time [s]", ylabel="temperature [degC]", title="ground truth (grey) and Kalman output")
        written.append(_save(fig, out / "traces.svg"))

        fig, ax = plt.subplots(figsize=(8, 4))
        ref = truth.values_at(kalman.times, width=kalman.n_layers)
        ol = open_loop.values_at(kalman.times, width=kalman.n_layers)
        ax.plot(kalman.times, np.nanmax(np.abs(ol - ref), axis=1), lw=0.8, label="open loop")
        ax.plot(kalman.times, np.nanmax(np.abs(kalman.temps - ref), axis=1), lw=0.8, label="Kalman")
        ax.set(xlabel="time [s]", ylabel="max |error| [degC]", yscale="symlog")
        ax.legend()
        written.append(_save(fig, out / "errors.svg"))

        if diagnostics is not None:
            fig, (a1, a2) = plt.subplots(2, 1, figsize=(8, 5), sharex=True)
            n = diagnostics.covariances.shape[-1]
            idx = np.arange(n)
            a1.plot(diagnostics.times, diagnostics.covariances[:, idx, idx], lw=0.8)
            a2.plot(diagnostics.times, diagnostics.gains[:, idx, idx], lw=0.8)
            a1.set(ylabel="covariance [degC^2]")
            a2.set(xlabel="time [s]", ylabel="gain")
            written.append(_save(fig, out / "diagnostics.svg"))
    return written


def _save(fig, path: Path) -> Path:
    import matplotlib.pyplot as plt

    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        fig.savefig(path, format="svg", metadata={"Date": None})
    except OSError as exc:
        raise DatasetIOError(f"{path}: {exc.strerror or exc}") from exc
    finally:
        plt.close(fig)
    return path
