"""End-to-end runs shared by the command line and the acceptance tests."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import datastore, oracle
from .datastore import Dataset, Report
from .errors import ValidationError
from .ident import BuildFit, GaConfig, ParamBounds, identify_build
from .kalman import FilterRun, NoiseConfig, run
from .pseudodata import TriangleParams, build_feed, fit_triangle
from .rom import LAYER1_PARAMS, BuildSchedule, ParamSchedule, integrate_build, models_for
from .traces import ThermalTrace

log = logging.getLogger(__name__)

# tag -> part side [m], in the published dataset numbering
PUBLISHED_DATASETS = {"dataset1": 0.2e-3, "dataset2": 0.8e-3, "dataset3": 0.4e-3}


def simulate_published(out_dir, dt: float = 0.1, sample_rate: float = 10.0, seed: int = 0,
                   noise_std: float = 0.0, tags: Sequence[str] | None = None, **geom_kw) -> dict:
    """Simulate and export the three published geometries."""
    out = {}
    for tag in tags or PUBLISHED_DATASETS:
        geom = oracle.GeometryMaterialSpec(part_side=PUBLISHED_DATASETS[tag], **geom_kw)
        res = oracle.simulate_fd(geom, oracle.ProcessSpec(), dt=dt)
        oracle.export_dataset(res, out_dir, sample_rate, tag, noise_std, seed)
        out[tag] = res
    return out


@dataclass
class ForecastResult:
    schedule: BuildSchedule
    triangle: TriangleParams
    pseudo: ThermalTrace
    run: FilterRun
    report: Report


def first_layer_history(truth: ThermalTrace, schedule: BuildSchedule, split_time: float) -> list:
    """The build's own first-layer samples up to the split time."""
    start = schedule.deposition_times[0]
    return [truth.segment(1, start, start + split_time + 1e-6)]


def forecast(
    dataset: Dataset,
    params: ParamSchedule = LAYER1_PARAMS,
    noise: NoiseConfig | None = None,
    split_time: float = 70.0,
    history: Sequence[ThermalTrace] | None = None,
    dt: float | None = None,
    triangle_method: str = "features",
    pseudo_mode: str = "triangle",
    out_dir=None,
    plots: bool = True,
) -> ForecastResult:
    """Estimate and forecast every layer of ``dataset``.

    ``history`` supplies first-layer traces of earlier builds for the
    triangle fit; without it the fit uses this build's first layer up to
    the split time only.
    """
    truth = dataset.trace
    schedule = dataset.schedule(dt)
    if any(t not in params.epoch_numbers() for t in range(1, schedule.n_layers + 1)):
        raise ValidationError(f"parameter schedule does not cover epochs 1..{schedule.n_layers}")
    models = models_for(params, schedule.n_layers, schedule.dt)
    hist = list(history) if history else first_layer_history(truth, schedule, split_time)
    tri = fit_triangle(hist, method=triangle_method)
    pseudo = build_feed(truth, schedule, split_time, tri, pseudo_mode)
    result = run(schedule, models, truth, pseudo, noise, split_time)
    rep = datastore.report(truth, result.combined, result.open_loop, schedule, split_time,
                           diagnostics=result, out_dir=out_dir, plots=plots)
    if out_dir is not None:
        datastore.dump_json({"triangle": tri.__dict__, "split_time_s": split_time,
                             "epochs": schedule.n_layers}, Path(out_dir) / "forecast.json")
    return ForecastResult(schedule, tri, pseudo, result, rep)


def rom_layer_rmse(dataset: Dataset, params: ParamSchedule, dt: float | None = None) -> np.ndarray:
    """Per-layer ROM error: layer ``n`` over epoch ``n`` of a full-build integration."""
    schedule = dataset.schedule(dt)
    rom = integrate_build(schedule, params)
    return datastore.layer_rmse(rom, dataset.trace, schedule, split_time=-1.0)


def identify(datasets: Sequence[Dataset], bounds: ParamBounds | None = None, ga: GaConfig | None = None,
             dt: float | None = None, out_dir=None) -> BuildFit:
    """Fit a parameter schedule to one or more datasets jointly.

    ``rom_rmse.csv`` holds one per-layer ROM error column per dataset and
    the per-epoch fitness the genetic algorithm reached.
    """
    pairs = [(d.trace, d.schedule(dt)) for d in datasets]
    fit = identify_build(pairs, bounds=bounds, ga=ga)
    if out_dir is not None:
        out = Path(out_dir)
        datastore.write_schedule(fit.schedule, out / "params.json")
        n = len(fit.fits)
        cols = [rom_layer_rmse(d, fit.schedule, dt)[:n] for d in datasets]
        header = ("layer_index", *(f"{d.name}_rom_rmse_c" for d in datasets), "fit_rmse_c")
        rows = [(f.epoch, *(datastore.fmt(c[i]) for c in cols), datastore.fmt(f.rmse)) for i, f in enumerate(fit.fits)]
        datastore.write_text(out / "rom_rmse.csv", datastore.csv_text(header, rows))
    return fit
