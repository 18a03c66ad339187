"""Command-line entry point: ``lpbf-tf simulate|identify|forecast``.

Every flag can also come from a JSON or YAML file given with ``--config``;
flags on the command line win over the file. Failures print one line of
the form ``error: code=<n> kind=<name> message=<text>`` on stderr and exit
with 2 (invalid input) or 3 (numerical failure).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import yaml

from . import datastore, oracle, pipeline
from .errors import NumericalError, ValidationError
from .ident import GaConfig, ParamBounds
from .kalman import NoiseConfig
from .rom import LAYER1_PARAMS

log = logging.getLogger("lpbf_tf")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


def _positive(name):
    def check(text):
        v = float(text)
        if not v > 0:
            raise argparse.ArgumentTypeError(f"{name} must be positive, got {text}")
        return v
    return check


def _non_negative(name):
    def check(text):
        v = float(text)
        if not v >= 0:
            raise argparse.ArgumentTypeError(f"{name} must be non-negative, got {text}")
        return v
    return check


class _Parser(argparse.ArgumentParser):
    """Usage errors become :class:`ValidationError` so they share the error line format."""

    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lpbf-tf", description="Thermal state estimation and forecasting for L-PBF builds.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="JSON or YAML file with default flag values")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--dt", type=_positive("dt"), default=0.1, help="time step [s] (default 0.1)")
        p.add_argument("--seed", type=int, default=0, help="random seed")

    sim = sub.add_parser("simulate", help="run the finite-volume ground-truth solver")
    common(sim)
    sim.add_argument("--published", action="store_true", help="write dataset1/2/3 for the 0.2/0.8/0.4 mm parts")
    sim.add_argument("--tag", default="dataset", help="dataset name when not using --published")
    sim.add_argument("--side", type=_positive("side"), default=0.4, help="part side [mm]")
    sim.add_argument("--layers", type=int, default=10)
    sim.add_argument("--power", type=_non_negative("power"), default=142.0, help="laser power [W]")
    sim.add_argument("--absorptivity", type=_positive("absorptivity"), default=0.4)
    sim.add_argument("--dwell", type=_positive("dwell"), default=200.0, help="time between layers [s]")
    sim.add_argument("--scheme", choices=("implicit", "explicit"), default="implicit")
    sim.add_argument("--sample-rate", type=_positive("sample rate"), default=10.0, help="[Hz]")
    sim.add_argument("--noise-std", type=_non_negative("noise std"), default=0.0, help="sensor noise [degC]")

    ide = sub.add_parser("identify", help="fit per-epoch parameters with the genetic algorithm")
    common(ide)
    ide.add_argument("--dataset", type=Path, action="append", help="dataset directory (repeat to fit jointly)")
    ide.add_argument("--population", type=int, default=50)
    ide.add_argument("--generations", type=int, default=100)
    ide.add_argument("--crossover", type=float, default=0.8)
    ide.add_argument("--mutation", type=float, default=0.1)
    ide.add_argument("--elite", type=int, default=2)
    ide.add_argument("--fit-c5", action="store_true", help="also identify the convection coefficient")

    fc = sub.add_parser("forecast", help="run the Kalman estimator and forecaster")
    common(fc)
    fc.add_argument("--dataset", type=Path, action="append", help="dataset directory")
    fc.add_argument("--params", type=Path, help="parameter schedule JSON (default: reference layer-1 coefficients)")
    fc.add_argument("--history", type=Path, action="append", default=None,
                    help="dataset whose first layer feeds the triangle fit (repeatable)")
    fc.add_argument("--sigma-p", type=_non_negative("sigma-p"), default=2.3)
    fc.add_argument("--sigma-m", type=_non_negative("sigma-m"), default=1.0)
    fc.add_argument("--p0", type=_non_negative("p0"), default=None, help="initial layer variance")
    fc.add_argument("--split-time", type=_non_negative("split-time"), default=70.0)
    fc.add_argument("--pseudo-mode", choices=("triangle", "literal"), default="triangle")
    fc.add_argument("--triangle-method", choices=("features", "lsq"), default="features")
    fc.add_argument("--no-plots", action="store_true")
    return parser


def load_config(path: Path) -> dict:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"{path}: {exc.strerror or exc}") from None
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ValidationError(f"{path}: cannot parse config: {exc}") from None
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: config must be a mapping of flag names to values")
    return {k.replace("-", "_"): v for k, v in data.items()}


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is None:
        return args
    cfg = load_config(args.config)
    cfg.pop("command", None)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest: a for a in sub._actions}
    unknown = sorted(set(cfg) - set(known))
    if unknown:
        raise ValidationError(f"{args.config}: unknown keys {unknown}")
    # config values act as defaults; explicit flags still override them
    defaults = {}
    for key, value in cfg.items():
        action = known[key]
        try:
            if isinstance(value, list) and action.type is not None:
                value = [action.type(str(v)) for v in value]
            elif value is not None and action.type is not None and not isinstance(value, bool):
                value = action.type(str(value))
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise ValidationError(f"{args.config}: bad value for {key}: {exc}") from None
        if isinstance(action, argparse._AppendAction) and not isinstance(value, list):
            value = [value]
        defaults[key] = value
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _require(args, name):
    if getattr(args, name) in (None, []):
        raise ValidationError(f"--{name.replace('_', '-')} is required for {args.command}")


def cmd_simulate(args) -> int:
    _require(args, "out")
    if args.layers < 1:
        raise ValidationError("--layers must be at least 1")
    if args.absorptivity > 1:
        raise ValidationError("--absorptivity must not exceed 1")
    if args.published:
        tags = list(pipeline.PUBLISHED_DATASETS)
        specs = {t: oracle.GeometryMaterialSpec(part_side=pipeline.PUBLISHED_DATASETS[t], n_layers=args.layers) for t in tags}
    else:
        specs = {args.tag: oracle.GeometryMaterialSpec(part_side=args.side * 1e-3, n_layers=args.layers)}
    proc = oracle.ProcessSpec(power=args.power, absorptivity=args.absorptivity, dwell=args.dwell)
    for tag, geom in specs.items():
        res = oracle.simulate_fd(geom, proc, dt=args.dt, scheme=args.scheme)
        path = oracle.export_dataset(res, args.out, args.sample_rate, tag, args.noise_std, args.seed)
        print(f"{tag}: wrote {path} ({geom.n_layers} layers, {res.mesh.n_cells} cells)")
        print(f"{tag}: energy balance relative error {res.energy_balance():.3e}")
    return EXIT_OK


def cmd_identify(args) -> int:
    _require(args, "dataset")
    _require(args, "out")
    ga = GaConfig(args.population, args.generations, args.crossover, args.mutation, args.elite, args.seed)
    bounds = ParamBounds(fit_c5=args.fit_c5)
    datasets = [datastore.ingest(p) for p in args.dataset]
    fit = pipeline.identify(datasets, bounds, ga, dt=args.dt, out_dir=args.out)
    for f in fit.fits:
        print(f"epoch {f.epoch}: rmse {f.rmse:.4g} degC")
    print(f"wrote {args.out / 'params.json'} and {args.out / 'rom_rmse.csv'}")
    return EXIT_OK


def cmd_forecast(args) -> int:
    _require(args, "dataset")
    _require(args, "out")
    if len(args.dataset) != 1:
        raise ValidationError("forecast takes exactly one --dataset")
    dataset = datastore.ingest(args.dataset[0])
    params = datastore.read_schedule(args.params) if args.params else LAYER1_PARAMS
    history = [datastore.ingest(p).trace for p in args.history] if args.history else None
    noise = NoiseConfig(args.sigma_p, args.sigma_m, args.p0)
    res = pipeline.forecast(
        dataset, params, noise, args.split_time, history, dt=args.dt,
        triangle_method=args.triangle_method, pseudo_mode=args.pseudo_mode,
        out_dir=args.out, plots=not args.no_plots,
    )
    rep = res.report
    for j, (a, b) in enumerate(zip(rep.rom_rmse, rep.kalman_rmse), start=1):
        print(f"layer {j}: open-loop rmse {a:.4g} degC, kalman rmse {b:.4g} degC")
    print(f"kalman better on {rep.kalman_wins()} of {rep.rom_rmse.size} layers")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "identify": cmd_identify, "forecast": cmd_forecast}


def _setup_logging() -> None:
    level = os.environ.get("LPBF_TF_LOG", "WARNING").upper()
    logging.basicConfig(level=int(level) if level.isdigit() else getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _fail(code: int, exc: Exception) -> int:
    msg = " ".join(str(exc).split())
    print(f"error: code={code} kind={type(exc).__name__} message={msg}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    _setup_logging()
    try:
        args = parse_args(argv)
        return COMMANDS[args.command](args)
    except NumericalError as exc:
        return _fail(EXIT_NUMERICAL, exc)
    except (ValidationError, argparse.ArgumentTypeError) as exc:
        return _fail(EXIT_VALIDATION, exc)
    except OSError as exc:
        return _fail(EXIT_VALIDATION, exc)


if __name__ == "__main__":
    sys.exit(main())
