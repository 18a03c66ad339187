"""Genetic-algorithm identification of the effective layer parameters.

Each epoch is fitted on its own: the model starts from the measured
temperatures at the epoch's first sample, runs with one shared parameter
set for every active layer and is scored by the RMSE against all active
layers over the epoch window.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .rom import BuildSchedule, LayerParams, ParamSchedule, integrate_epoch
from .traces import ThermalTrace

log = logging.getLogger(__name__)

NAMES = ("c1", "c2", "c3", "c4", "c5")
DEFAULT_LOWER = (5e3, 0.5, 1e3, 1e3, 0.0)
DEFAULT_UPPER = (2e4, 2.0, 5e4, 5e4, 5e4)
MIN_WINDOW = 10


@dataclass(frozen=True)
class ParamBounds:
    """Box bounds on ``c1..c5``; ``c5`` is held at 0 unless ``fit_c5``.

    ``overrides`` maps an epoch number to its own ``(lower, upper)`` pair.
    """

    lower: tuple = DEFAULT_LOWER
    upper: tuple = DEFAULT_UPPER
    fit_c5: bool = False
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        for lo, hi in [(self.lower, self.upper), *self.overrides.values()]:
            self._check(lo, hi)

    def _check(self, lo, hi):
        lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
        if lo.shape != (5,) or hi.shape != (5,):
            raise ValidationError("bounds need five entries (c1..c5)")
        d = 5 if self.fit_c5 else 4
        if not np.all(lo[:d] < hi[:d]):
            bad = [NAMES[i] for i in range(d) if not lo[i] < hi[i]]
            raise ValidationError(f"infeasible bounds for {', '.join(bad)}")
        if lo[0] <= 0 or lo[1] <= 0:
            raise ValidationError("c1 and c2 bounds must be positive")
        if self.fit_c5 and lo[4] < 0:
            raise ValidationError("c5 bounds must be non-negative")

    @classmethod
    def around(cls, theta, frac: float = 0.5, fit_c5: bool = False) -> "ParamBounds":
        """Bounds of +-``frac`` around ``theta`` (c1..c4, optionally c5)."""
        theta = np.append(np.asarray(theta, dtype=float), [0.0] * (5 - len(theta)))
        a, b = theta * (1 - frac), theta * (1 + frac)
        return cls(tuple(np.minimum(a, b)), tuple(np.maximum(a, b)), fit_c5)

    @property
    def dim(self) -> int:
        return 5 if self.fit_c5 else 4

    def for_epoch(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.overrides.get(n, (self.lower, self.upper))
        return np.asarray(lo, dtype=float)[: self.dim], np.asarray(hi, dtype=float)[: self.dim]

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper), "fit_c5": self.fit_c5}


@dataclass(frozen=True)
class GaConfig:
    """Real-coded GA settings."""

    population: int = 50
    generations: int = 100
    crossover: float = 0.8
    mutation: float = 0.1
    elite: int = 2
    seed: int = 42
    tournament: int = 3

    def __post_init__(self):
        if self.population < 4:
            raise ValidationError("population must be at least 4")
        if self.generations < 1:
            raise ValidationError("need at least one generation")
        if not (0 <= self.crossover <= 1 and 0 <= self.mutation <= 1):
            raise ValidationError("crossover and mutation rates must lie in [0, 1]")
        if not 0 <= self.elite < self.population:
            raise ValidationError("elite count must be below the population size")
        if self.tournament < 1:
            raise ValidationError("tournament size must be positive")


def rmse(predicted: ThermalTrace, truth: ThermalTrace) -> float:
    """Root-mean-square difference over samples and layers present in both.

    Traces on different grids are both interpolated onto the union of
    their sample times inside the common time range.
    """
    a, b = predicted, truth
    if not (a.times.shape == b.times.shape and np.array_equal(a.times, b.times)):
        if len(a) == 0 or len(b) == 0:
            raise ValidationError("traces do not overlap in time")
        lo, hi = max(a.times[0], b.times[0]), min(a.times[-1], b.times[-1])
        grid = np.union1d(a.times, b.times)
        grid = grid[(grid >= lo) & (grid <= hi)]
        if grid.size == 0:
            raise ValidationError("traces do not overlap in time")
        a, b = a.resample(grid), b.resample(grid)
    width = min(a.n_layers, b.n_layers)
    diff = a.temps[:, :width] - b.temps[:, :width]
    diff = diff[np.isfinite(diff)]
    if diff.size == 0:
        raise ValidationError("traces share no finite samples")
    return float(np.sqrt(np.mean(diff**2)))


@dataclass
class EpochFit:
    """Result of one epoch identification."""

    epoch: int
    params: LayerParams
    rmse: float
    history: np.ndarray
    initial_best: float


@dataclass
class BuildFit:
    """Identified schedule plus the per-epoch RMSE table."""

    schedule: ParamSchedule
    fits: list

    @property
    def rmse_table(self) -> np.ndarray:
        return np.array([f.rmse for f in self.fits])


def _epoch_problem(truth: ThermalTrace, schedule: BuildSchedule, n: int):
    """Initial state, step sizes and target rows for epoch ``n``."""
    grid, steps = schedule.epoch_grid(n)
    if grid.size < MIN_WINDOW:
        raise ValidationError(f"epoch {n} window has {grid.size} samples, need at least {MIN_WINDOW}")
    start, stop = schedule.window(n)
    if truth.times[0] > start + 1e-9 or truth.times[-1] < grid[-1] - 1e-9:
        raise ValidationError(f"truth does not cover epoch {n} window [{start:g}, {stop:g})")
    try:
        target = truth.values_at(grid, width=n)
    except ValidationError:
        target = truth.resample(grid).temps
        target = np.hstack([target, np.full((grid.size, max(0, n - target.shape[1])), np.nan)])[:, :n]
    if np.any(np.isnan(target)):
        raise ValidationError(f"truth lacks some of layers 1..{n} in epoch {n}")
    return target[0], steps[:-1], target


def _fitness(thetas, problems, n, t_base, t_ambient, c5_fixed=0.0) -> np.ndarray:
    """RMSE of each parameter row over all (initial, steps, target) problems."""
    p = thetas.shape[0]
    coeffs = np.empty((p, n, 5))
    coeffs[..., :4] = thetas[:, None, :4]
    coeffs[..., 4] = thetas[:, None, 4] if thetas.shape[1] == 5 else c5_fixed
    sq, count = np.zeros(p), 0
    for x0, steps, target in problems:
        traj = integrate_epoch(coeffs, x0, steps, t_base, t_ambient)
        with np.errstate(over="ignore", invalid="ignore"):
            sq += np.sum((traj - target) ** 2, axis=(-2, -1))
        count += target.size
    out = np.sqrt(sq / count)
    out[~np.isfinite(out)] = np.inf
    return out


def _ga(objective, lo, hi, ga: GaConfig, seed: int):
    rng = np.random.default_rng(seed)
    span = hi - lo
    d = lo.size

    def score(u):
        return objective(lo + u * span)

    pop = rng.random((ga.population, d))
    fit = score(pop)
    initial_best = float(fit.min())
    history = [initial_best]
    n_child = ga.population - ga.elite
    for g in range(ga.generations):
        order = np.argsort(fit, kind="stable")
        elite = pop[order[: ga.elite]]
        elite_fit = fit[order[: ga.elite]]
        # tournament selection of two parents per child
        entrants = rng.integers(0, ga.population, size=(n_child, 2, ga.tournament))
        winners = np.take_along_axis(entrants, np.argmin(fit[entrants], axis=-1)[..., None], -1)[..., 0]
        p1, p2 = pop[winners[:, 0]], pop[winners[:, 1]]
        # blend crossover with a little extrapolation
        alpha = rng.uniform(-0.25, 1.25, size=(n_child, d))
        cross = rng.random(n_child) < ga.crossover
        child = np.where(cross[:, None], p1 + alpha * (p2 - p1), p1)
        sigma = 0.1 * (1 - g / ga.generations) + 0.005
        mutate = rng.random((n_child, d)) < ga.mutation
        child = np.clip(child + mutate * rng.normal(0.0, sigma, size=(n_child, d)), 0.0, 1.0)
        pop = np.vstack([elite, child])
        fit = np.concatenate([elite_fit, score(child)])
        history.append(float(fit.min()))
    best = int(np.argmin(fit))
    return lo + pop[best] * span, float(fit[best]), np.array(history), initial_best


def fit_epoch(
    datasets: Sequence[tuple[ThermalTrace, BuildSchedule]],
    n: int,
    bounds: ParamBounds | None = None,
    ga: GaConfig | None = None,
) -> EpochFit:
    """Identify epoch ``n`` jointly over one or more (truth, schedule) pairs."""
    bounds = ParamBounds() if bounds is None else bounds
    ga = GaConfig() if ga is None else ga
    if not datasets:
        raise ValidationError("need at least one dataset")
    problems = [_epoch_problem(tr, sch, n) for tr, sch in datasets]
    t_base, t_amb = datasets[0][1].t_base, datasets[0][1].t_ambient
    lo, hi = bounds.for_epoch(n)
    theta, best, history, initial = _ga(
        lambda th: _fitness(th, problems, n, t_base, t_amb), lo, hi, ga, ga.seed + n
    )
    c5 = theta[4] if bounds.fit_c5 else 0.0
    params = LayerParams(*(float(v) for v in theta[:4]), c5=float(c5))
    log.info("epoch %d: rmse %.4g degC, theta %s", n, best, np.array2string(theta, precision=5))
    return EpochFit(n, params, best, history, initial)


def identify_epoch(
    truth: ThermalTrace,
    schedule: BuildSchedule,
    bounds: ParamBounds | None = None,
    ga: GaConfig | None = None,
    epoch: int | None = None,
) -> LayerParams:
    """Parameters minimising the epoch RMSE (default epoch: the last one)."""
    n = schedule.n_layers if epoch is None else epoch
    return fit_epoch([(truth, schedule)], n, bounds, ga).params


def identify_build(
    truth: ThermalTrace | Sequence[tuple[ThermalTrace, BuildSchedule]],
    schedule: BuildSchedule | None = None,
    bounds: ParamBounds | None = None,
    ga: GaConfig | None = None,
    epochs: Sequence[int] | None = None,
) -> BuildFit:
    """Fit every epoch and collect a schedule shared by all active layers."""
    datasets = [(truth, schedule)] if isinstance(truth, ThermalTrace) else list(truth)
    n_layers = min(s.n_layers for _, s in datasets)
    epochs = range(1, n_layers + 1) if epochs is None else epochs
    fits = [fit_epoch(datasets, n, bounds, ga) for n in epochs]
    sched = ParamSchedule(tuple((f.epoch, {j: f.params for j in range(1, f.epoch + 1)}) for f in fits))
    return BuildFit(sched, fits)
