"""Kalman estimation and forecasting over a growing layer stack.

Every sample the filter predicts with the epoch's discrete model and then
corrects with a full-state feedback signal: real measurements while the
current layer is younger than the split time, pseudo-measurements after
that. A new layer enters the state at its peak temperature.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ValidationError
from .rom import BuildSchedule, DiscreteModel
from .traces import ThermalTrace

REAL = "real"
PSEUDO = "pseudo"


def _as_cov(value, n: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return float(arr) * np.eye(n)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < n:
        raise ValidationError(f"{name} must be a scalar or a square matrix of size >= {n}")
    return arr[:n, :n].copy()


@dataclass(frozen=True)
class NoiseConfig:
    """Process and measurement covariances [degC^2].

    Scalars mean ``sigma * I``; a full matrix is cut to the leading block
    matching the current number of layers. ``p0`` is the variance given to
    a freshly added layer and defaults to ``sigma_m``.
    """

    sigma_p: object = 2.3
    sigma_m: object = 1.0
    p0: float | None = None

    def __post_init__(self):
        for name in ("sigma_p", "sigma_m"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} must be finite")
            if arr.ndim == 0:
                if arr < 0:
                    raise ValidationError(f"{name} must be non-negative")
                continue
            if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
                raise ValidationError(f"{name} must be a scalar or square matrix")
            if not np.allclose(arr, arr.T):
                raise ValidationError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(arr).min() < -1e-12:
                raise ValidationError(f"{name} must be positive semidefinite")
        if self.p0 is not None and not self.p0 >= 0:
            raise ValidationError("p0 must be non-negative")

    def process(self, n: int) -> np.ndarray:
        return _as_cov(self.sigma_p, n, "sigma_p")

    def measurement(self, n: int) -> np.ndarray:
        return _as_cov(self.sigma_m, n, "sigma_m")

    @property
    def initial_variance(self) -> float:
        if self.p0 is not None:
            return float(self.p0)
        m = np.asarray(self.sigma_m, dtype=float)
        return float(m) if m.ndim == 0 else float(m[0, 0])


@dataclass(frozen=True)
class FilterState:
    """Estimate, covariance and the gain/mode history accumulated so far."""

    estimate: np.ndarray
    covariance: np.ndarray
    gain_history: tuple = ()
    mode_history: tuple = ()

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.estimate, dtype=float))
        p = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if p.shape != (x.size, x.size):
            raise ValidationError(f"covariance shape {p.shape} does not match state size {x.size}")
        object.__setattr__(self, "estimate", x)
        object.__setattr__(self, "covariance", p)

    @classmethod
    def initial(cls, t_mp, variance: float) -> "FilterState":
        x = np.atleast_1d(np.asarray(t_mp, dtype=float))
        return cls(x, variance * np.eye(x.size))

    @property
    def n(self) -> int:
        return self.estimate.size


def _predict(x, p, model: DiscreteModel, u, q):
    x = model.a @ x + (model.b @ np.atleast_1d(u)).reshape(-1)
    p = model.a @ p @ model.a.T + q
    return x, p


def _update(x, p, y, r):
    s = p + r
    try:
        gain = np.linalg.solve(s.T, p.T).T  # p @ inv(s)
    except np.linalg.LinAlgError:
        # p vanishes along every null direction of s, so the pseudo-inverse
        # gives the limiting gain (zero there)
        gain = p @ np.linalg.pinv(s)
    if not np.all(np.isfinite(gain)):
        raise NumericalError("innovation covariance is not invertible")
    x = x + gain @ (y - x)
    p = (np.eye(x.size) - gain) @ p
    p = 0.5 * (p + p.T)
    return x, p, gain


def predict(state: FilterState, model: DiscreteModel, u, noise: NoiseConfig) -> FilterState:
    """Time update: ``x <- a x + b u``, ``P <- a P a' + sigma_p``."""
    if model.n != state.n:
        raise ValidationError(f"model for {model.n} layers applied to a {state.n}-layer state")
    x, p = _predict(state.estimate, state.covariance, model, u, noise.process(state.n))
    return FilterState(x, p, state.gain_history, state.mode_history)


def update(state: FilterState, y, noise: NoiseConfig, mode: str = REAL) -> FilterState:
    """Measurement update with full-state feedback ``y`` (H = I)."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.shape != state.estimate.shape:
        raise ValidationError(f"feedback of size {y.size} for a {state.n}-layer state")
    if np.any(np.isnan(y)):
        raise ValidationError("feedback contains NaN")
    if mode not in (REAL, PSEUDO):
        raise ValidationError(f"unknown mode {mode!r}")
    x, p, gain = _update(state.estimate, state.covariance, y, noise.measurement(state.n))
    return FilterState(x, p, state.gain_history + (gain,), state.mode_history + (mode,))


def grow(state: FilterState, t_mp: float, variance: float) -> FilterState:
    """Append a freshly deposited layer at ``t_mp`` with the given variance."""
    n = state.n
    p = np.zeros((n + 1, n + 1))
    p[:n, :n] = state.covariance
    p[n, n] = variance
    return FilterState(np.append(state.estimate, t_mp), p, state.gain_history, state.mode_history)


@dataclass
class FilterRun:
    """Traces and per-sample diagnostics from :func:`run`.

    ``covariances`` and ``gains`` have shape (M, N, N) and are NaN outside
    the active block.
    """

    estimate: ThermalTrace
    forecast: ThermalTrace
    combined: ThermalTrace
    open_loop: ThermalTrace
    times: np.ndarray
    covariances: np.ndarray
    gains: np.ndarray
    modes: np.ndarray
    relative: np.ndarray = field(repr=False)


def run(
    schedule: BuildSchedule,
    models: dict,
    measurements: ThermalTrace,
    pseudo: ThermalTrace,
    noise: NoiseConfig | None = None,
    split_time: float = 70.0,
) -> FilterRun:
    """Estimate and forecast over every epoch of ``schedule``.

    In epoch ``n`` the samples of ``schedule.epoch_grid(n)`` are visited in
    order; at relative time ``tau`` the feedback is the measured row when
    ``tau <= split_time`` and the pseudo row otherwise. The open-loop trace
    restarts from the measured row at each epoch start and is then
    propagated by the same models without correction.
    """
    noise = NoiseConfig() if noise is None else noise
    n_layers = schedule.n_layers
    if n_layers == 0:
        empty = ThermalTrace(np.empty(0), np.empty((0, 0)), "kalman")
        return FilterRun(empty, empty.with_kind("forecast"), empty, empty.with_kind("open-loop"),
                         np.empty(0), np.empty((0, 0, 0)), np.empty((0, 0, 0)), np.empty(0, dtype=object), np.empty(0))
    if not split_time >= 0:
        raise ValidationError("split time must be non-negative")
    missing = [n for n in range(1, n_layers + 1) if n not in models]
    if missing:
        raise ValidationError(f"no discrete model for epochs {missing}")
    u = np.array([schedule.t_ambient])
    p0 = noise.initial_variance

    all_t, rel, modes = [], [], []
    for n in range(1, n_layers + 1):
        t, _ = schedule.epoch_grid(n)
        all_t.append(t)
        rel.append(t - schedule.deposition_times[n - 1])
    times = np.concatenate(all_t)
    rel = np.concatenate(rel)
    real_mask = rel <= split_time + 1e-9
    # feedback rows, validated up front so gaps fail before any filtering
    feed = np.full((times.size, n_layers), np.nan)
    if real_mask.any():
        feed[real_mask] = _rows(measurements, times[real_mask], n_layers, "measurements")
    if (~real_mask).any():
        feed[~real_mask] = _rows(pseudo, times[~real_mask], n_layers, "pseudo-data")

    M = times.size
    est = np.full((M, n_layers), np.nan)
    ol = np.full((M, n_layers), np.nan)
    covs = np.full((M, n_layers, n_layers), np.nan)
    gains = np.full((M, n_layers, n_layers), np.nan)
    x = np.empty(0)
    p = np.empty((0, 0))
    x_ol = np.empty(0)
    i = 0
    for n in range(1, n_layers + 1):
        model = models[n]
        if model.n != n:
            raise ValidationError(f"epoch {n} model has {model.n} states")
        q = noise.process(n)
        r = noise.measurement(n)
        t, steps = schedule.epoch_grid(n)
        for k in range(t.size):
            y = feed[i, :n]
            if np.any(np.isnan(y)):
                raise ValidationError(f"feedback missing for layers 1..{n} at t={times[i]:g} s")
            if k == 0:
                # new layer enters; previous layers keep their predicted values
                x = np.append(x, schedule.t_mp[n - 1])
                grown = np.zeros((n, n))
                grown[: n - 1, : n - 1] = p
                grown[n - 1, n - 1] = p0
                p = grown
                x_ol = feed[i, :n].copy()
            else:
                m = _step_model(model, steps[k - 1], schedule.dt)
                x, p = _predict(x, p, m, u, q)
                x_ol = m.a @ x_ol + (m.b @ u).reshape(-1)
            x, p, gain = _update(x, p, y, r)
            if not np.all(np.isfinite(x)):
                raise NumericalError(f"filter diverged at t={times[i]:g} s")
            est[i, :n] = x
            ol[i, :n] = x_ol
            covs[i, :n, :n] = p
            gains[i, :n, :n] = gain
            modes.append(REAL if real_mask[i] else PSEUDO)
            i += 1
        # carry the state across the epoch boundary
        if n < n_layers:
            step = schedule.deposition_times[n] - t[-1]
            x, p = _predict(x, p, _step_model(model, step, schedule.dt), u, q)

    modes = np.array(modes, dtype=object)
    combined = ThermalTrace(times, est, "kalman")
    estimate = combined.select(real_mask).with_kind("estimate")
    forecast = combined.select(~real_mask).with_kind("forecast")
    return FilterRun(estimate, forecast, combined, ThermalTrace(times, ol, "open-loop"),
                     times, covs, gains, modes, rel)


def _step_model(model: DiscreteModel, h: float, dt: float) -> DiscreteModel:
    """The epoch model rescaled to a step ``h`` (only the last step of an epoch may differ)."""
    if abs(h - model.dt) <= 1e-9 * max(1.0, dt) or model.dt == 0:
        return model
    a_c = (model.a - np.eye(model.n)) / model.dt
    b_c = model.b / model.dt
    return DiscreteModel(np.eye(model.n) + h * a_c, h * b_c, h, model.epoch)


def _rows(trace: ThermalTrace, times, width: int, what: str) -> np.ndarray:
    try:
        return trace.values_at(times, width=width)
    except ValidationError as exc:
        raise ValidationError(f"{what}: {exc}") from None
