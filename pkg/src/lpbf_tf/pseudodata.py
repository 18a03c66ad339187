"""Pseudo-measurements standing in for data that has not arrived yet.

The first layer has no earlier layers to learn from, so its feedback is a
triangle fitted to first-layer histories of other builds: an instantaneous
peak, a linear decay over the base width and a flat settled tail. Any
later layer uses the average of earlier layers' histories at the same
depth below the top, each aligned to its own deposition instant.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares

from .errors import ValidationError
from .rom import BuildSchedule
from .traces import LayerSegment, ThermalTrace

SETTLE_BAND = 0.02


@dataclass(frozen=True)
class TriangleParams:
    """Peak and settled temperature [degC], base width [s] and onset [s]."""

    t_peak: float
    t_settle: float
    t_base_width: float
    onset: float = 0.0

    def __post_init__(self):
        vals = (self.t_peak, self.t_settle, self.t_base_width, self.onset)
        if not all(np.isfinite(vals)):
            raise ValidationError("triangle parameters must be finite")
        if not self.t_peak > self.t_settle:
            raise ValidationError(f"peak {self.t_peak:g} must exceed settle {self.t_settle:g}")
        if not self.t_base_width > 0:
            raise ValidationError("triangle base width must be positive")

    def __call__(self, t) -> np.ndarray:
        """Triangle value at times ``t``; times before onset hold the peak."""
        s = (np.asarray(t, dtype=float) - self.onset) / self.t_base_width
        frac = np.clip(s, 0.0, 1.0)
        return self.t_peak + (self.t_settle - self.t_peak) * frac

    @property
    def literal_value(self) -> float:
        """The constant ``(T_p - T_s)/T_b + T_p``."""
        return (self.t_peak - self.t_settle) / self.t_base_width + self.t_peak


def _first_layer(history) -> tuple[np.ndarray, np.ndarray]:
    """Times (relative to the first sample) and values of a first-layer history."""
    if isinstance(history, LayerSegment):
        t, v = np.asarray(history.rel_times, float), np.asarray(history.values, float)
    elif isinstance(history, ThermalTrace):
        t, v = history.layer(1)
        # only while layer 1 is the top layer
        alone = history.n_active[np.isfinite(history.temps[:, 0])] == 1
        t, v = t[alone], v[alone]
    else:
        t, v = (np.asarray(a, dtype=float) for a in history)
    if t.size < 3:
        raise ValidationError(f"first-layer history has {t.size} samples, need at least 3")
    if np.any(np.diff(t) <= 0):
        raise ValidationError("first-layer history times are not strictly increasing")
    return t - t[0], v


def _features(t, v) -> TriangleParams:
    i_peak = int(np.argmax(v))
    peak, settle = float(v[i_peak]), float(v[-1])
    if not peak > settle:
        raise ValidationError("history never rises above its final value")
    band = SETTLE_BAND * abs(settle)
    tail_t, tail_v = t[i_peak + 1 :], v[i_peak + 1 :]
    inside = np.flatnonzero(np.abs(tail_v - settle) <= band)
    first_in = int(inside[0]) if inside.size else tail_t.size - 1
    # secant from the peak through the last point still on the slope,
    # extended down to the settle level
    k = first_in - 1 if first_in > 0 else first_in
    drop = peak - tail_v[k]
    width = (tail_t[k] - t[i_peak]) * (peak - settle) / drop if drop > 0 else tail_t[k] - t[i_peak]
    return TriangleParams(peak, settle, float(width), float(t[i_peak]))


def _least_squares(t, v, start: TriangleParams) -> TriangleParams:
    def resid(theta):
        peak, settle, width = theta
        s = np.clip((t - start.onset) / max(width, 1e-12), 0.0, 1.0)
        return peak + (settle - peak) * s - v

    x0 = [start.t_peak, start.t_settle, start.t_base_width]
    lo = [start.t_settle, -np.inf, 1e-9]
    sol = least_squares(resid, x0, bounds=(lo, np.inf), x_scale="jac")
    peak, settle, width = sol.x
    return TriangleParams(float(peak), float(settle), float(width), start.onset)


def fit_triangle(historical: Sequence, method: str = "features") -> TriangleParams:
    """Fit the triangle to each first-layer history and average the parameters.

    Parameters
    ----------
    historical : sequence
        :class:`ThermalTrace` objects (layer 1 while it is on top),
        :class:`LayerSegment` objects or ``(times, values)`` pairs.
    method : {'features', 'lsq'}
        ``features`` reads peak, final value and the 2 % settling point
        directly; ``lsq`` refines them by least squares.
    """
    if isinstance(historical, (ThermalTrace, LayerSegment)):
        historical = [historical]
    if len(historical) == 0:
        raise ValidationError("need at least one first-layer history")
    if method not in ("features", "lsq"):
        raise ValidationError(f"unknown triangle fit method {method!r}")
    fits = []
    for h in historical:
        t, v = _first_layer(h)
        p = _features(t, v)
        fits.append(_least_squares(t, v, p) if method == "lsq" else p)
    arr = np.array([[f.t_peak, f.t_settle, f.t_base_width, f.onset] for f in fits])
    return TriangleParams(*arr.mean(axis=0))


def first_layer_pseudo(params: TriangleParams, times, mode: str = "triangle") -> ThermalTrace:
    """First-layer pseudo-measurements at ``times`` (relative to deposition)."""
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        raise ValidationError("empty time grid")
    if mode == "triangle":
        values = params(times)
    elif mode == "literal":
        values = np.full(times.size, params.literal_value)
    else:
        raise ValidationError(f"unknown pseudo-data mode {mode!r}")
    return ThermalTrace(times, values.reshape(-1, 1), "pseudo")


def _mean_of(segments: Sequence[LayerSegment], rel_times) -> np.ndarray:
    stack = np.array([s.resample(rel_times, tolerance=1e-6) for s in segments])
    # sorting first makes the sum independent of input order
    return np.sort(stack, axis=0).sum(axis=0) / len(segments)


def layer_n_pseudo(prior: Sequence[LayerSegment], n: int, rel_times=None) -> ThermalTrace:
    """Pointwise mean of layers ``1..n-1`` over their own build windows.

    Each segment is timed from its own deposition instant and linearly
    interpolated onto ``rel_times`` (default: the first segment's grid).
    """
    if n < 2:
        raise ValidationError(f"layer-average pseudo-data needs n >= 2, got {n}")
    if len(prior) != n - 1:
        raise ValidationError(f"expected {n - 1} prior segments for layer {n}, got {len(prior)}")
    rel = np.asarray(prior[0].rel_times if rel_times is None else rel_times, dtype=float)
    return ThermalTrace(rel, _mean_of(prior, rel).reshape(-1, 1), "pseudo")


def _window_segments(truth: ThermalTrace, schedule: BuildSchedule) -> dict:
    segs = {}
    for w in range(1, schedule.n_layers + 1):
        start, stop = schedule.window(w)
        for j in range(1, w + 1):
            segs[w, j] = truth.segment(j, start, stop)
    return segs


def depth_average(segs: dict, n: int, j: int, rel_times) -> np.ndarray:
    """Pseudo values for layer ``j`` during epoch ``n`` from completed epochs.

    Averages layer ``j'`` over epoch ``j' + m`` for every earlier epoch at
    the same depth ``m = n - j``; when no earlier epoch reaches that depth
    the deepest available one is used.
    """
    for m in range(n - j, -1, -1):
        found = [segs[jj + m, jj] for jj in range(1, n - m) if (jj + m, jj) in segs]
        if found:
            return _mean_of(found, rel_times)
    raise ValidationError(f"no history available for layer {j} in epoch {n}")


def build_feed(
    truth: ThermalTrace,
    schedule: BuildSchedule,
    split_time: float,
    triangle: TriangleParams | None = None,
    mode: str = "triangle",
) -> ThermalTrace:
    """Pseudo rows for every forecast sample (relative time above ``split_time``).

    Only epochs completed before the current one feed the averages. The
    top layer of epoch 1 uses ``triangle``.
    """
    segs = _window_segments(truth, schedule)
    times, rows = [], []
    for n in range(1, schedule.n_layers + 1):
        t, _ = schedule.epoch_grid(n)
        rel = t - schedule.deposition_times[n - 1]
        fc = rel > split_time + 1e-9
        if not fc.any():
            continue
        block = np.full((fc.sum(), schedule.n_layers), np.nan)
        for j in range(1, n + 1):
            if n == 1:
                if triangle is None:
                    raise ValidationError("first-layer pseudo-data needs triangle parameters")
                block[:, 0] = first_layer_pseudo(triangle, rel[fc], mode).temps[:, 0]
            elif j == n:
                prior = [segs[w, w] for w in range(1, n)]
                block[:, j - 1] = layer_n_pseudo(prior, n, rel[fc]).temps[:, 0]
            else:
                block[:, j - 1] = depth_average(segs, n, j, rel[fc])
        times.append(t[fc])
        rows.append(block)
    if not times:
        return ThermalTrace(np.empty(0), np.empty((0, schedule.n_layers)), "pseudo")
    return ThermalTrace(np.concatenate(times), np.vstack(rows), "pseudo")
