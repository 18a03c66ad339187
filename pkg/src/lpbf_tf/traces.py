"""Per-layer temperature time series.

A :class:`ThermalTrace` stores one row per sample time and one column per
layer. Layers that have not been deposited yet at a given sample hold NaN,
so every row is a run of finite values followed by NaNs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

KINDS = ("ground-truth", "rom", "estimate", "forecast", "pseudo", "kalman", "open-loop")


@dataclass(frozen=True)
class LayerSegment:
    """One layer's temperatures over a window, on times relative to ``start``."""

    layer: int
    start: float
    rel_times: np.ndarray
    values: np.ndarray

    def resample(self, rel_times, tolerance: float = 0.0) -> np.ndarray:
        """Linearly interpolate onto ``rel_times``.

        Points beyond the covered range by at most ``tolerance`` are held at
        the nearest end value; anything further out is an error. A grid
        matching the segment's own to within ``tolerance`` returns the
        stored samples.
        """
        rel_times = np.asarray(rel_times, dtype=float)
        lo, hi = self.rel_times[0], self.rel_times[-1]
        if rel_times.size and (rel_times.min() < lo - tolerance or rel_times.max() > hi + tolerance):
            raise ValidationError(
                f"layer {self.layer} segment covers [{lo:g}, {hi:g}] s, "
                f"requested [{rel_times.min():g}, {rel_times.max():g}] s"
            )
        # grids that already agree are used as is, not interpolated
        if rel_times.shape == self.rel_times.shape and np.allclose(rel_times, self.rel_times, rtol=0, atol=tolerance):
            return np.array(self.values, dtype=float)
        return np.interp(rel_times, self.rel_times, self.values)


@dataclass(frozen=True)
class ThermalTrace:
    """Sampled layer temperatures [degC] at strictly increasing times [s].

    Parameters
    ----------
    times : array_like, shape (M,)
    temps : array_like, shape (M, N)
        ``temps[i, j]`` is layer ``j + 1`` at ``times[i]``; NaN while the
        layer does not exist.
    kind : str
        Provenance tag, one of :data:`KINDS`.
    """

    times: np.ndarray
    temps: np.ndarray
    kind: str = "ground-truth"
    n_active: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        times = np.array(self.times, dtype=float).reshape(-1)
        temps = np.array(self.temps, dtype=float)
        if temps.ndim == 1:
            temps = temps.reshape(-1, 1)
        if temps.ndim != 2 or temps.shape[0] != times.shape[0]:
            raise ValidationError(
                f"temps shape {temps.shape} does not match {times.shape[0]} sample times"
            )
        if self.kind not in KINDS:
            raise ValidationError(f"unknown trace kind {self.kind!r}")
        if times.size > 1:
            bad = np.flatnonzero(np.diff(times) <= 0)
            if bad.size:
                raise ValidationError(f"times not strictly increasing at sample {bad[0] + 1}")
        if not np.all(np.isfinite(times)):
            raise ValidationError("non-finite sample time")
        if np.any(np.isinf(temps)):
            raise ValidationError("infinite temperature in trace")
        finite = np.isfinite(temps)
        n_active = finite.sum(axis=1)
        # active layers must form a prefix 1..k in every row
        prefix = np.arange(temps.shape[1])[None, :] < n_active[:, None]
        if not np.array_equal(finite, prefix):
            row = int(np.flatnonzero((finite != prefix).any(axis=1))[0])
            raise ValidationError(f"row {row} has a gap in its active layers")
        times.flags.writeable = False
        temps.flags.writeable = False
        n_active.flags.writeable = False
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "temps", temps)
        object.__setattr__(self, "n_active", n_active)

    @property
    def n_layers(self) -> int:
        return self.temps.shape[1]

    def __len__(self) -> int:
        return self.times.shape[0]

    def with_kind(self, kind: str) -> "ThermalTrace":
        return ThermalTrace(self.times, self.temps, kind)

    def layer(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        """Times and values where 1-based layer ``j`` exists."""
        if not 1 <= j <= self.n_layers:
            raise ValidationError(f"layer {j} outside 1..{self.n_layers}")
        col = self.temps[:, j - 1]
        mask = np.isfinite(col)
        return self.times[mask], col[mask]

    def select(self, mask) -> "ThermalTrace":
        """Rows where ``mask`` is true; trailing all-NaN columns are dropped."""
        mask = np.asarray(mask, dtype=bool)
        temps = self.temps[mask]
        width = int(np.isfinite(temps).sum(axis=1).max()) if temps.shape[0] else 0
        return ThermalTrace(self.times[mask], temps[:, :width], self.kind)

    def window(self, t0: float, t1: float, closed: str = "left") -> "ThermalTrace":
        """Rows with ``t0 <= t < t1`` (``closed='left'``) or ``t0 <= t <= t1`` ('both')."""
        t = self.times
        upper = t <= t1 if closed == "both" else t < t1
        return self.select((t >= t0) & upper)

    def segment(self, j: int, start: float, stop: float) -> LayerSegment:
        """Layer ``j`` over ``[start, stop)``, re-timed so ``start`` maps to 0."""
        t, v = self.layer(j)
        mask = (t >= start - 1e-9) & (t < stop - 1e-9)
        if mask.sum() < 2:
            raise ValidationError(f"layer {j} has fewer than 2 samples in [{start:g}, {stop:g})")
        return LayerSegment(j, float(start), t[mask] - start, v[mask])

    def values_at(self, times, width: int | None = None, atol: float = 1e-9) -> np.ndarray:
        """Rows at ``times``; exact sample matches are required (within ``atol``)."""
        times = np.asarray(times, dtype=float)
        idx = np.searchsorted(self.times, times - atol)
        idx = np.clip(idx, 0, len(self.times) - 1)
        if np.any(np.abs(self.times[idx] - times) > atol):
            k = int(np.flatnonzero(np.abs(self.times[idx] - times) > atol)[0])
            raise ValidationError(f"trace has no sample at t={times[k]:g} s")
        rows = self.temps[idx]
        if width is not None:
            if width > self.n_layers:
                pad = np.full((rows.shape[0], width - self.n_layers), np.nan)
                rows = np.hstack([rows, pad])
            rows = rows[:, :width]
        return rows

    def resample(self, times) -> "ThermalTrace":
        """Linear interpolation of every layer onto ``times``.

        A layer is NaN at times before its first sample or after its last.
        """
        times = np.asarray(times, dtype=float)
        out = np.full((times.size, self.n_layers), np.nan)
        for j in range(1, self.n_layers + 1):
            t, v = self.layer(j)
            if t.size == 0:
                continue
            inside = (times >= t[0] - 1e-12) & (times <= t[-1] + 1e-12)
            out[inside, j - 1] = np.interp(times[inside], t, v)
        return ThermalTrace(times, out, self.kind)


def stack_rows(times, rows, kind: str, width: int | None = None) -> ThermalTrace:
    """Build a trace from ragged per-sample vectors."""
    width = width if width is not None else max((len(r) for r in rows), default=0)
    temps = np.full((len(rows), width), np.nan)
    for i, r in enumerate(rows):
        temps[i, : len(r)] = r
    return ThermalTrace(np.asarray(times, dtype=float), temps, kind)
