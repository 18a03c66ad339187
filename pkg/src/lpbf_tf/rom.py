"""Reduced-order layer thermal model.

Each deposited layer is a single lumped temperature obeying

    c1*c2 * dT_n/dt = -c3*(T_n - T_{n-1}) + c4*(T_{n+1} - T_n) - c5*(T_n - T_inf)

where layer 1 conducts to the base plate and the top layer has no ``c4``
term (its convective losses through the top and sides share the ``c5``
slot). Layers are integrated with forward Euler between depositions; a new
layer enters at its peak temperature ``t_mp`` while the others carry on
from where they were.

The same coefficients also define the diagonal state-space model used by
the Kalman filter (:func:`build_continuous`, :func:`discretize`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ValidationError
from .traces import ThermalTrace

T_AMBIENT = 27.0
T_BASE = 27.0
DEFAULT_DT = 0.1
DEFAULT_DWELL = 200.0


@dataclass(frozen=True)
class LayerParams:
    """Effective coefficients for one layer during one build epoch.

    ``c3`` is stored with whatever sign it was identified with; the model
    equation supplies the leading minus sign.
    """

    c1: float
    c2: float
    c3: float
    c4: float
    c5: float = 0.0

    def __post_init__(self):
        vals = (self.c1, self.c2, self.c3, self.c4, self.c5)
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError(f"non-finite parameter in {vals}")
        if self.c1 <= 0 or self.c2 <= 0:
            raise ValidationError(f"c1 and c2 must be positive, got c1={self.c1}, c2={self.c2}")
        if self.c5 < 0:
            raise ValidationError(f"c5 must be non-negative, got {self.c5}")

    @property
    def capacity(self) -> float:
        return self.c1 * self.c2

    def as_array(self) -> np.ndarray:
        return np.array([self.c1, self.c2, self.c3, self.c4, self.c5])

    def to_dict(self) -> dict:
        return {"c1": self.c1, "c2": self.c2, "c3": self.c3, "c4": self.c4, "c5": self.c5}

    @classmethod
    def from_dict(cls, d: Mapping) -> "LayerParams":
        return cls(float(d["c1"]), float(d["c2"]), float(d["c3"]), float(d["c4"]), float(d.get("c5", 0.0)))


@dataclass(frozen=True)
class ParamSchedule:
    """Per-epoch parameters: epoch ``n`` maps every layer 1..n to its coefficients."""

    epochs: tuple

    def __post_init__(self):
        norm = []
        for n, table in self.epochs:
            n = int(n)
            table = {int(k): v for k, v in dict(table).items()}
            missing = [j for j in range(1, n + 1) if j not in table]
            if missing:
                raise ValidationError(f"epoch {n} has no parameters for layers {missing}")
            norm.append((n, table))
        norm.sort(key=lambda e: e[0])
        if len({n for n, _ in norm}) != len(norm):
            raise ValidationError("duplicate epoch in parameter schedule")
        object.__setattr__(self, "epochs", tuple(norm))

    @classmethod
    def shared(cls, per_epoch: Sequence[LayerParams]) -> "ParamSchedule":
        """Epoch ``n`` applies ``per_epoch[n-1]`` to every active layer."""
        return cls(tuple((n, {j: p for j in range(1, n + 1)}) for n, p in enumerate(per_epoch, start=1)))

    @property
    def n_epochs(self) -> int:
        return len(self.epochs)

    def epoch_numbers(self) -> list[int]:
        return [n for n, _ in self.epochs]

    def for_epoch(self, n: int) -> list[LayerParams]:
        """Coefficients for layers 1..n during epoch ``n``."""
        for m, table in self.epochs:
            if m == n:
                return [table[j] for j in range(1, n + 1)]
        raise ValidationError(f"parameter schedule has no epoch {n}")

    def to_dict(self) -> dict:
        return {
            "epochs": [
                {"epoch": n, "layers": {str(j): table[j].to_dict() for j in sorted(table)}}
                for n, table in self.epochs
            ]
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ParamSchedule":
        try:
            epochs = [
                (int(e["epoch"]), {int(j): LayerParams.from_dict(p) for j, p in e["layers"].items()})
                for e in d["epochs"]
            ]
        except (KeyError, TypeError, AttributeError) as exc:
            raise ValidationError(f"malformed parameter schedule: {exc}") from exc
        return cls(tuple(epochs))


# Effective parameters for layer 1 while layers 1..10 are printed (C5 not given, so 0).
LAYER1_PARAMS = ParamSchedule.shared(
    [
        LayerParams(13190, 0.7, -1500, 1500),
        LayerParams(8190, 0.7, -5000, 5000),
        LayerParams(8190, 1.1, -35000, 35000),
        LayerParams(9190, 0.9, -35000, 35000),
        LayerParams(8190, 1.1, -40000, 40000),
        LayerParams(8190, 0.9, -25000, 25000),
        LayerParams(8190, 0.9, -30000, 30000),
        LayerParams(8190, 0.9, -30000, 30000),
        LayerParams(8190, 0.9, -35000, 35000),
        LayerParams(11518.68, 1.45, -10463.53, 36324.86),
    ]
)


@dataclass(frozen=True)
class BuildSchedule:
    """Deposition timing and boundary temperatures for a layer-by-layer build.

    ``deposition_times[k]`` is the instant layer ``k+1`` finishes scanning
    and enters the model at ``t_mp[k]``.
    """

    n_layers: int
    deposition_times: tuple
    t_end: float
    t_mp: tuple
    t_base: float = T_BASE
    t_ambient: float = T_AMBIENT
    dt: float = DEFAULT_DT

    def __post_init__(self):
        dep = tuple(float(t) for t in self.deposition_times)
        tmp = tuple(float(t) for t in self.t_mp)
        object.__setattr__(self, "deposition_times", dep)
        object.__setattr__(self, "t_mp", tmp)
        if self.n_layers < 0 or len(dep) != self.n_layers or len(tmp) != self.n_layers:
            raise ValidationError(
                f"n_layers={self.n_layers} but {len(dep)} deposition times and {len(tmp)} peak temperatures"
            )
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValidationError(f"dt must be positive, got {self.dt}")
        if self.n_layers == 0:
            return
        edges = np.array(dep + (float(self.t_end),))
        gaps = np.diff(edges)
        if np.any(gaps <= 0):
            raise ValidationError("deposition times must be strictly increasing and precede t_end")
        if self.dt >= gaps.min():
            raise ValidationError(f"dt={self.dt} is not below the shortest inter-layer gap {gaps.min():g}")
        low = [k + 1 for k, t in enumerate(tmp) if not t >= self.t_ambient]
        if low:
            raise ValidationError(f"t_mp below ambient for layers {low}")

    @classmethod
    def uniform(cls, n_layers: int, dwell: float = DEFAULT_DWELL, t_mp=1000.0, t0: float = 0.0, **kw):
        tmp = tuple(t_mp) if np.ndim(t_mp) else (float(t_mp),) * n_layers
        dep = tuple(t0 + k * dwell for k in range(n_layers))
        return cls(n_layers, dep, t0 + n_layers * dwell, tmp, **kw)

    def replace(self, **kw) -> "BuildSchedule":
        fields = dict(
            n_layers=self.n_layers, deposition_times=self.deposition_times, t_end=self.t_end,
            t_mp=self.t_mp, t_base=self.t_base, t_ambient=self.t_ambient, dt=self.dt,
        )
        fields.update(kw)
        return BuildSchedule(**fields)

    def window(self, n: int) -> tuple[float, float]:
        """``[start, stop)`` of epoch ``n`` (1-based), i.e. while layer ``n`` is on top."""
        if not 1 <= n <= self.n_layers:
            raise ValidationError(f"epoch {n} outside 1..{self.n_layers}")
        stop = self.deposition_times[n] if n < self.n_layers else self.t_end
        return self.deposition_times[n - 1], float(stop)

    def epoch_grid(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Sample times in ``[start, stop)`` of epoch ``n`` and the Euler step leaving each."""
        start, stop = self.window(n)
        span = stop - start
        n_full = int(math.floor(span / self.dt + 1e-9))
        rem = span - n_full * self.dt
        times = start + self.dt * np.arange(n_full)
        steps = np.full(n_full, self.dt)
        if rem > 1e-9 * self.dt:
            times = np.append(times, start + n_full * self.dt)
            steps = np.append(steps, stop - times[-1])
        return times, steps

    def sample_times(self) -> np.ndarray:
        if self.n_layers == 0:
            return np.empty(0)
        parts = [self.epoch_grid(n)[0] for n in range(1, self.n_layers + 1)]
        return np.concatenate(parts + [np.array([self.t_end])])

    def epoch_at(self, t) -> np.ndarray:
        """Number of layers deposited by time ``t`` (inclusive)."""
        return np.searchsorted(np.array(self.deposition_times), np.asarray(t) + 1e-9, side="right")


def layer_rhs(t_layer, t_below, t_above, t_ambient, p: LayerParams, is_top: bool) -> float:
    """Temperature rate [degC/s] of one layer.

    ``t_above`` must be None exactly when ``is_top``; the top layer drops
    the conduction-from-above term.
    """
    if is_top != (t_above is None):
        raise ValidationError("t_above must be given for intermediate layers and omitted for the top layer")
    temps = [t_layer, t_below, t_ambient] + ([] if is_top else [t_above])
    if not all(math.isfinite(float(t)) for t in temps):
        raise ValidationError(f"non-finite temperature in {temps}")
    cap = p.c1 * p.c2
    if cap == 0:
        raise ValidationError("c1*c2 must be non-zero")
    flux = -p.c3 * (t_layer - t_below) - p.c5 * (t_layer - t_ambient)
    if not is_top:
        flux += p.c4 * (t_above - t_layer)
    return flux / cap


def _coeff_arrays(params) -> np.ndarray:
    """(..., n, 5) coefficient array from LayerParams lists or raw arrays."""
    if isinstance(params, np.ndarray):
        return params.astype(float)
    return np.array([p.as_array() for p in params])


def coupled_rhs(temps, params, t_base: float, t_ambient: float) -> np.ndarray:
    """Rates for a stack of active layers, bottom first."""
    temps = np.asarray(temps, dtype=float)
    c = _coeff_arrays(params)
    n = temps.shape[-1]
    cap = c[..., 0] * c[..., 1]
    below = np.concatenate([np.full(temps.shape[:-1] + (1,), t_base), temps[..., :-1]], axis=-1)
    above = np.concatenate([temps[..., 1:], temps[..., -1:]], axis=-1)
    c4 = c[..., 3] * (np.arange(n) < n - 1)
    flux = -c[..., 2] * (temps - below) + c4 * (above - temps) - c[..., 4] * (temps - t_ambient)
    return flux / cap


def euler_operator(coeffs, h: float, t_base: float, t_ambient: float) -> tuple[np.ndarray, np.ndarray]:
    """Affine Euler map ``T -> M @ T + g`` for one step of size ``h``.

    ``coeffs`` has shape (..., n, 5); leading axes batch independent
    parameter sets (the genetic algorithm evaluates a population at once).
    """
    coeffs = np.asarray(coeffs, dtype=float)
    n = coeffs.shape[-2]
    cap = coeffs[..., 0] * coeffs[..., 1]
    c3 = coeffs[..., 2] / cap
    c4 = coeffs[..., 3] / cap * (np.arange(n) < n - 1)
    c5 = coeffs[..., 4] / cap
    jac = np.zeros(coeffs.shape[:-1] + (n,))
    idx = np.arange(n)
    jac[..., idx, idx] = -(c3 + c4 + c5)
    if n > 1:
        jac[..., idx[1:], idx[:-1]] = c3[..., 1:]
        jac[..., idx[:-1], idx[1:]] = c4[..., :-1]
    g = c5 * t_ambient
    g[..., 0] += c3[..., 0] * t_base
    eye = np.eye(n)
    return eye + h * jac, h * g


def integrate_epoch(coeffs, initial, steps, t_base: float, t_ambient: float) -> np.ndarray:
    """Euler trajectory over one epoch.

    Parameters
    ----------
    coeffs : array_like, shape (..., n, 5)
    initial : array_like, shape (n,) or (..., n)
    steps : array_like, shape (S,)
        Step sizes; the result holds the state before each step plus the
        final state.

    Returns
    -------
    ndarray, shape (..., S + 1, n)
    """
    coeffs = np.asarray(coeffs, dtype=float)
    batch = coeffs.shape[:-2]
    n = coeffs.shape[-2]
    # deviations from ambient keep the all-equal equilibrium exact
    x = np.broadcast_to(np.asarray(initial, dtype=float) - t_ambient, batch + (n,)).copy()
    steps = np.asarray(steps, dtype=float)
    out = np.empty(batch + (steps.size + 1, n))
    out[..., 0, :] = x
    k = 0
    with np.errstate(over="ignore", invalid="ignore"):
        while k < steps.size:
            # run of identical steps, advanced a block at a time
            h = steps[k]
            run = k + 1
            while run < steps.size and steps[run] == h:
                run += 1
            m, g = euler_operator(coeffs, h, t_base - t_ambient, 0.0)
            powers, offsets = _affine_powers(m, g, min(_BLOCK, run - k))
            while k < run:
                size = min(_BLOCK, run - k)
                block = np.einsum("...kij,...j->...ki", powers[..., 1 : size + 1, :, :], x) + offsets[..., 1 : size + 1, :]
                out[..., k + 1 : k + size + 1, :] = block
                x = block[..., -1, :]
                k += size
    return out + t_ambient


_BLOCK = 64


def _affine_powers(m, g, size: int):
    """``m^k`` and ``sum_{i<k} m^i g`` for ``k = 0..size``."""
    n = m.shape[-1]
    powers = np.empty(m.shape[:-2] + (size + 1, n, n))
    offsets = np.empty(m.shape[:-2] + (size + 1, n))
    powers[..., 0, :, :] = np.eye(n)
    offsets[..., 0, :] = 0.0
    for k in range(1, size + 1):
        powers[..., k, :, :] = m @ powers[..., k - 1, :, :]
        offsets[..., k, :] = (m @ offsets[..., k - 1, :, None])[..., 0] + g
    return powers, offsets


def integrate_build(schedule: BuildSchedule, params: ParamSchedule) -> ThermalTrace:
    """Sequential multi-layer integration over the whole build."""
    n_layers = schedule.n_layers
    if n_layers == 0:
        return ThermalTrace(np.empty(0), np.empty((0, 0)), "rom")
    missing = [n for n in range(1, n_layers + 1) if n not in params.epoch_numbers()]
    if missing:
        raise ValidationError(f"parameter schedule lacks epochs {missing}")
    times, rows = [], []
    state = np.array([schedule.t_mp[0]])
    for n in range(1, n_layers + 1):
        t, steps = schedule.epoch_grid(n)
        coeffs = _coeff_arrays(params.for_epoch(n))
        traj = integrate_epoch(coeffs, state, steps, schedule.t_base, schedule.t_ambient)
        block = np.full((t.size, n_layers), np.nan)
        block[:, :n] = traj[:-1]
        times.append(t)
        rows.append(block)
        state = traj[-1]
        if n < n_layers:
            state = np.append(state, schedule.t_mp[n])
    final = np.full((1, n_layers), np.nan)
    final[0, : state.size] = state
    times.append([schedule.t_end])
    rows.append(final)
    return ThermalTrace(np.concatenate(times), np.vstack(rows), "rom")


@dataclass(frozen=True)
class DiscreteModel:
    """``x(i+1) = a @ x(i) + b * u(i)`` valid while ``epoch`` layers are active."""

    a: np.ndarray
    b: np.ndarray
    dt: float
    epoch: int

    @property
    def n(self) -> int:
        return self.a.shape[0]


def state_rate(p: LayerParams) -> float:
    """Diagonal rate of the state-space model: -(-c3 + c4 - c5)/(c1*c2)."""
    return -(-p.c3 + p.c4 - p.c5) / (p.c1 * p.c2)


def build_continuous(p: LayerParams, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Continuous-time ``(A_c, B_c)`` for ``n`` active layers.

    ``B_c`` carries the same 1/(c1*c2) normalisation as ``A_c``.
    """
    if n < 1:
        raise ValidationError(f"need at least one layer, got n={n}")
    a_c = state_rate(p) * np.eye(n)
    b_c = np.full((n, 1), p.c5 / (p.c1 * p.c2))
    return a_c, b_c


def discretize(a_c, b_c, dt: float, epoch: int | None = None) -> DiscreteModel:
    """Forward-Euler discretisation: ``a = I + dt*A_c``, ``b = dt*B_c``."""
    a_c = np.atleast_2d(np.asarray(a_c, dtype=float))
    b_c = np.asarray(b_c, dtype=float).reshape(a_c.shape[0], -1)
    if not (np.all(np.isfinite(a_c)) and np.all(np.isfinite(b_c)) and math.isfinite(dt)):
        raise ValidationError("non-finite model matrices or step")
    if dt < 0:
        raise ValidationError(f"dt must be non-negative, got {dt}")
    n = a_c.shape[0]
    return DiscreteModel(np.eye(n) + dt * a_c, dt * b_c, float(dt), n if epoch is None else epoch)


def models_for(params: ParamSchedule, n_layers: int, dt: float, layer: int = 1) -> dict[int, DiscreteModel]:
    """Per-epoch discrete models built from ``layer``'s coefficients in each epoch."""
    out = {}
    for n in range(1, n_layers + 1):
        p = params.for_epoch(n)[min(layer, n) - 1]
        out[n] = discretize(*build_continuous(p, n), dt, epoch=n)
    return out
