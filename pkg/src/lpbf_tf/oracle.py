"""Finite-volume transient conduction solver used as ground truth.

The printed part sits centred on a cubic base plate. Both are meshed with
Cartesian cells (fine ones for the part, coarse ones for the plate) and
every face of the assembly is adiabatic. Layers are switched on one at a
time at ambient temperature and heated uniformly with the absorbed laser
power for as long as it would take to scan their area. The per-layer
trace is the hottest cell of each layer at every output sample.

Time stepping is backward Euler on the enthalpy form

    rho*V*(H(T_new) - H(T_old))/h = -L(T_old) @ T_new + Q

with conductances lagged one step; Newton-chord iterations drive the
residual to round-off, so the scheme conserves energy for arbitrary
temperature-dependent properties. An explicit forward-Euler scheme is
kept for cross-checks and refuses steps beyond its stability limit.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import NumericalError, StabilityError, ValidationError
from .traces import ThermalTrace

log = logging.getLogger(__name__)

STABILITY_SAFETY = 0.9


@dataclass(frozen=True)
class Material:
    """Density plus piecewise-linear specific heat and conductivity tables."""

    name: str
    density: float
    temperature: tuple
    specific_heat: tuple
    conductivity: tuple
    note: str = ""

    def __post_init__(self):
        t = np.asarray(self.temperature, dtype=float)
        cp = np.asarray(self.specific_heat, dtype=float)
        k = np.asarray(self.conductivity, dtype=float)
        if not (t.shape == cp.shape == k.shape and t.ndim == 1 and t.size >= 1):
            raise ValidationError("property tables must be 1-D and of equal length")
        if np.any(np.diff(t) <= 0):
            raise ValidationError("property table temperatures must increase strictly")
        if self.density <= 0 or np.any(cp <= 0) or np.any(k <= 0):
            raise ValidationError("material properties must be positive")
        # enthalpy (J/kg) relative to 0 degC at each table node
        h_nodes = np.concatenate([[cp[0] * t[0]], cp[0] * t[0] + np.cumsum(0.5 * (cp[1:] + cp[:-1]) * np.diff(t))])
        object.__setattr__(self, "_t", t)
        object.__setattr__(self, "_cp", cp)
        object.__setattr__(self, "_k", k)
        object.__setattr__(self, "_h", h_nodes)
        # zero slope past the last node keeps cp constant outside the table
        object.__setattr__(self, "_slope", np.append(np.diff(cp) / np.diff(t), 0.0))

    @classmethod
    def constant(cls, density=8190.0, specific_heat=435.0, conductivity=11.4, name="constant"):
        return cls(name, density, (20.0,), (specific_heat,), (conductivity,))

    @classmethod
    def from_json(cls, path) -> "Material":
        d = json.loads(Path(path).read_text())
        return cls._from_dict(d)

    @classmethod
    def in718(cls) -> "Material":
        text = resources.files("lpbf_tf").joinpath("data/in718.json").read_text()
        return cls._from_dict(json.loads(text))

    @classmethod
    def _from_dict(cls, d) -> "Material":
        return cls(
            d["name"], float(d["density_kg_m3"]), tuple(d["temperature_c"]),
            tuple(d["specific_heat_j_kg_k"]), tuple(d["conductivity_w_m_k"]), d.get("note", ""),
        )

    @property
    def is_constant(self) -> bool:
        return len(set(self.specific_heat)) == 1 and len(set(self.conductivity)) == 1

    def cp(self, temps):
        return np.interp(temps, self._t, self._cp)

    def k(self, temps):
        return np.interp(temps, self._t, self._k)

    def enthalpy(self, temps):
        """Specific enthalpy [J/kg] above 0 degC, exact for the linear cp table."""
        temps = np.asarray(temps, dtype=float)
        t, cp, h, slope = self._t, self._cp, self._h, self._slope
        raw = np.searchsorted(t, temps, side="right") - 1
        i = np.maximum(raw, 0)
        dT = temps - t[i]
        out = h[i] + dT * (cp[i] + 0.5 * slope[i] * dT)
        return np.where(raw < 0, cp[0] * temps, out)

    def to_dict(self) -> dict:
        return {
            "name": self.name, "density_kg_m3": self.density, "temperature_c": list(self.temperature),
            "specific_heat_j_kg_k": list(self.specific_heat), "conductivity_w_m_k": list(self.conductivity),
            "note": self.note,
        }


@dataclass(frozen=True)
class GeometryMaterialSpec:
    """Part and base-plate geometry [m] and the material they are made of.

    The lumped model's physical symbols (density, specific heat, layer
    volume, conductances K1/K2, convection coefficient, top/bottom area A1,
    side area A2 and layer thickness d) follow from these values via
    :meth:`lumped_symbols`.
    """

    part_side: float = 0.4e-3
    layer_thickness: float = 0.04e-3
    n_layers: int = 10
    plate_side: float = 2.0e-3
    part_element: float = 0.04e-3
    plate_element: float = 0.25e-3
    material: Material = field(default_factory=Material.in718)

    def __post_init__(self):
        for name in ("part_side", "layer_thickness", "plate_side", "part_element", "plate_element"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if self.n_layers < 1:
            raise ValidationError("need at least one layer")
        if self.part_side > self.plate_side:
            raise ValidationError("part wider than base plate")
        for num, den, what in (
            (self.part_side, self.part_element, "part side"),
            (self.layer_thickness, self.part_element, "layer thickness"),
            (self.plate_side, self.plate_element, "plate side"),
        ):
            ratio = num / den
            if abs(ratio - round(ratio)) > 1e-6 or round(ratio) < 1:
                raise ValidationError(f"{what} {num:g} m is not a whole number of {den:g} m elements")

    @property
    def cells_per_side(self) -> int:
        return round(self.part_side / self.part_element)

    @property
    def elements_per_layer(self) -> int:
        return round(self.layer_thickness / self.part_element)

    @property
    def plate_cells_per_side(self) -> int:
        return round(self.plate_side / self.plate_element)

    @property
    def layer_area(self) -> float:
        return self.part_side**2

    @property
    def layer_volume(self) -> float:
        return self.part_side**2 * self.layer_thickness

    def lumped_symbols(self, temperature: float = 27.0) -> dict:
        m = self.material
        return {
            "rho": m.density, "Cp": float(m.cp(temperature)), "V": self.layer_volume,
            "K1": float(m.k(temperature)), "K2": float(m.k(temperature)), "gamma": 0.0,
            "A1": self.layer_area, "A2": 4 * self.part_side * self.layer_thickness, "d": self.layer_thickness,
        }

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "material"}
        d["material"] = self.material.to_dict()
        return d


@dataclass(frozen=True)
class ProcessSpec:
    """Laser and timing settings. Scan speed in m/s, hatch spacing in m."""

    power: float = 142.0
    absorptivity: float = 0.4
    scan_speed: float = 0.96
    hatch_spacing: float = 0.1e-3
    dwell: float = 200.0
    t_ambient: float = 27.0

    def __post_init__(self):
        if not self.power >= 0:
            raise ValidationError("laser power must be non-negative")
        if not 0 < self.absorptivity <= 1:
            raise ValidationError("absorptivity must lie in (0, 1]")
        if not (self.scan_speed > 0 and self.hatch_spacing > 0 and self.dwell > 0):
            raise ValidationError("scan speed, hatch spacing and dwell must be positive")

    def heating_duration(self, area: float) -> float:
        return area / (self.scan_speed * self.hatch_spacing)

    def to_dict(self) -> dict:
        return asdict(self)


class Mesh:
    """Cell-centred Cartesian mesh of base plate plus part.

    Cells are ordered plate first, then part layer by layer, so the cells
    that exist at any moment form a prefix ``[0, n_active)``.
    """

    def __init__(self, geom: GeometryMaterialSpec):
        self.geom = geom
        npl = geom.plate_cells_per_side
        hp = geom.plate_element
        nxy = geom.cells_per_side
        nz_layer = geom.elements_per_layer
        he = geom.part_element
        offset = 0.5 * (geom.plate_side - geom.part_side)

        # plate: index = (iz*npl + iy)*npl + ix, iz = 0 at the bottom
        iz, iy, ix = np.meshgrid(np.arange(npl), np.arange(npl), np.arange(npl), indexing="ij")
        plate_centres = np.stack([(ix + 0.5) * hp, (iy + 0.5) * hp, (iz + 0.5) * hp - geom.plate_side], -1).reshape(-1, 3)
        n_plate = plate_centres.shape[0]
        nz = geom.n_layers * nz_layer
        jz, jy, jx = np.meshgrid(np.arange(nz), np.arange(nxy), np.arange(nxy), indexing="ij")
        part_centres = np.stack([offset + (jx + 0.5) * he, offset + (jy + 0.5) * he, (jz + 0.5) * he], -1).reshape(-1, 3)

        self.n_plate = n_plate
        self.centres = np.vstack([plate_centres, part_centres])
        self.volume = np.concatenate([np.full(n_plate, hp**3), np.full(part_centres.shape[0], he**3)])
        self.layer = np.concatenate([np.full(n_plate, -1), (jz // nz_layer).reshape(-1)])
        self.n_cells = self.centres.shape[0]
        cells_per_layer = nxy * nxy * nz_layer
        # first index past the cells of layers 0..k-1
        self.layer_end = n_plate + cells_per_layer * np.arange(1, geom.n_layers + 1)

        ci, cj, area, di, dj = [], [], [], [], []

        def grid_links(index, shape, h, base):
            for axis in range(3):
                lo = [slice(None)] * 3
                hi = [slice(None)] * 3
                lo[axis] = slice(0, -1)
                hi[axis] = slice(1, None)
                a = index[tuple(lo)].reshape(-1) + base
                b = index[tuple(hi)].reshape(-1) + base
                ci.append(a)
                cj.append(b)
                area.append(np.full(a.size, h * h))
                di.append(np.full(a.size, h / 2))
                dj.append(np.full(a.size, h / 2))

        grid_links(np.arange(n_plate).reshape(npl, npl, npl), None, hp, 0)
        grid_links(np.arange(part_centres.shape[0]).reshape(nz, nxy, nxy), None, he, n_plate)
        # bottom part cells onto every plate cell their footprint overlaps
        def overlaps(lo):
            """(part index along the side, plate index, overlap length) triples."""
            out = []
            for a in range(nxy):
                x0, x1 = lo + a * he, lo + (a + 1) * he
                for b in range(int(x0 // hp), min(int(x1 // hp), npl - 1) + 1):
                    ov = min(x1, (b + 1) * hp) - max(x0, b * hp)
                    if ov > 1e-9 * he:
                        out.append((a, b, ov))
            return out

        ox = overlaps(offset)
        for ax, bx, lx in ox:
            for ay, by, ly in ox:
                ci.append(np.array([((npl - 1) * npl + by) * npl + bx]))
                cj.append(np.array([n_plate + ay * nxy + ax]))
                area.append(np.array([lx * ly]))
                di.append(np.array([hp / 2]))
                dj.append(np.array([he / 2]))

        self.link_i = np.concatenate(ci)
        self.link_j = np.concatenate(cj)
        self.link_area = np.concatenate(area)
        self.link_di = np.concatenate(di)
        self.link_dj = np.concatenate(dj)

    def layer_cells(self, k: int) -> slice:
        """Cells of 0-based layer ``k``."""
        start = self.n_plate if k == 0 else self.layer_end[k - 1]
        return slice(int(start), int(self.layer_end[k]))

    def part_block(self, values) -> np.ndarray:
        """Part cell values reshaped to (z, y, x)."""
        g = self.geom
        return np.asarray(values)[self.n_plate :].reshape(g.n_layers * g.elements_per_layer, g.cells_per_side, g.cells_per_side)


class ConductionSolver:
    """One-step advance of the cell temperatures on the active prefix of a mesh."""

    def __init__(self, mesh: Mesh, scheme: str = "implicit", tol: float = 1e-10, max_iter: int = 50):
        if scheme not in ("implicit", "explicit"):
            raise ValidationError(f"unknown scheme {scheme!r}")
        self.mesh = mesh
        self.material = mesh.geom.material
        self.scheme = scheme
        self.tol = tol
        self.max_iter = max_iter
        self.capacity = self.material.density * mesh.volume  # kg per cell
        self._lu = None
        self._lu_key = None
        self._pattern = {}
        self._lap_cache = None
        self.n_factorizations = 0
        self.n_iterations = 0

    def laplacian(self, temps, n_active: int) -> sp.csr_matrix:
        """Conductance matrix of the first ``n_active`` cells at ``temps``."""
        m = self.mesh
        if n_active not in self._pattern:
            keep = (m.link_i < n_active) & (m.link_j < n_active)
            i, j = m.link_i[keep], m.link_j[keep]
            rows = np.concatenate([i, j, np.arange(n_active)])
            cols = np.concatenate([j, i, np.arange(n_active)])
            # CSR skeleton once; later calls only refill its data array
            order = sp.csr_matrix((np.arange(1, rows.size + 1, dtype=float), (rows, cols)), shape=(n_active, n_active))
            self._pattern = {n_active: (keep, i, j, order.data.astype(int) - 1, order)}
        keep, i, j, perm, skel = self._pattern[n_active]
        if self.material.is_constant and self._lap_cache is not None and self._lap_cache.shape[0] == n_active:
            return self._lap_cache
        k = self.material.k(temps)
        g = m.link_area[keep] / (m.link_di[keep] / k[i] + m.link_dj[keep] / k[j])
        diag = np.bincount(i, g, n_active) + np.bincount(j, g, n_active)
        vals = np.concatenate([-g, -g, diag])
        lap = sp.csr_matrix((vals[perm], skel.indices, skel.indptr), shape=skel.shape)
        self._lap_cache = lap
        return lap

    def stable_step(self, n_active: int) -> float:
        """Largest explicit step allowed for the worst-case table properties."""
        mat = self.material
        worst_k = np.full(n_active, max(mat.conductivity))
        diag = self.laplacian(worst_k, n_active).diagonal()
        heat_cap = self.capacity[:n_active] * min(mat.specific_heat)
        return STABILITY_SAFETY * float(np.min(heat_cap / np.maximum(diag, 1e-300)))

    def energy(self, temps) -> float:
        """Total enthalpy [J] of the given (active) cells."""
        n = len(temps)
        return float(np.sum(self.capacity[:n] * self.material.enthalpy(temps)))

    def step(self, temps, h: float, source=None) -> np.ndarray:
        """Advance ``temps`` (active cells only) by ``h`` seconds.

        ``source`` is the heat rate per cell [W].
        """
        temps = np.asarray(temps, dtype=float)
        n = temps.size
        q = np.zeros(n) if source is None else np.asarray(source, dtype=float)
        lap = self.laplacian(temps, n)
        cap = self.capacity[:n]
        if self.scheme == "explicit":
            limit = self.stable_step(n)
            if h > limit * (1 + 1e-12):
                raise StabilityError(f"explicit step {h:.3e} s exceeds stability limit {limit:.3e} s")
            return temps + h * (q - lap @ (temps - temps[0])) / (cap * self.material.cp(temps))
        return self._implicit(temps, h, q, lap, cap)

    def _implicit(self, temps, h, q, lap, cap):
        mat = self.material
        h_old = mat.enthalpy(temps)
        scale = cap * mat.cp(temps) / h
        # rows of lap sum to zero; the offset makes a uniform field exactly steady
        ref = temps[0]

        def residual(t):
            return cap * (mat.enthalpy(t) - h_old) / h + lap @ (t - ref) - q

        key = (temps.size, float(f"{h:.9g}"))
        if self._lu_key != key:
            self._factor(lap, scale, key)
        t = temps.copy()
        size = max(1.0, float(np.max(np.abs(t))))
        prev = np.inf
        for it in range(self.max_iter):
            delta = self._lu.solve(-residual(t))
            t += delta
            self.n_iterations += 1
            step = float(np.max(np.abs(delta)))
            if not np.isfinite(step):
                raise NumericalError("implicit step produced non-finite temperatures")
            if step <= self.tol * size:
                return t
            if step > 0.2 * prev:
                # chord contraction too slow: switch to a fresh Newton matrix
                self._factor(lap, cap * mat.cp(t) / h, key)
                prev = np.inf
            else:
                prev = step
        raise NumericalError(f"implicit step of {h:.3e} s did not converge")

    def _factor(self, lap, scale, key):
        mat = (lap + sp.diags(scale)).tocsc()
        self._lu = splu(mat)
        self._lu_key = key
        self.n_factorizations += 1


@dataclass
class FdResult:
    """Output of :func:`simulate_fd`."""

    times: np.ndarray
    trace: ThermalTrace
    energy: np.ndarray
    heat_input: np.ndarray
    field_times: np.ndarray
    fields: np.ndarray
    mesh: Mesh
    geometry: GeometryMaterialSpec
    process: ProcessSpec
    settings: dict

    def energy_balance(self) -> float:
        """Relative mismatch between stored energy gain and heat supplied."""
        gained = self.energy - self.energy[0]
        supplied = self.heat_input - self.heat_input[0] + self.activation_energy()
        ref = max(abs(self.energy[-1]), 1e-300)
        return float(np.max(np.abs(gained - supplied)) / ref)

    def activation_energy(self) -> np.ndarray:
        """Enthalpy brought in by cells switched on at ambient, per output sample."""
        return self.settings["_activation"]


def _sample_grid(t_end: float, sample_dt: float) -> np.ndarray:
    n = int(round(t_end / sample_dt))
    if abs(n * sample_dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ValidationError(f"horizon {t_end:g} s is not a multiple of the sample step {sample_dt:g} s")
    return sample_dt * np.arange(n + 1)


def simulate_fd(
    geom: GeometryMaterialSpec,
    proc: ProcessSpec,
    dt: float = 0.1,
    scheme: str = "implicit",
    sample_dt: float | None = None,
    t_end: float | None = None,
    heat_steps: int = 10,
    growth: float = 2.0,
    heated_layers: int | None = None,
    record: str = "depositions",
) -> FdResult:
    """Simulate the layer-by-layer build.

    Layer ``k`` (0-based) finishes heating at ``k*dwell``; its heating
    starts one heating duration earlier, which is also when its cells are
    switched on at ambient temperature. Output samples run from 0 to
    ``t_end`` (default ``n_layers*dwell``) every ``sample_dt`` (default
    ``dt``).

    Parameters
    ----------
    dt : float
        Largest internal step. Implicit steps restart small after every
        activation or heat-off and grow geometrically up to ``dt``; explicit
        steps are always ``min(dt, sample_dt)`` and must be stable.
    heated_layers : int, optional
        Deposit only the first ``heated_layers`` layers (default all).
    record : {'depositions', 'samples', 'none'}
        Which full temperature fields to keep.
    """
    if not dt > 0:
        raise ValidationError("dt must be positive")
    sample_dt = dt if sample_dt is None else sample_dt
    n_layers = geom.n_layers if heated_layers is None else heated_layers
    if not 0 <= n_layers <= geom.n_layers:
        raise ValidationError(f"heated_layers must lie in 0..{geom.n_layers}")
    t_end = n_layers * proc.dwell if t_end is None else t_end
    samples = _sample_grid(t_end, sample_dt)
    mesh = Mesh(geom)
    solver = ConductionSolver(mesh, scheme)
    mat = geom.material

    t_heat = proc.heating_duration(geom.layer_area)
    if t_heat >= min(proc.dwell, sample_dt):
        raise ValidationError(f"heating duration {t_heat:g} s must be shorter than dwell and sample step")
    q_density = proc.power * proc.absorptivity / geom.layer_volume  # W/m^3
    laser_off = proc.dwell * np.arange(n_layers)
    activation = laser_off - t_heat
    if scheme == "explicit":
        limit = solver.stable_step(mesh.n_cells)
        if min(dt, sample_dt) > limit:
            raise StabilityError(f"explicit dt {min(dt, sample_dt):.3e} s exceeds stability limit {limit:.3e} s")

    # event-driven stepping between breakpoints
    t0 = float(activation[0]) if n_layers else 0.0
    breaks = np.unique(np.concatenate([samples, activation, laser_off]))
    breaks = breaks[(breaks >= t0 - 1e-15) & (breaks <= t_end + 1e-9)]
    n_active = mesh.n_plate
    temps = np.full(n_active, proc.t_ambient)
    layers_on = 0
    h_small = t_heat / heat_steps
    h_cur = dt

    trace = np.full((samples.size, geom.n_layers), np.nan)
    energy = np.empty(samples.size)
    heat_in = np.empty(samples.size)
    act_energy = np.empty(samples.size)
    fields, field_times = [], []
    supplied = 0.0
    activated = 0.0
    s_idx = 0
    t = t0
    if record not in ("depositions", "samples", "none"):
        raise ValidationError(f"unknown record mode {record!r}")

    def heating_layer(t_mid):
        k = np.searchsorted(laser_off, t_mid)
        if k < n_layers and activation[k] <= t_mid < laser_off[k]:
            return int(k)
        return None

    for b in breaks:
        # switch on any layer whose activation time is reached
        while layers_on < n_layers and activation[layers_on] <= t + 1e-12:
            new_end = int(mesh.layer_end[layers_on])
            new = np.full(new_end - n_active, proc.t_ambient)
            activated += float(np.sum(solver.capacity[n_active:new_end] * mat.enthalpy(new)))
            temps = np.concatenate([temps, new])
            n_active = new_end
            layers_on += 1
            h_cur = h_small
        while b - t > 1e-12:
            k = heating_layer(0.5 * (t + b))
            if scheme == "explicit":
                h = min(b - t, min(dt, sample_dt))
            elif k is not None:
                h = min(b - t, h_small)
            else:
                h = min(b - t, h_cur)
            src = None
            if k is not None:
                src = np.zeros(n_active)
                cells = mesh.layer_cells(k)
                src[cells] = q_density * mesh.volume[cells]
                supplied += float(src.sum()) * h
            temps = solver.step(temps, h, src)
            t = t + h
            if abs(t - b) < 1e-12:
                t = float(b)
            if k is None and scheme == "implicit":
                h_cur = min(dt, h_cur * growth)
            if k is not None:
                h_cur = h_small
        t = float(b)
        if s_idx < samples.size and abs(samples[s_idx] - t) < 1e-9:
            full = np.full(mesh.n_cells, np.nan)
            full[:n_active] = temps
            for k in range(layers_on):
                if laser_off[k] <= t + 1e-12:
                    trace[s_idx, k] = np.max(full[mesh.layer_cells(k)])
            energy[s_idx] = solver.energy(temps)
            heat_in[s_idx] = supplied
            act_energy[s_idx] = activated
            on_deposit = np.any(np.abs(laser_off - t) < 1e-9) or s_idx == samples.size - 1
            if record == "samples" or (record == "depositions" and on_deposit):
                fields.append(full)
                field_times.append(t)
            s_idx += 1

    act_energy = act_energy - act_energy[0]
    log.info(
        "fd simulation: %d cells, %d factorisations, %d chord iterations",
        mesh.n_cells, solver.n_factorizations, solver.n_iterations,
    )
    settings = {
        "scheme": scheme, "dt": dt, "sample_dt": sample_dt, "t_end": t_end, "heat_steps": heat_steps,
        "growth": growth, "heating_duration": t_heat, "q_volumetric": q_density,
        "n_cells": mesh.n_cells, "_activation": act_energy,
    }
    trace_obj = ThermalTrace(samples, trace[:, :n_layers] if n_layers else np.empty((samples.size, 0)), "ground-truth")
    return FdResult(
        samples, trace_obj, energy, heat_in, np.array(field_times),
        np.array(fields) if fields else np.empty((0, mesh.n_cells)), mesh, geom, proc, settings,
    )


def export_dataset(result: FdResult, out_dir, sample_rate: float = 10.0, tag: str = "dataset",
                   noise_std: float = 0.0, seed: int = 0) -> Path:
    """Write the per-layer trace and a manifest to ``out_dir/tag``.

    The trace is decimated to ``sample_rate`` [Hz], which must divide the
    simulation's output rate. Optional Gaussian sensor noise is drawn from
    a generator seeded with ``seed``.
    """
    from .datastore import Dataset, export

    if not sample_rate > 0:
        raise ValidationError("sample rate must be positive")
    stride = 1.0 / (sample_rate * result.settings["sample_dt"])
    if abs(stride - round(stride)) > 1e-6 or round(stride) < 1:
        raise ValidationError(
            f"sample rate {sample_rate:g} Hz does not divide the output rate {1 / result.settings['sample_dt']:g} Hz"
        )
    trace = result.trace.select(np.arange(len(result.trace)) % round(stride) == 0)
    if noise_std > 0:
        rng = np.random.default_rng(seed)
        trace = ThermalTrace(trace.times, trace.temps + rng.normal(0.0, noise_std, trace.temps.shape), trace.kind)
    settings = {k: v for k, v in result.settings.items() if not k.startswith("_")}
    manifest = {
        "provenance": "lpbf_tf.oracle finite-volume simulation",
        "geometry": result.geometry.to_dict(),
        "process": result.process.to_dict(),
        "solver": settings,
        "seed": seed,
        "noise_std_c": noise_std,
        "sample_rate_hz": sample_rate,
        "energy_balance_rel": result.energy_balance(),
    }
    return export(Dataset(tag, trace, manifest), Path(out_dir) / tag)
