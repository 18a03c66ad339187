from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lpbf_tf import datastore
from lpbf_tf.errors import StabilityError, ValidationError
from lpbf_tf.oracle import (
    ConductionSolver,
    GeometryMaterialSpec,
    Material,
    Mesh,
    ProcessSpec,
    export_dataset,
    simulate_fd,
)

SMALL = dict(part_side=0.2e-3, n_layers=2)


def heated_once(material=None, side=0.4e-3, t_end=200.0):
    kw = {} if material is None else {"material": material}
    geom = GeometryMaterialSpec(part_side=side, n_layers=2, **kw)
    return simulate_fd(geom, ProcessSpec(), dt=0.1, t_end=t_end, heated_layers=1, record="none")


# -- material and geometry ---------------------------------------------------------


def test_in718_table_is_monotone_and_positive():
    m = Material.in718()
    assert np.all(np.diff(m.temperature) > 0)
    assert np.all(np.asarray(m.specific_heat) > 0) and np.all(np.asarray(m.conductivity) > 0)
    assert "substitute" in m.note.lower()


def test_enthalpy_is_integral_of_cp():
    from scipy.integrate import quad

    m = Material.in718()
    for a, b in [(20.0, 300.0), (27.0, 1500.0), (500.0, 2600.0)]:
        want = quad(lambda t: float(m.cp(t)), a, b, points=[x for x in m.temperature if a < x < b], limit=200)[0]
        assert m.enthalpy(b) - m.enthalpy(a) == pytest.approx(want, rel=1e-9)


def test_material_validation():
    with pytest.raises(ValidationError):
        Material("bad", 8000.0, (20.0, 10.0), (400.0, 400.0), (10.0, 10.0))
    with pytest.raises(ValidationError):
        Material("bad", 8000.0, (20.0,), (-1.0,), (10.0,))


def test_published_mesh_sizes():
    g = GeometryMaterialSpec()
    assert g.part_element == pytest.approx(0.04e-3) and g.plate_element == pytest.approx(0.25e-3)
    assert g.elements_per_layer == 1
    assert g.cells_per_side == 10 and g.plate_cells_per_side == 8


def test_geometry_validation():
    with pytest.raises(ValidationError):
        GeometryMaterialSpec(part_element=0.03e-3)
    with pytest.raises(ValidationError):
        GeometryMaterialSpec(part_side=3e-3)


def test_process_validation():
    with pytest.raises(ValidationError):
        ProcessSpec(absorptivity=1.5)
    with pytest.raises(ValidationError):
        ProcessSpec(power=-1.0)


def test_heating_duration_from_scan_rate():
    assert ProcessSpec().heating_duration(0.4e-3**2) == pytest.approx(0.4e-3**2 / (0.96 * 1e-4))


def test_contact_area_equals_part_footprint():
    for side in (0.2e-3, 0.4e-3, 0.8e-3):
        m = Mesh(GeometryMaterialSpec(part_side=side, n_layers=1))
        cross = (m.link_i < m.n_plate) & (m.link_j >= m.n_plate)
        assert m.link_area[cross].sum() == pytest.approx(side**2, rel=1e-12)


# -- simulation examples ----------------------------------------------------------


def test_zero_power_keeps_field_constant():
    geom = GeometryMaterialSpec(**SMALL)
    res = simulate_fd(geom, ProcessSpec(power=0.0), dt=0.5, record="samples")
    assert np.all(res.trace.temps[np.isfinite(res.trace.temps)] == 27.0)
    assert np.all(res.fields[np.isfinite(res.fields)] == 27.0)


def test_post_heating_energy_constant():
    res = heated_once()
    after = res.times > 1.0
    e = res.energy[after]
    assert np.max(np.abs(e - e[0])) / abs(e[0]) <= 1e-3
    assert res.energy_balance() < 1e-9


def test_post_heating_energy_constant_for_constant_properties():
    mat = Material.constant()
    geom = GeometryMaterialSpec(part_side=0.4e-3, n_layers=2, material=mat)
    res = simulate_fd(geom, ProcessSpec(), dt=0.1, t_end=200.0, heated_layers=1, record="samples")
    cap = ConductionSolver(res.mesh).capacity
    n_active = int(res.mesh.layer_end[0])
    # sum of rho*cp*V*T over the active cells
    sums = [np.sum(cap[:n_active] * mat.specific_heat[0] * f[:n_active]) for f in res.fields[res.field_times > 1.0]]
    assert np.ptp(sums) / abs(sums[0]) <= 1e-3


def test_default_process_peaks_far_above_ambient(dataset1):
    sched = dataset1.schedule()
    peaks = np.array(sched.t_mp)
    final = np.array([dataset1.trace.layer(j)[1][-1] for j in range(1, 11)])
    assert np.all(peaks - 27.0 > 100 * (final - 27.0))
    assert np.all(peaks[1:] < peaks[0])


def test_explicit_rejects_unstable_step():
    geom = GeometryMaterialSpec(**SMALL)
    with pytest.raises(StabilityError):
        simulate_fd(geom, ProcessSpec(), dt=0.1, scheme="explicit")
    solver = ConductionSolver(Mesh(geom), "explicit")
    with pytest.raises(StabilityError):
        solver.step(np.full(Mesh(geom).n_plate, 27.0), 1.0)


def test_explicit_and_implicit_agree():
    geom = GeometryMaterialSpec(part_side=0.2e-3, n_layers=1)
    kw = dict(dt=1e-5, sample_dt=1e-3, t_end=0.01)
    e = simulate_fd(geom, ProcessSpec(), scheme="explicit", **kw).trace.temps[:, 0]
    i = simulate_fd(geom, ProcessSpec(), scheme="implicit", **kw).trace.temps[:, 0]
    assert e[0] == pytest.approx(i[0], rel=0.03)
    np.testing.assert_allclose(e[5:], i[5:], rtol=0.01)


def test_trace_is_layer_maximum():
    geom = GeometryMaterialSpec(**SMALL)
    res = simulate_fd(geom, ProcessSpec(), dt=0.5, record="samples")
    for t, f in zip(res.field_times, res.fields):
        row = res.trace.temps[np.argmin(np.abs(res.times - t))]
        for k in range(2):
            if np.isfinite(row[k]):
                assert row[k] == np.max(f[res.mesh.layer_cells(k)])


def test_refinement_converges():
    peaks = []
    for he in (0.04e-3, 0.02e-3, 0.01e-3):
        geom = GeometryMaterialSpec(part_side=0.2e-3, n_layers=1, part_element=he)
        peaks.append(simulate_fd(geom, ProcessSpec(), dt=0.1, t_end=1.0, heated_layers=1).trace.temps[:, 0])
    peaks = np.array(peaks)
    for i in (0, 1):
        d1, d2 = abs(peaks[0, i] - peaks[1, i]), abs(peaks[1, i] - peaks[2, i])
        assert d2 < d1
        assert np.log2(d1 / d2) >= 1.0


def test_field_symmetric_under_square_group():
    for side in (0.2e-3, 0.4e-3):
        geom = GeometryMaterialSpec(part_side=side, n_layers=2)
        res = simulate_fd(geom, ProcessSpec(), dt=0.1, t_end=2.0, record="samples")
        for f in res.fields:
            blk = res.mesh.part_block(f)
            tol = 1e-9 * np.nanmax(np.abs(blk))
            np.testing.assert_allclose(blk, np.swapaxes(blk, 1, 2), atol=tol)
            np.testing.assert_allclose(blk, blk[:, ::-1, :], atol=tol)
            np.testing.assert_allclose(blk, blk[:, :, ::-1], atol=tol)


# -- properties ---------------------------------------------------------------------


@settings(max_examples=15)
@given(st.integers(0, 2**31), st.sampled_from(["implicit", "explicit"]), st.integers(0, 2))
def test_maximum_principle_zero_source(seed, scheme, layers_on):
    geom = GeometryMaterialSpec(**SMALL)
    mesh = Mesh(geom)
    solver = ConductionSolver(mesh, scheme)
    n = mesh.n_plate if layers_on == 0 else int(mesh.layer_end[layers_on - 1])
    rng = np.random.default_rng(seed)
    temps = rng.uniform(20.0, 2500.0, n)
    lo, hi = temps.min(), temps.max()
    h = 0.5 * solver.stable_step(n) if scheme == "explicit" else 0.05
    tol = 1e-9 * hi
    for _ in range(20):
        temps = solver.step(temps, h)
        assert temps.min() >= lo - tol and temps.max() <= hi + tol


# -- export -------------------------------------------------------------------------


def test_export_manifest_and_round_trip(tmp_path):
    geom = GeometryMaterialSpec(**SMALL)
    res = simulate_fd(geom, ProcessSpec(), dt=0.1)
    path = export_dataset(res, tmp_path, sample_rate=5.0, tag="small", noise_std=0.5, seed=3)
    ds = datastore.ingest(path)
    man = ds.manifest
    assert ds.name == "small" and man["sample_rate_hz"] == 5.0 and man["seed"] == 3
    assert man["geometry"]["part_element"] == pytest.approx(0.04e-3)
    assert man["energy_balance_rel"] < 1e-9
    assert np.allclose(np.diff(ds.trace.times), 0.2)
    again = datastore.ingest(export_dataset(res, tmp_path / "b", 5.0, "small", 0.5, 3))
    assert ds.trace.temps.tobytes() == again.trace.temps.tobytes()


def test_export_rejects_incompatible_rate(tmp_path):
    res = simulate_fd(GeometryMaterialSpec(**SMALL), ProcessSpec(), dt=0.1, t_end=10.0)
    with pytest.raises(ValidationError):
        export_dataset(res, tmp_path, sample_rate=3.0)
