from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lpbf_tf.errors import ValidationError
from lpbf_tf.rom import (
    LAYER1_PARAMS,
    BuildSchedule,
    LayerParams,
    ParamSchedule,
    build_continuous,
    coupled_rhs,
    discretize,
    euler_operator,
    integrate_build,
    integrate_epoch,
    layer_rhs,
    models_for,
    state_rate,
)

L1 = LayerParams(13190, 0.7, -1500, 1500)

temps = st.floats(-50, 3000, allow_nan=False)
positive = st.floats(0.1, 5e4, allow_nan=False)


def naive_euler(coeffs, x0, steps, t_base, t_amb):
    """Step-by-step Euler written directly from the per-layer balance."""
    c = np.asarray(coeffs, dtype=float)
    x = np.array(x0, dtype=float)
    out = [x.copy()]
    n = x.size
    for h in steps:
        rate = np.empty(n)
        for j in range(n):
            below = t_base if j == 0 else x[j - 1]
            top = j == n - 1
            p = LayerParams(*c[j])
            rate[j] = layer_rhs(x[j], below, None if top else x[j + 1], t_amb, p, top)
        x = x + h * rate
        out.append(x.copy())
    return np.array(out)


def analytic_relaxation(p: LayerParams, t_mp, t_amb, t):
    return t_amb + (t_mp - t_amb) * np.exp(-p.c5 * t / (p.c1 * p.c2))


def single_layer_error(p, t_mp, t_amb, dt, horizon):
    sched = BuildSchedule.uniform(1, dwell=horizon, t_mp=t_mp, dt=dt, t_ambient=t_amb, t_base=t_amb)
    tr = integrate_build(sched, ParamSchedule.shared([p]))
    exact = analytic_relaxation(p, t_mp, t_amb, tr.times)
    return np.max(np.abs(tr.temps[:, 0] - exact)) / abs(t_mp - t_amb)


# -- parameter types ---------------------------------------------------------


def test_reference_params_stored_verbatim():
    first = LAYER1_PARAMS.for_epoch(1)[0]
    last = LAYER1_PARAMS.for_epoch(10)[0]
    assert (first.c1, first.c2, first.c3, first.c4, first.c5) == (13190, 0.7, -1500, 1500, 0.0)
    assert (last.c1, last.c2, last.c3, last.c4) == (11518.68, 1.45, -10463.53, 36324.86)
    assert LAYER1_PARAMS.n_epochs == 10
    assert all(len(LAYER1_PARAMS.for_epoch(n)) == n for n in range(1, 11))


@pytest.mark.parametrize("kw", [dict(c1=0), dict(c2=-1), dict(c5=-0.1), dict(c3=float("nan"))])
def test_layer_params_invariants(kw):
    base = dict(c1=1.0, c2=1.0, c3=1.0, c4=1.0, c5=0.0)
    base.update(kw)
    with pytest.raises(ValidationError):
        LayerParams(**base)


def test_param_schedule_round_trip():
    assert ParamSchedule.from_dict(LAYER1_PARAMS.to_dict()) == LAYER1_PARAMS


def test_build_schedule_invariants():
    with pytest.raises(ValidationError):
        BuildSchedule(2, (0.0, 0.0), 10.0, (100.0, 100.0))
    with pytest.raises(ValidationError):
        BuildSchedule.uniform(2, dwell=1.0, dt=1.0)
    with pytest.raises(ValidationError):
        BuildSchedule.uniform(2, t_mp=20.0)


# -- layer_rhs ---------------------------------------------------------------


def test_rhs_equilibrium_is_exactly_zero():
    assert layer_rhs(27, 27, 27, 27, L1, is_top=False) == 0.0
    assert layer_rhs(27, 27, None, 27, L1, is_top=True) == 0.0


def test_rhs_hand_value():
    p = LayerParams(1, 1, 1, 0, 0)
    assert layer_rhs(100, 50, None, 27, p, is_top=True) == -50


def test_rhs_reference_golden():
    # independent rational evaluation of the balance with the published epoch-1 values
    c1, c2, c3, c4 = Fraction(13190), Fraction(7, 10), Fraction(-1500), Fraction(1500)
    t, below, above = Fraction(100), Fraction(27), Fraction(27)
    intermediate = (-c3 * (t - below) + c4 * (above - t)) / (c1 * c2)
    top = (-c3 * (t - below)) / (c1 * c2)
    assert intermediate == 0
    assert top == Fraction(109500, 9233)
    assert layer_rhs(100, 27, 27, 27, L1, is_top=False) == 0.0
    assert layer_rhs(100, 27, None, 27, L1, is_top=True) == pytest.approx(float(top), rel=1e-15)
    assert layer_rhs(100, 27, None, 27, L1, is_top=True) == pytest.approx(11.859633921802231, rel=1e-14)


def test_rhs_top_flag_must_match_above():
    with pytest.raises(ValidationError):
        layer_rhs(100, 27, None, 27, L1, is_top=False)
    with pytest.raises(ValidationError):
        layer_rhs(100, 27, 30, 27, L1, is_top=True)


@given(temps, temps, temps, temps, positive, positive, st.floats(-5e4, 5e4), st.floats(-5e4, 5e4), st.floats(0, 5e4))
def test_coupled_rhs_matches_scalar_form(a, b, c, amb, c1, c2, c3, c4, c5):
    p = LayerParams(c1, c2, c3, c4, c5)
    x = np.array([a, b, c])
    got = coupled_rhs(x, [p] * 3, 27.0, amb)
    want = [
        layer_rhs(a, 27.0, b, amb, p, False),
        layer_rhs(b, a, c, amb, p, False),
        layer_rhs(c, b, None, amb, p, True),
    ]
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-9)


# -- integrate_build ---------------------------------------------------------


def test_equilibrium_build_stays_constant():
    sched = BuildSchedule.uniform(4, dwell=20.0, t_mp=27.0)
    tr = integrate_build(sched, LAYER1_PARAMS)
    finite = tr.temps[np.isfinite(tr.temps)]
    assert finite.size > 0
    assert np.all(finite == 27.0)


def test_empty_build_returns_empty_trace():
    tr = integrate_build(BuildSchedule(0, (), 10.0, ()), LAYER1_PARAMS)
    assert len(tr) == 0


def test_missing_epoch_is_rejected():
    sched = BuildSchedule.uniform(3, dwell=10.0)
    with pytest.raises(ValidationError):
        integrate_build(sched, ParamSchedule.shared([L1, L1]))


def test_single_layer_matches_exponential():
    p = LayerParams(8000, 0.9, 0, 0, 600)
    tau = p.c1 * p.c2 / p.c5
    assert single_layer_error(p, 1200.0, 27.0, 0.001 * tau, 5 * tau) < 0.01


def test_three_layers_enter_at_peak_and_stay_continuous():
    sched = BuildSchedule.uniform(3, dwell=50.0, t_mp=(1500.0, 1400.0, 1300.0))
    params = ParamSchedule.shared([LayerParams(8190, 0.9, 3000, 2000, 10)] * 3)
    tr = integrate_build(sched, params)
    for k, t_k in enumerate(sched.deposition_times[1:], start=1):
        i = int(np.flatnonzero(np.isclose(tr.times, t_k))[0])
        assert tr.temps[i, k] == sched.t_mp[k]
        assert np.all(np.isnan(tr.temps[i - 1, k:]))
        # previous layers: one Euler step from the last sample of the previous epoch
        prev = tr.temps[i - 1, :k]
        rate = coupled_rhs(prev, params.for_epoch(k), sched.t_base, sched.t_ambient)
        np.testing.assert_allclose(tr.temps[i, :k], prev + sched.dt * rate, rtol=1e-12)


def test_block_integrator_matches_step_by_step():
    rng = np.random.default_rng(3)
    coeffs = np.column_stack([
        rng.uniform(5e3, 2e4, 4), rng.uniform(0.5, 2, 4), rng.uniform(1e3, 5e4, 4),
        rng.uniform(1e3, 5e4, 4), rng.uniform(0, 100, 4),
    ])
    steps = np.r_[np.full(150, 0.1), 0.05]
    x0 = rng.uniform(30, 1500, 4)
    got = integrate_epoch(coeffs, x0, steps, 27.0, 25.0)
    want = naive_euler(coeffs, x0, steps, 27.0, 25.0)
    np.testing.assert_allclose(got, want, rtol=1e-11, atol=1e-9)


def test_block_integrator_batches_populations():
    coeffs = np.array([[[8190, 0.9, 3000, 2000, 0]] * 2, [[9000, 1.1, 5000, 1000, 0]] * 2], dtype=float)
    steps = np.full(80, 0.1)
    batch = integrate_epoch(coeffs, [500.0, 900.0], steps, 27.0, 27.0)
    for i in range(2):
        np.testing.assert_allclose(batch[i], integrate_epoch(coeffs[i], [500.0, 900.0], steps, 27.0, 27.0), rtol=1e-14)


# -- state space -------------------------------------------------------------


def test_beta_reference_layer1():
    a_c, b_c = build_continuous(L1, 3)
    beta = Fraction(-(1500 + 1500)) / (Fraction(13190) * Fraction(7, 10))
    assert beta == Fraction(-3000, 9233)
    assert state_rate(L1) == pytest.approx(float(beta), rel=1e-15)
    assert state_rate(L1) == pytest.approx(-0.32492, abs=5e-6)
    np.testing.assert_array_equal(a_c, state_rate(L1) * np.eye(3))
    np.testing.assert_array_equal(b_c, np.zeros((3, 1)))


def test_no_heat_paths_gives_zero_model():
    a_c, b_c = build_continuous(LayerParams(1, 1, 0, 0, 0), 2)
    assert not a_c.any() and not b_c.any()


def test_input_matrix_normalised_by_capacity():
    p = LayerParams(100, 2, 0, 0, 50)
    _, b_c = build_continuous(p, 2)
    np.testing.assert_array_equal(b_c, np.full((2, 1), 0.25))


def test_discretize_zero_step_is_identity():
    m = discretize(np.array([[-3.0, 1.0], [0.5, -2.0]]), np.ones((2, 1)), 0.0)
    np.testing.assert_array_equal(m.a, np.eye(2))
    np.testing.assert_array_equal(m.b, np.zeros((2, 1)))


def test_discretize_hand_value():
    m = discretize([[-2.0]], [[4.0]], 0.1)
    np.testing.assert_allclose(m.a, [[0.8]], rtol=1e-15)
    np.testing.assert_allclose(m.b, [[0.4]], rtol=1e-15)


def test_reference_layer1_discrete_model_is_stable():
    assert abs(1 + 0.1 * state_rate(L1)) < 1


def test_models_for_shapes_and_diagonal():
    models = models_for(LAYER1_PARAMS, 10, 0.1)
    for n, m in models.items():
        assert m.a.shape == (n, n) and m.b.shape == (n, 1) and m.epoch == n
        beta = state_rate(LAYER1_PARAMS.for_epoch(n)[0])
        np.testing.assert_allclose(m.a, (1 + 0.1 * beta) * np.eye(n), rtol=1e-15)


# -- properties --------------------------------------------------------------


@given(st.integers(1, 6), st.floats(-100, 1500), positive, positive, st.floats(-5e4, 5e4), st.floats(-5e4, 5e4), st.floats(0, 5e4))
def test_equilibrium_fixed_point(n, t_eq, c1, c2, c3, c4, c5):
    p = LayerParams(c1, c2, c3, c4, c5)
    rate = coupled_rhs(np.full(n, t_eq), [p] * n, t_eq, t_eq)
    assert np.all(rate == 0.0)


@given(st.floats(5e3, 2e4), st.floats(0.5, 2), st.floats(10, 5e3), st.floats(100, 3000), st.floats(0, 50))
def test_euler_error_at_least_halves(c1, c2, c5, t_mp, t_amb):
    p = LayerParams(c1, c2, 0, 0, c5)
    tau = c1 * c2 / c5
    dt = 0.01 * tau
    e1 = single_layer_error(p, t_mp, t_amb, dt, 2 * tau)
    e2 = single_layer_error(p, t_mp, t_amb, dt / 2, 2 * tau)
    assert e1 >= 2 * e2 * (1 - 1e-9)


@given(st.integers(2, 5), st.floats(30, 3000), st.floats(1e3, 5e4), st.floats(1e3, 5e4), st.floats(0, 100))
def test_previous_layers_continuous_across_deposition(n, t_mp, c3, c4, c5):
    sched = BuildSchedule.uniform(n, dwell=5.0, t_mp=t_mp)
    params = ParamSchedule.shared([LayerParams(8190, 0.9, c3, c4, c5)] * n)
    tr = integrate_build(sched, params)
    for k in range(1, n):
        i = int(np.argmin(np.abs(tr.times - sched.deposition_times[k])))
        prev = tr.temps[i - 1, :k]
        jump = np.abs(tr.temps[i, :k] - prev)
        max_rate = np.abs(coupled_rhs(prev, params.for_epoch(k), 27.0, 27.0))
        # no jump beyond a single Euler increment
        assert np.all(jump <= sched.dt * max_rate * (1 + 1e-12) + 1e-9)
        assert tr.temps[i, k] == t_mp


@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(0, 1e3))
def test_discretize_zero_step_identity_property(a, b, c, d):
    m = discretize([[a, b], [c, d]], [[a], [d]], 0.0)
    x = np.array([a + 1.0, d - 1.0])
    np.testing.assert_array_equal(m.a @ x, x)
    np.testing.assert_array_equal(m.b, 0.0)


@given(positive, positive, st.floats(1.0, 5e4), st.floats(-5e4, 5e4), st.floats(0, 5e4), st.floats(28, 3000), st.floats(0, 1), st.floats(0, 1))
def test_cooling_rate_negative_when_neighbours_colder(c1, c2, c3, above, c5, t, fb, fa):
    p = LayerParams(c1, c2, c3, 0.0, c5)
    below, amb = 27 + fb * (t - 27) * 0.99, 27 + fa * (t - 27) * 0.99
    assert layer_rhs(t, below, above, amb, p, is_top=False) < 0
    assert layer_rhs(t, below, None, amb, p, is_top=True) < 0


@given(st.floats(5e3, 2e4), st.floats(0.5, 2), st.floats(1e3, 5e4), st.floats(0, 5e3), st.floats(100, 3000))
def test_monotone_cooling_trajectory(c1, c2, c3, c5, t_mp):
    p = LayerParams(c1, c2, c3, 0.0, c5)
    lam = (c3 + c5) / (c1 * c2)
    dt = min(0.1, 0.5 / lam)
    sched = BuildSchedule.uniform(1, dwell=max(200 * dt, 2 / lam), t_mp=t_mp, dt=dt)
    v = integrate_build(sched, ParamSchedule.shared([p])).temps[:, 0]
    step = np.diff(v)
    far = (v[:-1] - 27.0) > 1e-9 * t_mp
    assert np.all(step[far] < 0)
    assert np.all(v >= 27.0 - 1e-9)


def test_euler_operator_is_affine_step():
    c = np.array([[8190, 0.9, 3000, 2000, 5.0], [8190, 0.9, 3000, 2000, 5.0]])
    m, g = euler_operator(c, 0.1, 27.0, 20.0)
    x = np.array([400.0, 900.0])
    p = LayerParams(*c[0])
    np.testing.assert_allclose(m @ x + g, x + 0.1 * coupled_rhs(x, [p, p], 27.0, 20.0), rtol=1e-14)
