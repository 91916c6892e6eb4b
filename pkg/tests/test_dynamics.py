import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nmes_predictor.dynamics import (HALF_PI, ConstraintViolation, ErrorState, PlantModel,
                                     PlantState, ReferenceSpec, error_rhs, eval_g,
                                     eval_plant_terms, from_error_coords, plant_rhs,
                                     reference_build, to_error_coords)

angles = st.floats(-1.5, 1.5)
speeds = st.floats(-20, 20)


# -- plant ---------------------------------------------------------------

def test_terms_vanish_at_origin(model):
    F, dF, H, G = eval_plant_terms(model, 0.0, 0.0)
    assert (F, dF, H) == (0.0, 0.0, 0.0)
    assert G == pytest.approx(model.moment_gain / model.J)


def test_F_closed_form_unit_parameters(unit_model):
    q = math.pi / 4
    expected = ((1 - math.cos(q)) + math.exp(-q) * (math.exp(q) - 1 - q)
                + math.log(1 / math.cos(q)))
    assert float(unit_model.F(q)) == pytest.approx(expected, rel=1e-14)


@given(angles)
def test_dF_matches_finite_difference(q):
    m = PlantModel()
    h = 1e-6
    fd = (m.F(q + h) - m.F(q - h)) / (2 * h)
    assert float(m.dF(q)) == pytest.approx(float(fd), rel=1e-6, abs=1e-6)


@given(angles)
def test_F_nonnegative(q):
    assert PlantModel().F(q) >= 0


def test_domain_error_at_constraint(model):
    with pytest.raises(ConstraintViolation):
        eval_plant_terms(model, HALF_PI, 0.0)
    with pytest.raises(ConstraintViolation):
        PlantState(-2.0, 0.0)


def test_rejects_nonpositive_parameters():
    with pytest.raises(ValueError, match="k2"):
        PlantModel(k2=0.0)
    with pytest.raises(ValueError):
        PlantModel(moment_gain=-1.0)


def test_callable_gain_bounds():
    m = PlantModel(moment_gain=lambda q, qd: 1.5 + 0.5 * np.cos(q))
    assert m.G_sup >= 2.0
    assert 0 < m.G_inf <= 1.5


def test_plant_rhs_equilibrium_and_input(model):
    assert plant_rhs(model, PlantState(0.0, 0.0), 0.0) == (0.0, 0.0)
    assert plant_rhs(model, PlantState(0.0, 0.0), 1.0) == (0.0, pytest.approx(2.0))


# -- coordinates ---------------------------------------------------------

_REF = {}


def _ref():
    if "r" not in _REF:
        _REF["r"] = reference_build(ReferenceSpec.sinusoid(0.5), PlantModel(), 0.05)
    return _REF["r"]


def test_error_coords_known_values(zero_ref):
    x = to_error_coords(PlantState(math.pi / 4, 1.0), zero_ref, 0.3)
    assert x.x1 == pytest.approx(1.0, abs=1e-15)
    assert x.x2 == pytest.approx(2.0, abs=1e-14)


def test_on_reference_is_origin(ref):
    t = 0.7
    x = to_error_coords(PlantState(float(ref.q_d(t)), float(ref.qdot_d(t))), ref, t)
    assert abs(x.x1) < 1e-15 and abs(x.x2) < 1e-15
    s = from_error_coords(ErrorState(0.0, 0.0), ref, t)
    assert s.q == pytest.approx(float(ref.q_d(t)), abs=1e-15)


@settings(max_examples=200)
@given(angles, speeds, st.floats(0, 10))
def test_round_trip_plant_error_plant(q, qd, t):
    ref = _ref()
    s = from_error_coords(to_error_coords(PlantState(q, qd), ref, t), ref, t)
    assert s.q == pytest.approx(q, abs=1e-12)
    assert s.qdot == pytest.approx(qd, abs=1e-12 * max(1.0, abs(qd)))


@settings(max_examples=200)
@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(0, 10))
def test_inverse_transform_respects_constraint(x1, x2, t):
    s = from_error_coords(ErrorState(x1, x2), _ref(), t)
    assert abs(s.q) < HALF_PI


def test_inverse_transform_extremes(zero_ref):
    s = from_error_coords(ErrorState(1e12, 0.0), zero_ref, 0.0)
    assert s.q < HALF_PI
    s = from_error_coords(ErrorState(-1e12, 0.0), zero_ref, 0.0)
    assert s.q > -HALF_PI


# -- g and the error system ----------------------------------------------

def test_g_at_origin(model):
    g1, g2 = eval_g(model, [0.0, 0.0])
    assert g1 == 0.0
    assert g2 == pytest.approx(2.0)


def test_g2_positive_lower_bound(model, rng):
    z = rng.normal(scale=10, size=(10_000, 2))
    _, g2 = eval_g(model, z)
    assert np.all(g2 >= (1 + z[:, 0] ** 2) * model.G_inf * (1 - 1e-12))


def _zeta2(q, qd):
    return qd / np.cos(q) ** 2


def test_g1_chain_rule_oracle(model, rng):
    q = rng.uniform(-1.4, 1.4, 500)
    qd = rng.normal(scale=3, size=500)
    qdd = -model.dF(q) - model.H(qd)
    h = 1e-6
    dz_dq = (_zeta2(q + h, qd) - _zeta2(q - h, qd)) / (2 * h)
    dz_dqd = (_zeta2(q, qd + h) - _zeta2(q, qd - h)) / (2 * h)
    g1, _ = eval_g(model, np.stack([np.tan(q), _zeta2(q, qd)], axis=-1))
    oracle = dz_dq * qd + dz_dqd * qdd
    np.testing.assert_allclose(g1, oracle, rtol=1e-6, atol=1e-6 * (1 + np.abs(oracle)).max())


def test_plant_and_error_rhs_agree(model, ref, rng):
    for _ in range(200):
        t = rng.uniform(0, 10)
        q, qd, v = rng.uniform(-1.4, 1.4), rng.normal(scale=2), rng.normal(scale=2)
        _, qdd = plant_rhs(model, PlantState(q, qd), v)
        c2 = math.cos(q) ** 2
        z2dot = qdd / c2 + 2 * qd**2 * math.tan(q) / c2
        x = to_error_coords(PlantState(q, qd), ref, t).as_array()
        u = v - float(ref.v_d(t - ref.tau))
        f = error_rhs(model, ref, t, x, u)
        expected = z2dot - ref.zeta_d_dot(t)[1]
        assert f[0] == x[1]
        assert f[1] == pytest.approx(expected, rel=1e-9, abs=1e-9)


def test_error_rhs_vanishes_at_origin(model, ref, rng):
    t = rng.uniform(0, 50, 1000)
    f = error_rhs(model, ref, t, np.zeros((1000, 2)), np.zeros(1000))
    assert np.max(np.abs(f)) < 1e-12


# -- reference -----------------------------------------------------------

def test_zero_reference(zero_ref):
    t = np.linspace(-0.05, 10, 101)
    assert np.all(zero_ref.v_d(t) == 0.0)
    L = zero_ref.lambdas
    assert L[0] == L[2] == L[4] == 0.0


def test_reference_identity_residual(model, ref):
    t = np.linspace(0, 4 * np.pi, 20001)
    q, qd, qdd = 0.5 * np.sin(t), 0.5 * np.cos(t), -0.5 * np.sin(t)
    resid = qdd + model.dF(q) + model.H(qd) - model.G(q, qd) * ref.v_d(t - ref.tau)
    assert np.max(np.abs(resid)) < 1e-9


def test_lambdas_dominate_samples(ref, rng):
    t = rng.uniform(0, 50, 5000)
    L1, L2, L3, _, _ = ref.lambdas
    assert np.max(np.linalg.norm(ref.zeta_d(t), axis=-1)) <= L1
    assert np.max(np.abs(ref.v_d(t - ref.tau))) <= L2
    assert np.max(np.linalg.norm(ref.zeta_d_dot(t), axis=-1)) <= L3


def test_rejects_reference_beyond_constraint(model):
    with pytest.raises(ValueError, match="pi/2"):
        reference_build(ReferenceSpec.sinusoid(1.6), model, 0.05)


def test_sum_reference(model):
    spec = ReferenceSpec("sum", (0.3, 0.2), (1.0, 2.5), (0.0, 0.4), 0.1)
    r = reference_build(spec, model, 0.05, horizon=5.0)
    t = 1.3
    assert float(r.q_d(t)) == pytest.approx(0.1 + 0.3 * math.sin(t) + 0.2 * math.sin(2.5 * t + 0.4))
    assert r.period is None
