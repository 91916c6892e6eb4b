import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from nmes_predictor.dynamics import error_rhs
from nmes_predictor.predictor import (FunctionSegment, HistoryCoverageError, InputHistory,
                                      PredictionDiverged, SampledSegment, euler_chain,
                                      euler_predict, omega_step, predict, prediction_truth,
                                      rk_reference)
from nmes_predictor.simulator import initial_history

TAU = 0.05


def _mixed_history(ref, t0=0.0):
    """Sampled piece, then a smooth piece, covering ``[t0 - tau, t0)``."""
    a, mid, b = t0 - TAU, t0 - 0.4 * TAU, t0
    grid = np.linspace(a, mid, 4)
    h = InputHistory([SampledSegment(grid, np.array([0.3, -0.2, 0.5]), "initial")])
    h.append(FunctionSegment(mid, b, lambda t: 0.4 * np.cos(7 * t) + ref.v_d(t)))
    return h


# -- history -------------------------------------------------------------

def test_history_contiguity_and_coverage():
    h = InputHistory([FunctionSegment(0.0, 1.0, lambda t: t)])
    with pytest.raises(ValueError, match="starts at"):
        h.append(FunctionSegment(1.5, 2.0, lambda t: t))
    h.append(FunctionSegment(1.0, 2.0, lambda t: -t))
    assert h.covers(0.0, 2.0) and not h.covers(-0.1, 1.0)
    with pytest.raises(HistoryCoverageError):
        h(np.array([2.5]))


def test_history_right_continuous_at_boundary():
    h = InputHistory([FunctionSegment(0.0, 1.0, lambda t: np.zeros_like(t)),
                      FunctionSegment(1.0, 2.0, lambda t: np.ones_like(t))])
    assert h(np.array([1.0]))[0] == 1.0
    assert h(np.array([np.nextafter(1.0, 0)]))[0] == 0.0
    np.testing.assert_array_equal(h.breakpoints(0.0, 2.0), [1.0])


def test_sampled_segment_left_continuous():
    s = SampledSegment(np.array([0.0, 1.0, 2.0]), np.array([3.0, 4.0]))
    np.testing.assert_array_equal(s.evaluate(np.array([0.0, 0.5, 1.0, 1.5, 2.0])),
                                  [3, 3, 3, 4, 4])
    with pytest.raises(ValueError):
        SampledSegment(np.array([0.0, 1.0]), np.array([1.0, 2.0]))


def test_drop_before_keeps_window():
    h = InputHistory([FunctionSegment(float(k), k + 1.0, lambda t: t) for k in range(5)])
    h.drop_before(2.5)
    assert h.start == 2.0 and h.end == 5.0


def test_sup_deviation_is_true_supremum(ref):
    h = _mixed_history(ref)
    t = np.linspace(-TAU, 0, 200001)[:-1]
    dense = np.max(np.abs(h(t) - ref.v_d(t)))
    sup = h.sup_deviation(-TAU, 0.0, ref)
    assert sup >= dense - 1e-12
    assert sup <= dense + 1e-6


# -- one step ------------------------------------------------------------

def test_omega_step_zero(model, zero_ref):
    h = initial_history("zero", zero_ref)
    np.testing.assert_array_equal(omega_step(0.0, TAU, [0.0, 0.0], h, model, zero_ref), [0, 0])


def test_omega_step_first_component_exact(model, ref):
    h = _mixed_history(ref)
    x = np.array([0.3, -1.7])
    out = omega_step(0.0, 0.02, x, h, model, ref)
    assert out[0] == x[0] + 0.02 * x[1]


def test_omega_step_matches_generic_step(model, ref, rng):
    for _ in range(100):
        t0 = rng.uniform(0, 6)
        h = _mixed_history(ref, t0)
        x = rng.normal(scale=0.8, size=2)
        step = rng.uniform(0.001, TAU)
        out = omega_step(t0, step, x, h, model, ref)

        def f2(s):
            u = h(np.array([s - TAU]))[0] - float(ref.v_d(s - TAU))
            return float(error_rhs(model, ref, s, x, u)[1])

        bps = [b + TAU for b in h.breakpoints(t0 - TAU, t0 + step - TAU)]
        integral = quad(f2, t0, t0 + step, points=bps or None, epsabs=1e-13, epsrel=1e-13,
                        limit=200)[0]
        assert abs(out[1] - (x[1] + integral)) < 1e-9


# -- generic scheme ------------------------------------------------------

def _double_integrator(t, x, u):
    x = np.asarray(x)
    return np.stack([x[..., 1], np.broadcast_to(u, x[..., 1].shape)], axis=-1)


def test_euler_hand_recursion():
    x = euler_predict(_double_integrator, 0.0, 1.0, 10, [0.0, 0.0], lambda t: np.ones_like(t))
    np.testing.assert_allclose(x, [0.45, 1.0], rtol=0, atol=1e-14)


def test_euler_single_step_of_zero_field():
    x = euler_predict(lambda t, x, u: np.zeros_like(x), 0.0, 0.3, 1, [1.5, -2.0],
                      lambda t: np.zeros_like(t))
    np.testing.assert_array_equal(x, [1.5, -2.0])


def test_euler_rejects_bad_N():
    with pytest.raises(ValueError):
        euler_predict(_double_integrator, 0.0, 1.0, 0, [0.0, 0.0], lambda t: t)


def test_euler_non_finite_aborts():
    with pytest.raises(PredictionDiverged), np.errstate(all="ignore"):
        euler_predict(lambda t, x, u: np.broadcast_to(x**2 * 1e200, x.shape), 0.0, 1.0, 5,
                      [1e200], lambda t: t)


def test_euler_first_order_generic():
    # x' = -x + sin(3t): exact solution in closed form
    def rhs(t, x, u):
        return -np.asarray(x) + np.reshape(u, np.shape(x))

    def exact(t):
        c = 1.0 - (-3.0) / 10.0
        return c * np.exp(-t) + (np.sin(3 * t) - 3 * np.cos(3 * t)) / 10.0

    errs = []
    Ns = [10, 20, 40, 80, 160]
    for N in Ns:
        x = euler_predict(rhs, 0.0, 1.0, N, [1.0], lambda t: np.sin(3 * t))
        errs.append(abs(x[0] - exact(1.0)))
    slope = np.polyfit(np.log(Ns), np.log(errs), 1)[0]
    assert slope == pytest.approx(-1.0, abs=0.05)


def test_rk_reference_accuracy():
    rhs = lambda t, x, u: -np.asarray(x)  # noqa: E731
    x, est = rk_reference(rhs, 0.0, 1.0, [1.0], lambda t, piece=None: np.zeros_like(t))
    assert est <= 1e-10
    assert x[0] == pytest.approx(np.exp(-1.0), abs=1e-12)


# -- prediction chain ----------------------------------------------------

def test_predict_on_reference(env, ref):
    h = initial_history("reference", ref)
    for cap in (1, 7, 64):
        res = predict(env, 0.0, [0.0, 0.0], h, cap=cap)
        assert res.N_used == 1  # s = 0 gives N(0) = 1
        assert np.max(np.abs(res.x_pred)) < 1e-12
    its, _ = euler_chain(env.model, ref, 0.0, np.zeros(2), 50, h)
    assert np.max(np.abs(its)) < 1e-12


def test_predict_practical_metadata(env, ref):
    h = _mixed_history(ref, 1.0)
    res = predict(env, 1.0, [0.2, -0.1], h, cap=400, keep_iterates=True)
    assert (res.N_used, res.certified) == (400, False)
    assert res.h == pytest.approx(TAU / 400)
    assert res.s_input == pytest.approx(np.hypot(0.2, 0.1) + h.sup_deviation(1 - TAU, 1, ref))
    assert res.iterates.shape == (401, 2)
    assert np.all(np.linalg.norm(res.iterates, axis=1) <= env.Q_tau(res.s_input))


def test_kernel_matches_numpy(env, model, ref):
    h = _mixed_history(ref, 2.0)
    a, _ = euler_chain(model, ref, 2.0, np.array([0.4, 0.9]), 300, h, use_kernel=True)
    b, _ = euler_chain(model, ref, 2.0, np.array([0.4, 0.9]), 300, h, use_kernel=False)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-13)


def test_chain_matches_generic_euler(model, ref):
    from nmes_predictor.predictor import history_input
    h = _mixed_history(ref, 0.5)
    x0 = np.array([0.1, 0.3])
    its, _ = euler_chain(model, ref, 0.5, x0, 40, h)
    u = history_input(h, ref, TAU)
    rhs = lambda t, x, uu: error_rhs(model, ref, t, x, uu)  # noqa: E731
    gen = euler_predict(rhs, 0.5, TAU, 40, x0, u, breakpoints=h.breakpoints(0.5 - TAU, 0.5) + TAU)
    np.testing.assert_allclose(its[-1], gen, atol=1e-10)


def test_quadrature_tolerance_invariance(model, ref):
    h = _mixed_history(ref, 0.3)
    x0 = np.array([0.5, -0.4])
    a, _ = euler_chain(model, ref, 0.3, x0, 200, h, quad_tol=1e-10)
    b, _ = euler_chain(model, ref, 0.3, x0, 200, h, quad_tol=5e-11)
    assert np.max(np.abs(a[-1] - b[-1])) < 1e-8


def test_prediction_converges_to_truth(model, ref):
    h = _mixed_history(ref, 0.0)
    x0 = np.array([0.3, 0.2])
    truth, est = prediction_truth(model, ref, 0.0, x0, h)
    assert est <= 1e-10
    errs = [np.linalg.norm(euler_chain(model, ref, 0.0, x0, N, h)[0][-1] - truth)
            for N in (100, 200, 400)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[1] / errs[2] == pytest.approx(2.0, rel=0.1)


def test_history_gap_detected(env, ref):
    h = InputHistory([FunctionSegment(-0.02, 0.0, lambda t: t)])
    with pytest.raises(HistoryCoverageError):
        predict(env, 0.0, [0.0, 0.0], h)


@settings(max_examples=25, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0, 6))
def test_prediction_error_below_truth_scale(x1, x2, t0):
    # Euler with a few thousand steps sits well inside the first-order error band
    from nmes_predictor.dynamics import PlantModel, ReferenceSpec, reference_build
    model = PlantModel()
    ref = reference_build(ReferenceSpec.sinusoid(0.5), model, TAU)
    h = initial_history("zero", ref, t0)
    x0 = np.array([x1, x2])
    its, _ = euler_chain(model, ref, t0, x0, 2000, h)
    truth, _ = prediction_truth(model, ref, t0, x0, h, tol=1e-11)
    scale = 1.0 + np.linalg.norm(x0)
    assert np.linalg.norm(its[-1] - truth) < 1e-3 * scale**3
