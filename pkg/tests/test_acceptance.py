"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the lines are repeated in a
summary section at the end of the session.  Expected runtime is about
fifteen minutes on one core, dominated by the 50 jittered closed-loop runs.
"""

import itertools
import time

import numpy as np
import pytest

from nmes_predictor.cli import build_scenario, run_scenario
from nmes_predictor.config import config_from_dict
from nmes_predictor.dynamics import HALF_PI, PlantModel, ReferenceSpec, reference_build
from nmes_predictor.envelopes import StepCountError, build_envelopes, step_count, validate_envelopes
from nmes_predictor.predictor import FunctionSegment, InputHistory, euler_chain, predict, prediction_truth
from nmes_predictor.simulator import (Thm31Instance, check_bound_thm31, check_lyapunov_decay,
                                      fit_decay_rate, run_closed_loop)

HORIZON = 20.0
FIT_START = 2 * 0.05 + 2 * 0.05
GRID = (-1.0, 0.0, 1.0)
JITTER_IC = (1.0, 1.0)
N_JITTER = 50

SCENARIO = {
    "reference": {"kind": "sinusoid", "amplitudes": [0.5], "frequencies": [1.0], "phases": [0.0]},
    "controller": {"mu": 1.0, "eps": 0.1, "mode": "practical", "n_cap": 8000},
    "delay": {"tau": 0.05},
    "schedule": {"kind": "uniform", "r": 0.05, "seed": 0},
    "sim": {"horizon": HORIZON, "h_plant": 1e-3, "initial_input": {"kind": "zero"}},
}


def _cfg(**over):
    data = {k: dict(v) for k, v in SCENARIO.items()}
    for path, val in over.items():
        sec, key = path.split("__")
        data.setdefault(sec, {})[key] = val
    return config_from_dict(data)


def _report(record_property, n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    record_property("acceptance", line)
    print(line)
    return ok


def _run_summary(tr, env):
    fit = fit_decay_rate(tr.t, tr.err_metric, FIT_START)
    return {"traj": tr, "status": tr.status, "terminal": float(tr.err_metric[-1]),
            "omega_hat": fit, "max_q": float(np.max(np.abs(tr.q))),
            "lyap": check_lyapunov_decay(tr, env)}


@pytest.fixture(scope="module")
def scenario():
    return build_scenario(_cfg())


@pytest.fixture(scope="module")
def grid_runs(scenario):
    runs, t0 = {}, time.perf_counter()
    for q0, qd0 in itertools.product(GRID, GRID):
        sc = build_scenario(_cfg(), q0=q0, qdot0=qd0)
        runs[(q0, qd0)] = _run_summary(run_closed_loop(sc.sim), sc.env)
    return runs, time.perf_counter() - t0


@pytest.fixture(scope="module")
def jitter_runs():
    out = []
    for seed in range(N_JITTER):
        sc = build_scenario(_cfg(schedule__kind="jittered"), q0=JITTER_IC[0],
                            qdot0=JITTER_IC[1], seed=seed)
        out.append(_run_summary(run_closed_loop(sc.sim), sc.env))
    return out


def _random_instances(env, ref, rng, n):
    """Initial errors and input histories with ``|x0| + sup|v - v_d| <= 1``."""
    tau = ref.tau
    out = []
    for _ in range(n):
        t0 = rng.uniform(0, 2 * np.pi)
        s_target = rng.uniform(0.0, 1.0)
        share = rng.uniform(0, 1)
        ang = rng.uniform(0, 2 * np.pi)
        x0 = share * s_target * np.array([np.cos(ang), np.sin(ang)])
        amp, w, ph = (1 - share) * s_target, rng.uniform(0, 40), rng.uniform(0, 2 * np.pi)
        seg = FunctionSegment(t0 - tau, t0,
                              lambda t, a=amp, w=w, p=ph: ref.v_d(t) + a * np.sin(w * t + p))
        out.append((t0, x0, InputHistory([seg])))
    return out


# -- 1 -------------------------------------------------------------------

def test_criterion_1_euler_certificate(model, record_property):
    rng = np.random.default_rng(1)
    checked, passed, refused, worst_need = 0, 0, 0, 0.0
    for tau in (0.05, 0.1):
        ref = reference_build(ReferenceSpec.sinusoid(0.5), model, tau)
        env = build_envelopes(model, ref, 1.0, 0.1, 0.05)
        for t0, x0, hist in _random_instances(env, ref, rng, 50):
            s = float(np.linalg.norm(x0)) + hist.sup_deviation(t0 - tau, t0, ref)
            worst_need = max(worst_need, float(env.euler_min_steps(s)))
            try:
                N, _ = step_count(env, s, mode="certified")
            except StepCountError:
                refused += 1
                continue
            rep = check_bound_thm31(env, Thm31Instance(t0, x0, hist, N))
            checked += 1
            passed += rep.ok and rep.hypothesis_met
    ok = checked >= 100 and passed == checked
    _report(record_property, 1, ok,
            f"{passed}/{checked} certified instances within the bound; {refused}/100 refused "
            f"(N(s) not representable; minimum admissible N up to {worst_need:.3g})")
    assert ok


# -- 2 -------------------------------------------------------------------

def test_criterion_2_prediction_contract(env, ref, record_property):
    rng = np.random.default_rng(2)
    checked, passed, refused = 0, 0, 0
    for t0, x0, hist in _random_instances(env, ref, rng, 100):
        try:
            res = predict(env, t0, x0, hist, mode="certified")
        except StepCountError:
            refused += 1
            continue
        truth, _ = prediction_truth(env.model, ref, t0, x0, hist)
        err = float(np.linalg.norm(res.x_pred - truth))
        s = res.s_input
        checked += 1
        passed += (err <= float(env.R_fn(s))
                   and np.linalg.norm(res.x_pred) <= float(env.a_tau(s) + env.R_fn(s)))
    ok = checked == 100 and passed == 100
    _report(record_property, 2, ok,
            f"{passed}/100 certified predictions within R(s); {refused}/100 refused "
            f"(certified N(s) not representable)")
    assert ok


# -- 3 -------------------------------------------------------------------

def test_criterion_3_euler_order(model, ref, record_property):
    t0, x0 = 0.7, np.array([0.4, -0.3])
    hist = InputHistory([FunctionSegment(t0 - ref.tau, t0,
                                         lambda t: ref.v_d(t) + 0.3 * np.cos(20 * t))])
    truth, est = prediction_truth(model, ref, t0, x0, hist, tol=1e-12)
    Ns = np.array([10, 20, 40, 80, 160])
    errs = [float(np.linalg.norm(euler_chain(model, ref, t0, x0, int(N), hist)[0][-1] - truth))
            for N in Ns]
    slope = float(np.polyfit(np.log(Ns), np.log(errs), 1)[0])
    ok = abs(-slope - 1.0) <= 0.1
    _report(record_property, 3, ok, f"log-log slope {slope:.4f} (truth estimate {est:.1e})")
    assert ok


# -- 4 -------------------------------------------------------------------

def test_criterion_4_exponential_tracking(grid_runs, env, record_property):
    runs, elapsed = grid_runs
    bad = []
    for ic, r in runs.items():
        if not (r["status"] == "ok" and r["terminal"] < 1e-3 and r["omega_hat"] >= env.omega):
            bad.append((ic, r["status"], r["terminal"], r["omega_hat"]))
    worst_term = max(r["terminal"] for r in runs.values())
    min_rate = min(r["omega_hat"] for r in runs.values())
    ok = not bad and elapsed < 300
    _report(record_property, 4, ok,
            f"{9 - len(bad)}/9 runs converge; worst terminal metric {worst_term:.2e}; "
            f"min omega_hat {min_rate:.4f} vs omega {env.omega:.4f}; {elapsed:.0f} s")
    assert ok, bad


# -- 5 -------------------------------------------------------------------

def test_criterion_5_state_constraint(grid_runs, jitter_runs, record_property):
    runs = list(grid_runs[0].values()) + jitter_runs
    violations = sum(int(np.count_nonzero(np.abs(r["traj"].q) >= HALF_PI)) for r in runs)
    status_bad = sum(r["status"] == "constraint" for r in runs)
    max_q = max(r["max_q"] for r in runs)
    ok = violations == 0 and status_bad == 0
    _report(record_property, 5, ok,
            f"{violations} grid points with |q| >= pi/2 over {len(runs)} runs; max |q| = {max_q:.4f}")
    assert ok


# -- 6 -------------------------------------------------------------------

def test_criterion_6_sampling_robustness(grid_runs, jitter_runs, record_property):
    uniform = grid_runs[0][JITTER_IC]["terminal"]
    conv = sum(r["status"] == "ok" and r["terminal"] < 1e-3 for r in jitter_runs)
    worst = max(r["terminal"] for r in jitter_runs)
    ok = conv == N_JITTER and worst <= 2 * uniform
    _report(record_property, 6, ok,
            f"{conv}/{N_JITTER} jittered runs converge; max terminal {worst:.2e} vs "
            f"2x uniform {2 * uniform:.2e}")
    assert ok


# -- 7 -------------------------------------------------------------------

def test_criterion_7_lyapunov_decay(grid_runs, env, record_property):
    runs = grid_runs[0]
    n_viol = sum(r["lyap"].violations for r in runs.values())
    worst = max(r["lyap"].worst_excess for r in runs.values())
    sc = build_scenario(_cfg(sim__horizon=2.0), q0=0.5, qdot0=0.0)
    sc.sim.xi_fault = (1.0, 1.0)
    fault = check_lyapunov_decay(run_closed_loop(sc.sim), sc.env)
    ok = n_viol == 0 and fault.violations >= 1
    _report(record_property, 7, ok,
            f"{n_viol} violations over 9 practical-mode runs (worst excess {worst:.2e}); "
            f"fault injection gives {fault.violations} violations")
    assert ok


# -- 8 -------------------------------------------------------------------

def test_criterion_8_envelope_validation(env, model, ref, record_property):
    rep = validate_envelopes(env, model, ref, n_samples=10_000, seed=0)
    required = ["f_lipschitz", "f_growth", "P_time_derivatives", "W_gradient", "f_time_shift",
                "W_lower", "W_upper", "V_lower", "V_upper", "V_gradient", "k_growth",
                "a_tilde_linear", "k_lipschitz"]
    missing = [r for r in required if r not in {c.ident for c in rep.checks}]
    n_viol = sum(c.violations for c in rep.checks)
    ok = rep.ok and not missing
    _report(record_property, 8, ok,
            f"{n_viol} violations over {len(rep.checks)} inequalities x 10^4 samples"
            + (f"; missing {missing}" if missing else ""))
    assert ok


# -- 9 -------------------------------------------------------------------

def test_criterion_9_equilibrium(record_property):
    cfg = _cfg(sim__q0="reference", sim__qdot0="reference",
               sim__initial_input={"kind": "reference"})
    tr = run_closed_loop(build_scenario(cfg).sim)
    worst = float(np.max(tr.err_metric))
    ok = tr.status == "ok" and worst < 1e-9 and tr.t[-1] == pytest.approx(HORIZON)
    _report(record_property, 9, ok, f"max tracking metric over [0, 20] s: {worst:.2e}")
    assert ok


# -- 10 ------------------------------------------------------------------

def test_criterion_10_determinism(tmp_path, record_property, capsys):
    cfg = _cfg(schedule__kind="jittered", schedule__seed=5)
    (rc_a, _), (rc_b, _) = run_scenario(cfg, tmp_path / "a"), run_scenario(cfg, tmp_path / "b")
    names = ("trajectory.csv", "samples.csv", "validation.csv", "summary.txt")
    same = [(tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names]
    capsys.readouterr()
    ok = rc_a == rc_b == 0 and all(same)
    _report(record_property, 10, ok, f"{sum(same)}/{len(names)} artifacts byte-identical")
    assert ok
