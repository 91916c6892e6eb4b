"""Closed-loop simulation of the delayed plant under the hybrid controller,
sampling schedules, and the verification metrics computed from a run.
"""

from __future__ import annotations

import csv
import io
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels
from .controller import ControllerState, control_segment, on_sample
from .dynamics import (HALF_PI, ConstraintViolation, PlantModel, PlantState,
                       ReferenceTrajectory, plant_to_error)
from .envelopes import EnvelopeSet
from .lyapunov import lyapunov_V
from .predictor import (FunctionSegment, InputHistory, SampledSegment, euler_chain,
                        prediction_truth, rk_reference)

CONSTRAINT_MARGIN = 1e-9


class Diverged(FloatingPointError):
    """The plant state became non-finite."""


# -- schedules -----------------------------------------------------------

@dataclass(frozen=True)
class SamplingSchedule:
    times: np.ndarray
    r: float

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.size == 0 or t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ValueError("schedule must start at 0 and be strictly increasing")
        if np.any(np.diff(t) > self.r * (1 + 1e-12)):
            raise ValueError("schedule gap exceeds r")
        object.__setattr__(self, "times", t)


def make_schedule(kind: str, r: float, horizon: float, seed: int = 0) -> SamplingSchedule:
    """Sample times ``0 = T_0 < T_1 < ...`` reaching at least ``horizon``.

    ``"uniform"`` uses ``T_i = i r``; ``"jittered"`` draws gaps uniformly
    from ``[r/2, r]``.
    """
    if not r > 0:
        raise ValueError("r must be positive")
    if kind == "uniform":
        n = int(np.ceil(horizon / r - 1e-9))
        return SamplingSchedule(r * np.arange(n + 1), r)
    if kind == "jittered":
        rng = np.random.default_rng(seed)
        times = [0.0]
        while times[-1] < horizon:
            times.append(times[-1] + rng.uniform(0.5 * r, r))
        return SamplingSchedule(np.array(times), r)
    raise ValueError(f"unknown schedule kind {kind!r}")


# -- initial inputs ------------------------------------------------------

def initial_history(kind: str, ref: ReferenceTrajectory, t0: float = 0.0,
                    value: float = 0.0, grid=None, values=None,
                    fn: Callable | None = None) -> InputHistory:
    """Input on ``[t0 - tau, t0)``: ``"zero"``, ``"constant"``, ``"reference"``
    (the feedforward), ``"sampled"`` or ``"callable"``."""
    a, b = t0 - ref.tau, t0
    if kind == "zero":
        seg = FunctionSegment(a, b, lambda t: np.zeros_like(t), "initial")
    elif kind == "constant":
        seg = FunctionSegment(a, b, lambda t: np.full_like(t, value), "initial")
    elif kind == "reference":
        seg = FunctionSegment(a, b, ref.v_d, "initial")
    elif kind == "sampled":
        g = np.asarray(grid, dtype=float)
        if abs(g[0] - a) > 1e-12 or abs(g[-1] - b) > 1e-12:
            raise ValueError("sampled initial input must span [t0 - tau, t0]")
        seg = SampledSegment(g, np.asarray(values, dtype=float), "initial")
    elif kind == "callable":
        seg = FunctionSegment(a, b, fn, "initial")
    else:
        raise ValueError(f"unknown initial input kind {kind!r}")
    return InputHistory([seg])


# -- trajectory ----------------------------------------------------------

TRAJ_COLUMNS = ("t", "q", "qdot", "q_d", "qdot_d", "v", "v_d", "x1", "x2", "err_metric", "V")
SAMPLE_COLUMNS = ("t_i", "N_i", "s_input", "xi1", "xi2", "certified")


@dataclass
class Trajectory:
    t: np.ndarray
    q: np.ndarray
    qdot: np.ndarray
    q_d: np.ndarray
    qdot_d: np.ndarray
    v: np.ndarray
    v_d: np.ndarray
    x: np.ndarray
    err_metric: np.ndarray
    V: np.ndarray
    samples: dict
    mu: float
    tau: float
    t0: float
    status: str = "ok"
    message: str = ""
    history: InputHistory | None = field(default=None, repr=False)

    @property
    def converged(self) -> bool:
        return self.status == "ok"

    def trajectory_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRAJ_COLUMNS)
        cols = (self.t, self.q, self.qdot, self.q_d, self.qdot_d, self.v, self.v_d,
                self.x[:, 0], self.x[:, 1], self.err_metric, self.V)
        for row in zip(*cols):
            w.writerow([repr(float(c)) for c in row])
        return buf.getvalue()

    def samples_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SAMPLE_COLUMNS)
        s = self.samples
        for k in range(len(s["t_i"])):
            w.writerow([repr(float(s["t_i"][k])), int(s["N_i"][k]), repr(float(s["s_input"][k])),
                        repr(float(s["xi1"][k])), repr(float(s["xi2"][k])),
                        str(bool(s["certified"][k])).lower()])
        return buf.getvalue()


@dataclass
class SimConfig:
    """Everything one closed-loop run needs."""

    model: PlantModel
    ref: ReferenceTrajectory
    env: EnvelopeSet
    schedule: SamplingSchedule
    horizon: float
    q0: float
    qdot0: float
    history: InputHistory
    h_plant: float = 1e-4
    t0: float = 0.0
    mode: str = "practical"
    cap: int = 10_000_000
    quad_tol: float = 1e-10
    predict_ahead: bool = True
    xi_fault: tuple | None = None


def _mesh(a: float, b: float, h: float, extra: np.ndarray) -> np.ndarray:
    n = max(1, int(np.ceil((b - a) / h - 1e-9)))
    pts = a + (b - a) * np.arange(n + 1) / n
    pts = np.union1d(pts, extra[(extra > a) & (extra < b)])
    # merge points closer than a rounding error
    keep = np.concatenate([[True], np.diff(pts) > 1e-12 * max(1.0, abs(b))])
    pts = pts[keep]
    pts[-1] = b
    return pts


def _delayed_stage_inputs(hist: InputHistory, mesh: np.ndarray, tau: float) -> np.ndarray:
    """Delayed input at left, middle and right of each mesh step, using the
    branch of the history that is active inside the step."""
    left, right = mesh[:-1] - tau, mesh[1:] - tau
    mid = 0.5 * (left + right)
    out = np.empty((left.size, 3))
    starts = np.array([s.start for s in hist.segments])
    segs = hist.segments
    idx = np.clip(np.searchsorted(starts, mid, side="right") - 1, 0, len(segs) - 1)
    for i in np.unique(idx):
        sel = idx == i
        seg = segs[i]
        if isinstance(seg, SampledSegment):
            val = seg.evaluate(mid[sel])
            out[sel] = val[:, None]
        else:
            out[sel, 0] = seg.evaluate(left[sel])
            out[sel, 1] = seg.evaluate(mid[sel])
            out[sel, 2] = seg.evaluate(right[sel])
    return out


def _rk4_numpy(model, q, qd, mesh, vst, limit):
    n = mesh.size
    oq, oqd = np.empty(n), np.empty(n)
    oq[0], oqd[0] = q, qd

    def f(q, qd, v):
        return qd, float(-model.dF(q) - model.H(qd) + model.G(q, qd) * v)

    for j in range(n - 1):
        dt = mesh[j + 1] - mesh[j]
        v0, vm, v1 = vst[j]
        a1, b1 = f(q, qd, v0)
        a2, b2 = f(q + 0.5 * dt * a1, qd + 0.5 * dt * b1, vm)
        a3, b3 = f(q + 0.5 * dt * a2, qd + 0.5 * dt * b2, vm)
        a4, b4 = f(q + dt * a3, qd + dt * b3, v1)
        q = q + dt / 6 * (a1 + 2 * a2 + 2 * a3 + a4)
        qd = qd + dt / 6 * (b1 + 2 * b2 + 2 * b3 + b4)
        oq[j + 1], oqd[j + 1] = q, qd
        if not (abs(q) < limit and np.isfinite(qd)):
            return oq, oqd, j + 1
    return oq, oqd, -1


def run_closed_loop(cfg: SimConfig, raise_on_failure: bool = False) -> Trajectory:
    """Integrate plant and controller over ``[t0, t0 + horizon]``.

    The plant is advanced by fixed-step RK4 whose mesh contains every
    sample time and every sample time plus the delay, so no step straddles
    a jump of the delayed input.  A run that reaches ``|q| >= pi/2 - 1e-9``
    or a non-finite state stops with ``status`` set accordingly.
    """
    model, ref, env = cfg.model, cfg.ref, cfg.env
    tau, t0 = ref.tau, cfg.t0
    if abs(cfg.q0) >= HALF_PI:
        raise ConstraintViolation("initial angle violates |q| < pi/2")
    hist = InputHistory(cfg.history.segments)
    if not hist.covers(t0 - tau, t0):
        raise ValueError("initial input must cover [t0 - tau, t0)")
    T = t0 + cfg.schedule.times
    t_end = t0 + cfg.horizon
    T = T[T < t_end - 1e-12]
    bounds = np.append(T, t_end)
    params = _kernels.plant_params(model)
    limit = HALF_PI - CONSTRAINT_MARGIN

    ctrl = ControllerState(env.mu)
    ts, qs, qds, vs = [], [], [], []
    samples = {k: [] for k in SAMPLE_COLUMNS}
    dev_t, dev_v = [], []
    q, qd = float(cfg.q0), float(cfg.qdot0)
    status, message = "ok", ""

    # deviation of the initial input, for the running sup term
    init_grid = np.linspace(t0 - tau, t0, max(3, int(np.ceil(tau / cfg.h_plant)) * 2 + 1))
    for lo, hi, fn in _pieces(hist, t0 - tau, t0):
        g = init_grid[(init_grid >= lo) & (init_grid <= hi)]
        g = np.union1d(g, [lo, hi])
        dev_t.append(_left_limit_times(g))
        dev_v.append(np.abs(fn(g) - ref.v_d(g)))

    for i, Ti in enumerate(T):
        Tn = bounds[i + 1]
        try:
            ctrl = on_sample(ctrl, env, Ti, PlantState(q, qd), hist, ref, mode=cfg.mode,
                             cap=cfg.cap, quad_tol=cfg.quad_tol,
                             predict_ahead=cfg.predict_ahead, xi_fault=cfg.xi_fault)
        except FloatingPointError as exc:
            status, message = "diverged", str(exc)
            break
        samples["t_i"].append(Ti)
        samples["N_i"].append(ctrl.N_last)
        samples["s_input"].append(ctrl.s_input)
        samples["xi1"].append(ctrl.xi_sample[0])
        samples["xi2"].append(ctrl.xi_sample[1])
        samples["certified"].append(ctrl.certified)
        seg = control_segment(ctrl, model, ref, Tn)
        hist.append(seg)

        mesh = _mesh(Ti, Tn, cfg.h_plant, hist.breakpoints(Ti - tau, Tn - tau) + tau)
        vst = _delayed_stage_inputs(hist, mesh, tau)
        if params is not None:
            oq, oqd = np.empty(mesh.size), np.empty(mesh.size)
            bad = _kernels.plant_rk4(q, qd, mesh, vst, params, oq, oqd, limit)
        else:
            oq, oqd, bad = _rk4_numpy(model, q, qd, mesh, vst, limit)
        stop = mesh.size if bad < 0 else bad + 1
        vloc = seg.evaluate(mesh[:stop])
        # the last mesh point belongs to the next interval
        last = stop - 1 if (bad < 0 and i + 1 < len(T)) else stop
        ts.append(mesh[:last])
        qs.append(oq[:last])
        qds.append(oqd[:last])
        vs.append(vloc[:last])
        dg = np.union1d(mesh[:stop], 0.5 * (mesh[:stop - 1] + mesh[1:stop]))
        dev_t.append(_left_limit_times(dg))
        dev_v.append(np.abs(seg.evaluate(dg) - ref.v_d(dg)))
        if bad >= 0:
            if np.isfinite(oq[bad]) and np.isfinite(oqd[bad]):
                status = "constraint"
                message = f"|q| reached {abs(oq[bad])!r} at t={mesh[bad]!r}"
            else:
                status, message = "diverged", f"non-finite state at t={mesh[bad]!r}"
            break
        q, qd = float(oq[-1]), float(oqd[-1])
        hist.drop_before(Tn - 2 * tau - 1e-9)

    if raise_on_failure and status != "ok":
        raise (ConstraintViolation if status == "constraint" else Diverged)(message)
    t = np.concatenate(ts) if ts else np.array([t0])
    q_arr = np.concatenate(qs) if qs else np.array([cfg.q0])
    qd_arr = np.concatenate(qds) if qds else np.array([cfg.qdot0])
    v_arr = np.concatenate(vs) if vs else np.array([np.nan])
    ok = np.abs(q_arr) < HALF_PI
    x = np.full((t.size, 2), np.nan)
    x[ok] = plant_to_error(q_arr[ok], qd_arr[ok], ref, t[ok])
    qdes, qddes = ref.q_d(t), ref.qdot_d(t)
    sup_dev = _window_sup(np.concatenate(dev_t), np.concatenate(dev_v), t, tau)
    metric = np.abs(q_arr - qdes) + np.abs(qd_arr - qddes) + sup_dev
    return Trajectory(t, q_arr, qd_arr, qdes, qddes, v_arr, ref.v_d(t), x, metric,
                      lyapunov_V(env.mu, x), {k: np.asarray(v) for k, v in samples.items()},
                      env.mu, tau, t0, status, message, hist)


def _pieces(hist, a, b):
    for seg in hist.segments:
        yield from seg.pieces(a, b)


def _left_limit_times(g):
    """Tag a piece's right-end sample just before the end, where it belongs in a half-open window."""
    g = np.array(g, dtype=float)
    g[-1] = np.nextafter(g[-1], -np.inf)
    return g


def _window_sup(st, sv, t, tau):
    """``max sv[k]`` over samples with ``t - tau <= st[k] < t``, for each ``t``."""
    order = np.argsort(st, kind="stable")
    st, sv = st[order], sv[order]
    out = np.zeros(t.size)
    dq: deque = deque()
    j = 0
    for k, tk in enumerate(t):
        while j < st.size and st[j] < tk:
            while dq and sv[dq[-1]] <= sv[j]:
                dq.pop()
            dq.append(j)
            j += 1
        while dq and st[dq[0]] < tk - tau - 1e-12:
            dq.popleft()
        out[k] = sv[dq[0]] if dq else 0.0
    return out


# -- metrics -------------------------------------------------------------

def tracking_metric(traj: Trajectory, ref: ReferenceTrajectory | None = None) -> np.ndarray:
    """``|q - q_d| + |qdot - qdot_d| + sup_{[t-tau, t)} |v - v_d|`` on the record grid."""
    return traj.err_metric


def fit_decay_rate(t, series, window_start: float, floor: float = 1e-14) -> float:
    """Negative least-squares slope of ``log(series)`` over ``t >= window_start``."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(series, dtype=float)
    sel = t >= window_start
    if np.count_nonzero(sel) < 2:
        raise ValueError("decay-fit window is empty")
    slope = np.polyfit(t[sel], np.log(np.maximum(y[sel], floor)), 1)[0]
    return float(-slope)


@dataclass
class LyapunovReport:
    intervals: int
    violations: int
    worst_excess: float
    first_violation_t: float | None

    @property
    def ok(self) -> bool:
        return self.violations == 0


def check_lyapunov_decay(traj: Trajectory, env: EnvelopeSet, rel_tol: float = 1e-4) -> LyapunovReport:
    """Check ``dV/dt <= -2 mu V + gamma`` on every record interval after ``t0 + tau``.

    Uses the trapezoidal form ``(V_{k+1}-V_k)/dt <= -mu (V_k + V_{k+1}) + gamma + tol``
    with ``tol = rel_tol * max(V_k, V_{k+1}, 1)``.
    """
    t, V = traj.t, traj.V
    sel = t[:-1] >= traj.t0 + traj.tau - 1e-12
    dt = np.diff(t)
    lhs = np.diff(V) / dt
    Vm = np.maximum(V[:-1], V[1:])
    rhs = -env.mu * (V[:-1] + V[1:]) + env.gamma + rel_tol * np.maximum(Vm, 1.0)
    excess = np.where(sel, lhs - rhs, -np.inf)
    bad = excess > 0
    first = float(t[:-1][bad][0]) if np.any(bad) else None
    return LyapunovReport(int(np.count_nonzero(sel)), int(np.count_nonzero(bad)),
                          float(np.max(excess)) if excess.size else -np.inf, first)


@dataclass
class Thm31Instance:
    t0: float
    x0: np.ndarray
    hist: InputHistory
    N: int


@dataclass
class Thm31Report:
    s: float
    N: int
    hypothesis_met: bool
    error: float
    bound: float
    max_iterate: float
    iterate_bound: float
    truth_estimate: float

    @property
    def ok(self) -> bool:
        return self.error <= self.bound and self.max_iterate <= self.iterate_bound

    @property
    def margin(self) -> float:
        return float(self.bound - self.error)


def check_bound_thm31(env: EnvelopeSet, inst: Thm31Instance, truth_tol: float = 1e-10) -> Thm31Report:
    """Compare the Euler prediction with an RK reference against the global error bound."""
    ref, model = env.ref, env.model
    x0 = np.asarray(inst.x0, dtype=float)
    s = float(np.linalg.norm(x0)) + inst.hist.sup_deviation(inst.t0 - ref.tau, inst.t0, ref)
    its, _ = euler_chain(model, ref, inst.t0, x0, inst.N, inst.hist)
    truth, est = prediction_truth(model, ref, inst.t0, x0, inst.hist, tol=truth_tol)
    err = float(np.linalg.norm(its[-1] - truth))
    bound = float(env.euler_bound(s, inst.N))
    hyp = bool(inst.N >= env.euler_min_steps(s))
    return Thm31Report(s, inst.N, hyp, err, bound, float(np.max(np.linalg.norm(its, axis=1))),
                       float(env.Q_tau(s)), est)


def plant_step_check(cfg: SimConfig) -> float:
    """Endpoint change when the plant step is halved (integration convergence)."""
    a = run_closed_loop(cfg)
    b = run_closed_loop(SimConfig(**{**cfg.__dict__, "h_plant": cfg.h_plant / 2}))
    return float(np.hypot(a.q[-1] - b.q[-1], a.qdot[-1] - b.qdot[-1]))


__all__ = [
    "SamplingSchedule", "make_schedule", "initial_history", "Trajectory", "SimConfig",
    "run_closed_loop", "tracking_metric", "fit_decay_rate", "check_lyapunov_decay",
    "LyapunovReport", "Thm31Instance", "Thm31Report", "check_bound_thm31",
    "plant_step_check", "Diverged", "rk_reference",
]
