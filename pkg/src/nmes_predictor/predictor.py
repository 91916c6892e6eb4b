"""Euler-with-inputs prediction of the tracking error one delay ahead.

The input enters the step integrals exactly (through the stored input
history) while the state is frozen over each step, so the scheme is first
order in the step size.  Step integrals use composite 4-point
Gauss-Legendre split at every discontinuity of the input.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from . import _kernels
from .dynamics import PlantModel, ReferenceTrajectory, eval_g
from .envelopes import EnvelopeSet, step_count

_GL_X, _GL_W = np.polynomial.legendre.leggauss(4)


class HistoryCoverageError(ValueError):
    """The input history does not cover the requested time window."""


class PredictionDiverged(FloatingPointError):
    """An Euler iterate became non-finite."""


# -- input history -------------------------------------------------------

@dataclass(frozen=True)
class FunctionSegment:
    """Input given by a smooth vectorised evaluator on ``[start, end)``.

    Controller segments (closed-form intersample law) and analytic initial
    inputs both use this form.
    """

    start: float
    end: float
    fn: Callable[[np.ndarray], np.ndarray]
    kind: str = "closed-form"

    def evaluate(self, t):
        return np.asarray(self.fn(np.asarray(t, dtype=float)), dtype=float) * np.ones_like(t, dtype=float)

    def breaks(self) -> np.ndarray:
        return np.zeros(0)

    def pieces(self, a: float, b: float):
        lo, hi = max(a, self.start), min(b, self.end)
        if hi > lo:
            yield lo, hi, self.evaluate


@dataclass(frozen=True)
class SampledSegment:
    """Piecewise-constant left-continuous input.

    ``values[k]`` holds on ``(grid[k], grid[k+1]]`` (and at ``grid[0]``).
    """

    grid: np.ndarray
    values: np.ndarray
    kind: str = "sampled"

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if g.ndim != 1 or v.shape != (g.size - 1,) or np.any(np.diff(g) <= 0):
            raise ValueError("sampled segment needs an increasing grid and len(grid)-1 values")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "values", v)

    @property
    def start(self) -> float:
        return float(self.grid[0])

    @property
    def end(self) -> float:
        return float(self.grid[-1])

    def evaluate(self, t):
        t = np.asarray(t, dtype=float)
        k = np.clip(np.searchsorted(self.grid, t, side="left") - 1, 0, self.values.size - 1)
        return self.values[k]

    def breaks(self) -> np.ndarray:
        return self.grid[1:-1]

    def pieces(self, a: float, b: float):
        g = self.grid
        for k in range(self.values.size):
            lo, hi = max(a, g[k]), min(b, g[k + 1])
            if hi > lo:
                val = self.values[k]
                yield lo, hi, (lambda t, val=val: np.full(np.shape(t), val))


class InputHistory:
    """Input signal as contiguous segments ``[start, end)``.

    At a segment boundary the later segment's value is used (right
    continuity), matching a control law that switches at sample times.
    """

    def __init__(self, segments: Sequence = ()):
        self._segs: list = []
        for s in segments:
            self.append(s)

    @property
    def segments(self) -> list:
        return list(self._segs)

    @property
    def start(self) -> float:
        return self._segs[0].start

    @property
    def end(self) -> float:
        return self._segs[-1].end

    def append(self, seg) -> None:
        if not seg.end > seg.start:
            raise ValueError("empty segment")
        if self._segs and abs(seg.start - self._segs[-1].end) > 1e-12 * max(1.0, abs(seg.start)):
            raise ValueError(
                f"segment starts at {seg.start!r}, history ends at {self._segs[-1].end!r}")
        self._segs.append(seg)

    def drop_before(self, t: float) -> None:
        """Forget segments that end at or before ``t``."""
        while len(self._segs) > 1 and self._segs[0].end <= t:
            self._segs.pop(0)

    def covers(self, a: float, b: float) -> bool:
        tol = 1e-12 * max(1.0, abs(a), abs(b))
        return bool(self._segs) and self.start <= a + tol and self.end >= b - tol

    def _require(self, a, b):
        if not self.covers(a, b):
            lo = self.start if self._segs else None
            hi = self.end if self._segs else None
            raise HistoryCoverageError(f"history [{lo}, {hi}) does not cover [{a}, {b})")

    def segment_at(self, t: float):
        starts = np.array([s.start for s in self._segs])
        i = int(np.searchsorted(starts, t, side="right")) - 1
        return self._segs[max(i, 0)]

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if t.size == 0:
            return np.zeros(t.shape)
        tmin, tmax = float(np.min(t)), float(np.max(t))
        if not (self.start - 1e-12 <= tmin and tmax <= self.end + 1e-12):
            raise HistoryCoverageError(
                f"history [{self.start}, {self.end}) evaluated on [{tmin}, {tmax}]")
        starts = np.array([s.start for s in self._segs])
        idx = np.clip(np.searchsorted(starts, t, side="right") - 1, 0, len(self._segs) - 1)
        out = np.empty(t.shape)
        for i in np.unique(idx):
            mask = idx == i
            out[mask] = self._segs[i].evaluate(t[mask])
        return out

    def breakpoints(self, a: float, b: float) -> np.ndarray:
        """Points in ``(a, b)`` where the input may be discontinuous."""
        pts = [s.start for s in self._segs[1:]]
        for s in self._segs:
            pts.extend(s.breaks())
        pts = np.unique(np.asarray(pts, dtype=float))
        return pts[(pts > a) & (pts < b)]

    def sup_deviation(self, a: float, b: float, ref: ReferenceTrajectory | None = None,
                      n_dense: int = 33) -> float:
        """``sup |v(t) - v_d(t)|`` over ``[a, b)`` (``v_d = 0`` if ``ref`` is None).

        Each smooth piece is sampled densely and the best sample refined by
        bounded scalar optimisation.
        """
        self._require(a, b)
        best = 0.0
        for seg in self._segs:
            for lo, hi, fn in seg.pieces(a, b):
                if ref is None:
                    dev = (lambda t, fn=fn: np.abs(fn(t)))
                else:
                    dev = (lambda t, fn=fn: np.abs(fn(t) - ref.v_d(t)))
                ts = np.linspace(lo, hi, n_dense)
                vals = dev(ts)
                k = int(np.argmax(vals))
                best = max(best, float(vals[k]))
                lo_k, hi_k = ts[max(k - 1, 0)], ts[min(k + 1, n_dense - 1)]
                if hi_k > lo_k:
                    res = minimize_scalar(lambda s: -float(dev(np.array([s]))[0]),
                                          bounds=(lo_k, hi_k), method="bounded",
                                          options={"xatol": 1e-12 * max(1.0, abs(hi_k))})
                    best = max(best, -float(res.fun))
        return best


# -- quadrature layout ---------------------------------------------------

def _layout(t0: float, tau: float, N: int, breaks: np.ndarray, m: int):
    """Gauss nodes, weights and per-step offsets for ``N`` steps over ``[t0, t0+tau]``."""
    h = tau / N
    step_edges = t0 + h * np.arange(N + 1)
    step_edges[-1] = t0 + tau
    breaks = np.asarray(breaks, dtype=float)
    if breaks.size:
        # discard breakpoints that coincide with step edges
        j = np.clip(np.searchsorted(step_edges, breaks), 1, N)
        near = np.minimum(np.abs(breaks - step_edges[j - 1]), np.abs(breaks - step_edges[j]))
        breaks = breaks[near > 1e-13 * max(1.0, abs(t0) + tau)]
    edges = np.union1d(step_edges, breaks)
    lo, hi = edges[:-1], edges[1:]
    step_of = np.clip(np.searchsorted(step_edges, lo, side="right") - 1, 0, N - 1)
    frac = np.arange(m + 1) / m
    sub_lo = (lo[:, None] + (hi - lo)[:, None] * frac[None, :-1]).ravel()
    sub_hi = (lo[:, None] + (hi - lo)[:, None] * frac[None, 1:]).ravel()
    step_of = np.repeat(step_of, m)
    half = 0.5 * (sub_hi - sub_lo)
    mid = 0.5 * (sub_hi + sub_lo)
    nodes = (mid[:, None] + half[:, None] * _GL_X[None, :]).ravel()
    wts = (half[:, None] * _GL_W[None, :]).ravel()
    step_of = np.repeat(step_of, _GL_X.size)
    ptr = np.concatenate([[0], np.cumsum(np.bincount(step_of, minlength=N))]).astype(np.int64)
    return h, step_edges, nodes, wts, step_of, ptr


def _step_integrals(model, zd, vv, wts, step_of, N, x_per_step):
    """``int g1(zeta_d + x_i) + g2(zeta_d + x_i) v`` for every step at once."""
    g1, g2 = eval_g(model, zd + x_per_step[step_of])
    return np.bincount(step_of, weights=wts * (g1 + g2 * vv), minlength=N)


def _integrand(model, zd, vv, wts, x):
    g1, g2 = eval_g(model, zd + x)
    return wts * (g1 + g2 * vv)


def _zeta_nodes(ref: ReferenceTrajectory, nodes: np.ndarray, fast: bool) -> np.ndarray:
    if not fast:
        return ref.zeta_d(nodes)
    rows, off = _kernels.reference_params(ref)
    out = np.empty((nodes.size, 2))
    _kernels.zeta_d_batch(np.ascontiguousarray(nodes), rows, off, out)
    return out


# -- scheme --------------------------------------------------------------

def omega_step(t0: float, h: float, x, hist: InputHistory, model: PlantModel,
               ref: ReferenceTrajectory, m: int = 4):
    """One step of the prediction operator from ``t0`` with length ``h``."""
    if not h > 0:
        raise ValueError("h must be positive")
    tau = ref.tau
    hist._require(t0 - tau, t0 + h - tau)
    x = np.asarray(x, dtype=float)
    _, _, nodes, wts, step_of, _ = _layout(t0, h, 1, hist.breakpoints(t0 - tau, t0 + h - tau) + tau, m)
    zd = ref.zeta_d(nodes)
    vv = hist(nodes - tau)
    integral = _step_integrals(model, zd, vv, wts, step_of, 1, x[None, :])[0]
    z2 = ref.zeta_d(np.array([t0, t0 + h]))[:, 1]
    return np.array([x[0] + h * x[1], x[1] + integral + z2[0] - z2[1]])


@dataclass
class PredictionResult:
    x_pred: np.ndarray
    N_used: int
    certified: bool
    s_input: float
    h: float = float("nan")
    quad_pieces: int = 1
    iterates: np.ndarray | None = field(default=None, repr=False)


def euler_chain(model: PlantModel, ref: ReferenceTrajectory, t0: float, x0, N: int,
                hist: InputHistory, quad_tol: float = 1e-10, max_pieces: int = 64,
                use_kernel: bool = True, check_steps: int = 256) -> tuple[np.ndarray, int]:
    """All iterates ``z_0..z_N`` of the prediction recursion and the quadrature level used.

    The number of Gauss panels per smooth sub-interval is doubled until the
    step integrals, re-evaluated at the computed iterates with twice as many
    panels, agree to ``quad_tol`` (relative, with an absolute floor of
    ``quad_tol * h``).  The comparison covers every step holding an input
    jump plus about ``check_steps`` evenly strided steps.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    tau = ref.tau
    x0 = np.asarray(x0, dtype=float)
    hist._require(t0 - tau, t0)
    bps = hist.breakpoints(t0 - tau, t0) + tau
    params = _kernels.plant_params(model) if use_kernel else None
    z2e = None
    m = 1
    while True:
        h, edges, nodes, wts, step_of, ptr = _layout(t0, tau, N, bps, m)
        if z2e is None:
            z2e = ref.zeta_d(edges)[:, 1]
            dz2 = z2e[:-1] - z2e[1:]
        fast = params is not None
        zd = _zeta_nodes(ref, nodes, fast)
        vv = hist(nodes - tau)
        out = np.empty((N + 1, 2))
        if fast:
            ok = _kernels.euler_chain(x0[0], x0[1], h, zd[:, 0].copy(), zd[:, 1].copy(), vv,
                                      wts, ptr, dz2, params, out)
        else:
            ok = _numpy_chain(model, x0, h, zd, vv, wts, ptr, dz2, out)
        if not ok:
            raise PredictionDiverged(f"non-finite Euler iterate (t0={t0}, N={N})")
        # re-integrate a subset of steps with twice the panels: a stride of
        # steps plus every step that contains an input jump
        chk = np.unique(np.concatenate([
            np.arange(0, N, max(1, N // check_steps)), [N - 1],
            np.clip(np.searchsorted(edges, bps, side="right") - 1, 0, N - 1)]).astype(int))
        sel = np.isin(step_of, chk)
        I_m = np.bincount(step_of[sel], weights=_integrand(model, zd[sel], vv[sel], wts[sel],
                                                           out[step_of[sel]]), minlength=N)[chk]
        _, _, n2, w2, s2, _ = _layout(t0, tau, N, bps, 2 * m)
        sel2 = np.isin(s2, chk)
        n2 = n2[sel2]
        I_2m = np.bincount(s2[sel2], weights=_integrand(model, _zeta_nodes(ref, n2, fast),
                                                        hist(n2 - tau), w2[sel2],
                                                        out[s2[sel2]]), minlength=N)[chk]
        err = np.abs(I_2m - I_m)
        if np.all(err <= quad_tol * (np.abs(I_2m) + h)) or m >= max_pieces:
            return out, m
        m *= 2


def _numpy_chain(model, x0, h, zd, vv, wts, ptr, dz2, out):
    x = x0.copy()
    out[0] = x
    for i in range(dz2.size):
        sl = slice(ptr[i], ptr[i + 1])
        g1, g2 = eval_g(model, zd[sl] + x)
        acc = float(np.sum(wts[sl] * (g1 + g2 * vv[sl])))
        x = np.array([x[0] + h * x[1], x[1] + acc + dz2[i]])
        if not np.all(np.isfinite(x)):
            return False
        out[i + 1] = x
    return True


def prediction_input_size(x0, t0: float, hist: InputHistory, ref: ReferenceTrajectory) -> float:
    """``|x0| + sup |v - v_d|`` over ``[t0 - tau, t0)``, the argument of the step-count rule."""
    return float(np.linalg.norm(x0)) + hist.sup_deviation(t0 - ref.tau, t0, ref)


def predict(env: EnvelopeSet, t0: float, x0, hist: InputHistory, mode: str = "practical",
            cap: int = 10_000_000, quad_tol: float = 1e-10,
            keep_iterates: bool = False) -> PredictionResult:
    """Predict the error state at ``t0 + tau`` from ``x0`` and the stored input."""
    x0 = np.asarray(x0, dtype=float)
    s_input = prediction_input_size(x0, t0, hist, env.ref)
    N, certified = step_count(env, s_input, mode=mode, cap=cap)
    its, m = euler_chain(env.model, env.ref, t0, x0, N, hist, quad_tol=quad_tol)
    return PredictionResult(its[-1].copy(), N, certified, s_input, env.tau / N, m,
                            its if keep_iterates else None)


# -- generic scheme and reference solutions ------------------------------

def euler_predict(rhs: Callable, t0: float, tau: float, N: int, x0, u: Callable,
                  breakpoints: Sequence[float] = (), quad_tol: float = 1e-10,
                  max_pieces: int = 64, return_iterates: bool = False):
    """Euler-with-inputs recursion ``x_{i+1} = x_i + int f(s, x_i, u(s)) ds``.

    ``rhs(t, x, u)`` must broadcast over a leading axis of times; ``u`` is
    vectorised in time.  Step integrals are refined until doubling the
    panel count changes none of them by more than ``quad_tol``.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    bps = np.asarray(breakpoints, dtype=float)
    lay = {m: _layout(t0, tau, N, bps, m) for m in (1, 2)}
    its = [x.copy()]
    for i in range(N):
        m = 1
        while True:
            for mm in (m, 2 * m):
                if mm not in lay:
                    lay[mm] = _layout(t0, tau, N, bps, mm)
            ints = []
            for mm in (m, 2 * m):
                _, _, nodes, wts, _, ptr = lay[mm]
                sl = slice(ptr[i], ptr[i + 1])
                tn = nodes[sl]
                f = np.asarray(rhs(tn, np.broadcast_to(x, (tn.size, x.size)), u(tn)), dtype=float)
                ints.append(np.sum(wts[sl, None] * f.reshape(tn.size, -1), axis=0))
            h = lay[1][0]
            if np.all(np.abs(ints[1] - ints[0]) <= quad_tol * (np.abs(ints[1]) + h)) or m >= max_pieces:
                break
            m *= 2
        x = x + ints[1]
        if not np.all(np.isfinite(x)):
            raise PredictionDiverged(f"non-finite Euler iterate at step {i}")
        its.append(x.copy())
    return (x, np.array(its)) if return_iterates else x


def rk4_fixed(rhs: Callable, t0: float, t1: float, x0, u: Callable, n: int,
              breakpoints: Sequence[float] = ()):
    """Classical RK4 with ``n`` steps per smooth piece of ``[t0, t1]``.

    Inside each piece the input is evaluated by ``u``; pieces are split at
    ``breakpoints`` so no step straddles a jump.
    """
    edges = np.concatenate([[t0], np.sort([b for b in breakpoints if t0 < b < t1]), [t1]])
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    for a, b in zip(edges[:-1], edges[1:]):
        dt = (b - a) / n
        for k in range(n):
            t = a + k * dt
            tm, te = t + 0.5 * dt, (a + (k + 1) * dt if k < n - 1 else b)
            ua, um, ue = u(np.array([t, tm, te]), piece=(a, b))
            k1 = np.asarray(rhs(t, x, ua), dtype=float)
            k2 = np.asarray(rhs(tm, x + 0.5 * dt * k1, um), dtype=float)
            k3 = np.asarray(rhs(tm, x + 0.5 * dt * k2, um), dtype=float)
            k4 = np.asarray(rhs(te, x + dt * k3, ue), dtype=float)
            x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def rk_reference(rhs: Callable, t0: float, t1: float, x0, u: Callable,
                 breakpoints: Sequence[float] = (), tol: float = 1e-10,
                 n_start: int = 16, n_max: int = 1 << 16):
    """RK4 with step halving until the Richardson estimate is below ``tol``.

    ``u(t, piece=(a, b))`` evaluates the input using the branch valid on the
    open piece ``(a, b)``.  Returns ``(x, error_estimate)``.
    """
    n = n_start
    prev = rk4_fixed(rhs, t0, t1, x0, u, n, breakpoints)
    while True:
        n *= 2
        cur = rk4_fixed(rhs, t0, t1, x0, u, n, breakpoints)
        est = float(np.max(np.abs(cur - prev))) / 15.0
        if est <= tol or n >= n_max:
            return cur + (cur - prev) / 15.0, est
        prev = cur


def history_input(hist: InputHistory, ref: ReferenceTrajectory, shift: float):
    """Input-error signal ``u(t) = v(t - shift) - v_d(t - shift)`` with piece-aware evaluation."""
    def u(t, piece=None):
        t = np.asarray(t, dtype=float)
        s = t - shift
        if piece is None:
            return hist(s) - ref.v_d(s)
        seg = hist.segment_at(0.5 * (piece[0] + piece[1]) - shift)
        if isinstance(seg, SampledSegment):
            mid = 0.5 * (piece[0] + piece[1]) - shift
            val = seg.evaluate(np.array([mid]))[0]
            return np.full(s.shape, val) - ref.v_d(s)
        return seg.evaluate(s) - ref.v_d(s)
    return u


def prediction_truth(model: PlantModel, ref: ReferenceTrajectory, t0: float, x0,
                     hist: InputHistory, tol: float = 1e-12, n_max: int = 1 << 15):
    """Exact error state at ``t0 + tau`` (RK4 + Richardson), driven by the stored input."""
    from .dynamics import error_rhs

    tau = ref.tau
    u = history_input(hist, ref, tau)
    rhs = (lambda t, x, uu: error_rhs(model, ref, t, x, uu))
    bps = hist.breakpoints(t0 - tau, t0) + tau
    return rk_reference(rhs, t0, t0 + tau, x0, u, bps, tol=tol, n_max=n_max)
