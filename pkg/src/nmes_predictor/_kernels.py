"""Compiled scalar loops for the two sequential hot paths: the Euler
prediction chain and the fixed-step plant integrator.

Only constant moment gains are supported here; callers fall back to the
numpy implementations otherwise.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


def plant_params(model) -> np.ndarray | None:
    """Pack a plant into the parameter vector the kernels expect."""
    if callable(model.moment_gain):
        return None
    return np.array([model.J, model.m * model.g_const * model.l, model.k1, model.k2,
                     model.k3, model.B1, model.B2, model.B3, model.moment_gain / model.J])


@njit(cache=True)
def _dF(q, p):
    J = p[0]
    return p[1] / J * math.sin(q) + p[2] / J * q * math.exp(-p[3] * q) + p[4] / J * math.tan(q)


@njit(cache=True)
def _H(w, p):
    return p[5] / p[0] * math.tanh(p[6] * w) + p[7] / p[0] * w


@njit(cache=True)
def _g12(z1, z2, p):
    s = 1.0 + z1 * z1
    q = math.atan(z1)
    w = z2 / s
    g1 = -s * _dF(q, p) + 2.0 * z1 * z2 * w - s * _H(w, p)
    return g1, s * p[8]


@njit(cache=True)
def euler_chain(x1, x2, h, zd1, zd2, vv, wts, ptr, dz2, p, out):
    """Run the prediction recursion; returns False on a non-finite iterate."""
    n = dz2.shape[0]
    out[0, 0] = x1
    out[0, 1] = x2
    for i in range(n):
        acc = 0.0
        for k in range(ptr[i], ptr[i + 1]):
            g1, g2 = _g12(zd1[k] + x1, zd2[k] + x2, p)
            acc += wts[k] * (g1 + g2 * vv[k])
        x1, x2 = x1 + h * x2, x2 + acc + dz2[i]
        if not (math.isfinite(x1) and math.isfinite(x2)):
            return False
        out[i + 1, 0] = x1
        out[i + 1, 1] = x2
    return True


@njit(cache=True)
def _plant_f(q, qd, v, p):
    return qd, -_dF(q, p) - _H(qd, p) + p[8] * v


@njit(cache=True)
def plant_rk4(q, qd, t, vstage, p, out_q, out_qd, limit):
    """Classical RK4 over the steps ``t[j] -> t[j+1]``.

    ``vstage[j]`` holds the delayed input at the left, middle and right of
    step ``j``.  Returns the index of the first step that leaves
    ``|q| < limit`` (or produces a non-finite state), else ``-1``.
    """
    out_q[0] = q
    out_qd[0] = qd
    for j in range(t.shape[0] - 1):
        dt = t[j + 1] - t[j]
        v0, vm, v1 = vstage[j, 0], vstage[j, 1], vstage[j, 2]
        a1, b1 = _plant_f(q, qd, v0, p)
        a2, b2 = _plant_f(q + 0.5 * dt * a1, qd + 0.5 * dt * b1, vm, p)
        a3, b3 = _plant_f(q + 0.5 * dt * a2, qd + 0.5 * dt * b2, vm, p)
        a4, b4 = _plant_f(q + dt * a3, qd + dt * b3, v1, p)
        q = q + dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        qd = qd + dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        out_q[j + 1] = q
        out_qd[j + 1] = qd
        if not (abs(q) < limit and math.isfinite(qd)):
            return j + 1
    return -1


def reference_params(ref) -> np.ndarray:
    """Pack a sum-of-sinusoids reference as rows ``(a, w, p)`` plus the offset."""
    rows = np.stack([ref.a, ref.w, ref.p], axis=1) if ref.a.size else np.zeros((0, 3))
    return np.ascontiguousarray(rows), float(ref.offset)


@njit(cache=True)
def _ref_state(t, rows, off):
    q, qd, qdd = off, 0.0, 0.0
    for k in range(rows.shape[0]):
        a, w, ph = rows[k, 0], rows[k, 1], rows[k, 2]
        sn, cs = math.sin(w * t + ph), math.cos(w * t + ph)
        q += a * sn
        qd += a * w * cs
        qdd -= a * w * w * sn
    return q, qd, qdd


@njit(cache=True)
def _zeta(q, qd):
    c = math.cos(q)
    return math.tan(q), qd / (c * c)


@njit(cache=True)
def zeta_d_batch(t, rows, off, out):
    for i in range(t.shape[0]):
        q, qd, _ = _ref_state(t[i], rows, off)
        z1, z2 = _zeta(q, qd)
        out[i, 0] = z1
        out[i, 1] = z2


@njit(cache=True)
def _v_d(t, tau, rows, off, p):
    q, qd, qdd = _ref_state(t + tau, rows, off)
    return (qdd + _dF(q, p) + _H(qd, p)) / p[8]


@njit(cache=True)
def control_batch(t, mu, tau, t_sample, a0, b0, rows, off, p, out):
    """Closed-form stimulation input at times ``t`` for one sampling interval."""
    for i in range(t.shape[0]):
        e = t[i] - t_sample
        damp = math.exp(-mu * e)
        sn, cs = math.sin(e), math.cos(e)
        x1 = damp * ((b0 + mu * a0) * sn + a0 * cs)
        x2 = damp * (-(mu * b0 + (1.0 + mu * mu) * a0) * sn + b0 * cs)
        q, qd, qdd = _ref_state(t[i] + tau, rows, off)
        z1, z2 = _zeta(q, qd)
        # g1 at the reference is -(1+z1^2)(dF + H) + 2 z1 z2^2/(1+z1^2), reuse dF and H
        s = 1.0 + z1 * z1
        dfh = _dF(q, p) + _H(qd, p)
        g1d = -s * dfh + 2.0 * z1 * z2 * z2 / s
        g2d = s * p[8]
        g1x, g2x = _g12(z1 + x1, z2 + x2, p)
        vd = (qdd + dfh) / p[8]
        out[i] = (g2d * vd - g1x + g1d - (1.0 + mu * mu) * x1 - 2.0 * mu * x2) / g2x
