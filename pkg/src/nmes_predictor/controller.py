"""Hybrid predictor feedback: a prediction at each sample time, closed-form
propagation of the predicted error between samples, and the resulting
stimulation input.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .dynamics import PlantModel, PlantState, ReferenceTrajectory, eval_g, plant_to_error
from .envelopes import EnvelopeSet
from .lyapunov import grad_V, lyapunov_K, lyapunov_V, nominal_field, nominal_k
from .predictor import FunctionSegment, InputHistory, predict, prediction_input_size

__all__ = [
    "ControllerState", "intersample_xi", "control_law", "control_value", "control_segment",
    "on_sample", "lyapunov_V", "grad_V", "lyapunov_K", "nominal_k", "nominal_field",
]


class ControllerNotReady(RuntimeError):
    """Control requested before the first sample or outside the current interval."""


@dataclass(frozen=True)
class ControllerState:
    mu: float
    t_sample: float | None = None
    xi_sample: tuple = (0.0, 0.0)
    N_last: int = 0
    certified: bool = False
    s_input: float = float("nan")
    t_next: float = float("inf")


def intersample_xi(mu: float, xi0, t_sample: float, t):
    """Free response of ``xi' = (xi2, -(1+mu^2) xi1 - 2 mu xi2)`` from ``xi0`` at ``t_sample``."""
    xi0 = np.asarray(xi0, dtype=float)
    e = np.asarray(t, dtype=float) - t_sample
    a, b = xi0[..., 0], xi0[..., 1]
    damp = np.exp(-mu * e)
    s, c = np.sin(e), np.cos(e)
    x1 = damp * ((b + mu * a) * s + a * c)
    x2 = damp * (-(mu * b + (1 + mu**2) * a) * s + b * c)
    return np.stack([x1, x2], axis=-1)


def control_law(model: PlantModel, ref: ReferenceTrajectory, mu: float, t, xi):
    """Stimulation input at time ``t`` given the predicted error ``xi`` at ``t + tau``."""
    t = np.asarray(t, dtype=float)
    xi = np.asarray(xi, dtype=float)
    zd = ref.zeta_d(t + ref.tau)
    g1d, g2d = eval_g(model, zd)
    g1x, g2x = eval_g(model, zd + xi)
    num = g2d * ref.v_d(t) - g1x + g1d - (1 + mu**2) * xi[..., 0] - 2 * mu * xi[..., 1]
    return num / g2x


def _xi_at(ctrl: ControllerState, t):
    if ctrl.t_sample is None:
        raise ControllerNotReady("controller has not been sampled yet")
    t = np.asarray(t, dtype=float)
    if np.any(t < ctrl.t_sample - 1e-12) or np.any(t > ctrl.t_next + 1e-12):
        raise ControllerNotReady(
            f"evaluation outside the sampling interval [{ctrl.t_sample}, {ctrl.t_next}]")
    return intersample_xi(ctrl.mu, np.asarray(ctrl.xi_sample), ctrl.t_sample, t)


def control_value(ctrl: ControllerState, model: PlantModel, ref: ReferenceTrajectory, t):
    """Input ``v(t)`` on the current sampling interval."""
    return control_law(model, ref, ctrl.mu, t, _xi_at(ctrl, t))


def control_segment(ctrl: ControllerState, model: PlantModel, ref: ReferenceTrajectory,
                    t_end: float) -> FunctionSegment:
    """Closed-form input segment on ``[t_sample, t_end)``."""
    ctrl = replace(ctrl, t_next=t_end)
    params = _kernels.plant_params(model)
    if params is None:
        return FunctionSegment(ctrl.t_sample, t_end,
                               lambda t: control_value(ctrl, model, ref, t), "closed-form")
    rows, off = _kernels.reference_params(ref)
    a0, b0 = ctrl.xi_sample

    def fast(t):
        t = np.asarray(t, dtype=float)
        _xi_at(ctrl, np.array([t.min(), t.max()]) if t.size else ctrl.t_sample)
        flat = np.ascontiguousarray(t.ravel())
        out = np.empty(flat.size)
        _kernels.control_batch(flat, ctrl.mu, ref.tau, ctrl.t_sample, a0, b0, rows, off,
                               params, out)
        return out.reshape(t.shape)

    return FunctionSegment(ctrl.t_sample, t_end, fast, "closed-form")


def on_sample(ctrl: ControllerState, env: EnvelopeSet, t_i: float, measured: PlantState,
              hist: InputHistory, ref: ReferenceTrajectory, *, mode: str = "practical",
              cap: int = 10_000_000, quad_tol: float = 1e-10, predict_ahead: bool = True,
              xi_fault=None) -> ControllerState:
    """Update the controller at a sample time.

    With ``predict_ahead=False`` the measured error is used directly (no
    delay compensation).  ``xi_fault`` is added to the stored prediction and
    exists only to exercise the runtime checks.
    """
    z0 = plant_to_error(measured.q, measured.qdot, ref, t_i)
    if predict_ahead:
        res = predict(env, t_i, z0, hist, mode=mode, cap=cap, quad_tol=quad_tol)
        xi, n, cert, s_in = res.x_pred, res.N_used, res.certified, res.s_input
    else:
        xi, n, cert = z0, 0, False
        s_in = prediction_input_size(z0, t_i, hist, ref)
    if xi_fault is not None:
        xi = xi + np.asarray(xi_fault, dtype=float)
    return ControllerState(ctrl.mu, float(t_i), (float(xi[0]), float(xi[1])), int(n),
                           bool(cert), float(s_in))
