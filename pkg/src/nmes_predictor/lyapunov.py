"""Quadratic Lyapunov function of the nominal loop, the nominal feedback, and
the energy-like function used for forward completeness."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import PlantModel, ReferenceTrajectory, eval_g, f_tilde


def lyapunov_K(mu: float) -> float:
    r = mu * np.sqrt(mu**2 + 4.0)
    return (mu**2 + 2.0 + r) / (mu**2 + 2.0 - r)


def _v_coeff(mu: float) -> float:
    return 2.0 / (mu**2 + 2.0 - mu * np.sqrt(mu**2 + 4.0))


def lyapunov_V(mu: float, x):
    """``V(x) = c_mu (x1^2 + (x2 + mu x1)^2)`` with ``|x|^2 <= V <= K |x|^2``."""
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    return _v_coeff(mu) * (x1**2 + (x2 + mu * x1) ** 2)


def grad_V(mu: float, x):
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    c = _v_coeff(mu)
    e = x2 + mu * x1
    return np.stack([c * (2 * x1 + 2 * mu * e), c * 2 * e], axis=-1)


def nominal_field(mu: float, x):
    """Closed-loop field ``(x2, -(1+mu^2) x1 - 2 mu x2)`` of the nominal loop."""
    x = np.asarray(x, dtype=float)
    return np.stack([x[..., 1], -(1 + mu**2) * x[..., 0] - 2 * mu * x[..., 1]], axis=-1)


def nominal_k(model: PlantModel, ref: ReferenceTrajectory, mu: float, t, x):
    """Nominal feedback ``k(t, x)`` placing the error poles at ``-mu +/- i``."""
    x = np.asarray(x, dtype=float)
    num = (1 + mu**2) * x[..., 0] + 2 * mu * x[..., 1] + f_tilde(model, ref, t, x)
    _, g2 = eval_g(model, ref.zeta_d(t) + x)
    return -num / g2


@dataclass(frozen=True)
class LyapunovW:
    """``W~(x) = 1 + (x2/(1+x1^2))^2 / 2 + F(atan x1)`` and ``W(t,x) = W~(zeta_d(t)+x)``."""

    model: PlantModel
    ref: ReferenceTrajectory

    def W_tilde(self, x):
        x = np.asarray(x, dtype=float)
        x1, x2 = x[..., 0], x[..., 1]
        w = x2 / (1.0 + x1**2)
        return 1.0 + 0.5 * w**2 + self.model.F(np.arctan(x1))

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        x1, x2 = x[..., 0], x[..., 1]
        s = 1.0 + x1**2
        q = np.arctan(x1)
        d1 = -2.0 * x1 * x2**2 / s**3 + self.model.dF(q) / s
        d2 = x2 / s**2
        return np.stack([d1, d2], axis=-1)

    def hess(self, x):
        x = np.asarray(x, dtype=float)
        x1, x2 = x[..., 0], x[..., 1]
        s = 1.0 + x1**2
        q = np.arctan(x1)
        h11 = (-2.0 * x2**2 / s**3 + 12.0 * x1**2 * x2**2 / s**4
               + self.model.d2F(q) / s**2 - 2.0 * x1 * self.model.dF(q) / s**2)
        h12 = -4.0 * x1 * x2 / s**3
        h22 = 1.0 / s**2
        return np.stack([np.stack([h11, h12], -1), np.stack([h12, np.broadcast_to(h22, h11.shape)], -1)], -2)

    def W(self, t, x):
        return self.W_tilde(self.ref.zeta_d(t) + np.asarray(x, dtype=float))
