"""Knee-joint NMES plant, reference system and tracking-error coordinates.

Everything here is vectorised over a leading batch axis: scalars, or arrays
whose last axis has length 2 for planar quantities (``zeta``, ``x``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

HALF_PI = 0.5 * np.pi

MomentGain = Union[float, Callable[[np.ndarray, np.ndarray], np.ndarray]]


class ConstraintViolation(ValueError):
    """Raised when a joint angle leaves the open interval (-pi/2, pi/2)."""


def _check_angle(q) -> None:
    if np.any(np.abs(q) >= HALF_PI) or not np.all(np.isfinite(q)):
        raise ConstraintViolation(
            f"joint angle outside (-pi/2, pi/2): max |q| = {np.max(np.abs(q))!r}"
        )


@dataclass(frozen=True)
class PlantModel:
    """Shank-foot model ``J qdd + Me + Mg + Mv = zeta(q) eta(q, qd) v``.

    ``moment_gain`` is either a positive constant or a vectorised callable
    ``(q, qdot) -> zeta(q) * eta(q, qdot)``; the input gain is
    ``G = moment_gain / J``.
    """

    J: float = 1.0
    m: float = 1.0
    l: float = 0.3
    g_const: float = 9.81
    k1: float = 1.0
    k2: float = 1.0
    k3: float = 1.0
    B1: float = 0.5
    B2: float = 1.0
    B3: float = 0.5
    moment_gain: MomentGain = 2.0
    n_check: int = 2001
    _G_bounds: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for name in ("J", "m", "l", "g_const", "k1", "k2", "k3", "B1", "B2", "B3"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise ValueError(f"plant parameter {name} must be > 0, got {val!r}")
        if not callable(self.moment_gain) and not self.moment_gain > 0:
            raise ValueError("moment_gain must be positive")
        # x H(x) >= 0 on a symmetric log grid
        xs = np.geomspace(1e-6, 1e6, self.n_check)
        xs = np.concatenate([-xs, [0.0], xs])
        if np.any(xs * self.H(xs) < 0):
            raise ValueError("damping function violates x*H(x) >= 0")
        object.__setattr__(self, "_G_bounds", self._estimate_G_bounds())

    # -- physical functions ----------------------------------------------
    def F(self, q):
        q = np.asarray(q, dtype=float)
        k2 = self.k2
        return (
            self.m * self.g_const * self.l / self.J * (1.0 - np.cos(q))
            + self.k1 * np.exp(-k2 * q) / (self.J * k2**2) * np.expm1(k2 * q)
            - self.k1 * np.exp(-k2 * q) * q / (self.J * k2)
            + self.k3 / self.J * np.log(1.0 / np.cos(q))
        )

    def dF(self, q):
        q = np.asarray(q, dtype=float)
        return (
            self.m * self.g_const * self.l / self.J * np.sin(q)
            + self.k1 / self.J * q * np.exp(-self.k2 * q)
            + self.k3 / self.J * np.tan(q)
        )

    def d2F(self, q):
        q = np.asarray(q, dtype=float)
        return (
            self.m * self.g_const * self.l / self.J * np.cos(q)
            + self.k1 / self.J * (1.0 - self.k2 * q) * np.exp(-self.k2 * q)
            + self.k3 / self.J / np.cos(q) ** 2
        )

    def H(self, qdot):
        qdot = np.asarray(qdot, dtype=float)
        return self.B1 / self.J * np.tanh(self.B2 * qdot) + self.B3 / self.J * qdot

    def G(self, q, qdot):
        q = np.asarray(q, dtype=float)
        if callable(self.moment_gain):
            qdot = np.asarray(qdot, dtype=float)
            return np.asarray(self.moment_gain(q, qdot), dtype=float) / self.J
        return np.full(np.broadcast(q, np.asarray(qdot)).shape, self.moment_gain / self.J)

    def _estimate_G_bounds(self):
        if not callable(self.moment_gain):
            g = self.moment_gain / self.J
            return g, g
        qs = np.linspace(-HALF_PI, HALF_PI, 403)[1:-1]
        w = np.geomspace(1e-4, 1e4, 200)
        qd = np.concatenate([-w, [0.0], w])
        Q, QD = np.meshgrid(qs, qd)
        vals = self.G(Q, QD)
        if np.any(~np.isfinite(vals)) or np.any(vals <= 0):
            raise ValueError("moment_gain must be positive and finite")
        return float(vals.max()) * 1.05, float(vals.min()) / 1.05

    @property
    def G_sup(self) -> float:
        """Upper bound of G over the constraint set (exact for constant gains)."""
        return self._G_bounds[0]

    @property
    def G_inf(self) -> float:
        return self._G_bounds[1]


@dataclass(frozen=True)
class PlantState:
    q: float
    qdot: float

    def __post_init__(self):
        _check_angle(self.q)


@dataclass(frozen=True)
class ErrorState:
    x1: float
    x2: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.x2])


def eval_plant_terms(model: PlantModel, q, qdot):
    """Return ``(F, dF/dq, H, G)`` at ``(q, qdot)``."""
    _check_angle(q)
    return model.F(q), model.dF(q), model.H(qdot), model.G(q, qdot)


def plant_rhs(model: PlantModel, s: PlantState, v_delayed: float):
    """Right-hand side ``(qdot, qddot)`` of the delayed plant."""
    _check_angle(s.q)
    qddot = -model.dF(s.q) - model.H(s.qdot) + model.G(s.q, s.qdot) * v_delayed
    return float(s.qdot), float(qddot)


def eval_g(model: PlantModel, zeta):
    """Plant drift ``g1`` and input gain ``g2`` in the ``tan`` coordinates."""
    zeta = np.asarray(zeta, dtype=float)
    z1, z2 = zeta[..., 0], zeta[..., 1]
    s = 1.0 + z1 * z1
    q = np.arctan(z1)
    w = z2 / s
    g1 = -s * model.dF(q) + 2.0 * z1 * z2 * w - s * model.H(w)
    g2 = s * model.G(q, w)
    return g1, g2


# -- reference -----------------------------------------------------------

@dataclass(frozen=True)
class ReferenceSpec:
    """Analytic reference ``q_d(t) = offset + sum_k a_k sin(w_k t + p_k)``.

    ``kind`` is ``"constant"``, ``"sinusoid"`` or ``"sum"``.
    """

    kind: str = "sinusoid"
    amplitudes: Sequence[float] = (0.5,)
    frequencies: Sequence[float] = (1.0,)
    phases: Sequence[float] = (0.0,)
    offset: float = 0.0

    @classmethod
    def constant(cls, value: float = 0.0) -> "ReferenceSpec":
        return cls(kind="constant", amplitudes=(), frequencies=(), phases=(), offset=value)

    @classmethod
    def sinusoid(cls, amplitude, frequency=1.0, offset=0.0, phase=0.0) -> "ReferenceSpec":
        return cls("sinusoid", (amplitude,), (frequency,), (phase,), offset)


@dataclass(frozen=True)
class ReferenceTrajectory:
    model: PlantModel
    tau: float
    a: np.ndarray
    w: np.ndarray
    p: np.ndarray
    offset: float
    lambdas: tuple  # (L1, L2, L3, L4, L5)
    sup_qdot_d: float
    period: float | None

    def q_d(self, t):
        t = np.asarray(t, dtype=float)[..., None]
        return self.offset + np.sum(self.a * np.sin(self.w * t + self.p), axis=-1)

    def qdot_d(self, t):
        t = np.asarray(t, dtype=float)[..., None]
        return np.sum(self.a * self.w * np.cos(self.w * t + self.p), axis=-1)

    def qddot_d(self, t):
        t = np.asarray(t, dtype=float)[..., None]
        return -np.sum(self.a * self.w**2 * np.sin(self.w * t + self.p), axis=-1)

    def zeta_d(self, t):
        """Reference in ``tan`` coordinates, shape ``(..., 2)``."""
        q, qd = self.q_d(t), self.qdot_d(t)
        c2 = np.cos(q) ** 2
        return np.stack([np.tan(q), qd / c2], axis=-1)

    def zeta_d_dot(self, t):
        q, qd, qdd = self.q_d(t), self.qdot_d(t), self.qddot_d(t)
        c2 = np.cos(q) ** 2
        return np.stack([qd / c2, qdd / c2 + 2.0 * qd**2 * np.tan(q) / c2], axis=-1)

    def v_d(self, t):
        """Feedforward input, defined for ``t >= -tau``."""
        s = np.asarray(t, dtype=float) + self.tau
        q, qd, qdd = self.q_d(s), self.qdot_d(s), self.qddot_d(s)
        m = self.model
        return (qdd + m.dF(q) + m.H(qd)) / m.G(q, qd)

    @property
    def zeta_sup(self) -> float:
        return self.lambdas[0]


def reference_build(spec: ReferenceSpec, model: PlantModel, tau: float,
                    horizon: float = 100.0, n_grid: int = 20001,
                    safety: float = 1.05) -> ReferenceTrajectory:
    """Validate a reference and compute its bound constants.

    The bounds are dense-grid suprema times ``safety``: over one period for a
    single sinusoid, otherwise over ``[-tau, horizon]``.
    """
    if spec.kind not in ("constant", "sinusoid", "sum"):
        raise ValueError(f"unknown reference kind {spec.kind!r}")
    a = np.asarray(spec.amplitudes, dtype=float)
    w = np.asarray(spec.frequencies, dtype=float)
    p = np.asarray(spec.phases, dtype=float) if len(spec.phases) else np.zeros_like(a)
    if spec.kind == "constant":
        a = w = p = np.zeros(0)
    if not (a.shape == w.shape == p.shape):
        raise ValueError("amplitudes, frequencies and phases must have equal length")
    if spec.kind == "sinusoid" and a.size != 1:
        raise ValueError("a sinusoid reference has exactly one component")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(w)) and np.isfinite(spec.offset)):
        raise ValueError("reference coefficients must be finite")
    if np.sum(np.abs(a)) + abs(spec.offset) >= HALF_PI:
        raise ValueError("reference violates sup|q_d| < pi/2")
    if tau <= 0:
        raise ValueError("tau must be positive")

    period = None
    nz = w[(a != 0) & (w != 0)]
    if nz.size == 1:
        period = 2.0 * np.pi / abs(nz[0])
    proto = ReferenceTrajectory(model, tau, a, w, p, float(spec.offset),
                                (0.0,) * 5, 0.0, period)
    if nz.size == 0:
        ts = np.array([-tau, 0.0])
    elif period is not None:
        ts = np.linspace(-tau, -tau + period, n_grid)
    else:
        ts = np.linspace(-tau, horizon, max(n_grid, int(40 * horizon * np.max(np.abs(nz)))))
    t_pos = ts[ts >= 0] if period is None else ts - ts[0]
    if t_pos.size == 0:
        t_pos = np.array([0.0])

    dt = 1e-5
    zeta = proto.zeta_d(t_pos)
    zdot = proto.zeta_d_dot(t_pos)
    zddot = (proto.zeta_d_dot(t_pos + dt) - proto.zeta_d_dot(t_pos - dt)) / (2 * dt)
    vd = proto.v_d(ts)
    vdot = (proto.v_d(ts + dt) - proto.v_d(ts - dt)) / (2 * dt)

    def sup(arr):
        arr = np.abs(arr) if arr.ndim == 1 else np.linalg.norm(arr, axis=-1)
        return float(np.max(arr)) * safety

    lambdas = (sup(zeta), sup(vd), sup(zdot), sup(vdot), sup(zddot))
    # exact zeros stay zero (constant references)
    lambdas = tuple(0.0 if v < 1e-14 else v for v in lambdas)
    return ReferenceTrajectory(model, tau, a, w, p, float(spec.offset), lambdas,
                               sup(proto.qdot_d(t_pos)), period)


# -- error coordinates ---------------------------------------------------

def to_error_coords(s: PlantState, ref: ReferenceTrajectory, t: float) -> ErrorState:
    _check_angle(s.q)
    x = plant_to_error(s.q, s.qdot, ref, t)
    return ErrorState(float(x[0]), float(x[1]))


def plant_to_error(q, qdot, ref: ReferenceTrajectory, t):
    """Array form of :func:`to_error_coords`; returns shape ``(..., 2)``."""
    _check_angle(q)
    q = np.asarray(q, dtype=float)
    zeta = np.stack([np.tan(q), np.asarray(qdot) / np.cos(q) ** 2], axis=-1)
    return zeta - ref.zeta_d(t)


def error_to_plant(x, ref: ReferenceTrajectory, t):
    """Inverse map; ``|q| < pi/2`` by construction."""
    x = np.asarray(x, dtype=float)
    zeta = x + ref.zeta_d(t)
    q = np.arctan(zeta[..., 0])
    qdot = zeta[..., 1] / (1.0 + zeta[..., 0] ** 2)
    return q, qdot


def from_error_coords(x: ErrorState, ref: ReferenceTrajectory, t: float) -> PlantState:
    q, qdot = error_to_plant([x.x1, x.x2], ref, t)
    return PlantState(float(q), float(qdot))


def f_tilde(model: PlantModel, ref: ReferenceTrajectory, t, x):
    t = np.asarray(t, dtype=float)
    zd = ref.zeta_d(t)
    g1x, g2x = eval_g(model, zd + x)
    g1d, g2d = eval_g(model, zd)
    return g1x - g1d + (g2x - g2d) * ref.v_d(t - ref.tau)


def g_tilde(model: PlantModel, ref: ReferenceTrajectory, t, x):
    return eval_g(model, ref.zeta_d(t) + np.asarray(x, dtype=float))[1]


def error_rhs(model: PlantModel, ref: ReferenceTrajectory, t, x, u):
    """Delay-free error dynamics ``f(t, x, u) = (x2, f~(t,x) + g~(t,x) u)``."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    zd = ref.zeta_d(t)
    g1x, g2x = eval_g(model, zd + x)
    g1d, g2d = eval_g(model, zd)
    vd = ref.v_d(t - ref.tau)
    second = g1x - g1d + (g2x - g2d) * vd + g2x * u
    return np.stack(np.broadcast_arrays(x[..., 1], second), axis=-1)
