"""Bound constants and monotone envelope functions for the predictor design.

The gradient/Hessian suprema (``psi1..psi4``) and the sandwich bounds of the
energy function (``theta1``, ``theta2``, ``R2``) are built numerically on a
polar grid: ring-wise extrema, monotone post-processing, a safety factor, and
an analytic tail beyond the last ring.  Everything else follows in closed
form from those pieces.  :func:`validate_envelopes` checks the resulting
inequalities on random samples.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import PlantModel, ReferenceTrajectory, eval_g, error_rhs, g_tilde
from .lyapunov import LyapunovW, grad_V, lyapunov_K, lyapunov_V, nominal_k

# N(s) beyond this is treated as not computable in certified mode
MAX_CERTIFIED_STEPS = 2**53


class EnvelopeError(RuntimeError):
    """The design inequalities cannot be met with the supplied constants."""


class StepCountError(RuntimeError):
    """Certified step count is not representable or exceeds the budget."""


@dataclass(frozen=True)
class RadialEnvelope:
    """Monotone bound on a radius grid with an analytic tail.

    Upper envelopes are evaluated with the value of the next grid radius
    (so they dominate any non-decreasing sampled profile) and grow like
    ``s**exponent`` past the grid.  Lower envelopes use the value of the
    previous radius and grow like ``exponent * log(s)`` past the grid.
    """

    grid: np.ndarray
    values: np.ndarray
    exponent: float
    lower: bool = False

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        g, v = self.grid, self.values
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            if self.lower:
                shifted = self._shifted
                inside = np.interp(s, g, shifted)
                tail = shifted[-1] + self.exponent * np.log(np.maximum(s, g[-1]) / g[-1])
                return np.where(s <= g[-1], inside, tail)
            inside = np.interp(s, g[:-1], v[1:])
            tail = v[-1] * (np.maximum(s, g[-2]) / g[-2]) ** self.exponent
            return np.where(s <= g[-2], inside, tail)

    def __post_init__(self):
        if self.lower:
            v = np.asarray(self.values, dtype=float)
            sh = np.concatenate([v[:1], v[:-1]])
            # strict increase so the inverse is single-valued
            for i in range(1, sh.size):
                if sh[i] <= sh[i - 1]:
                    sh[i] = sh[i - 1] * (1 + 1e-12) + 1e-300
            object.__setattr__(self, "_shifted", sh)

    def inverse(self, y):
        """Largest ``s`` with ``self(s) <= y`` (lower envelopes only)."""
        if not self.lower:
            raise ValueError("inverse is defined for lower envelopes")
        y = np.asarray(y, dtype=float)
        sh, g = self._shifted, self.grid
        with np.errstate(over="ignore", invalid="ignore"):
            inside = np.interp(y, sh, g)
            tail = g[-1] * np.exp((np.maximum(y, sh[-1]) - sh[-1]) / self.exponent)
        return np.where(y <= sh[-1], inside, tail)


def _upper(grid, ring_max, safety):
    vals = np.maximum.accumulate(np.asarray(ring_max, dtype=float)) * safety
    k = np.searchsorted(grid, grid[-1] / 10.0)
    lo, hi = max(vals[k], 1e-300), max(vals[-1], 1e-300)
    p = max(np.log(hi / lo) / np.log(grid[-1] / grid[k]), 0.0) + 0.25
    return RadialEnvelope(grid, vals, float(p))


def _polar_points(radii, n_ang):
    ang = np.linspace(0.0, 2 * np.pi, n_ang, endpoint=False)
    return np.stack([radii[:, None] * np.cos(ang), radii[:, None] * np.sin(ang)], axis=-1)


def _fd_grad(fn, pts, rel=1e-6):
    h = rel * (1.0 + np.linalg.norm(pts, axis=-1))
    out = []
    for k in range(2):
        e = np.zeros(2)
        e[k] = 1.0
        d = h[..., None] * e
        out.append((fn(pts + d) - fn(pts - d)) / (2 * h))
    return np.stack(out, axis=-1)


@dataclass(frozen=True)
class EnvelopeSet:
    """All design constants and envelope functions for one scenario.

    Scalars follow the symbol names of the design tables (``k_tilde``,
    ``L_tilde``, ``R_tilde``, ...); functions are vectorised methods of
    ``s >= 0``.
    """

    model: PlantModel
    ref: ReferenceTrajectory
    mu: float
    eps: float
    r: float
    tau: float
    lambdas: tuple
    G_tilde: float
    c: float
    K: float
    delta: float
    gamma: float
    k_tilde: float
    L_tilde: float
    phi: float
    R_tilde: float
    R2: float
    omega: float
    psi1_r: RadialEnvelope
    psi2_r: RadialEnvelope
    psi3_r: RadialEnvelope
    psi4_r: RadialEnvelope
    theta1: RadialEnvelope
    theta2: RadialEnvelope
    g2min_grid: np.ndarray = field(repr=False)
    g2min_vals: np.ndarray = field(repr=False)

    # -- building blocks -------------------------------------------------
    def psi1(self, s):
        return self.psi1_r(self.lambdas[0] + np.asarray(s, dtype=float))

    def psi2(self, s):
        return self.psi2_r(self.lambdas[0] + np.asarray(s, dtype=float))

    def psi3(self, s):
        return self.psi3_r(self.lambdas[0] + np.asarray(s, dtype=float))

    def psi4(self, s):
        return self.psi4_r(self.lambdas[0] + np.asarray(s, dtype=float))

    def g2min(self, s):
        """Lower bound of ``min{g2(z) : |z| <= Lambda1 + s}``."""
        rho = self.lambdas[0] + np.asarray(s, dtype=float)
        g = self.g2min_grid
        inside = np.interp(rho, g[:-1], self.g2min_vals[1:])
        return np.where(rho <= g[-2], np.maximum(inside, self.model.G_inf), self.model.G_inf)

    def p_fn(self, s):
        return self.G_tilde**2 * np.asarray(s, dtype=float) ** 2

    def L(self, s):
        s = np.asarray(s, dtype=float)
        L1, L2 = self.lambdas[0], self.lambdas[1]
        with np.errstate(over="ignore", invalid="ignore"):
            return (1.0 + s + self.psi1(s) + (1.0 + L2) * self.psi2(s)
                    + self.G_tilde * (1.0 + 2 * L1**2 + 2 * s**2))

    def Q(self, w, s):
        """Solution-size bound over a horizon ``w``."""
        s = np.asarray(s, dtype=float)
        L1 = self.lambdas[0]
        with np.errstate(over="ignore", invalid="ignore"):
            e = np.exp(2 * self.c * w)
            arg = e * (self.R2 + self.theta2(s + L1)) + e * self.p_fn(s) / (2 * self.c)
            return 1.0 + self.theta1.inverse(arg) + L1

    def Q_tau(self, s):
        return self.Q(self.tau, s)

    def Q_r(self, s):
        return self.Q(self.r, s)

    def a(self, w, s):
        s = np.asarray(s, dtype=float)
        with np.errstate(over="ignore", invalid="ignore"):
            Lq = self.L(self.Q(w, s) + s)
            out = s * (1.0 + Lq * w) * np.exp(w * Lq)
        return np.where(s == 0, 0.0, out)

    def a_tau(self, s):
        return self.a(self.tau, s)

    def a_r(self, s):
        return self.a(self.r, s)

    def A(self, s):
        s = np.asarray(s, dtype=float)
        with np.errstate(over="ignore", invalid="ignore"):
            return self.L(self.Q_tau(s) + self.a_tau(s) + s)

    def B(self, s):
        s = np.asarray(s, dtype=float)
        at = self.a_tau(s)
        with np.errstate(over="ignore", invalid="ignore"):
            return np.where(at + s == 0, 0.0, self.A(s) * (at + s) * self.L(at + s))

    def P(self, s):
        s = np.asarray(s, dtype=float)
        L1, L2, L3, L4, L5 = self.lambdas
        with np.errstate(over="ignore", invalid="ignore"):
            Ls = self.L(s)
            big = s * (1.0 + self.tau * Ls)
            return ((2 * L3 * self.psi1(s) + 2 * L2 * L3 * self.psi2(s)
                     + (L4 + L3) * s * self.psi2(s)) ** 2
                    + self.psi3(s) ** 2 + 1.0
                    + self.psi4(big) * (L3 + s * Ls) ** 2 + L5 * self.psi3(big))

    def M(self, s):
        s = np.asarray(s, dtype=float)
        with np.errstate(over="ignore", invalid="ignore"):
            return ((1 + self.mu) ** 2 + self.L(s)) * (1.0 + s * self.psi2(s) / self.g2min(s))

    def _a_tilde_slope(self, s):
        return ((1 + self.mu) ** 2 + self.psi1(s) + self.lambdas[1] * self.psi2(s)) / self.g2min(s)

    def a_tilde(self, s):
        s = np.asarray(s, dtype=float)
        with np.errstate(over="ignore", invalid="ignore"):
            return np.where(s < self.eps, self.k_tilde * s, self._a_tilde_slope(s) * s)

    def a_tilde_inv(self, y, iters: int = 48):
        """Inverse of ``a_tilde``, rounded down (bracketed from a table, then bisected)."""
        y = np.asarray(y, dtype=float)
        ts, ty = self._ainv_table
        j = np.clip(np.searchsorted(ty, y, side="right") - 1, 0, ts.size - 2)
        lo, hi = ts[j], ts[j + 1]
        beyond = y >= ty[-1]
        if np.any(beyond):
            lo = np.where(beyond, ts[-1], lo)
            hi = np.where(beyond, ts[-1] * 2.0, hi)
            for _ in range(2000):
                grow = beyond & (self.a_tilde(hi) < y)
                if not np.any(grow):
                    break
                lo = np.where(grow, hi, lo)
                hi = np.where(grow, hi * 2.0, hi)
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            below = self.a_tilde(mid) <= y
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return np.where(y < self.k_tilde * self.eps, y / self.k_tilde, lo)

    @property
    def _ainv_table(self):
        tab = self.__dict__.get("_ainv")
        if tab is None:
            ts = self.eps * np.geomspace(1.0, 1e8, 1601)
            ty = np.maximum.accumulate(self.a_tilde(ts))
            tab = (ts, ty)
            object.__setattr__(self, "_ainv", tab)
        return tab

    def beta(self, s):
        s = np.asarray(s, dtype=float)
        sk = s * np.sqrt(self.K)
        return self.a_tilde(sk) + sk

    def D_r(self, s):
        s = np.asarray(s, dtype=float)
        with np.errstate(over="ignore", invalid="ignore"):
            y = self.a_r(s) + s
            return 2 * self.K * y * self.M(y) * np.exp(self.r * self.L(y))

    def R_fn(self, s):
        """Accuracy demanded of the prediction at input size ``s``."""
        s = np.asarray(s, dtype=float)
        with np.errstate(over="ignore", invalid="ignore"):
            d = self.D_r(self.a_r(s) + self.beta(self.Q_r(s)))
            first = self.gamma / np.maximum(1.0, np.where(np.isnan(d), np.inf, d))
            third = self.a_tilde_inv(s / 2.0) / (2 * np.sqrt(self.K))
            return np.minimum(np.minimum(first, self.R_tilde * s), third)

    def n_raw(self, s):
        """Step-count formula as a float (``inf`` when it overflows)."""
        s = np.asarray(s, dtype=float)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            at = self.a_tau(s)
            qt = self.Q_tau(s)
            first = (at + s) / (2 * self.R_fn(s)) * self.L(at + s) * np.expm1(self.tau * self.A(s))
            second = self.P(qt + s) / self.c
            n = np.floor(self.tau * np.fmax(first, second)) + 1.0
        n = np.where(np.isnan(n), np.inf, n)
        return np.where(s == 0, 1.0, n)

    def euler_min_steps(self, s):
        """Smallest N admitted by the Euler error theorem at input size ``s``."""
        s = np.asarray(s, dtype=float)
        with np.errstate(over="ignore", invalid="ignore"):
            return self.tau * self.P(self.Q_tau(s) + s) / self.c

    def euler_bound(self, s, N):
        """Right-hand side of the global Euler error estimate."""
        s = np.asarray(s, dtype=float)
        with np.errstate(over="ignore", invalid="ignore"):
            A, B = self.A(s), self.B(s)
            val = self.tau * B / (2 * N * A) * np.expm1(self.tau * A)
            # overflowing envelopes give an infinite (vacuous) bound, not nan
            val = np.where(np.isfinite(A) & np.isfinite(B), val, np.inf)
            return np.where(s == 0, 0.0, val)

    def rtilde_margins(self, omega: float = 0.0, r: float | None = None):
        """Slack ``1 - lhs`` of the two inequalities that fix ``R_tilde`` and ``omega``."""
        r = self.r if r is None else r
        mu, K, kt, Rt = self.mu, self.K, self.k_tilde, self.R_tilde
        sk = np.sqrt(K)
        first = Rt * kt * sk * math.exp(omega * (r + self.tau))
        if first >= 1.0 or omega >= mu / 2:
            return 1.0 - first, -np.inf
        second = (self.phi * Rt / math.sqrt(2 * mu) * math.exp(omega * (r + self.tau))
                  / math.sqrt(mu - 2 * omega)
                  * (1 + kt * math.exp(omega * r) * sk * (Rt + math.exp(-omega * self.tau))
                     / (1 - first)))
        return 1.0 - first, 1.0 - second

    def lyapunov_w(self) -> LyapunovW:
        return LyapunovW(self.model, self.ref)


def build_envelopes(model: PlantModel, ref: ReferenceTrajectory, mu: float, eps: float,
                    r: float, tau: float | None = None, *, R_tilde: float | None = None,
                    n_radii: int = 400, n_angles: int = 512, r_max: float = 1e4,
                    safety: float = 1.1) -> EnvelopeSet:
    """Construct every constant and envelope function of the design.

    ``R_tilde`` overrides the default choice; a value violating the
    small-gain conditions raises :class:`EnvelopeError`.
    """
    tau = ref.tau if tau is None else tau
    if not (mu > 0 and eps > 0 and r > 0 and tau > 0):
        raise ValueError("mu, eps, r and tau must all be positive")
    radii = np.concatenate([[0.0], np.geomspace(1e-6, r_max, n_radii)])
    pts = _polar_points(radii, n_angles)

    def g1f(z):
        return eval_g(model, z)[0]

    def g2f(z):
        return eval_g(model, z)[1]

    with np.errstate(over="ignore", invalid="ignore"):
        grad1 = np.linalg.norm(_fd_grad(g1f, pts), axis=-1).max(axis=1)
        grad2 = np.linalg.norm(_fd_grad(g2f, pts), axis=-1).max(axis=1)
        g2ring = g2f(pts).min(axis=1)
        wl = LyapunovW(model, ref)
        wvals = wl.W_tilde(pts)
        gw = np.linalg.norm(wl.grad(pts), axis=-1).max(axis=1)
        hw = np.linalg.norm(wl.hess(pts), ord=2, axis=(-2, -1)).max(axis=1)
    if not all(np.all(np.isfinite(a)) for a in (grad1, grad2, g2ring, wvals, gw, hw)):
        raise EnvelopeError("non-finite plant values on the envelope grid; lower r_max")

    psi1_r = _upper(radii, grad1, safety)
    psi2_r = _upper(radii, grad2, safety)
    psi3_r = _upper(radii, gw, safety)
    psi4_r = _upper(radii, hw, safety)
    g2min_vals = np.minimum.accumulate(g2ring) / safety

    R2 = 1.0
    theta2 = _upper(radii, np.maximum(wvals.max(axis=1) - 1.0, 0.0), safety)
    ring_min = wvals.min(axis=1)
    m = np.minimum.accumulate(ring_min[::-1])[::-1]
    th1 = np.maximum(m - 1.0, 0.0) / safety
    k = np.searchsorted(radii, r_max / 10.0)
    log_slope = (th1[-1] - th1[k]) / np.log(radii[-1] / radii[k]) / safety
    if not log_slope > 0:
        raise EnvelopeError("energy function is not radially unbounded on the grid")
    theta1 = RadialEnvelope(radii, th1, float(log_slope), lower=True)

    lam = ref.lambdas
    G_tilde = model.G_sup
    c = 0.5 + G_tilde**2 * lam[1] ** 2
    K = lyapunov_K(mu)
    sk = math.sqrt(K)
    delta = eps**2 / (4 * K)
    gamma = min(eps / (2 * sk), mu * eps**2 / (8 * K))

    env = EnvelopeSet(model, ref, mu, eps, r, tau, lam, G_tilde, c, K, delta, gamma,
                      k_tilde=np.nan, L_tilde=np.nan, phi=np.nan, R_tilde=np.nan, R2=R2,
                      omega=np.nan, psi1_r=psi1_r, psi2_r=psi2_r, psi3_r=psi3_r,
                      psi4_r=psi4_r, theta1=theta1, theta2=theta2,
                      g2min_grid=radii, g2min_vals=g2min_vals)
    k_tilde = float(env._a_tilde_slope(eps))
    object.__setattr__(env, "k_tilde", k_tilde)
    L_tilde = float(env.L((1 + k_tilde) * eps + eps / (2 * sk)))
    phi = float(2 * K * env.M(eps + eps / (2 * sk)) * math.exp(r * L_tilde))
    if R_tilde is None:
        R_tilde = min(mu * math.sqrt(2) / (2 * phi * (1 + 4 * k_tilde * sk)),
                      1 / (2 * k_tilde * sk), 0.5)
    object.__setattr__(env, "L_tilde", L_tilde)
    object.__setattr__(env, "phi", phi)
    object.__setattr__(env, "R_tilde", float(R_tilde))
    m1, m2 = env.rtilde_margins(0.0)
    if not (R_tilde > 0 and m1 > 0 and m2 > 0):
        raise EnvelopeError(
            f"small-gain condition on R_tilde violated: R_tilde={R_tilde:.6g}, "
            f"slack (first, second) = ({m1:.3g}, {m2:.3g})"
        )
    object.__setattr__(env, "omega", choose_omega(env))
    return env


def choose_omega(env: EnvelopeSet, r: float | None = None, margin: float = 1e-9,
                 iters: int = 200) -> float:
    """Largest decay rate in ``(0, mu/2)`` meeting both small-gain inequalities."""
    m1, m2 = env.rtilde_margins(0.0, r)
    if not (m1 > margin and m2 > margin):
        raise EnvelopeError("no admissible decay rate: small-gain condition fails at 0")
    lo, hi = 0.0, env.mu / 2
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        a, b = env.rtilde_margins(mid, r)
        if a >= margin and b >= margin:
            lo = mid
        else:
            hi = mid
    return lo


def step_count(env: EnvelopeSet, s: float, mode: str = "certified",
               cap: int = 10_000_000) -> tuple[int, bool]:
    """Number of Euler steps for input size ``s``.

    Returns ``(N, certified)``.  In ``"practical"`` mode N is clipped to
    ``cap`` and flagged as not certified; in ``"certified"`` mode an
    unrepresentable N raises :class:`StepCountError`.
    """
    if s < 0:
        raise ValueError("s must be non-negative")
    n = float(env.n_raw(s))
    if mode == "practical":
        if n > cap:
            return int(cap), False
        return int(n), True
    if mode != "certified":
        raise ValueError(f"unknown mode {mode!r}")
    if not n <= MAX_CERTIFIED_STEPS:
        raise StepCountError(f"certified step count N({s:.3g}) = {n:.3g} is not computable")
    return int(n), True


# -- sampled validation --------------------------------------------------

@dataclass
class InequalityCheck:
    ident: str
    samples: int
    violations: int
    worst_margin: float

    @property
    def ok(self) -> bool:
        return self.violations == 0


@dataclass
class ValidationReport:
    checks: list

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    def by_id(self, ident: str) -> InequalityCheck:
        for c in self.checks:
            if c.ident == ident:
                return c
        raise KeyError(ident)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["inequality", "samples", "violations", "worst_margin"])
        for c in self.checks:
            w.writerow([c.ident, c.samples, c.violations, repr(c.worst_margin)])
        return buf.getvalue()


def _compare(ident, lhs, rhs, rtol=1e-9, atol=1e-12):
    lhs = np.asarray(lhs, dtype=float).ravel()
    rhs = np.asarray(rhs, dtype=float).ravel()
    with np.errstate(invalid="ignore", over="ignore"):
        bad = lhs > rhs + rtol * np.maximum(np.abs(lhs), np.abs(rhs)) + atol
        scale = np.abs(lhs) + np.abs(rhs) + 1e-300
        margin = np.where(np.isinf(rhs), 1.0, (rhs - lhs) / scale)
    bad |= np.isnan(lhs)
    worst = float(np.nanmin(margin)) if margin.size else 1.0
    return InequalityCheck(ident, int(lhs.size), int(np.count_nonzero(bad)), worst)


def _sample_disk(rng, n, rmax, rmin=1e-4):
    rad = np.exp(rng.uniform(np.log(rmin), np.log(rmax), n))
    ang = rng.uniform(0, 2 * np.pi, n)
    return np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=-1)


def validate_envelopes(env: EnvelopeSet, model: PlantModel, ref: ReferenceTrajectory,
                       n_samples: int = 10_000, seed: int = 0, x_max: float = 5.0,
                       u_max: float = 5.0) -> ValidationReport:
    """Check the design inequalities on random samples.

    States are drawn log-uniformly in radius up to ``x_max``, inputs up to
    ``u_max``, times over one reference period (or ``[0, 20]``).
    """
    rng = np.random.default_rng(seed)
    n = n_samples
    t_span = ref.period if ref.period is not None else 20.0
    t = rng.uniform(0.0, t_span, n)
    x = _sample_disk(rng, n, x_max)
    y = _sample_disk(rng, n, x_max)
    u = rng.choice([-1.0, 1.0], n) * np.exp(rng.uniform(np.log(1e-4), np.log(u_max), n))
    nx, ny, nu = (np.linalg.norm(x, axis=-1), np.linalg.norm(y, axis=-1), np.abs(u))
    mu, K = env.mu, env.K
    wl = env.lyapunov_w()
    checks = []

    fx = error_rhs(model, ref, t, x, u)
    fy = error_rhs(model, ref, t, y, u)
    checks.append(_compare("f_lipschitz", np.linalg.norm(fx - fy, axis=-1),
                           env.L(nx + ny + nu) * np.linalg.norm(x - y, axis=-1)))
    checks.append(_compare("f_growth", np.linalg.norm(fx, axis=-1), (nx + nu) * env.L(nx + nu)))

    # dissipation of W along the error dynamics
    dt = 1e-6
    zdot = ref.zeta_d_dot(t)
    zd = ref.zeta_d(t)
    gW = wl.grad(zd + x)
    Wdot = np.sum(gW * zdot, axis=-1) + np.sum(gW * fx, axis=-1)
    checks.append(_compare("W_dissipation", Wdot, env.c * wl.W_tilde(zd + x) + env.p_fn(nu)))

    s = np.exp(rng.uniform(np.log(1e-3), np.log(x_max), n))
    with np.errstate(over="ignore", invalid="ignore"):
        Ls = env.L(s)
        xi = _sample_disk(rng, n, 1.0) * (s * (1 + env.tau * Ls))[:, None]
        zeta = ref.zeta_d(t) + xi
        zdd = (ref.zeta_d_dot(t + dt) - ref.zeta_d_dot(t - dt)) / (2 * dt)
        Hs = wl.hess(zeta)
        gs = wl.grad(zeta)
        Wtt = np.einsum("ni,nij,nj->n", zdot, Hs, zdot) + np.sum(gs * zdd, axis=-1)
        Wtx = np.linalg.norm(np.einsum("nij,nj->ni", Hs, zdot), axis=-1)
        Wxx = np.linalg.norm(Hs, ord=2, axis=(-2, -1))
        lhs = 1 + np.abs(Wtt) + 2 * s * Ls * Wtx + s**2 * Ls**2 * Wxx
    checks.append(_compare("P_time_derivatives", lhs, env.P(s)))
    checks.append(_compare("W_gradient", np.linalg.norm(gW, axis=-1), np.sqrt(env.P(nx))))

    ds = rng.uniform(0.0, 1.0, n)
    f_late = error_rhs(model, ref, t + ds, x, u)
    checks.append(_compare("f_time_shift", np.linalg.norm(f_late - fx, axis=-1),
                           ds * np.sqrt(env.P(nx + nu))))

    checks.append(_check_sublevel(env, ref, wl, rng, n, env.tau, "sublevel_tau"))
    checks.append(_check_sublevel(env, ref, wl, rng, n, env.r, "sublevel_r"))

    # wider radius range for the energy sandwich
    z = _sample_disk(rng, n, 100.0)
    Wt = wl.W_tilde(z)
    nz = np.linalg.norm(z, axis=-1)
    checks.append(_compare("W_lower", env.theta1(nz), Wt))
    checks.append(_compare("W_upper", Wt, env.R2 + env.theta2(nz)))

    V = lyapunov_V(mu, x)
    checks.append(_compare("V_lower", nx**2, V))
    checks.append(_compare("V_upper", V, K * nx**2))
    checks.append(_compare("V_gradient", np.linalg.norm(grad_V(mu, x), axis=-1), 2 * K * nx))

    kx = nominal_k(model, ref, mu, t, x)
    checks.append(_compare("k_growth", np.abs(kx), env.a_tilde(nx)))
    ss = rng.uniform(0.0, env.eps, n)
    checks.append(_compare("a_tilde_linear", np.abs(env.a_tilde(ss) - env.k_tilde * ss), 1e-12 * ss))
    ky = nominal_k(model, ref, mu, t, y)
    lhs = g_tilde(model, ref, t, x) * np.abs(kx - ky)
    checks.append(_compare("k_lipschitz", lhs, env.M(nx + ny) * np.linalg.norm(x - y, axis=-1)))

    sr = np.exp(rng.uniform(np.log(1e-8), np.log(x_max), 200))
    checks.append(_compare("R_linear_majorant", env.R_fn(sr), env.R_tilde * sr))
    return ValidationReport(checks)


def _check_sublevel(env, ref, wl, rng, n, w, ident):
    """Points inside the reachable energy sublevel set stay within ``Q_w(s) - 1``."""
    s = np.exp(rng.uniform(np.log(1e-3), np.log(3.0), n))
    t = rng.uniform(0.0, ref.period if ref.period is not None else 20.0, n)
    h = rng.uniform(0.0, w, n)
    ring = _polar_points(np.linspace(0, 1, 9), 32).reshape(-1, 2)
    wmax = np.array([wl.W(ti, si * ring).max() for ti, si in zip(t, s)])
    e = np.exp(2 * env.c * w)
    level = e * wmax + e * env.p_fn(s) / (2 * env.c)
    x = _sample_disk(rng, n, 50.0, rmin=1e-3)
    inside = wl.W(t + h, x) <= level
    nx = np.linalg.norm(x, axis=-1)
    chk = _compare(ident, (1.0 + nx)[inside], env.Q(w, s[inside]))
    return chk
