"""Linearization, modal analysis and the reduced error-dynamics tools.

The reduced model works in the error coordinates ``e_F = (v_n~, eta, v_fi~,
sigma~)`` with ``sigma~ = sigma - sigma_hat``.  Its storage function is
``V = 1/2 e_R' P e_R + 1/2 sigma~^2`` and the monitor checks the integrated
supply inequality ``V(t) - V(0) <= int(gamma^2 |w~|^2 - |e_R|^2) + eps``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.linalg as sla

from .controller import AdaptiveGains
from .plant import (N_STATES, STATE_NAMES, V_D, V_Q, PlantParams, derivatives)


class AnalysisError(RuntimeError):
    pass


# ---------------------------------------------------------------- linearization

@dataclass
class LinearModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    labels: tuple[str, ...]
    x0: np.ndarray
    input_labels: tuple[str, ...] = ("p_tilde", "i_gd", "i_gq")
    output_labels: tuple[str, ...] = ("v_n_tilde",)
    consistency: float = 0.0

    def __post_init__(self):
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError("A must be square")
        if self.B.shape[0] != n or self.C.shape[1] != n:
            raise ValueError("B/C dimensions inconsistent with A")
        if len(self.labels) != n:
            raise ValueError("one label per state required")
        if not np.all(np.isfinite(self.A)):
            raise ValueError("A has non-finite entries")


def _central_jacobian(fun, x, h):
    f0 = fun(x)
    J = np.empty((np.size(f0), x.size))
    for j in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[j] += h[j]
        xm[j] -= h[j]
        J[:, j] = (fun(xp) - fun(xm)) / (2.0 * h[j])
    return J


def richardson_jacobian(fun, x, h_rel: float = 1e-5) -> tuple[np.ndarray, float]:
    """Central differences at ``h`` and ``h/2`` combined by Richardson.

    Returns the extrapolated Jacobian and ``max|J(h) - J(h/2)| / max|J|``.
    """
    x = np.asarray(x, dtype=float)
    h = h_rel * (1.0 + np.abs(x))
    J1 = _central_jacobian(fun, x, h)
    J2 = _central_jacobian(fun, x, 0.5 * h)
    J = (4.0 * J2 - J1) / 3.0
    scale = max(float(np.max(np.abs(J))), 1e-300)
    return J, float(np.max(np.abs(J1 - J2)) / scale)


def linearize(plant, x0, u0=(0.0, 0.0), h_rel: float = 1e-5, eq_tol: float = 1e-8) -> LinearModel:
    """Linear model of the plant about an equilibrium.

    ``plant`` is a :class:`PlantParams` or any callable ``f(x, u) -> dx``.
    For plant params the inputs are ``p~`` and a current disturbance drawn
    from the POI node (d and q), and the output is ``v_n~``.
    """
    x0 = np.asarray(x0, dtype=float)
    u0 = np.asarray(u0, dtype=float)
    if isinstance(plant, PlantParams):
        prm = plant.pack()
        cg, wb = plant.grid.c_g, plant.base.omega_base

        def f(x, u):
            dx = derivatives(x, (u[0], u0[1] if u0.size > 1 else 0.0), prm)
            dx[V_D] -= wb * u[1] / cg
            dx[V_Q] -= wb * u[2] / cg
            return dx

        u_full = np.array([u0[0], 0.0, 0.0])
        labels = STATE_NAMES
        vn = math.hypot(x0[V_D], x0[V_Q])
        C = np.zeros((1, N_STATES))
        C[0, V_D] = x0[V_D] / vn
        C[0, V_Q] = x0[V_Q] / vn
        in_labels = ("p_tilde", "i_gd", "i_gq")
        out_labels = ("v_n_tilde",)
    else:
        f = plant
        u_full = u0
        labels = tuple(f"x{i}" for i in range(x0.size))
        C = np.eye(x0.size)
        in_labels = tuple(f"u{i}" for i in range(u_full.size))
        out_labels = labels
    res = float(np.max(np.abs(f(x0, u_full)))) if x0.size else 0.0
    if not res < eq_tol:
        raise AnalysisError(f"x0 is not an equilibrium: residual {res:.3e}")
    A, cons_a = richardson_jacobian(lambda z: f(z, u_full), x0, h_rel)
    if u_full.size:
        B, cons_b = richardson_jacobian(lambda v: f(x0, v), u_full, h_rel)
    else:
        B, cons_b = np.zeros((x0.size, 0)), 0.0
    return LinearModel(A=A, B=B, C=C, labels=tuple(labels), x0=x0.copy(), input_labels=in_labels,
                       output_labels=out_labels, consistency=max(cons_a, cons_b))


# ---------------------------------------------------------------- modal analysis

@dataclass
class Mode:
    eigenvalue: complex
    freq_hz: float
    damping_ratio: float
    participation: np.ndarray
    modeshape_angle: np.ndarray
    right: np.ndarray = field(repr=False)
    left: np.ndarray = field(repr=False)
    labels: tuple[str, ...] = field(default=(), repr=False)

    def dominant_states(self, n: int = 3) -> list[tuple[str, float]]:
        order = np.argsort(-self.participation)[:n]
        names = self.labels or tuple(str(i) for i in range(self.participation.size))
        return [(names[i], float(self.participation[i])) for i in order]


def damping_ratio(lam: complex) -> float:
    mag = abs(lam)
    return 0.0 if mag == 0.0 else -lam.real / mag


def modal_analysis(model: LinearModel | np.ndarray, conjugate_pairs: bool = True) -> list[Mode]:
    """Eigen-decomposition with participation factors, least damped first.

    With ``conjugate_pairs`` only the member with non-negative imaginary
    part of each complex pair is returned.
    """
    A = model.A if isinstance(model, LinearModel) else np.asarray(model, dtype=float)
    labels = model.labels if isinstance(model, LinearModel) else ()
    try:
        w, vl, vr = sla.eig(A, left=True, right=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise AnalysisError(f"eigen-decomposition failed: {exc}") from exc
    modes = []
    for i, lam in enumerate(w):
        if conjugate_pairs and lam.imag < 0:
            continue
        r = vr[:, i] / np.linalg.norm(vr[:, i])
        l = vl[:, i].conj()
        l = l / (l @ r)
        pf = np.abs(l * r)
        pf = pf / pf.max()
        ref = np.argmax(np.abs(r))
        angles = np.angle(r / r[ref])
        modes.append(Mode(eigenvalue=complex(lam), freq_hz=abs(lam.imag) / (2.0 * math.pi),
                          damping_ratio=damping_ratio(complex(lam)), participation=pf,
                          modeshape_angle=angles, right=r, left=l, labels=tuple(labels)))
    modes.sort(key=lambda m: (m.damping_ratio, -m.freq_hz))
    return modes


def residue(model: LinearModel, mode: Mode, input_idx: int = 0, output_idx: int = 0) -> complex:
    """(C r)(l B) for the mode's normalized eigenpair (l r = 1)."""
    n = model.A.shape[0]
    if mode.right.size != n:
        raise ValueError("mode does not belong to this model")
    if not (0 <= input_idx < model.B.shape[1] and 0 <= output_idx < model.C.shape[0]):
        raise ValueError("input/output index out of range")
    return complex((model.C[output_idx] @ mode.right) * (mode.left @ model.B[:, input_idx]))


def sso_modes(modes: list[Mode], f_lo: float = 4.0, f_hi: float = 7.0, zeta_max: float = 0.01) -> list[Mode]:
    return [m for m in modes if f_lo <= m.freq_hz <= f_hi and m.damping_ratio < zeta_max]


# ---------------------------------------------------------------- error dynamics

@dataclass
class ErrorState:
    v_n_tilde: float
    eta: float
    v_fi_tilde: float
    sigma_tilde: float

    def as_array(self) -> np.ndarray:
        return np.array([self.v_n_tilde, self.eta, self.v_fi_tilde, self.sigma_tilde])

    @property
    def e_R(self) -> np.ndarray:
        return self.as_array()[:3]

    @classmethod
    def from_array(cls, a) -> "ErrorState":
        return cls(*(float(v) for v in a))


def _gain_vector(gains: AdaptiveGains, adapt: bool = True) -> np.ndarray:
    return np.array([gains.k, gains.k_pv, gains.psi, gains.beta, gains.p_v, gains.p_v_eta,
                     gains.p_v_i, gains.sigma_lo, gains.sigma_hi, 1.0 if adapt else 0.0])


@numba.njit(cache=True)
def _err_rhs(e, w_sigma, sigma, sigma_dot, g, out):
    k, kpv, psi, beta = g[0], g[1], g[2], g[3]
    vn, eta, vfi, st = e[0], e[1], e[2], e[3]
    sh = sigma - st
    out[0] = -k * sigma / sh * vn - sigma * kpv * eta - w_sigma
    out[1] = (psi - beta) * (eta - psi * vfi) + beta * vn
    out[2] = eta - psi * vfi
    rate = 0.0
    if g[9] > 0.5:
        rate = -k * (g[4] * vn + g[5] * eta + g[6] * vfi) * vn / sh
        # projection: the estimate cannot leave [sigma_lo, sigma_hi]
        if (sh <= g[7] and rate < 0.0) or (sh >= g[8] and rate > 0.0):
            rate = 0.0
    out[3] = sigma_dot - rate


@numba.njit(cache=True)
def _err_run(e0, g, sigma, w, dt, out):
    """RK4 over len(sigma)-1 steps; sigma and w are sampled on the step grid."""
    n = sigma.shape[0] - 1
    k1 = np.empty(4)
    k2 = np.empty(4)
    k3 = np.empty(4)
    k4 = np.empty(4)
    tmp = np.empty(4)
    x = e0.copy()
    out[0, :] = x
    for s in range(n):
        s0, s1 = sigma[s], sigma[s + 1]
        sm = 0.5 * (s0 + s1)
        sd = (s1 - s0) / dt
        w0, w1 = w[s], w[s + 1]
        wm = 0.5 * (w0 + w1)
        _err_rhs(x, w0, s0, sd, g, k1)
        for j in range(4):
            tmp[j] = x[j] + 0.5 * dt * k1[j]
        _err_rhs(tmp, wm, sm, sd, g, k2)
        for j in range(4):
            tmp[j] = x[j] + 0.5 * dt * k2[j]
        _err_rhs(tmp, wm, sm, sd, g, k3)
        for j in range(4):
            tmp[j] = x[j] + dt * k3[j]
        _err_rhs(tmp, w1, s1, sd, g, k4)
        for j in range(4):
            x[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
        # keep sigma_hat = sigma - sigma~ inside the interval
        sh = s1 - x[3]
        if sh < g[7]:
            x[3] = s1 - g[7]
        elif sh > g[8]:
            x[3] = s1 - g[8]
        out[s + 1, :] = x
        if not (math.isfinite(x[0]) and abs(x[0]) < 1e12):
            for r in range(s + 2, n + 1):
                out[r, :] = np.nan
            break


def error_dynamics_rhs(e: ErrorState, w_sigma: float, sigma: float, gains: AdaptiveGains,
                       adapt: bool = True, sigma_dot: float = 0.0) -> ErrorState:
    """Closed-loop error derivative; ``sigma_dot`` is the rate of the true parameter."""
    out = np.empty(4)
    _err_rhs(e.as_array(), float(w_sigma), float(sigma), float(sigma_dot), _gain_vector(gains, adapt), out)
    return ErrorState.from_array(out)


@dataclass
class ErrorTrajectory:
    t: np.ndarray
    e_F: np.ndarray  # (n, 4)
    w_sigma: np.ndarray | None
    sigma: np.ndarray

    @property
    def e_R(self) -> np.ndarray:
        return self.e_F[:, :3]

    @property
    def sigma_hat(self) -> np.ndarray:
        return self.sigma - self.e_F[:, 3]


def simulate_error_dynamics(e0, gains: AdaptiveGains, t_end: float, dt: float = 1e-3, sigma=None,
                            w_sigma=None, adapt: bool = True) -> ErrorTrajectory:
    """Fixed-step RK4 of the reduced closed loop.

    ``sigma`` and ``w_sigma`` may be constants, arrays on the step grid or
    callables of time.
    """
    n = int(round(t_end / dt))
    t = np.arange(n + 1) * dt

    def sample(v, default):
        if v is None:
            return np.full(n + 1, default)
        if callable(v):
            return np.asarray([v(tt) for tt in t], dtype=float)
        arr = np.asarray(v, dtype=float)
        return np.full(n + 1, float(arr)) if arr.ndim == 0 else arr

    sig = sample(sigma, gains.sigma_mid)
    w = sample(w_sigma, 0.0)
    if sig.shape != (n + 1,) or w.shape != (n + 1,):
        raise ValueError("sigma and w_sigma must be sampled on the step grid")
    e0 = e0.as_array() if isinstance(e0, ErrorState) else np.asarray(e0, dtype=float)
    out = np.empty((n + 1, 4))
    _err_run(e0, _gain_vector(gains, adapt), sig, w, float(dt), out)
    return ErrorTrajectory(t=t, e_F=out, w_sigma=w, sigma=sig)


# ---------------------------------------------------------------- Lyapunov / dissipativity

def lyapunov_value(e, P: np.ndarray) -> np.ndarray | float:
    """V = 1/2 e_F' blockdiag(P, 1) e_F for one state or an (n, 4) array."""
    a = e.as_array() if isinstance(e, ErrorState) else np.asarray(e, dtype=float)
    P = np.asarray(P, dtype=float)
    if a.ndim == 1:
        r = a[:3]
        return float(0.5 * (r @ P @ r) + 0.5 * a[3] ** 2)
    r = a[:, :3]
    return 0.5 * np.einsum("ni,ij,nj->n", r, P, r) + 0.5 * a[:, 3] ** 2


@dataclass
class MonitorReport:
    passed: bool
    worst_margin: float
    worst_time: float
    eps_int: float
    max_V: float
    margins: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "worst_margin": self.worst_margin, "worst_time": self.worst_time,
                "eps_int": self.eps_int, "max_V": self.max_V}


def _cumtrapz(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))
    return out


def dissipativity_monitor(traj, P: np.ndarray, gamma_bar: float, eps_int: float | None = None) -> MonitorReport:
    """Check ``V(t) - V(0) <= int(gamma^2 |w~|^2 - |e_R|^2) + eps_int`` at every sample.

    ``w~ = (p_v, p_v_eta, p_v_i) * w_sigma`` uses the first row of ``P``.
    The reported margin excludes ``eps_int``; the run passes when
    ``margin >= -eps_int`` everywhere.
    """
    w = getattr(traj, "w_sigma", None)
    if w is None:
        raise AnalysisError("trajectory carries no disturbance channel w_sigma")
    e_F = np.asarray(traj.e_F, dtype=float)
    t = np.asarray(traj.t, dtype=float)
    w = np.asarray(w, dtype=float)
    if not (e_F.shape[0] == t.size == w.size):
        raise AnalysisError("trajectory channels have inconsistent lengths")
    P = np.asarray(P, dtype=float)
    V = lyapunov_value(e_F, P)
    prow = P[0]
    wt2 = float(prow @ prow) * w ** 2
    supply = gamma_bar ** 2 * wt2 - np.sum(e_F[:, :3] ** 2, axis=1)
    margins = _cumtrapz(supply, t) - (V - V[0])
    finite = np.all(np.isfinite(margins))
    max_V = float(np.nanmax(np.abs(V))) if V.size else 0.0
    if eps_int is None:
        eps_int = 1e-9 * max_V
    if not finite:
        return MonitorReport(False, -math.inf, float(t[np.argmax(~np.isfinite(margins))]), eps_int, max_V, margins)
    i = int(np.argmin(margins))
    worst = float(margins[i])
    return MonitorReport(worst >= -eps_int, worst, float(t[i]), eps_int, max_V, margins)


def decay_bound_ok(traj: ErrorTrajectory, P: np.ndarray, alpha: float, tol: float = 1e-3) -> tuple[bool, float]:
    """Check V(t) <= V(0) exp(-alpha t) (1 + tol); returns (ok, worst ratio)."""
    V = lyapunov_value(traj.e_F, P)
    bound = V[0] * np.exp(-alpha * traj.t) * (1.0 + tol)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(bound > 0, V / bound, 0.0)
    worst = float(np.nanmax(ratio)) if np.all(np.isfinite(V)) else math.inf
    return worst <= 1.0, worst
