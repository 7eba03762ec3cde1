"""Closed-loop time-domain runs of the plant with a supplementary controller."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .controller import AdaptiveGains, _p_adaptive, _p_state_feedback, _sigma_rate, project
from .events import Event, schedule, snap_events
from .plant import (IG_D, IG_Q, N_STATES, P_CG, STATE_NAMES, V_D, V_F, V_Q, PlantParams,
                    _rhs, measure, steady_state_init)

CONTROLLERS = ("nc", "sf", "adaptive")
CHANNELS = ("v_n", "v_n_tilde", "eta", "v_fi_tilde", "sigma_hat", "p_tilde", "w_sigma", "c_g")
(CH_VN, CH_VNT, CH_ETA, CH_VFI, CH_SH, CH_PT, CH_W, CH_CG) = range(len(CHANNELS))

# controller parameter vector layout
(C_K, C_PV, C_PVE, C_PVI, C_PSI, C_SLO, C_SHI, C_VN0, C_KSF, C_CG0, C_ADAPT, C_MA, C_SH0, C_W0) = range(14)


@dataclass
class ControllerConfig:
    mode: str = "nc"
    gains: AdaptiveGains | None = None
    sigma_hat0: float | None = None
    adapt: bool = True
    k_sf: float = -22.0
    c_g0: float = 0.0963
    v_n_filter: float = 0.0  # moving-average window on v_n for the supplementary path, s (0 = off)

    def __post_init__(self):
        if self.mode not in CONTROLLERS:
            raise ValueError(f"controller mode must be one of {CONTROLLERS}, got {self.mode!r}")
        if self.mode == "adaptive" and self.gains is None:
            raise ValueError("adaptive controller needs gains")
        if self.v_n_filter < 0:
            raise ValueError("v_n_filter must be >= 0")


@numba.njit(cache=True)
def _step(x, prm, dt, p_mod, k1, k2, k3, k4, tmp):
    n = x.shape[0]
    st = _rhs(x, p_mod, 0.0, prm, k1)
    if st != 0:
        return st
    for j in range(n):
        tmp[j] = x[j] + 0.5 * dt * k1[j]
    st = _rhs(tmp, p_mod, 0.0, prm, k2)
    if st != 0:
        return st
    for j in range(n):
        tmp[j] = x[j] + 0.5 * dt * k2[j]
    st = _rhs(tmp, p_mod, 0.0, prm, k3)
    if st != 0:
        return st
    for j in range(n):
        tmp[j] = x[j] + dt * k3[j]
    st = _rhs(tmp, p_mod, 0.0, prm, k4)
    if st != 0:
        return st
    for j in range(n):
        x[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
    return 0


@numba.njit(cache=True)
def _simulate(x0, prm, dt, n_steps, sched_idx, sched_val, mode, cp, dec, states_out, chan_out):
    """Run ``n_steps`` RK4 steps with zero-order-held supplementary input.

    Returns (status, last_index): status 0 ok, 1 degenerate voltage,
    2 non-finite, 3 blow-up guard.
    """
    n = x0.shape[0]
    x = x0.copy()
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    v_n0 = cp[C_VN0]
    sigma_hat = cp[C_SH0]
    vfi = 0.0
    prev_vf = x[V_F] - v_n0
    ma = int(cp[C_MA])
    ring = np.zeros(max(ma, 1))
    ring_sum = 0.0
    for s in range(n_steps + 1):
        for m in range(sched_idx.shape[0]):
            prm[sched_idx[m]] = sched_val[m, s]
        v_d = x[V_D]
        v_q = x[V_Q]
        v_n = math.sqrt(v_d * v_d + v_q * v_q)
        if ma > 0:
            slot = s % ma
            if s < ma:
                ring[slot] = v_n
                ring_sum += v_n
                v_meas = ring_sum / (s + 1)
            else:
                ring_sum += v_n - ring[slot]
                ring[slot] = v_n
                v_meas = ring_sum / ma
        else:
            v_meas = v_n
        vn_t = v_meas - v_n0
        vf_t = x[V_F] - v_n0
        if s > 0:
            vfi += 0.5 * dt * (prev_vf + vf_t)
        prev_vf = vf_t
        eta = vf_t + cp[C_PSI] * vfi
        if mode == 2:
            p_mod = _p_adaptive(cp[C_K], sigma_hat, v_meas, vn_t)
        elif mode == 1:
            p_mod = _p_state_feedback(vn_t, cp[C_KSF], cp[C_CG0], v_n0)
        else:
            p_mod = 0.0
        cg = prm[P_CG]
        w = (v_d * x[IG_D] + v_q * x[IG_Q]) / v_n if v_n > 0 else 0.0
        chan_out[s, 0] = v_n
        chan_out[s, 1] = vn_t
        chan_out[s, 2] = eta
        chan_out[s, 3] = vfi
        chan_out[s, 4] = sigma_hat
        chan_out[s, 5] = p_mod
        chan_out[s, 6] = (w - cp[C_W0]) / cg
        chan_out[s, 7] = cg
        if s % dec == 0:
            states_out[s // dec, :] = x
        if s == n_steps:
            break
        if mode == 2 and cp[C_ADAPT] > 0.5:
            rate = _sigma_rate(cp[C_K], cp[C_PV], cp[C_PVE], cp[C_PVI], vn_t, eta, vfi, sigma_hat)
            sigma_hat = project(sigma_hat + dt * rate, cp[C_SLO], cp[C_SHI])
        st = _step(x, prm, dt, p_mod, k1, k2, k3, k4, tmp)
        if st != 0:
            return st, s
        for j in range(n):
            if abs(x[j]) > 1e6:
                return 3, s
        if abs(x[V_D]) > 5.0 or abs(x[V_Q]) > 5.0:
            return 3, s
    return 0, n_steps


@dataclass
class Trace:
    """Full-resolution channels plus decimated states."""

    t: np.ndarray
    channels: np.ndarray  # (n, len(CHANNELS))
    t_dec: np.ndarray
    states: np.ndarray  # (n_dec, N_STATES)
    p_tilde_dec: np.ndarray
    last_index: int
    status: int
    dt: float
    decimation_steps: int = 1
    schedule_dec: dict = field(default_factory=dict)

    def channel(self, name: str) -> np.ndarray:
        return self.channels[: self.last_index + 1, CHANNELS.index(name)]

    @property
    def t_valid(self) -> np.ndarray:
        return self.t[: self.last_index + 1]


def _controller_vector(cfg: ControllerConfig, v_n0: float, w0: float, dt: float) -> tuple[int, np.ndarray]:
    cp = np.zeros(14)
    cp[C_VN0] = v_n0
    cp[C_W0] = w0
    cp[C_KSF] = cfg.k_sf
    cp[C_CG0] = cfg.c_g0
    cp[C_MA] = int(round(cfg.v_n_filter / dt)) if cfg.v_n_filter > 0 else 0
    if cfg.mode == "adaptive":
        g = cfg.gains
        cp[C_K], cp[C_PV], cp[C_PVE], cp[C_PVI] = g.k, g.p_v, g.p_v_eta, g.p_v_i
        cp[C_PSI] = g.psi
        cp[C_SLO], cp[C_SHI] = g.sigma_lo, g.sigma_hi
        s0 = g.sigma_mid if cfg.sigma_hat0 is None else cfg.sigma_hat0
        cp[C_SH0] = project(s0, g.sigma_lo, g.sigma_hi)
        cp[C_ADAPT] = 1.0 if cfg.adapt else 0.0
    else:
        cp[C_PSI] = 0.0
        cp[C_SH0] = math.nan
    return CONTROLLERS.index(cfg.mode), cp


def simulate(params: PlantParams, controller: ControllerConfig, events: list[Event], duration: float,
             dt: float = 50e-6, decimation: float = 1e-3, x0: np.ndarray | None = None) -> Trace:
    """Integrate from the pre-disturbance equilibrium (or ``x0``)."""
    if not (duration > 0 and dt > 0):
        raise ValueError("duration and dt must be > 0")
    if x0 is None:
        x0 = steady_state_init(params)
    x0 = np.ascontiguousarray(x0, dtype=float)
    n_steps = int(round(duration / dt))
    dec = max(1, int(round(decimation / dt)))
    t = np.arange(n_steps + 1) * dt
    evs = snap_events(sorted(events, key=lambda e: e.time), dt)
    sched = schedule(params, evs, t)
    idx = np.array(sorted(sched), dtype=np.int64)
    vals = np.ascontiguousarray(np.vstack([sched[i] for i in idx]))
    v_n0 = math.hypot(x0[V_D], x0[V_Q])
    w0 = (x0[V_D] * x0[IG_D] + x0[V_Q] * x0[IG_Q]) / v_n0
    mode, cp = _controller_vector(controller, v_n0, w0, dt)
    if controller.mode != "adaptive":
        cp[C_PSI] = params.outer.psi
    prm = params.pack()
    n_dec = n_steps // dec + 1
    states = np.full((n_dec, N_STATES), np.nan)
    chans = np.full((n_steps + 1, len(CHANNELS)), np.nan)
    status, last = _simulate(x0, prm, float(dt), n_steps, idx, vals, mode, cp, dec, states, chans)
    if status != 0:
        last = min(last, n_steps)
    p_dec = chans[::dec, CH_PT].copy()
    return Trace(t=t, channels=chans, t_dec=t[::dec].copy(), states=states, p_tilde_dec=p_dec,
                 last_index=int(last), status=int(status), dt=float(dt), decimation_steps=dec,
                 schedule_dec={int(i): sched[i][::dec].copy() for i in idx})


# ---------------------------------------------------------------- reporting

def settling_time(t: np.ndarray, y: np.ndarray, t_dist: float, band: float = 0.02, hold: float = 2.0) -> float | None:
    """First time after ``t_dist`` from which ``|y|`` stays within ``band * peak``.

    The signal must then remain inside the band to the end of the record,
    which has to cover at least ``hold`` seconds.  Returned relative to
    ``t_dist``; ``None`` when never settled.
    """
    mask = t >= t_dist
    tt, yy = t[mask], np.abs(y[mask])
    if tt.size == 0:
        return None
    peak = float(np.max(yy))
    if peak == 0.0:
        return 0.0
    outside = np.nonzero(yy > band * peak)[0]
    start = tt[0] if outside.size == 0 else (tt[outside[-1] + 1] if outside[-1] + 1 < tt.size else None)
    if start is None or tt[-1] - start < hold - 1e-12:
        return None
    return float(start - t_dist)


def envelope_ratios(t: np.ndarray, y: np.ndarray, t_dist: float, window: float = 1.0) -> np.ndarray:
    """Ratios of peak |y| in consecutive ``window``-long blocks after ``t_dist``."""
    mask = t >= t_dist
    tt, yy = t[mask], np.abs(y[mask])
    if tt.size == 0:
        return np.array([])
    blocks = np.floor((tt - tt[0]) / window + 1e-9).astype(int)
    n_full = int(np.floor((tt[-1] - tt[0]) / window + 1e-9))
    env = np.array([yy[blocks == b].max() for b in range(n_full) if np.any(blocks == b)])
    if env.size < 2:
        return np.array([])
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(env[:-1] > 0, env[1:] / env[:-1], np.inf)


@dataclass
class RunReport:
    scenario: str
    controller: str
    verdict: str
    settling_time: float | None
    max_abs_p_tilde: float
    last_finite_time: float
    envelope_ratio_max: float
    envelope_ratio_final: float
    sigma_hat: dict | None = None
    dissipativity_margin: float | None = None
    disturbance_time: float = 0.0
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        return d


def build_report(name: str, controller: ControllerConfig, trace: Trace, events: list[Event],
                 certificate=None) -> RunReport:
    t = trace.t_valid
    vn_t = trace.channel("v_n_tilde")
    t_dist = min((e.time for e in events), default=0.0)
    completed = trace.status == 0 and np.all(np.isfinite(vn_t))
    ratios = envelope_ratios(t, vn_t, t_dist)
    r_max = float(np.max(ratios)) if ratios.size else 0.0
    r_fin = float(ratios[-1]) if ratios.size else 0.0
    settle = settling_time(t, vn_t, t_dist) if completed else None
    if not completed:
        verdict = "diverged"
    elif settle is not None:
        verdict = "settled"
    else:
        verdict = "oscillating"
    p_t = trace.channel("p_tilde")
    sh = None
    margin = None
    if controller.mode == "adaptive":
        s = trace.channel("sigma_hat")
        sh = {"initial": float(s[0]), "final": float(s[-1]), "min": float(np.min(s)), "max": float(np.max(s))}
        if certificate is not None:
            from .analysis import dissipativity_monitor

            margin = plant_monitor(trace, certificate, dissipativity_monitor).worst_margin
    return RunReport(
        scenario=name, controller=controller.mode, verdict=verdict, settling_time=settle,
        max_abs_p_tilde=float(np.max(np.abs(p_t))) if p_t.size else 0.0,
        last_finite_time=float(t[-1]) if t.size else 0.0,
        envelope_ratio_max=r_max, envelope_ratio_final=r_fin, sigma_hat=sh,
        dissipativity_margin=margin, disturbance_time=float(t_dist),
    )


@dataclass
class PlantErrorTrajectory:
    t: np.ndarray
    e_F: np.ndarray
    w_sigma: np.ndarray
    sigma: np.ndarray


def plant_error_trajectory(trace: Trace) -> PlantErrorTrajectory:
    """Error coordinates reconstructed from a plant run (sigma = 1/c_g)."""
    t = trace.t_valid
    sigma = 1.0 / trace.channel("c_g")
    sh = trace.channel("sigma_hat")
    e_F = np.column_stack([trace.channel("v_n_tilde"), trace.channel("eta"), trace.channel("v_fi_tilde"),
                           sigma - sh])
    return PlantErrorTrajectory(t=t, e_F=e_F, w_sigma=trace.channel("w_sigma"), sigma=sigma)


def plant_monitor(trace: Trace, certificate, monitor):
    traj = plant_error_trajectory(trace)
    return monitor(traj, certificate.P, certificate.gamma_bar)


def decimated_table(params: PlantParams, trace: Trace, outputs: list[str] | None = None) -> tuple[list[str], np.ndarray]:
    """Rows of the CSV: time followed by the requested channels."""
    outputs = list(outputs) if outputs else default_outputs()
    dec = trace.decimation_steps
    rows = trace.last_index // dec + 1
    cols = [trace.t_dec[:rows]]
    chans = trace.channels[::dec][:rows]
    meas = None
    if any(o in ("p_out", "q_out", "omega_pll") for o in outputs):
        prm = params.pack()
        meas = []
        for r in range(rows):
            for i, vals in trace.schedule_dec.items():
                prm[i] = vals[r]
            meas.append(measure(trace.states[r], prm, (trace.p_tilde_dec[r], 0.0)))
    for name in outputs:
        if name in CHANNELS:
            cols.append(chans[:, CHANNELS.index(name)])
        elif name in STATE_NAMES:
            cols.append(trace.states[:rows, STATE_NAMES.index(name)])
        elif name in ("p_out", "q_out", "omega_pll"):
            cols.append(np.array([getattr(m, name) for m in meas]))
        else:
            raise ValueError(f"unknown output channel {name!r}")
    return ["time"] + outputs, np.column_stack(cols)


def default_outputs() -> list[str]:
    return ["v_n", "v_n_tilde", "v_f", "p_tilde", "sigma_hat", "eta", "v_fi_tilde", "w_sigma", "c_g",
            "p_out", "q_out", "omega_pll", "delta_pll"]


def all_output_names() -> tuple[str, ...]:
    return tuple(CHANNELS) + tuple(n for n in STATE_NAMES if n not in CHANNELS) + ("p_out", "q_out", "omega_pll")
