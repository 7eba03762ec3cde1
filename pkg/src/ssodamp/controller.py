"""Supplementary SSO damping: the adaptive law, its adaptation rule and a
linear state-feedback baseline.

The scalar kernels are numba functions so the simulation loop and the
Python API share one implementation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba


class ControllerError(RuntimeError):
    pass


@dataclass(frozen=True)
class AdaptiveGains:
    p_v: float
    p_v_eta: float
    p_v_i: float
    k: float
    k_pv: float
    psi: float
    beta: float
    sigma_lo: float
    sigma_hi: float

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError("AdaptiveGains.k must be > 0")
        if not 0 < self.sigma_lo <= self.sigma_hi:
            raise ValueError("AdaptiveGains requires 0 < sigma_lo <= sigma_hi")
        if not (self.psi > 0 and self.beta > 0):
            raise ValueError("AdaptiveGains.psi and beta must be > 0")
        for name in ("p_v", "p_v_eta", "p_v_i", "k_pv"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"AdaptiveGains.{name} must be finite")

    @property
    def sigma_mid(self) -> float:
        return 0.5 * (self.sigma_lo + self.sigma_hi)


@dataclass
class AdaptiveState:
    """Live controller state.

    ``v_fi_tilde`` is the controller's own trapezoidal integral of
    ``v_f - v_n0``; ``prev_vf_tilde`` holds the last integrand sample.
    """

    sigma_hat: float
    v_fi_tilde: float = 0.0
    v_n0: float = 1.0
    prev_vf_tilde: float = 0.0

    @classmethod
    def armed(cls, gains: AdaptiveGains, v_n0: float, sigma_hat: float | None = None) -> "AdaptiveState":
        """State latched at arm time from the pre-disturbance voltage."""
        s = gains.sigma_mid if sigma_hat is None else sigma_hat
        return cls(sigma_hat=project(s, gains.sigma_lo, gains.sigma_hi), v_n0=v_n0)

    def sigma_tilde(self, sigma_true: float) -> float:
        return sigma_true - self.sigma_hat


@numba.njit(cache=True)
def project(sigma, lo, hi):
    if sigma < lo:
        return lo
    if sigma > hi:
        return hi
    return sigma


@numba.njit(cache=True)
def _p_adaptive(k, sigma_hat, v_n, vn_tilde):
    return -1.5 * k * v_n * vn_tilde / sigma_hat


@numba.njit(cache=True)
def _sigma_rate(k, p_v, p_v_eta, p_v_i, vn_tilde, eta, vfi_tilde, sigma_hat):
    return -k * (p_v * vn_tilde + p_v_eta * eta + p_v_i * vfi_tilde) * vn_tilde / sigma_hat


@numba.njit(cache=True)
def _p_state_feedback(vn_tilde, k_sf, c_g0, v_n0):
    return 1.5 * c_g0 * v_n0 * k_sf * vn_tilde


def error_signals(v_n: float, v_f: float, v_n0: float, gains: AdaptiveGains,
                  state: AdaptiveState | None = None) -> tuple[float, float, float]:
    """Return (v_n~, v_f~, eta) with eta = v_f~ + psi * v_fi~."""
    vn_t = v_n - v_n0
    vf_t = v_f - v_n0
    vfi = 0.0 if state is None else state.v_fi_tilde
    return vn_t, vf_t, vf_t + gains.psi * vfi


def integrate_vfi(state: AdaptiveState, vf_tilde: float, dt: float) -> float:
    """Advance the controller's integral of v_f~ by one trapezoid step."""
    state.v_fi_tilde += 0.5 * dt * (state.prev_vf_tilde + vf_tilde)
    state.prev_vf_tilde = vf_tilde
    return state.v_fi_tilde


def adaptive_control(vn_tilde: float, eta: float, v_n: float, state: AdaptiveState,
                     gains: AdaptiveGains) -> tuple[float, float]:
    """Supplementary (p~, q~) in pu.

    Only the voltage-error part of the designed input reaches ``p~``; the
    ``-k_pv * eta`` part is what the existing outer voltage loop already
    provides.  ``q~`` is identically zero.
    """
    if not state.sigma_hat > 0:
        raise ControllerError(f"sigma_hat must be positive, got {state.sigma_hat}")
    return float(_p_adaptive(gains.k, state.sigma_hat, v_n, vn_tilde)), 0.0


def designed_input(vn_tilde: float, eta: float, state: AdaptiveState, gains: AdaptiveGains) -> float:
    """u~ = -(k / sigma_hat) v_n~ - k_pv eta (the error-model input)."""
    return -gains.k / state.sigma_hat * vn_tilde - gains.k_pv * eta


def adaptation_step(vn_tilde: float, eta: float, vfi_tilde: float, state: AdaptiveState,
                    gains: AdaptiveGains, dt: float) -> float:
    """Forward-Euler step of the estimate followed by projection; updates ``state``."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    rate = _sigma_rate(gains.k, gains.p_v, gains.p_v_eta, gains.p_v_i, vn_tilde, eta, vfi_tilde,
                       state.sigma_hat)
    state.sigma_hat = float(project(state.sigma_hat + dt * rate, gains.sigma_lo, gains.sigma_hi))
    return state.sigma_hat


def sigma_rate(vn_tilde: float, eta: float, vfi_tilde: float, sigma_hat: float, gains: AdaptiveGains) -> float:
    """Unprojected adaptation rate."""
    return float(_sigma_rate(gains.k, gains.p_v, gains.p_v_eta, gains.p_v_i, vn_tilde, eta, vfi_tilde, sigma_hat))


def state_feedback_control(vn_tilde: float, k_sf: float, c_g0: float, v_n0: float) -> float:
    """Linear baseline ``p~ = 1.5 c_g0 v_n0 k_sf v_n~``."""
    return float(_p_state_feedback(vn_tilde, k_sf, c_g0, v_n0))
