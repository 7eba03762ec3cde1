import pytest
from hypothesis import given
from hypothesis import strategies as st

from ssodamp.controller import (AdaptiveGains, AdaptiveState, ControllerError, adaptation_step, adaptive_control,
                                designed_input, error_signals, integrate_vfi, project, sigma_rate,
                                state_feedback_control)

G = AdaptiveGains(p_v=1.7, p_v_eta=0.01, p_v_i=-0.02, k=56.0, k_pv=8.35, psi=20.0, beta=20.0,
                  sigma_lo=8.1487, sigma_hi=10.3896)
small = st.floats(-0.2, 0.2, allow_nan=False)


def test_adaptive_law_value_and_zero_q():
    st_ = AdaptiveState(sigma_hat=9.0)
    p, q = adaptive_control(0.01, 0.0, 1.0, st_, G)
    assert p == pytest.approx(-1.5 * 56.0 * 1.0 * 0.01 / 9.0)
    assert q == 0.0


@given(small, small, st.floats(0.8, 1.2), st.floats(8.1487, 10.3896))
def test_applied_power_carries_the_voltage_part_of_the_designed_input(vn, eta, v_n, sh):
    s = AdaptiveState(sigma_hat=sh)
    p, _ = adaptive_control(vn, eta, v_n, s, G)
    u = designed_input(vn, eta, s, G)
    assert p == pytest.approx(1.5 * v_n * (u + G.k_pv * eta), rel=1e-9, abs=1e-12)


def test_nonpositive_estimate_is_an_error():
    with pytest.raises(ControllerError):
        adaptive_control(0.01, 0.0, 1.0, AdaptiveState(sigma_hat=0.0), G)


@given(st.floats(-100, 100, allow_nan=False))
def test_projection(sigma):
    v = project(sigma, G.sigma_lo, G.sigma_hi)
    assert G.sigma_lo <= v <= G.sigma_hi
    if G.sigma_lo <= sigma <= G.sigma_hi:
        assert v == sigma


@given(small, small, small, st.floats(1e-6, 1.0))
def test_adaptation_step_stays_in_interval(vn, eta, vfi, dt):
    s = AdaptiveState.armed(G, 1.0)
    for _ in range(5):
        adaptation_step(vn, eta, vfi, s, G, dt)
        assert G.sigma_lo <= s.sigma_hat <= G.sigma_hi


def test_adaptation_rate_formula():
    r = sigma_rate(0.01, 0.02, 0.003, 9.0, G)
    assert r == pytest.approx(-56.0 * (1.7 * 0.01 + 0.01 * 0.02 - 0.02 * 0.003) * 0.01 / 9.0)
    s = AdaptiveState(sigma_hat=9.0)
    adaptation_step(0.01, 0.02, 0.003, s, G, 1e-3)
    assert s.sigma_hat == pytest.approx(9.0 + 1e-3 * r)


def test_error_signals_and_trapezoid():
    s = AdaptiveState.armed(G, v_n0=1.0)
    assert s.sigma_hat == pytest.approx(G.sigma_mid)
    # integrand ramps linearly 0 -> 0.1 over 1 s: trapezoid is exact
    for k in range(1, 11):
        integrate_vfi(s, 0.01 * k, 0.1)
    assert s.v_fi_tilde == pytest.approx(0.05, abs=1e-15)
    vn, vf, eta = error_signals(1.02, 1.01, 1.0, G, s)
    assert (vn, vf) == pytest.approx((0.02, 0.01))
    assert eta == pytest.approx(0.01 + 20.0 * 0.05)


def test_state_feedback_formula():
    assert state_feedback_control(0.01, -22.0, 0.0963, 1.0) == pytest.approx(1.5 * 0.0963 * -22.0 * 0.01)


def test_gain_validation():
    with pytest.raises(ValueError):
        AdaptiveGains(p_v=1, p_v_eta=0, p_v_i=0, k=-1, k_pv=1, psi=1, beta=1, sigma_lo=1, sigma_hi=2)
    with pytest.raises(ValueError):
        AdaptiveGains(p_v=1, p_v_eta=0, p_v_i=0, k=1, k_pv=1, psi=1, beta=1, sigma_lo=3, sigma_hi=2)
    with pytest.raises(ValueError):
        adaptation_step(0, 0, 0, AdaptiveState(9.0), G, 0.0)
