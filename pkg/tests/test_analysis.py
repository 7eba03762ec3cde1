import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssodamp.analysis import (AnalysisError, ErrorState, LinearModel, ErrorTrajectory, damping_ratio, decay_bound_ok,
                              dissipativity_monitor, error_dynamics_rhs, linearize, lyapunov_value,
                              modal_analysis, residue, richardson_jacobian, simulate_error_dynamics, sso_modes)
from ssodamp.synthesis import closed_loop_matrix


def pair_matrix(re, im):
    return np.array([[re, im], [-im, re]])


def test_two_by_two_oracle_frequency_and_damping():
    (m,) = modal_analysis(pair_matrix(-0.0953, 33.6562))
    assert m.freq_hz == pytest.approx(5.3566, abs=1e-4)
    assert 100 * m.damping_ratio == pytest.approx(0.2832, abs=1e-3)
    assert m.participation.max() == 1.0


def test_damping_ratio_edge_cases():
    assert damping_ratio(0j) == 0.0
    assert damping_ratio(complex(-2.0, 0.0)) == 1.0
    assert damping_ratio(complex(1.0, 1.0)) < 0


def test_diagonal_system_participation_is_identity():
    modes = modal_analysis(np.diag([-1.0, -2.0, -3.0]))
    for m in modes:
        assert np.isclose(m.participation.sum(), 1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_residues_reconstruct_transfer_function(seed):
    rng = np.random.default_rng(seed)
    n = 4
    A = rng.normal(size=(n, n)) - 3 * np.eye(n)
    B = rng.normal(size=(n, 1))
    C = rng.normal(size=(1, n))

    model = LinearModel(A=A, B=B, C=C, labels=("a", "b", "c", "d"), x0=np.zeros(n))
    s = 0.7 + 2.1j
    G = (C @ np.linalg.solve(s * np.eye(n) - A, B))[0, 0]
    modes = modal_analysis(model, conjugate_pairs=False)
    approx = sum(residue(model, m) / (s - m.eigenvalue) for m in modes)
    assert approx == pytest.approx(G, rel=1e-8, abs=1e-10)


def test_linearize_linear_function_and_equilibrium_check():
    A = np.array([[0.0, 1.0], [-4.0, -0.2]])
    B = np.array([[0.0], [1.0]])
    model = linearize(lambda x, u: A @ x + B @ u, np.zeros(2), np.zeros(1))
    assert np.allclose(model.A, A, atol=1e-9) and np.allclose(model.B, B, atol=1e-9)
    with pytest.raises(AnalysisError):
        linearize(lambda x, u: A @ x + 1.0, np.zeros(2), np.zeros(1))


def test_richardson_consistency_is_small_on_smooth_function():
    J, cons = richardson_jacobian(lambda x: np.array([np.sin(x[0]) * x[1], np.exp(x[1])]), np.array([0.3, 0.2]))
    assert np.allclose(J, [[np.cos(0.3) * 0.2, np.sin(0.3)], [0.0, np.exp(0.2)]], atol=1e-9)
    assert cons < 1e-6


def test_plant_linearization_has_lightly_damped_sso_mode(nominal, nominal_x0):
    model = linearize(nominal, nominal_x0)
    assert model.consistency < 1e-6
    sso = sso_modes(modal_analysis(model))
    assert sso, "expected a mode below 1% damping in 4-7 Hz"
    names = [n for n, _ in sso[0].dominant_states(4)]
    assert "delta_pll" in names


def test_error_rhs_linear_part_matches_closed_loop_matrix(gains, certificate):
    rng = np.random.default_rng(1)
    for sigma in (gains.sigma_lo, gains.sigma_hi):
        e = np.r_[rng.normal(size=3) * 0.01, 0.0]
        d = error_dynamics_rhs(ErrorState.from_array(e), 0.0, sigma, gains, adapt=False)
        A = closed_loop_matrix(gains.k, sigma, certificate.spec)
        assert np.allclose(d.e_R, A @ e[:3], rtol=1e-12, atol=1e-15)
        assert d.sigma_tilde == 0.0


def test_error_rhs_zero_at_origin(gains):
    d = error_dynamics_rhs(ErrorState(0, 0, 0, 0.3), 0.0, gains.sigma_mid, gains)
    assert np.allclose(d.as_array(), 0.0)


def test_projection_keeps_estimate_in_interval(gains):
    e0 = np.array([0.05, 0.0, 0.0, gains.sigma_mid - gains.sigma_lo])
    traj = simulate_error_dynamics(e0, gains, 5.0, 1e-3, sigma=gains.sigma_mid)
    sh = traj.sigma_hat
    assert np.all(sh >= gains.sigma_lo - 1e-12) and np.all(sh <= gains.sigma_hi + 1e-12)


def test_decay_and_monitor_on_certified_gains(certificate, gains):
    e0 = np.array([0.01, -0.005, 0.0005, 0.0])
    traj = simulate_error_dynamics(e0, gains, 10.0, 1e-3, sigma=gains.sigma_hi, adapt=False)
    ok, worst = decay_bound_ok(traj, certificate.P, certificate.spec.alpha)
    assert ok, worst
    rep = dissipativity_monitor(traj, certificate.P, certificate.gamma_bar)
    assert rep.passed and rep.worst_margin >= -rep.eps_int


def test_lyapunov_value_vectorised(certificate):
    e = np.array([[0.1, 0.2, 0.3, 0.4], [0.0, 0.0, 0.0, 1.0]])
    v = lyapunov_value(e, certificate.P)
    assert v[0] == pytest.approx(lyapunov_value(e[0], certificate.P))
    assert v[1] == pytest.approx(0.5)


def test_monitor_needs_disturbance_channel(certificate):
    traj = ErrorTrajectory(t=np.arange(3.0), e_F=np.zeros((3, 4)), w_sigma=None, sigma=np.ones(3))
    with pytest.raises(AnalysisError):
        dissipativity_monitor(traj, certificate.P, certificate.gamma_bar)
