import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ssodamp.phasor import (FrameAngle, Phasor2, PerUnitBase, frequency_shift, inverse_park, magnitude,
                            park_transform, rotate_array, wrap_angle)

finite = st.floats(-1e3, 1e3, allow_nan=False)
angles = st.floats(-50.0, 50.0, allow_nan=False)


def balanced(amp, phase):
    return tuple(amp * math.cos(phase - k * 2 * math.pi / 3) for k in range(3))


def test_balanced_set_aligned_with_frame_maps_to_d_axis():
    ph = park_transform(balanced(1.3, 0.7), 0.7)
    assert ph.d == pytest.approx(1.3, abs=1e-14)
    assert ph.q == pytest.approx(0.0, abs=1e-14)


def test_quadrature_offset_shows_up_on_q():
    # phase leading the frame by 90 degrees lands on +q
    ph = park_transform(balanced(1.0, 0.2 + math.pi / 2), 0.2)
    assert ph.d == pytest.approx(0.0, abs=1e-14)
    assert ph.q == pytest.approx(1.0, abs=1e-14)


@given(finite, finite, angles)
def test_inverse_then_forward_round_trip(d, q, rho):
    back = park_transform(inverse_park(Phasor2(d, q), rho), FrameAngle(rho))
    scale = 1.0 + abs(d) + abs(q)
    assert abs(back.d - d) <= 1e-12 * scale
    assert abs(back.q - q) <= 1e-12 * scale


@given(finite, finite, finite, finite, angles)
def test_power_is_one_and_a_half_dot_product(vd, vq, id_, iq, rho):
    v = inverse_park(Phasor2(vd, vq), rho)
    i = inverse_park(Phasor2(id_, iq), rho)
    p_abc = sum(a * b for a, b in zip(v, i))
    assert p_abc == pytest.approx(1.5 * (vd * id_ + vq * iq), abs=1e-9 * (1 + abs(p_abc)))


@given(finite, finite, angles, angles)
def test_frequency_shift_composes_and_keeps_magnitude(d, q, a, b):
    ph = Phasor2(d, q)
    one = frequency_shift(frequency_shift(ph, a), b)
    two = frequency_shift(ph, a + b)
    assert magnitude(one) == pytest.approx(magnitude(ph), rel=1e-12, abs=1e-12)
    assert one.d == pytest.approx(two.d, abs=1e-9 * (1 + magnitude(ph)))
    assert one.q == pytest.approx(two.q, abs=1e-9 * (1 + magnitude(ph)))


def test_frequency_shift_matches_park_in_advanced_frame():
    abc = balanced(1.0, 0.4)
    assert frequency_shift(park_transform(abc, 0.1), 0.25).to_complex() == pytest.approx(
        park_transform(abc, 0.35).to_complex(), abs=1e-14)


def test_rotate_array_agrees_with_scalar():
    d = np.array([1.0, 0.2, -0.5])
    q = np.array([0.0, 0.3, 0.1])
    rd, rq = rotate_array(d, q, 0.6)
    for k in range(3):
        ph = frequency_shift(Phasor2(d[k], q[k]), 0.6)
        assert (rd[k], rq[k]) == pytest.approx((ph.d, ph.q), abs=1e-15)


@given(st.floats(-1e4, 1e4, allow_nan=False))
def test_wrap_angle_range(rho):
    w = wrap_angle(rho)
    assert -math.pi < w <= math.pi
    assert math.isclose(math.cos(w), math.cos(rho), abs_tol=1e-9)


def test_invalid_values_rejected():
    with pytest.raises(ValueError):
        Phasor2(float("nan"), 0.0)
    with pytest.raises(ValueError):
        FrameAngle(float("inf"))
    with pytest.raises(ValueError, match="s_base"):
        PerUnitBase(s_base=0.0)


def test_per_unit_base():
    b = PerUnitBase()
    assert b.omega_base == pytest.approx(2 * math.pi * 60)
    assert b.dc_to_ac_ratio == pytest.approx(48.9873 / (2 * 20 * math.sqrt(2 / 3)))
