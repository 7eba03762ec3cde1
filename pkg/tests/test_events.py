import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssodamp.events import Event, EventError, params_at, schedule, snap_events
from ssodamp.plant import P_CG, P_GF, P_LG, P_PREF, P_RG, PlantParams

BASE = PlantParams()
EVENTS = [
    Event.step_p_ref(1.0, 0.035),
    Event.ramp_c_g(0.2454, 1.0, 11.0),
    Event.fault(2.0, 5.0, 0.1),
    Event.set_grid(3.0, r_g=0.02),
    Event.step_p_ref(3.0, -0.5),
]


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 15.0))
def test_vectorised_schedule_matches_fold(t):
    sched = schedule(BASE, EVENTS, np.array([t]))
    p = params_at(BASE, EVENTS, t)
    prm = p.pack()
    for idx in (P_PREF, P_CG, P_GF, P_RG, P_LG):
        assert sched[idx][0] == pytest.approx(prm[idx], rel=1e-14, abs=1e-15)


def test_ramp_endpoints_and_fault_window():
    t = np.array([0.5, 1.0, 6.0, 11.0, 12.0, 2.05, 2.1])
    s = schedule(BASE, EVENTS, t)
    assert s[P_CG][:5] == pytest.approx([0.0963, 0.0963, 0.0963 + 0.5 * (0.2454 - 0.0963), 0.2454, 0.2454])
    assert s[P_GF][5] == 5.0 and s[P_GF][6] == 0.0


def test_same_time_events_apply_in_list_order():
    evs = [Event.set_grid(1.0, l_g=0.2), Event.set_grid(1.0, l_g=0.3)]
    assert params_at(BASE, evs, 1.0).grid.l_g == 0.3
    assert schedule(BASE, evs, np.array([1.0]))[P_LG][0] == pytest.approx(0.3 * BASE.grid.z_scale)


def test_snap_events():
    (ev,) = snap_events([Event.ramp_c_g(0.2, 1.00002, 1.00003)], 50e-6)
    assert ev.time == pytest.approx(1.0) and ev.t_end > ev.time
    (f,) = snap_events([Event.fault(0.00001, 1.0, 1e-6)], 50e-6)
    assert f.duration == pytest.approx(50e-6)


def test_invalid_events():
    with pytest.raises(EventError):
        Event(time=0.0, kind="nope")
    with pytest.raises(EventError):
        Event.ramp_c_g(0.2, 2.0, 1.0)
    with pytest.raises(EventError):
        Event.fault(1.0, -1.0, 0.1)
    with pytest.raises(EventError):
        Event.set_grid(1.0)
    with pytest.raises(EventError):
        Event.step_p_ref(-1.0, 0.1)


def test_to_dict():
    assert Event.ramp_c_g(0.2, 1.0, 2.0).to_dict() == {"time": 1.0, "kind": "ramp_c_g", "target": 0.2, "t_end": 2.0}
