"""Scenario events and their effect on the time-varying plant parameters."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .plant import P_CG, P_GF, P_LG, P_PREF, P_RG, PlantParams

EVENT_KINDS = ("step_p_ref", "ramp_c_g", "fault", "set_grid")


class EventError(ValueError):
    pass


@dataclass(frozen=True)
class Event:
    """One scheduled change.

    ``step_p_ref``: ``delta`` (pu) added to p_ref at ``time``.
    ``ramp_c_g``: c_g moves linearly to ``target`` between ``time`` and ``t_end``.
    ``fault``: shunt conductance ``admittance`` at the POI for ``duration`` s.
    ``set_grid``: nominal ``r_g``/``l_g`` replaced at ``time``.
    """

    time: float
    kind: str
    delta: float = 0.0
    target: float = 0.0
    t_end: float = 0.0
    admittance: float = 0.0
    duration: float = 0.0
    r_g: float | None = None
    l_g: float | None = None

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise EventError(f"unknown event kind {self.kind!r}")
        if not self.time >= 0:
            raise EventError("event time must be >= 0")
        if self.kind == "ramp_c_g":
            if not self.t_end > self.time:
                raise EventError("ramp_c_g requires t_end > time")
            if not self.target > 0:
                raise EventError("ramp_c_g target must be > 0")
        if self.kind == "fault" and not (self.admittance >= 0 and self.duration > 0):
            raise EventError("fault requires admittance >= 0 and duration > 0")
        if self.kind == "set_grid":
            if self.r_g is None and self.l_g is None:
                raise EventError("set_grid needs r_g and/or l_g")
            for v in (self.r_g, self.l_g):
                if v is not None and not v > 0:
                    raise EventError("set_grid values must be > 0")

    @classmethod
    def step_p_ref(cls, time: float, delta: float) -> "Event":
        return cls(time=time, kind="step_p_ref", delta=delta)

    @classmethod
    def ramp_c_g(cls, target: float, t_start: float, t_end: float) -> "Event":
        return cls(time=t_start, kind="ramp_c_g", target=target, t_end=t_end)

    @classmethod
    def fault(cls, time: float, admittance: float, duration: float) -> "Event":
        return cls(time=time, kind="fault", admittance=admittance, duration=duration)

    @classmethod
    def set_grid(cls, time: float, r_g: float | None = None, l_g: float | None = None) -> "Event":
        return cls(time=time, kind="set_grid", r_g=r_g, l_g=l_g)

    def to_dict(self) -> dict:
        d = {"time": self.time, "kind": self.kind}
        if self.kind == "step_p_ref":
            d["delta"] = self.delta
        elif self.kind == "ramp_c_g":
            d.update(target=self.target, t_end=self.t_end)
        elif self.kind == "fault":
            d.update(admittance=self.admittance, duration=self.duration)
        else:
            d.update({k: v for k, v in (("r_g", self.r_g), ("l_g", self.l_g)) if v is not None})
        return d


def apply_event(params: PlantParams, event: Event, t: float) -> PlantParams:
    """Parameters at time ``t`` after ``event`` acted on ``params``.

    ``params`` are the values just before the event; before ``event.time``
    they are returned unchanged.
    """
    if t < event.time:
        return params
    if event.kind == "step_p_ref":
        return params.replace(outer={"p_ref": params.outer.p_ref + event.delta})
    if event.kind == "ramp_c_g":
        c0 = params.grid.c_g
        frac = min(1.0, (t - event.time) / (event.t_end - event.time))
        return params.replace(grid={"c_g": c0 + (event.target - c0) * frac})
    if event.kind == "fault":
        if t < event.time + event.duration:
            return params.replace(grid={"fault_admittance": params.grid.fault_admittance + event.admittance})
        return params
    if event.kind == "set_grid":
        changes = {}
        if event.r_g is not None:
            changes["r_g"] = event.r_g
        if event.l_g is not None:
            changes["l_g"] = event.l_g
        return params.replace(grid=changes)
    raise EventError(f"unknown event kind {event.kind!r}")  # pragma: no cover


def params_at(params: PlantParams, events, t: float) -> PlantParams:
    """Fold all events (in list order) into the parameters seen at time ``t``."""
    for ev in events:
        params = apply_event(params, ev, t)
    return params


def snap_events(events, dt: float) -> list[Event]:
    """Move event times (and ramp/fault ends) to the nearest step boundary."""
    from dataclasses import replace

    def snap(v):
        return round(v / dt) * dt

    out = []
    for ev in events:
        kw = {"time": snap(ev.time)}
        if ev.kind == "ramp_c_g":
            kw["t_end"] = max(snap(ev.t_end), kw["time"] + dt)
        if ev.kind == "fault":
            kw["duration"] = max(snap(ev.time + ev.duration) - kw["time"], dt)
        out.append(replace(ev, **kw))
    return out


def schedule(params: PlantParams, events, times: np.ndarray) -> dict[int, np.ndarray]:
    """Packed-parameter trajectories for the event-driven entries.

    Returns ``{packed_index: values_at_times}`` covering p_ref, c_g, the
    fault conductance and the effective grid impedance.  Vectorized version
    of folding :func:`apply_event` over ``times``.
    """
    t = np.asarray(times, dtype=float)
    z = params.grid.z_scale
    p_ref = np.full(t.shape, params.outer.p_ref)
    c_g = np.full(t.shape, params.grid.c_g)
    g_f = np.full(t.shape, params.grid.fault_admittance)
    r_g = np.full(t.shape, params.grid.r_g)
    l_g = np.full(t.shape, params.grid.l_g)
    for ev in events:
        on = t >= ev.time
        if ev.kind == "step_p_ref":
            p_ref = np.where(on, p_ref + ev.delta, p_ref)
        elif ev.kind == "ramp_c_g":
            c0 = c_g.copy()
            frac = np.clip((t - ev.time) / (ev.t_end - ev.time), 0.0, 1.0)
            c_g = np.where(on, c0 + (ev.target - c0) * frac, c0)
        elif ev.kind == "fault":
            active = on & (t < ev.time + ev.duration)
            g_f = np.where(active, g_f + ev.admittance, g_f)
        elif ev.kind == "set_grid":
            if ev.r_g is not None:
                r_g = np.where(on, ev.r_g, r_g)
            if ev.l_g is not None:
                l_g = np.where(on, ev.l_g, l_g)
    return {P_PREF: p_ref, P_CG: c_g, P_GF: g_f, P_RG: r_g * z, P_LG: l_g * z}
