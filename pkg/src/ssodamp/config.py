"""TOML configuration: parsing, defaults and validation with field paths."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli

from .events import EVENT_KINDS, Event, EventError
from .phasor import Phasor2, PerUnitBase
from .plant import ConverterParams, GridParams, OuterLoopParams, PlantParams, PllParams
from .simulation import CONTROLLERS, all_output_names, default_outputs
from .synthesis import DesignSpec


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass
class ControllerSettings:
    mode: str = "adaptive"
    k_sf: float = -22.0
    c_g0: float | None = None  # defaults to the grid's nominal c_g
    sigma_hat0: float | None = None
    adapt: bool = True
    v_n_filter: float = 0.0
    certificate: str | None = None


@dataclass
class ScenarioSpec:
    name: str = "scenario"
    duration: float = 20.0
    dt: float = 50e-6
    decimation: float = 1e-3
    events: list[Event] = field(default_factory=list)
    outputs: list[str] = field(default_factory=default_outputs)


@dataclass
class SweepSpec:
    steps: list[float] = field(default_factory=lambda: [0.005 * i for i in range(1, 11)])
    controllers: list[str] = field(default_factory=lambda: ["sf", "adaptive"])
    ramp_c_g: bool = False


@dataclass
class LabConfig:
    plant: PlantParams
    controller: ControllerSettings
    design: DesignSpec
    scenario: ScenarioSpec
    sweep: SweepSpec
    source: str = ""


_SECTIONS = ("base", "grid", "converter", "pll", "outer", "plant", "controller", "design", "scenario", "sweep")
_CLASS_NAMES = {"base": "PerUnitBase", "grid": "GridParams", "converter": "ConverterParams", "pll": "PllParams",
                "outer": "OuterLoopParams", "plant": "PlantParams", "controller": "ControllerSettings",
                "design": "DesignSpec", "scenario": "Scenario", "sweep": "Sweep"}


def _check_keys(table: dict, allowed, path: str):
    for key in table:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown key")


def _num(table: dict, key: str, path: str, default=None, positive=False, nonneg=False, required=False):
    if key not in table:
        if required:
            raise ConfigError(f"{path}.{key}", "required value missing")
        return default
    v = table[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}.{key}", f"expected a number, got {type(v).__name__}")
    v = float(v)
    if not math.isfinite(v):
        raise ConfigError(f"{path}.{key}", "must be finite")
    if positive and not v > 0:
        raise ConfigError(f"{path}.{key}", f"must be > 0, got {v}")
    if nonneg and not v >= 0:
        raise ConfigError(f"{path}.{key}", f"must be >= 0, got {v}")
    return v


def _dataclass_section(cls, table: dict, path: str, extra_allowed=(), required=()):
    names = [f.name for f in dataclasses.fields(cls)]
    _check_keys(table, list(names) + list(extra_allowed), path)
    kw = {}
    for name in names:
        if name in table and name not in extra_allowed:
            f = next(f for f in dataclasses.fields(cls) if f.name == name)
            if f.type in ("bool", bool):
                if not isinstance(table[name], bool):
                    raise ConfigError(f"{path}.{name}", "expected true/false")
                kw[name] = table[name]
            else:
                kw[name] = _num(table, name, path)
        elif name in required:
            raise ConfigError(f"{path}.{name}", "required value missing")
    try:
        return cls(**kw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(path, str(exc)) from exc


def _grid(table: dict) -> GridParams:
    path = "grid"
    _check_keys(table, [f.name for f in dataclasses.fields(GridParams)], path)
    for bound in ("c_g_lo", "c_g_hi"):
        if bound not in table:
            raise ConfigError(f"grid.{bound}", "GridParams.c_g bounds are required (c_g_lo, c_g_hi)")
    kw = {}
    for name in ("r_g", "l_g", "c_g", "omega_s", "fault_admittance", "c_g_lo", "c_g_hi", "z_scale"):
        if name in table:
            kw[name] = _num(table, name, path)
    if "v_g" in table:
        vg = table["v_g"]
        if not (isinstance(vg, list) and len(vg) == 2):
            raise ConfigError("grid.v_g", "expected [d, q]")
        kw["v_g"] = Phasor2(float(vg[0]), float(vg[1]))
    try:
        g = GridParams(**kw)
    except ValueError as exc:
        raise ConfigError("grid", str(exc)) from exc
    if not g.c_g_lo <= g.c_g <= g.c_g_hi:
        raise ConfigError("grid.c_g", f"GridParams.c_g = {g.c_g} outside [c_g_lo, c_g_hi] = [{g.c_g_lo}, {g.c_g_hi}]")
    return g


def _events(items, path: str) -> list[Event]:
    if not isinstance(items, list):
        raise ConfigError(path, "expected an array of tables")
    out = []
    allowed = {"time", "kind", "delta", "target", "t_end", "t_start", "admittance", "duration", "r_g", "l_g",
               "delta_percent"}
    for i, item in enumerate(items):
        p = f"{path}[{i}]"
        if not isinstance(item, dict):
            raise ConfigError(p, "expected a table")
        _check_keys(item, allowed, p)
        kind = item.get("kind")
        if kind not in EVENT_KINDS:
            raise ConfigError(f"{p}.kind", f"must be one of {EVENT_KINDS}, got {kind!r}")
        time = _num(item, "t_start" if kind == "ramp_c_g" and "t_start" in item else "time", p, required=True,
                    nonneg=True)
        try:
            if kind == "step_p_ref":
                if "delta_percent" in item:
                    raise ConfigError(f"{p}.delta_percent", "resolved by the caller; use delta")
                ev = Event.step_p_ref(time, _num(item, "delta", p, required=True))
            elif kind == "ramp_c_g":
                ev = Event.ramp_c_g(_num(item, "target", p, required=True, positive=True), time,
                                    _num(item, "t_end", p, required=True))
            elif kind == "fault":
                ev = Event.fault(time, _num(item, "admittance", p, required=True, nonneg=True),
                                 _num(item, "duration", p, required=True, positive=True))
            else:
                ev = Event.set_grid(time, _num(item, "r_g", p, positive=True), _num(item, "l_g", p, positive=True))
        except EventError as exc:
            raise ConfigError(p, str(exc)) from exc
        out.append(ev)
    return out


def _resolve_percent_steps(items, p_ref: float):
    """Allow ``delta_percent`` on step events (percent of the nominal p_ref)."""
    if not isinstance(items, list):
        return items
    out = []
    for item in items:
        if isinstance(item, dict) and "delta_percent" in item:
            item = dict(item)
            pct = item.pop("delta_percent")
            if isinstance(pct, bool) or not isinstance(pct, (int, float)):
                raise ConfigError("scenario.events.delta_percent", "expected a number")
            item["delta"] = p_ref * float(pct) / 100.0
        out.append(item)
    return out


def parse_config(data: dict, source: str = "") -> LabConfig:
    _check_keys(data, _SECTIONS, "")
    if "base" not in data:
        raise ConfigError("base", "the per-unit base block is mandatory")
    sec = {name: data.get(name, {}) for name in _SECTIONS}
    for name, table in sec.items():
        if not isinstance(table, dict):
            raise ConfigError(name, "expected a table")
    base = _dataclass_section(PerUnitBase, sec["base"], "base", required=("s_base", "v_ac_base", "v_dc_base", "f_base"))
    if "grid" not in data:
        raise ConfigError("grid.c_g_lo", "GridParams.c_g bounds are required (c_g_lo, c_g_hi)")
    grid = _grid(sec["grid"])
    conv = _dataclass_section(ConverterParams, sec["converter"], "converter")
    pll = _dataclass_section(PllParams, sec["pll"], "pll")
    outer = _dataclass_section(OuterLoopParams, sec["outer"], "outer")
    _check_keys(sec["plant"], ["v_d_floor"], "plant")
    v_floor = _num(sec["plant"], "v_d_floor", "plant", default=0.05, positive=True)
    plant = PlantParams(grid=grid, converter=conv, pll=pll, outer=outer, base=base, v_d_floor=v_floor)

    c = sec["controller"]
    _check_keys(c, [f.name for f in dataclasses.fields(ControllerSettings)], "controller")
    mode = c.get("mode", "adaptive")
    if mode not in CONTROLLERS:
        raise ConfigError("controller.mode", f"must be one of {CONTROLLERS}, got {mode!r}")
    adapt = c.get("adapt", True)
    if not isinstance(adapt, bool):
        raise ConfigError("controller.adapt", "expected true/false")
    cert = c.get("certificate")
    if cert is not None and not isinstance(cert, str):
        raise ConfigError("controller.certificate", "expected a path string")
    ctrl = ControllerSettings(
        mode=mode, k_sf=_num(c, "k_sf", "controller", default=-22.0),
        c_g0=_num(c, "c_g0", "controller", default=grid.c_g, positive=True),
        sigma_hat0=_num(c, "sigma_hat0", "controller", positive=True),
        adapt=adapt, v_n_filter=_num(c, "v_n_filter", "controller", default=0.0, nonneg=True),
        certificate=cert,
    )

    d = sec["design"]
    allowed = [f.name for f in dataclasses.fields(DesignSpec)]
    _check_keys(d, allowed, "design")
    kw = {}
    for name in allowed:
        if name == "k_grid":
            continue
        if name in d:
            kw[name] = _num(d, name, "design")
    kw.setdefault("psi", outer.psi)
    kw.setdefault("beta", outer.beta)
    kw.setdefault("k_pv", outer.k_pv)
    if "k_grid" in d:
        kg = d["k_grid"]
        if isinstance(kg, dict):
            _check_keys(kg, ["min", "max", "n"], "design.k_grid")
            lo = _num(kg, "min", "design.k_grid", required=True, positive=True)
            hi = _num(kg, "max", "design.k_grid", required=True, positive=True)
            n = int(_num(kg, "n", "design.k_grid", required=True, positive=True))
            kw["k_grid"] = tuple(float(v) for v in np.geomspace(lo, hi, n))
        elif isinstance(kg, list) and kg:
            kw["k_grid"] = tuple(_num({"k": v}, "k", f"design.k_grid[{i}]", positive=True) for i, v in enumerate(kg))
        else:
            raise ConfigError("design.k_grid", "expected a non-empty list or {min, max, n}")
    try:
        design = DesignSpec(**kw)
    except ValueError as exc:
        raise ConfigError("design", str(exc)) from exc

    s = sec["scenario"]
    _check_keys(s, ["name", "duration", "dt", "decimation", "events", "outputs"], "scenario")
    name = s.get("name", "scenario")
    if not isinstance(name, str):
        raise ConfigError("scenario.name", "expected a string")
    events = _events(_resolve_percent_steps(s.get("events", []), outer.p_ref), "scenario.events")
    times = [e.time for e in events]
    if times != sorted(times):
        raise ConfigError("scenario.events", "events must be listed in time order")
    outputs = s.get("outputs", default_outputs())
    if not (isinstance(outputs, list) and all(isinstance(o, str) for o in outputs)):
        raise ConfigError("scenario.outputs", "expected a list of channel names")
    known = all_output_names()
    for o in outputs:
        if o not in known:
            raise ConfigError("scenario.outputs", f"unknown channel {o!r}")
    scen = ScenarioSpec(
        name=name,
        duration=_num(s, "duration", "scenario", default=20.0, positive=True),
        dt=_num(s, "dt", "scenario", default=50e-6, positive=True),
        decimation=_num(s, "decimation", "scenario", default=1e-3, positive=True),
        events=events, outputs=list(outputs),
    )

    w = sec["sweep"]
    _check_keys(w, ["steps", "controllers", "ramp_c_g"], "sweep")
    sweep = SweepSpec()
    if "steps" in w:
        if not (isinstance(w["steps"], list) and w["steps"]):
            raise ConfigError("sweep.steps", "expected a non-empty list of fractions")
        sweep.steps = [_num({"s": v}, "s", f"sweep.steps[{i}]", positive=True) for i, v in enumerate(w["steps"])]
    if "controllers" in w:
        for m in w["controllers"]:
            if m not in CONTROLLERS:
                raise ConfigError("sweep.controllers", f"unknown controller {m!r}")
        sweep.controllers = list(w["controllers"])
    if "ramp_c_g" in w:
        if not isinstance(w["ramp_c_g"], bool):
            raise ConfigError("sweep.ramp_c_g", "expected true/false")
        sweep.ramp_c_g = w["ramp_c_g"]
    return LabConfig(plant=plant, controller=ctrl, design=design, scenario=scen, sweep=sweep, source=source)


def load_config(path) -> LabConfig:
    """Read and validate a TOML configuration file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read: {exc.strerror}") from exc
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(str(path), f"parse error: {exc}") from exc
    return parse_config(data, source=str(path))
