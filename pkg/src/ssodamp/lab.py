"""Scenario runner: turns a validated configuration into runs and artifacts on disk."""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .analysis import ErrorTrajectory, dissipativity_monitor, linearize, modal_analysis, simulate_error_dynamics
from .config import LabConfig
from .events import Event
from .plant import steady_state_init
from .simulation import ControllerConfig, RunReport, build_report, decimated_table, simulate
from .synthesis import Certificate, synthesize

CSV_FMT = "%.17g"


def _clean(obj):
    """JSON-safe copy: numpy scalars/arrays converted, non-finite floats become None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n")
    return path


def write_csv(path, header: list[str], data: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, data, fmt=CSV_FMT, delimiter=",", header=",".join(header), comments="")
    return path


def read_csv(path) -> dict[str, np.ndarray]:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != len(header):
        raise ValueError(f"{path}: {len(header)} header fields but {data.shape[1]} columns")
    return {name: data[:, i] for i, name in enumerate(header)}


# ---------------------------------------------------------------- certificates

def load_certificate(path) -> Certificate:
    return Certificate.from_dict(json.loads(Path(path).read_text()))


def obtain_certificate(cfg: LabConfig) -> Certificate:
    """The configured certificate file, or a fresh synthesis from ``[design]``."""
    if cfg.controller.certificate:
        p = Path(cfg.controller.certificate)
        if not p.is_absolute() and cfg.source:
            p = Path(cfg.source).parent / p
        return load_certificate(p)
    return synthesize(cfg.design)


def controller_config(cfg: LabConfig, mode: str | None = None, certificate: Certificate | None = None) -> ControllerConfig:
    mode = mode or cfg.controller.mode
    c = cfg.controller
    gains = None
    if mode == "adaptive":
        gains = (certificate or obtain_certificate(cfg)).gains()
    return ControllerConfig(mode=mode, gains=gains, sigma_hat0=c.sigma_hat0, adapt=c.adapt, k_sf=c.k_sf,
                            c_g0=c.c_g0 if c.c_g0 is not None else cfg.plant.grid.c_g, v_n_filter=c.v_n_filter)


# ---------------------------------------------------------------- runs

def run_scenario(cfg: LabConfig, out_dir=None, mode: str | None = None, dt: float | None = None,
                 duration: float | None = None, events: list[Event] | None = None, name: str | None = None,
                 certificate: Certificate | None = None) -> RunReport:
    """Simulate one scenario; with ``out_dir`` write ``<name>_<mode>.csv`` and ``..._report.json``."""
    sc = cfg.scenario
    mode = mode or cfg.controller.mode
    if mode == "adaptive" and certificate is None:
        certificate = obtain_certificate(cfg)
    ctrl = controller_config(cfg, mode, certificate)
    events = sc.events if events is None else events
    name = name or sc.name
    trace = simulate(cfg.plant, ctrl, events, duration or sc.duration, dt=dt or sc.dt, decimation=sc.decimation)
    report = build_report(name, ctrl, trace, events, certificate if mode == "adaptive" else None)
    if out_dir is not None:
        out = Path(out_dir)
        header, table = decimated_table(cfg.plant, trace, sc.outputs)
        stem = f"{name}_{mode}"
        write_csv(out / f"{stem}.csv", header, table)
        report.extras["csv"] = str(out / f"{stem}.csv")
        write_json(out / f"{stem}_report.json", report.to_dict())
    return report


def _sweep_point(args):
    cfg, mode, step, cert = args
    events = [Event.step_p_ref(1.0, step * cfg.plant.outer.p_ref)]
    if cfg.sweep.ramp_c_g:
        events += [e for e in cfg.scenario.events if e.kind == "ramp_c_g"]
        events.sort(key=lambda e: e.time)
    rep = run_scenario(cfg, None, mode=mode, events=events, name=f"sweep_{step:g}", certificate=cert)
    return {"controller": mode, "step": step, "verdict": rep.verdict, "settling_time": rep.settling_time,
            "max_abs_p_tilde": rep.max_abs_p_tilde, "last_finite_time": rep.last_finite_time,
            "envelope_ratio_max": rep.envelope_ratio_max}


def run_sweep(cfg: LabConfig, out_dir=None, workers: int = 1) -> dict:
    """Step-size sweep over the configured controllers.

    Results are independent of ``workers``: every point is a deterministic
    run and rows are returned in (controller, step) order.
    """
    cert = obtain_certificate(cfg) if "adaptive" in cfg.sweep.controllers else None
    jobs = [(cfg, m, s, cert if m == "adaptive" else None) for m in cfg.sweep.controllers for s in cfg.sweep.steps]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_point, jobs))
    else:
        rows = [_sweep_point(j) for j in jobs]
    settled = {m: sorted(r["step"] for r in rows if r["controller"] == m and r["verdict"] == "settled")
               for m in cfg.sweep.controllers}
    summary = {"rows": rows, "settled_steps": settled}
    if {"sf", "adaptive"} <= set(settled):
        a, s = set(settled["adaptive"]), set(settled["sf"])
        summary["adaptive_strictly_contains_sf"] = s < a
    if out_dir is not None:
        out = Path(out_dir)
        header = ["step", "controller_index", "settled", "settling_time", "max_abs_p_tilde", "last_finite_time"]
        modes = list(cfg.sweep.controllers)
        data = np.array([[r["step"], modes.index(r["controller"]), r["verdict"] == "settled",
                          np.nan if r["settling_time"] is None else r["settling_time"], r["max_abs_p_tilde"],
                          r["last_finite_time"]] for r in rows], dtype=float)
        write_csv(out / "sweep.csv", header, data)
        write_json(out / "sweep.json", dict(summary, controllers=modes))
    return summary


def run_linearize(cfg: LabConfig, out_dir=None) -> dict:
    """A matrix and modal table at the configured operating point."""
    x0 = steady_state_init(cfg.plant)
    model = linearize(cfg.plant, x0)
    modes = modal_analysis(model)
    table = [{"eigenvalue": [m.eigenvalue.real, m.eigenvalue.imag], "freq_hz": m.freq_hz,
              "damping_ratio": m.damping_ratio, "dominant_states": m.dominant_states(3)} for m in modes]
    result = {"labels": list(model.labels), "consistency": model.consistency, "modes": table}
    if out_dir is not None:
        out = Path(out_dir)
        write_csv(out / "A.csv", list(model.labels), model.A)
        write_json(out / "modes.json", result)
    result["model"] = model
    return result


# ---------------------------------------------------------------- reduced-model runs and verification

def run_reduced(cert: Certificate, duration: float = 20.0, dt: float = 1e-3, seed: int = 0,
                out_dir=None, name: str = "reduced") -> ErrorTrajectory:
    """Reduced closed loop from a random initial error with a bounded sinusoidal disturbance."""
    rng = np.random.default_rng(seed)
    g = cert.gains()
    sigma_true = g.sigma_mid
    e0 = np.concatenate([rng.normal(scale=0.05, size=3), [sigma_true - rng.uniform(g.sigma_lo, g.sigma_hi)]])
    amp, freq = rng.uniform(0.0, 0.05), rng.uniform(0.5, 10.0)
    n = int(round(duration / dt))
    t = np.arange(n + 1) * dt
    traj = simulate_error_dynamics(e0, g, duration, dt, sigma=sigma_true, w_sigma=amp * np.sin(2 * np.pi * freq * t))
    if out_dir is not None:
        header = ["time", "v_n_tilde", "eta", "v_fi_tilde", "sigma_hat", "sigma", "w_sigma"]
        data = np.column_stack([traj.t, traj.e_F[:, :3], traj.sigma_hat, traj.sigma, traj.w_sigma])
        write_csv(Path(out_dir) / f"{name}.csv", header, data)
    return traj


def trajectory_from_csv(path) -> ErrorTrajectory:
    """Error trajectory from a run CSV (reduced-model or plant run)."""
    cols = read_csv(path)
    need = ("time", "v_n_tilde", "eta", "v_fi_tilde", "sigma_hat", "w_sigma")
    missing = [c for c in need if c not in cols]
    if missing:
        raise ValueError(f"{path}: missing columns {missing}")
    if "sigma" in cols:
        sigma = cols["sigma"]
    elif "c_g" in cols:
        sigma = 1.0 / cols["c_g"]
    else:
        raise ValueError(f"{path}: needs a 'sigma' or 'c_g' column")
    e_F = np.column_stack([cols["v_n_tilde"], cols["eta"], cols["v_fi_tilde"], sigma - cols["sigma_hat"]])
    return ErrorTrajectory(t=cols["time"], e_F=e_F, w_sigma=cols["w_sigma"], sigma=sigma)


def verify_trajectory(csv_path, cert: Certificate):
    return dissipativity_monitor(trajectory_from_csv(csv_path), cert.P, cert.gamma_bar)


def with_overrides(cfg: LabConfig, dt: float | None = None, duration: float | None = None) -> LabConfig:
    sc = cfg.scenario
    sc = replace(sc, dt=dt or sc.dt, duration=duration or sc.duration)
    return replace(cfg, scenario=sc)
