"""Command line entry point: ``ssodamp <command> --config run.toml``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .simulation import CONTROLLERS
from .synthesis import InfeasibleError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ssodamp", description="Adaptive SSO damping lab.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="TOML scenario file")
        p.add_argument("--out-dir", default="out", help="directory for artifacts (default: out)")
        p.add_argument("--seed", type=int, default=0, help="seed for randomized runs")
        return p

    common(sub.add_parser("synthesize", help="solve the design problem and write certificate.json"))
    p = common(sub.add_parser("simulate", help="run the configured scenario"))
    p.add_argument("--controller", choices=CONTROLLERS)
    p.add_argument("--dt", type=float)
    p.add_argument("--duration", type=float)
    p.add_argument("--model", choices=("plant", "reduced"), default="plant",
                   help="full plant or reduced error dynamics (default: plant)")
    common(sub.add_parser("linearize", help="write the A matrix and modal table"))
    p = common(sub.add_parser("verify", help="dissipativity check of a trajectory CSV"), config_required=False)
    p.add_argument("--trajectory", required=True)
    p.add_argument("--certificate", required=True)
    p = common(sub.add_parser("sweep", help="step-size sweep table"))
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--dt", type=float)
    p.add_argument("--duration", type=float)
    return ap


def _emit(obj):
    from .lab import _clean

    print(json.dumps(_clean(obj), indent=2))


def _synthesize(args, cfg) -> int:
    from .lab import write_json
    from .synthesis import synthesize

    out = Path(args.out_dir)
    try:
        cert, table = synthesize(cfg.design, return_table=True)
    except InfeasibleError as exc:
        write_json(out / "synthesis_table.json", exc.table)
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_FAIL
    write_json(out / "certificate.json", cert.to_dict())
    write_json(out / "synthesis_table.json", table)
    _emit({"k": cert.vars.k, "x_lo": cert.vars.x_lo, "gamma_bar": cert.gamma_bar, "min_eigs": cert.min_eigs,
           "certificate": str(out / "certificate.json")})
    return EXIT_OK


def _simulate(args, cfg) -> int:
    from .lab import obtain_certificate, run_reduced, run_scenario, with_overrides, write_json

    cfg = with_overrides(cfg, args.dt, args.duration)
    if args.model == "reduced":
        cert = obtain_certificate(cfg)
        traj = run_reduced(cert, duration=cfg.scenario.duration, dt=args.dt or 1e-3, seed=args.seed,
                           out_dir=args.out_dir, name=f"{cfg.scenario.name}_reduced")
        write_json(Path(args.out_dir) / "certificate.json", cert.to_dict())
        _emit({"samples": int(traj.t.size), "csv": str(Path(args.out_dir) / f"{cfg.scenario.name}_reduced.csv")})
        return EXIT_OK
    report = run_scenario(cfg, args.out_dir, mode=args.controller)
    _emit(report.to_dict())
    return EXIT_OK if report.verdict == "settled" else EXIT_FAIL


def _linearize(args, cfg) -> int:
    from .lab import run_linearize

    res = run_linearize(cfg, args.out_dir)
    res.pop("model")
    _emit({"n_modes": len(res["modes"]), "least_damped": res["modes"][:3], "consistency": res["consistency"]})
    return EXIT_OK


def _verify(args) -> int:
    from .lab import load_certificate, verify_trajectory, write_json

    try:
        cert = load_certificate(args.certificate)
    except (OSError, ValueError, KeyError) as exc:
        print(f"cannot load certificate: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        rep = verify_trajectory(args.trajectory, cert)
    except (OSError, ValueError) as exc:
        print(f"cannot read trajectory: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    write_json(Path(args.out_dir) / "verify.json", rep.to_dict())
    _emit(rep.to_dict())
    return EXIT_OK if rep.passed else EXIT_FAIL


def _sweep(args, cfg) -> int:
    from .lab import run_sweep, with_overrides

    cfg = with_overrides(cfg, args.dt, args.duration)
    summary = run_sweep(cfg, args.out_dir, workers=args.workers)
    _emit({"settled_steps": summary["settled_steps"],
           "adaptive_strictly_contains_sf": summary.get("adaptive_strictly_contains_sf")})
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "verify":
        return _verify(args)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    handler = {"synthesize": _synthesize, "simulate": _simulate, "linearize": _linearize, "sweep": _sweep}
    try:
        return handler[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
