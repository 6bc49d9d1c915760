"""Command-line entry point for the simulation studies.

Every subcommand writes CSV (metadata comments, then a header row, then data)
and is deterministic for a fixed seed and configuration.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .experiments import (MICROBENCH_AXES, Scenario, gdop_scenarios,
                          load_scenario, load_trajectory, mac_tables,
                          make_trajectory, run_ambiguity_maps,
                          run_calibrate_demo, run_heatmap, run_microbench,
                          run_noise_sweep, run_tracking, write_csv)
from .geometry import Environment
from .macsim import MacConfig, load_mac_config, run_mac
from .measurement import NoiseModel

DEG = math.pi / 180.0


def _scenario_from_args(args, default: str = "joint") -> Scenario:
    if args.config:
        scenario = load_scenario(args.config)
    else:
        name = getattr(args, "scenario", None) or default
        suite = gdop_scenarios(seed=args.seed)
        if name not in suite:
            raise SystemExit(f"unknown scenario {name!r}; choose from "
                             f"{sorted(suite)} or pass --config")
        scenario = suite[name]
    updates = {"seed": args.seed}
    if getattr(args, "trials", None):
        updates["trials"] = args.trials
    if getattr(args, "grid_res", None):
        updates["eval_res"] = args.grid_res
    return replace(scenario, **updates)


def cmd_heatmap(args) -> int:
    scenario = _scenario_from_args(args)
    table = run_heatmap(scenario)
    write_csv(table, args.out)
    print(f"{scenario.name}: global median "
          f"{float(table.meta['global_median_err_m']) * 100:.2f} cm "
          f"-> {args.out}")
    return 0


def cmd_sweep_noise(args) -> int:
    scenario = _scenario_from_args(args)
    sigma_theta = [float(v) * DEG for v in args.sigma_theta_deg.split(",")]
    sigma_t = [float(v) * 1e-12 for v in args.sigma_t_ps.split(",")]
    table = run_noise_sweep(scenario, sigma_theta, sigma_t,
                            trials=args.trials or 500)
    write_csv(table, args.out)
    print(f"noise sweep ({len(table.rows)} cells) -> {args.out}")
    return 0


def cmd_microbench(args) -> int:
    scenario = _scenario_from_args(args)
    table = run_microbench(scenario, args.axis, trials=args.trials or 200)
    write_csv(table, args.out)
    print(f"microbench axis={args.axis} -> {args.out}")
    return 0


def cmd_track(args) -> int:
    scenario = _scenario_from_args(args)
    if scenario.estimator != "joint-pf":
        scenario = replace(scenario, estimator="joint-pf",
                           pf_process_noise=args.process_noise)
    if args.trajectory_file:
        traj = load_trajectory(args.trajectory_file)
    else:
        traj = make_trajectory(args.trajectory, scenario.env,
                               duration_s=args.duration, rate_hz=args.rate)
    table = run_tracking(scenario, traj)
    write_csv(table, args.out)
    print(f"tracking {args.trajectory}: median err "
          f"{float(table.meta['median_err_m']) * 100:.2f} cm -> {args.out}")
    return 0


def cmd_ambiguity(args) -> int:
    n_list = [int(v) for v in args.n_list.split(",")]
    noise = None
    if args.noisy:
        noise = NoiseModel(sigma_t=150e-12, sigma_theta=5.0 * DEG)
    tables = run_ambiguity_maps(n_list, aperture=args.aperture,
                                env=Environment(), grid_res=args.grid_res
                                or 0.01, noise=noise, seed=args.seed,
                                pairing=args.pairing)
    out = Path(args.out)
    for n, table in tables.items():
        path = out.with_name(f"{out.stem}_n{n}{out.suffix}")
        write_csv(table, path)
        print(f"ambiguity surfaces N={n} -> {path}")
    return 0


def cmd_mac(args) -> int:
    if args.config:
        cfg = load_mac_config(args.config)
    else:
        cfg = MacConfig(n_tags=args.tags, blink_rate=args.rate,
                        sim_duration=args.duration, mode=args.mode)
    rng = np.random.default_rng(np.random.SeedSequence([args.seed & 0xFFFFFFFF,
                                                        0xAC]))
    report = run_mac(cfg, rng)
    per_tag, windows = mac_tables(report, args.seed)
    out = Path(args.out)
    write_csv(per_tag, out)
    win_path = out.with_name(f"{out.stem}_windows{out.suffix}")
    write_csv(windows, win_path)
    print(f"mac {cfg.mode}: overall success {report.overall_success:.4f} "
          f"-> {out}, {win_path}")
    return 0


def cmd_calibrate_demo(args) -> int:
    table = run_calibrate_demo(seed=args.seed)
    write_csv(table, args.out)
    if args.save_params:
        from .calibration import CalibrationParams, save_calibration
        params = [CalibrationParams(r[4], r[5], r[6]) for r in table.rows]
        save_calibration(args.save_params, params)
        print(f"fitted params -> {args.save_params}")
    worst = max(r[8] for r in table.rows)
    print(f"calibration demo: worst holdout curve error {worst:.3g} rad "
          f"-> {args.out}")
    return 0


def _add_common(p, with_grid_res: bool = False) -> None:
    p.add_argument("--config", help="scenario YAML")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--trials", type=int, default=None)
    if with_grid_res:
        p.add_argument("--grid-res", type=float, default=None,
                       help="evaluation grid resolution, meters")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="svloc",
        description="Single-vantage UWB localization simulation studies")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("heatmap", help="localization error over the room grid")
    _add_common(p, with_grid_res=True)
    p.add_argument("--scenario", default="joint",
                   help="built-in scenario name (see gdop suite)")
    p.set_defaults(fn=cmd_heatmap)

    p = sub.add_parser("sweep-noise", help="error vs phase/time noise levels")
    _add_common(p)
    p.add_argument("--scenario", default="joint")
    p.add_argument("--sigma-theta-deg", default="1,2,5,10,20,45")
    p.add_argument("--sigma-t-ps", default="3,50,150,250,500")
    p.set_defaults(fn=cmd_sweep_noise)

    p = sub.add_parser("microbench", help="design-choice sweeps")
    _add_common(p)
    p.add_argument("--scenario", default="joint")
    p.add_argument("--axis", required=True, choices=sorted(MICROBENCH_AXES))
    p.set_defaults(fn=cmd_microbench)

    p = sub.add_parser("track", help="particle-filter tracking along a path")
    _add_common(p)
    p.add_argument("--scenario", default="joint")
    p.add_argument("--trajectory", default="figure8",
                   choices=("static", "line", "rectangle", "figure8"))
    p.add_argument("--trajectory-file", help="CSV with t_s,x_m,y_m columns")
    p.add_argument("--duration", type=float, default=20.0)
    p.add_argument("--rate", type=float, default=20.0)
    p.add_argument("--process-noise", type=float, default=0.03)
    p.set_defaults(fn=cmd_track)

    p = sub.add_parser("ambiguity", help="score surfaces vs antenna count")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--n-list", default="2,4,5,6")
    p.add_argument("--aperture", type=float, default=1.0)
    p.add_argument("--grid-res", type=float, default=None)
    p.add_argument("--pairing", default="all", choices=("all", "reference"))
    p.add_argument("--noisy", action="store_true")
    p.set_defaults(fn=cmd_ambiguity)

    p = sub.add_parser("mac", help="TDMA / unslotted MAC simulation")
    p.add_argument("--config", help="MAC YAML config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", default="tdma", choices=("tdma", "unslotted"))
    p.add_argument("--tags", type=int, default=10)
    p.add_argument("--rate", type=float, default=100.0)
    p.add_argument("--duration", type=float, default=1800.0)
    p.set_defaults(fn=cmd_mac)

    p = sub.add_parser("calibrate-demo",
                       help="three-point bias calibration round trip")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--save-params", help="write fitted params YAML here")
    p.set_defaults(fn=cmd_calibrate_demo)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
