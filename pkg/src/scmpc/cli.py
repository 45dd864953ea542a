"""Command-line front end: scenario configs, batch runs, CSV and JSON output.

Subcommands:
  simulate        run one scenario or a sweep, writing one CSV per run plus
                  a summary.json with metrics recomputable from the CSVs
  compare-timing  run the linear and nonlinear controllers over a list of
                  horizons and tabulate per-step solve times
  verify          run the built-in property checks (coordinate maps,
                  terminal machinery, sampled terminal safety) and report

A single hierarchical JSON document configures everything; command-line
flags override individual fields. All randomness derives from one seed in
the config, split per run index. SCMPC_THREADS caps the worker pool used
for sweep points.
"""

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .dfl import DflGuard, LinearState, map_x_to_z, map_z_to_x, decoupling_matrix
from .errors import ConfigError, InfeasibleError
from .lti import discretize_double_integrator, riccati_solution, terminal_data
from .model import ExtendedState, RobotParams
from .mpc import MpcConfig, estimate_flops_ip, estimate_flops_sqp
from .safety import CbfParams, Obstacle, sample_terminal_box, terminal_safety_check
from .sim import (NoiseConfig, Scenario, first_deviation_step, run_closed_loop)

__all__ = ["RunManifest", "run", "compare_timing", "verify_report",
           "load_config", "write_trajectory_csv", "main"]

DEVIATION_THRESHOLD = 0.05
_FEAS_TOL = 1e-6


@dataclass
class RunManifest:
    """What to execute: config file, output directory, overrides, sweep."""

    config_path: Path
    out_dir: Path
    gamma: float | None = None
    horizon: int | None = None
    mode: str | None = None
    seed: int | None = None
    sweep: bool = False


def _require_keys(section: dict, allowed, where: str):
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown key {where}.{key}")


def _get(section: dict, key: str, default, where: str):
    value = section.get(key, default)
    if value is None:
        raise ConfigError(f"missing key {where}.{key}")
    return value


def load_config(path) -> dict:
    """Parse and validate the JSON config into plain python values."""
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    _require_keys(raw, {"seed", "robot", "scenario", "mpc", "dfl", "sweep",
                        "timing"}, "config")
    out = {"seed": int(raw.get("seed", 0))}

    robot = raw.get("robot", {})
    _require_keys(robot, {"wheel_radius", "axle_length"}, "robot")
    out["robot"] = RobotParams(
        wheel_radius=float(robot.get("wheel_radius", 0.1)),
        axle_length=float(robot.get("axle_length", 0.5)),
    )

    sc = raw.get("scenario", {})
    _require_keys(sc, {"start", "goal", "duration", "mode", "substeps",
                       "obstacles", "noise"}, "scenario")
    start = _get(sc, "start", [7.0, 7.0, math.pi, 0.5], "scenario")
    if len(start) != 4:
        raise ConfigError("scenario.start must have 4 entries")
    out["start"] = ExtendedState(*[float(v) for v in start])
    goal = sc.get("goal", [0.0, 0.0])
    if len(goal) != 2:
        raise ConfigError("scenario.goal must have 2 entries")
    out["goal"] = (float(goal[0]), float(goal[1]))
    out["duration"] = float(sc.get("duration", 30.0))
    out["mode"] = str(sc.get("mode", "cbf"))
    out["substeps"] = int(sc.get("substeps", 1))
    obstacles = []
    for i, entry in enumerate(sc.get("obstacles", [])):
        _require_keys(entry, {"x", "y", "radius"}, f"scenario.obstacles[{i}]")
        obstacles.append(Obstacle(float(_get(entry, "x", None, "obstacle")),
                                  float(_get(entry, "y", None, "obstacle")),
                                  float(_get(entry, "radius", None, "obstacle"))))
    out["obstacles"] = tuple(obstacles)
    noise = sc.get("noise", {})
    _require_keys(noise, {"enabled", "variance", "mask"}, "scenario.noise")
    mask = noise.get("mask", [True, True, True])
    if len(mask) != 3:
        raise ConfigError("scenario.noise.mask must have 3 entries")
    out["noise"] = {
        "enabled": bool(noise.get("enabled", False)),
        "variance": float(noise.get("variance", 0.05)),
        "mask": tuple(bool(m) for m in mask),
    }

    mp = raw.get("mpc", {})
    _require_keys(mp, {"horizon", "constraint_horizon", "gamma", "ts", "q",
                       "r", "v_min", "v_max", "pos_min", "pos_max", "u_min",
                       "u_max", "nmpc_q", "nmpc_r", "nmpc_p"}, "mpc")
    kwargs = {}
    if "horizon" in mp:
        kwargs["horizon"] = int(mp["horizon"])
    if "constraint_horizon" in mp:
        kwargs["constraint_horizon"] = int(mp["constraint_horizon"])
    if "gamma" in mp:
        kwargs["gamma"] = float(mp["gamma"])
    if "ts" in mp:
        kwargs["ts"] = float(mp["ts"])
    for json_key, attr in (("q", "Q"), ("r", "R"), ("nmpc_q", "nmpc_Q"),
                           ("nmpc_r", "nmpc_R"), ("nmpc_p", "nmpc_P")):
        if json_key in mp:
            kwargs[attr] = np.asarray(mp[json_key], dtype=float)
    for key in ("v_min", "v_max", "pos_min", "pos_max", "u_min", "u_max"):
        if key in mp:
            kwargs[key] = np.asarray(mp[key], dtype=float)
    try:
        out["mpc"] = MpcConfig(**kwargs)
    except ConfigError as exc:
        raise ConfigError(f"mpc: {exc}")

    dfl = raw.get("dfl", {})
    _require_keys(dfl, {"zeta_threshold"}, "dfl")
    out["guard"] = DflGuard(zeta_threshold=float(dfl.get("zeta_threshold", 0.01)))

    sweep = raw.get("sweep", {})
    _require_keys(sweep, {"gamma", "horizon", "mode"}, "sweep")
    out["sweep"] = {
        "gamma": [float(g) for g in sweep.get("gamma", [])],
        "horizon": [int(n) for n in sweep.get("horizon", [])],
        "mode": [str(m) for m in sweep.get("mode", [])],
    }

    timing = raw.get("timing", {})
    _require_keys(timing, {"horizons", "duration"}, "timing")
    out["timing"] = {
        "horizons": [int(n) for n in timing.get("horizons", [8, 10, 12, 14])],
        "duration": float(timing.get("duration", 8.0)),
    }
    return out


def _derive_seed(base_seed: int, run_index: int) -> int:
    ss = np.random.SeedSequence((int(base_seed), int(run_index)))
    return int(ss.generate_state(1, dtype=np.uint64)[0] % (2**63))


def _build_scenario(cfg: dict, gamma, horizon, mode, noise_seed) -> Scenario:
    mpc = cfg["mpc"]
    if gamma is not None or horizon is not None:
        updates = {}
        if gamma is not None:
            updates["gamma"] = float(gamma)
        if horizon is not None:
            updates["horizon"] = int(horizon)
        mpc = replace(mpc, **updates)
    return Scenario(
        start=cfg["start"],
        goal=cfg["goal"],
        obstacles=cfg["obstacles"],
        mpc=mpc,
        guard=cfg["guard"],
        duration=cfg["duration"],
        noise=NoiseConfig(enabled=cfg["noise"]["enabled"],
                          variance=cfg["noise"]["variance"],
                          seed=noise_seed,
                          mask=cfg["noise"]["mask"]),
        mode=mode if mode is not None else cfg["mode"],
        substeps=cfg["substeps"],
        robot=cfg["robot"],
    )


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def write_trajectory_csv(log, path) -> None:
    """Write one run as CSV with one barrier/distance column pair per
    obstacle; numeric fields carry full float precision."""
    n_obs = len(log.scenario.obstacles)
    head = ["t", "x1", "x2", "x3", "zeta", "u1", "u2", "omega_r", "omega_l",
            "v1", "v2"]
    for i in range(n_obs):
        head += [f"H{i}", f"dist{i}"]
    head += ["cost", "sqp_iters", "solve_ms"]
    lines = [",".join(head)]
    for r in log.records:
        row = [r.t, r.x1, r.x2, r.x3, r.zeta, r.u1, r.u2, r.omega_r,
               r.omega_l, r.v1, r.v2]
        for i in range(n_obs):
            row += [r.barriers[i], r.distances[i]]
        fields = [_fmt(v) for v in row]
        fields += [_fmt(r.cost), str(int(r.sqp_iterations)),
                   _fmt(r.solve_time * 1e3)]
        lines.append(",".join(fields))
    Path(path).write_text("\n".join(lines) + "\n")


def _ip_iteration_model(horizon: int) -> int:
    # Interior-point iteration count model O(sqrt(Nm) log(1/eps)).
    return int(math.ceil(math.sqrt(horizon * 2) * math.log10(1.0 / _FEAS_TOL)))


def _run_summary(log, name, gamma, horizon, mode, noise_seed) -> dict:
    s = log.summary
    times_ms = np.array([r.solve_time * 1e3 for r in log.records])
    sqp_iters = np.array([r.sqp_iterations for r in log.records])
    ip_model = _ip_iteration_model(horizon)
    sqp_median = float(np.median(sqp_iters)) if sqp_iters.size else 0.0
    entry = {
        "file": name,
        "mode": mode,
        "gamma": gamma,
        "horizon": horizon,
        "noise_seed": noise_seed,
        "aborted": log.aborted,
        "steps": s.steps,
        "goal": list(log.scenario.goal),
        "obstacles": [[o.x, o.y, o.radius] for o in log.scenario.obstacles],
        "min_distance": s.min_distance if log.scenario.obstacles else None,
        "final_position_error": s.final_position_error,
        "solve_ms": {
            "median": float(np.median(times_ms)) if times_ms.size else 0.0,
            "p90": float(np.percentile(times_ms, 90)) if times_ms.size else 0.0,
            "max": float(np.max(times_ms)) if times_ms.size else 0.0,
        },
        "max_solve_le_ts": bool(times_ms.size
                                and np.max(times_ms) <= log.scenario.mpc.ts * 1e3),
        "first_deviation_step": first_deviation_step(log, DEVIATION_THRESHOLD),
        "flops": {
            "ip_iterations_model": ip_model,
            "sqp_iterations_median": sqp_median,
            "flops_ip": estimate_flops_ip(horizon, 2, ip_model),
            "flops_sqp": (estimate_flops_sqp(sqp_median, horizon, 2, ip_model)
                          if sqp_median > 0 else None),
        },
    }
    return entry


def _aggregate_reports(entries) -> dict:
    reports = {}
    # Clearance monotonicity along gamma, per (mode, horizon) group.
    groups = {}
    for e in entries:
        if e["min_distance"] is None:
            continue
        groups.setdefault((e["mode"], e["horizon"]), []).append(e)
    monot = {}
    for (mode, horizon), items in groups.items():
        if len(items) < 2:
            continue
        items = sorted(items, key=lambda e: e["gamma"])
        dists = [e["min_distance"] for e in items]
        monot[f"{mode}_N{horizon}"] = {
            "gammas": [e["gamma"] for e in items],
            "min_distances": dists,
            "monotone_nonincreasing": bool(
                all(dists[i] >= dists[i + 1] for i in range(len(dists) - 1))),
        }
    if monot:
        reports["gamma_monotonicity"] = monot
    # First-deviation comparison between cbf and euclid at matching settings.
    by_key = {}
    for e in entries:
        by_key.setdefault((e["gamma"], e["horizon"], e["mode"]), e)
    comparisons = []
    for (gamma, horizon, mode), e in by_key.items():
        if mode != "cbf":
            continue
        other = by_key.get((gamma, horizon, "euclid"))
        if other is None:
            continue
        ks, ke = e["first_deviation_step"], other["first_deviation_step"]
        comparisons.append({
            "gamma": gamma,
            "horizon": horizon,
            "cbf_first_deviation_step": ks,
            "euclid_first_deviation_step": ke,
            "cbf_deviates_earlier": bool(ks is not None and
                                         (ke is None or ks < ke)),
        })
    if comparisons:
        reports["mode_comparison"] = comparisons
    return reports


def run(manifest: RunManifest) -> int:
    """Execute the manifest; returns the process exit code.

    0 for success, 2 if any run aborted infeasible, 3 for config errors.
    """
    try:
        cfg = load_config(manifest.config_path)
        if manifest.gamma is not None or manifest.horizon is not None:
            updates = {}
            if manifest.gamma is not None:
                updates["gamma"] = manifest.gamma
            if manifest.horizon is not None:
                updates["horizon"] = manifest.horizon
            cfg["mpc"] = replace(cfg["mpc"], **updates)
        if manifest.mode is not None:
            if manifest.mode not in ("cbf", "euclid", "nmpc"):
                raise ConfigError(f"unknown mode '{manifest.mode}'")
            cfg["mode"] = manifest.mode
        if manifest.seed is not None:
            cfg["seed"] = int(manifest.seed)

        points = [(None, None, None)]
        if manifest.sweep:
            sweep = cfg["sweep"]
            gammas = sweep["gamma"] or [None]
            horizons = sweep["horizon"] or [None]
            modes = sweep["mode"] or [None]
            points = [(g, n, m) for m in modes for n in horizons
                      for g in gammas]

        out_dir = Path(manifest.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        jobs = []
        for idx, (gamma, horizon, mode) in enumerate(points):
            noise_seed = _derive_seed(cfg["seed"], idx)
            scenario = _build_scenario(cfg, gamma, horizon, mode, noise_seed)
            g_eff = scenario.mpc.gamma
            n_eff = scenario.mpc.horizon
            name = f"run{idx:03d}_{scenario.mode}_g{g_eff:g}_N{n_eff}.csv"
            jobs.append((idx, scenario, name, g_eff, n_eff, noise_seed))
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 3

    def _execute(job):
        idx, scenario, name, g_eff, n_eff, noise_seed = job
        try:
            log = run_closed_loop(scenario)
            aborted = log.aborted
        except InfeasibleError as exc:
            return idx, None, name, g_eff, n_eff, noise_seed, str(exc)
        return idx, log, name, g_eff, n_eff, noise_seed, None

    workers = os.environ.get("SCMPC_THREADS")
    max_workers = max(1, int(workers)) if workers else min(4, os.cpu_count() or 1)
    if len(jobs) == 1 or max_workers == 1:
        results = [_execute(job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(_execute, jobs))

    entries = []
    any_infeasible = False
    for idx, log, name, g_eff, n_eff, noise_seed, error in sorted(results):
        if log is None:
            any_infeasible = True
            entries.append({"file": name, "mode": jobs[idx][1].mode,
                            "gamma": g_eff, "horizon": n_eff,
                            "noise_seed": noise_seed, "aborted": True,
                            "error": error})
            continue
        write_trajectory_csv(log, out_dir / name)
        entries.append(_run_summary(log, name, g_eff, n_eff,
                                    log.scenario.mode, noise_seed))
        if log.aborted:
            any_infeasible = True

    summary = {"seed": cfg["seed"], "runs": entries}
    summary.update(_aggregate_reports([e for e in entries if "steps" in e]))
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"wrote {len(entries)} run(s) to {out_dir}")
    return 2 if any_infeasible else 0


def compare_timing(manifest: RunManifest, horizons=None) -> dict:
    """Run cbf and nmpc modes over a horizon list and tabulate solve times.

    Returns the summary dict; also writes timing_summary.json and prints a
    table with the per-horizon medians, maxima, the Ts check for the cbf
    mode, and the flop-model columns.
    """
    cfg = load_config(manifest.config_path)
    if manifest.seed is not None:
        cfg["seed"] = int(manifest.seed)
    horizons = horizons or cfg["timing"]["horizons"]
    duration = cfg["timing"]["duration"]
    out_dir = Path(manifest.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for n in horizons:
        entry = {"horizon": int(n)}
        for mode in ("cbf", "nmpc"):
            scenario = _build_scenario(cfg, None, int(n), mode, cfg["seed"])
            scenario = replace(scenario, duration=duration)
            log = run_closed_loop(scenario)
            times_ms = np.array([r.solve_time * 1e3 for r in log.records])
            sqp = float(np.median([r.sqp_iterations for r in log.records]))
            ip_model = _ip_iteration_model(int(n))
            entry[mode] = {
                "median_ms": float(np.median(times_ms)),
                "max_ms": float(np.max(times_ms)),
                "aborted": log.aborted,
                "sqp_iterations_median": sqp,
                "flops_ip": estimate_flops_ip(int(n), 2, ip_model),
                "flops_sqp": estimate_flops_sqp(sqp, int(n), 2, ip_model),
            }
        entry["cbf_max_le_ts"] = bool(entry["cbf"]["max_ms"]
                                      <= cfg["mpc"].ts * 1e3)
        entry["nmpc_median_gt_cbf"] = bool(entry["nmpc"]["median_ms"]
                                           > entry["cbf"]["median_ms"])
        rows.append(entry)
    summary = {"ts_ms": cfg["mpc"].ts * 1e3, "horizons": rows}
    (out_dir / "timing_summary.json").write_text(
        json.dumps(summary, indent=2) + "\n")
    print(f"{'N':>4} {'cbf med':>9} {'cbf max':>9} {'nmpc med':>9} "
          f"{'nmpc max':>9} {'max<=Ts':>8} {'nmpc>cbf':>9}")
    for row in rows:
        print(f"{row['horizon']:>4} {row['cbf']['median_ms']:>9.3f} "
              f"{row['cbf']['max_ms']:>9.2f} {row['nmpc']['median_ms']:>9.3f} "
              f"{row['nmpc']['max_ms']:>9.2f} {str(row['cbf_max_le_ts']):>8} "
              f"{str(row['nmpc_median_gt_cbf']):>9}")
    return summary


def verify_report(config_path=None) -> bool:
    """Run the library's property checks and print one line per check."""
    rng = np.random.default_rng(20240501)
    checks = []

    worst = 0.0
    for _ in range(200):
        z = LinearState(*rng.uniform(-5.0, 5.0, size=4))
        if math.hypot(z.z2, z.z4) <= 0.02:
            continue
        state, ok = map_z_to_x(z, zeta_threshold=0.01)
        back = map_x_to_z(state)
        worst = max(worst, float(np.max(np.abs(back.as_array() - z.as_array()))))
    checks.append(("coordinate map round trip <= 1e-12", worst <= 1e-12,
                   f"worst {worst:.2e}"))

    worst = 0.0
    for _ in range(200):
        s = ExtendedState(rng.uniform(-3, 3), rng.uniform(-3, 3),
                          rng.uniform(-10, 10), rng.uniform(0.01, 5.0))
        _, det = decoupling_matrix(s)
        worst = max(worst, abs(det - s.zeta))
    checks.append(("decoupling determinant equals speed <= 1e-14",
                   worst <= 1e-14, f"worst {worst:.2e}"))

    if config_path is not None:
        cfg = load_config(config_path)
        mpc_cfg, obstacles = cfg["mpc"], cfg["obstacles"]
    else:
        mpc_cfg, obstacles = MpcConfig(), (Obstacle(3.5, 3.5, 1.5),)
    model = discretize_double_integrator(mpc_cfg.ts)
    td = terminal_data(model, mpc_cfg.Q, mpc_cfg.R)
    A_cl = model.A + model.B @ td.K
    resid = td.Qbar - A_cl.T @ td.Qbar @ A_cl - (mpc_cfg.Q + td.K.T @ mpc_cfg.R @ td.K)
    lyap = float(np.max(np.abs(resid)))
    checks.append(("terminal Lyapunov residual <= 1e-9", lyap <= 1e-9,
                   f"residual {lyap:.2e}"))
    checks.append(("terminal closed loop is a contraction",
                   td.spectral_radius < 1.0, f"rho {td.spectral_radius:.6f}"))
    P = riccati_solution(model, mpc_cfg.Q, mpc_cfg.R)
    r_res = float(np.max(np.abs(td.Qbar - P)))
    checks.append(("terminal weight matches Riccati fixed point <= 1e-8",
                   r_res <= 1e-8, f"gap {r_res:.2e}"))

    z0 = rng.uniform(-1.0, 1.0, size=4)
    cost = 0.0
    z = z0.copy()
    for _ in range(2000):
        v = td.K @ z
        cost += float(z @ mpc_cfg.Q @ z + v @ mpc_cfg.R @ v)
        z = A_cl @ z
    target = float(z0 @ td.Qbar @ z0)
    rel = abs(cost - target) / max(abs(target), 1e-30)
    checks.append(("closed-loop cost equals terminal quadratic (rel 1e-6)",
                   rel <= 1e-6, f"rel err {rel:.2e}"))

    ok_all = True
    params = CbfParams(gamma=mpc_cfg.gamma)
    for i, obs in enumerate(obstacles):
        samples = sample_terminal_box(1.0, 0.5, obstacles, 10000, rng)
        rep = terminal_safety_check(model, td.K, params, obs, samples)
        checks.append((f"terminal safe invariance near goal (obstacle {i})",
                       rep.passed, f"worst margin {rep.worst_margin:.3e}"))

    for name, passed, detail in checks:
        ok_all &= bool(passed)
        print(f"{'PASS' if passed else 'FAIL'}  {name}  ({detail})")
    return ok_all


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="scmpc",
        description="Barrier-constrained MPC simulator for differential-drive robots",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run scenarios from a JSON config")
    sim.add_argument("--config", required=True, help="path to the JSON config")
    sim.add_argument("--gamma", type=float, default=None)
    sim.add_argument("--horizon", type=int, default=None)
    sim.add_argument("--mode", choices=["cbf", "euclid", "nmpc"], default=None)
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--out", default="out")
    sim.add_argument("--sweep", action="store_true",
                     help="expand the config's sweep axes")

    timing = sub.add_parser("compare-timing",
                            help="compare per-step solve times of cbf and nmpc")
    timing.add_argument("--config", required=True)
    timing.add_argument("--out", default="out")
    timing.add_argument("--seed", type=int, default=None)
    timing.add_argument("--horizons", default=None,
                        help="comma-separated horizon list, e.g. 8,10,12,14")

    ver = sub.add_parser("verify", help="run the built-in property checks")
    ver.add_argument("--config", default=None)

    args = parser.parse_args(argv)
    if args.command == "simulate":
        manifest = RunManifest(config_path=Path(args.config),
                               out_dir=Path(args.out), gamma=args.gamma,
                               horizon=args.horizon, mode=args.mode,
                               seed=args.seed, sweep=args.sweep)
        return run(manifest)
    if args.command == "compare-timing":
        manifest = RunManifest(config_path=Path(args.config),
                               out_dir=Path(args.out), seed=args.seed)
        horizons = None
        if args.horizons:
            horizons = [int(tok) for tok in args.horizons.split(",")]
        try:
            compare_timing(manifest, horizons)
        except ConfigError as exc:
            print(f"configuration error: {exc}", file=sys.stderr)
            return 3
        except InfeasibleError as exc:
            print(f"run aborted infeasible: {exc}", file=sys.stderr)
            return 2
        return 0
    if args.command == "verify":
        return 0 if verify_report(args.config) else 1
    return 3


if __name__ == "__main__":
    sys.exit(main())
