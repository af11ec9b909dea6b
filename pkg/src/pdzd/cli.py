"""Command-line experiment runner.

    pdzd run CONFIG [--out DIR] [--allow-unorthogonal] [--no-plots]
    pdzd sweep CONFIG --grid GRID [--jobs N] [--out DIR] [--allow-unorthogonal] [--no-plots]

Exit codes: 0 success, 1 some sweep points failed, 2 validation refusal,
3 numerical abort. The default output directory comes from ``$PDZD_OUT``
(falling back to ``./pdzd_out``).
"""

from __future__ import annotations

import argparse
import csv
import itertools
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from .config import ConfigError, build_experiment, config_hash, load_config, set_path
from .dynamics import gradient_estimate_oracle
from .integrator import IntegrationAborted, integrate, summarize
from .probing import _period_units


EXIT_OK, EXIT_PARTIAL, EXIT_REFUSED, EXIT_ABORTED = 0, 1, 2, 3
ENV_OUT = "PDZD_OUT"
SUMMARY_FIELDS = [
    "config_hash", "seed", "dynamics", "status", "final_cost", "final_violation", "settling_time",
    "time_in_violation", "time_in_violation_after_settling", "mean_abs_tracking_error", "tail_sup", "nu",
    "optimal_cost", "estimator_error", "steps", "records",
]
ESTIMATOR_MAX_NODES = 200_000


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_lines(path: Path, lines) -> None:
    path.write_text("\n".join(lines) + "\n")


def _estimator_error(exp, traj) -> float | None:
    plant = getattr(exp.plant, "inner", exp.plant)
    plan = getattr(exp.loop, "plan", None)
    if plan is None or not getattr(exp.loop, "zeroth_order", False) or not plant.white_box:
        return None
    period = _period_units(plan.kappa)
    if float(period * sum(plan.kappa)) * 64 > ESTIMATOR_MAX_NODES:
        return None
    x, lam = traj.final.x, traj.final.lam
    est = gradient_estimate_oracle(plant, x, lam, plan, traj.t_final)
    true = plant.first_order(x, traj.t_final).grad_lagrangian(lam) if lam.size else plant.first_order(x, traj.t_final).grad_f
    return float(np.linalg.norm(est - true))


def execute(cfg: dict, out: Path, allow_unorthogonal: bool = False, plots: bool = True) -> tuple[int, dict]:
    """Run one configuration into ``out``; returns the exit code and the summary row."""
    out.mkdir(parents=True, exist_ok=True)
    row = {"config_hash": config_hash(cfg), "seed": cfg.get("seed", 0), "dynamics": cfg.get("dynamics", "ppdzd")}
    try:
        exp = build_experiment(cfg, allow_unorthogonal)
    except (ConfigError, ValueError) as exc:
        _write_lines(out / "validation.txt", [f"config_hash: {row['config_hash']}", f"invalid configuration: {exc}"])
        print(f"pdzd: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_REFUSED, {**row, "status": "refused"}
    _write_lines(out / "validation.txt", exp.validation)
    if exp.refused:
        print("pdzd: run refused, see validation.txt", file=sys.stderr)
        return EXIT_REFUSED, {**row, "status": "refused"}

    code, status = EXIT_OK, "ok"
    try:
        traj = integrate(exp.loop, exp.initial, exp.plant, exp.integration, exp.reference)
    except IntegrationAborted as exc:
        print(f"pdzd: {exc}", file=sys.stderr)
        traj, code, status = exc.trajectory, EXIT_ABORTED, "aborted"
    except ValueError as exc:
        _write_lines(out / "validation.txt", exp.validation + [f"precondition failed: {exc}"])
        print(f"pdzd: {exc}", file=sys.stderr)
        return EXIT_REFUSED, {**row, "status": "refused"}
    traj.config_hash = exp.hash
    traj.to_csv(out / "trajectory.csv")
    row["status"] = status
    row["steps"] = int(round((traj.t_final - traj.times[0]) / traj.h)) if len(traj) else 0
    row["records"] = len(traj)
    if len(traj):
        s = summarize(traj, nu=exp.nu, violation_tol=exp.violation_tol)
        row.update(s.as_dict())
        plant = getattr(exp.plant, "inner", exp.plant)
        if plant.white_box and code == EXIT_OK:
            row["optimal_cost"] = plant.optimum(traj.t_final - traj.h, exp.loop.iterate_set).cost
            row["estimator_error"] = _estimator_error(exp, traj)
        if plots:
            from .plotting import plot_trajectory

            plot_trajectory(traj, out / "trajectory.png", f"{row['dynamics']}  config {exp.hash}")
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        w.writerow([_fmt(row.get(k)) for k in SUMMARY_FIELDS])
    return code, row


def _grid_points(grid: dict) -> list[dict]:
    if not grid:
        return [{}]
    keys = list(grid)
    for k in keys:
        if not isinstance(grid[k], list):
            raise ConfigError(f"grid entry {k!r} must be a list")
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def point_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(base_seed), int(index)]).generate_state(1)[0])


def _sweep_point(args):
    cfg, out, allow, plots = args
    try:
        _, row = execute(cfg, Path(out), allow, plots)
    except Exception as exc:  # a failing point must not stop the sweep
        row = {"config_hash": config_hash(cfg), "seed": cfg.get("seed"), "status": f"error: {exc}"}
    return row


def sweep(cfg: dict, grid: dict, out: Path, jobs: int = 1, allow_unorthogonal: bool = False, plots: bool = True) -> int:
    points = _grid_points(grid)
    base_seed = int(cfg.get("seed", 0))
    tasks = []
    for i, overrides in enumerate(points):
        c = cfg
        for k, v in overrides.items():
            c = set_path(c, k, v)
        c = set_path(c, "seed", point_seed(base_seed, i))
        tasks.append((c, str(out / f"point_{i:04d}"), allow_unorthogonal, plots))
    out.mkdir(parents=True, exist_ok=True)
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_point, tasks))
    else:
        rows = [_sweep_point(t) for t in tasks]
    keys = list(grid)
    with open(out / "sweep_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", *keys, *SUMMARY_FIELDS])
        for i, (overrides, row) in enumerate(zip(points, rows)):
            w.writerow([i, *[_fmt(overrides[k]) for k in keys], *[_fmt(row.get(k)) for k in SUMMARY_FIELDS]])
    varied = [k for k in keys if len(grid[k]) > 1]
    if plots and len(varied) == 1:
        from .plotting import plot_sweep

        key = varied[0]
        merged = [{**r, key: p[key]} for p, r in zip(points, rows)]
        plot_sweep(merged, "tail_sup", out / "sweep_tail_sup.png", key)
    failed = sum(1 for r in rows if r.get("status") != "ok")
    if failed:
        print(f"pdzd: {failed} of {len(rows)} sweep points did not complete", file=sys.stderr)
    return EXIT_OK if not failed else EXIT_PARTIAL


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pdzd", description="Projected primal-dual zeroth-order dynamics experiments")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("run", "sweep"):
        s = sub.add_parser(name)
        s.add_argument("config")
        s.add_argument("--out", default=None, help=f"output directory (default ${ENV_OUT} or ./pdzd_out)")
        s.add_argument("--allow-unorthogonal", action="store_true")
        s.add_argument("--no-plots", action="store_true")
        if name == "sweep":
            s.add_argument("--grid", required=True)
            s.add_argument("--jobs", type=int, default=1)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    out = Path(args.out or os.environ.get(ENV_OUT) or "pdzd_out")
    try:
        cfg = load_config(args.config)
    except (OSError, yaml.YAMLError, ConfigError) as exc:
        print(f"pdzd: cannot read config: {exc}", file=sys.stderr)
        out.mkdir(parents=True, exist_ok=True)
        _write_lines(out / "validation.txt", [f"cannot read config: {exc}"])
        return EXIT_REFUSED
    if args.command == "run":
        code, _ = execute(cfg, out, args.allow_unorthogonal, not args.no_plots)
        return code
    try:
        with open(args.grid) as fh:
            grid = yaml.safe_load(fh) or {}
        _grid_points(grid)
    except (OSError, yaml.YAMLError, ConfigError) as exc:
        print(f"pdzd: bad grid: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    return sweep(cfg, grid, out, max(1, args.jobs), args.allow_unorthogonal, not args.no_plots)


if __name__ == "__main__":
    sys.exit(main())
