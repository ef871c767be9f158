"""Command-line benchmark harness.

Subcommands:
  run CONFIG            one episode -> metrics.csv, report.json, SVG plots
  compare CONFIG        methods x seeds -> summary and block-time tables
  gen-world maze|plant  emit a world JSON file

All result files are written atomically (temp file + rename).  The
STRATEX_OUT_DIR environment variable overrides the configured output
directory.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from pathlib import Path

from .config import ScenarioConfig, default_config_doc, load_config
from .errors import ConfigError, StratexError
from .global_plan import build_cost_matrix, compress_matrix, near_current_ids, solve_tsp
from .manager import EpisodeReport, run_episode
from .sim import WorldModel, generate_maze, generate_plant, load_world, save_world
from .svgplot import coverage_svg, trajectory_svg

METRICS_HEADER = ("tick,time_s,coverage,distance_m,"
                  "t_frontier_ms,t_global_ms,t_local_ms,t_traj_ms")


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp_", suffix=path.suffix)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def metrics_csv_text(report: EpisodeReport, stable_timings: bool) -> str:
    rows = [METRICS_HEADER]
    for m in report.ticks:
        if stable_timings:
            t = ("0.000", "0.000", "0.000", "0.000")
        else:
            t = (f"{m.t_frontier_ms:.3f}", f"{m.t_global_ms:.3f}",
                 f"{m.t_local_ms:.3f}", f"{m.t_traj_ms:.3f}")
        rows.append(f"{m.tick},{m.time_s:.4f},{m.coverage:.9f},"
                    f"{m.distance_m:.6f},{t[0]},{t[1]},{t[2]},{t[3]}")
    return "\n".join(rows) + "\n"


def _build_world(cfg: ScenarioConfig, seed_offset: int = 0) -> WorldModel:
    base = cfg.world.gen_seed if cfg.world.gen_seed is not None else cfg.seed
    seed = base + seed_offset
    if cfg.world.source == "file":
        return load_world(cfg.world.path)
    if cfg.world.source == "maze":
        return generate_maze(cfg.world.dims_m, cfg.world.resolution, seed)
    return generate_plant(cfg.world.dims_m, cfg.world.resolution, seed)


def _out_dir(cfg: ScenarioConfig, override: str | None) -> Path:
    env = os.environ.get("STRATEX_OUT_DIR")
    return Path(override or env or cfg.out_dir)


class _DebugDumper:
    """Observer that traces cost matrices and tours per replan."""

    def __init__(self, cfg: ScenarioConfig, out_dir: Path):
        self.cfg = cfg
        self.dir = out_dir / "debug"

    def __call__(self, event: str, mgr, **data) -> None:
        if event != "replan":
            return
        uav_dists = data["uav_dists"]
        full = build_cost_matrix(mgr.fset, mgr.view, mgr.uav.position,
                                 mgr.omission, uav_dists)
        ids = near_current_ids(mgr.fset, uav_dists, mgr.omission)
        comp = compress_matrix(full, ids)
        tour = solve_tsp(comp)
        tick = mgr.tick_index
        lines = [",".join(f"{v:.6f}" for v in row) for row in full.values]
        _atomic_write(self.dir / f"matrix_{tick:06d}.csv",
                      "\n".join(lines) + "\n")
        _atomic_write(self.dir / f"tour_{tick:06d}.json", json.dumps({
            "tick": tick,
            "near_ids": ids,
            "id_map": comp.id_map,
            "node_order": tour.node_order,
            "frontier_order": tour.frontier_order,
            "cost": tour.cost,
        }, indent=1) + "\n")


def _write_run_outputs(cfg: ScenarioConfig, report: EpisodeReport,
                       world: WorldModel, out: Path) -> None:
    _atomic_write(out / "metrics.csv",
                  metrics_csv_text(report, cfg.run.stable_timings))
    doc = report.to_json()
    doc["planner"] = cfg.planner
    doc["world"] = {"source": cfg.world.source, "dims_m": list(world.dims_m),
                    "resolution": world.resolution}
    _atomic_write(out / "report.json", json.dumps(doc, indent=1) + "\n")
    trajectory_svg(report.path, world.dims_m, out / "trajectory.svg")
    coverage_svg({cfg.planner: report.ticks}, out / "coverage.svg")


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    out = _out_dir(cfg, args.out_dir)
    try:
        world = _build_world(cfg)
        observer = _DebugDumper(cfg, out) if args.debug_dumps else None
        report = run_episode(world, method=cfg.planner, seed=cfg.seed,
                             observer=observer, **cfg.manager_kwargs())
        _write_run_outputs(cfg, report, world, out)
    except StratexError as e:
        print(f"episode failed: {e}", file=sys.stderr)
        return 2
    print(f"done={report.done} coverage={report.final_coverage:.4f} "
          f"time={report.exploration_time_s:.1f}s "
          f"distance={report.flight_distance_m:.1f}m -> {out}")
    return 0


def _stats(values: list[float]) -> tuple[float, float, float, float]:
    n = len(values)
    avg = sum(values) / n
    if n > 1:
        var = sum((v - avg) ** 2 for v in values) / (n - 1)
        std = math.sqrt(var)
    else:
        std = 0.0
    return avg, std, max(values), min(values)


def cmd_compare(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    if not methods or args.seeds < 1:
        print("need at least one method and one seed", file=sys.stderr)
        return 1
    out = _out_dir(cfg, args.out_dir)

    raw_rows = ["method,seed,status,exploration_time_s,flight_distance_m,"
                "final_coverage,done"]
    results: dict[str, list[EpisodeReport]] = {m: [] for m in methods}
    for method in methods:
        for k in range(args.seeds):
            try:
                world = _build_world(cfg, seed_offset=k)
                report = run_episode(world, method=method, seed=cfg.seed + k,
                                     **cfg.manager_kwargs())
            except StratexError as e:
                raw_rows.append(f"{method},{k},failed:{type(e).__name__},,,,")
                continue
            results[method].append(report)
            raw_rows.append(
                f"{method},{k},ok,{report.exploration_time_s:.4f},"
                f"{report.flight_distance_m:.6f},{report.final_coverage:.9f},"
                f"{int(report.done)}")
            ep_dir = out / "episodes" / f"{method}_seed{k}"
            _atomic_write(ep_dir / "metrics.csv",
                          metrics_csv_text(report, cfg.run.stable_timings))
            _atomic_write(ep_dir / "report.json",
                          json.dumps(report.to_json(), indent=1) + "\n")

    summary = ["method,time_avg,time_std,time_max,time_min,"
               "dist_avg,dist_std,dist_max,dist_min,episodes"]
    blocks = ["method,frontier_ms,global_ms,local_ms,traj_ms,total_ms"]
    for method in methods:
        reps = results[method]
        if not reps:
            summary.append(f"{method},,,,,,,,,0")
            blocks.append(f"{method},,,,,")
            continue
        t = _stats([r.exploration_time_s for r in reps])
        d = _stats([r.flight_distance_m for r in reps])
        summary.append(
            f"{method},{t[0]:.4f},{t[1]:.4f},{t[2]:.4f},{t[3]:.4f},"
            f"{d[0]:.4f},{d[1]:.4f},{d[2]:.4f},{d[3]:.4f},{len(reps)}")
        avg = {k: sum(r.block_avg_ms.get(k, 0.0) for r in reps) / len(reps)
               for k in ("frontier", "global", "local", "traj", "total")}
        blocks.append(f"{method},{avg['frontier']:.3f},{avg['global']:.3f},"
                      f"{avg['local']:.3f},{avg['traj']:.3f},{avg['total']:.3f}")

    _atomic_write(out / "raw_results.csv", "\n".join(raw_rows) + "\n")
    _atomic_write(out / "summary.csv", "\n".join(summary) + "\n")
    _atomic_write(out / "block_times.csv", "\n".join(blocks) + "\n")
    coverage_svg({m: r[0].ticks for m, r in results.items() if r},
                 out / "coverage.svg")
    print(f"compared {len(methods)} methods x {args.seeds} seeds -> {out}")
    return 0


def cmd_gen_world(args) -> int:
    try:
        dims = tuple(float(v) for v in args.dims.split("x"))
        if len(dims) != 3:
            raise ValueError
    except ValueError:
        print("--dims must look like 20x10x3", file=sys.stderr)
        return 1
    try:
        if args.kind == "maze":
            world = generate_maze(dims, args.resolution, args.seed)
        else:
            world = generate_plant(dims, args.resolution, args.seed)
        Path(args.output).parent.mkdir(parents=True, exist_ok=True)
        save_world(world, args.output)
    except StratexError as e:
        print(f"generation failed: {e}", file=sys.stderr)
        return 2
    print(f"wrote {args.output} ({args.kind}, {dims[0]}x{dims[1]}x{dims[2]} m "
          f"@ {args.resolution} m)")
    return 0


def cmd_init_config(args) -> int:
    _atomic_write(Path(args.output), json.dumps(default_config_doc(), indent=1) + "\n")
    print(f"wrote {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stratex",
                                description="Stratified exploration benchmark")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one episode from a config")
    run.add_argument("config")
    run.add_argument("--debug-dumps", action="store_true",
                     help="write per-replan matrix/tour traces")
    run.add_argument("--out-dir", default=None)
    run.set_defaults(func=cmd_run)

    cmp_ = sub.add_parser("compare", help="run methods x seeds and summarise")
    cmp_.add_argument("config")
    cmp_.add_argument("--methods", default="go_feap,nearest,fov")
    cmp_.add_argument("--seeds", type=int, default=5)
    cmp_.add_argument("--out-dir", default=None)
    cmp_.set_defaults(func=cmd_compare)

    gen = sub.add_parser("gen-world", help="generate a world JSON file")
    gen.add_argument("kind", choices=("maze", "plant"))
    gen.add_argument("--dims", required=True, help="metres, e.g. 20x10x3")
    gen.add_argument("--resolution", type=float, default=0.1)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("-o", "--output", required=True)
    gen.set_defaults(func=cmd_gen_world)

    init = sub.add_parser("init-config", help="write a default config file")
    init.add_argument("-o", "--output", default="scenario.json")
    init.set_defaults(func=cmd_init_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
