"""Top-level exploration state machine and episode runner.

Per tick: advance along the active trajectory, render and integrate a
depth frame, refresh frontiers incrementally, and replan when the target
frontier changed or the trajectory finished.  A layer completes when no
live frontier is reachable with a usable viewpoint; the schedule then
moves one altitude stratum up, keeping the full map as prior knowledge,
until the configured maximum height is explored.
"""

from __future__ import annotations

import copy
import enum
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import Disconnected, NoViewpoints, Unreachable
from .frontiers import (FrontierSet, ReachabilityIndex, ViewpointCandidate,
                        extract_frontiers, extract_full, path_distances,
                        sample_viewpoints, update_info)
from .global_plan import (OmissionParams, build_cost_matrix, plan_global,
                          solve_tsp, uav_distances)
from .local_plan import (LocalParams, MotionLimits, ObstacleWindow,
                         Trajectory, UavState, classify_scenario,
                         evaluate_candidates, build_viewpoint_dag,
                         filter_viewpoints, frame_obstacle_ratio,
                         generate_trajectory, shortest_local_path,
                         spin_trajectory, update_window, wrap_angle)
from .sim import SensorSpec, WorldModel, rank_fov, rank_nearest, render_depth
from .voxel import UNKNOWN, UpdateRegion, VoxelMap

METHODS = ("go_feap", "nearest", "fov")


class StepResult(enum.Enum):
    NEW_TRAJECTORY = "new_trajectory"
    EXECUTING = "executing"
    LAYER_COMPLETE = "layer_complete"
    DONE = "done"


@dataclass
class LayerSchedule:
    """Altitude stratum bookkeeping; indices only ever increase."""

    z_layer: float
    z_max: float
    current_index: int = 0

    def bounds(self) -> tuple[float, float]:
        lo = self.current_index * self.z_layer
        hi = min(lo + self.z_layer, self.z_max)
        return lo, hi

    def is_last(self) -> bool:
        return self.bounds()[1] >= self.z_max - 1e-9

    def advance(self) -> tuple[float, float]:
        new_lo = (self.current_index + 1) * self.z_layer
        if new_lo >= self.z_max - 1e-9:
            raise AtMaxHeight(f"next layer would start at {new_lo} >= z_max {self.z_max}")
        self.current_index += 1
        return self.bounds()


@dataclass
class FrontierParams:
    split_threshold_m: float = 1.5
    shell_radii_m: tuple = (1.0, 1.5, 2.0)
    shell_step_deg: float = 20.0
    unreachable_penalty: float = 2.0
    pair_cache_drift_m: float = 0.4


@dataclass
class RunParams:
    dt: float = 0.1
    tick_budget: int = 20000
    stable_timings: bool = True
    clearance_cap_m: float = 2.0
    spin_on_start: bool = True
    viewpoint_attempts: int = 3


@dataclass
class TickMetric:
    tick: int
    time_s: float
    coverage: float
    distance_m: float
    t_frontier_ms: float = 0.0
    t_global_ms: float = 0.0
    t_local_ms: float = 0.0
    t_traj_ms: float = 0.0


@dataclass
class EpisodeReport:
    method: str
    seed: int
    ticks: list[TickMetric] = field(default_factory=list)
    path: list[list[float]] = field(default_factory=list)  # t, x, y, z, yaw
    exploration_time_s: float = 0.0
    flight_distance_m: float = 0.0
    final_coverage: float = 0.0
    done: bool = False
    budget_exceeded: bool = False
    block_avg_ms: dict = field(default_factory=dict)
    layer_log: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    max_live_frontiers: int = 0
    max_compressed_dim: int = 0
    max_viewpoint_z_by_layer: dict = field(default_factory=dict)
    unexplorable_frontier_cells: int = 0

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "seed": self.seed,
            "exploration_time_s": self.exploration_time_s,
            "flight_distance_m": self.flight_distance_m,
            "final_coverage": self.final_coverage,
            "done": self.done,
            "budget_exceeded": self.budget_exceeded,
            "block_avg_ms": self.block_avg_ms,
            "layer_log": self.layer_log,
            "warnings": self.warnings[:50],
            "max_live_frontiers": self.max_live_frontiers,
            "max_compressed_dim": self.max_compressed_dim,
            "max_viewpoint_z_by_layer": self.max_viewpoint_z_by_layer,
            "unexplorable_frontier_cells": self.unexplorable_frontier_cells,
            "tick_count": len(self.ticks),
            "path": self.path,
        }


@dataclass
class PlanSnapshot:
    """Frozen planner inputs recorded for offline benchmarking."""

    fset: FrontierSet
    uav_position: np.ndarray
    uav_dists: dict[int, float]
    live_count: int


class ExplorationManager:
    """Drives one episode of closed-loop exploration in a world model."""

    def __init__(self, world: WorldModel, method: str = "go_feap",
                 sensor: SensorSpec | None = None,
                 limits: MotionLimits | None = None,
                 omission: OmissionParams | None = None,
                 local: LocalParams | None = None,
                 frontier: FrontierParams | None = None,
                 run: RunParams | None = None,
                 z_layer: float = 3.0, z_max: float | None = None,
                 observer=None):
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}")
        self.world = world
        self.method = method
        self.sensor = sensor or SensorSpec()
        self.limits = limits or MotionLimits()
        self.omission = omission or OmissionParams()
        self.local = local or LocalParams()
        self.frontier_params = frontier or FrontierParams()
        self.run_params = run or RunParams()
        self.observer = observer

        world_height = float(world.dims_m[2])
        self.sched = LayerSchedule(z_layer=float(z_layer),
                                   z_max=min(z_max or world_height, world_height))
        self.map = VoxelMap(world.resolution, world.dims,
                            clearance_cap=self.run_params.clearance_cap_m)
        self.view = self.map.clip_to_layer(*self.sched.bounds())
        self.full_view = self.map.full_view()
        self.fset = FrontierSet()
        self.window = ObstacleWindow(self.local.window_capacity)
        self.uav = UavState(position=world.spawn_position.copy(),
                            yaw=world.spawn_yaw)

        self.reachable_mask = world.reachable_free_mask()
        self.reachable_total = int(np.count_nonzero(self.reachable_mask))

        self.tick_index = 0
        self.distance_m = 0.0
        self.trajectory: Trajectory | None = None
        self.traj_start = 0.0
        self.target_id: int | None = None
        self.target_invalid = False
        self.spin_done = not self.run_params.spin_on_start
        self.dirty = UpdateRegion.empty_region()
        self.done = False
        self._reach_full: ReachabilityIndex | None = None
        self._reach_slab: ReachabilityIndex | None = None

        self.report = EpisodeReport(method=method, seed=-1)
        self._block_totals = {"frontier": 0.0, "global": 0.0,
                              "local": 0.0, "traj": 0.0}
        self._block_counts = {"frontier": 0, "global": 0, "local": 0, "traj": 0}

    # -- helpers -----------------------------------------------------------

    @property
    def sim_time(self) -> float:
        return self.tick_index * self.run_params.dt

    def coverage(self) -> float:
        known = (self.map.states != UNKNOWN) & self.reachable_mask
        return float(np.count_nonzero(known) / max(self.reachable_total, 1))

    def _emit(self, event: str, **data) -> None:
        if self.observer is not None:
            self.observer(event, self, **data)

    def _dist_fallback(self, src, positions, dists) -> np.ndarray:
        pen = self.frontier_params.unreachable_penalty
        out = np.array(dists, dtype=np.float64)
        src = np.asarray(src, dtype=np.float64)
        for i, d in enumerate(out):
            if not math.isfinite(d):
                out[i] = float(np.linalg.norm(np.asarray(positions[i]) - src)) * pen
        return out

    def _dist_many(self, src, positions) -> np.ndarray:
        raw = path_distances(self.full_view, src, positions, self._reach_full,
                             max_dist=4.0 * self.omission.s_near)
        return self._dist_fallback(src, positions, raw)

    # -- per-tick flow ------------------------------------------------------

    def tick(self) -> StepResult:
        now = self.sim_time
        self.fset.tick(now)
        self._advance_uav(now)
        self._sense_and_update()

        result = StepResult.EXECUTING
        if self._needs_replan(now):
            result = self._replan(now)

        metric = TickMetric(
            tick=self.tick_index, time_s=now, coverage=self.coverage(),
            distance_m=self.distance_m,
            t_frontier_ms=self._tick_times.get("frontier", 0.0),
            t_global_ms=self._tick_times.get("global", 0.0),
            t_local_ms=self._tick_times.get("local", 0.0),
            t_traj_ms=self._tick_times.get("traj", 0.0))
        self.report.ticks.append(metric)
        self.report.path.append([now, float(self.uav.position[0]),
                                 float(self.uav.position[1]),
                                 float(self.uav.position[2]), self.uav.yaw])
        self.report.max_live_frontiers = max(self.report.max_live_frontiers,
                                             len(self.fset))
        self._emit("tick", result=result, metric=metric)
        self.tick_index += 1
        return result

    def _advance_uav(self, now: float) -> None:
        self._tick_times = {}
        if self.trajectory is None:
            return
        t_rel = min(now - self.traj_start, self.trajectory.duration)
        pos, yaw, speed = self.trajectory.sample(t_rel)
        self.distance_m += float(np.linalg.norm(pos - self.uav.position))
        self.uav.position = pos
        self.uav.yaw = wrap_angle(yaw)
        self.uav.speed = speed

    def _sense_and_update(self) -> None:
        frame = render_depth(self.world, self.uav.position, self.uav.yaw,
                             self.sensor)
        update_window(self.window, frame_obstacle_ratio(frame))
        region = self.map.integrate_frame(frame)
        # the vehicle's own volume is certified free (the sensor's vertical
        # blind cone never covers it); radius stays within what planning
        # guarantees against ground truth
        bubble = self.map.clear_bubble(
            self.uav.position, self.limits.safety_margin + self.map.resolution)
        region = region.union(bubble)
        self.dirty = self.dirty.union(region)

        t0 = time.perf_counter()
        report = extract_frontiers(self.view, region, self.fset,
                                   self.frontier_params.split_threshold_m,
                                   self.frontier_params.pair_cache_drift_m)
        self._note_time("frontier", t0)
        # replan early only when the target dissolved; a reshaped target
        # keeps its viewpoint meaningful until the trajectory ends
        if self.target_id is not None and self.target_id in report.removed_ids:
            self.target_invalid = True

    def _needs_replan(self, now: float) -> bool:
        if self.done:
            return False
        if self.trajectory is None:
            return True
        if self.target_invalid:
            return True
        return now - self.traj_start >= self.trajectory.duration - 1e-9

    def _note_time(self, block: str, t0: float) -> None:
        ms = (time.perf_counter() - t0) * 1000.0
        self._tick_times[block] = self._tick_times.get(block, 0.0) + ms
        self._block_totals[block] += ms
        self._block_counts[block] += 1

    # -- replanning ----------------------------------------------------------

    def _replan(self, now: float) -> StepResult:
        self.target_invalid = False
        if not self.spin_done:
            self.spin_done = True
            self.trajectory = spin_trajectory(self.uav, self.limits.yaw_rate_max)
            self.traj_start = now
            self.target_id = None
            self._emit("trajectory", trajectory=self.trajectory, target=None)
            return StepResult.NEW_TRAJECTORY

        t0 = time.perf_counter()
        if not self.dirty.empty:
            self.map.recompute_clearance(self.dirty, fields="pessimistic")
            self.dirty = UpdateRegion.empty_region()
        self._reach_full = ReachabilityIndex(self.full_view)
        self._reach_slab = (self._reach_full if self.view.is_full()
                            else ReachabilityIndex(self.view))
        update_info(self.fset, self.view, self.omission.s_near,
                    self.frontier_params.unreachable_penalty,
                    self._reach_slab, exact_within=self.omission.s_near)
        for fid in sorted(self.fset.stale_viewpoints):
            f = self.fset.frontiers.get(fid)
            if f is None:
                continue
            f.viewpoints = sample_viewpoints(
                f, self.view, self.sensor,
                shell_radii=self.frontier_params.shell_radii_m,
                shell_step_deg=self.frontier_params.shell_step_deg,
                safety_margin=self.limits.safety_margin)
        self.fset.stale_viewpoints.clear()
        self._note_time("frontier", t0)

        if not self.fset.frontiers:
            return self._complete_layer(now, reason="no live frontiers")

        uav_dists = uav_distances(self.fset, self.full_view,
                                  self.uav.position, self.omission,
                                  self._reach_full, bounded=True)
        reachable = self._reachable_ids()
        usable = [fid for fid in self.fset.live_ids()
                  if fid in reachable and self.fset.frontiers[fid].viewpoints]
        if not usable:
            cells = sum(self.fset.frontiers[f].cell_count
                        for f in self.fset.live_ids())
            self.report.unexplorable_frontier_cells += cells
            return self._complete_layer(
                now, reason=f"{len(self.fset)} frontiers unreachable or viewpointless")

        self._emit("replan", uav_dists=dict(uav_dists), usable=list(usable))

        if self.method == "go_feap":
            planned = self._plan_go_feap(now, uav_dists, usable)
        else:
            planned = self._plan_baseline(uav_dists, usable)

        if planned is None:
            self.report.warnings.append(
                f"tick {self.tick_index}: all {len(usable)} usable frontiers "
                "failed trajectory generation")
            return self._complete_layer(now, reason="planning failed")

        fid, traj = planned
        self.trajectory = traj
        self.traj_start = now
        self.target_id = fid
        self._emit("trajectory", trajectory=traj, target=fid)
        return StepResult.NEW_TRAJECTORY

    def _reachable_ids(self) -> set[int]:
        """Frontiers whose representative cell is path-connected to the pose.

        The representative is the cell nearest the average position; an
        average deep inside unknown space must not make an explorable
        frontier look unreachable.  Connectivity comes from the free-space
        component labels, which matches what the grid search would settle.
        """
        ids = self.fset.live_ids()
        if not ids:
            return set()
        reach = self._reach_full
        uav_comps = reach.components_of_point(self.uav.position)
        out = set()
        for fid in ids:
            f = self.fset.frontiers[fid]
            centers = ((f.cells.astype(np.float64) + 0.5) * self.map.resolution
                       + self.map.origin)
            d2 = np.einsum("ij,ij->i", centers - f.avg_position,
                           centers - f.avg_position)
            rep = f.cells[int(np.argmin(d2))]
            if uav_comps & reach.components_of_voxel(rep):
                out.add(fid)
        return out

    def _viewpoint_attempts(self, fid: int,
                            filtered: dict[int, list[ViewpointCandidate]],
                            usable: list[int]) -> list[tuple[int, ViewpointCandidate]]:
        """Deterministic attempt order: target's candidates, then the rest."""
        cap = self.run_params.viewpoint_attempts
        attempts = [(fid, vp) for vp in filtered.get(fid, [])[:cap]]
        for other in usable:
            if other == fid:
                continue
            vps = filtered.get(other)
            if vps is None:
                vps = self.fset.frontiers[other].viewpoints
            attempts.extend((other, vp) for vp in vps[:cap])
        return attempts

    def _try_attempts(self, attempts) -> tuple[int, Trajectory] | None:
        t0 = time.perf_counter()
        try:
            for fid, vp in attempts:
                try:
                    traj = generate_trajectory(self.uav, vp, self.map,
                                               self.full_view, self.limits)
                except Unreachable:
                    continue
                layer = self.sched.current_index
                z = float(vp.position[2])
                prev = self.report.max_viewpoint_z_by_layer.get(str(layer))
                if prev is None or z > prev:
                    self.report.max_viewpoint_z_by_layer[str(layer)] = z
                return fid, traj
            return None
        finally:
            self._note_time("traj", t0)

    def _plan_go_feap(self, now, uav_dists, usable):
        t0 = time.perf_counter()
        order = plan_global(self.fset, self.view, self.uav.position,
                            self.omission, uav_dists)
        self.report.max_compressed_dim = max(self.report.max_compressed_dim,
                                             len(order) + 1)
        self._note_time("global", t0)

        t0 = time.perf_counter()
        plan_ids = [fid for fid in order if fid in usable]
        if not plan_ids:
            plan_ids = list(usable)
        target = plan_ids[0]
        scenario = classify_scenario(uav_dists[target], self.window.mean,
                                     self.local)
        depth_ids = plan_ids[:self.local.dag_depth]

        # one flood covers every candidate's distance from the pose
        flat, owners = [], []
        for fid in depth_ids:
            for vp in self.fset.frontiers[fid].viewpoints:
                flat.append(vp.position)
                owners.append(fid)
        dists = self._dist_many(self.uav.position, flat)
        lookup = {}
        for p, d in zip(flat, dists):
            lookup[tuple(np.round(p, 9))] = float(d)
        dist_fn = lambda src, dst: lookup.get(tuple(np.round(dst, 9)), 0.0)

        filtered = {}
        for fid in depth_ids:
            cands = evaluate_candidates(self.fset.frontiers[fid].viewpoints,
                                        self.uav, dist_fn, self.local)
            filtered[fid] = filter_viewpoints(cands, scenario,
                                              self.local.filter_keep)
        try:
            dag = build_viewpoint_dag(self.uav, depth_ids, filtered,
                                      self.limits, self.local, self._dist_many)
            _, first_vp = shortest_local_path(dag)
            ordered = [(target, first_vp)]
            ordered.extend((target, vp) for vp in filtered[target]
                           if vp is not first_vp)
            ordered = ordered[:self.run_params.viewpoint_attempts]
        except (NoViewpoints, Disconnected):
            ordered = []
        self._note_time("local", t0)

        seen = {id(vp) for _, vp in ordered}
        attempts = ordered + [a for a in self._viewpoint_attempts(
            target, filtered, plan_ids) if id(a[1]) not in seen]
        return self._try_attempts(attempts)

    def _plan_baseline(self, uav_dists, usable):
        t0 = time.perf_counter()
        if self.method == "nearest":
            order = rank_nearest(self.fset, uav_dists)
        else:
            order = rank_fov(self.fset, self.uav, uav_dists, self.sensor)
        order = [fid for fid in order if fid in usable]
        self._note_time("local", t0)
        cap = self.run_params.viewpoint_attempts
        attempts = [(fid, vp) for fid in order
                    for vp in self.fset.frontiers[fid].viewpoints[:cap]]
        return self._try_attempts(attempts)

    # -- layers ---------------------------------------------------------------

    def _complete_layer(self, now: float, reason: str) -> StepResult:
        counts = self.map.state_counts()
        entry = {
            "tick": self.tick_index,
            "completed_index": self.sched.current_index,
            "bounds": list(self.sched.bounds()),
            "reason": reason,
            "unknown_voxels": counts["unknown"],
        }
        self._emit("layer_complete", entry=entry)
        self.trajectory = None
        self.target_id = None
        if self.sched.is_last():
            entry["advanced_to"] = None
            self.report.layer_log.append(entry)
            self.done = True
            return StepResult.DONE
        bounds = self.sched.advance()
        entry["advanced_to"] = list(bounds)
        entry["unknown_after_advance"] = self.map.state_counts()["unknown"]
        self.report.layer_log.append(entry)
        self.view = self.map.clip_to_layer(*bounds)
        self.fset = FrontierSet()
        self.fset.tick(now)
        extract_full(self.view, self.fset,
                     self.frontier_params.split_threshold_m)
        self._emit("layer_start", index=self.sched.current_index,
                   bounds=bounds)
        return StepResult.LAYER_COMPLETE

    # -- finishing -------------------------------------------------------------

    def finalize(self, seed: int, budget_exceeded: bool) -> EpisodeReport:
        r = self.report
        r.seed = seed
        r.exploration_time_s = self.sim_time
        r.flight_distance_m = self.distance_m
        r.final_coverage = self.coverage()
        r.done = self.done
        r.budget_exceeded = budget_exceeded
        r.block_avg_ms = {
            name: (self._block_totals[name] / self._block_counts[name]
                   if self._block_counts[name] else 0.0)
            for name in self._block_totals}
        r.block_avg_ms["total"] = sum(
            v for k, v in r.block_avg_ms.items())
        return r


def run_episode(world: WorldModel, method: str = "go_feap", seed: int = 0,
                observer=None, **manager_kwargs) -> EpisodeReport:
    """Run closed-loop exploration until done or the tick budget runs out."""
    mgr = ExplorationManager(world, method=method, observer=observer,
                             **manager_kwargs)
    budget = mgr.run_params.tick_budget
    budget_exceeded = True
    for _ in range(budget):
        result = mgr.tick()
        if result is StepResult.DONE:
            budget_exceeded = False
            break
    if budget_exceeded:
        mgr.report.warnings.append("tick budget exhausted before completion")
    return mgr.finalize(seed, budget_exceeded)


def take_plan_snapshot(mgr: ExplorationManager,
                       uav_dists: dict[int, float]) -> PlanSnapshot:
    """Freeze the planner inputs of the current replan for offline use.

    The pairwise distance cache is already complete at replan time, so the
    snapshot can be replanned later without touching the (since mutated)
    map.
    """
    return PlanSnapshot(fset=copy.deepcopy(mgr.fset),
                        uav_position=mgr.uav.position.copy(),
                        uav_dists=dict(uav_dists),
                        live_count=len(mgr.fset))


def benchmark_compression(snapshots: list[PlanSnapshot], view,
                          params: OmissionParams) -> dict:
    """Compare compressed against full-matrix planning on frozen snapshots.

    Returns average wall milliseconds for the compressed pipeline (the
    production path) and for building plus solving the uncompressed
    matrix, plus the largest compressed dimension seen.
    """
    comp_ms = []
    full_ms = []
    max_dim = 0
    for snap in snapshots:
        t0 = time.perf_counter()
        order = plan_global(snap.fset, view, snap.uav_position, params,
                            snap.uav_dists)
        comp_ms.append((time.perf_counter() - t0) * 1000.0)
        max_dim = max(max_dim, len(order) + 1)

        t0 = time.perf_counter()
        full = build_cost_matrix(snap.fset, view, snap.uav_position, params,
                                 snap.uav_dists)
        solve_tsp(full)
        full_ms.append((time.perf_counter() - t0) * 1000.0)
    return {
        "avg_compressed_ms": sum(comp_ms) / max(len(comp_ms), 1),
        "avg_full_ms": sum(full_ms) / max(len(full_ms), 1),
        "max_compressed_dim": max_dim,
        "snapshots": len(snapshots),
    }
