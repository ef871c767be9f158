"""Ground-truth worlds, simulated depth sensing, and baseline planners.

Worlds are closed voxel volumes (outer shell occupied) built from
axis-aligned boxes, so they serialise exactly: the JSON world format
stores metre-space boxes that re-voxelise to the identical occupancy set.
Generators are deterministic per seed and verify free-space connectivity
by flood fill.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import _kernels
from .errors import DegenerateDims, NoViewpoints, PoseInObstacle
from .frontiers import FrontierSet, ViewpointCandidate
from .local_plan import Trajectory, UavState, wrap_angle
from .voxel import SensorFrame

_STRUCT6 = ndimage.generate_binary_structure(3, 1)


@dataclass
class SensorSpec:
    fov_h_deg: float = 80.0
    fov_v_deg: float = 60.0
    max_range: float = 4.5
    rays_per_deg: float = 2.0
    _dirs: np.ndarray | None = field(default=None, repr=False, compare=False)

    def body_dirs(self) -> np.ndarray:
        """Ray direction grid in the body frame (x forward), cached."""
        if self._dirs is None:
            n_h = max(1, int(round(self.fov_h_deg * self.rays_per_deg)))
            n_v = max(1, int(round(self.fov_v_deg * self.rays_per_deg)))
            h_half = math.radians(self.fov_h_deg) / 2.0
            v_half = math.radians(self.fov_v_deg) / 2.0
            az = -h_half + (np.arange(n_h) + 0.5) * (2.0 * h_half / n_h)
            el = -v_half + (np.arange(n_v) + 0.5) * (2.0 * v_half / n_v)
            azg, elg = np.meshgrid(az, el, indexing="ij")
            dirs = np.stack([
                np.cos(elg) * np.cos(azg),
                np.cos(elg) * np.sin(azg),
                np.sin(elg),
            ], axis=-1).reshape(-1, 3)
            self._dirs = np.ascontiguousarray(dirs)
        return self._dirs


@dataclass
class UavModel:
    position: np.ndarray
    yaw: float
    speed: float = 0.0
    v_max: float = 2.0
    yaw_rate_max: float = 1.0

    def state(self) -> UavState:
        return UavState(position=self.position.copy(), yaw=self.yaw,
                        speed=self.speed)


class WorldModel:
    """Bounded, closed ground-truth world on a voxel grid."""

    def __init__(self, dims_m, resolution: float, boxes: list[dict],
                 spawn_position, spawn_yaw: float = 0.0):
        self.dims_m = np.asarray(dims_m, dtype=np.float64)
        self.resolution = float(resolution)
        self.dims = np.round(self.dims_m / self.resolution).astype(np.int64)
        if np.any(self.dims < 4):
            raise DegenerateDims(f"world needs >= 4 voxels per axis, got {self.dims}")
        self.boxes = boxes
        self.occ = np.zeros(tuple(self.dims), dtype=np.uint8)
        for b in boxes:
            lo = np.round(np.asarray(b["min"]) / self.resolution).astype(np.int64)
            hi = np.round(np.asarray(b["max"]) / self.resolution).astype(np.int64)
            lo = np.maximum(lo, 0)
            hi = np.minimum(hi, self.dims)
            if np.all(hi > lo):
                self.occ[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] = 1
        self.spawn_position = np.asarray(spawn_position, dtype=np.float64)
        self.spawn_yaw = float(spawn_yaw)
        self._gt_clearance: np.ndarray | None = None
        self.validate()

    def validate(self) -> None:
        if not self.is_free(self.spawn_position):
            raise ValueError("spawn voxel is not free")
        shell = [self.occ[0, :, :], self.occ[-1, :, :],
                 self.occ[:, 0, :], self.occ[:, -1, :],
                 self.occ[:, :, 0], self.occ[:, :, -1]]
        if not all(np.all(s == 1) for s in shell):
            raise ValueError("world is not closed (outer shell must be occupied)")

    def voxel_of(self, p) -> np.ndarray:
        return np.floor(np.asarray(p, dtype=np.float64) / self.resolution).astype(np.int64)

    def is_free(self, p) -> bool:
        v = self.voxel_of(p)
        if np.any(v < 0) or np.any(v >= self.dims):
            return False
        return self.occ[v[0], v[1], v[2]] == 0

    def gt_clearance(self) -> np.ndarray:
        """Distance (m) to the nearest ground-truth occupied voxel."""
        if self._gt_clearance is None:
            self._gt_clearance = ndimage.distance_transform_edt(
                self.occ == 0, sampling=self.resolution)
        return self._gt_clearance

    def reachable_free_mask(self) -> np.ndarray:
        """6-connected free component containing the spawn voxel."""
        labels, _ = ndimage.label(self.occ == 0, structure=_STRUCT6)
        s = self.voxel_of(self.spawn_position)
        return labels == labels[s[0], s[1], s[2]]

    def free_component_count(self) -> int:
        _, count = ndimage.label(self.occ == 0, structure=_STRUCT6)
        return int(count)

    def to_json(self) -> dict:
        return {
            "dims_m": [float(x) for x in self.dims_m],
            "resolution": self.resolution,
            "boxes": self.boxes,
            "spawn": {"position": [float(x) for x in self.spawn_position],
                      "yaw": self.spawn_yaw},
        }

    @staticmethod
    def from_json(doc: dict) -> "WorldModel":
        return WorldModel(doc["dims_m"], doc["resolution"], doc["boxes"],
                          doc["spawn"]["position"], doc["spawn"].get("yaw", 0.0))


def save_world(world: WorldModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(world.to_json(), fh, indent=1)


def load_world(path) -> WorldModel:
    with open(path) as fh:
        return WorldModel.from_json(json.load(fh))


# -- sensing -------------------------------------------------------------


def render_depth(world: WorldModel, position, yaw: float,
                 spec: SensorSpec) -> SensorFrame:
    """Simulate one depth frame from a pose inside free space."""
    pos = np.asarray(position, dtype=np.float64)
    if not world.is_free(pos):
        raise PoseInObstacle(f"sensor pose {pos} not in free space")
    frame = SensorFrame(position=pos, yaw=float(yaw),
                        dirs_body=spec.body_dirs(),
                        depths=np.empty(spec.body_dirs().shape[0]),
                        max_range=spec.max_range,
                        fov_h_deg=spec.fov_h_deg, fov_v_deg=spec.fov_v_deg)
    dirs_world = np.ascontiguousarray(frame.world_dirs())
    _kernels.render_rays(world.occ, pos[0], pos[1], pos[2], dirs_world,
                         float(spec.max_range), world.resolution, frame.depths)
    # depth 0 would mean the pose voxel itself is occupied
    np.maximum(frame.depths, 1e-9, out=frame.depths)
    return frame


def execute_trajectory(uav: UavModel, traj: Trajectory, dt: float) -> np.ndarray:
    """Exact-tracking pose stream sampled every dt.

    Rows are (t, x, y, z, yaw, speed); the final row is the trajectory end.
    The model state is advanced to the end pose.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    steps = int(math.floor(traj.duration / dt + 1e-9))
    times = [i * dt for i in range(steps + 1)]
    if not times or times[-1] < traj.duration - 1e-12:
        times.append(traj.duration)
    rows = np.empty((len(times), 6))
    for i, t in enumerate(times):
        pos, yaw, speed = traj.sample(t)
        rows[i, 0] = t
        rows[i, 1:4] = pos
        rows[i, 4] = yaw
        rows[i, 5] = speed
    uav.position = rows[-1, 1:4].copy()
    uav.yaw = wrap_angle(float(rows[-1, 4]))
    uav.speed = float(rows[-1, 5])
    return rows


# -- world generators ----------------------------------------------------


def _shell_boxes(dims_m, res: float) -> list[dict]:
    dx, dy, dz = (float(v) for v in dims_m)
    t = res
    return [
        {"min": [0.0, 0.0, 0.0], "max": [dx, dy, t]},
        {"min": [0.0, 0.0, dz - t], "max": [dx, dy, dz]},
        {"min": [0.0, 0.0, 0.0], "max": [dx, t, dz]},
        {"min": [0.0, dy - t, 0.0], "max": [dx, dy, dz]},
        {"min": [0.0, 0.0, 0.0], "max": [t, dy, dz]},
        {"min": [dx - t, 0.0, 0.0], "max": [dx, dy, dz]},
    ]


def _pick_spawn(occ: np.ndarray, res: float, prefer, min_clear: float) -> np.ndarray:
    """Free voxel centre closest to `prefer` with enough clearance."""
    clear = ndimage.distance_transform_edt(occ == 0, sampling=res)
    ok = np.argwhere((occ == 0) & (clear >= min_clear))
    if ok.shape[0] == 0:
        ok = np.argwhere(occ == 0)
    centers = (ok + 0.5) * res
    prefer = np.asarray(prefer, dtype=np.float64)
    d2 = np.einsum("ij,ij->i", centers - prefer, centers - prefer)
    order = np.lexsort((ok[:, 2], ok[:, 1], ok[:, 0], d2))
    return centers[order[0]]


def generate_maze(dims_m, resolution: float, seed: int,
                  min_chamber_m: float = 2.4, wall_m: float = 0.2,
                  door_m: float = 1.4) -> WorldModel:
    """Recursive-division maze with full-height walls and doored chambers.

    Free space stays one 6-connected component (each dividing wall keeps a
    door); deterministic per seed.
    """
    dims_m = np.asarray(dims_m, dtype=np.float64)
    dims = np.round(dims_m / resolution).astype(np.int64)
    if np.any(dims < 4):
        raise DegenerateDims(f"need >= 4 voxels per axis, got {dims}")
    rng = np.random.Generator(np.random.PCG64(seed))

    wall_v = max(1, int(round(wall_m / resolution)))
    door_v = max(2, int(round(door_m / resolution)))
    min_v = max(door_v + 2, int(round(min_chamber_m / resolution)))
    z_lo, z_hi = 1, int(dims[2]) - 1  # between floor and ceiling shells

    boxes = _shell_boxes(dims_m, resolution)

    def divide(x0, x1, y0, y1):
        # interior chamber [x0, x1) x [y0, y1) in voxels
        w, h = x1 - x0, y1 - y0
        can_x = w >= 2 * min_v + wall_v
        can_y = h >= 2 * min_v + wall_v
        if not can_x and not can_y:
            return
        if can_x and (not can_y or w >= h):
            wx = int(rng.integers(x0 + min_v, x1 - min_v - wall_v + 1))
            gap0 = int(rng.integers(y0, y1 - door_v + 1))
            _wall_with_gap(boxes, resolution, axis=0, at=wx, thick=wall_v,
                           lo=y0, hi=y1, gap0=gap0, gap1=gap0 + door_v,
                           z0=z_lo, z1=z_hi)
            divide(x0, wx, y0, y1)
            divide(wx + wall_v, x1, y0, y1)
        else:
            wy = int(rng.integers(y0 + min_v, y1 - min_v - wall_v + 1))
            gap0 = int(rng.integers(x0, x1 - door_v + 1))
            _wall_with_gap(boxes, resolution, axis=1, at=wy, thick=wall_v,
                           lo=x0, hi=x1, gap0=gap0, gap1=gap0 + door_v,
                           z0=z_lo, z1=z_hi)
            divide(x0, x1, y0, wy)
            divide(x0, x1, wy + wall_v, y1)

    divide(1, int(dims[0]) - 1, 1, int(dims[1]) - 1)

    return _finish_world(dims_m, resolution, boxes,
                         prefer=(1.2, 1.2, float(dims_m[2]) / 2.0))


def _wall_with_gap(boxes, res, axis, at, thick, lo, hi, gap0, gap1, z0, z1):
    """Append the (up to two) boxes of a full-height wall with a door gap."""
    zmin, zmax = z0 * res, z1 * res
    if axis == 0:
        xmin, xmax = at * res, (at + thick) * res
        if gap0 > lo:
            boxes.append({"min": [xmin, lo * res, zmin],
                          "max": [xmax, gap0 * res, zmax]})
        if gap1 < hi:
            boxes.append({"min": [xmin, gap1 * res, zmin],
                          "max": [xmax, hi * res, zmax]})
    else:
        ymin, ymax = at * res, (at + thick) * res
        if gap0 > lo:
            boxes.append({"min": [lo * res, ymin, zmin],
                          "max": [gap0 * res, ymax, zmax]})
        if gap1 < hi:
            boxes.append({"min": [gap1 * res, ymin, zmin],
                          "max": [hi * res, ymax, zmax]})


def _finish_world(dims_m, resolution, boxes, prefer) -> WorldModel:
    draft = WorldModel.__new__(WorldModel)
    draft.dims_m = np.asarray(dims_m, dtype=np.float64)
    draft.resolution = float(resolution)
    draft.dims = np.round(draft.dims_m / draft.resolution).astype(np.int64)
    draft.boxes = boxes
    draft.occ = np.zeros(tuple(draft.dims), dtype=np.uint8)
    for b in boxes:
        lo = np.round(np.asarray(b["min"]) / draft.resolution).astype(np.int64)
        hi = np.round(np.asarray(b["max"]) / draft.resolution).astype(np.int64)
        lo = np.maximum(lo, 0)
        hi = np.minimum(hi, draft.dims)
        if np.all(hi > lo):
            draft.occ[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] = 1
    spawn = _pick_spawn(draft.occ, draft.resolution, prefer, min_clear=0.45)
    return WorldModel(dims_m, resolution, boxes, spawn, 0.0)


def generate_plant(dims_m, resolution: float, seed: int) -> WorldModel:
    """Industrial-style world: columns, elevated platforms, walkways.

    Structures that would disconnect free space are dropped; extra high
    platforms are added until at least 30% of occupied voxels sit above
    half height.  Deterministic per seed.
    """
    dims_m = np.asarray(dims_m, dtype=np.float64)
    dims = np.round(dims_m / resolution).astype(np.int64)
    if np.any(dims < 4):
        raise DegenerateDims(f"need >= 4 voxels per axis, got {dims}")
    rng = np.random.Generator(np.random.PCG64(seed))
    dx, dy, dz = (float(v) for v in dims_m)

    boxes = _shell_boxes(dims_m, resolution)
    occ = np.zeros(tuple(dims), dtype=np.uint8)

    def voxelize(box):
        lo = np.round(np.asarray(box["min"]) / resolution).astype(np.int64)
        hi = np.round(np.asarray(box["max"]) / resolution).astype(np.int64)
        lo = np.maximum(lo, 0)
        hi = np.minimum(hi, dims)
        return lo, hi

    for b in boxes:
        lo, hi = voxelize(b)
        occ[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] = 1

    def try_add(box) -> bool:
        lo, hi = voxelize(box)
        if np.any(hi <= lo):
            return False
        saved = occ[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]].copy()
        occ[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] = 1
        labels, count = ndimage.label(occ == 0, structure=_STRUCT6)
        if count != 1:
            occ[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] = saved
            return False
        boxes.append(box)
        return True

    def snap(v):
        return round(float(v) / resolution) * resolution

    n_cols = max(4, int(dx * dy / 55.0))
    for _ in range(n_cols):
        w = snap(rng.uniform(0.8, 1.6))
        d = snap(rng.uniform(0.8, 1.6))
        x = snap(rng.uniform(1.5, dx - 1.5 - w))
        y = snap(rng.uniform(1.5, dy - 1.5 - d))
        h = dz - resolution if rng.random() < 0.6 else snap(dz * rng.uniform(0.4, 0.8))
        try_add({"min": [x, y, resolution], "max": [x + w, y + d, snap(h)]})

    n_plat = max(6, int(dx * dy * dz / 500.0))
    for _ in range(n_plat):
        w = snap(rng.uniform(2.5, 6.0))
        d = snap(rng.uniform(2.5, 6.0))
        x = snap(rng.uniform(1.0, max(1.0 + resolution, dx - 1.0 - w)))
        y = snap(rng.uniform(1.0, max(1.0 + resolution, dy - 1.0 - d)))
        z = snap(rng.uniform(0.25 * dz, 0.88 * dz))
        t = snap(max(resolution, 0.3))
        try_add({"min": [x, y, z], "max": [x + w, y + d, z + t]})

    n_walk = max(2, int((dx + dy) / 18.0))
    for _ in range(n_walk):
        horizontal = rng.random() < 0.5
        width = snap(rng.uniform(1.2, 2.0))
        z = snap(rng.uniform(0.5 * dz, 0.9 * dz))
        t = snap(max(resolution, 0.3))
        if horizontal:
            y = snap(rng.uniform(1.5, dy - 1.5 - width))
            x0 = snap(rng.uniform(1.0, dx * 0.3))
            x1 = snap(rng.uniform(dx * 0.6, dx - 1.0))
            try_add({"min": [x0, y, z], "max": [x1, y + width, z + t]})
        else:
            x = snap(rng.uniform(1.5, dx - 1.5 - width))
            y0 = snap(rng.uniform(1.0, dy * 0.3))
            y1 = snap(rng.uniform(dy * 0.6, dy - 1.0))
            try_add({"min": [x, y0, z], "max": [x + width, y1, z + t]})

    # raise the high-structure share to >= 30% of occupied voxels
    def high_fraction() -> float:
        half = int(dims[2]) // 2
        total = int(np.count_nonzero(occ))
        high = int(np.count_nonzero(occ[:, :, half:]))
        return high / max(total, 1)

    attempts = 0
    while high_fraction() < 0.32 and attempts < 200:
        attempts += 1
        w = snap(rng.uniform(2.0, 5.0))
        d = snap(rng.uniform(2.0, 5.0))
        x = snap(rng.uniform(1.0, max(1.0 + resolution, dx - 1.0 - w)))
        y = snap(rng.uniform(1.0, max(1.0 + resolution, dy - 1.0 - d)))
        z = snap(rng.uniform(0.55 * dz, 0.9 * dz))
        t = snap(max(resolution, 0.3))
        try_add({"min": [x, y, z], "max": [x + w, y + d, z + t]})

    return _finish_world(dims_m, resolution, boxes,
                         prefer=(1.5, 1.5, min(1.5, dz / 2.0)))


# -- baseline planners ----------------------------------------------------


def rank_nearest(fset: FrontierSet, uav_dists: dict[int, float]) -> list[int]:
    """All live frontier ids by ascending path distance (ties by id)."""
    return sorted(fset.live_ids(), key=lambda fid: (uav_dists[fid], fid))


def rank_fov(fset: FrontierSet, state: UavState,
             uav_dists: dict[int, float], spec: SensorSpec) -> list[int]:
    """In-cone frontiers first (each group by ascending distance)."""
    h_half = math.radians(spec.fov_h_deg) / 2.0
    v_half = math.radians(spec.fov_v_deg) / 2.0
    in_cone = []
    out_cone = []
    for fid in fset.live_ids():
        d = fset.frontiers[fid].avg_position - state.position
        bearing = math.atan2(d[1], d[0])
        horiz = math.hypot(d[0], d[1])
        elev = math.atan2(d[2], horiz)
        if abs(wrap_angle(bearing - state.yaw)) <= h_half and abs(elev) <= v_half:
            in_cone.append(fid)
        else:
            out_cone.append(fid)
    key = lambda fid: (uav_dists[fid], fid)
    return sorted(in_cone, key=key) + sorted(out_cone, key=key)


def _first_viewpoint(fset: FrontierSet, order: list[int]) -> ViewpointCandidate:
    for fid in order:
        vps = fset.frontiers[fid].viewpoints
        if vps:
            return vps[0]
    raise NoViewpoints("no live frontier has a usable viewpoint")


def baseline_nearest(state: UavState, fset: FrontierSet,
                     uav_dists: dict[int, float]) -> ViewpointCandidate:
    """Best viewpoint of the closest frontier."""
    return _first_viewpoint(fset, rank_nearest(fset, uav_dists))


def baseline_fov(state: UavState, fset: FrontierSet,
                 uav_dists: dict[int, float],
                 spec: SensorSpec) -> ViewpointCandidate:
    """Best viewpoint of the nearest in-cone frontier; nearest overall
    when the cone is empty."""
    return _first_viewpoint(fset, rank_fov(fset, state, uav_dists, spec))
