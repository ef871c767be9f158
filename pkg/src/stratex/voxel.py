"""Occupancy voxel map: frame integration, clearance field, layer views.

States are uint8 with Unknown=0, Free=1, Occupied=2.  Knowledge is
monotone: integration never moves a voxel back to Unknown, and Occupied
is sticky.  The clearance fields are exact Euclidean distance transforms
(metres, clamped at a configurable cap) recomputed over padded windows so
incremental updates stay exact everywhere they can change.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import _kernels
from .errors import EmptySlab, PoseOutOfBounds

UNKNOWN = _kernels.UNKNOWN
FREE = _kernels.FREE
OCCUPIED = _kernels.OCCUPIED


@dataclass(frozen=True)
class UpdateRegion:
    """Inclusive axis-aligned voxel box touched by an update."""

    lo: tuple[int, int, int] = (0, 0, 0)
    hi: tuple[int, int, int] = (-1, -1, -1)

    @property
    def empty(self) -> bool:
        return any(h < l for l, h in zip(self.lo, self.hi))

    @staticmethod
    def empty_region() -> "UpdateRegion":
        return UpdateRegion()

    @staticmethod
    def whole(dims) -> "UpdateRegion":
        return UpdateRegion((0, 0, 0), (int(dims[0]) - 1, int(dims[1]) - 1, int(dims[2]) - 1))

    def union(self, other: "UpdateRegion") -> "UpdateRegion":
        if self.empty:
            return other
        if other.empty:
            return self
        lo = tuple(min(a, b) for a, b in zip(self.lo, other.lo))
        hi = tuple(max(a, b) for a, b in zip(self.hi, other.hi))
        return UpdateRegion(lo, hi)

    def expanded(self, pad: int, dims) -> "UpdateRegion":
        if self.empty:
            return self
        lo = tuple(max(0, l - pad) for l in self.lo)
        hi = tuple(min(int(d) - 1, h + pad) for h, d in zip(self.hi, dims))
        return UpdateRegion(lo, hi)

    def slices(self) -> tuple[slice, slice, slice]:
        return (slice(self.lo[0], self.hi[0] + 1),
                slice(self.lo[1], self.hi[1] + 1),
                slice(self.lo[2], self.hi[2] + 1))


def yaw_rotation(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass
class SensorFrame:
    """One simulated depth frame: pose plus per-ray direction and depth.

    Directions are unit vectors in the body frame (x forward); a depth
    equal to max_range marks a free-space ray, anything smaller is an
    obstacle hit.
    """

    position: np.ndarray
    yaw: float
    dirs_body: np.ndarray  # (n, 3) float64 unit vectors
    depths: np.ndarray  # (n,) float64
    max_range: float
    fov_h_deg: float
    fov_v_deg: float

    def world_dirs(self) -> np.ndarray:
        return self.dirs_body @ yaw_rotation(self.yaw).T

    def validate(self) -> None:
        h_half = np.radians(self.fov_h_deg) / 2.0
        v_half = np.radians(self.fov_v_deg) / 2.0
        bearings = np.arctan2(self.dirs_body[:, 1], self.dirs_body[:, 0])
        horiz = np.hypot(self.dirs_body[:, 0], self.dirs_body[:, 1])
        elevs = np.arctan2(self.dirs_body[:, 2], horiz)
        if np.any(np.abs(bearings) > h_half + 1e-9):
            raise ValueError("ray bearing outside horizontal FOV")
        if np.any(np.abs(elevs) > v_half + 1e-9):
            raise ValueError("ray elevation outside vertical FOV")
        if np.any(self.depths <= 0.0) or np.any(self.depths > self.max_range):
            raise ValueError("depth outside (0, max_range]")


class VoxelMap:
    """Dense 3D occupancy grid with on-demand clearance fields."""

    def __init__(self, resolution: float, dims, origin=(0.0, 0.0, 0.0),
                 clearance_cap: float = 2.0):
        self.resolution = float(resolution)
        self.dims = np.asarray(dims, dtype=np.int64)
        if np.any(self.dims <= 0):
            raise ValueError("dims must be positive")
        self.origin = np.asarray(origin, dtype=np.float64)
        self.states = np.zeros(tuple(self.dims), dtype=np.uint8)
        self.clearance_cap = float(clearance_cap)
        # distance to nearest known-Occupied voxel
        self.clearance = np.full(tuple(self.dims), self.clearance_cap, dtype=np.float32)
        # distance to nearest non-Free voxel (Unknown treated as blocking)
        self.clearance_pess = np.zeros(tuple(self.dims), dtype=np.float32)
        self._ws = None
        self._ws_run = 0

    def search_workspace(self):
        """Reusable stamped arrays for the no-allocation grid search."""
        n = int(np.prod(self.dims))
        if self._ws is None:
            self._ws = (
                np.empty(n, dtype=np.float64),  # dist
                np.empty(n, dtype=np.float64),  # key
                np.empty(n, dtype=np.int32),    # cnt1
                np.empty(n, dtype=np.int32),    # cnt2
                np.empty(n, dtype=np.int32),    # cnt3
                np.empty(n, dtype=np.int64),    # parents
                np.empty(n, dtype=np.int64),    # pos
                np.empty(n, dtype=np.int64),    # heap
                np.zeros(n, dtype=np.int64),    # stamp
                np.zeros(n, dtype=np.int64),    # tstamp
            )
        self._ws_run += 1
        return self._ws, self._ws_run

    # -- coordinates ---------------------------------------------------

    def world_to_voxel(self, p) -> np.ndarray:
        return np.floor((np.asarray(p, dtype=np.float64) - self.origin)
                        / self.resolution).astype(np.int64)

    def voxel_center(self, v) -> np.ndarray:
        return self.origin + (np.asarray(v, dtype=np.float64) + 0.5) * self.resolution

    def in_bounds(self, v) -> bool:
        v = np.asarray(v)
        return bool(np.all(v >= 0) and np.all(v < self.dims))

    @property
    def z_extent(self) -> tuple[float, float]:
        return float(self.origin[2]), float(self.origin[2] + self.dims[2] * self.resolution)

    # -- integration ---------------------------------------------------

    def integrate_frame(self, frame: SensorFrame) -> UpdateRegion:
        """Carve a depth frame into the map; returns the changed voxel box."""
        pos = np.asarray(frame.position, dtype=np.float64)
        if not self.in_bounds(self.world_to_voxel(pos)):
            raise PoseOutOfBounds(f"sensor origin {pos} outside map")
        local = pos - self.origin
        dirs = np.ascontiguousarray(frame.world_dirs(), dtype=np.float64)
        depths = np.ascontiguousarray(frame.depths, dtype=np.float64)
        changed, lox, loy, loz, hix, hiy, hiz = _kernels.integrate_rays(
            self.states, local[0], local[1], local[2], dirs, depths,
            float(frame.max_range), self.resolution)
        if changed == 0:
            return UpdateRegion.empty_region()
        return UpdateRegion((lox, loy, loz), (hix, hiy, hiz))

    def clear_bubble(self, center, radius: float) -> UpdateRegion:
        """Mark Unknown voxels within radius of a certified-free point Free.

        Used for the vehicle's own swept volume, which the sensor's
        vertical blind cone never observes; the radius must not exceed the
        clearance the caller can actually guarantee.  Occupied voxels are
        never touched.
        """
        c = np.asarray(center, dtype=np.float64)
        v = self.world_to_voxel(c)
        r_vox = int(np.ceil(radius / self.resolution)) + 1
        lo = np.maximum(v - r_vox, 0)
        hi = np.minimum(v + r_vox, self.dims - 1)
        if np.any(hi < lo):
            return UpdateRegion.empty_region()
        sl = tuple(slice(int(l), int(h) + 1) for l, h in zip(lo, hi))
        grids = np.meshgrid(*[np.arange(int(l), int(h) + 1) for l, h in zip(lo, hi)],
                            indexing="ij")
        centers = np.stack(grids, axis=-1) * self.resolution + (
            self.origin + 0.5 * self.resolution)
        inside = np.linalg.norm(centers - c, axis=-1) <= radius
        sub = self.states[sl]
        hit = inside & (sub == UNKNOWN)
        if not hit.any():
            return UpdateRegion.empty_region()
        sub[hit] = FREE
        idx = np.argwhere(hit)
        rlo = idx.min(axis=0) + lo
        rhi = idx.max(axis=0) + lo
        return UpdateRegion(tuple(int(x) for x in rlo), tuple(int(x) for x in rhi))

    # -- clearance -----------------------------------------------------

    def recompute_clearance(self, region: UpdateRegion | None = None,
                            fields: str = "both") -> None:
        """Refresh the clearance field(s) over (a window around) region.

        The exact window is the region padded by twice the cap so every
        voxel whose distance can have changed (anything within cap of a
        state change) gets an exact value.  fields selects "both",
        "optimistic", or "pessimistic" (planning only consumes the
        pessimistic one, so hot paths skip the other).
        """
        if region is None:
            region = UpdateRegion.whole(self.dims)
        if region.empty:
            return
        cap_vox = int(np.ceil(self.clearance_cap / self.resolution)) + 1
        window = region.expanded(2 * cap_vox, self.dims)
        write = region.expanded(cap_vox, self.dims)
        wsl = window.slices()
        states_w = self.states[wsl]
        inner = tuple(slice(l - wl, h - wl + 1)
                      for l, h, wl in zip(write.lo, write.hi, window.lo))

        if fields in ("both", "optimistic"):
            occ = states_w == OCCUPIED
            if occ.any():
                d = ndimage.distance_transform_edt(~occ, sampling=self.resolution)
                np.minimum(d, self.clearance_cap, out=d)
            else:
                d = np.full(states_w.shape, self.clearance_cap)
            self.clearance[write.slices()] = d[inner].astype(np.float32)

        if fields in ("both", "pessimistic"):
            blocked = states_w != FREE
            if blocked.any():
                dp = ndimage.distance_transform_edt(~blocked, sampling=self.resolution)
                np.minimum(dp, self.clearance_cap, out=dp)
            else:
                dp = np.full(states_w.shape, self.clearance_cap)
            self.clearance_pess[write.slices()] = dp[inner].astype(np.float32)

    def clearance_at(self, p, pessimistic: bool = True) -> float:
        """Clearance (metres) at a world point, looked up per voxel."""
        v = self.world_to_voxel(p)
        if not self.in_bounds(v):
            return 0.0
        arr = self.clearance_pess if pessimistic else self.clearance
        return float(arr[v[0], v[1], v[2]])

    # -- layer views ----------------------------------------------------

    def clip_to_layer(self, z_lo: float, z_hi: float) -> "LayerView":
        if not z_lo < z_hi:
            raise ValueError("z_lo must be below z_hi")
        res = self.resolution
        oz = float(self.origin[2])
        # membership by voxel centre: centre in [z_lo, z_hi)
        k0 = int(np.ceil((z_lo - oz) / res - 0.5))
        k1 = int(np.ceil((z_hi - oz) / res - 0.5))
        k0 = max(k0, 0)
        k1 = min(k1, int(self.dims[2]))
        if k0 >= k1:
            raise EmptySlab(f"slab [{z_lo}, {z_hi}) misses the map")
        return LayerView(self, k0, k1)

    def full_view(self) -> "LayerView":
        return LayerView(self, 0, int(self.dims[2]))

    # -- bookkeeping -----------------------------------------------------

    def state_counts(self) -> dict[str, int]:
        flat = np.bincount(self.states.ravel(), minlength=3)
        return {"unknown": int(flat[UNKNOWN]), "free": int(flat[FREE]),
                "occupied": int(flat[OCCUPIED])}

    def snapshot(self) -> dict:
        """Run-length-encoded export of the map state."""
        flat = self.states.ravel()
        boundaries = np.flatnonzero(np.diff(flat)) + 1
        starts = np.concatenate(([0], boundaries))
        ends = np.concatenate((boundaries, [flat.size]))
        runs = [[int(flat[s]), int(e - s)] for s, e in zip(starts, ends)]
        return {
            "resolution": self.resolution,
            "origin": [float(x) for x in self.origin],
            "dims": [int(d) for d in self.dims],
            "states_rle": runs,
        }

    @staticmethod
    def from_snapshot(snap: dict) -> "VoxelMap":
        m = VoxelMap(snap["resolution"], snap["dims"], snap["origin"])
        parts = [np.full(count, value, dtype=np.uint8)
                 for value, count in snap["states_rle"]]
        flat = np.concatenate(parts) if parts else np.zeros(0, dtype=np.uint8)
        if flat.size != m.states.size:
            raise ValueError("snapshot length does not match dims")
        m.states = flat.reshape(tuple(m.dims))
        return m


@dataclass
class LayerView:
    """Read view of a map restricted to a z slab [k0, k1) of voxels."""

    map: VoxelMap
    k0: int
    k1: int

    @property
    def resolution(self) -> float:
        return self.map.resolution

    @property
    def dims(self) -> np.ndarray:
        return self.map.dims

    @property
    def z_bounds(self) -> tuple[float, float]:
        oz = float(self.map.origin[2])
        return (oz + self.k0 * self.map.resolution,
                oz + self.k1 * self.map.resolution)

    def contains_voxel(self, v) -> bool:
        return self.map.in_bounds(v) and self.k0 <= int(v[2]) < self.k1

    def state(self, v) -> int:
        if not self.contains_voxel(v):
            return UNKNOWN
        return int(self.map.states[v[0], v[1], v[2]])

    def slab_states(self) -> np.ndarray:
        """View (not copy) of the state array over the slab."""
        return self.map.states[:, :, self.k0:self.k1]

    def is_full(self) -> bool:
        return self.k0 == 0 and self.k1 == int(self.map.dims[2])
