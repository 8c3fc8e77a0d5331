"""Square racing-gate obstacle: exact distances, region tests, frame transforms.

Conventions
-----------
A gate is a square frame of four axis-aligned rectangular bars. In the gate's
local frame the opening lies in the y-z plane and the fly-through direction is
+x. The frame material occupies::

    |x| <= bar_thickness / 2
    inner_size / 2 <= max(|y|, |z|) <= inner_size / 2 + bar_thickness

All distances are Euclidean and in meters. Points strictly inside the solid
get the sentinel distance -1.0; points on the surface get 0.0.

Each bar is modeled as a box spanning the full outer extent along its long
axis, so the four boxes overlap at the corners. That makes "strictly interior
to some bar box" coincide exactly with "strictly interior to the solid frame",
including at the internal interfaces between adjacent bars.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

# Absolute tolerance for classifying a point as lying on the frame surface.
BOUNDARY_TOL = 1e-9


class Region(Enum):
    """Where a point sits relative to the solid frame."""

    INSIDE = "inside"
    BOUNDARY = "boundary"
    OUTSIDE = "outside"


@dataclass
class GateGeometry:
    """Square gate frame dimensions.

    inner_size is the side length of the square opening [m]; bar_thickness is
    the cross-section side of each bar [m] (bars are square in cross-section
    in the y-z sense and bar_thickness deep along x).
    """

    inner_size: float = 1.5
    bar_thickness: float = 0.25

    def __post_init__(self) -> None:
        if not (math.isfinite(self.inner_size) and self.inner_size > 0.0):
            raise ValueError(f"inner_size must be positive, got {self.inner_size}")
        if not (math.isfinite(self.bar_thickness) and self.bar_thickness > 0.0):
            raise ValueError(f"bar_thickness must be positive, got {self.bar_thickness}")

    @property
    def inner_half(self) -> float:
        """Half the opening width [m]."""
        return 0.5 * self.inner_size

    @property
    def outer_half(self) -> float:
        """Half the outer frame width [m]."""
        return 0.5 * self.inner_size + self.bar_thickness

    @property
    def half_depth(self) -> float:
        """Half the frame extent along local x [m]."""
        return 0.5 * self.bar_thickness

    def bar_boxes(self) -> tuple[np.ndarray, np.ndarray]:
        """Lower and upper corners of the four bar boxes, each shaped (4, 3).

        Order: top (+z), bottom (-z), right (+y), left (-y). The long axis of
        every box spans the full outer extent, so adjacent boxes overlap at
        the corners of the frame.
        """
        hi_in = self.inner_half
        hi_out = self.outer_half
        hd = self.half_depth
        lo = np.array(
            [
                [-hd, -hi_out, hi_in],   # top bar
                [-hd, -hi_out, -hi_out],  # bottom bar
                [-hd, hi_in, -hi_out],   # right bar
                [-hd, -hi_out, -hi_out],  # left bar
            ]
        )
        hi = np.array(
            [
                [hd, hi_out, hi_out],
                [hd, hi_out, -hi_in],
                [hd, hi_out, hi_out],
                [hd, -hi_in, hi_out],
            ]
        )
        return lo, hi


@dataclass
class Pose:
    """Rigid gate pose: world position of the opening center plus yaw [rad].

    Yaw is rotation about world +z and is normalized to (-pi, pi] on
    construction. Gates never pitch or roll.
    """

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    yaw: float = 0.0

    def __post_init__(self) -> None:
        self.position = np.asarray(self.position, dtype=float)
        if self.position.shape != (3,):
            raise ValueError(f"position must be a 3-vector, got shape {self.position.shape}")
        if not np.all(np.isfinite(self.position)) or not math.isfinite(self.yaw):
            raise ValueError("pose must be finite")
        yaw = math.remainder(float(self.yaw), math.tau)
        if yaw <= -math.pi:  # remainder can return exactly -pi
            yaw = math.pi
        self.yaw = yaw


def _check_point(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise ValueError(f"point must be finite, got {q}")
    return q


def classify_point(q: np.ndarray, gate: GateGeometry) -> Region:
    """Classify a gate-frame point as INSIDE, BOUNDARY, or OUTSIDE the solid.

    INSIDE means strictly interior to the frame material. BOUNDARY means on
    the surface within ``BOUNDARY_TOL``. Non-finite input raises ValueError.
    """
    q = _check_point(q)
    lo, hi = gate.bar_boxes()
    if bool(np.any(np.all((lo < q) & (q < hi), axis=1))):
        return Region.INSIDE
    d = float(np.min(_box_distances(q[None, :], lo, hi)))
    return Region.BOUNDARY if d <= BOUNDARY_TOL else Region.OUTSIDE


def exact_distance(q: np.ndarray, gate: GateGeometry) -> float:
    """Euclidean distance from a gate-frame point to the frame surface [m].

    Returns exactly -1.0 for points strictly inside the solid, 0.0 on the
    surface, and the positive clearance otherwise.
    """
    return float(exact_distance_batch(_check_point(q)[None, :], gate)[0])


def exact_distance_batch(points: np.ndarray, gate: GateGeometry) -> np.ndarray:
    """Vectorized :func:`exact_distance` for an (N, 3) array of points."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) array, got shape {pts.shape}")
    lo, hi = gate.bar_boxes()
    d = np.min(_box_distances(pts, lo, hi), axis=1)
    inside = np.any(
        np.all((lo[None, :, :] < pts[:, None, :]) & (pts[:, None, :] < hi[None, :, :]), axis=2),
        axis=1,
    )
    d[inside] = -1.0
    return d


def _box_distances(pts: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Distance from each of N points to each of B boxes, shaped (N, B)."""
    # Per-axis overshoot outside the box; zero inside the slab.
    over = np.maximum(lo[None, :, :] - pts[:, None, :], 0.0)
    under = np.maximum(pts[:, None, :] - hi[None, :, :], 0.0)
    return np.sqrt(np.sum((over + under) ** 2, axis=2))


def _rot_z(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def world_to_gate(x: np.ndarray, pose: Pose) -> np.ndarray:
    """Map a world point into the gate's local frame."""
    x = _check_point(x)
    return _rot_z(-pose.yaw) @ (x - pose.position)


def gate_to_world(q: np.ndarray, pose: Pose) -> np.ndarray:
    """Map a gate-frame point back to world coordinates."""
    q = _check_point(q)
    return _rot_z(pose.yaw) @ q + pose.position


def segment_hits_frame(p0: np.ndarray, p1: np.ndarray, gate: GateGeometry) -> bool:
    """True if the gate-frame segment p0 -> p1 touches the solid frame.

    Standard slab test against each bar box; touching counts as a hit.
    """
    p0 = _check_point(p0)
    p1 = _check_point(p1)
    d = p1 - p0
    lo, hi = gate.bar_boxes()
    for box in range(lo.shape[0]):
        tmin, tmax = 0.0, 1.0
        hit = True
        for k in range(3):
            dk = d[k]
            if dk == 0.0:
                if p0[k] < lo[box, k] or p0[k] > hi[box, k]:
                    hit = False
                    break
                continue
            t0 = (lo[box, k] - p0[k]) / dk
            t1 = (hi[box, k] - p0[k]) / dk
            if t0 > t1:
                t0, t1 = t1, t0
            tmin = max(tmin, t0)
            tmax = min(tmax, t1)
            if tmin > tmax:
                hit = False
                break
        if hit:
            return True
    return False
