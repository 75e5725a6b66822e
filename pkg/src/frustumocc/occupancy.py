"""Point-level instance occupancy of frustum grids.

Occupancy of a point is decided by counting the six face half-spaces of an
oriented box: with outward unit normals, a point strictly inside lies on the
negative side of every face plane, so it scores 6 of 6. A second,
structurally independent test (rotate into the box frame, compare against
the half extents) exists purely to cross-check the first; the two must agree
everywhere except within float noise of a face.

Boundary convention: strictly inside. Points exactly on a face are not
occupied.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import FrustumGrid, OrientedBox3D, box_faces

# Culling pad keeps the AABB prefilter conservative: a point rejected by the
# padded AABB is > 1e-9 outside the box hull and can never pass the exact
# face test, so culled and uncull ed paths agree bit for bit.
_CULL_PAD = 1e-9


@dataclass(frozen=True, eq=False)
class OccupancyVolume:
    """Per-frustum-point occupancy, shape (H, W, n_bins).

    ``mode='label'`` holds binary ground truth (uint8 in {0, 1});
    ``mode='probability'`` holds predicted probabilities in [0, 1].
    """

    values: np.ndarray
    mode: str

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values)
        if vals.ndim != 3:
            raise ValueError("occupancy volume must have shape (H, W, bins)")
        if self.mode == "label":
            if not np.isin(vals, (0, 1)).all():
                raise ValueError("label volume entries must be 0 or 1")
            vals = vals.astype(np.uint8)
        elif self.mode == "probability":
            if vals.dtype not in (np.float32, np.float64):
                vals = vals.astype(np.float32)
            if vals.min() < 0.0 or vals.max() > 1.0:
                raise ValueError("probability volume entries must lie in [0, 1]")
        else:
            raise ValueError("mode must be 'label' or 'probability'")
        object.__setattr__(self, "values", vals)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape


def _inside_halfspaces(points: np.ndarray, box: OrientedBox3D) -> np.ndarray:
    """Vectorized six-face half-space test; ``points`` is (..., 3)."""
    inside = None
    for normal, face_point in box_faces(box):
        d = (points - face_point) @ normal
        side = d < 0.0
        inside = side if inside is None else (inside & side)
    return inside


def point_occupied_halfspace(point: np.ndarray, box: OrientedBox3D) -> bool:
    """Six-face half-space occupancy test for a single point.

    Counts faces whose plane has the point strictly on the inner (negative,
    with outward normals) side; occupied means all six.
    """
    point = np.asarray(point, dtype=np.float64)
    score = 0
    for normal, face_point in box_faces(box):
        d = float(np.dot(point - face_point, normal))
        if d < 0.0:
            score += 1
    return score == 6


def point_occupied_oracle(point: np.ndarray, box: OrientedBox3D) -> bool:
    """Independent check: rotate into the box frame, compare per axis."""
    point = np.asarray(point, dtype=np.float64)
    local = box.rotation.T @ (point - box.center)
    return bool(np.all(np.abs(local) < box.half_size))


def label_frustum(
    grid: FrustumGrid,
    boxes: list[OrientedBox3D],
    method: str = "culled",
) -> OccupancyVolume:
    """Binary occupancy labels of frustum points against a union of boxes.

    An entry is 1 iff its point lies strictly inside at least one box. The
    grid and boxes must share one coordinate frame (boxes carry no tag; the
    caller owns that consistency).

    ``method='naive'`` tests every point against every box; ``'culled'``
    prefilters per box with a padded world AABB and must produce the exact
    same labels.
    """
    if method not in ("naive", "culled"):
        raise ValueError("method must be 'naive' or 'culled'")
    pts = grid.flat_points()
    occupied = np.zeros(pts.shape[0], dtype=bool)
    for box in boxes:
        if method == "culled":
            lo, hi = box.aabb()
            candidate = np.all((pts >= lo - _CULL_PAD) & (pts <= hi + _CULL_PAD), axis=1)
            candidate &= ~occupied
            idx = np.flatnonzero(candidate)
            if idx.size == 0:
                continue
            occupied[idx] = _inside_halfspaces(pts[idx], box)
        else:
            occupied |= _inside_halfspaces(pts, box)
    labels = occupied.reshape(grid.points.shape[:3]).astype(np.uint8)
    return OccupancyVolume(labels, "label")


def ray_box_intervals(
    origins: np.ndarray,
    directions: np.ndarray,
    box: OrientedBox3D,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Slab-method ray/box intersection, vectorized over rays.

    ``origins`` and ``directions`` broadcast to (..., 3); directions need not
    be unit length, in which case the returned parameters are in units of
    the direction's length. Returns ``(t_enter, t_exit, hit)`` where ``hit``
    is False for rays that miss the box or whose intersection lies entirely
    behind the origin. Entry parameters are clamped to t >= 0 (the ray
    starts at its origin); grazing contact yields t_enter == t_exit.
    """
    origins, directions = np.broadcast_arrays(
        np.asarray(origins, dtype=np.float64), np.asarray(directions, dtype=np.float64)
    )
    rot = box.rotation
    o = (origins - box.center) @ rot  # local coordinates
    d = directions @ rot
    half = box.half_size

    t_enter = np.full(o.shape[:-1], -np.inf)
    t_exit = np.full(o.shape[:-1], np.inf)
    ok = np.ones(o.shape[:-1], dtype=bool)
    for axis in range(3):
        da, oa, ha = d[..., axis], o[..., axis], half[axis]
        parallel = da == 0.0
        # parallel rays intersect this slab iff the origin lies within it
        ok &= ~parallel | (np.abs(oa) <= ha)
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (-ha - oa) / da
            tb = (ha - oa) / da
        lo = np.minimum(ta, tb)
        hi = np.maximum(ta, tb)
        t_enter = np.where(parallel, t_enter, np.maximum(t_enter, lo))
        t_exit = np.where(parallel, t_exit, np.minimum(t_exit, hi))

    hit = ok & (t_exit >= t_enter) & (t_exit >= 0.0)
    t_enter = np.maximum(t_enter, 0.0)
    return np.where(hit, t_enter, np.nan), np.where(hit, t_exit, np.nan), hit


def ray_box_interval(
    origin: np.ndarray,
    direction: np.ndarray,
    box: OrientedBox3D,
) -> tuple[float, float] | None:
    """Single-ray slab intersection; None when the ray misses the box."""
    t0, t1, hit = ray_box_intervals(
        np.asarray(origin, dtype=np.float64)[None, :],
        np.asarray(direction, dtype=np.float64)[None, :],
        box,
    )
    if not hit[0]:
        return None
    return float(t0[0]), float(t1[0])
