"""Camera model, rigid transforms, oriented boxes, and frustum point grids.

Conventions used throughout the package:

* Right-handed coordinates everywhere. The camera frame follows the pinhole
  convention: +z along the optical axis, +x right, +y down. The world frame
  is z-up; box yaw rotates about world z.
* Rotation matrices are 3x3 row-major ``numpy`` arrays acting on column
  vectors, ``world = R @ cam + t``.
* All geometry runs in float64. Feature/weight volumes elsewhere default to
  float32; the boundary sits at the module interfaces.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def rot_x(angle: float) -> np.ndarray:
    """Rotation by ``angle`` radians about the x axis."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    """Rotation by ``angle`` radians about the y axis."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    """Rotation by ``angle`` radians about the z (vertical) axis."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels; ``width``/``height`` are the image size."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")


def project(intrinsics: CameraIntrinsics, points: np.ndarray) -> np.ndarray:
    """Project camera-frame points ``(..., 3)`` to pixel coordinates ``(..., 2)``.

    Raises ValueError for points at or behind the camera plane (z <= 0).
    """
    points = np.asarray(points, dtype=np.float64)
    z = points[..., 2]
    if np.any(z <= 0):
        raise ValueError("cannot project points with non-positive depth")
    u = intrinsics.fx * points[..., 0] / z + intrinsics.cx
    v = intrinsics.fy * points[..., 1] / z + intrinsics.cy
    return np.stack([u, v], axis=-1)


def unproject(intrinsics: CameraIntrinsics, pixel: np.ndarray, depth) -> np.ndarray:
    """Lift pixel coordinates ``(..., 2)`` at camera-plane depth to 3D.

    ``depth`` is the camera-frame z of the returned point, broadcast against
    the pixel array. Non-positive depths are a domain error.
    """
    pixel = np.asarray(pixel, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth <= 0):
        raise ValueError("depth must be positive")
    x = (pixel[..., 0] - intrinsics.cx) * depth / intrinsics.fx
    y = (pixel[..., 1] - intrinsics.cy) * depth / intrinsics.fy
    return np.stack([x, y, depth * np.ones_like(x)], axis=-1)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rotation plus translation mapping camera frame to world frame."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64))
        if self.rotation.shape != (3, 3) or self.translation.shape != (3,):
            raise ValueError("rotation must be 3x3, translation length 3")
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > 1e-9:
            raise ValueError(f"rotation is not orthonormal (deviation {err:.3e})")

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform points of shape ``(..., 3)``."""
        points = np.asarray(points, dtype=np.float64)
        flat = points.reshape(-1, 3) @ self.rotation.T + self.translation
        return flat.reshape(points.shape)

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -(rt @ self.translation))

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Return the transform equivalent to applying ``other`` then ``self``."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )


@dataclass(frozen=True, eq=False)
class OrientedBox3D:
    """Upright 3D box: ``center`` (m), ``size`` = (length, width, height) along
    the box's local x/y/z axes (m), ``yaw`` about world z in (-pi, pi]."""

    center: np.ndarray
    size: np.ndarray
    yaw: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        object.__setattr__(self, "size", np.asarray(self.size, dtype=np.float64))
        if self.center.shape != (3,) or self.size.shape != (3,):
            raise ValueError("center and size must have length 3")
        if np.any(self.size <= 0):
            raise ValueError("box dimensions must be positive")
        if not (-np.pi < self.yaw <= np.pi):
            raise ValueError("yaw must lie in (-pi, pi]")

    @property
    def rotation(self) -> np.ndarray:
        return rot_z(self.yaw)

    @property
    def half_size(self) -> np.ndarray:
        return self.size / 2.0

    def corners(self) -> np.ndarray:
        """The 8 box corners, shape (8, 3), world frame."""
        signs = np.array(
            [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
            dtype=np.float64,
        )
        local = signs * self.half_size
        return local @ self.rotation.T + self.center

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned (min, max) bounds of the box in the world frame."""
        c = self.corners()
        return c.min(axis=0), c.max(axis=0)


def box_faces(box: OrientedBox3D) -> list[tuple[np.ndarray, np.ndarray]]:
    """Six (outward unit normal, point on face) pairs for an oriented box.

    Face order: +x, -x, +y, -y, +z, -z in the box's local axes.
    """
    rot = box.rotation
    half = box.half_size
    faces = []
    for axis in range(3):
        axis_dir = rot[:, axis]
        for sign in (1.0, -1.0):
            normal = sign * axis_dir
            point = box.center + sign * half[axis] * axis_dir
            faces.append((normal, point))
    return faces


def uniform_depth_bins(start: float, end: float, count: int) -> np.ndarray:
    """``count`` uniformly spaced bin-center depths from ``start`` to ``end``."""
    if start <= 0 or end <= start:
        raise ValueError("need 0 < start < end")
    if count < 2:
        raise ValueError("need at least two depth bins")
    return np.linspace(start, end, count)


@dataclass(frozen=True, eq=False)
class FrustumSpec:
    """Sampling lattice of one camera: intrinsics, depth-bin centers, and the
    feature downsample stride (pixels per feature cell)."""

    intrinsics: CameraIntrinsics
    depth_bins: np.ndarray
    stride: int

    def __post_init__(self):
        object.__setattr__(self, "depth_bins", np.asarray(self.depth_bins, dtype=np.float64))
        bins = self.depth_bins
        if bins.ndim != 1 or bins.size < 2:
            raise ValueError("need at least two depth bins")
        if bins[0] <= 0 or np.any(np.diff(bins) <= 0):
            raise ValueError("depth bins must be positive and strictly increasing")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.intrinsics.width % self.stride or self.intrinsics.height % self.stride:
            raise ValueError("image size must be divisible by the stride")

    @property
    def grid_height(self) -> int:
        return self.intrinsics.height // self.stride

    @property
    def grid_width(self) -> int:
        return self.intrinsics.width // self.stride

    @property
    def n_bins(self) -> int:
        return int(self.depth_bins.size)

    def pixel_centers(self) -> np.ndarray:
        """Feature-cell center pixels, shape (grid_height, grid_width, 2)."""
        u = (np.arange(self.grid_width) + 0.5) * self.stride
        v = (np.arange(self.grid_height) + 0.5) * self.stride
        uu, vv = np.meshgrid(u, v)
        return np.stack([uu, vv], axis=-1)


@dataclass(frozen=True, eq=False)
class FrustumGrid:
    """Dense 3D sample points of one camera frustum.

    ``points`` has shape (grid_height, grid_width, n_bins, 3); for a fixed
    pixel the points along the bin axis are collinear with the camera center.
    ``frame`` tags the coordinate frame ('camera' or 'world').
    """

    points: np.ndarray
    frame: str

    def __post_init__(self):
        object.__setattr__(
            self, "points", np.ascontiguousarray(self.points, dtype=np.float64)
        )
        if self.points.ndim != 4 or self.points.shape[-1] != 3:
            raise ValueError("points must have shape (H, W, bins, 3)")
        if self.frame not in ("camera", "world"):
            raise ValueError("frame must be 'camera' or 'world'")

    @property
    def n_points(self) -> int:
        return int(np.prod(self.points.shape[:3]))

    def flat_points(self) -> np.ndarray:
        """Points flattened to (n_points, 3) in (row, column, bin) order."""
        return self.points.reshape(-1, 3)


def build_frustum(spec: FrustumSpec, pose: RigidTransform | None = None) -> FrustumGrid:
    """Sample the frustum of ``spec`` at feature-cell centers and bin depths.

    With a pose the points are mapped to the world frame; without one they
    stay in the camera frame. Point [v, u, k] is the unprojection of cell
    (v, u)'s center pixel at depth ``spec.depth_bins[k]``.
    """
    pixels = spec.pixel_centers()  # (H, W, 2)
    depths = spec.depth_bins  # (K,)
    pts = unproject(spec.intrinsics, pixels[:, :, None, :], depths[None, None, :])
    if pose is None:
        return FrustumGrid(pts, "camera")
    return FrustumGrid(pose.apply(pts), "world")
