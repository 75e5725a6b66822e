"""Deterministic synthetic scenes: cameras on a ring, ground-standing boxes,
ray-cast sparse depth, procedural features, and pseudo weight volumes.

Randomness comes from the counter-based Philox generator keyed directly
with (seed, stream) pairs, so streams are portable and reproducible:

* stream 0: box sampling (6 draws per box: center x, center y, length,
  width, height, yaw), one fresh generator per retry attempt;
* stream 1000 + i: depth-supervision dropout of camera i;
* stream 2000 + i: procedural feature coefficients of camera i.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .fusion import WeightVolume
from .geometry import (
    CameraIntrinsics,
    FrustumGrid,
    FrustumSpec,
    OrientedBox3D,
    RigidTransform,
    build_frustum,
    uniform_depth_bins,
    unproject,
)
from .lifting import FeatureMap
from .occupancy import OccupancyVolume, label_frustum, ray_box_intervals

SCENE_SCHEMA_VERSION = 1


class GenerationError(RuntimeError):
    """Raised when no admissible scene is found within the retry budget."""


class Camera(NamedTuple):
    spec: FrustumSpec
    pose: RigidTransform


@dataclass(frozen=True)
class SceneConfig:
    """Knobs of the generator; defaults are the desk-scale setting
    (704x256 image at stride 4, 59 depth bins over 1..60 m, 6 cameras)."""

    n_boxes: int = 8
    world_extent: float = 35.0
    length_range: tuple[float, float] = (2.0, 8.0)
    width_range: tuple[float, float] = (1.5, 3.0)
    height_range: tuple[float, float] = (1.0, 3.0)
    n_cameras: int = 6
    camera_ring_radius: float = 1.0
    camera_height: float = 1.6
    require_visible: bool = True
    max_retries: int = 100
    depth_keep_rate: float = 0.3
    image_width: int = 704
    image_height: int = 256
    fx: float = 352.0
    fy: float = 352.0
    cx: float = 352.0
    cy: float = 128.0
    stride: int = 4
    depth_start: float = 1.0
    depth_end: float = 60.0
    depth_count: int = 59

    def __post_init__(self):
        if self.n_boxes < 0:
            raise ValueError("n_boxes must be nonnegative")
        if self.world_extent <= 0 or self.max_retries < 1 or self.n_cameras < 1:
            raise ValueError("invalid scene configuration")
        if not (0.0 <= self.depth_keep_rate <= 1.0):
            raise ValueError("depth_keep_rate must lie in [0, 1]")
        for lo, hi in (self.length_range, self.width_range, self.height_range):
            if lo <= 0 or hi < lo:
                raise ValueError("size ranges must be positive and ordered")

    def frustum_spec(self) -> FrustumSpec:
        intr = CameraIntrinsics(
            self.fx, self.fy, self.cx, self.cy, self.image_width, self.image_height
        )
        bins = uniform_depth_bins(self.depth_start, self.depth_end, self.depth_count)
        return FrustumSpec(intr, bins, self.stride)


@dataclass(frozen=True, eq=False)
class Scene:
    cameras: list[Camera]
    boxes: list[OrientedBox3D]
    seed: int
    config: SceneConfig


def _stream(seed: int, stream: int) -> np.random.Generator:
    key = np.array([seed, stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def ring_camera_pose(radius: float, height: float, yaw: float) -> RigidTransform:
    """Pose of a camera on the ring, looking outward along world yaw.

    Camera +z (forward) maps to (cos yaw, sin yaw, 0), +x (image right) to
    (sin yaw, -cos yaw, 0), +y (image down) to (0, 0, -1).
    """
    c, s = np.cos(yaw), np.sin(yaw)
    rotation = np.array([[s, 0.0, c], [-c, 0.0, s], [0.0, -1.0, 0.0]])
    translation = np.array([radius * c, radius * s, height])
    return RigidTransform(rotation, translation)


def _ring_cameras(config: SceneConfig) -> list[Camera]:
    spec = config.frustum_spec()
    step = 2.0 * np.pi / config.n_cameras
    return [
        Camera(spec, ring_camera_pose(config.camera_ring_radius, config.camera_height, i * step))
        for i in range(config.n_cameras)
    ]


def _sample_boxes(config: SceneConfig, rng: np.random.Generator) -> list[OrientedBox3D]:
    boxes = []
    for _ in range(config.n_boxes):
        cx = rng.uniform(-config.world_extent, config.world_extent)
        cy = rng.uniform(-config.world_extent, config.world_extent)
        length = rng.uniform(*config.length_range)
        width = rng.uniform(*config.width_range)
        height = rng.uniform(*config.height_range)
        yaw = np.pi - 2.0 * np.pi * rng.uniform()  # uniform over (-pi, pi]
        boxes.append(
            OrientedBox3D(np.array([cx, cy, height / 2.0]), np.array([length, width, height]), yaw)
        )
    return boxes


def _box_visible(box: OrientedBox3D, camera: Camera) -> bool:
    """Visibility test used by the generator: the box center must project
    inside the image with a camera depth within the bin range."""
    spec, pose = camera
    local = pose.inverse().apply(box.center)
    z = local[2]
    bins = spec.depth_bins
    if not (bins[0] <= z <= bins[-1]):
        return False
    intr = spec.intrinsics
    u = intr.fx * local[0] / z + intr.cx
    v = intr.fy * local[1] / z + intr.cy
    return 0.0 <= u < intr.width and 0.0 <= v < intr.height


def generate_scene(config: SceneConfig, seed: int) -> Scene:
    """Sample a reproducible scene; same (config, seed) gives identical bytes.

    Boxes are redrawn until at least one is visible from some camera (unless
    ``require_visible`` is off); exhausting the retry budget raises
    GenerationError.
    """
    cameras = _ring_cameras(config)
    rng = _stream(seed, 0)
    for _ in range(config.max_retries):
        boxes = _sample_boxes(config, rng)
        if not config.require_visible:
            return Scene(cameras, boxes, seed, config)
        if any(_box_visible(b, cam) for b in boxes for cam in cameras):
            return Scene(cameras, boxes, seed, config)
    raise GenerationError(
        f"no visible box in {config.max_retries} attempts (seed {seed})"
    )


def _pixel_rays(camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    """World-frame origin and per-pixel direction for every feature cell.

    Directions are scaled so the ray parameter equals camera-plane depth,
    keeping rendered depths on the same axis as the depth bins.
    """
    spec, pose = camera
    dirs_cam = unproject(spec.intrinsics, spec.pixel_centers(), 1.0)
    dirs_world = dirs_cam @ pose.rotation.T
    return pose.translation, dirs_world


def render_depth_gt(scene: Scene, camera_index: int, keep_rate: float | None = None) -> np.ndarray:
    """Ray-cast sparse depth: camera-plane depth of the first box surface.

    Returns an (H, W) float map with NaN where no box is hit or where the
    dropout (Bernoulli with ``keep_rate``, default from the scene config)
    discards the pixel to emulate projected-LiDAR sparsity.
    """
    camera = scene.cameras[camera_index]
    origin, dirs = _pixel_rays(camera)
    h, w = dirs.shape[:2]
    depth = np.full((h, w), np.inf)
    for box in scene.boxes:
        t0, _, hit = ray_box_intervals(origin, dirs, box)
        # surfaces strictly in front of the camera only
        front = hit & (t0 > 0.0)
        depth = np.minimum(depth, np.where(front, t0, np.inf))
    depth[~np.isfinite(depth)] = np.nan

    if keep_rate is None:
        keep_rate = scene.config.depth_keep_rate
    if keep_rate < 1.0:
        rng = _stream(scene.seed, 1000 + camera_index)
        drop = rng.uniform(size=(h, w)) >= keep_rate
        depth[drop] = np.nan
    return depth


def depth_to_bin_indices(depth: np.ndarray, bins: np.ndarray) -> np.ndarray:
    """Nearest-bin index per pixel, -1 where the depth is NaN."""
    idx = np.full(depth.shape, -1, dtype=np.int64)
    valid = np.isfinite(depth)
    if valid.any():
        d = depth[valid][:, None]
        idx[valid] = np.argmin(np.abs(np.asarray(bins)[None, :] - d), axis=1)
    return idx


def blur_along_bins(values: np.ndarray, half_width: int) -> np.ndarray:
    """Normalized box blur along the bin axis of an (H, W, bins) array."""
    if half_width < 1:
        return np.asarray(values, dtype=np.float64)
    vals = np.asarray(values, dtype=np.float64)
    k = 2 * half_width + 1
    padded = np.pad(vals, ((0, 0), (0, 0), (half_width, half_width)))
    csum = np.cumsum(padded, axis=2)
    csum = np.concatenate([np.zeros(vals.shape[:2] + (1,)), csum], axis=2)
    return (csum[:, :, k:] - csum[:, :, :-k]) / k


def pseudo_weight_volumes(
    scene: Scene,
    camera_index: int,
    sharpness: float = 4.0,
    occ_floor: float = 0.02,
    occ_ceil: float = 0.98,
    occ_blur: int = 2,
    labels: OccupancyVolume | None = None,
) -> tuple[WeightVolume, OccupancyVolume]:
    """Deterministic stand-ins for decoder outputs.

    The depth volume is the per-pixel softmax of -sharpness * (bin - d)^2
    against the dense rendered depth (uniform where no surface is hit). The
    occupancy volume is the exact occupancy labels blurred along the bin
    axis and mapped into (occ_floor, occ_ceil). Pass precomputed ``labels``
    to skip relabeling the frustum.
    """
    camera = scene.cameras[camera_index]
    spec = camera.spec
    depth = render_depth_gt(scene, camera_index, keep_rate=1.0)
    bins = spec.depth_bins
    logits = np.zeros(depth.shape + (bins.size,))
    valid = np.isfinite(depth)
    diff = bins[None, :] - depth[valid][:, None]
    logits[valid] = -sharpness * diff**2
    shifted = logits - logits.max(axis=2, keepdims=True)
    e = np.exp(shifted)
    depth_vol = e / e.sum(axis=2, keepdims=True)

    if labels is None:
        grid = build_frustum(spec, camera.pose)
        labels = label_frustum(grid, scene.boxes)
    blurred = blur_along_bins(labels.values, occ_blur)
    occ = occ_floor + (occ_ceil - occ_floor) * blurred
    return (
        WeightVolume(depth_vol.astype(np.float32), "depth"),
        OccupancyVolume(occ.astype(np.float32), "probability"),
    )


def procedural_features(scene: Scene, camera_index: int, channels: int) -> FeatureMap:
    """Smooth deterministic feature maps standing in for an image encoder.

    Each channel is a positive sinusoid of the pixel coordinates with
    frequencies and phases drawn from the scene's feature stream.
    """
    if channels < 1:
        raise ValueError("channels must be positive")
    spec = scene.cameras[camera_index].spec
    h, w = spec.grid_height, spec.grid_width
    rng = _stream(scene.seed, 2000 + camera_index)
    freq = rng.uniform(0.02, 0.3, size=(channels, 2))
    phase = rng.uniform(0.0, 2.0 * np.pi, size=channels)
    vv, uu = np.mgrid[0:h, 0:w]
    args = freq[:, 0, None, None] * uu + freq[:, 1, None, None] * vv
    vals = 0.5 + 0.5 * np.sin(args + phase[:, None, None])
    return FeatureMap(vals.astype(np.float32))


def scene_to_dict(scene: Scene) -> dict:
    """Versioned JSON-ready document: cameras, boxes, seed, config echo."""
    return {
        "version": SCENE_SCHEMA_VERSION,
        "seed": scene.seed,
        "config": asdict(scene.config),
        "cameras": [
            {
                "intrinsics": {
                    "fx": cam.spec.intrinsics.fx,
                    "fy": cam.spec.intrinsics.fy,
                    "cx": cam.spec.intrinsics.cx,
                    "cy": cam.spec.intrinsics.cy,
                    "width": cam.spec.intrinsics.width,
                    "height": cam.spec.intrinsics.height,
                },
                "depth_bins": cam.spec.depth_bins.tolist(),
                "stride": cam.spec.stride,
                "rotation": cam.pose.rotation.tolist(),
                "translation": cam.pose.translation.tolist(),
            }
            for cam in scene.cameras
        ],
        "boxes": [
            {"center": b.center.tolist(), "size": b.size.tolist(), "yaw": b.yaw}
            for b in scene.boxes
        ],
    }


def scene_to_json(scene: Scene) -> str:
    return json.dumps(scene_to_dict(scene), indent=2, sort_keys=True)


def scene_from_dict(doc: dict) -> Scene:
    if doc.get("version") != SCENE_SCHEMA_VERSION:
        raise ValueError(f"unsupported scene schema version {doc.get('version')}")
    cfg_fields = doc["config"]
    for rng_key in ("length_range", "width_range", "height_range"):
        cfg_fields[rng_key] = tuple(cfg_fields[rng_key])
    config = SceneConfig(**cfg_fields)
    cameras = []
    for cam in doc["cameras"]:
        intr = CameraIntrinsics(**cam["intrinsics"])
        spec = FrustumSpec(intr, np.asarray(cam["depth_bins"]), cam["stride"])
        pose = RigidTransform(np.asarray(cam["rotation"]), np.asarray(cam["translation"]))
        cameras.append(Camera(spec, pose))
    boxes = [
        OrientedBox3D(np.asarray(b["center"]), np.asarray(b["size"]), b["yaw"])
        for b in doc["boxes"]
    ]
    return Scene(cameras, boxes, doc["seed"], config)


def scene_from_json(text: str) -> Scene:
    return scene_from_dict(json.loads(text))
