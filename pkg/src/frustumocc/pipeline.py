"""End-to-end forward pass on a synthetic scene, with artifact output.

Per camera: pseudo depth/occupancy volumes and procedural features are
generated, features are propagated through occupancy-keyed attention,
weights are fused, features lifted, and all cameras pooled onto one BEV
grid. Losses are evaluated against the ray-cast ground truth. All outputs
are deterministic functions of (config, seed); the thread count only
parallelizes independent per-camera work and never changes any byte.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import RunConfig
from .fusion import WeightVolume, fuse_weights
from .geometry import build_frustum
from .lifting import BEVGrid, BEVGridSpec, lift, voxel_pool
from .losses import depth_bce, focal_loss, total_loss
from .occupancy import label_frustum
from .pgm import to_gray, write_pgm
from .propagation import OccupancyTokenSet, occupancy_attention
from .scenes import (
    Scene,
    blur_along_bins,
    depth_to_bin_indices,
    generate_scene,
    procedural_features,
    pseudo_weight_volumes,
    render_depth_gt,
    scene_to_json,
)


def bev_spec_from_config(cfg: RunConfig) -> BEVGridSpec:
    b = cfg.bev
    return BEVGridSpec(b.x_min, b.x_max, b.y_min, b.y_max, b.cell_size, b.z_min, b.z_max)


def _camera_stage(scene: Scene, cam_idx: int, cfg: RunConfig):
    """Everything derivable from a single camera, pure and order-free."""
    camera = scene.cameras[cam_idx]
    grid = build_frustum(camera.spec, camera.pose)
    labels = label_frustum(grid, scene.boxes)

    feat_cfg = cfg.features
    depth_vol, occ_explicit = pseudo_weight_volumes(
        scene,
        cam_idx,
        sharpness=feat_cfg.depth_sharpness,
        occ_floor=feat_cfg.occ_floor,
        occ_ceil=feat_cfg.occ_ceil,
        occ_blur=feat_cfg.occ_blur,
        labels=labels,
    )
    implicit_vals = blur_along_bins(occ_explicit.values, feat_cfg.implicit_blur)
    implicit = WeightVolume(implicit_vals.astype(np.float32), "occupancy")
    explicit_w = WeightVolume(occ_explicit.values, "occupancy")

    features = procedural_features(scene, cam_idx, feat_cfg.channels)
    if cfg.attention.enabled:
        tokens = OccupancyTokenSet.from_volume(occ_explicit)
        features = occupancy_attention(tokens, features, cfg.attention.to_attention_config())

    fused = fuse_weights(depth_vol, implicit, explicit_w, cfg.fusion)
    lifted = lift(features, fused)

    sparse_depth = render_depth_gt(scene, cam_idx)
    gt_bins = depth_to_bin_indices(sparse_depth, camera.spec.depth_bins)
    return {
        "lifted": lifted,
        "grid": grid,
        "labels": labels,
        "depth_vol": depth_vol,
        "occ_explicit": occ_explicit,
        "gt_bins": gt_bins,
    }


def run_forward_pipeline(cfg: RunConfig, threads: int = 1) -> dict:
    """Run the full pipeline; returns grids, per-camera stages, and losses."""
    scene = generate_scene(cfg.scene, cfg.seed)
    n_cams = len(scene.cameras)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            stages = list(pool.map(lambda i: _camera_stage(scene, i, cfg), range(n_cams)))
    else:
        stages = [_camera_stage(scene, i, cfg) for i in range(n_cams)]

    bev_spec = bev_spec_from_config(cfg)
    volumes = [(st["lifted"], st["grid"]) for st in stages]
    pooled = voxel_pool(volumes, bev_spec, method="sorted")

    depth_losses = []
    occ_losses = []
    for st in stages:
        d_loss, _ = depth_bce(st["depth_vol"], st["gt_bins"])
        o_loss, _ = focal_loss(
            st["occ_explicit"], st["labels"], cfg.focal.alpha, cfg.focal.gamma
        )
        depth_losses.append(d_loss)
        occ_losses.append(o_loss)
    depth_loss = float(np.mean(depth_losses))
    occ_loss = float(np.mean(occ_losses))
    # regression proxy standing in for the detection loss: mean squared
    # BEV response, which pulls gradient through lift and pool
    det_proxy = float(np.mean(pooled.accum**2))
    loss = total_loss(det_proxy, depth_loss, occ_loss, cfg.loss_weights)

    return {
        "scene": scene,
        "stages": stages,
        "pooled": pooled,
        "losses": {
            "depth": depth_loss,
            "occupancy": occ_loss,
            "detection_proxy": det_proxy,
            "total": loss,
        },
    }


def _fmt(value) -> str:
    return repr(float(value)) if isinstance(value, (float, np.floating)) else str(value)


def write_forward_artifacts(cfg: RunConfig, out_dir, threads: int = 1) -> dict:
    """Run the pipeline and write heatmap, midslice images, stats, and scene.

    Artifacts: ``bev_norm.pgm`` (per-cell feature L2 norm), one
    ``occupancy_mid_cam{i}.pgm`` per camera (label slice at the middle depth
    bin), ``stats.csv``, and ``scene.json``. Byte-identical for a fixed
    (config, seed) regardless of the thread count.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = run_forward_pipeline(cfg, threads=threads)

    grid: BEVGrid = result["pooled"].grid
    norm = np.sqrt((grid.values.astype(np.float64) ** 2).sum(axis=0))
    write_pgm(out / "bev_norm.pgm", to_gray(norm))

    for i, st in enumerate(result["stages"]):
        labels = st["labels"].values
        mid = labels[:, :, labels.shape[2] // 2] * np.uint8(255)
        write_pgm(out / f"occupancy_mid_cam{i}.pgm", mid.astype(np.uint8))

    (out / "scene.json").write_text(scene_to_json(result["scene"]))

    pooled = result["pooled"]
    lines = ["key,value"]
    for i, st in enumerate(result["stages"]):
        n_pts = st["grid"].n_points
        lines.append(f"cam{i}_points,{n_pts}")
    lines.append(f"points_total,{pooled.n_points}")
    lines.append(f"points_dropped,{pooled.n_dropped}")
    lines.append(f"bev_nonzero_cells,{int(np.count_nonzero(np.abs(grid.values).sum(axis=0)))}")
    for c in range(grid.values.shape[0]):
        lines.append(f"bev_mass_ch{c},{_fmt(pooled.accum[c].sum())}")
    for name, value in result["losses"].items():
        lines.append(f"loss_{name},{_fmt(value)}")
    (out / "stats.csv").write_text("\n".join(lines) + "\n")

    return result
