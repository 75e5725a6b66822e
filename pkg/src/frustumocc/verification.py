"""Verification suites: every acceptance criterion as a callable check.

Each check returns a CriterionResult with a stable identifier, a pass flag,
and JSON-ready details. ``run_all`` executes the full battery; the command
line wraps it with report output, and the test suite asserts each check
individually.
"""

from __future__ import annotations

import dataclasses
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig, VerifySection
from .fusion import FusionParams, WeightVolume, fuse_weights, fuse_weights_grad, head_param_count
from .geometry import FrustumGrid, OrientedBox3D, build_frustum
from .lifting import BEVGridSpec, FeatureMap, LiftedFeatureVolume, lift, voxel_pool, voxel_pool_grad
from .losses import LossWeights, depth_bce, focal_loss, total_loss
from .occupancy import OccupancyVolume, label_frustum, point_occupied_oracle
from .occupancy import _inside_halfspaces
from .pipeline import write_forward_artifacts
from .propagation import (
    AttentionConfig,
    OccupancyTokenSet,
    occupancy_attention,
    occupancy_attention_grad,
    overlap_sweep,
)
from .scenes import SceneConfig, generate_scene, procedural_features, pseudo_weight_volumes


@dataclass(frozen=True)
class CriterionResult:
    ident: str
    passed: bool
    details: dict

    def __post_init__(self):
        object.__setattr__(self, "passed", bool(self.passed))

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.ident}"


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.array([seed, stream], dtype=np.uint64)))


def _random_box(rng: np.random.Generator) -> OrientedBox3D:
    center = rng.uniform(-20.0, 20.0, size=3)
    size = rng.uniform(0.5, 8.0, size=3)
    yaw = np.pi - 2.0 * np.pi * rng.uniform()
    return OrientedBox3D(center, size, yaw)


def check_halfspace_oracle(
    n_pairs: int = 10_000,
    min_face_distance: float = 1e-9,
    seed: int = 11,
    inject_fault: bool = False,
) -> CriterionResult:
    """Six-face half-space labeling against the box-frame oracle.

    Random (box, point) pairs, every point farther than ``min_face_distance``
    from each face plane, must agree on all pairs; single-threaded runtime
    must stay under one second.
    """
    rng = _rng(seed, 0)
    n_boxes = 100
    per_box = n_pairs // n_boxes
    start = time.perf_counter()
    mismatches = 0
    total = 0
    for _ in range(n_boxes):
        box = _random_box(rng)
        local = rng.uniform(-1.5, 1.5, size=(per_box * 2, 3)) * box.half_size
        dist = np.abs(np.abs(local) - box.half_size).min(axis=1)
        local = local[dist > min_face_distance][:per_box]
        points = local @ box.rotation.T + box.center
        fast = _inside_halfspaces(points, box)
        if inject_fault and total == 0:
            fast = fast.copy()
            fast[0] = ~fast[0]
        slow = np.array([point_occupied_oracle(p, box) for p in points])
        mismatches += int(np.count_nonzero(fast != slow))
        total += points.shape[0]
    elapsed = time.perf_counter() - start
    passed = mismatches == 0 and total >= n_pairs * 0.99 and elapsed < 1.0
    return CriterionResult(
        "alg_oracle_equivalence",
        passed,
        {"pairs": total, "mismatches": mismatches, "seconds": elapsed},
    )


def check_labeling_equivalence(
    n_scenes: int = 20,
    max_boxes: int = 10,
    seed: int = 13,
) -> CriterionResult:
    """Culled frustum labeling must equal the brute-force path exactly on
    random scenes over the full desk-scale grid, within 30 seconds."""
    rng = _rng(seed, 0)
    start = time.perf_counter()
    unequal = 0
    labeled_points = 0
    for i in range(n_scenes):
        n_boxes = int(rng.integers(1, max_boxes + 1))
        config = SceneConfig(n_boxes=n_boxes, require_visible=False)
        scene = generate_scene(config, seed=int(rng.integers(0, 2**31)))
        cam = scene.cameras[i % len(scene.cameras)]
        grid = build_frustum(cam.spec, cam.pose)
        culled = label_frustum(grid, scene.boxes, method="culled")
        naive = label_frustum(grid, scene.boxes, method="naive")
        if not np.array_equal(culled.values, naive.values):
            unequal += 1
        labeled_points += grid.n_points
    elapsed = time.perf_counter() - start
    passed = unequal == 0 and elapsed < 30.0
    return CriterionResult(
        "labeling_paths_equal",
        passed,
        {"scenes": n_scenes, "unequal": unequal, "points": labeled_points, "seconds": elapsed},
    )


def check_overlap_identity(spacing_factor: float = 0.01) -> CriterionResult:
    """Discretized ray-overlap dot products against the closed form.

    Over the (width, angle, lateral offset) grid the absolute error must
    stay within twice the bin spacing, and halving the spacing must at
    least halve the worst-case error.
    """
    coarse = overlap_sweep(spacing_factor=spacing_factor)
    fine = overlap_sweep(spacing_factor=spacing_factor / 2.0)
    # the default grid is entirely non-clamped; guard anyway
    coarse_ok = all(
        s.abs_error <= 2.0 * s.spacing for s in coarse if s.analytic > 0.0
    )
    worst_coarse = max(s.abs_error for s in coarse if s.analytic > 0.0)
    worst_fine = max(s.abs_error for s in fine if s.analytic > 0.0)
    halved = worst_fine <= 0.5 * worst_coarse
    return CriterionResult(
        "overlap_identity",
        coarse_ok and halved,
        {
            "rows": len(coarse),
            "worst_error_coarse": worst_coarse,
            "worst_error_fine": worst_fine,
            "within_two_spacings": coarse_ok,
            "halving_halves_error": halved,
        },
    )


def _random_pool_case(rng: np.random.Generator, n_points: int, n_channels: int):
    """A lifted volume filled with dyadic float32 values and scattered points.

    Values in [0.25, 1) make every float64 partial sum exactly representable
    (common grid of 2^-25 with at most 2^45 units), so mass conservation can
    be asserted exactly.
    """
    n_bins = int(rng.integers(2, 9))
    width = int(rng.integers(8, 65))
    height = max(1, n_points // (width * n_bins))
    vals = rng.uniform(0.25, 1.0, size=(n_bins, n_channels, height, width)).astype(np.float32)
    pts = np.empty((height, width, n_bins, 3))
    pts[..., 0] = rng.uniform(-48.0, 48.0, size=(height, width, n_bins))
    pts[..., 1] = rng.uniform(-48.0, 48.0, size=(height, width, n_bins))
    pts[..., 2] = rng.uniform(-2.0, 5.0, size=(height, width, n_bins))
    return LiftedFeatureVolume(vals), FrustumGrid(pts, "world")


def check_pooling_equivalence(
    n_configs: int = 50,
    max_points: int = 1_000_000,
    cells: int = 128,
    seed: int = 17,
) -> CriterionResult:
    """Sorted segmented pooling against the per-point loop, bit for bit, plus
    exact float64 mass conservation per channel."""
    rng = _rng(seed, 0)
    spec = BEVGridSpec(-40.0, 40.0, -40.0, 40.0, 80.0 / cells, -1.0, 4.0)
    start = time.perf_counter()
    mismatched = 0
    inexact_mass = 0
    total_points = 0
    for i in range(n_configs):
        if i == 0:
            n_points = max_points
        else:
            n_points = int(10 ** rng.uniform(4.0, np.log10(max_points)))
        n_channels = int(rng.integers(1, 9))
        n_volumes = 3 if i % 10 == 5 else 1
        volumes = [
            _random_pool_case(rng, n_points // n_volumes, n_channels)
            for _ in range(n_volumes)
        ]
        total_points += sum(g.n_points for _, g in volumes)

        res_sorted = voxel_pool(volumes, spec, method="sorted")
        res_loop = voxel_pool(volumes, spec, method="loop")
        res_scatter = voxel_pool(volumes, spec, method="scatter")
        same = (
            np.array_equal(res_sorted.grid.values, res_loop.grid.values)
            and np.array_equal(res_sorted.accum, res_loop.accum)
            and np.array_equal(res_sorted.accum, res_scatter.accum)
        )
        if not same:
            mismatched += 1

        in_mass = np.zeros(n_channels)
        for lifted, grid in volumes:
            x, y, z = (grid.points[..., axis] for axis in range(3))
            ix = np.floor((x - spec.x_min) / spec.cell_size)
            iy = np.floor((y - spec.y_min) / spec.cell_size)
            keep = (
                (ix >= 0) & (ix < spec.width_cells)
                & (iy >= 0) & (iy < spec.height_cells)
                & (z >= spec.z_min) & (z <= spec.z_max)
            )  # (H, W, bins)
            mask = keep.transpose(2, 0, 1)
            for ch in range(n_channels):
                in_mass[ch] += lifted.values[:, ch][mask].astype(np.float64).sum()
        out_mass = res_sorted.accum.reshape(n_channels, -1).sum(axis=1)
        if not np.array_equal(in_mass, out_mass):
            inexact_mass += 1
    elapsed = time.perf_counter() - start
    passed = mismatched == 0 and inexact_mass == 0
    return CriterionResult(
        "pooling_bitexact_mass",
        passed,
        {
            "configs": n_configs,
            "points": total_points,
            "mismatched": mismatched,
            "inexact_mass": inexact_mass,
            "seconds": elapsed,
        },
    )


def _rel_err(a: float, b: float) -> float:
    if abs(a) < 1e-10 and abs(b) < 1e-10:
        return 0.0
    return abs(a - b) / max(abs(a), abs(b))


def _softmax_volume(rng: np.random.Generator, shape) -> np.ndarray:
    logits = rng.uniform(0.0, 2.0, size=shape)
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def check_gradients(n_probes: int = 10, h: float = 1e-5, tol: float = 1e-4, seed: int = 19) -> CriterionResult:
    """Central finite differences against every analytic gradient, float64."""
    rng = _rng(seed, 0)
    worst: dict[str, float] = {}

    # fusion: scalar parameters and volume entries
    shape = (6, 7, 5)
    depth = WeightVolume(_softmax_volume(rng, shape), "depth")
    implicit = WeightVolume(rng.uniform(0.0, 1.0, size=shape), "occupancy")
    explicit = WeightVolume(rng.uniform(0.0, 1.0, size=shape), "occupancy")
    params = FusionParams(*rng.uniform(0.2, 1.5, size=3))
    upstream = rng.standard_normal(shape)

    def fuse_loss(d=depth, i=implicit, e=explicit, p=params):
        return float(np.sum(upstream * fuse_weights(d, i, e, p).values))

    grads = fuse_weights_grad(depth, implicit, explicit, params, upstream)
    errs = []
    for name in ("w_depth", "w_implicit", "w_explicit"):
        def at(w, name=name):
            return fuse_loss(p=dataclasses.replace(params, **{name: w}))
        fd = (at(getattr(params, name) + h) - at(getattr(params, name) - h)) / (2 * h)
        errs.append(_rel_err(fd, getattr(grads, name)))
    flat = depth.values.reshape(-1)
    for idx in rng.choice(flat.size, size=n_probes, replace=False):
        orig = flat[idx]
        flat[idx] = orig + h
        up_l = fuse_loss()
        flat[idx] = orig - h
        down = fuse_loss()
        flat[idx] = orig
        fd = (up_l - down) / (2 * h)
        errs.append(_rel_err(fd, grads.depth.reshape(-1)[idx]))
    worst["fuse_weights"] = max(errs)

    # voxel pooling: probe lifted entries, including dropped points
    vol, grid = _random_pool_case(rng, 4_000, 3)
    vol = LiftedFeatureVolume(vol.values.astype(np.float64))
    spec = BEVGridSpec(-40.0, 40.0, -40.0, 40.0, 5.0, -1.0, 4.0)
    up_grid = rng.standard_normal((3, spec.height_cells, spec.width_cells))

    def pool_loss():
        return float(np.sum(up_grid * voxel_pool([(vol, grid)], spec, method="scatter").accum))

    pool_grad = voxel_pool_grad(up_grid, [(vol, grid)], spec)[0]
    errs = []
    flat = vol.values.reshape(-1)
    for idx in rng.choice(flat.size, size=n_probes * 2, replace=False):
        orig = flat[idx]
        flat[idx] = orig + h
        up_l = pool_loss()
        flat[idx] = orig - h
        down = pool_loss()
        flat[idx] = orig
        fd = (up_l - down) / (2 * h)
        errs.append(_rel_err(fd, pool_grad.reshape(-1)[idx]))
    worst["voxel_pool"] = max(errs)

    # attention: token and value entries
    n, k, c = 8, 6, 3
    tokens = OccupancyTokenSet(
        rng.uniform(0.0, 1.0, size=(n, k)), np.arange(n, dtype=np.int64)
    )
    values = FeatureMap(rng.standard_normal((c, 1, n)))
    cfg = AttentionConfig(scope="row", scale="rsqrt", temperature=1.0)
    up_feat = rng.standard_normal((c, 1, n))

    def attend_loss():
        return float(np.sum(up_feat * occupancy_attention(tokens, values, cfg).values))

    d_tok, d_val = occupancy_attention_grad(tokens, values, up_feat, cfg)
    errs = []
    tok_flat = tokens.tokens.reshape(-1)
    for idx in rng.choice(tok_flat.size, size=n_probes, replace=False):
        orig = tok_flat[idx]
        tok_flat[idx] = orig + h
        up_l = attend_loss()
        tok_flat[idx] = orig - h
        down = attend_loss()
        tok_flat[idx] = orig
        fd = (up_l - down) / (2 * h)
        errs.append(_rel_err(fd, d_tok.reshape(-1)[idx]))
    val_flat = values.values.reshape(-1)
    for idx in rng.choice(val_flat.size, size=n_probes, replace=False):
        orig = val_flat[idx]
        val_flat[idx] = orig + h
        up_l = attend_loss()
        val_flat[idx] = orig - h
        down = attend_loss()
        val_flat[idx] = orig
        fd = (up_l - down) / (2 * h)
        errs.append(_rel_err(fd, d_val.reshape(-1)[idx]))
    worst["occupancy_attention"] = max(errs)

    # depth BCE
    pred = WeightVolume(_softmax_volume(rng, (5, 6, 8)), "depth")
    gt = rng.integers(-1, 8, size=(5, 6))
    _, bce_grad = depth_bce(pred, gt)
    errs = []
    flat = pred.values.reshape(-1)
    for idx in rng.choice(flat.size, size=n_probes, replace=False):
        orig = flat[idx]
        flat[idx] = orig + h
        up_l = depth_bce(pred, gt)[0]
        flat[idx] = orig - h
        down = depth_bce(pred, gt)[0]
        flat[idx] = orig
        fd = (up_l - down) / (2 * h)
        errs.append(_rel_err(fd, bce_grad.reshape(-1)[idx]))
    worst["depth_bce"] = max(errs)

    # focal loss
    fpred = OccupancyVolume(rng.uniform(0.05, 0.95, size=(5, 6, 8)), "probability")
    fgt = OccupancyVolume(rng.integers(0, 2, size=(5, 6, 8)), "label")
    _, foc_grad = focal_loss(fpred, fgt)
    errs = []
    flat = fpred.values.reshape(-1)
    for idx in rng.choice(flat.size, size=n_probes, replace=False):
        orig = flat[idx]
        flat[idx] = orig + h
        up_l = focal_loss(fpred, fgt)[0]
        flat[idx] = orig - h
        down = focal_loss(fpred, fgt)[0]
        flat[idx] = orig
        fd = (up_l - down) / (2 * h)
        errs.append(_rel_err(fd, foc_grad.reshape(-1)[idx]))
    worst["focal_loss"] = max(errs)

    passed = all(v <= tol for v in worst.values())
    return CriterionResult("gradient_checks", passed, {"max_rel_err": worst, "tol": tol})


def _baseline_scene_config() -> SceneConfig:
    return SceneConfig(
        n_boxes=6,
        world_extent=20.0,
        image_width=176,
        image_height=64,
        fx=88.0,
        fy=88.0,
        cx=88.0,
        cy=32.0,
        stride=4,
        depth_count=20,
        depth_end=30.0,
    )


def check_baseline_reduction(n_scenes: int = 5, seed: int = 23) -> CriterionResult:
    """Fusion at (1, 0, 0) must reproduce the depth-only pipeline bitwise.

    Both paths lift the same features and pool on the same grid; the only
    difference is whether the occupancy volumes pass through the fusion sum.
    """
    config = _baseline_scene_config()
    params = FusionParams(1.0, 0.0, 0.0)
    spec = BEVGridSpec(-24.0, 24.0, -24.0, 24.0, 0.75, -1.0, 4.0)
    unequal = 0
    for s in range(n_scenes):
        scene = generate_scene(config, seed=seed + s)
        fused_vols = []
        plain_vols = []
        for cam_idx, cam in enumerate(scene.cameras):
            depth_vol, occ = pseudo_weight_volumes(scene, cam_idx)
            implicit = WeightVolume(occ.values, "occupancy")
            explicit = WeightVolume(occ.values, "occupancy")
            features = procedural_features(scene, cam_idx, channels=4)
            grid = build_frustum(cam.spec, cam.pose)
            fused = fuse_weights(depth_vol, implicit, explicit, params)
            fused_vols.append((lift(features, fused), grid))
            plain_vols.append((lift(features, depth_vol), grid))
        grid_fused = voxel_pool(fused_vols, spec).grid.values
        grid_plain = voxel_pool(plain_vols, spec).grid.values
        if not (np.array_equal(grid_fused, grid_plain) and grid_fused.dtype == grid_plain.dtype):
            unequal += 1
    return CriterionResult(
        "baseline_reduction",
        unequal == 0,
        {"scenes": n_scenes, "unequal": unequal},
    )


def check_loss_values() -> CriterionResult:
    """Frozen loss values: the focal point case and weighted combinations."""
    pred = OccupancyVolume(np.full((1, 1, 1), 0.5, dtype=np.float64), "probability")
    gt = OccupancyVolume(np.ones((1, 1, 1), dtype=np.uint8), "label")
    focal_val, _ = focal_loss(pred, gt, alpha=0.25, gamma=2.0)
    focal_ok = abs(focal_val - 0.0433217) <= 1e-6

    weights = LossWeights(1.0, 3.0, 3000.0)
    combos = [
        ((0.5, 0.1, 0.0001), 1.1),
        ((0.0, 0.0, 0.0), 0.0),
        ((0.25, 0.5, 0.001), 4.75),
    ]
    combo_errs = [
        abs(total_loss(*terms, weights) - expected) for terms, expected in combos
    ]
    det_only = total_loss(0.7321, 12.0, 34.0, LossWeights(1.0, 0.0, 0.0))
    combos_ok = max(combo_errs) <= 1e-12 and det_only == 0.7321
    return CriterionResult(
        "loss_values",
        focal_ok and combos_ok,
        {"focal": focal_val, "combo_errors": combo_errs},
    )


def check_head_params() -> CriterionResult:
    """Closed-form 1x1-head parameter counts on three configurations."""
    cases = [
        (512, [(512, 118)], 60534),
        (256, [(256, 128), (128, 64)], 41152),
        (512, [(512, 59), (512, 59), (512, 59)], 90801),
    ]
    results = [head_param_count(c_in, heads) for c_in, heads, _ in cases]
    expected = [want for _, _, want in cases]
    ok = results == expected and head_param_count(64, []) == 0
    return CriterionResult(
        "head_param_count", ok, {"computed": results, "expected": expected}
    )


def check_forward_determinism(
    run_config: RunConfig | None = None,
    threads: tuple[int, ...] = (1, 4),
) -> CriterionResult:
    """Forward artifacts must be byte-identical across repeated runs and
    across thread counts."""
    cfg = run_config if run_config is not None else RunConfig()
    runs = [(threads[0], "a"), (threads[0], "b")] + [(t, "c") for t in threads[1:]]
    with tempfile.TemporaryDirectory() as tmp:
        outputs = []
        for n_threads, tag in runs:
            out = Path(tmp) / f"run_{tag}_{n_threads}"
            write_forward_artifacts(cfg, out, threads=n_threads)
            outputs.append(
                {p.name: p.read_bytes() for p in sorted(out.iterdir())}
            )
    reference = outputs[0]
    mismatches = []
    for i, other in enumerate(outputs[1:], start=1):
        if set(other) != set(reference):
            mismatches.append(f"run {i}: file sets differ")
            continue
        for name, blob in reference.items():
            if other[name] != blob:
                mismatches.append(f"run {i}: {name}")
    return CriterionResult(
        "forward_determinism",
        not mismatches,
        {"runs": len(outputs), "files": len(reference), "mismatches": mismatches},
    )


def run_all(section: VerifySection | None = None, run_config: RunConfig | None = None) -> list[CriterionResult]:
    """Execute every criterion with the sizes of ``section``."""
    v = section if section is not None else VerifySection()
    results = [
        check_halfspace_oracle(v.halfspace_pairs, inject_fault=v.inject_fault),
        check_labeling_equivalence(v.labeling_scenes, v.labeling_max_boxes),
        check_overlap_identity(v.overlap_spacing_factor),
        check_pooling_equivalence(v.pooling_configs, v.pooling_max_points, v.pooling_cells),
        check_gradients(v.gradient_probes),
        check_baseline_reduction(v.baseline_scenes),
        check_loss_values(),
        check_head_params(),
    ]
    if not v.skip_determinism:
        results.append(
            check_forward_determinism(run_config, tuple(v.determinism_threads))
        )
    return results
