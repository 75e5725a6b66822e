"""Feature lifting into the frustum and voxel pooling onto the BEV plane.

Lifting forms the outer product of each pixel's feature vector with its
per-bin weights. Pooling sum-accumulates every frustum point's feature
vector into the BEV cell containing its ground-plane (x, y) position.

Determinism contract: accumulation follows the canonical point order
(cell index, then camera, bin, pixel row, pixel column). All pooling
methods accumulate in float64 per cell and round once to float32 at the
end, so the naive loop, the vectorized scatter, and the sort-based
segmented reduction produce bit for bit identical grids.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fusion import WeightVolume
from .geometry import FrustumGrid

POOL_METHODS = ("loop", "scatter", "sorted")


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Per-pixel context features, shape (channels, H, W)."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values)
        if vals.dtype not in (np.float32, np.float64):
            vals = vals.astype(np.float32)
        object.__setattr__(self, "values", vals)
        if vals.ndim != 3:
            raise ValueError("feature map must have shape (channels, H, W)")
        if not np.isfinite(vals).all():
            raise ValueError("feature map entries must be finite")

    @property
    def channels(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class LiftedFeatureVolume:
    """Weighted features over frustum entries, shape (n_bins, channels, H, W)."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values)
        if vals.dtype not in (np.float32, np.float64):
            vals = vals.astype(np.float32)
        object.__setattr__(self, "values", vals)
        if vals.ndim != 4:
            raise ValueError("lifted volume must have shape (bins, channels, H, W)")

    @property
    def channels(self) -> int:
        return self.values.shape[1]


def lift(features: FeatureMap, weights: WeightVolume) -> LiftedFeatureVolume:
    """Outer product of features and per-bin weights.

    Entry [k, c, v, u] equals weights[v, u, k] * features[c, v, u].
    """
    f = features.values
    w = weights.values
    if f.shape[1:] != w.shape[:2]:
        raise ValueError("feature map and weight volume spatial shapes differ")
    out = np.empty(
        (w.shape[2], f.shape[0]) + f.shape[1:], dtype=np.result_type(w, f)
    )
    np.multiply(w.transpose(2, 0, 1)[:, None, :, :], f[None, :, :, :], out=out)
    return LiftedFeatureVolume(out)


@dataclass(frozen=True)
class BEVGridSpec:
    """Extents and resolution of the pooled top-down grid.

    x maps to columns (width_cells) and y to rows (height_cells). Points
    with x outside [x_min, x_max) or y outside [y_min, y_max), or with z
    outside [z_min, z_max], are dropped.
    """

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    cell_size: float
    z_min: float
    z_max: float

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError("cell size must be positive")
        if self.x_max <= self.x_min or self.y_max <= self.y_min:
            raise ValueError("extents must be positive")
        if self.z_max <= self.z_min:
            raise ValueError("vertical bounds must be ordered")
        for extent in (self.x_max - self.x_min, self.y_max - self.y_min):
            cells = extent / self.cell_size
            if abs(cells - round(cells)) > 1e-9 or round(cells) < 1:
                raise ValueError("extents must be a positive whole number of cells")

    @property
    def width_cells(self) -> int:
        return int(round((self.x_max - self.x_min) / self.cell_size))

    @property
    def height_cells(self) -> int:
        return int(round((self.y_max - self.y_min) / self.cell_size))


@dataclass(frozen=True, eq=False)
class BEVGrid:
    """Pooled features, shape (channels, height_cells, width_cells)."""

    values: np.ndarray
    spec: BEVGridSpec

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.ndim != 3:
            raise ValueError("BEV grid must have shape (channels, rows, cols)")
        if vals.shape[1:] != (self.spec.height_cells, self.spec.width_cells):
            raise ValueError("BEV grid shape disagrees with its spec")
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True, eq=False)
class PoolResult:
    """``grid`` is the float32 output; ``accum`` the float64 accumulator it
    was rounded from. ``n_dropped`` counts points outside the extents."""

    grid: BEVGrid
    accum: np.ndarray
    n_points: int
    n_dropped: int


def _in_range(points: np.ndarray, spec: BEVGridSpec):
    """Cell column/row indices and the in-range mask, any leading shape."""
    x, y, z = (points[..., axis] for axis in range(3))
    ix = np.floor((x - spec.x_min) / spec.cell_size).astype(np.int64)
    iy = np.floor((y - spec.y_min) / spec.cell_size).astype(np.int64)
    keep = (
        (ix >= 0)
        & (ix < spec.width_cells)
        & (iy >= 0)
        & (iy < spec.height_cells)
        & (z >= spec.z_min)
        & (z <= spec.z_max)
    )
    return ix, iy, keep


def _flatten_volumes(volumes, spec: BEVGridSpec):
    """In-range cells and features of all cameras in canonical input order.

    Input order is (camera, bin, pixel row, pixel column), the memory order
    of the lifted volumes; within one BEV cell this is exactly the canonical
    accumulation order, so sequential scatter in input order realizes the
    determinism contract. Out-of-range points are dropped here, per camera,
    which keeps the concatenated buffers small. Features stay in their
    volume dtype; the float64 accumulators upcast entrywise, which is exact.
    """
    cell_parts, feat_parts = [], []
    channels = None
    n_total = 0
    for lifted, grid in volumes:
        k, c, h, w = lifted.values.shape
        if grid.points.shape[:3] != (h, w, k):
            raise ValueError("lifted volume and frustum grid shapes disagree")
        if channels is None:
            channels = c
        elif channels != c:
            raise ValueError("all volumes must share one channel count")
        n_total += k * h * w
        ix, iy, keep = _in_range(grid.points, spec)  # (H, W, bins)
        mask = keep.transpose(2, 0, 1)
        cell_parts.append((iy * spec.width_cells + ix).transpose(2, 0, 1)[mask])
        kept = np.empty((cell_parts[-1].shape[0], c), dtype=lifted.values.dtype)
        for ch in range(c):
            kept[:, ch] = lifted.values[:, ch][mask]
        feat_parts.append(kept)
    cells = np.concatenate(cell_parts, axis=0)
    feats = np.concatenate(feat_parts, axis=0)
    return cells, feats, n_total, channels


def voxel_pool(volumes, spec: BEVGridSpec, method: str = "sorted") -> PoolResult:
    """Splat lifted frustum features onto the BEV grid by summation.

    ``volumes`` is a list of (LiftedFeatureVolume, FrustumGrid) pairs sharing
    one world frame. Methods:

    * ``'loop'``: per-point Python accumulation, the reference.
    * ``'scatter'``: vectorized unsorted scatter-add in input order.
    * ``'sorted'``: stable sort by cell index, then a sequential segmented
      reduction per cell.

    All three accumulate per cell in input order and are bit-exact equal.
    """
    if method not in POOL_METHODS:
        raise ValueError(f"method must be one of {POOL_METHODS}")
    cells, feats, n_total, channels = _flatten_volumes(volumes, spec)
    n_cells = spec.height_cells * spec.width_cells

    if method == "loop":
        accum = np.zeros((n_cells, channels))
        for i in range(cells.shape[0]):
            accum[cells[i]] += feats[i]
    elif method == "scatter":
        accum = np.zeros((n_cells, channels))
        np.add.at(accum, (cells,), feats)
    else:
        order = np.argsort(cells, kind="stable")
        sorted_cells = cells[order]
        sorted_feats = feats[order]
        accum = np.empty((n_cells, channels))
        for c in range(channels):
            accum[:, c] = np.bincount(
                sorted_cells, weights=sorted_feats[:, c], minlength=n_cells
            )

    accum = accum.T.reshape(channels, spec.height_cells, spec.width_cells)
    grid = BEVGrid(accum.astype(np.float32), spec)
    return PoolResult(grid, accum, n_total, n_total - cells.shape[0])


def voxel_pool_grad(upstream: np.ndarray, volumes, spec: BEVGridSpec) -> list[np.ndarray]:
    """Backward of sum pooling: gather the upstream value at each point's cell.

    Returns one float64 array shaped like each lifted volume; entries whose
    points were dropped get zero gradient.
    """
    up = np.asarray(upstream, dtype=np.float64)
    grads = []
    for lifted, grid in volumes:
        k, c, h, w = lifted.values.shape
        if up.shape != (c, spec.height_cells, spec.width_cells):
            raise ValueError("upstream shape must match the BEV grid")
        ix, iy, keep = _in_range(grid.points, spec)  # (H, W, bins)
        g = np.zeros((h, w, k, c))
        g[keep] = up[:, iy[keep], ix[keep]].T
        grads.append(g.transpose(2, 3, 0, 1))
    return grads
