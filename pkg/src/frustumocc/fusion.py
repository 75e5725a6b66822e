"""Per-pixel per-bin weight volumes and their trainable-scalar fusion.

The fused weight at every frustum entry is a plain weighted sum of the
depth weight and the two occupancy weights; nothing is renormalized
afterwards, so downstream pooling must tolerate unnormalized weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

_KINDS = ("depth", "occupancy", "fused")


@dataclass(frozen=True, eq=False)
class WeightVolume:
    """Scalar field over frustum entries, shape (H, W, n_bins).

    ``kind='depth'`` volumes are nonnegative and per-pixel normalized,
    ``kind='occupancy'`` volumes hold independent per-bin probabilities, and
    ``kind='fused'`` volumes are unconstrained weighted sums. Values are
    float32 by default; float64 is accepted for verification paths.
    """

    values: np.ndarray
    kind: str

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values)
        if vals.dtype not in (np.float32, np.float64):
            vals = vals.astype(np.float32)
        object.__setattr__(self, "values", vals)
        if vals.ndim != 3:
            raise ValueError("weight volume must have shape (H, W, bins)")
        if self.kind not in _KINDS:
            raise ValueError(f"kind must be one of {_KINDS}")
        if self.kind == "depth":
            if vals.min() < 0.0:
                raise ValueError("depth weights must be nonnegative")
            sums = vals.sum(axis=2, dtype=np.float64)
            if np.abs(sums - 1.0).max() > 1e-5:
                raise ValueError("depth weights must sum to 1 per pixel")
        elif self.kind == "occupancy":
            if vals.min() < 0.0 or vals.max() > 1.0:
                raise ValueError("occupancy weights must lie in [0, 1]")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape


@dataclass(frozen=True)
class FusionParams:
    """Trainable mixing scalars for depth / implicit / explicit weights.

    Defaults start at the depth-only baseline (1, 0, 0), so turning the
    occupancy terms on is a continuous perturbation.
    """

    w_depth: float = 1.0
    w_implicit: float = 0.0
    w_explicit: float = 0.0

    def __post_init__(self):
        for name in ("w_depth", "w_implicit", "w_explicit"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


def _check_fusable(depth: WeightVolume, implicit: WeightVolume, explicit: WeightVolume):
    if depth.kind != "depth":
        raise ValueError("first volume must have kind 'depth'")
    if implicit.kind != "occupancy" or explicit.kind != "occupancy":
        raise ValueError("occupancy volumes must have kind 'occupancy'")
    if not (depth.shape == implicit.shape == explicit.shape):
        raise ValueError("all volumes must share one shape")


def fuse_weights(
    depth: WeightVolume,
    implicit: WeightVolume,
    explicit: WeightVolume,
    params: FusionParams,
) -> WeightVolume:
    """Pointwise weighted sum of the three volumes, no renormalization."""
    _check_fusable(depth, implicit, explicit)
    fused = (
        params.w_depth * depth.values
        + params.w_implicit * implicit.values
        + params.w_explicit * explicit.values
    )
    return WeightVolume(fused, "fused")


@dataclass(frozen=True, eq=False)
class FusionGradients:
    """Gradients of a scalar loss through ``fuse_weights``."""

    w_depth: float
    w_implicit: float
    w_explicit: float
    depth: np.ndarray
    implicit: np.ndarray
    explicit: np.ndarray


def fuse_weights_grad(
    depth: WeightVolume,
    implicit: WeightVolume,
    explicit: WeightVolume,
    params: FusionParams,
    upstream: np.ndarray,
) -> FusionGradients:
    """Backward pass of ``fuse_weights`` for an upstream gradient volume.

    Scalar gradients are the upstream-weighted sums of the matching input
    volume; volume gradients are the matching scalar times the upstream.
    All gradients are computed and returned in float64.
    """
    _check_fusable(depth, implicit, explicit)
    up = np.asarray(upstream, dtype=np.float64)
    if up.shape != depth.shape:
        raise ValueError("upstream gradient must match the volume shape")
    d64 = depth.values.astype(np.float64)
    i64 = implicit.values.astype(np.float64)
    e64 = explicit.values.astype(np.float64)
    return FusionGradients(
        w_depth=float(np.sum(up * d64)),
        w_implicit=float(np.sum(up * i64)),
        w_explicit=float(np.sum(up * e64)),
        depth=params.w_depth * up,
        implicit=params.w_implicit * up,
        explicit=params.w_explicit * up,
    )


def head_param_count(channels_in: int, heads: Sequence[tuple[int, int]]) -> int:
    """Parameter count of a set of 1x1-convolution prediction heads.

    Each head (c_in, c_out) contributes c_in * c_out weights plus c_out
    biases. ``channels_in`` is the shared feature width the heads read from
    and must be positive; heads may branch from it in parallel, so their
    input widths are not required to chain.
    """
    if channels_in <= 0:
        raise ValueError("channels_in must be positive")
    total = 0
    for c_in, c_out in heads:
        if c_in <= 0 or c_out <= 0:
            raise ValueError("channel counts must be positive")
        total += c_in * c_out + c_out
    return total
