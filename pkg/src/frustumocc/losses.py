"""Supervision losses with closed-form gradients.

Depth prediction is supervised with one-hot binary cross entropy over the
depth bins of each pixel that has a ground-truth depth; explicit occupancy
with a focal loss over all frustum entries. Both reduce by the mean over
supervised units so the loss weights stay independent of resolution.
Probabilities are clamped to [eps, 1 - eps] before any log; the gradient is
zero where the clamp is active.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fusion import WeightVolume
from .occupancy import OccupancyVolume

CLAMP_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    """Weights of the detection, depth, and occupancy terms."""

    detection: float = 1.0
    depth: float = 3.0
    occupancy: float = 3000.0

    def __post_init__(self):
        for name in ("detection", "depth", "occupancy"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} weight must be finite and nonnegative")


def depth_bce(
    pred: WeightVolume,
    gt_bins: np.ndarray,
    eps: float = CLAMP_EPS,
) -> tuple[float, np.ndarray]:
    """One-hot BCE over depth bins, averaged over supervised pixels.

    ``gt_bins`` is an (H, W) integer map of ground-truth bin indices;
    negative entries mark pixels without depth ground truth, which
    contribute neither loss nor gradient. Returns the loss and its float64
    gradient with respect to every predicted entry.
    """
    if pred.kind != "depth":
        raise ValueError("pred must be a depth weight volume")
    gt = np.asarray(gt_bins)
    if not np.issubdtype(gt.dtype, np.integer):
        raise ValueError("gt_bins must be integers")
    h, w, k = pred.shape
    if gt.shape != (h, w):
        raise ValueError("gt_bins shape must match the volume's pixel grid")
    if gt.max(initial=-1) >= k:
        raise ValueError("gt bin index out of range")

    supervised = gt >= 0
    n_sup = int(np.count_nonzero(supervised))
    grad = np.zeros((h, w, k))
    if n_sup == 0:
        return 0.0, grad

    raw = pred.values.astype(np.float64)
    p = np.clip(raw, eps, 1.0 - eps)
    onehot = np.zeros((h, w, k))
    vv, uu = np.nonzero(supervised)
    onehot[vv, uu, gt[supervised]] = 1.0

    per_entry = -(onehot * np.log(p) + (1.0 - onehot) * np.log1p(-p))
    loss = float(per_entry[supervised].sum() / n_sup)

    active = (raw > eps) & (raw < 1.0 - eps) & supervised[:, :, None]
    g = (-onehot / p + (1.0 - onehot) / (1.0 - p)) / n_sup
    grad[active] = g[active]
    return loss, grad


def focal_loss(
    pred: OccupancyVolume,
    gt: OccupancyVolume,
    alpha: float = 0.25,
    gamma: float = 2.0,
    eps: float = CLAMP_EPS,
) -> tuple[float, np.ndarray]:
    """Focal loss -alpha_t (1 - p_t)^gamma log(p_t), mean over all entries.

    ``pred`` holds probabilities, ``gt`` binary labels of the same shape.
    With gamma = 0 and alpha = 0.5 this reduces to half the elementwise BCE.
    Returns the loss and its float64 gradient with respect to ``pred``.
    """
    if pred.mode != "probability" or gt.mode != "label":
        raise ValueError("pred must be probabilities and gt labels")
    if pred.shape != gt.shape:
        raise ValueError("pred and gt shapes differ")
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")

    raw = pred.values.astype(np.float64)
    p = np.clip(raw, eps, 1.0 - eps)
    y = gt.values.astype(np.float64)
    p_t = np.where(y == 1.0, p, 1.0 - p)
    a_t = np.where(y == 1.0, alpha, 1.0 - alpha)
    n = p.size

    loss = float(np.sum(-a_t * (1.0 - p_t) ** gamma * np.log(p_t)) / n)

    # d/dp_t of -(1-p_t)^g log p_t, then the chain sign for y == 0
    d_pt = gamma * (1.0 - p_t) ** (gamma - 1.0) * np.log(p_t) - (1.0 - p_t) ** gamma / p_t
    grad = a_t * d_pt * np.where(y == 1.0, 1.0, -1.0) / n
    grad[(raw <= eps) | (raw >= 1.0 - eps)] = 0.0
    return loss, grad


def total_loss(
    detection_proxy: float,
    depth_loss: float,
    occupancy_loss: float,
    weights: LossWeights,
) -> float:
    """Weighted combination of the three loss terms."""
    for v in (detection_proxy, depth_loss, occupancy_loss):
        if not np.isfinite(v):
            raise ValueError("loss terms must be finite")
    return (
        weights.detection * detection_proxy
        + weights.depth * depth_loss
        + weights.occupancy * occupancy_loss
    )
