"""Occupancy-keyed feature propagation and the ray-overlap identity.

Each feature point's per-bin occupancy vector serves as both key and query
of a softmax self-attention; its image feature is the value. Two points
whose rays pierce the same box carry occupancy vectors whose dot product
(scaled by the bin spacing) equals the length of the overlap between the
two in-box ray intervals, which for parallel rays has the closed form
``w / cos(theta) - d * tan(theta)``, clamped at zero. ``empirical_overlap``
measures that length by discretizing the intervals and is the
discretization-free check for ``analytic_overlap``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fusion import WeightVolume
from .geometry import OrientedBox3D
from .lifting import FeatureMap
from .occupancy import OccupancyVolume, ray_box_interval


def stable_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Softmax with the usual max-shift; rows of -inf are not supported."""
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


@dataclass(frozen=True, eq=False)
class OccupancyTokenSet:
    """Per-pixel occupancy vectors used as attention keys and queries.

    ``tokens`` is (N, n_bins) with values in [0, 1]; ``pixel_indices`` maps
    token i to its flat row-major pixel index. Storage order is free, the
    pixel map is what ties tokens to the feature grid.
    """

    tokens: np.ndarray
    pixel_indices: np.ndarray

    def __post_init__(self):
        toks = np.asarray(self.tokens)
        if toks.dtype not in (np.float32, np.float64):
            toks = toks.astype(np.float32)
        idx = np.asarray(self.pixel_indices, dtype=np.int64)
        object.__setattr__(self, "tokens", toks)
        object.__setattr__(self, "pixel_indices", idx)
        if toks.ndim != 2 or toks.shape[0] < 1:
            raise ValueError("tokens must be a nonempty (N, bins) array")
        if idx.shape != (toks.shape[0],):
            raise ValueError("pixel_indices must have one entry per token")
        if toks.min() < 0.0 or toks.max() > 1.0:
            raise ValueError("token values must lie in [0, 1]")

    @classmethod
    def from_volume(cls, volume) -> "OccupancyTokenSet":
        """Flatten a (H, W, bins) occupancy/weight volume, row-major pixels."""
        if isinstance(volume, (OccupancyVolume, WeightVolume)):
            vals = volume.values
        else:
            vals = np.asarray(volume)
        h, w, k = vals.shape
        toks = vals.reshape(h * w, k)
        if toks.dtype == np.uint8:
            toks = toks.astype(np.float32)
        return cls(toks, np.arange(h * w, dtype=np.int64))


@dataclass(frozen=True)
class AttentionConfig:
    """Scope and scaling of the occupancy self-attention.

    ``scope`` is 'global' (all pixels of the image attend to each other),
    'row' (pixels sharing a feature row), or 'window' (pixels within
    ``window`` columns along the row, window odd). ``scale`` is 'rsqrt'
    (1/sqrt(n_bins)) or 'none'; logits are divided by ``temperature``.
    """

    scope: str = "row"
    window: int = 5
    scale: str = "rsqrt"
    temperature: float = 1.0

    def __post_init__(self):
        if self.scope not in ("global", "row", "window"):
            raise ValueError("scope must be 'global', 'row', or 'window'")
        if self.scope == "window" and (self.window < 1 or self.window % 2 == 0):
            raise ValueError("window must be odd and >= 1")
        if self.scale not in ("rsqrt", "none"):
            raise ValueError("scale must be 'rsqrt' or 'none'")
        if not (self.temperature > 0):
            raise ValueError("temperature must be positive")


def _logit_factor(cfg: AttentionConfig, n_bins: int) -> float:
    scale = 1.0 / np.sqrt(n_bins) if cfg.scale == "rsqrt" else 1.0
    return scale / cfg.temperature


def _window_mask(n: int, window: int) -> np.ndarray:
    cols = np.arange(n)
    return np.abs(cols[:, None] - cols[None, :]) <= window // 2


def _attend_group(tokens: np.ndarray, values: np.ndarray, factor: float,
                  mask: np.ndarray | None = None):
    """Forward attention on one scope group, float64. Returns (out, probs)."""
    logits = factor * (tokens @ tokens.T)
    if mask is not None:
        logits = np.where(mask, logits, -np.inf)
    probs = stable_softmax(logits, axis=1)
    return probs @ values, probs


def _scope_groups(cfg: AttentionConfig, height: int, width: int):
    """Yield flat pixel-index arrays, one per attention group."""
    if cfg.scope == "global":
        yield np.arange(height * width)
    else:
        for v in range(height):
            yield np.arange(v * width, (v + 1) * width)


def _gather(tokens: OccupancyTokenSet, shape: tuple[int, int]) -> np.ndarray:
    """Tokens rearranged into pixel order, validated against the grid."""
    h, w = shape
    n = h * w
    if tokens.tokens.shape[0] != n:
        raise ValueError("token count must equal the number of feature pixels")
    order = np.argsort(tokens.pixel_indices, kind="stable")
    if not np.array_equal(tokens.pixel_indices[order], np.arange(n)):
        raise ValueError("pixel_indices must cover every pixel exactly once")
    return order


def occupancy_attention(
    tokens: OccupancyTokenSet,
    values: FeatureMap,
    cfg: AttentionConfig = AttentionConfig(),
) -> FeatureMap:
    """Self-attention with occupancy vectors as keys/queries, features as values.

    out_i = sum_j softmax_j(factor * <O_i, O_j>) * f_j within each scope
    group. Computation runs in float64 and the result is returned in the
    feature map's dtype.
    """
    c, h, w = values.values.shape
    if h * w == 0:
        raise ValueError("attention scope is empty")
    order = _gather(tokens, (h, w))
    toks = tokens.tokens.astype(np.float64)[order]
    vals = values.values.astype(np.float64).reshape(c, h * w).T
    factor = _logit_factor(cfg, toks.shape[1])
    mask = _window_mask(w, cfg.window) if cfg.scope == "window" else None

    out = np.empty_like(vals)
    for idx in _scope_groups(cfg, h, w):
        out[idx], _ = _attend_group(toks[idx], vals[idx], factor, mask)
    out = out.T.reshape(c, h, w)
    return FeatureMap(out.astype(values.values.dtype))


def occupancy_attention_grad(
    tokens: OccupancyTokenSet,
    values: FeatureMap,
    upstream: np.ndarray,
    cfg: AttentionConfig = AttentionConfig(),
) -> tuple[np.ndarray, np.ndarray]:
    """Backward pass of ``occupancy_attention``.

    Returns float64 gradients: for the tokens (in their storage order) and
    for the feature values, given an upstream gradient of the output.
    """
    c, h, w = values.values.shape
    up = np.asarray(upstream, dtype=np.float64)
    if up.shape != (c, h, w):
        raise ValueError("upstream gradient must match the feature shape")
    order = _gather(tokens, (h, w))
    toks = tokens.tokens.astype(np.float64)[order]
    vals = values.values.astype(np.float64).reshape(c, h * w).T
    up_flat = up.reshape(c, h * w).T
    factor = _logit_factor(cfg, toks.shape[1])
    mask = _window_mask(w, cfg.window) if cfg.scope == "window" else None

    d_toks = np.zeros_like(toks)
    d_vals = np.zeros_like(vals)
    for idx in _scope_groups(cfg, h, w):
        t, v, du = toks[idx], vals[idx], up_flat[idx]
        _, probs = _attend_group(t, v, factor, mask)
        d_vals[idx] = probs.T @ du
        d_probs = du @ v.T
        tmp = probs * d_probs
        d_logits = tmp - probs * tmp.sum(axis=1, keepdims=True)
        d_toks[idx] += factor * (d_logits + d_logits.T) @ t

    d_tokens_storage = np.empty_like(d_toks)
    d_tokens_storage[order] = d_toks
    return d_tokens_storage, d_vals.T.reshape(c, h, w)


def analytic_overlap(width: float, theta: float, lateral_distance: float) -> float:
    """Closed-form overlap length of two parallel rays' in-box intervals.

    ``width`` is the box width (m), ``theta`` the angle between the rays and
    the width-face normal, ``lateral_distance`` the perpendicular distance
    between the rays. The raw form w/cos(theta) - d*tan(theta) is clamped at
    zero: an overlap length cannot be negative.
    """
    if not (0.0 <= theta < np.pi / 2):
        raise ValueError("theta must lie in [0, pi/2)")
    if width <= 0:
        raise ValueError("width must be positive")
    if lateral_distance < 0:
        raise ValueError("lateral distance must be nonnegative")
    return float(max(0.0, width / np.cos(theta) - lateral_distance * np.tan(theta)))


def empirical_overlap(
    box: OrientedBox3D,
    ray_i: tuple[np.ndarray, np.ndarray],
    ray_j: tuple[np.ndarray, np.ndarray],
    bin_spacing: float,
) -> float:
    """Overlap length measured through discretized binary ray occupancy.

    Both rays are cut into shared bins of ``bin_spacing`` anchored at the
    earlier box entry; each ray contributes the indicator of its bin centers
    lying inside its in-box interval, and the result is the dot product of
    the two indicator vectors times the spacing. First-order convergent to
    ``analytic_overlap`` as the spacing shrinks.
    """
    if bin_spacing <= 0:
        raise ValueError("bin spacing must be positive")
    (o_i, d_i), (o_j, d_j) = ray_i, ray_j
    u_i = np.asarray(d_i, dtype=np.float64)
    u_j = np.asarray(d_j, dtype=np.float64)
    u_i = u_i / np.linalg.norm(u_i)
    u_j = u_j / np.linalg.norm(u_j)
    if np.linalg.norm(np.cross(u_i, u_j)) > 1e-9 or np.dot(u_i, u_j) < 0:
        raise ValueError("rays must be parallel and share a direction")

    ivl_i = ray_box_interval(o_i, u_i, box)
    ivl_j = ray_box_interval(o_j, u_j, box)
    if ivl_i is None or ivl_j is None:
        return 0.0
    t0 = min(ivl_i[0], ivl_j[0])
    t1 = max(ivl_i[1], ivl_j[1])
    n_bins = int(np.ceil((t1 - t0) / bin_spacing)) + 2
    centers = t0 + (np.arange(n_bins) + 0.5) * bin_spacing
    ind_i = (centers >= ivl_i[0]) & (centers <= ivl_i[1])
    ind_j = (centers >= ivl_j[0]) & (centers <= ivl_j[1])
    return float(np.count_nonzero(ind_i & ind_j)) * bin_spacing


@dataclass(frozen=True)
class OverlapSample:
    """One row of the overlap-identity sweep."""

    width: float
    theta_deg: float
    lateral: float
    spacing: float
    empirical: float
    analytic: float

    @property
    def abs_error(self) -> float:
        return abs(self.empirical - self.analytic)


def overlap_sweep(
    widths=(1.0, 2.0, 4.0),
    angles_deg=(0.0, 15.0, 30.0, 45.0, 60.0),
    lateral_fractions=(0.0, 0.2, 0.5),
    spacing_factor: float = 0.01,
) -> list[OverlapSample]:
    """Compare empirical and analytic overlaps over a parameter grid.

    For each (width, angle, lateral offset as a fraction of width) a long
    box of the given width is yawed so its width-face normal makes the
    requested angle with two +x rays offset laterally in y; the bin spacing
    is ``spacing_factor * width``.
    """
    samples = []
    for w in widths:
        for deg in angles_deg:
            theta = np.deg2rad(deg)
            for frac in lateral_fractions:
                d = frac * w
                # length 20w keeps both crossings far from the box ends,
                # yaw theta - pi/2 points the width axis at angle theta
                # from the ray direction
                box = OrientedBox3D(
                    np.zeros(3), np.array([20.0 * w, w, 4.0 * w]), theta - np.pi / 2
                )
                x0 = -12.0 * w
                ray_i = (np.array([x0, 0.0, 0.0]), np.array([1.0, 0.0, 0.0]))
                ray_j = (np.array([x0, d, 0.0]), np.array([1.0, 0.0, 0.0]))
                spacing = spacing_factor * w
                samples.append(
                    OverlapSample(
                        width=w,
                        theta_deg=deg,
                        lateral=d,
                        spacing=spacing,
                        empirical=empirical_overlap(box, ray_i, ray_j, spacing),
                        analytic=analytic_overlap(w, theta, d),
                    )
                )
    return samples
