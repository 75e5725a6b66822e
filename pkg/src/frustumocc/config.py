"""Run configuration: one JSON document plus dotted-path overrides.

Every section is a dataclass with defaults; unknown keys anywhere in the
document are rejected so typos fail loudly instead of silently running the
defaults.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .fusion import FusionParams
from .losses import LossWeights
from .propagation import AttentionConfig
from .scenes import SceneConfig


class ConfigError(ValueError):
    """Invalid configuration document, key, or value."""


@dataclass(frozen=True)
class BEVSection:
    x_min: float = -40.0
    x_max: float = 40.0
    y_min: float = -40.0
    y_max: float = 40.0
    cell_size: float = 0.625
    z_min: float = -1.0
    z_max: float = 4.0


@dataclass(frozen=True)
class AttentionSection:
    enabled: bool = True
    scope: str = "row"
    window: int = 5
    scale: str = "rsqrt"
    temperature: float = 1.0

    def to_attention_config(self) -> AttentionConfig:
        return AttentionConfig(self.scope, self.window, self.scale, self.temperature)


@dataclass(frozen=True)
class FocalSection:
    alpha: float = 0.25
    gamma: float = 2.0


@dataclass(frozen=True)
class FeatureSection:
    channels: int = 8
    depth_sharpness: float = 4.0
    occ_floor: float = 0.02
    occ_ceil: float = 0.98
    occ_blur: int = 2
    implicit_blur: int = 6


@dataclass(frozen=True)
class VerifySection:
    """Sizes of the verification suites; defaults are the full acceptance
    workload, shrink them for a quick pass."""

    inject_fault: bool = False
    halfspace_pairs: int = 10_000
    labeling_scenes: int = 20
    labeling_max_boxes: int = 10
    overlap_spacing_factor: float = 0.01
    pooling_configs: int = 50
    pooling_max_points: int = 1_000_000
    pooling_cells: int = 128
    gradient_probes: int = 10
    baseline_scenes: int = 5
    determinism_threads: tuple[int, ...] = (1, 4)
    skip_determinism: bool = False


@dataclass(frozen=True)
class BenchSection:
    sizes: tuple[int, ...] = (10_000, 100_000, 1_000_000)
    channels: int = 4
    cells: int = 128
    repeats: int = 3
    min_speedup: float = 1.0


@dataclass(frozen=True)
class RunConfig:
    seed: int = 7
    out_dir: str = "out"
    threads: int = 1
    scene: SceneConfig = field(default_factory=SceneConfig)
    bev: BEVSection = field(default_factory=BEVSection)
    fusion: FusionParams = field(default_factory=FusionParams)
    attention: AttentionSection = field(default_factory=AttentionSection)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    focal: FocalSection = field(default_factory=FocalSection)
    features: FeatureSection = field(default_factory=FeatureSection)
    verify: VerifySection = field(default_factory=VerifySection)
    bench: BenchSection = field(default_factory=BenchSection)


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"section '{path or 'root'}' must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        where = path or "root"
        raise ConfigError(f"unknown config key(s) in {where}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        ftype = fields[name].type
        sub = path + "." + name if path else name
        if dataclasses.is_dataclass(_resolve(ftype)):
            kwargs[name] = _build(_resolve(ftype), value, sub)
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid config in {path or 'root'}: {exc}") from exc


_SECTION_TYPES = {
    "scene": SceneConfig,
    "bev": BEVSection,
    "fusion": FusionParams,
    "attention": AttentionSection,
    "loss_weights": LossWeights,
    "focal": FocalSection,
    "features": FeatureSection,
    "verify": VerifySection,
    "bench": BenchSection,
}


def _resolve(ftype):
    """Map a (possibly string) field annotation to the section class."""
    if isinstance(ftype, type):
        return ftype
    name = str(ftype)
    for cls in _SECTION_TYPES.values():
        if cls.__name__ == name.split(".")[-1]:
            return cls
    return None


def config_from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "")


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply ``key.path=value`` overrides; values parse as JSON, falling back
    to a bare string."""
    doc = config_to_dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = doc
        parts = key.split(".")
        for part in parts[:-1]:
            if not isinstance(node, dict) or part not in node:
                raise ConfigError(f"unknown config key: {key}")
            node = node[part]
        if not isinstance(node, dict) or parts[-1] not in node:
            raise ConfigError(f"unknown config key: {key}")
        node[parts[-1]] = value
    return config_from_dict(doc)
