"""
Pipeline configuration.

Every tunable that the method leaves open lives here with its default, so
an experiment is one JSON file. The file mirrors the section layout below;
keys that are omitted keep their defaults and unknown keys are rejected.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any


@dataclass
class PreprocessConfig:
    tile: int = 512
    median_kernel: int = 3
    normalize_scope: str = "tile"  # "tile" or "micrograph"


@dataclass
class SegmentConfig:
    otsu_bins: int = 256
    otsu_particle_above: bool = True
    # annulus in cycles per image; defaults suit 8 px fringes on 256 px tiles
    r_in: float = 26.0
    r_out: float = 40.0
    smooth_sigma: float = 4.0
    mode: str = "keep"
    threshold: float = 0.5
    probmap_threshold: float = 0.5


@dataclass
class RegionsConfig:
    morphology: list[list[Any]] = field(default_factory=lambda: [["close", 2], ["open", 2]])
    min_area: int = 64
    max_area_fraction: float = 0.25
    margin: int = 8


@dataclass
class FeaturesConfig:
    pad_to: int = 128
    include_dc: bool = False
    masked_only: bool = True


@dataclass
class ForestConfig:
    n_trees: int = 500
    max_features: int = 2
    min_leaf: int = 1
    class_weight: list[float] | None = None


@dataclass
class Config:
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    segment: SegmentConfig = field(default_factory=SegmentConfig)
    regions: RegionsConfig = field(default_factory=RegionsConfig)
    features: FeaturesConfig = field(default_factory=FeaturesConfig)
    forest: ForestConfig = field(default_factory=ForestConfig)
    seed: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1) + "\n"


def _merge(obj, data: dict[str, Any], where: str):
    if not isinstance(data, dict):
        raise ValueError(f"config section {where or 'root'} must be an object")
    known = {f.name: f for f in fields(obj)}
    for key, value in data.items():
        if key not in known:
            raise ValueError(f"unknown config key {where}{key}")
        current = getattr(obj, key)
        if is_dataclass(current):
            _merge(current, value, f"{where}{key}.")
        else:
            if isinstance(value, str) and key == "r_out" and value.lower() in ("inf", "all"):
                value = math.inf
            setattr(obj, key, value)
    return obj


def load_config(path: str | Path | None) -> Config:
    cfg = Config()
    if path is None:
        return cfg
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: config is not valid JSON ({exc})") from exc
    return _merge(cfg, data, "")
