"""Pipeline configuration: dataclasses, JSON round-trip, flag overrides,
the semantic config hash, and seed derivation.

Precedence is flags > config file > defaults. All randomness flows from the
single global seed through per-stage derived seeds: sha256 of
``"<global_seed>:<stage name>"`` (plus any extra parts such as image ids).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

__all__ = [
    "ConfigError",
    "DatasetConfig",
    "ScorerConfig",
    "SelectionSettings",
    "ProbeSettings",
    "EvalSettings",
    "PipelineConfig",
    "default_config",
    "load_config",
    "config_to_dict",
    "config_from_dict",
    "config_hash",
    "derive_seed",
]

SHAPES = ("disc", "rectangle", "triangle", "ring")
BACKGROUNDS = ("flat", "gradient", "noise")


class ConfigError(ValueError):
    pass


@dataclass
class DatasetConfig:
    count: int = 2000
    image_size: int = 32
    shapes: tuple[str, ...] = SHAPES
    shapes_per_image: tuple[int, int] = (1, 1)
    background: str = "gradient"
    image_format: str = "png"
    learned_shapes: tuple[str, ...] = SHAPES  # categories flagged as learned
    heldout_fraction: float = 0.15

    def validate(self) -> None:
        if self.count < 2:
            raise ConfigError("dataset.count must be >= 2")
        if self.background not in BACKGROUNDS:
            raise ConfigError(f"dataset.background must be one of {BACKGROUNDS}")
        if self.image_format not in ("png", "ppm"):
            raise ConfigError("dataset.image_format must be png or ppm")
        lo, hi = self.shapes_per_image
        if not 1 <= lo <= hi <= 3:
            raise ConfigError("dataset.shapes_per_image must satisfy 1 <= lo <= hi <= 3")
        for s in self.shapes + self.learned_shapes:
            if s not in SHAPES:
                raise ConfigError(f"unknown shape {s!r}")
        if not 0.0 < self.heldout_fraction < 1.0:
            raise ConfigError("dataset.heldout_fraction must be in (0, 1)")


@dataclass
class MaeSettings:
    enc_depth: int = 4
    enc_width: int = 128
    enc_heads: int = 4
    dec_depth: int = 2
    dec_width: int = 64
    dec_heads: int = 4
    target_transform: str = "raw_pixels"
    masking_ratio: float = 0.75
    epochs: int = 50
    batch_size: int = 128
    lr: float = 1e-3


@dataclass
class ScorerConfig:
    metric: str = "l1"
    masking_ratio: float = 0.9
    phase: str = "before_decoder"
    reconstructor: str = "synthetic"  # or "mae"
    instances_per_image: int = 1

    def validate(self) -> None:
        if self.metric not in ("l1", "psnr", "ssim"):
            raise ConfigError("scorer.metric must be l1, psnr, or ssim")
        if not 0.0 < self.masking_ratio < 1.0:
            raise ConfigError("scorer.masking_ratio must be in (0, 1)")
        if self.phase not in ("before_encoder", "before_decoder"):
            raise ConfigError("scorer.phase must be before_encoder or before_decoder")
        if self.reconstructor not in ("synthetic", "mae"):
            raise ConfigError("scorer.reconstructor must be synthetic or mae")
        if self.instances_per_image < 1:
            raise ConfigError("scorer.instances_per_image must be >= 1")


@dataclass
class RankerSettings:
    loss: str = "listmle"
    sparse: bool = True
    depth: int = 4
    width: int = 128
    heads: int = 4
    use_positions: bool = True
    init_from_encoder: bool = False
    epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-3
    regenerate_per_epoch: bool = True  # fresh masks each epoch vs cached instances

    def validate(self) -> None:
        if self.loss not in ("listmle", "listnet", "ranknet", "regression"):
            raise ConfigError("ranker.loss must be listmle, listnet, ranknet, or regression")


@dataclass
class SelectionSettings:
    krs: tuple[float, ...] = (0.75, 0.5, 0.25)
    clustering_ratio: float = 0.2
    knn_k: int = 5

    def validate(self) -> None:
        if not self.krs:
            raise ConfigError("selection.krs must be non-empty")
        for kr in self.krs:
            if not 0.0 < kr <= 1.0:
                raise ConfigError(f"keep ratio {kr} outside (0, 1]")
        if not 0.0 <= self.clustering_ratio <= 1.0:
            raise ConfigError("selection.clustering_ratio must be in [0, 1]")


@dataclass
class ProbeSettings:
    krs: tuple[float, ...] = (0.5,)
    seeds: int = 3
    depth: int = 2
    width: int = 64
    heads: int = 4
    epochs: int = 12
    batch_size: int = 128
    lr: float = 1e-3


@dataclass
class EvalSettings:
    probe: ProbeSettings = field(default_factory=ProbeSettings)
    methods: tuple[str, ...] = ("ltrp", "random")
    category_filter: str = "all"  # all | learned | unseen

    def validate(self) -> None:
        for m in self.methods:
            if m not in ("ltrp", "random"):
                raise ConfigError(f"unknown evaluation method {m!r}")
        if self.category_filter not in ("all", "learned", "unseen"):
            raise ConfigError("evaluation.category_filter must be all, learned, or unseen")


@dataclass
class PipelineConfig:
    seed: int = 0
    out_dir: str = "out"
    workers: int = 1
    patch_size: int = 4
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    mae: MaeSettings = field(default_factory=MaeSettings)
    scorer: ScorerConfig = field(default_factory=ScorerConfig)
    ranker: RankerSettings = field(default_factory=RankerSettings)
    selection: SelectionSettings = field(default_factory=SelectionSettings)
    evaluation: EvalSettings = field(default_factory=EvalSettings)

    def validate(self) -> None:
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.dataset.image_size % self.patch_size:
            raise ConfigError("image_size must be divisible by patch_size")
        self.dataset.validate()
        self.scorer.validate()
        self.ranker.validate()
        self.selection.validate()
        self.evaluation.validate()


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [_to_plain(v) for v in obj]
    return obj


def _from_plain(cls, data: dict):
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        if f.name in _NESTED:
            value = _from_plain(_NESTED[f.name], value)
        elif isinstance(value, list):
            value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        kwargs[f.name] = value
    unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
    if unknown:
        raise ConfigError(f"unknown config keys for {cls.__name__}: {sorted(unknown)}")
    return cls(**kwargs)


_NESTED = {
    "dataset": DatasetConfig,
    "mae": MaeSettings,
    "scorer": ScorerConfig,
    "ranker": RankerSettings,
    "selection": SelectionSettings,
    "evaluation": EvalSettings,
    "probe": ProbeSettings,
}


def config_to_dict(cfg: PipelineConfig) -> dict:
    return _to_plain(cfg)


def config_from_dict(data: dict) -> PipelineConfig:
    return _from_plain(PipelineConfig, data)


def default_config() -> PipelineConfig:
    return PipelineConfig()


def _set_by_path(data: dict, path: str, value) -> None:
    keys = path.split(".")
    node = data
    for key in keys[:-1]:
        node = node.setdefault(key, {})
    node[keys[-1]] = value


def load_config(path: str | None = None, overrides: dict | None = None) -> PipelineConfig:
    """Merge defaults, an optional JSON config file, and dotted-path overrides."""
    data = config_to_dict(default_config())
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                file_data = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}")
        _merge(data, file_data)
    for key, value in (overrides or {}).items():
        _set_by_path(data, key, value)
    try:
        cfg = config_from_dict(data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc))
    cfg.validate()
    return cfg


def _merge(base: dict, extra: dict) -> None:
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _merge(base[key], value)
        else:
            base[key] = value


def config_hash(cfg: PipelineConfig) -> str:
    """Hash of the semantically meaningful fields (out_dir and workers are
    execution details and excluded)."""
    data = config_to_dict(cfg)
    data.pop("out_dir", None)
    data.pop("workers", None)
    blob = json.dumps(data, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def derive_seed(global_seed: int, *parts) -> int:
    """Stage seed: sha256 over the global seed and the stage name parts."""
    text = ":".join([str(global_seed)] + [str(p) for p in parts])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")
