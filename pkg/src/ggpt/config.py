"""Run configuration: one JSON file mirroring every stage's knobs.

Unknown keys are rejected; paths listed under "paths" must exist at load time.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields

from .autoencoder import AutoencoderConfig
from .ordering import Ordering
from .sampling import OutpaintConfig, SampleConfig
from .synth import SynthParams
from .transformer import GptConfig, GptTrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EncodeConfig:
    chunks_per_scene: int = 2
    occupancy_threshold: float = 0.3  # latent-grid chunks
    chunk_tries: int = 10


@dataclass
class RunConfig:
    seed: int = 0
    deterministic: bool = False
    synth_count: int = 64
    ae_steps: int = 2000
    paths: dict[str, str] = field(default_factory=dict)
    synth: SynthParams = field(default_factory=SynthParams)
    autoencoder: AutoencoderConfig = field(default_factory=AutoencoderConfig)
    gpt: GptConfig = field(default_factory=GptConfig)
    gpt_train: GptTrainConfig = field(default_factory=GptTrainConfig)
    sample: SampleConfig = field(default_factory=SampleConfig)
    outpaint: OutpaintConfig = field(default_factory=lambda: OutpaintConfig(target_columns=(16, 16)))
    encode: EncodeConfig = field(default_factory=EncodeConfig)
    raw: dict = field(default_factory=dict, repr=False)


def _build(cls, data: dict, where: str, coerce: dict | None = None):
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)} in section {where!r}")
    kwargs = dict(data)
    for key, fn in (coerce or {}).items():
        if key in kwargs:
            kwargs[key] = fn(kwargs[key])
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid section {where!r}: {e}") from e


_TOP_KEYS = {"seed", "deterministic", "synth_count", "ae_steps", "paths", "synth",
             "autoencoder", "gpt", "gpt_train", "sample", "outpaint", "encode"}


def config_from_dict(data: dict) -> RunConfig:
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    cfg = RunConfig(raw=data)
    cfg.seed = int(data.get("seed", cfg.seed))
    cfg.deterministic = bool(data.get("deterministic", cfg.deterministic))
    cfg.synth_count = int(data.get("synth_count", cfg.synth_count))
    cfg.ae_steps = int(data.get("ae_steps", cfg.ae_steps))
    cfg.paths = dict(data.get("paths", {}))
    for name, p in cfg.paths.items():
        if not os.path.exists(p):
            raise ConfigError(f"path {name!r} = {p!r} does not exist")
    as_tuple = lambda v: tuple(v)  # noqa: E731
    if "synth" in data:
        cfg.synth = _build(SynthParams, data["synth"], "synth", {
            "room_cells_range": as_tuple, "room_height_range": as_tuple,
            "object_count_range": as_tuple, "object_cells_range": as_tuple,
            "palette": lambda v: tuple(tuple(c) for c in v),
            "scale_fraction_range": as_tuple,
        })
    if "autoencoder" in data:
        cfg.autoencoder = _build(AutoencoderConfig, data["autoencoder"], "autoencoder",
                                 {"chunk_extent": as_tuple, "widths": as_tuple})
    if "gpt" in data:
        cfg.gpt = _build(GptConfig, data["gpt"], "gpt", {
            "extent": as_tuple,
            "ordering": lambda v: Ordering.from_name(v) if isinstance(v, str) else Ordering(v),
        })
    if "gpt_train" in data:
        cfg.gpt_train = _build(GptTrainConfig, data["gpt_train"], "gpt_train")
    if "sample" in data:
        cfg.sample = _build(SampleConfig, data["sample"], "sample")
    if "outpaint" in data:
        cfg.outpaint = _build(OutpaintConfig, data["outpaint"], "outpaint",
                              {"target_columns": as_tuple})
    if "encode" in data:
        cfg.encode = _build(EncodeConfig, data["encode"], "encode")
    return cfg


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path!r}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path!r} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    return config_from_dict(data)


def dump_config(cfg: RunConfig) -> str:
    """Canonical re-serialization of the loaded config (key order normalized)."""
    return json.dumps(cfg.raw, indent=2, sort_keys=True)
