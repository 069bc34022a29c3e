"""JSON run configuration and run manifests.

A config file has two nested sections, "data" and "train", whose keys
mirror DataConfig and TrainConfig. Unknown keys are rejected with the
offending dotted path. Hashing canonicalizes the JSON (sorted keys,
fixed separators) so reordering keys never changes the hash.
"""

from __future__ import annotations

import dataclasses
import datetime
import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .checkpoint import VERSION as CHECKPOINT_VERSION
from .errors import ConfigError
from .fsio import write_json
from .training import TrainConfig
from .worldgen import DataConfig

SECTIONS = {"data": DataConfig, "train": TrainConfig}

# fields stored as tuples but arriving from JSON as lists
_TUPLE_FIELDS = {"freq_range", "amp_range"}


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> dict:
        return {"data": dataclasses.asdict(self.data),
                "train": dataclasses.asdict(self.train)}

    def validate(self) -> "RunConfig":
        self.data.validate()
        self.train.validate()
        return self


def _build_section(cls, values: dict, path: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in values.items():
        if key not in fields:
            raise ConfigError(f"unknown config key: {path}.{key}")
        if key in _TUPLE_FIELDS and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"bad values under {path}: {e}") from e


def config_from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    sections = {}
    for key, values in raw.items():
        if key not in SECTIONS:
            raise ConfigError(f"unknown config key: {key}")
        if not isinstance(values, dict):
            raise ConfigError(f"config section {key} must be an object")
        sections[key] = _build_section(SECTIONS[key], values, key)
    return RunConfig(**sections).validate()


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    return config_from_dict(raw)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg) -> str:
    """sha256 over the canonical JSON form; key order never matters."""
    d = cfg.to_dict() if isinstance(cfg, RunConfig) else cfg
    return hashlib.sha256(canonical_json(d).encode("utf-8")).hexdigest()


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config_sha256: str
    seed: int
    created_utc: str = ""
    versions: dict = field(default_factory=lambda: {
        "package": __version__,
        "numpy": np.__version__,
        "checkpoint_format": CHECKPOINT_VERSION,
    })
    files: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.created_utc:
            now = datetime.datetime.now(datetime.timezone.utc)
            self.created_utc = now.isoformat(timespec="seconds")

    def record(self, path, root) -> None:
        self.files.append({
            "path": os.path.relpath(path, root).replace(os.sep, "/"),
            "sha256": file_sha256(path),
            "bytes": os.path.getsize(path),
        })

    def write(self, path) -> None:
        self.files.sort(key=lambda f: f["path"])
        write_json(path, dataclasses.asdict(self))
