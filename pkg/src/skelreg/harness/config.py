"""Experiment configuration: loading, validation and defaults.

A config is a YAML or JSON mapping. Keys (all optional except ``schema_version``)::

    schema_version: 1
    shapes: [table, airplane]          # built-in names or paths to .ply/.xyz files
    n_points: 1024                     # points sampled per built-in shape
    corruptions: [gaussian, uniform]   # corruption kinds, or "clean" for none
    severities: [3]
    trials: 10                         # trials per (shape, kind, severity)
    max_rotation_deg: 45.0
    max_translation: 0.5
    methods: [icp, raw_soft, skeleton_only, srrf_fused]
    tau: 0.02
    inlier_threshold: 0.05
    fusion: quaternion                 # or svd
    skeleton: {n_samples: 256, n_skeleton: 64, lambda_ddl: 1.0, ...}
    seed: 0
    out: results
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import yaml

from ..corruption import KINDS
from ..registration import DEFAULT_INLIER_THRESHOLD, DEFAULT_TAU
from ..shapes import SHAPES
from ..skeleton import SkeletonConfig

SCHEMA_VERSION = 1
CLEAN = "clean"
METHODS = ("icp", "raw_soft", "skeleton_only", "srrf_fused")
SAMPLING_METHODS = ("rds", "fps", "sps")
FUSION_MODES = ("quaternion", "svd")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    shapes: tuple = ("table", "airplane")
    n_points: int = 1024
    corruptions: tuple = ("gaussian",)
    severities: tuple = (3,)
    trials: int = 10
    max_rotation_deg: float = 45.0
    max_translation: float = 0.5
    methods: tuple = METHODS
    tau: float = DEFAULT_TAU
    inlier_threshold: float = DEFAULT_INLIER_THRESHOLD
    fusion: str = "quaternion"
    skeleton: SkeletonConfig = field(default_factory=SkeletonConfig)
    seed: int = 0
    out: str = "results"
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        validate(self)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def as_dict(self) -> dict:
        d = asdict(self)
        for k in ("shapes", "corruptions", "severities", "methods"):
            d[k] = list(d[k])
        return d


def shape_resolvable(shape: str) -> bool:
    return shape in SHAPES or Path(shape).is_file()


def validate(cfg: ExperimentConfig) -> None:
    if cfg.schema_version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: unsupported version {cfg.schema_version!r}")
    if not cfg.shapes:
        raise ConfigError("shapes: at least one shape is required")
    for s in cfg.shapes:
        if not shape_resolvable(s):
            raise ConfigError(f"shapes: unknown shape or missing file {s!r}")
    for k in cfg.corruptions:
        if k != CLEAN and k not in KINDS:
            raise ConfigError(f"corruptions: unknown kind {k!r}")
    for s in cfg.severities:
        if not isinstance(s, int) or not 1 <= s <= 5:
            raise ConfigError(f"severities: {s!r} not an integer in 1..5")
    if not isinstance(cfg.trials, int) or cfg.trials < 1:
        raise ConfigError("trials: must be an integer >= 1")
    if not 0.0 < cfg.max_rotation_deg <= 180.0:
        raise ConfigError("max_rotation_deg: must lie in (0, 180]")
    if cfg.max_translation < 0:
        raise ConfigError("max_translation: must be >= 0")
    if cfg.n_points < cfg.skeleton.n_samples:
        raise ConfigError("n_points: must be at least skeleton.n_samples")
    for m in cfg.methods:
        if m not in METHODS:
            raise ConfigError(f"methods: unknown method {m!r}")
    if cfg.tau <= 0 or cfg.inlier_threshold <= 0:
        raise ConfigError("tau and inlier_threshold must be positive")
    if cfg.fusion not in FUSION_MODES:
        raise ConfigError(f"fusion: unknown mode {cfg.fusion!r}")


def parse_methods(text: str | None):
    if text is None:
        return None
    methods = tuple(m.strip() for m in text.split(",") if m.strip())
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"methods: unknown method {m!r}")
    return methods


def from_mapping(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    if "schema_version" not in data:
        raise ConfigError("schema_version: missing")
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown config key")
    kw = dict(data)
    for k in ("shapes", "corruptions", "severities", "methods"):
        if k in kw:
            v = kw[k]
            kw[k] = tuple(v) if isinstance(v, (list, tuple)) else (v,)
    if "skeleton" in kw:
        sk = kw["skeleton"] or {}
        bad = sorted(set(sk) - set(SkeletonConfig.__dataclass_fields__))
        if bad:
            raise ConfigError(f"skeleton.{bad[0]}: unknown config key")
        try:
            kw["skeleton"] = SkeletonConfig(**sk)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"skeleton: {exc}") from None
    try:
        return ExperimentConfig(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = json.loads(text) if path.suffix.lower() == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    return from_mapping(data)
