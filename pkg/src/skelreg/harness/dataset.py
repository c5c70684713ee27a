"""Benchmark pair generation and manifest persistence."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..corruption import CorruptionSpec, corrupt, derive_seed
from ..geometry import PointCloud, RigidTransform, apply_transform, normalize_cloud, random_rigid_transform
from ..io import read_cloud, write_cloud
from ..shapes import SHAPES, make_shape
from .config import CLEAN, ExperimentConfig


@dataclass(frozen=True)
class BenchmarkPair:
    pair_id: str
    shape: str
    kind: str
    severity: int
    trial: int
    source: PointCloud
    target: PointCloud
    gt: RigidTransform
    corruption: tuple

    def manifest_entry(self, source_file: str, target_file: str) -> dict:
        return {
            "id": self.pair_id,
            "shape": self.shape,
            "kind": self.kind,
            "severity": self.severity,
            "trial": self.trial,
            "source_file": source_file,
            "target_file": target_file,
            "gt_rotation": [float(v) for v in self.gt.rotation.ravel()],
            "gt_translation": [float(v) for v in self.gt.translation],
            "corruption": [None if c is None else c.as_dict() for c in self.corruption],
        }


def shape_label(shape: str) -> str:
    return shape if shape in SHAPES else Path(shape).stem


def clean_shape(cfg: ExperimentConfig, shape: str, trial: int) -> PointCloud:
    if shape in SHAPES:
        return make_shape(shape, cfg.n_points, seed=derive_seed(cfg.seed, "shape", shape, trial))
    cloud, _ = normalize_cloud(PointCloud.clean(read_cloud(shape).points))
    return cloud


def iter_pairs(cfg: ExperimentConfig):
    """Yield every benchmark pair in a fixed (shape, kind, severity, trial) order."""
    for shape in cfg.shapes:
        label = shape_label(shape)
        for kind in cfg.corruptions:
            severities = (0,) if kind == CLEAN else cfg.severities
            for sev in severities:
                for trial in range(cfg.trials):
                    base = clean_shape(cfg, shape, trial)
                    rng = np.random.default_rng(derive_seed(cfg.seed, "gt", label, kind, sev, trial))
                    gt = random_rigid_transform(rng, cfg.max_rotation_deg, cfg.max_translation)
                    moved = apply_transform(base, gt)
                    if kind == CLEAN:
                        specs = (None, None)
                        src, tgt = base, moved
                    else:
                        specs = tuple(
                            CorruptionSpec(kind, sev, derive_seed(cfg.seed, "corrupt", label, kind, sev, trial, side))
                            for side in ("source", "target")
                        )
                        src, tgt = corrupt(base, specs[0]), corrupt(moved, specs[1])
                    pid = f"{label}-{kind}-s{sev}-t{trial:03d}"
                    yield BenchmarkPair(pid, label, kind, sev, trial, src, tgt, gt, specs)


def generate(cfg: ExperimentConfig, out_dir) -> list[dict]:
    """Write every pair's clouds as PLY plus ``manifest.json``; return the manifest."""
    out = Path(out_dir)
    clouds = out / "clouds"
    try:
        clouds.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from None
    manifest = []
    for pair in iter_pairs(cfg):
        src_name = f"clouds/{pair.pair_id}-source.ply"
        tgt_name = f"clouds/{pair.pair_id}-target.ply"
        write_cloud(pair.source, out / src_name)
        write_cloud(pair.target, out / tgt_name)
        manifest.append(pair.manifest_entry(src_name, tgt_name))
    save_manifest(manifest, out / "manifest.json")
    return manifest


def save_manifest(manifest: list[dict], path) -> None:
    Path(path).write_text(json.dumps(manifest, indent=1) + "\n")


class ManifestError(ValueError):
    pass


_REQUIRED = ("source_file", "target_file", "gt_rotation", "gt_translation", "corruption", "shape")


def load_manifest(path) -> list[dict]:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from None
    if not isinstance(data, list):
        raise ManifestError("manifest must be a JSON array")
    for i, entry in enumerate(data):
        missing = [k for k in _REQUIRED if k not in entry]
        if missing:
            raise ManifestError(f"manifest entry {i}: missing {missing[0]!r}")
        if len(entry["gt_rotation"]) != 9 or len(entry["gt_translation"]) != 3:
            raise ManifestError(f"manifest entry {i}: malformed ground truth")
    return data


def entry_kind(entry: dict) -> str:
    if "kind" in entry:
        return entry["kind"]
    spec = entry["corruption"][0] if entry["corruption"] else None
    return CLEAN if spec is None else spec["kind"]


def entry_gt(entry: dict) -> RigidTransform:
    return RigidTransform(np.array(entry["gt_rotation"], dtype=float).reshape(3, 3),
                          np.array(entry["gt_translation"], dtype=float))


def load_pair(entry: dict, root) -> tuple[PointCloud, PointCloud]:
    root = Path(root)
    return read_cloud(root / entry["source_file"]), read_cloud(root / entry["target_file"])
