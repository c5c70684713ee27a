"""Subcommand implementations: register, sampling ablation, coupling ablation, inspect."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..corruption import derive_seed
from ..geometry import GeometryError, PointCloud, RigidTransform
from ..io import read_cloud, write_json
from ..metrics import chamfer_distance
from ..registration import estimate_transform, inlier_ratio
from ..sampling import fps_sample, rds_sample
from ..skeleton import extract_skeleton_pair
from .config import ExperimentConfig
from .dataset import entry_gt, entry_kind, iter_pairs, load_pair
from .runner import RunSettings, _failure, _record, aggregate, map_ordered, run_methods, write_table

log = logging.getLogger(__name__)

SAMPLING_ROWS = ("Original", "RDS", "FPS", "SPS")
DDL_ROWS = ("w/o L_d", "w/ L_d")
DDL_HEADER = ("corruption", "setting", "d_cd_mean", "d_cd_min", "d_cd_max", "trials")


def settings_from(cfg: ExperimentConfig, methods=None) -> RunSettings:
    return RunSettings(tuple(methods or cfg.methods), cfg.tau, cfg.inlier_threshold,
                       cfg.fusion, cfg.skeleton)


# ---------------------------------------------------------------------------
# register


def _register_entry(item):
    entry, root, settings = item
    try:
        X, Y = (c.points for c in load_pair(entry, root))
        records, report = run_methods(X, Y, entry_gt(entry), settings)
    except (OSError, GeometryError, ValueError) as exc:
        records, report = [_failure(m, exc) for m in settings.methods], None
    return records, report


def register_manifest(manifest: list[dict], root, settings: RunSettings, out_dir,
                      fmt: str = "csv", jobs: int = 1) -> tuple[list[dict], int]:
    """Run every method on every manifest pair; write per-pair reports and the results table.

    Returns ``(rows, n_failed_records)``.
    """
    out = Path(out_dir)
    reports = out / "reports"
    reports.mkdir(parents=True, exist_ok=True)
    outcomes = map_ordered(_register_entry, [(e, str(root), settings) for e in manifest], jobs)
    results = []
    n_failed = 0
    for i, (entry, (records, report)) in enumerate(zip(manifest, outcomes)):
        kind = entry_kind(entry)
        results.append((kind, records))
        n_failed += sum(not r["ok"] for r in records)
        pid = entry.get("id", f"pair{i:05d}")
        write_json({"id": pid, "kind": kind, "shape": entry["shape"],
                    "gt_rotation": entry["gt_rotation"], "gt_translation": entry["gt_translation"],
                    "methods": records, "srrf_report": report}, reports / f"{pid}.json")
    rows = aggregate(results, settings.methods)
    write_table(rows, out / f"results.{fmt}", fmt)
    return rows, n_failed


# ---------------------------------------------------------------------------
# sampling ablation


def _sampling_pair(item):
    pair, cfg = item
    X, Y = pair.source.points, pair.target.points
    k = cfg.skeleton.n_skeleton
    thr = cfg.inlier_threshold
    records = []

    def run(name, A, B):
        try:
            tf, _ = estimate_transform(A, B, cfg.tau)
            records.append(_record(name, tf, pair.gt, 1.0, inlier_ratio(A, B, tf, thr), 0.0))
        except (GeometryError, ValueError) as exc:
            records.append(_failure(name, exc))
        return records[-1]

    seed = derive_seed(cfg.seed, "sampling", pair.pair_id)
    original = run("Original", X, Y)
    cx, cy = PointCloud(X), PointCloud(Y)
    run("RDS", rds_sample(cx, k, derive_seed(seed, "x")).points, rds_sample(cy, k, derive_seed(seed, "y")).points)
    run("FPS", fps_sample(cx, k, seed=derive_seed(seed, "x")).points,
        fps_sample(cy, k, seed=derive_seed(seed, "y")).points)
    # skeleton points as the simplified cloud, fitted exactly as in the full pipeline
    try:
        if not original["ok"]:
            raise GeometryError("raw-cloud estimate unavailable for the coupling term")
        align = RigidTransform(np.array(original["transform"]["rotation"]).reshape(3, 3),
                               np.array(original["transform"]["translation"]))
        sx, sy, _ = extract_skeleton_pair(X, Y, cfg.skeleton, alignment=align)
        run("SPS", sx.points, sy.points)
    except (GeometryError, ValueError, RuntimeError) as exc:
        records.append(_failure("SPS", exc))
    return pair.kind, records


def ablate_sampling(cfg: ExperimentConfig, out_dir, fmt: str = "csv", jobs: int = 1):
    outcomes = map_ordered(_sampling_pair, [(p, cfg) for p in iter_pairs(cfg)], jobs)
    rows = aggregate(outcomes, SAMPLING_ROWS)
    write_table(rows, Path(out_dir) / f"ablate_sampling.{fmt}", fmt)
    return rows


# ---------------------------------------------------------------------------
# coupling-term ablation


def _ddl_pair(item):
    pair, cfg = item
    X, Y = pair.source.points, pair.target.points
    out = {}
    try:
        align, _ = estimate_transform(X, Y, cfg.tau)
        for name, weight in zip(DDL_ROWS, (0.0, cfg.skeleton.lambda_ddl)):
            skel_cfg = replace(cfg.skeleton, lambda_ddl=weight)
            sx, sy, _ = extract_skeleton_pair(X, Y, skel_cfg, alignment=align)
            out[name] = chamfer_distance(pair.gt.apply(sx.points), sy.points)
    except (GeometryError, ValueError, RuntimeError) as exc:
        log.warning("coupling ablation failed on %s: %s", pair.pair_id, exc)
        return pair.kind, None
    return pair.kind, out


def ablate_ddl(cfg: ExperimentConfig, out_dir, fmt: str = "csv", jobs: int = 1):
    outcomes = map_ordered(_ddl_pair, [(p, cfg) for p in iter_pairs(cfg)], jobs)
    rows = []
    for kind in dict.fromkeys(k for k, _ in outcomes):
        for name in DDL_ROWS:
            vals = [o[name] for k, o in outcomes if k == kind and o is not None]
            if not vals:
                continue
            rows.append({"corruption": kind, "setting": name, "d_cd_mean": float(np.mean(vals)),
                         "d_cd_min": float(np.min(vals)), "d_cd_max": float(np.max(vals)),
                         "trials": len(vals)})
    write_table(rows, Path(out_dir) / f"ablate_ddl.{fmt}", fmt, DDL_HEADER)
    return rows


# ---------------------------------------------------------------------------
# inspect


def inspect_file(path, export=None) -> dict:
    """Summarise a cloud (.ply/.xyz) or skeleton (.json) file; optionally export per-point CSV."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    radii = None
    labels = None
    if path.suffix.lower() == ".json":
        try:
            data = json.loads(path.read_text())
            pts = np.asarray(data["points"], dtype=float)
            radii = np.asarray(data["radii"], dtype=float)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise GeometryError(f"not a skeleton file: {path}: {exc}") from None
        if pts.ndim != 2 or pts.shape[1:] != (3,) or len(radii) != len(pts):
            raise GeometryError(f"malformed skeleton file: {path}")
    else:
        cloud = read_cloud(path)
        pts, labels = cloud.points, cloud.labels
    if len(pts) == 0:
        raise GeometryError(f"empty point set: {path}")
    summary = {
        "file": str(path),
        "count": int(len(pts)),
        "bbox_min": [float(v) for v in pts.min(axis=0)],
        "bbox_max": [float(v) for v in pts.max(axis=0)],
        "centroid": [float(v) for v in pts.mean(axis=0)],
    }
    if labels is not None:
        names, counts = np.unique(labels.astype(str), return_counts=True)
        summary["labels"] = {str(n): int(c) for n, c in zip(names, counts)}
    if radii is not None:
        summary["radii"] = {"min": float(radii.min()), "mean": float(radii.mean()), "max": float(radii.max())}
    if export is not None:
        with open(export, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            cols = ["x", "y", "z"] + (["label"] if labels is not None else []) + (["radius"] if radii is not None else [])
            w.writerow(cols)
            for i, p in enumerate(pts):
                row = [repr(float(v)) for v in p]
                if labels is not None:
                    row.append(str(labels[i]))
                if radii is not None:
                    row.append(repr(float(radii[i])))
                w.writerow(row)
    return summary


def format_summary(summary: dict) -> str:
    lines = [f"file      {summary['file']}", f"count     {summary['count']}",
             "bbox      [" + ", ".join(f"{v:.6g}" for v in summary["bbox_min"]) + "] .. ["
             + ", ".join(f"{v:.6g}" for v in summary["bbox_max"]) + "]",
             "centroid  [" + ", ".join(f"{v:.6g}" for v in summary["centroid"]) + "]"]
    if "labels" in summary:
        lines.append("labels    " + ", ".join(f"{k}={v}" for k, v in summary["labels"].items()))
    if "radii" in summary:
        r = summary["radii"]
        lines.append(f"radii     min={r['min']:.6g} mean={r['mean']:.6g} max={r['max']:.6g}")
    return "\n".join(lines)
