"""Run registration methods over benchmark pairs and aggregate ResultsTable rows.

Per-method records carry three fusion columns with one meaning for every method:
``lambda`` is the weight placed on the raw-cloud estimate, and ``gamma_c`` /
``gamma_s`` are the inlier ratios of the raw-cloud and skeleton branches that feed the
output (0 for a branch the method does not use). ICP and ``raw_soft`` therefore report
``gamma_s = 0, lambda = 1``; ``skeleton_only`` reports ``gamma_c = 0, lambda = 0``.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..geometry import RigidTransform
from ..metrics import ErrorMetrics, transform_errors
from ..registration import estimate_transform, icp_baseline, inlier_ratio, register_srrf
from ..skeleton import SkeletonConfig

log = logging.getLogger(__name__)

CSV_HEADER = ("corruption", "method", "mse_r", "rmse_r", "mae_r", "mse_t", "rmse_t", "mae_t",
              "lambda_mean", "gamma_c_mean", "gamma_s_mean", "trials")
FAILED_SUFFIX = ":failed"


@dataclass(frozen=True)
class RunSettings:
    methods: tuple
    tau: float
    inlier_threshold: float
    fusion: str
    skeleton: SkeletonConfig


def tf_json(tf: RigidTransform) -> dict:
    return {"rotation": [float(v) for v in tf.rotation.ravel()],
            "translation": [float(v) for v in tf.translation]}


def _record(method: str, tf: RigidTransform, gt: RigidTransform, lam: float,
            gamma_c: float, gamma_s: float, flags=()) -> dict:
    rot, trans = transform_errors(tf, gt)
    return {
        "method": method,
        "ok": True,
        "transform": tf_json(tf),
        "rotation_error_deg": [float(v) for v in rot],
        "translation_error": [float(v) for v in trans],
        "lambda": float(lam),
        "gamma_c": float(gamma_c),
        "gamma_s": float(gamma_s),
        "flags": list(flags),
    }


def _failure(method: str, exc: Exception) -> dict:
    return {"method": method, "ok": False, "error": f"{type(exc).__name__}: {exc}"}


def run_methods(X, Y, gt: RigidTransform, settings: RunSettings) -> tuple[list[dict], dict | None]:
    """Run each requested method on one pair; failures are recorded, never raised."""
    records = {}
    report = None
    thr = settings.inlier_threshold
    if "icp" in settings.methods:
        try:
            tf = icp_baseline(X, Y)
            records["icp"] = _record("icp", tf, gt, 1.0, inlier_ratio(X, Y, tf, thr), 0.0)
        except Exception as exc:  # noqa: BLE001 - any failure becomes a failure row
            records["icp"] = _failure("icp", exc)
    needs_srrf = {"skeleton_only", "srrf_fused"} & set(settings.methods)
    if needs_srrf:
        try:
            rep = register_srrf(X, Y, settings.skeleton, settings.tau, thr, fusion=settings.fusion)
            report = rep.to_json()
            if "skeleton_only" in settings.methods:
                records["skeleton_only"] = _record("skeleton_only", rep.tf_skeleton, gt, 0.0, 0.0,
                                                   rep.gamma_s, rep.flags)
            if "srrf_fused" in settings.methods:
                records["srrf_fused"] = _record("srrf_fused", rep.tf_fused, gt, rep.lam, rep.gamma_c,
                                                rep.gamma_s, rep.flags)
            if "raw_soft" in settings.methods:
                records["raw_soft"] = _record("raw_soft", rep.tf_corrupted, gt, 1.0, rep.gamma_c, 0.0)
        except Exception as exc:  # noqa: BLE001
            for m in needs_srrf:
                records[m] = _failure(m, exc)
    if "raw_soft" in settings.methods and "raw_soft" not in records:
        try:
            tf, _ = estimate_transform(X, Y, settings.tau)
            records["raw_soft"] = _record("raw_soft", tf, gt, 1.0, inlier_ratio(X, Y, tf, thr), 0.0)
        except Exception as exc:  # noqa: BLE001
            records["raw_soft"] = _failure("raw_soft", exc)
    return [records[m] for m in settings.methods], report


def map_ordered(fn, items, jobs: int = 1):
    """Apply ``fn`` to every item, in parallel when ``jobs > 1``, preserving input order."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Aggregation and output


def _mean(values) -> float:
    return float(np.mean(values))


def aggregate(results, methods) -> list[dict]:
    """Collapse per-pair records into one row per (corruption, method), plus failure rows.

    ``results`` is a sequence of ``(kind, records)`` in manifest order.
    """
    kinds = list(dict.fromkeys(kind for kind, _ in results))
    rows = []
    for kind in kinds:
        for method in methods:
            recs = [r for k, records in results if k == kind for r in records if r["method"] == method]
            ok = [r for r in recs if r["ok"]]
            failed = len(recs) - len(ok)
            if ok:
                m = ErrorMetrics.from_errors([r["rotation_error_deg"] for r in ok],
                                             [r["translation_error"] for r in ok])
                rows.append({
                    "corruption": kind, "method": method, **m.as_dict(),
                    "lambda_mean": _mean([r["lambda"] for r in ok]),
                    "gamma_c_mean": _mean([r["gamma_c"] for r in ok]),
                    "gamma_s_mean": _mean([r["gamma_s"] for r in ok]),
                    "trials": len(ok),
                })
            if failed:
                rows.append({"corruption": kind, "method": method + FAILED_SUFFIX,
                             **{c: None for c in CSV_HEADER[2:-1]}, "trials": failed})
    return rows


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_table(rows, fmt: str = "csv", header=CSV_HEADER) -> str:
    if fmt == "json":
        return json.dumps([{c: r[c] for c in header} for r in rows], indent=1) + "\n"
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(r[c]) for c in header])
    return buf.getvalue()


def write_table(rows, path, fmt: str = "csv", header=CSV_HEADER) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_table(rows, fmt, header))
    return path


def read_csv_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
