"""Readers and writers for XYZ text and ASCII PLY point clouds, and skeleton JSON."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .geometry import LABEL_ADDED, LABEL_CLEAN, LABEL_PERTURBED, GeometryError, PointCloud

LABEL_CODES = {LABEL_CLEAN: 0, LABEL_ADDED: 1, LABEL_PERTURBED: 2}
LABEL_NAMES = {v: k for k, v in LABEL_CODES.items()}


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def read_xyz(path) -> PointCloud:
    rows = []
    labels = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 3:
            raise GeometryError(f"{path}:{lineno}: expected 'x y z'")
        try:
            rows.append([float(v) for v in parts[:3]])
        except ValueError as exc:
            raise GeometryError(f"{path}:{lineno}: {exc}") from None
        labels.append(parts[3] if len(parts) > 3 else None)
    if not rows:
        raise GeometryError(f"{path}: no points")
    pts = np.array(rows, dtype=float)
    if all(lab is not None for lab in labels):
        return PointCloud(pts, np.array(labels, dtype=object))
    return PointCloud(pts)


def write_xyz(cloud: PointCloud, path, with_labels: bool = False) -> None:
    lines = []
    for i, p in enumerate(cloud.points):
        row = " ".join(_fmt(v) for v in p)
        if with_labels and cloud.labels is not None:
            row += f" {cloud.labels[i]}"
        lines.append(row)
    Path(path).write_text("\n".join(lines) + "\n")


def read_ply(path) -> PointCloud:
    """ASCII PLY; reads x, y, z and an optional integer ``label`` vertex property."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise GeometryError(f"{path}: not a PLY file")
    n_vertex = None
    props: list[str] = []
    in_vertex = False
    body_start = None
    for i, line in enumerate(lines[1:], 1):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format" and tok[1] != "ascii":
            raise GeometryError(f"{path}: only ASCII PLY is supported")
        if tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                n_vertex = int(tok[2])
        elif tok[0] == "property" and in_vertex:
            props.append(tok[-1])
        elif tok[0] == "end_header":
            body_start = i + 1
            break
    if n_vertex is None or body_start is None:
        raise GeometryError(f"{path}: malformed PLY header")
    try:
        ix, iy, iz = props.index("x"), props.index("y"), props.index("z")
    except ValueError:
        raise GeometryError(f"{path}: vertex element lacks x, y, z") from None
    body = lines[body_start:body_start + n_vertex]
    if len(body) < n_vertex:
        raise GeometryError(f"{path}: expected {n_vertex} vertices, found {len(body)}")
    data = np.array([[float(v) for v in row.split()[:len(props)]] for row in body], dtype=float)
    pts = data[:, [ix, iy, iz]]
    if "label" in props:
        codes = data[:, props.index("label")].astype(int)
        return PointCloud(pts, np.array([LABEL_NAMES.get(c, str(c)) for c in codes], dtype=object))
    return PointCloud(pts)


def write_ply(cloud: PointCloud, path) -> None:
    has_labels = cloud.labels is not None
    header = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}",
              "property float x", "property float y", "property float z"]
    if has_labels:
        header.append("property uchar label")
    header.append("end_header")
    rows = []
    for i, p in enumerate(cloud.points):
        row = " ".join(_fmt(v) for v in p)
        if has_labels:
            row += f" {LABEL_CODES.get(str(cloud.labels[i]), 255)}"
        rows.append(row)
    Path(path).write_text("\n".join(header + rows) + "\n")


def read_cloud(path) -> PointCloud:
    suffix = Path(path).suffix.lower()
    if suffix == ".ply":
        return read_ply(path)
    if suffix in (".xyz", ".txt", ".pts"):
        return read_xyz(path)
    raise GeometryError(f"unsupported point cloud format: {path}")


def write_cloud(cloud: PointCloud, path) -> None:
    if Path(path).suffix.lower() == ".ply":
        write_ply(cloud, path)
    else:
        write_xyz(cloud, path)


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n")


TRACE_COLUMNS = ("step", "L_s", "L_p", "L_r", "L_ddl", "total")


def write_trace_csv(trace, path) -> None:
    """Per-step loss trace (list of dicts) as CSV with a fixed column order."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for row in trace:
            w.writerow([int(row["step"])] + [repr(float(row[c])) for c in TRACE_COLUMNS[1:]])


def read_trace_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k == "step" else float(v)) for k, v in r.items()} for r in rows]
