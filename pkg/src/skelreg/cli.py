"""Command-line benchmark harness.

Exit codes: 0 success, 1 at least one pair failed (results still written),
2 invalid input (config, manifest, missing or unreadable files).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .geometry import GeometryError
from .harness.config import ConfigError, ExperimentConfig, load_config, parse_methods
from .harness.dataset import ManifestError, generate, load_manifest
from .harness.experiments import (
    ablate_ddl,
    ablate_sampling,
    format_summary,
    inspect_file,
    register_manifest,
    settings_from,
)

log = logging.getLogger("skelreg")


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    return cfg.with_overrides(seed=getattr(args, "seed", None), out=getattr(args, "out", None))


def cmd_generate(args) -> int:
    cfg = _load(args)
    manifest = generate(cfg, cfg.out)
    print(f"wrote {len(manifest)} pairs ({2 * len(manifest)} clouds) to {Path(cfg.out) / 'manifest.json'}")
    return 0


def cmd_register(args) -> int:
    cfg = _load(args)
    methods = parse_methods(args.methods) or cfg.methods
    manifest = load_manifest(args.manifest)
    root = Path(args.manifest).parent
    for entry in manifest:
        for key in ("source_file", "target_file"):
            if not (root / entry[key]).is_file():
                raise ManifestError(f"missing cloud file {root / entry[key]}")
    out = Path(args.out or cfg.out)
    rows, failed = register_manifest(manifest, root, settings_from(cfg, methods), out, args.format, args.jobs)
    print(f"wrote {len(rows)} rows to {out / ('results.' + args.format)}")
    if failed:
        print(f"{failed} method runs failed; see failure rows and per-pair reports", file=sys.stderr)
        return 1
    return 0


def cmd_ablate_sampling(args) -> int:
    cfg = _load(args)
    rows = ablate_sampling(cfg, cfg.out, args.format, args.jobs)
    print(f"wrote {len(rows)} rows to {Path(cfg.out) / ('ablate_sampling.' + args.format)}")
    return 1 if any(r["method"].endswith(":failed") for r in rows) else 0


def cmd_ablate_ddl(args) -> int:
    cfg = _load(args)
    rows = ablate_ddl(cfg, cfg.out, args.format, args.jobs)
    print(f"wrote {len(rows)} rows to {Path(cfg.out) / ('ablate_ddl.' + args.format)}")
    n_pairs = len(cfg.shapes) * cfg.trials * sum(1 if k == "clean" else len(cfg.severities) for k in cfg.corruptions)
    complete = sum(r["trials"] for r in rows) == 2 * n_pairs
    return 0 if complete else 1


def cmd_inspect(args) -> int:
    summary = inspect_file(args.path, args.export)
    print(json.dumps(summary, indent=1) if args.format == "json" else format_summary(summary))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="skelreg", description="Skeleton-assisted robust registration benchmark harness")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, *, seed=True, jobs=True):
        sp.add_argument("--config", help="YAML or JSON experiment config")
        sp.add_argument("--out", help="output directory (overrides the config)")
        if seed:
            sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        if jobs:
            sp.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
        sp.add_argument("--format", choices=("csv", "json"), default="csv")

    g = sub.add_parser("generate", help="write corrupted benchmark pairs and a manifest")
    common(g, jobs=False)
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("register", help="run registration methods over a manifest")
    common(r, seed=False)
    r.add_argument("--manifest", required=True)
    r.add_argument("--methods", help="comma-separated subset of icp,raw_soft,skeleton_only,srrf_fused")
    r.set_defaults(func=cmd_register)

    s = sub.add_parser("ablate-sampling", help="Original / RDS / FPS / SPS simplification table")
    common(s)
    s.set_defaults(func=cmd_ablate_sampling)

    d = sub.add_parser("ablate-ddl", help="skeleton chamfer distance with and without the coupling term")
    common(d)
    d.set_defaults(func=cmd_ablate_ddl)

    i = sub.add_parser("inspect", help="summarise a cloud or skeleton file")
    i.add_argument("path")
    i.add_argument("--export", help="write per-point CSV for plotting")
    i.add_argument("--format", choices=("text", "json"), default="text")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ManifestError, GeometryError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
