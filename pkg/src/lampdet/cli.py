"""Command line interface.

Subcommands:
  synth      render a synthetic dataset from scene + trajectory files
  detect     run the detection pipeline over a dataset, write detections.jsonl
  eval       cluster a detection log and write report.json + CSV tables
  all-modes  run detect + eval for the three system variants and a summary

Exit codes: 0 success, 2 ingest errors (missing/unreadable inputs),
3 validation failures (bad schemas/config/empty results).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import DEFAULT_CONFIG_TOML, Mode, PipelineConfig, load_config
from .errors import IngestError, InvalidPath, LampDetError, MissingFile, SchemaError
from .pipeline import run_detect, run_eval
from .pose import load_models

EXIT_OK = 0
EXIT_INGEST = 2
EXIT_VALIDATION = 3


def _load_cfg(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    return cfg.with_overrides(
        mode=getattr(args, "mode", None),
        seed=getattr(args, "seed", None),
        workers=getattr(args, "workers", None),
        images=getattr(args, "images", None),
        models=getattr(args, "models", None),
        building=getattr(args, "building", None),
        references=getattr(args, "references", None),
    )


def cmd_synth(args) -> int:
    from .bim import building_to_json
    from .synth import (
        references_from_scene, scene_from_json, trajectory_from_json, write_dataset)

    scene = scene_from_json(json.loads(Path(args.scene).read_text()))
    if args.seed is not None:
        from dataclasses import replace
        scene = replace(scene, seed=int(args.seed))
    trajectory = trajectory_from_json(json.loads(Path(args.trajectory).read_text()))
    models = {m.id: m for m in load_models(args.models)}
    missing = {l.model_id for l in scene.lamps} - set(models)
    if missing:
        raise SchemaError(f"scene references unknown models: {sorted(missing)}")

    out = Path(args.out_dir)
    doc = write_dataset(out, scene, trajectory, models)
    (out / "references.json").write_text(
        json.dumps(references_from_scene(scene, models), sort_keys=True, indent=2))
    (out / "building.json").write_text(
        json.dumps(building_to_json(scene.building), sort_keys=True, indent=2))
    print(f"wrote {len(doc['frames'])} frames to {out}")
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = _load_cfg(args)
    out_dir = Path(args.out_dir)
    log_path = run_detect(cfg, out_dir / "detections.jsonl")
    print(f"wrote {log_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    report = run_eval(cfg, args.log, args.out_dir)
    print(json.dumps(report, sort_keys=True, indent=2))
    return EXIT_OK


def cmd_all_modes(args) -> int:
    cfg = _load_cfg(args)
    out_root = Path(args.out_dir)
    rows = []
    for mode in Mode:
        mode_cfg = cfg.with_overrides(mode=mode)
        mode_dir = out_root / mode.value
        log = run_detect(mode_cfg, mode_dir / "detections.jsonl")
        report = run_eval(mode_cfg, log, mode_dir)
        rows.append((mode.value, report))
        print(f"{mode.value}: {report['surviving_detections']} surviving detections")
    lines = ["mode,detections,survivors,clusters,mean_distance_cm,"
             "model_error_rate,state_error_rate"]
    for mode_name, r in rows:
        lines.append(
            f"{mode_name},{r['total_detections']},{r['surviving_detections']},"
            f"{r['n_clusters']},{_fmt(r.get('mean_distance_cm'))},"
            f"{_fmt(r.get('model_error_rate'))},{_fmt(r.get('state_error_rate'))}")
    (out_root / "modes_summary.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote {out_root / 'modes_summary.csv'}")
    return EXIT_OK


def _fmt(v) -> str:
    return "" if v is None else f"{v:.6f}"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="lampdet",
        description="Detect, identify and localize lamps in image sequences "
                    "with known camera poses.")
    p.add_argument("--print-default-config", action="store_true",
                   help="print the default TOML configuration and exit")
    sub = p.add_subparsers(dest="command")

    sp = sub.add_parser("synth", help="render a synthetic dataset")
    sp.add_argument("--scene", required=True, help="scene.json")
    sp.add_argument("--trajectory", required=True, help="trajectory.json")
    sp.add_argument("--models", required=True, help="models.json")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--seed", type=int, default=None,
                    help="override the scene seed")
    sp.set_defaults(func=cmd_synth)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="TOML configuration file")
    common.add_argument("--mode", choices=[m.value for m in Mode], default=None)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--workers", type=int, default=None)
    common.add_argument("--models", default=None, help="models.json")
    common.add_argument("--building", default=None, help="building.json")
    common.add_argument("--references", default=None, help="references.json")

    dp = sub.add_parser("detect", parents=[common], help="run the pipeline")
    dp.add_argument("--images", required=True,
                    help="dataset directory (NNNNNN.pgm + poses.json)")
    dp.add_argument("--out-dir", required=True)
    dp.set_defaults(func=cmd_detect)

    ep = sub.add_parser("eval", parents=[common], help="evaluate a detection log")
    ep.add_argument("--log", required=True, help="detections.jsonl")
    ep.add_argument("--out-dir", required=True)
    ep.set_defaults(func=cmd_eval)

    ap = sub.add_parser("all-modes", parents=[common],
                        help="run the three system variants and compare")
    ap.add_argument("--images", required=True)
    ap.add_argument("--out-dir", required=True)
    ap.set_defaults(func=cmd_all_modes)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_default_config:
        print(DEFAULT_CONFIG_TOML, end="")
        return EXIT_OK
    if not getattr(args, "command", None):
        parser.print_help()
        return EXIT_VALIDATION
    try:
        return args.func(args)
    except (MissingFile, IngestError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INGEST
    except (SchemaError, InvalidPath, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except LampDetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
