"""End-to-end detection and evaluation runs.

``run_detect`` walks a rendered dataset (PGM frames + poses.json), applies
the configured pipeline per frame and writes an append-only JSONL log: one
meta line, one line per frame summary, one line per detection, and a final
solver-statistics line.  ``run_eval`` clusters the surviving detections and
writes the report and CSV tables.
"""

from __future__ import annotations

import json
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import chamfer as cf
from . import cluster as cl
from . import filtering as flt
from . import pose as ps
from . import shapes as sh
from .bim import BuildingModel, MountingKind, load_building, reference_plane
from .config import Mode, PipelineConfig
from .errors import (
    DegenerateConfiguration,
    EstimationFailed,
    IngestError,
    LampDetError,
    NonFiniteResidual,
    NoValidPose,
    NoVisibleTemplate,
    RaysParallelToPlane,
    ShapeModelMismatch,
    StateUndetermined,
    TooManyDegeneratePoints,
)
from .geom import CameraIntrinsics, Plane, RigidTransform, pixel_to_ray, z_axis_angle
from .pgm import read_pgm
from .synth import camera_from_json, transform_from_json


@dataclass(frozen=True)
class DetectContext:
    camera: CameraIntrinsics
    models: list
    building: BuildingModel
    config: PipelineConfig

    @property
    def models_by_id(self) -> dict:
        return {m.id: m for m in self.models}


def _shape_centroid(shape: sh.ShapeObservation) -> np.ndarray:
    if shape.kind is sh.ShapeKind.POLYGONAL:
        return shape.polygon.mean(axis=0)
    return shape.ellipse.center


def _provisional_plane(shape: sh.ShapeObservation, mounting: MountingKind,
                       ctx: DetectContext, view: RigidTransform) -> Optional[Plane]:
    """Reference plane for a shape before its pose is known.

    Casts the ray through the shape centroid against each candidate mounting
    plane and queries the building at the nearest hit.
    """
    cam_pos = view.inverse().translation
    d = view.rotation.T @ pixel_to_ray(ctx.camera, _shape_centroid(shape))
    best_pos = None
    best_t = np.inf
    if ctx.building.ceilings:
        for surf in ctx.building.ceilings:
            if mounting.kind == MountingKind.EMBEDDED:
                plane = surf.plane()
            else:
                z = float(surf.polygon[0][2]) - mounting.offset
                plane = Plane(point=[0.0, 0.0, z], normal=[0.0, 0.0, 1.0])
            denom = float(plane.normal @ d)
            if abs(denom) < 1e-9:
                continue
            t = float(plane.normal @ (plane.point - cam_pos)) / denom
            if 0.1 < t < best_t:
                best_t = t
                best_pos = cam_pos + t * d
    elif mounting.kind == MountingKind.HANGING:
        plane = Plane(point=[0.0, 0.0, 0.0], normal=[0.0, 0.0, 1.0])
        denom = float(plane.normal @ d)
        if abs(denom) > 1e-9:
            t = -float(plane.normal @ cam_pos) / denom
            if t > 0.1:
                best_pos = cam_pos + t * d
    if best_pos is None:
        return None
    try:
        return reference_plane(ctx.building, best_pos, mounting)
    except LampDetError:
        return None


def _estimate_candidates(shapes, ctx: DetectContext, view: RigidTransform,
                         constrained: bool, stats: Counter):
    """(shape_index, candidate) pairs for every compatible shape/model pair."""
    out = []
    for s_idx, shape in enumerate(shapes):
        for model in ctx.models:
            if shape.kind is not model.face_kind:
                continue
            if (shape.kind is sh.ShapeKind.POLYGONAL
                    and len(shape.polygon) != len(model.face_vertices)):
                continue
            plane = _provisional_plane(shape, model.mounting, ctx, view)
            if plane is None:
                stats["no_reference_plane"] += 1
                continue
            try:
                if shape.kind is sh.ShapeKind.POLYGONAL:
                    cand = ps.estimate_polygonal_constrained(
                        shape, model, ctx.camera, view, plane, constrained=constrained)
                else:
                    cand = ps.estimate_circular_constrained(
                        shape.contour.points, model, ctx.camera, view, plane,
                        constrained=constrained, shape=shape)
            except (DegenerateConfiguration, NoValidPose, ShapeModelMismatch,
                    RaysParallelToPlane, EstimationFailed, NonFiniteResidual):
                stats["estimation_failed"] += 1
                continue
            out.append((s_idx, cand))
    return out


def _candidate_roi_union(candidates, ctx: DetectContext):
    cfg = ctx.config.chamfer
    x0 = y0 = np.inf
    x1 = y1 = -np.inf
    for _, cand in candidates:
        pts = cand.shape.contour.points
        r = cf.dilated_roi((pts[:, 0].min(), pts[:, 1].min(),
                            pts[:, 0].max(), pts[:, 1].max()),
                           ctx.camera.width, ctx.camera.height, cfg.roi_dilation)
        x0, y0 = min(x0, r[0]), min(y0, r[1])
        x1, y1 = max(x1, r[2]), max(y1, r[3])
    m = cfg.roi_margin_px
    x0 = int(max(x0 - m, 0))
    y0 = int(max(y0 - m, 0))
    x1 = int(min(x1 + m, ctx.camera.width - 1))
    y1 = int(min(y1 + m, ctx.camera.height - 1))
    return x0, y0, x1, y1


def _reprojection_stats(detection_model: ps.LampModel, cand: ps.PoseCandidate,
                        refined: RigidTransform, ctx: DetectContext,
                        view: RigidTransform) -> Optional[flt.ReprojectionStats]:
    shape = cand.shape
    try:
        if shape.kind is sh.ShapeKind.POLYGONAL:
            if (detection_model.face_kind is not sh.ShapeKind.POLYGONAL
                    or cand.correspondences is None
                    or detection_model.id != cand.model_id):
                return None
            return flt.reprojection_error_polygon(
                refined, cand.correspondences, ctx.camera, view, shape.area)
        if detection_model.face_kind is not sh.ShapeKind.CIRCULAR:
            return None
        return flt.reprojection_error_circle(
            refined, shape.contour.points, ctx.camera, view,
            detection_model.radius, shape.area)
    except (LampDetError, ValueError):
        return None


def detect_frame(ctx: DetectContext, frame_index: int, image: sh.GrayImage,
                 view: RigidTransform):
    """All pipeline stages for one frame; returns (records, stats, solver_counts)."""
    cfg = ctx.config
    constrained = cfg.mode.uses_alignment
    stats: Counter = Counter()
    solver_counts: Counter = Counter()

    shapes = sh.extract_shapes(
        image, cfg.shapes.intensity_threshold, cfg.shapes.min_area,
        cfg.shapes.simplify_eps, cfg.shapes.shape_threshold,
        cfg.shapes.smooth_window, cfg.shapes.classify_eps)
    stats["shapes"] = len(shapes)

    candidates = _estimate_candidates(shapes, ctx, view, constrained, stats)
    stats["candidates"] = len(candidates)
    for _, cand in candidates:
        for res in cand.solves:
            solver_counts[f"{res.tag}|{res.n_free}"] += 1

    limits = ps.CandidateLimits(
        max_tilt_rad=cfg.max_tilt_rad,
        height_band_m=cfg.candidates.height_band_m,
        size_ratio_min=cfg.candidates.size_ratio_min,
        size_ratio_max=cfg.candidates.size_ratio_max)
    kept = [(s, c) for s, c in candidates
            if ps.prefilter_candidates([c], ctx.models_by_id, ctx.camera, view,
                                       limits)]
    stats["kept_after_prefilter"] = len(kept)
    if not kept:
        return [], stats, solver_counts

    roi = _candidate_roi_union(kept, ctx)
    edges = cf.detect_edges(image, cfg.chamfer.grad_threshold,
                            cfg.chamfer.smooth_sigma)
    field = cf.build_ddf(edges, cfg.chamfer.q, cfg.chamfer.lambda_px_per_rad,
                         width=roi[2] - roi[0] + 1, height=roi[3] - roi[1] + 1,
                         origin=(roi[0], roi[1]))

    best_per_shape: dict = {}
    for s_idx, cand in kept:
        try:
            model_id, _ = cf.select_model(cand, ctx.models, field, ctx.camera, view,
                                          cfg.chamfer.roi_dilation)
        except (NoVisibleTemplate, ValueError):
            stats["model_selection_failed"] += 1
            continue
        model = ctx.models_by_id[model_id]
        depth = float(view.apply(cand.pose.M.translation)[2])
        step = cf.template_step_for_depth(ctx.camera, max(depth, 0.1),
                                          cfg.chamfer.max_step_px)
        template = cf.sample_template(model.edge_template, step)
        try:
            refined, score, res = cf.refine_d2co(
                cand.pose.M, template, field, ctx.camera, view, cand.alignment,
                constrained=constrained)
        except (NonFiniteResidual, NoVisibleTemplate):
            stats["refinement_failed"] += 1
            continue
        solver_counts[f"{res.tag}|{res.n_free}"] += 1
        prev = best_per_shape.get(s_idx)
        if prev is None or score < prev[2]:
            best_per_shape[s_idx] = (cand, refined, score, model)

    records = []
    for s_idx in sorted(best_per_shape):
        cand, refined, score, model = best_per_shape[s_idx]
        stats_r = _reprojection_stats(model, cand, refined, ctx, view)
        eps = stats_r.eps if stats_r is not None else None
        try:
            state = flt.classify_state(image, refined, model, ctx.camera, view,
                                       cfg.state.on_threshold)
        except StateUndetermined:
            state = None
        survived_score = score <= cfg.chamfer.score_threshold
        if cfg.mode.uses_reprojection_filter:
            thr = (cfg.reprojection.threshold_polygonal
                   if cand.shape.kind is sh.ShapeKind.POLYGONAL
                   else cfg.reprojection.threshold_circular)
            survived_reproj = eps is not None and eps <= thr
        else:
            survived_reproj = None
        survived = bool(survived_score and state is not None
                        and (survived_reproj is None or survived_reproj))
        records.append({
            "type": "detection",
            "id": f"{frame_index:06d}:{s_idx:02d}",
            "frame": frame_index,
            "shape_index": s_idx,
            "shape_kind": cand.shape.kind.value,
            "shape_area": cand.shape.area,
            "model": model.id,
            "state": state.value if state is not None else None,
            "chamfer_score": score,
            "reprojection_error": eps,
            "position": refined.translation.tolist(),
            "rotation": refined.rotation.tolist(),
            "tilt_before_deg": float(np.rad2deg(cand.tilt_before_projection)),
            "plane_normal": cand.plane.normal.tolist(),
            "z_axis_angle_to_plane": z_axis_angle(refined, cand.plane.normal),
            "survived_score": survived_score,
            "survived_reprojection": survived_reproj,
            "survived": survived,
        })
    return records, stats, solver_counts


# ---------------------------------------------------------------------------
# dataset walking
# ---------------------------------------------------------------------------

def load_dataset(images_dir) -> tuple[CameraIntrinsics, list]:
    """poses.json + frame files; returns (camera, [(index, path, view), ...])."""
    images_dir = Path(images_dir)
    poses_path = images_dir / "poses.json"
    if not poses_path.exists():
        raise IngestError(f"poses.json not found in {images_dir}")
    doc = json.loads(poses_path.read_text())
    camera = camera_from_json(doc["camera"])
    frames = []
    for i, fr in enumerate(doc["frames"]):
        frames.append((i, images_dir / fr["file"], transform_from_json(fr["view"])))
    return camera, frames


_WORKER_CTX: Optional[DetectContext] = None


def _worker_init(images_dir, models_path, building_path, config_dict):
    global _WORKER_CTX
    from .config import config_from_dict
    cfg = config_from_dict(config_dict)
    camera, _ = load_dataset(images_dir)
    _WORKER_CTX = DetectContext(camera=camera, models=ps.load_models(models_path),
                                building=load_building(building_path), config=cfg)


def _worker_run(args):
    index, path_str, view_doc = args
    try:
        image = sh.GrayImage.from_array(read_pgm(path_str))
    except (OSError, IngestError):
        return index, None, {}, {}
    view = transform_from_json(view_doc)
    records, stats, solver = detect_frame(_WORKER_CTX, index, image, view)
    return index, records, dict(stats), dict(solver)


def run_detect(config: PipelineConfig, out_path) -> Path:
    """Run detection over the configured dataset and write the JSONL log."""
    paths = config.paths
    if not paths.images or not paths.models or not paths.building:
        raise IngestError("images, models and building paths are required")
    camera, frames = load_dataset(paths.images)
    models = ps.load_models(paths.models)
    building = load_building(paths.building)
    ctx = DetectContext(camera=camera, models=models, building=building, config=config)

    results = []
    unreadable = 0
    if config.workers > 1:
        jobs = [(index, str(path),
                 {"rotation": view.rotation.tolist(),
                  "translation": view.translation.tolist()})
                for index, path, view in frames]
        config_doc = _config_to_toml_dict(config)
        with ProcessPoolExecutor(
                max_workers=config.workers, initializer=_worker_init,
                initargs=(paths.images, paths.models, paths.building,
                          config_doc)) as pool:
            for index, records, stats, solver in pool.map(_worker_run, jobs):
                if records is None:
                    unreadable += 1
                results.append((index, records, Counter(stats), Counter(solver)))
    else:
        for index, path, view in frames:
            try:
                image = sh.GrayImage.from_array(read_pgm(path))
            except (OSError, IngestError):
                unreadable += 1
                results.append((index, None, Counter(), Counter()))
                continue
            records, stats, solver = detect_frame(ctx, index, image, view)
            results.append((index, records, stats, solver))

    if frames and unreadable > 0.5 * len(frames):
        raise IngestError(f"{unreadable}/{len(frames)} frames unreadable")

    results.sort(key=lambda r: r[0])
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    solver_total: Counter = Counter()
    with open(out_path, "w") as f:
        meta = {"type": "meta", "mode": config.mode.value, "seed": config.seed,
                "n_frames": len(frames), "config": config.to_dict()}
        f.write(json.dumps(meta, sort_keys=True) + "\n")
        for index, records, stats, solver in results:
            solver_total.update(solver)
            if records is None:
                f.write(json.dumps({"type": "frame", "frame": index,
                                    "unreadable": True}, sort_keys=True) + "\n")
                continue
            frame_line = {"type": "frame", "frame": index}
            frame_line.update({k: int(v) for k, v in sorted(stats.items())})
            f.write(json.dumps(frame_line, sort_keys=True) + "\n")
            for rec in records:
                f.write(json.dumps(rec, sort_keys=True) + "\n")
        f.write(json.dumps({"type": "solver_stats",
                            "counts": dict(sorted(solver_total.items()))},
                           sort_keys=True) + "\n")
    return out_path


def _config_to_toml_dict(config: PipelineConfig) -> dict:
    d = config.to_dict()
    run = {"mode": d.pop("mode"), "seed": d.pop("seed"), "workers": d.pop("workers")}
    d["run"] = run
    return d


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def read_log(log_path) -> tuple[dict, list]:
    """(meta, detection records) from a JSONL detection log."""
    log_path = Path(log_path)
    if not log_path.exists():
        raise IngestError(f"log not found: {log_path}")
    meta = {}
    detections = []
    with open(log_path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec.get("type") == "meta":
                meta = rec
            elif rec.get("type") == "detection":
                detections.append(rec)
    return meta, detections


def _detection_from_record(rec: dict) -> flt.Detection:
    pose = ps.ObjectPose.from_transform(RigidTransform(
        np.asarray(rec["rotation"], dtype=float),
        np.asarray(rec["position"], dtype=float)))
    return flt.Detection(
        frame=int(rec["frame"]), model_id=rec["model"], pose=pose,
        state=flt.LampState(rec["state"]) if rec.get("state") else None,
        chamfer_score=float(rec["chamfer_score"]),
        reprojection_error=rec.get("reprojection_error"),
        shape_area=float(rec.get("shape_area", 1.0)),
        shape_kind=sh.ShapeKind(rec["shape_kind"]),
        detection_id=rec["id"])


def run_eval(config: PipelineConfig, log_path, out_dir) -> dict:
    """Cluster log survivors, evaluate against references, write reports."""
    meta, det_records = read_log(log_path)
    if not det_records:
        raise ValueError("detection log contains no detections")
    survivors = [r for r in det_records if r.get("survived")]
    detections = [_detection_from_record(r) for r in survivors]

    model_order = None
    if config.paths.models:
        model_order = [m.id for m in ps.load_models(config.paths.models)]

    clusters = cl.cluster_detections(detections, config.cluster.radius_m)
    for c in clusters:
        cl.decide_cluster(c, model_order)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    report: dict = {
        "mode": meta.get("mode"),
        "total_detections": len(det_records),
        "surviving_detections": len(survivors),
        "n_clusters": len(clusters),
    }
    member_counts = [len(c.members) for c in clusters]
    if member_counts:
        report["members"] = {"min": int(min(member_counts)),
                             "mean": float(np.mean(member_counts)),
                             "max": int(max(member_counts))}

    if config.paths.references:
        refs = cl.load_references(config.paths.references)
        ev = cl.evaluate(clusters, refs, config.cluster.match_radius_m)
        matched = ev.model_confusion.sum()
        model_err = (float(matched - np.trace(ev.model_confusion)) / matched
                     if matched else None)
        state_err = (float(ev.state_confusion.sum() - np.trace(ev.state_confusion))
                     / ev.state_confusion.sum() if ev.state_confusion.sum() else None)
        report.update({
            "mean_distance_cm": ev.mean_distance_cm,
            "model_error_rate": model_err,
            "state_error_rate": state_err,
            "false_positives": ev.false_positives,
            "missed_references": ev.missed_references,
            "model_labels": list(ev.model_labels),
            "model_confusion": ev.model_confusion.tolist(),
            "state_confusion": ev.state_confusion.tolist(),
        })
        _write_confusion_csv(out_dir / "model_confusion.csv", ev.model_labels,
                             ev.model_confusion)
        _write_confusion_csv(out_dir / "state_confusion.csv", ("off", "on"),
                             ev.state_confusion)

    _write_clusters_csv(out_dir / "clusters.csv", clusters)
    _write_scores_csv(out_dir / "cluster_scores.csv", clusters)
    (out_dir / "report.json").write_text(json.dumps(report, sort_keys=True, indent=2))
    return report


def _write_confusion_csv(path, labels, matrix) -> None:
    lines = ["expected\\detected," + ",".join(str(l) for l in labels)]
    for i, lab in enumerate(labels):
        lines.append(f"{lab}," + ",".join(str(int(v)) for v in matrix[i]))
    Path(path).write_text("\n".join(lines) + "\n")


def _write_clusters_csv(path, clusters) -> None:
    lines = ["cluster,x,y,z,members,model,state"]
    for i, c in enumerate(clusters):
        lines.append(
            f"{i},{c.center[0]:.6f},{c.center[1]:.6f},{c.center[2]:.6f},"
            f"{len(c.members)},{c.decided_model},"
            f"{c.decided_state.value if c.decided_state else ''}")
    Path(path).write_text("\n".join(lines) + "\n")


def _write_scores_csv(path, clusters) -> None:
    lines = ["cluster,model,accumulated_score"]
    for i, c in enumerate(clusters):
        for model_id in sorted(c.accumulated_scores):
            lines.append(f"{i},{model_id},{c.accumulated_scores[model_id]:.6f}")
    Path(path).write_text("\n".join(lines) + "\n")
