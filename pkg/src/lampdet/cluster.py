"""World-space aggregation of detections into a lamp inventory, plus metrics.

Clustering is the simple greedy scheme: detections join the nearest existing
cluster within a radius or start their own; a single reassignment pass
against the settled centers removes most order dependence.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import MissingFile, SchemaError
from .filtering import Detection, LampState


@dataclass
class Cluster:
    center: np.ndarray
    members: list
    accumulated_scores: dict = field(default_factory=dict)
    state_votes: tuple = (0, 0)  # (on, off)
    decided_model: Optional[str] = None
    decided_state: Optional[LampState] = None


@dataclass(frozen=True)
class ReferenceLamp:
    position: np.ndarray
    model_id: str
    state: LampState


@dataclass(frozen=True)
class ReferenceSet:
    lamps: tuple

    def __len__(self):
        return len(self.lamps)


@dataclass(frozen=True)
class EvalReport:
    total_detections: int
    n_clusters: int
    members_min: int
    members_mean: float
    members_max: int
    model_labels: tuple
    model_confusion: np.ndarray  # rows: reference model, cols: detected model
    state_confusion: np.ndarray  # rows: reference state (off, on), cols: detected
    mean_distance_cm: Optional[float]
    matched: tuple        # (cluster index, reference index, distance m)
    false_positives: int  # clusters with no reference within the match radius
    missed_references: int


def detection_score(d) -> float:
    """Vote weight of one detection: lower chamfer cost, higher weight."""
    return 1.0 / (1.0 + d.chamfer_score)


def cluster_detections(detections, radius: float = 0.5) -> list[Cluster]:
    """Greedy agglomeration with one stabilizing reassignment pass."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    detections = list(detections)
    if not detections:
        return []

    centers: list[np.ndarray] = []
    sums: list[np.ndarray] = []
    counts: list[int] = []
    for d in detections:
        p = np.asarray(d.world_position, dtype=float)
        if centers:
            dists = np.linalg.norm(np.array(centers) - p, axis=1)
            i = int(np.argmin(dists))
            if dists[i] <= radius:
                sums[i] = sums[i] + p
                counts[i] += 1
                centers[i] = sums[i] / counts[i]
                continue
        centers.append(p.copy())
        sums.append(p.copy())
        counts.append(1)

    # reassignment pass against the settled centers
    frozen = np.array(centers)
    buckets: list[list] = [[] for _ in centers]
    for d in detections:
        p = np.asarray(d.world_position, dtype=float)
        i = int(np.argmin(np.linalg.norm(frozen - p, axis=1)))
        buckets[i].append(d)

    clusters = []
    for members in buckets:
        if not members:
            continue
        pts = np.array([m.world_position for m in members], dtype=float)
        c = Cluster(center=pts.mean(axis=0), members=members)
        _accumulate(c)
        clusters.append(c)
    return clusters


def _accumulate(cluster: Cluster) -> None:
    scores: dict = {}
    on = off = 0
    for d in cluster.members:
        scores[d.model_id] = scores.get(d.model_id, 0.0) + detection_score(d)
        if d.state is LampState.ON:
            on += 1
        elif d.state is LampState.OFF:
            off += 1
    cluster.accumulated_scores = scores
    cluster.state_votes = (on, off)


def decide_cluster(cluster: Cluster, model_order=None) -> tuple[str, LampState]:
    """Model by accumulated score argmax (ties to the earliest model in
    ``model_order``); state by majority vote, ties resolving to on."""
    if not cluster.members:
        raise ValueError("cluster has no members")
    if not cluster.accumulated_scores:
        _accumulate(cluster)
    order = list(model_order) if model_order is not None \
        else sorted(cluster.accumulated_scores)
    rank = {m: i for i, m in enumerate(order)}
    best = max(cluster.accumulated_scores.items(),
               key=lambda kv: (kv[1], -rank.get(kv[0], len(rank))))
    on, off = cluster.state_votes
    state = LampState.ON if on >= off else LampState.OFF
    cluster.decided_model = best[0]
    cluster.decided_state = state
    return best[0], state


def load_references(path) -> ReferenceSet:
    """references.json: [{"position": [x,y,z], "model": id, "state": "on"|"off"}, ...]"""
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"references file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"references file is not valid JSON: {exc}") from exc
    lamps = []
    seen = set()
    for i, entry in enumerate(doc):
        try:
            pos = np.asarray(entry["position"], dtype=float).reshape(3)
            lamps.append(ReferenceLamp(position=pos, model_id=str(entry["model"]),
                                       state=LampState(entry["state"])))
        except (KeyError, ValueError) as exc:
            raise SchemaError(f"reference {i}: {exc}") from exc
        key = tuple(pos.round(9))
        if key in seen:
            raise SchemaError(f"reference {i}: duplicate position {pos}")
        seen.add(key)
    return ReferenceSet(lamps=tuple(lamps))


def evaluate(clusters, refs: ReferenceSet, match_radius: float = 1.0) -> EvalReport:
    """Greedy one-to-one matching of clusters to references by distance."""
    if match_radius <= 0:
        raise ValueError("match_radius must be positive")
    for c in clusters:
        if c.decided_model is None:
            decide_cluster(c)

    pairs = []
    for ci, c in enumerate(clusters):
        for ri, r in enumerate(refs.lamps):
            d = float(np.linalg.norm(c.center - r.position))
            if d <= match_radius:
                pairs.append((d, ci, ri))
    pairs.sort()
    used_c: set = set()
    used_r: set = set()
    matched = []
    for d, ci, ri in pairs:
        if ci in used_c or ri in used_r:
            continue
        used_c.add(ci)
        used_r.add(ri)
        matched.append((ci, ri, d))

    labels = sorted({r.model_id for r in refs.lamps}
                    | {c.decided_model for c in clusters})
    idx = {m: i for i, m in enumerate(labels)}
    model_conf = np.zeros((len(labels), len(labels)), dtype=int)
    state_conf = np.zeros((2, 2), dtype=int)  # rows/cols: off, on
    for ci, ri, _ in matched:
        ref = refs.lamps[ri]
        c = clusters[ci]
        model_conf[idx[ref.model_id], idx[c.decided_model]] += 1
        state_conf[int(ref.state is LampState.ON),
                   int(c.decided_state is LampState.ON)] += 1

    member_counts = [len(c.members) for c in clusters]
    distances_cm = [100.0 * d for _, _, d in matched]
    return EvalReport(
        total_detections=int(sum(member_counts)),
        n_clusters=len(clusters),
        members_min=min(member_counts) if member_counts else 0,
        members_mean=float(np.mean(member_counts)) if member_counts else 0.0,
        members_max=max(member_counts) if member_counts else 0,
        model_labels=tuple(labels),
        model_confusion=model_conf,
        state_confusion=state_conf,
        mean_distance_cm=float(np.mean(distances_cm)) if distances_cm else None,
        matched=tuple(matched),
        false_positives=len(clusters) - len(matched),
        missed_references=len(refs.lamps) - len(matched),
    )
