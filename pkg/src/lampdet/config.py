"""Pipeline configuration: one TOML document with a section per module.

Every knob has a default; a config file only needs the values it overrides.
CLI flags override the file.
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import MissingFile, SchemaError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class Mode(Enum):
    """The three system variants compared in the evaluation."""

    UNCONSTRAINED = "unconstrained"
    FILTER_ONLY = "filter-only"
    FILTER_AND_ALIGNMENT = "filter-and-alignment"

    @property
    def uses_reprojection_filter(self) -> bool:
        return self is not Mode.UNCONSTRAINED

    @property
    def uses_alignment(self) -> bool:
        return self is Mode.FILTER_AND_ALIGNMENT


@dataclass(frozen=True)
class ShapeParams:
    intensity_threshold: float = 220.0
    min_area: int = 100
    simplify_eps: float = 2.0
    classify_eps: float = 2.0
    smooth_window: int = 0  # boundary low-pass; 0 disables
    shape_threshold: float = 14.0  # isoperimetric circular/polygonal split


@dataclass(frozen=True)
class CandidateParams:
    max_tilt_deg: float = 25.0
    height_band_m: float = 0.3
    size_ratio_min: float = 0.5
    size_ratio_max: float = 2.0


@dataclass(frozen=True)
class ChamferParams:
    q: int = 60
    lambda_px_per_rad: float = 100.0
    grad_threshold: float = 80.0
    smooth_sigma: float = 1.4
    score_threshold: float = 1.5
    roi_dilation: float = 0.2
    roi_margin_px: int = 24
    max_step_px: float = 2.0


@dataclass(frozen=True)
class ReprojectionParams:
    threshold_polygonal: float = 0.015
    threshold_circular: float = 0.035


@dataclass(frozen=True)
class StateParams:
    on_threshold: float = 200.0


@dataclass(frozen=True)
class ClusterParams:
    radius_m: float = 0.5
    match_radius_m: float = 1.0


@dataclass(frozen=True)
class Paths:
    images: str = ""
    models: str = ""
    building: str = ""
    references: str = ""


@dataclass(frozen=True)
class PipelineConfig:
    mode: Mode = Mode.FILTER_AND_ALIGNMENT
    seed: int = 0
    workers: int = 1
    paths: Paths = field(default_factory=Paths)
    shapes: ShapeParams = field(default_factory=ShapeParams)
    candidates: CandidateParams = field(default_factory=CandidateParams)
    chamfer: ChamferParams = field(default_factory=ChamferParams)
    reprojection: ReprojectionParams = field(default_factory=ReprojectionParams)
    state: StateParams = field(default_factory=StateParams)
    cluster: ClusterParams = field(default_factory=ClusterParams)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mode"] = self.mode.value
        return d

    def with_overrides(self, mode=None, seed=None, workers=None, **paths) -> "PipelineConfig":
        cfg = self
        if mode is not None:
            cfg = replace(cfg, mode=Mode(mode) if not isinstance(mode, Mode) else mode)
        if seed is not None:
            cfg = replace(cfg, seed=int(seed))
        if workers is not None:
            cfg = replace(cfg, workers=int(workers))
        path_updates = {k: v for k, v in paths.items() if v}
        if path_updates:
            cfg = replace(cfg, paths=replace(cfg.paths, **path_updates))
        return cfg

    @property
    def max_tilt_rad(self) -> float:
        return float(np.deg2rad(self.candidates.max_tilt_deg))


_SECTIONS = {
    "shapes": ShapeParams,
    "candidates": CandidateParams,
    "chamfer": ChamferParams,
    "reprojection": ReprojectionParams,
    "state": StateParams,
    "cluster": ClusterParams,
    "paths": Paths,
}


def config_from_dict(doc: dict) -> PipelineConfig:
    kwargs = {}
    for section, cls in _SECTIONS.items():
        if section in doc:
            body = doc[section]
            valid = {f for f in cls.__dataclass_fields__}
            unknown = set(body) - valid
            if unknown:
                raise SchemaError(f"unknown keys in [{section}]: {sorted(unknown)}")
            kwargs[section] = cls(**body)
    run = doc.get("run", {})
    try:
        mode = Mode(run.get("mode", Mode.FILTER_AND_ALIGNMENT.value))
    except ValueError as exc:
        raise SchemaError(f"unknown mode {run.get('mode')!r}") from exc
    return PipelineConfig(mode=mode, seed=int(run.get("seed", 0)),
                          workers=int(run.get("workers", 1)), **kwargs)


def load_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"config file not found: {path}")
    try:
        doc = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise SchemaError(f"config is not valid TOML: {exc}") from exc
    try:
        return config_from_dict(doc)
    except TypeError as exc:
        raise SchemaError(f"bad config value: {exc}") from exc


DEFAULT_CONFIG_TOML = """\
# lampdet pipeline configuration (all values shown are the defaults)

[run]
mode = "filter-and-alignment"   # unconstrained | filter-only | filter-and-alignment
seed = 0
workers = 1

[paths]
# images = "dataset/"           # directory with NNNNNN.pgm + poses.json
# models = "models.json"
# building = "building.json"
# references = "references.json"

[shapes]
intensity_threshold = 220.0     # lamps render near saturation
min_area = 100                  # px^2
simplify_eps = 2.0              # px, polygon simplification tolerance
classify_eps = 2.0              # px, simplification used for shape routing
smooth_window = 0               # boundary low-pass window (0 = off)
shape_threshold = 14.0          # isoperimetric P^2/A routing threshold

[candidates]
max_tilt_deg = 25.0             # reject estimates far off the mounting plane
height_band_m = 0.3
size_ratio_min = 0.5
size_ratio_max = 2.0

[chamfer]
q = 60                          # orientation channels
lambda_px_per_rad = 100.0       # angular-to-pixel weight
grad_threshold = 80.0
smooth_sigma = 1.4              # Gaussian pre-filter for gradient direction
score_threshold = 1.5           # px, discard refinements scoring above this
roi_dilation = 0.2
roi_margin_px = 24
max_step_px = 2.0               # template sampling density at nominal depth

[reprojection]
threshold_polygonal = 0.015
threshold_circular = 0.035

[state]
on_threshold = 200.0            # mean face intensity for the on decision

[cluster]
radius_m = 0.5
match_radius_m = 1.0
"""
