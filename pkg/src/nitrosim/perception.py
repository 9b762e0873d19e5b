"""Abstracted stalk detection and width-based insertion-angle choice.

The RGB-D segmentation pipeline is replaced by its output statistic: every
in-range stalk produces a detection whose width is the true projected width
plus Gaussian noise, and leaves occasionally produce phantom detections.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import FieldLayout, StalkCrossSection, StalkInstance, apparent_width, optimal_view_angle


class NoDetections(Exception):
    pass


@dataclass(frozen=True)
class DetectionModel:
    p_leaf_false_positive: float = 1 / 30
    width_noise_sigma_mm: float = 1.0
    position_noise_sigma_mm: float = 3.0
    max_detect_range_m: float = 0.6
    stalk_confidence_beta: tuple[float, float] = (8.0, 2.0)
    phantom_confidence_beta: tuple[float, float] = (4.0, 4.0)
    phantom_width_range_mm: tuple[float, float] = (8.0, 30.0)

    def __post_init__(self):
        if not 0 <= self.p_leaf_false_positive <= 1:
            raise ValueError("p_leaf_false_positive must be in [0, 1]")
        if min(self.width_noise_sigma_mm, self.position_noise_sigma_mm) < 0:
            raise ValueError("noise sigmas must be >= 0")
        if self.max_detect_range_m <= 0:
            raise ValueError("max_detect_range_m must be > 0")


@dataclass(frozen=True)
class Detection:
    target_id: int                  # stalk id, or leaf-site index for phantoms
    phantom: bool
    est_position_m: tuple[float, float]
    est_width_mm: float
    confidence: float
    distance_m: float

    def to_dict(self) -> dict:
        return {
            "target_id": self.target_id,
            "phantom": self.phantom,
            "est_position_m": list(self.est_position_m),
            "est_width_mm": self.est_width_mm,
            "confidence": self.confidence,
            "distance_m": self.distance_m,
        }


@dataclass(frozen=True)
class SelectionWeights:
    distance: float = 1 / 3
    confidence: float = 1 / 3
    width: float = 1 / 3
    width_norm_mm: float = 35.0


@dataclass(frozen=True)
class SweepPlan:
    start_angle_deg: float = 0.0
    increment_deg: float = 15.0
    n_views: int = 3

    def __post_init__(self):
        if self.n_views < 1:
            raise ValueError("n_views must be >= 1")
        if self.increment_deg <= 0 and self.n_views > 1:
            raise ValueError("increment_deg must be > 0")

    @property
    def angles(self) -> list[float]:
        return [self.start_angle_deg + k * self.increment_deg for k in range(self.n_views)]

    @property
    def span_deg(self) -> float:
        return (self.n_views - 1) * self.increment_deg


def bearing_deg(frm: tuple[float, float], to: tuple[float, float]) -> float:
    return math.degrees(math.atan2(to[1] - frm[1], to[0] - frm[0]))


def scan(field: FieldLayout, base_pose: tuple[float, float], model: DetectionModel,
         rng: np.random.Generator) -> list[Detection]:
    """Detections visible from ``base_pose``: real stalks first (by id), then phantoms."""
    out: list[Detection] = []
    pos_sigma_m = model.position_noise_sigma_mm / 1000.0
    for s in field.stalks:
        d = math.dist(base_pose, s.base_position_m)
        if d > model.max_detect_range_m:
            continue
        noise = rng.normal(0.0, pos_sigma_m, size=2) if pos_sigma_m > 0 else (0.0, 0.0)
        est = (s.base_position_m[0] + float(noise[0]), s.base_position_m[1] + float(noise[1]))
        width = measure_width(s, bearing_deg(base_pose, s.base_position_m), model, rng)
        conf = float(rng.beta(*model.stalk_confidence_beta))
        out.append(Detection(s.id, False, est, width, conf, d))
    for j, leaf in enumerate(field.leaf_sites):
        d = math.dist(base_pose, leaf)
        if d > model.max_detect_range_m:
            continue
        if rng.random() >= model.p_leaf_false_positive:
            continue
        noise = rng.normal(0.0, pos_sigma_m, size=2) if pos_sigma_m > 0 else (0.0, 0.0)
        est = (leaf[0] + float(noise[0]), leaf[1] + float(noise[1]))
        width = float(rng.uniform(*model.phantom_width_range_mm))
        conf = float(rng.beta(*model.phantom_confidence_beta))
        out.append(Detection(j, True, est, width, conf, d))
    return out


def score(det: Detection, weights: SelectionWeights, max_range_m: float) -> float:
    return (
        weights.distance * (1.0 - det.distance_m / max_range_m)
        + weights.confidence * det.confidence
        + weights.width * (det.est_width_mm / weights.width_norm_mm)
    )


def select_stalk(detections: list[Detection], weights: SelectionWeights = SelectionWeights(),
                 max_range_m: float = 0.6) -> Detection:
    """Highest score; exact ties go to the lowest id (real stalks before phantoms)."""
    if not detections:
        raise NoDetections("scan returned nothing")
    return min(detections, key=lambda d: (-score(d, weights, max_range_m), d.target_id, d.phantom))


def measure_width(stalk: StalkInstance, view_angle_deg: float, model: DetectionModel,
                  rng: np.random.Generator | None = None) -> float:
    w = apparent_width(stalk.cross_section, view_angle_deg)
    if model.width_noise_sigma_mm > 0 and rng is not None:
        w += float(rng.normal(0.0, model.width_noise_sigma_mm))
    return max(0.1, w)


def sweep_select(stalk: StalkInstance, plan: SweepPlan, model: DetectionModel,
                 rng: np.random.Generator | None = None) -> tuple[float, float]:
    """``(chosen_angle, measured_width)``: widest of the swept views, first on ties."""
    best_angle, best_width = None, -math.inf
    for angle in plan.angles:
        w = measure_width(stalk, angle, model, rng)
        if w > best_width:
            best_angle, best_width = angle, w
    return best_angle, best_width


def fold_angle(delta_deg: float) -> float:
    """Distance between two axial directions, in [0, 90]."""
    d = abs(delta_deg) % 180.0
    return 180.0 - d if d > 90.0 else d


def angle_error_to_optimal(chosen_angle_deg: float, cs: StalkCrossSection) -> float:
    return fold_angle(chosen_angle_deg - optimal_view_angle(cs).angle_deg)
