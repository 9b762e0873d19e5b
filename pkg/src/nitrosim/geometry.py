"""Stalk and field geometry.

A stalk cross-section is an ellipse with semi-axes ``a >= b`` whose major axis
points at ``orientation_deg`` in the field frame. A view (or insertion)
direction is an angle in the same frame; the projected width seen along that
direction is the ellipse's support width perpendicular to it.

The pith is the concentric ellipse obtained by scaling the outer one by
``pith_scale``.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels

DEFAULT_DIAMETER_BAND_MM = (15.0, 35.0)


class ImplausibleStalkWarning(UserWarning):
    """A stalk diameter falls outside the plausibility band."""


@dataclass(frozen=True)
class StalkCrossSection:
    semi_major_mm: float
    semi_minor_mm: float
    orientation_deg: float = 0.0
    pith_scale: float = 0.8

    def __post_init__(self):
        if not self.semi_minor_mm > 0:
            raise ValueError(f"semi_minor_mm must be > 0, got {self.semi_minor_mm}")
        if self.semi_major_mm < self.semi_minor_mm:
            raise ValueError(
                f"semi_major_mm ({self.semi_major_mm}) < semi_minor_mm ({self.semi_minor_mm})"
            )
        if not 0 < self.pith_scale <= 1:
            raise ValueError(f"pith_scale must be in (0, 1], got {self.pith_scale}")
        object.__setattr__(self, "orientation_deg", float(self.orientation_deg) % 180.0)

    @classmethod
    def circle(cls, diameter_mm: float, pith_scale: float = 0.8) -> StalkCrossSection:
        r = diameter_mm / 2.0
        return cls(r, r, 0.0, pith_scale)

    @property
    def is_circular(self) -> bool:
        return self.semi_major_mm - self.semi_minor_mm <= 1e-12 * self.semi_major_mm

    @property
    def mean_diameter_mm(self) -> float:
        return 2.0 * math.sqrt(self.semi_major_mm * self.semi_minor_mm)


def check_plausible(cs: StalkCrossSection, band: tuple[float, float] = DEFAULT_DIAMETER_BAND_MM) -> bool:
    """Soft check of both diameters against ``band``; warns instead of raising."""
    lo, hi = band
    ok = lo <= 2 * cs.semi_minor_mm and 2 * cs.semi_major_mm <= hi
    if not ok:
        warnings.warn(
            f"stalk diameters {2 * cs.semi_minor_mm:.2f}/{2 * cs.semi_major_mm:.2f} mm "
            f"outside plausibility band [{lo}, {hi}] mm",
            ImplausibleStalkWarning,
            stacklevel=2,
        )
    return ok


@dataclass(frozen=True)
class StalkInstance:
    id: int
    base_position_m: tuple[float, float]
    cross_section: StalkCrossSection
    height_cm: float = 56.0
    ground_nitrate_ppm: float = 1000.0

    def __post_init__(self):
        if not self.height_cm > 0:
            raise ValueError("height_cm must be > 0")
        if self.ground_nitrate_ppm < 0:
            raise ValueError("ground_nitrate_ppm must be >= 0")


@dataclass(frozen=True)
class SensorGeometry:
    spike_width_mm: float = 5.0
    spike_length_mm: float = 12.0
    spike_thickness_mm: float = 1.6
    electrode_near_tip_mm: float = 3.0
    electrode_separation_mm: float = 5.5
    required_depth_mm: float = 8.5
    insertion_height_band_cm: tuple[float, float] = (1.3, 2.5)

    def __post_init__(self):
        span = self.electrode_near_tip_mm + self.electrode_separation_mm
        if span > self.spike_length_mm:
            raise ValueError("electrodes do not fit on the spike")
        if not math.isclose(span, self.required_depth_mm, rel_tol=0, abs_tol=1e-9):
            raise ValueError(
                f"required_depth_mm ({self.required_depth_mm}) must equal the electrode span ({span})"
            )
        lo, hi = self.insertion_height_band_cm
        if not 0 <= lo < hi:
            raise ValueError("insertion_height_band_cm must be an increasing pair")
        object.__setattr__(self, "insertion_height_band_cm", (float(lo), float(hi)))

    def height_ok(self, height_cm: float) -> bool:
        lo, hi = self.insertion_height_band_cm
        return lo <= height_cm <= hi


# --- operations -----------------------------------------------------------

def apparent_width(cs: StalkCrossSection, view_angle_deg: float) -> float:
    """Projected width (mm) of the stalk seen along ``view_angle_deg``."""
    t = math.radians(view_angle_deg - cs.orientation_deg)
    a, b = cs.semi_major_mm, cs.semi_minor_mm
    return 2.0 * math.sqrt(a * a * math.sin(t) ** 2 + b * b * math.cos(t) ** 2)


class ViewAngle(NamedTuple):
    angle_deg: float
    degenerate: bool


def optimal_view_angle(cs: StalkCrossSection) -> ViewAngle:
    """View angle with the widest projection: perpendicular to the major axis.

    Every angle is optimal for a circle; that case returns 0 flagged degenerate.
    """
    if cs.is_circular:
        return ViewAngle(0.0, True)
    return ViewAngle((cs.orientation_deg + 90.0) % 180.0, False)


def _ray_quadratic(cs: StalkCrossSection, ray_deg: float, offset_mm: float):
    rel = math.radians(ray_deg - cs.orientation_deg)
    ux, uy = math.cos(rel), math.sin(rel)
    nx, ny = -uy, ux
    ia2 = 1.0 / cs.semi_major_mm ** 2
    ib2 = 1.0 / cs.semi_minor_mm ** 2
    qa = ux * ux * ia2 + uy * uy * ib2
    qb = 2.0 * offset_mm * (nx * ux * ia2 + ny * uy * ib2)
    qc = offset_mm ** 2 * (nx * nx * ia2 + ny * ny * ib2) - 1.0
    return qa, qb, qc, (ux, uy)


def ray_entry(cs: StalkCrossSection, ray_deg: float, offset_mm: float) -> tuple[float, float] | None:
    """``(entry_t, chord)`` of the offset ray, or ``None`` on a miss.

    ``entry_t`` is the signed distance along the ray from the foot point
    (the point ``offset_mm`` to the left of the centre) to the outer surface.
    """
    qa, qb, qc, _ = _ray_quadratic(cs, ray_deg, offset_mm)
    disc = qb * qb - 4.0 * qa * qc
    if disc <= 0.0:
        return None
    root = math.sqrt(disc)
    return (-qb - root) / (2.0 * qa), root / qa


def chord_depth(cs: StalkCrossSection, insertion_angle_deg: float, lateral_offset_mm: float) -> float:
    """Full chord (mm) of the outer ellipse along the laterally offset insertion ray."""
    hit = ray_entry(cs, insertion_angle_deg, lateral_offset_mm)
    return 0.0 if hit is None else hit[1]


def point_on_ray(cs: StalkCrossSection, ray_deg: float, offset_mm: float, t: float) -> tuple[float, float]:
    """Field-frame point (relative to the stalk centre) at parameter ``t``."""
    r = math.radians(ray_deg)
    ux, uy = math.cos(r), math.sin(r)
    return -offset_mm * uy + t * ux, offset_mm * ux + t * uy


def in_ellipse(cs: StalkCrossSection, x: float, y: float, scale: float = 1.0, tol: float = 1e-9) -> bool:
    r = math.radians(cs.orientation_deg)
    c, s = math.cos(r), math.sin(r)
    xe, ye = c * x + s * y, -s * x + c * y
    return (xe / (cs.semi_major_mm * scale)) ** 2 + (ye / (cs.semi_minor_mm * scale)) ** 2 <= 1.0 + tol


def electrode_positions(achieved_depth_mm: float, geom: SensorGeometry) -> tuple[float, float]:
    """Distances from the entry point to the tip-side and far electrodes."""
    tip = achieved_depth_mm - geom.electrode_near_tip_mm
    return tip, tip - geom.electrode_separation_mm


def electrodes_in_pith(
    cs: StalkCrossSection,
    insertion_angle_deg: float,
    lateral_offset_mm: float,
    achieved_depth_mm: float,
    geom: SensorGeometry = SensorGeometry(),
) -> bool:
    if achieved_depth_mm < 0:
        raise ValueError("achieved_depth_mm must be >= 0")
    hit = ray_entry(cs, insertion_angle_deg, lateral_offset_mm)
    if hit is None:
        return False
    entry, _ = hit
    s_tip, s_far = electrode_positions(achieved_depth_mm, geom)
    if s_far < -1e-9:
        return False
    return all(
        in_ellipse(cs, *point_on_ray(cs, insertion_angle_deg, lateral_offset_mm, entry + s), scale=cs.pith_scale)
        for s in (s_tip, s_far)
    )


def nitrate_at_height(
    ground_ppm: float,
    height_cm: float,
    decay_per_cm: float = 0.04,
    model: str = "linear",
) -> float:
    """Nitrate concentration at ``height_cm`` above ground.

    ``linear`` gives ``ground * max(0, 1 - rate * h)``; ``compound`` gives
    ``ground * (1 - rate) ** h``.
    """
    if height_cm < 0:
        raise ValueError("height_cm must be >= 0")
    if model == "linear":
        return ground_ppm * max(0.0, 1.0 - decay_per_cm * height_cm)
    if model == "compound":
        return ground_ppm * (1.0 - decay_per_cm) ** height_cm
    raise ValueError(f"unknown gradient model {model!r}")


# --- batch wrappers -------------------------------------------------------

def apparent_width_batch(a, b, orientation_deg, view_angle_deg) -> np.ndarray:
    return kernels.apparent_width(a, b, np.asarray(view_angle_deg, float) - np.asarray(orientation_deg, float))


def chord_depth_batch(a, b, orientation_deg, insertion_angle_deg, lateral_offset_mm) -> np.ndarray:
    return kernels.chord(a, b, orientation_deg, insertion_angle_deg, lateral_offset_mm)[0]


def electrodes_in_pith_batch(a, b, orientation_deg, insertion_angle_deg, lateral_offset_mm,
                             achieved_depth_mm, pith_scale, geom: SensorGeometry = SensorGeometry()) -> np.ndarray:
    return kernels.electrodes_in_pith(
        a, b, orientation_deg, insertion_angle_deg, lateral_offset_mm, achieved_depth_mm, pith_scale,
        geom.electrode_near_tip_mm, geom.electrode_separation_mm,
    )


# --- field generation -----------------------------------------------------

@dataclass(frozen=True)
class FieldGenConfig:
    n_stalks: int = 30
    n_rows: int = 2
    row_spacing_m: float = 0.75
    stalk_spacing_m: float = 1.0       # along-row spacing between sampling locations
    position_jitter_m: float = 0.02
    mean_diameter_mm: float = 21.0
    diameter_sd_mm: float = 2.5
    diameter_band_mm: tuple[float, float] = DEFAULT_DIAMETER_BAND_MM
    aspect_range: tuple[float, float] = (1.0, 1.4)   # semi_major / semi_minor
    pith_scale: float = 0.8
    mean_height_cm: float = 56.0
    height_sd_cm: float = 4.0
    ground_nitrate_range_ppm: tuple[float, float] = (500.0, 1500.0)
    leaf_sites_per_stalk: int = 1
    leaf_distance_range_m: tuple[float, float] = (0.05, 0.15)

    def __post_init__(self):
        for name in ("diameter_band_mm", "aspect_range", "ground_nitrate_range_ppm", "leaf_distance_range_m"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: lower bound {lo} exceeds upper bound {hi}")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.aspect_range[0] < 1.0:
            raise ValueError("aspect_range must be >= 1")
        if self.n_stalks < 0 or self.n_rows < 1:
            raise ValueError("n_stalks must be >= 0 and n_rows >= 1")
        if self.diameter_sd_mm < 0 or self.height_sd_cm < 0:
            raise ValueError("standard deviations must be >= 0")
        if not 0 < self.pith_scale <= 1:
            raise ValueError("pith_scale must be in (0, 1]")


@dataclass(frozen=True)
class FieldLayout:
    rows: tuple[float, ...]
    stalks: tuple[StalkInstance, ...]
    leaf_sites: tuple[tuple[float, float], ...] = field(default=())
    row_spacing_m: float = 0.75

    def __post_init__(self):
        for y0, y1 in zip(self.rows, self.rows[1:]):
            if not math.isclose(y1 - y0, self.row_spacing_m, rel_tol=0, abs_tol=1e-12):
                raise ValueError("adjacent rows must be exactly row_spacing_m apart")

    def to_dict(self) -> dict:
        return {
            "row_spacing_m": self.row_spacing_m,
            "rows": list(self.rows),
            "stalks": [
                {
                    "id": s.id,
                    "base_position_m": list(s.base_position_m),
                    "cross_section": asdict(s.cross_section),
                    "height_cm": s.height_cm,
                    "ground_nitrate_ppm": s.ground_nitrate_ppm,
                }
                for s in self.stalks
            ],
            "leaf_sites": [list(p) for p in self.leaf_sites],
        }

    @classmethod
    def from_dict(cls, d: dict) -> FieldLayout:
        stalks = tuple(
            StalkInstance(
                id=s["id"],
                base_position_m=tuple(s["base_position_m"]),
                cross_section=StalkCrossSection(**s["cross_section"]),
                height_cm=s["height_cm"],
                ground_nitrate_ppm=s["ground_nitrate_ppm"],
            )
            for s in d["stalks"]
        )
        return cls(
            rows=tuple(d["rows"]),
            stalks=stalks,
            leaf_sites=tuple(tuple(p) for p in d["leaf_sites"]),
            row_spacing_m=d["row_spacing_m"],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> FieldLayout:
        return cls.from_dict(json.loads(text))


def sample_cross_section(cfg: FieldGenConfig, rng: np.random.Generator) -> StalkCrossSection:
    lo, hi = cfg.diameter_band_mm
    d = float(np.clip(rng.normal(cfg.mean_diameter_mm, cfg.diameter_sd_mm), lo, hi))
    k = float(rng.uniform(*cfg.aspect_range))
    orient = float(rng.uniform(0.0, 180.0))
    a = min(d / 2.0 * math.sqrt(k), hi / 2.0)
    b = max(d / 2.0 / math.sqrt(k), lo / 2.0)
    return StalkCrossSection(max(a, b), b, orient, cfg.pith_scale)


def generate_field(config: FieldGenConfig, seed: int | np.random.SeedSequence) -> FieldLayout:
    """Deterministic field: stalks laid out row by row, adjacent rows staggered.

    Stalk ``i`` sits in row ``i % n_rows``; staggering by half the along-row
    spacing keeps neighbours out of the default detection range.
    """
    rng = np.random.default_rng(seed)
    rows = tuple(r * config.row_spacing_m for r in range(config.n_rows))
    stalks = []
    leaves = []
    for i in range(config.n_stalks):
        row = i % config.n_rows
        col = i // config.n_rows
        x = col * config.stalk_spacing_m + (0.5 * config.stalk_spacing_m if row % 2 else 0.0)
        jx, jy = rng.uniform(-config.position_jitter_m, config.position_jitter_m, size=2)
        pos = (float(x + jx), float(rows[row] + jy))
        cs = sample_cross_section(config, rng)
        height = float(max(1.0, rng.normal(config.mean_height_cm, config.height_sd_cm)))
        ppm = float(rng.uniform(*config.ground_nitrate_range_ppm))
        stalks.append(StalkInstance(i, pos, cs, height, ppm))
        for _ in range(config.leaf_sites_per_stalk):
            r = rng.uniform(*config.leaf_distance_range_m)
            phi = rng.uniform(0.0, 2.0 * math.pi)
            leaves.append((float(pos[0] + r * math.cos(phi)), float(pos[1] + r * math.sin(phi))))
    return FieldLayout(rows, tuple(stalks), tuple(leaves), config.row_spacing_m)
