"""Single-actuator coupled sliding gripper.

One linear actuator drives three outputs through consecutive track phases::

    [0, lever_end)            lever swings from open to hooked
    [lever_end, grasp_end)    finger gap closes linearly, max -> 0
    [grasp_end, stroke]       sensor slot advances linearly, 0 -> insertion_travel

Only one output moves per phase. The phase boundaries are not dimensioned in
the source drawings, so they are configuration values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .geometry import SensorGeometry, StalkInstance, electrodes_in_pith, ray_entry

INSERTION_FORCE_N = 30.0


class GripperError(Exception):
    pass


class DiameterOutOfRange(GripperError):
    pass


class StalkMissed(GripperError):
    pass


class NoSensorLoaded(GripperError):
    pass


@dataclass(frozen=True)
class KinematicsConfig:
    stroke_mm: float = 50.0
    lever_phase_end_mm: float = 8.0
    grasp_phase_end_mm: float = 32.0
    max_finger_gap_mm: float = 40.0
    insertion_travel_mm: float = 18.0
    grasp_min_diameter_mm: float = 15.0
    grasp_max_diameter_mm: float = 35.0
    centering_gain: float = 0.15
    # retracted tip to the gripper centre line, where the pads centre the stalk
    tip_to_center_mm: float = 16.5

    def __post_init__(self):
        if not 0 < self.lever_phase_end_mm < self.grasp_phase_end_mm < self.stroke_mm:
            raise ValueError("need 0 < lever_phase_end < grasp_phase_end < stroke")
        if self.insertion_travel_mm < SensorGeometry().required_depth_mm:
            raise ValueError("insertion_travel_mm must be >= the required insertion depth")
        if not 0 <= self.centering_gain <= 1:
            raise ValueError("centering_gain must be in [0, 1]")
        if self.grasp_min_diameter_mm > self.grasp_max_diameter_mm:
            raise ValueError("grasp_min_diameter_mm exceeds grasp_max_diameter_mm")

    @property
    def reach_mm(self) -> float:
        """How far past the centre line the tip ends at full stroke."""
        return self.insertion_travel_mm - self.tip_to_center_mm


class KinematicsSample(NamedTuple):
    finger_gap_mm: float
    sensor_travel_mm: float
    lever_hooked: bool


def kinematics(cfg: KinematicsConfig, extension_mm: float) -> KinematicsSample:
    if not 0 <= extension_mm <= cfg.stroke_mm:
        raise ValueError(f"extension {extension_mm} outside [0, {cfg.stroke_mm}]")
    e = float(extension_mm)
    hooked = e >= cfg.lever_phase_end_mm
    if e < cfg.lever_phase_end_mm:
        return KinematicsSample(cfg.max_finger_gap_mm, 0.0, hooked)
    if e < cfg.grasp_phase_end_mm:
        frac = (e - cfg.lever_phase_end_mm) / (cfg.grasp_phase_end_mm - cfg.lever_phase_end_mm)
        return KinematicsSample(cfg.max_finger_gap_mm * (1.0 - frac), 0.0, hooked)
    frac = (e - cfg.grasp_phase_end_mm) / (cfg.stroke_mm - cfg.grasp_phase_end_mm)
    return KinematicsSample(0.0, cfg.insertion_travel_mm * frac, hooked)


def lever_progress(cfg: KinematicsConfig, extension_mm: float) -> float:
    """Fraction of the open-to-hooked swing completed (0 open, 1 hooked)."""
    return min(1.0, max(0.0, extension_mm / cfg.lever_phase_end_mm))


def kinematics_table(cfg: KinematicsConfig, step_mm: float = 0.5) -> list[tuple[float, float, float, bool]]:
    """Rows of ``(extension, gap, travel, hooked)`` over the full stroke."""
    n = int(round(cfg.stroke_mm / step_mm))
    rows = []
    for i in range(n + 1):
        e = min(cfg.stroke_mm, i * step_mm)
        k = kinematics(cfg, e)
        rows.append((e, k.finger_gap_mm, k.sensor_travel_mm, k.lever_hooked))
    return rows


@dataclass(frozen=True)
class GripperState:
    extension_mm: float
    finger_gap_mm: float
    lever_hooked: bool
    sensor_travel_mm: float
    loaded_sensor: str | None = None

    @classmethod
    def at(cls, cfg: KinematicsConfig, extension_mm: float, loaded_sensor: str | None = None) -> GripperState:
        k = kinematics(cfg, extension_mm)
        return cls(float(extension_mm), k.finger_gap_mm, k.lever_hooked, k.sensor_travel_mm, loaded_sensor)

    def moved(self, cfg: KinematicsConfig, extension_mm: float) -> GripperState:
        return GripperState.at(cfg, extension_mm, self.loaded_sensor)

    def with_sensor(self, sensor_id: str | None) -> GripperState:
        return replace(self, loaded_sensor=sensor_id)


def grasp(
    cfg: KinematicsConfig,
    approach_offset_mm: float,
    stalk_diameter_mm: float,
    rng: np.random.Generator | None = None,
    noise_sigma_mm: float = 0.0,
) -> float:
    """Close the v-pads on a stalk; returns the residual lateral offset.

    Raises :class:`DiameterOutOfRange` or :class:`StalkMissed`.
    """
    if not stalk_diameter_mm > 0:
        raise ValueError("stalk diameter must be > 0")
    if not cfg.grasp_min_diameter_mm <= stalk_diameter_mm <= cfg.grasp_max_diameter_mm:
        raise DiameterOutOfRange(
            f"diameter {stalk_diameter_mm:.2f} mm outside [{cfg.grasp_min_diameter_mm}, {cfg.grasp_max_diameter_mm}]"
        )
    if abs(approach_offset_mm) > cfg.max_finger_gap_mm / 2.0:
        raise StalkMissed(f"offset {approach_offset_mm:.2f} mm beyond finger span")
    residual = cfg.centering_gain * approach_offset_mm
    if noise_sigma_mm > 0 and rng is not None:
        residual += float(rng.normal(0.0, noise_sigma_mm))
    return residual


@dataclass(frozen=True)
class InsertionOutcome:
    hit: bool
    achieved_depth_mm: float
    depth_ok: bool
    in_pith: bool
    insertion_height_cm: float
    height_ok: bool
    lateral_offset_mm: float
    insertion_angle_deg: float
    force_n: float = INSERTION_FORCE_N


def insertion_depth(stalk: StalkInstance, insertion_angle_deg: float, lateral_offset_mm: float,
                    cfg: KinematicsConfig = KinematicsConfig()) -> tuple[float, float]:
    """``(achieved_depth, chord)``: travel past the surface, limited by the chord."""
    hit = ray_entry(stalk.cross_section, insertion_angle_deg, lateral_offset_mm)
    if hit is None:
        return 0.0, 0.0
    entry, chord = hit
    penetration = max(0.0, cfg.reach_mm - entry)
    return min(penetration, chord), chord


def insert(
    gripper: GripperState,
    stalk: StalkInstance,
    insertion_angle_deg: float,
    residual_offset_mm: float,
    height_cm: float,
    geom: SensorGeometry = SensorGeometry(),
    cfg: KinematicsConfig = KinematicsConfig(),
) -> InsertionOutcome:
    if gripper.loaded_sensor is None or not gripper.lever_hooked:
        raise NoSensorLoaded("insert requires a loaded, hooked sensor")
    depth, chord = insertion_depth(stalk, insertion_angle_deg, residual_offset_mm, cfg)
    hit = chord > 0.0
    depth_ok = hit and depth >= geom.required_depth_mm - 1e-12
    height_ok = geom.height_ok(height_cm)
    in_pith = (
        depth_ok
        and height_ok
        and electrodes_in_pith(stalk.cross_section, insertion_angle_deg, residual_offset_mm, depth, geom)
    )
    return InsertionOutcome(
        hit=hit,
        achieved_depth_mm=depth,
        depth_ok=depth_ok,
        in_pith=in_pith,
        insertion_height_cm=height_cm,
        height_ok=height_ok,
        lateral_offset_mm=residual_offset_mm,
        insertion_angle_deg=insertion_angle_deg,
    )


def extend_to_insert(state: GripperState, cfg: KinematicsConfig) -> GripperState:
    return state.moved(cfg, cfg.stroke_mm)


def retract_waypoints(state: GripperState, cfg: KinematicsConfig) -> list[GripperState]:
    """Sensor withdrawn first (fingers still closed), then fingers opened."""
    if not math.isclose(state.extension_mm, cfg.stroke_mm):
        raise ValueError("retract_and_release expects the actuator at full stroke")
    return [state.moved(cfg, cfg.grasp_phase_end_mm), state.moved(cfg, cfg.lever_phase_end_mm)]


def retract_and_release(state: GripperState, cfg: KinematicsConfig) -> GripperState:
    return retract_waypoints(state, cfg)[-1]
