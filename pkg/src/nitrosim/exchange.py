"""Sensor lifecycle: magazine, unload/wipe, funnel-aligned loading.

Loading relies on a tapered T-extrusion under each magazine slot. Its tip
carries ``tip_area_ratio`` of the full T cross-section, so with a linear taper
scaled equally in both axes the tip is ``sqrt(tip_area_ratio)`` of the slot
size and the gripper may be off by half the difference per axis. Inside that
window the taper aligns the slot exactly.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from . import kernels
from .calibration import CalibrationRecord, SensorResponseModel, SimClock
from .gripper import GripperState, KinematicsConfig, NoSensorLoaded


class ExchangeError(Exception):
    pass


class SlotEmpty(ExchangeError):
    pass


class GripperOccupied(ExchangeError):
    pass


class MagazineEmpty(ExchangeError):
    pass


class LeverStillHooked(ExchangeError):
    pass


class Location(str, enum.Enum):
    SLOT = "MagazineSlot"
    GRIPPER = "LoadedInGripper"
    BOX = "RetrievalBox"
    STUCK = "StuckInSlot"


@dataclass
class SensorUnit:
    id: str
    response: SensorResponseModel = field(default_factory=SensorResponseModel)
    insert_count: int = 0
    location: Location = Location.SLOT
    slot_index: int | None = None
    calibrated: bool = False
    calibration: CalibrationRecord | None = None

    def move(self, location: Location, slot_index: int | None = None) -> None:
        self.location = location
        self.slot_index = slot_index if location is Location.SLOT else None


@dataclass
class Magazine:
    slots: list[SensorUnit | None]
    retrieval_box: list[SensorUnit] = field(default_factory=list)
    flat_plate_present: bool = True

    def __post_init__(self):
        ids = [s.id for s in self.slots if s is not None] + [s.id for s in self.retrieval_box]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate sensor ids in magazine")
        for i, s in enumerate(self.slots):
            if s is not None:
                s.move(Location.SLOT, i)
        for s in self.retrieval_box:
            s.move(Location.BOX)

    @classmethod
    def stocked(cls, sensors: list[SensorUnit], capacity: int = 5) -> Magazine:
        if len(sensors) > capacity:
            raise ValueError("more sensors than slots")
        slots: list[SensorUnit | None] = list(sensors) + [None] * (capacity - len(sensors))
        return cls(slots)

    @property
    def capacity(self) -> int:
        return len(self.slots)

    def occupied(self) -> list[int]:
        return [i for i, s in enumerate(self.slots) if s is not None]

    def next_slot(self) -> int:
        occ = self.occupied()
        if not occ:
            raise MagazineEmpty("all magazine slots consumed")
        return occ[0]

    def restock_from_box(self) -> None:
        """Put retrieved sensors back into empty slots (bench testing only)."""
        for i in range(self.capacity):
            if self.slots[i] is None and self.retrieval_box:
                s = self.retrieval_box.pop(0)
                s.move(Location.SLOT, i)
                self.slots[i] = s


# --- funnel ---------------------------------------------------------------

@dataclass(frozen=True)
class FunnelConfig:
    slot_width_mm: float = 10.0
    slot_height_mm: float = 8.0
    tip_area_ratio: float = 0.18
    slot_tolerance_mm: float = 0.3
    contact_width_mm: float = 2.2
    contact_height_mm: float = 5.0

    def __post_init__(self):
        if not 0 < self.tip_area_ratio < 1:
            raise ValueError("tip_area_ratio must be in (0, 1)")
        if self.slot_tolerance_mm >= min(self.tolerance_mm):
            raise ValueError("funnel capture tolerance must exceed the bare slot tolerance")

    @property
    def tip_scale(self) -> float:
        return math.sqrt(self.tip_area_ratio)

    @property
    def tolerance_mm(self) -> tuple[float, float]:
        s = self.tip_scale
        return self.slot_width_mm * (1 - s) / 2.0, self.slot_height_mm * (1 - s) / 2.0


@dataclass(frozen=True)
class CaptureResult:
    captured: bool
    residual_mm: tuple[float, float]


def funnel_capture(cfg: FunnelConfig, dx_mm: float, dy_mm: float) -> CaptureResult:
    tx, ty = cfg.tolerance_mm
    if abs(dx_mm) <= tx and abs(dy_mm) <= ty:
        return CaptureResult(True, (0.0, 0.0))
    return CaptureResult(False, (dx_mm, dy_mm))


def capture_probability(cfg: FunnelConfig, sigma_xy_mm: float) -> float:
    """P(capture) for independent zero-mean Gaussian errors with std ``sigma_xy_mm`` per axis."""
    if sigma_xy_mm < 0:
        raise ValueError("sigma must be >= 0")
    if sigma_xy_mm == 0:
        return 1.0
    tx, ty = cfg.tolerance_mm
    return float((2 * norm.cdf(tx / sigma_xy_mm) - 1) * (2 * norm.cdf(ty / sigma_xy_mm) - 1))


def capture_rate_mc(cfg: FunnelConfig, sigma_xy_mm: float, n: int, rng: np.random.Generator) -> tuple[float, int]:
    """Monte Carlo capture fraction and count over ``n`` draws."""
    d = rng.normal(0.0, sigma_xy_mm, size=(2, n)) if sigma_xy_mm > 0 else np.zeros((2, n))
    tx, ty = cfg.tolerance_mm
    k = int(np.count_nonzero(kernels.funnel_capture(d[0], d[1], tx, ty)))
    return k / n, k


# --- arm error ------------------------------------------------------------

@dataclass(frozen=True)
class ArmErrorModel:
    sigma_xy_mm: float = 1.0
    sigma_insert_offset_mm: float = 4.5
    p_stuck: float = 0.1

    def __post_init__(self):
        if self.sigma_xy_mm < 0 or self.sigma_insert_offset_mm < 0:
            raise ValueError("arm error sigmas must be >= 0")
        if not 0 <= self.p_stuck <= 1:
            raise ValueError("p_stuck must be in [0, 1]")


# --- events ---------------------------------------------------------------

@dataclass(frozen=True)
class UnloadEvent:
    sensor_id: str
    stuck: bool
    t_s: float = 0.0


@dataclass(frozen=True)
class WipeEvent:
    cleared_sensor: str | None
    t_s: float = 0.0


@dataclass(frozen=True)
class LoadEvent:
    slot_index: int
    sensor_id: str
    success: bool
    attempts: list[tuple[float, float]]
    collision_aborts: int
    t_s: float = 0.0


@dataclass(frozen=True)
class ReplacementRecord:
    unload: UnloadEvent | None
    wipe: WipeEvent
    load: LoadEvent
    slot_index: int

    @property
    def success(self) -> bool:
        return self.load.success

    def substeps(self) -> list[tuple[str, float]]:
        steps = [] if self.unload is None else [("unload", self.unload.t_s)]
        return steps + [("wipe", self.wipe.t_s), ("load", self.load.t_s)]

    def to_dict(self) -> dict:
        return {
            "slot_index": self.slot_index,
            "unload": None if self.unload is None else {
                "sensor_id": self.unload.sensor_id, "stuck": self.unload.stuck, "t_s": self.unload.t_s},
            "wipe": {"cleared_sensor": self.wipe.cleared_sensor, "t_s": self.wipe.t_s},
            "load": {
                "sensor_id": self.load.sensor_id,
                "success": self.load.success,
                "attempts": [list(a) for a in self.load.attempts],
                "collision_aborts": self.load.collision_aborts,
                "t_s": self.load.t_s,
            },
            "success": self.success,
        }


@dataclass
class ExchangeStation:
    """Everything the exchange steps mutate: the magazine and a sensor registry."""

    magazine: Magazine
    kin: KinematicsConfig = field(default_factory=KinematicsConfig)
    funnel: FunnelConfig = field(default_factory=FunnelConfig)
    load_retries: int = 1
    step_duration_s: float = 5.0
    clock: SimClock = field(default_factory=SimClock)
    sensors: dict[str, SensorUnit] = field(default_factory=dict)

    def __post_init__(self):
        for s in self.magazine.slots:
            if s is not None:
                self.sensors[s.id] = s
        for s in self.magazine.retrieval_box:
            self.sensors[s.id] = s

    def tick(self) -> float:
        return self.clock.advance(self.step_duration_s)

    def register(self, sensor: SensorUnit) -> None:
        if sensor.id in self.sensors and self.sensors[sensor.id] is not sensor:
            raise ValueError(f"duplicate sensor id {sensor.id}")
        self.sensors[sensor.id] = sensor

    def census(self) -> dict[Location, int]:
        counts = {loc: 0 for loc in Location}
        for s in self.sensors.values():
            counts[s.location] += 1
        return counts


def unload(gripper: GripperState, station: ExchangeStation, arm: ArmErrorModel,
           rng: np.random.Generator) -> tuple[GripperState, UnloadEvent]:
    """Retract fully over the retrieval box; the frame knocks the sensor out.

    A stuck sensor stays in the slot with the lever open until wiped.
    """
    if gripper.loaded_sensor is None:
        raise NoSensorLoaded("nothing to unload")
    sensor = station.sensors[gripper.loaded_sensor]
    opened = gripper.moved(station.kin, 0.0)
    stuck = bool(rng.random() < arm.p_stuck)
    t = station.tick()
    if stuck:
        sensor.move(Location.STUCK)
        return opened, UnloadEvent(sensor.id, True, t)
    sensor.move(Location.BOX)
    station.magazine.retrieval_box.append(sensor)
    return opened.with_sensor(None), UnloadEvent(sensor.id, False, t)


def wipe_clear(gripper: GripperState, station: ExchangeStation) -> tuple[GripperState, WipeEvent]:
    """Sweep the slot against the flat plate; always leaves the gripper empty."""
    t = station.tick()
    if gripper.loaded_sensor is None:
        return gripper, WipeEvent(None, t)
    if gripper.lever_hooked:
        raise LeverStillHooked("open the lever (retract fully) before wiping")
    sensor = station.sensors[gripper.loaded_sensor]
    sensor.move(Location.BOX)
    station.magazine.retrieval_box.append(sensor)
    return gripper.with_sensor(None), WipeEvent(sensor.id, t)


def load(gripper: GripperState, station: ExchangeStation, slot_index: int, arm: ArmErrorModel,
         rng: np.random.Generator) -> tuple[GripperState, LoadEvent]:
    if gripper.loaded_sensor is not None:
        raise GripperOccupied(f"gripper already holds {gripper.loaded_sensor}")
    sensor = station.magazine.slots[slot_index]
    if sensor is None:
        raise SlotEmpty(f"slot {slot_index} is empty")
    attempts: list[tuple[float, float]] = []
    aborts = 0
    for _ in range(1 + station.load_retries):
        if arm.sigma_xy_mm > 0:
            dx, dy = (float(v) for v in rng.normal(0.0, arm.sigma_xy_mm, size=2))
        else:
            dx, dy = 0.0, 0.0
        attempts.append((dx, dy))
        if funnel_capture(station.funnel, dx, dy).captured:
            station.magazine.slots[slot_index] = None
            sensor.move(Location.GRIPPER)
            hooked = gripper.moved(station.kin, station.kin.lever_phase_end_mm).with_sensor(sensor.id)
            return hooked, LoadEvent(slot_index, sensor.id, True, attempts, aborts, station.tick())
        aborts += 1
    return gripper, LoadEvent(slot_index, sensor.id, False, attempts, aborts, station.tick())


def replace_sequence(gripper: GripperState, station: ExchangeStation, arm: ArmErrorModel,
                     rng: np.random.Generator) -> tuple[GripperState, ReplacementRecord]:
    """Unload (if loaded), wipe, load the first occupied slot."""
    slot = station.magazine.next_slot()
    unload_ev = None
    if gripper.loaded_sensor is not None:
        gripper, unload_ev = unload(gripper, station, arm, rng)
    else:
        gripper = gripper.moved(station.kin, 0.0)
    gripper, wipe_ev = wipe_clear(gripper, station)
    gripper, load_ev = load(gripper, station, slot, arm, rng)
    return gripper, ReplacementRecord(unload_ev, wipe_ev, load_ev, slot)
