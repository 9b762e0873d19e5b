"""End-to-end insertion mission.

One trial per sampling location::

    Stow -> [Replace -> Calibrate] -> Scan -> Select -> Approach -> Sweep
         -> AlignInsert -> Grasp -> Insert -> Read -> Retract -> AdvanceBase

Replace runs when the gripper has no sensor or the loaded one has reached
``replace_every`` insertions. Aborts go through ``Failed(stage, reason)`` and
then straight to AdvanceBase. An empty magazine ends the mission.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any, NamedTuple

import numpy as np

from .calibration import (
    CalibrationStation,
    SensorResponseModel,
    SensorVariation,
    SimClock,
    ZeroSlope,
    estimate_concentration,
    maintenance_sequence,
    read_voltage,
    sample_response,
    wear_step,
)
from .exchange import (
    ArmErrorModel,
    ExchangeStation,
    FunnelConfig,
    Location,
    Magazine,
    MagazineEmpty,
    SensorUnit,
    replace_sequence,
)
from .geometry import (
    FieldGenConfig,
    FieldLayout,
    SensorGeometry,
    StalkInstance,
    apparent_width,
    nitrate_at_height,
)
from .gripper import (
    GripperError,
    GripperState,
    KinematicsConfig,
    StalkMissed,
    extend_to_insert,
    grasp,
    insert,
    retract_and_release,
)
from .perception import (
    DetectionModel,
    SelectionWeights,
    SweepPlan,
    angle_error_to_optimal,
    bearing_deg,
    scan,
    select_stalk,
    sweep_select,
)


class Stage(str, enum.Enum):
    STOW = "Stow"
    SCAN = "Scan"
    SELECT = "Select"
    APPROACH = "Approach"
    SWEEP = "Sweep"
    ALIGN_INSERT = "AlignInsert"
    GRASP = "Grasp"
    INSERT = "Insert"
    READ = "Read"
    RETRACT = "Retract"
    REPLACE = "Replace"
    CALIBRATE = "Calibrate"
    ADVANCE_BASE = "AdvanceBase"
    DONE = "Done"


@dataclass(frozen=True)
class Failed:
    stage: Stage
    reason: str


State = Stage | Failed

STAGE_DURATION_S = {
    Stage.STOW: 2.0,
    Stage.SCAN: 1.0,
    Stage.SELECT: 0.5,
    Stage.APPROACH: 4.0,
    Stage.SWEEP: 6.0,
    Stage.ALIGN_INSERT: 3.0,
    Stage.GRASP: 2.0,
    Stage.INSERT: 2.0,
    Stage.READ: 10.0,
    Stage.RETRACT: 2.0,
    Stage.ADVANCE_BASE: 8.0,
}


@dataclass(frozen=True)
class SweepConfig:
    increment_deg: float = 15.0
    n_views: int = 3
    heading_noise_sigma_deg: float = 25.0


@dataclass(frozen=True)
class MissionConfig:
    replace_every: int = 5
    insertion_height_target_cm: float = 1.9
    height_noise_sigma_cm: float = 0.4
    n_stalks: int = 30
    load_on_start: bool = True
    magazine_capacity: int = 6
    base_standoff_m: float = 0.3
    gradient_model: str = "linear"
    nitrate_decay_per_cm: float = 0.04

    def __post_init__(self):
        if self.replace_every < 1:
            raise ValueError("replace_every must be >= 1")
        lo, hi = SensorGeometry().insertion_height_band_cm
        if not lo <= self.insertion_height_target_cm <= hi:
            raise ValueError(f"insertion_height_target_cm must lie in [{lo}, {hi}]")
        if self.height_noise_sigma_cm < 0:
            raise ValueError("height_noise_sigma_cm must be >= 0")
        if self.magazine_capacity < 1 or self.n_stalks < 0:
            raise ValueError("magazine_capacity must be >= 1 and n_stalks >= 0")
        if self.gradient_model not in ("linear", "compound"):
            raise ValueError("gradient_model must be 'linear' or 'compound'")


@dataclass(frozen=True)
class SimConfig:
    """Every model knob a mission needs, one frozen section per module."""

    field_gen: FieldGenConfig = field(default_factory=FieldGenConfig)
    sensor_geometry: SensorGeometry = field(default_factory=SensorGeometry)
    kinematics: KinematicsConfig = field(default_factory=KinematicsConfig)
    funnel: FunnelConfig = field(default_factory=FunnelConfig)
    arm_error: ArmErrorModel = field(default_factory=ArmErrorModel)
    sensor: SensorResponseModel = field(default_factory=SensorResponseModel)
    sensor_variation: SensorVariation | None = field(default_factory=SensorVariation)
    station: CalibrationStation = field(default_factory=CalibrationStation)
    detection: DetectionModel = field(default_factory=DetectionModel)
    selection: SelectionWeights = field(default_factory=SelectionWeights)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    mission: MissionConfig = field(default_factory=MissionConfig)
    load_retries: int = 1


@dataclass
class TrialRecord:
    trial: int
    stalk_id: int
    target_stalk_id: int | None = None
    detected: bool = False
    grasped: bool = False
    inserted: bool = False
    depth_ok: bool = False
    in_pith: bool = False
    height_ok: bool = False
    chosen_angle: float | None = None
    angle_error_deg: float | None = None
    lateral_offset_mm: float | None = None
    achieved_depth_mm: float | None = None
    insertion_height_cm: float | None = None
    nitrate_true_ppm: float | None = None
    nitrate_est_ppm: float | None = None
    reading_valid: bool = False
    sensor_id: str | None = None
    failure_stage: str | None = None
    failure_reason: str | None = None
    events: list[dict] = field(default_factory=list)

    CSV_FIELDS = (
        "trial", "stalk_id", "target_stalk_id", "detected", "grasped", "inserted", "depth_ok",
        "in_pith", "height_ok", "chosen_angle", "angle_error_deg", "lateral_offset_mm",
        "achieved_depth_mm", "insertion_height_cm", "nitrate_true_ppm", "nitrate_est_ppm",
        "reading_valid", "sensor_id", "failure_stage", "failure_reason",
    )

    def staging_ok(self) -> bool:
        chain = (self.detected, self.grasped, self.inserted, self.depth_ok, self.in_pith)
        return all(earlier or not later for earlier, later in zip(chain, chain[1:]))

    def row(self) -> dict[str, Any]:
        return {k: getattr(self, k) for k in self.CSV_FIELDS}


class NitrateReading(NamedTuple):
    true_ppm: float
    est_ppm: float | None
    valid: bool
    flag: str | None


def nitrate_reading(sensor: SensorUnit, stalk: StalkInstance, height_cm: float, rng: np.random.Generator | None,
                    decay_per_cm: float = 0.04, gradient_model: str = "linear") -> NitrateReading:
    true_ppm = nitrate_at_height(stalk.ground_nitrate_ppm, height_cm, decay_per_cm, gradient_model)
    v = read_voltage(sensor.response, true_ppm, rng)
    rec = sensor.calibration
    if rec is None:
        return NitrateReading(true_ppm, None, False, "uncalibrated")
    try:
        est = estimate_concentration(rec.fitted_slope, rec.fitted_intercept, v).ppm
    except ZeroSlope:
        return NitrateReading(true_ppm, None, False, "zero_slope")
    if not rec.passed:
        return NitrateReading(true_ppm, est, False, "calibration_" + rec.outcome.value)
    return NitrateReading(true_ppm, est, True, None)


@dataclass
class _TrialScratch:
    record: TrialRecord
    base_pose: tuple[float, float]
    detections: list = field(default_factory=list)
    selected: Any = None
    stalk: StalkInstance | None = None
    heading_deg: float = 0.0
    chosen_angle: float = 0.0
    approach_offset_mm: float = 0.0
    residual_mm: float = 0.0
    outcome: Any = None


@dataclass
class MissionContext:
    cfg: SimConfig
    layout: FieldLayout
    rng: np.random.Generator
    station: ExchangeStation
    gripper: GripperState
    clock: SimClock
    records: list[TrialRecord] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    trial_index: int = 0
    replacements: int = 0
    calibrations: int = 0
    termination: str | None = None
    trial: _TrialScratch | None = None

    @property
    def sensor(self) -> SensorUnit | None:
        sid = self.gripper.loaded_sensor
        return None if sid is None else self.station.sensors[sid]

    @property
    def n_trials(self) -> int:
        return min(self.cfg.mission.n_stalks, len(self.layout.stalks))

    def emit(self, stage: Stage | str, kind: str, **data) -> dict:
        ev = {
            "seq": len(self.events),
            "t_s": round(self.clock.now_s, 6),
            "trial": self.trial_index,
            "stage": stage.value if isinstance(stage, Stage) else stage,
            "kind": kind,
        }
        if data:
            ev["data"] = data
        self.events.append(ev)
        if self.trial is not None:
            self.trial.record.events.append(ev)
        return ev


def new_context(cfg: SimConfig, field_layout: FieldLayout, seed: int | np.random.SeedSequence) -> MissionContext:
    rng = np.random.default_rng(seed)
    clock = SimClock()
    sensors = [
        SensorUnit(f"S{i:02d}", sample_response(cfg.sensor, cfg.sensor_variation, rng))
        for i in range(cfg.mission.magazine_capacity)
    ]
    station = ExchangeStation(
        Magazine.stocked(sensors, cfg.mission.magazine_capacity),
        kin=cfg.kinematics,
        funnel=cfg.funnel,
        load_retries=cfg.load_retries,
        clock=clock,
    )
    gripper = GripperState.at(cfg.kinematics, 0.0)
    if not cfg.mission.load_on_start:
        pre = SensorUnit("S-init", sample_response(cfg.sensor, cfg.sensor_variation, rng))
        station.register(pre)
        pre.move(Location.GRIPPER)
        gripper = gripper.moved(cfg.kinematics, cfg.kinematics.lever_phase_end_mm).with_sensor(pre.id)
        maintenance_sequence(pre, cfg.station, rng, clock)
    return MissionContext(cfg, field_layout, rng, station, gripper, clock)


def sampling_pose(field_layout: FieldLayout, stalk: StalkInstance, standoff_m: float) -> tuple[float, float]:
    """Arm position beside ``stalk``, offset toward the middle of the rows."""
    mid = 0.5 * (field_layout.rows[0] + field_layout.rows[-1])
    sign = 1.0 if stalk.base_position_m[1] <= mid else -1.0
    return stalk.base_position_m[0], stalk.base_position_m[1] + sign * standoff_m


def _needs_replace(ctx: MissionContext) -> bool:
    s = ctx.sensor
    return s is None or ctx.gripper.lever_hooked is False or s.insert_count >= ctx.cfg.mission.replace_every


def _stalk_by_id(ctx: MissionContext, sid: int) -> StalkInstance:
    return ctx.layout.stalks[sid] if ctx.layout.stalks[sid].id == sid else next(s for s in ctx.layout.stalks if s.id == sid)


def step(state: State, ctx: MissionContext, rng: np.random.Generator | None = None) -> tuple[State, list[dict]]:
    """Run one stage; returns the next state and the events it emitted."""
    rng = ctx.rng if rng is None else rng
    n0 = len(ctx.events)
    if isinstance(state, Failed):
        nxt = _failed(ctx, state)
    else:
        nxt = _STEPS[state](ctx, rng)
    return nxt, ctx.events[n0:]


def _advance_clock(ctx: MissionContext, stage: Stage) -> None:
    ctx.clock.advance(STAGE_DURATION_S.get(stage, 0.0))


def _stow(ctx: MissionContext, rng) -> State:
    _advance_clock(ctx, Stage.STOW)
    if ctx.trial_index >= ctx.n_trials:
        ctx.termination = "complete"
        ctx.emit(Stage.STOW, "mission_complete", trials=len(ctx.records))
        return Stage.DONE
    stalk = ctx.layout.stalks[ctx.trial_index]
    pose = sampling_pose(ctx.layout, stalk, ctx.cfg.mission.base_standoff_m)
    ctx.trial = _TrialScratch(TrialRecord(ctx.trial_index, stalk.id), pose)
    ctx.emit(Stage.STOW, "trial_start", stalk_id=stalk.id, base_pose=list(pose))
    return Stage.REPLACE if _needs_replace(ctx) else Stage.SCAN


def _replace(ctx: MissionContext, rng) -> State:
    try:
        ctx.gripper, rec = replace_sequence(ctx.gripper, ctx.station, ctx.cfg.arm_error, rng)
    except MagazineEmpty:
        ctx.termination = "magazine_empty"
        ctx.emit(Stage.REPLACE, "magazine_empty")
        ctx.trial = None
        return Stage.DONE
    ctx.replacements += 1
    ctx.emit(Stage.REPLACE, "replacement", **rec.to_dict())
    if not rec.success:
        return Failed(Stage.REPLACE, "load_failed")
    return Stage.CALIBRATE


def _calibrate(ctx: MissionContext, rng) -> State:
    rec = maintenance_sequence(ctx.sensor, ctx.cfg.station, rng, ctx.clock)
    ctx.calibrations += 1
    ctx.emit(Stage.CALIBRATE, "calibration", **rec.to_dict())
    return Stage.SCAN


def _scan(ctx: MissionContext, rng) -> State:
    _advance_clock(ctx, Stage.SCAN)
    t = ctx.trial
    t.record.sensor_id = ctx.gripper.loaded_sensor
    t.detections = scan(ctx.layout, t.base_pose, ctx.cfg.detection, rng)
    ctx.emit(Stage.SCAN, "scan", n_detections=len(t.detections),
             n_phantom=sum(d.phantom for d in t.detections))
    return Stage.SELECT


def _select(ctx: MissionContext, rng) -> State:
    _advance_clock(ctx, Stage.SELECT)
    t = ctx.trial
    if not t.detections:
        return Failed(Stage.SELECT, "no_detections")
    det = select_stalk(t.detections, ctx.cfg.selection, ctx.cfg.detection.max_detect_range_m)
    t.selected = det
    t.record.detected = not det.phantom
    if not det.phantom:
        t.stalk = _stalk_by_id(ctx, det.target_id)
        t.record.target_stalk_id = det.target_id
    ctx.emit(Stage.SELECT, "select", **det.to_dict())
    return Stage.APPROACH


def _approach(ctx: MissionContext, rng) -> State:
    _advance_clock(ctx, Stage.APPROACH)
    t = ctx.trial
    t.heading_deg = bearing_deg(t.base_pose, t.selected.est_position_m)
    ctx.emit(Stage.APPROACH, "approach", heading_deg=t.heading_deg)
    return Stage.SWEEP


def _sweep(ctx: MissionContext, rng) -> State:
    _advance_clock(ctx, Stage.SWEEP)
    t = ctx.trial
    sw = ctx.cfg.sweep
    noise = float(rng.normal(0.0, sw.heading_noise_sigma_deg)) if sw.heading_noise_sigma_deg > 0 else 0.0
    start = (t.heading_deg + noise) % 360.0
    plan = SweepPlan(start, sw.increment_deg, sw.n_views)
    if t.stalk is None:
        t.chosen_angle, width = start, t.selected.est_width_mm
    else:
        t.chosen_angle, width = sweep_select(t.stalk, plan, ctx.cfg.detection, rng)
        t.record.angle_error_deg = angle_error_to_optimal(t.chosen_angle, t.stalk.cross_section)
    t.record.chosen_angle = t.chosen_angle
    ctx.emit(Stage.SWEEP, "sweep", start_angle=start, chosen_angle=t.chosen_angle, width_mm=width)
    return Stage.ALIGN_INSERT


def _align_insert(ctx: MissionContext, rng) -> State:
    _advance_clock(ctx, Stage.ALIGN_INSERT)
    t = ctx.trial
    r = math.radians(t.chosen_angle)
    nx, ny = -math.sin(r), math.cos(r)
    est = t.selected.est_position_m
    if t.stalk is None:
        nearest = min(ctx.layout.stalks, key=lambda s: math.dist(s.base_position_m, est))
        true = nearest.base_position_m
    else:
        true = t.stalk.base_position_m
    # gripper centre sits on the estimate; offset of the true centre from it, mm
    t.approach_offset_mm = 1000.0 * ((true[0] - est[0]) * nx + (true[1] - est[1]) * ny)
    ctx.emit(Stage.ALIGN_INSERT, "align", approach_offset_mm=t.approach_offset_mm)
    return Stage.GRASP


def _grasp(ctx: MissionContext, rng) -> State:
    _advance_clock(ctx, Stage.GRASP)
    t = ctx.trial
    if t.stalk is None:
        ctx.emit(Stage.GRASP, "grasp_failed", error="StalkMissed")
        return Failed(Stage.GRASP, "StalkMissed")
    diameter = apparent_width(t.stalk.cross_section, t.chosen_angle)
    try:
        t.residual_mm = grasp(ctx.cfg.kinematics, t.approach_offset_mm, diameter, rng)
    except GripperError as exc:
        ctx.emit(Stage.GRASP, "grasp_failed", error=type(exc).__name__)
        return Failed(Stage.GRASP, type(exc).__name__)
    ctx.gripper = ctx.gripper.moved(ctx.cfg.kinematics, ctx.cfg.kinematics.grasp_phase_end_mm)
    t.record.grasped = True
    ctx.emit(Stage.GRASP, "grasp", residual_mm=t.residual_mm, diameter_mm=diameter)
    return Stage.INSERT


def _insert(ctx: MissionContext, rng) -> State:
    _advance_clock(ctx, Stage.INSERT)
    t, m = ctx.trial, ctx.cfg.mission
    sigma = ctx.cfg.arm_error.sigma_insert_offset_mm
    offset = t.residual_mm + (float(rng.normal(0.0, sigma)) if sigma > 0 else 0.0)
    height = m.insertion_height_target_cm
    if m.height_noise_sigma_cm > 0:
        height = max(0.0, height + float(rng.normal(0.0, m.height_noise_sigma_cm)))
    ctx.gripper = extend_to_insert(ctx.gripper, ctx.cfg.kinematics)
    out = insert(ctx.gripper, t.stalk, t.chosen_angle, offset, height, ctx.cfg.sensor_geometry, ctx.cfg.kinematics)
    sensor = ctx.sensor
    wear_step(sensor, rng)
    t.outcome = out
    rec = t.record
    rec.inserted, rec.depth_ok, rec.in_pith, rec.height_ok = out.hit, out.depth_ok, out.in_pith, out.height_ok
    rec.lateral_offset_mm = offset
    rec.achieved_depth_mm = out.achieved_depth_mm
    rec.insertion_height_cm = height
    rec.sensor_id = sensor.id
    ctx.emit(Stage.INSERT, "insert", hit=out.hit, depth_mm=out.achieved_depth_mm, depth_ok=out.depth_ok,
             in_pith=out.in_pith, height_cm=height, offset_mm=offset, force_n=out.force_n,
             sensor_id=sensor.id, insert_count=sensor.insert_count)
    return Stage.READ if out.hit else Stage.RETRACT


def _read(ctx: MissionContext, rng) -> State:
    _advance_clock(ctx, Stage.READ)
    t, m = ctx.trial, ctx.cfg.mission
    r = nitrate_reading(ctx.sensor, t.stalk, t.record.insertion_height_cm, rng, m.nitrate_decay_per_cm,
                        m.gradient_model)
    t.record.nitrate_true_ppm, t.record.nitrate_est_ppm, t.record.reading_valid = r.true_ppm, r.est_ppm, r.valid
    ctx.emit(Stage.READ, "reading", true_ppm=r.true_ppm, est_ppm=r.est_ppm, valid=r.valid, flag=r.flag)
    return Stage.RETRACT


def _retract(ctx: MissionContext, rng) -> State:
    _advance_clock(ctx, Stage.RETRACT)
    ctx.gripper = retract_and_release(ctx.gripper, ctx.cfg.kinematics)
    ctx.emit(Stage.RETRACT, "retract", extension_mm=ctx.gripper.extension_mm)
    return Stage.ADVANCE_BASE


def _failed(ctx: MissionContext, state: Failed) -> State:
    rec = ctx.trial.record
    rec.failure_stage, rec.failure_reason = state.stage.value, state.reason
    ctx.emit("Failed", "trial_failed", failed_stage=state.stage.value, reason=state.reason)
    return Stage.ADVANCE_BASE


def _advance_base(ctx: MissionContext, rng) -> State:
    _advance_clock(ctx, Stage.ADVANCE_BASE)
    rec = ctx.trial.record
    ctx.emit(Stage.ADVANCE_BASE, "trial_end", detected=rec.detected, grasped=rec.grasped,
             inserted=rec.inserted, depth_ok=rec.depth_ok, in_pith=rec.in_pith)
    ctx.records.append(rec)
    ctx.trial = None
    ctx.trial_index += 1
    return Stage.STOW


_STEPS = {
    Stage.STOW: _stow,
    Stage.REPLACE: _replace,
    Stage.CALIBRATE: _calibrate,
    Stage.SCAN: _scan,
    Stage.SELECT: _select,
    Stage.APPROACH: _approach,
    Stage.SWEEP: _sweep,
    Stage.ALIGN_INSERT: _align_insert,
    Stage.GRASP: _grasp,
    Stage.INSERT: _insert,
    Stage.READ: _read,
    Stage.RETRACT: _retract,
    Stage.ADVANCE_BASE: _advance_base,
}


@dataclass
class MissionResult:
    records: list[TrialRecord]
    events: list[dict]
    termination: str
    replacements: int
    calibrations: int

    def summary(self) -> dict:
        return {
            "trials": len(self.records),
            "termination": self.termination,
            "replacements": self.replacements,
            "calibrations": self.calibrations,
        }


def run_mission(field_layout: FieldLayout, cfg: SimConfig, seed: int | np.random.SeedSequence, max_steps: int = 100_000) -> MissionResult:
    ctx = new_context(cfg, field_layout, seed)
    state: State = Stage.STOW
    for _ in range(max_steps):
        if state is Stage.DONE:
            break
        state, _ = step(state, ctx)
    else:
        raise RuntimeError("mission did not terminate")
    return MissionResult(ctx.records, ctx.events, ctx.termination, ctx.replacements, ctx.calibrations)
