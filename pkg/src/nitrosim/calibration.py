"""Sensor response, two-point calibration and wear.

Voltage falls linearly with nitrate concentration for a healthy sensor. Worn
sensors fall into a persistent degenerate state: a flat response (the two
calibration voltages match) or an inverted one (the high solution reads
higher). Calibration uses only the 200 and 2000 ppm solutions; the 0 ppm
deionised water is a cleaning step before and after.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, NamedTuple

import numpy as np

if TYPE_CHECKING:
    from .exchange import SensorUnit

# Fitted against the 40-run calibration campaign (62.5 % pass rate, 47 % of
# failures in the last quarter); see nitrosim.fitting.fit_wear_model.
FITTED_WEAR_BASE_P = 0.0
FITTED_WEAR_PER_INSERT_P = 0.01732
FITTED_INSERTS_BEFORE_RUN = 5


class FailureMode(str, enum.Enum):
    FLAT = "flat"
    INVERTED = "inverted"


class CalibrationOutcome(str, enum.Enum):
    PASS = "Pass"
    FAIL_FLAT = "FailFlat"
    FAIL_INVERTED = "FailInverted"


class ZeroSlope(ValueError):
    pass


@dataclass
class SensorResponseModel:
    true_slope_v_per_ppm: float = -1e-4
    true_intercept_v: float = 0.4
    noise_sigma_v: float = 0.005
    wear_base_fail_p: float = FITTED_WEAR_BASE_P
    wear_per_insert_p: float = FITTED_WEAR_PER_INSERT_P
    p_flat_given_failure: float = 0.5
    failure: FailureMode | None = None

    def __post_init__(self):
        if self.noise_sigma_v < 0:
            raise ValueError("noise_sigma_v must be >= 0")
        for name in ("wear_base_fail_p", "wear_per_insert_p", "p_flat_given_failure"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.failure is not None:
            self.failure = FailureMode(self.failure)

    def failure_probability(self, insert_count: int) -> float:
        return min(1.0, self.wear_base_fail_p + self.wear_per_insert_p * insert_count)


@dataclass(frozen=True)
class CalibrationStation:
    concentrations_ppm: tuple[float, ...] = (0.0, 200.0, 2000.0)
    dwell_s: float = 15.0
    pumps: int = 3
    flat_epsilon_v: float = 0.01

    def __post_init__(self):
        c = self.concentrations_ppm
        if c[0] != 0:
            raise ValueError("first solution must be deionised water (0 ppm)")
        if any(b <= a for a, b in zip(c, c[1:])):
            raise ValueError("concentrations must be strictly increasing")
        if self.pumps != len(c):
            raise ValueError("one pump per solution")

    @property
    def c_low(self) -> float:
        return self.concentrations_ppm[1]

    @property
    def c_high(self) -> float:
        return self.concentrations_ppm[-1]


@dataclass
class CalibrationRecord:
    sensor_id: str
    v_low: float
    v_high: float
    fitted_slope: float
    fitted_intercept: float
    outcome: CalibrationOutcome
    v_clean: tuple[float, float] = (float("nan"), float("nan"))
    started_s: float = 0.0
    finished_s: float = 0.0

    @property
    def passed(self) -> bool:
        return self.outcome is CalibrationOutcome.PASS

    def to_dict(self) -> dict:
        return {
            "sensor_id": self.sensor_id,
            "v_low": self.v_low,
            "v_high": self.v_high,
            "fitted_slope": self.fitted_slope,
            "fitted_intercept": self.fitted_intercept,
            "outcome": self.outcome.value,
            "v_clean": list(self.v_clean),
            "started_s": self.started_s,
            "finished_s": self.finished_s,
        }


def read_voltage(sensor: SensorResponseModel, concentration_ppm: float, rng: np.random.Generator | None = None) -> float:
    if concentration_ppm < 0:
        raise ValueError("concentration must be >= 0")
    if sensor.failure is FailureMode.FLAT:
        v = sensor.true_intercept_v
    elif sensor.failure is FailureMode.INVERTED:
        v = sensor.true_intercept_v - sensor.true_slope_v_per_ppm * concentration_ppm
    else:
        v = sensor.true_intercept_v + sensor.true_slope_v_per_ppm * concentration_ppm
    if sensor.noise_sigma_v > 0 and rng is not None:
        v += float(rng.normal(0.0, sensor.noise_sigma_v))
    return v


def two_point_calibrate(v_low: float, v_high: float, c_low: float = 200.0, c_high: float = 2000.0) -> tuple[float, float]:
    """Line through ``(c_low, v_low)`` and ``(c_high, v_high)``: ``(slope, intercept)``."""
    if c_low == c_high:
        raise ValueError("calibration concentrations must differ")
    slope = (v_high - v_low) / (c_high - c_low)
    return slope, v_low - slope * c_low


class Estimate(NamedTuple):
    ppm: float
    clamped: bool


def estimate_concentration(slope: float, intercept: float, v: float) -> Estimate:
    if slope == 0:
        raise ZeroSlope("cannot invert a zero-slope calibration")
    c = (v - intercept) / slope
    if c < 0:
        return Estimate(0.0, True)
    return Estimate(c, False)


def validate_calibration(v_low: float, v_high: float, flat_epsilon_v: float = 0.01) -> CalibrationOutcome:
    if abs(v_low - v_high) <= flat_epsilon_v:
        return CalibrationOutcome.FAIL_FLAT
    if v_high > v_low:
        return CalibrationOutcome.FAIL_INVERTED
    return CalibrationOutcome.PASS


@dataclass
class SimClock:
    now_s: float = 0.0

    def advance(self, dt_s: float) -> float:
        self.now_s += dt_s
        return self.now_s


def maintenance_sequence(
    sensor: SensorUnit,
    station: CalibrationStation,
    rng: np.random.Generator | None = None,
    clock: SimClock | None = None,
) -> CalibrationRecord:
    """Clean, read low, read high, clean; fit and validate.

    Marks ``sensor.calibrated`` and stores the record on the sensor.
    """
    clock = clock if clock is not None else SimClock()
    start = clock.now_s
    resp = sensor.response
    readings = []
    for c in (0.0, station.c_low, station.c_high, 0.0):
        clock.advance(station.dwell_s)
        readings.append(read_voltage(resp, c, rng))
    v_clean0, v_low, v_high, v_clean1 = readings
    slope, intercept = two_point_calibrate(v_low, v_high, station.c_low, station.c_high)
    outcome = validate_calibration(v_low, v_high, station.flat_epsilon_v)
    record = CalibrationRecord(
        sensor_id=sensor.id,
        v_low=v_low,
        v_high=v_high,
        fitted_slope=slope,
        fitted_intercept=intercept,
        outcome=outcome,
        v_clean=(v_clean0, v_clean1),
        started_s=start,
        finished_s=clock.now_s,
    )
    sensor.calibrated = record.passed
    sensor.calibration = record
    return record


def wear_step(sensor: SensorUnit, rng: np.random.Generator) -> SensorUnit:
    """Count one insertion and maybe tip the sensor into a degenerate state.

    The hazard uses the updated insert count. Failure is absorbing.
    """
    sensor.insert_count += 1
    resp = sensor.response
    u = rng.random()
    if resp.failure is None and u < resp.failure_probability(sensor.insert_count):
        flat = rng.random() < resp.p_flat_given_failure
        resp.failure = FailureMode.FLAT if flat else FailureMode.INVERTED
    return sensor


@dataclass(frozen=True)
class SensorVariation:
    """Sensor-to-sensor spread of the healthy response."""

    slope_range_v_per_ppm: tuple[float, float] = (-1.3e-4, -0.7e-4)
    intercept_range_v: tuple[float, float] = (0.35, 0.45)


def sample_response(template: SensorResponseModel, variation: SensorVariation | None,
                    rng: np.random.Generator) -> SensorResponseModel:
    if variation is None:
        return SensorResponseModel(**{**template.__dict__, "failure": None})
    slope = float(rng.uniform(*variation.slope_range_v_per_ppm))
    intercept = float(rng.uniform(*variation.intercept_range_v))
    return SensorResponseModel(
        true_slope_v_per_ppm=slope,
        true_intercept_v=intercept,
        noise_sigma_v=template.noise_sigma_v,
        wear_base_fail_p=template.wear_base_fail_p,
        wear_per_insert_p=template.wear_per_insert_p,
        p_flat_given_failure=template.p_flat_given_failure,
    )


@dataclass
class ProtocolResult:
    outcomes: list[CalibrationOutcome] = field(default_factory=list)
    run_sensor: list[int] = field(default_factory=list)
    records: list[CalibrationRecord] = field(default_factory=list)

    @property
    def n_runs(self) -> int:
        return len(self.outcomes)

    @property
    def pass_rate(self) -> float:
        return sum(o is CalibrationOutcome.PASS for o in self.outcomes) / self.n_runs

    def quarter_failures(self) -> list[int]:
        q = [0, 0, 0, 0]
        for i, o in enumerate(self.outcomes):
            if o is not CalibrationOutcome.PASS:
                q[min(3, 4 * i // self.n_runs)] += 1
        return q
