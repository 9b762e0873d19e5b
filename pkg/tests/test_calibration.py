from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nitrosim import kernels
from nitrosim.calibration import (
    CalibrationOutcome,
    CalibrationStation,
    FailureMode,
    SensorResponseModel,
    SimClock,
    ZeroSlope,
    estimate_concentration,
    maintenance_sequence,
    read_voltage,
    two_point_calibrate,
    validate_calibration,
    wear_step,
)
from nitrosim.exchange import SensorUnit

NOISELESS = dict(noise_sigma_v=0.0, wear_base_fail_p=0.0, wear_per_insert_p=0.0)


def healthy(**kw) -> SensorResponseModel:
    return SensorResponseModel(**{**NOISELESS, **kw})


def test_model_validation():
    with pytest.raises(ValueError):
        SensorResponseModel(noise_sigma_v=-1)
    with pytest.raises(ValueError):
        SensorResponseModel(wear_per_insert_p=1.5)
    assert SensorResponseModel(wear_base_fail_p=0.5, wear_per_insert_p=0.2).failure_probability(10) == 1.0


def test_station_validation():
    with pytest.raises(ValueError):
        CalibrationStation(concentrations_ppm=(10.0, 200.0, 2000.0))
    with pytest.raises(ValueError):
        CalibrationStation(concentrations_ppm=(0.0, 2000.0, 200.0))
    st_ = CalibrationStation()
    assert (st_.c_low, st_.c_high, st_.dwell_s) == (200.0, 2000.0, 15.0)


def test_read_voltage_examples():
    s = healthy()
    assert read_voltage(s, 200.0) == pytest.approx(0.38)
    assert read_voltage(s, 2000.0) == pytest.approx(0.20)
    flat = healthy(failure=FailureMode.FLAT)
    assert abs(read_voltage(flat, 200.0) - read_voltage(flat, 2000.0)) < 0.01
    inv = healthy(failure="inverted")
    assert read_voltage(inv, 2000.0) > read_voltage(inv, 200.0)
    with pytest.raises(ValueError):
        read_voltage(s, -1.0)


def test_read_voltage_noise_std():
    rng = np.random.default_rng(3)
    s = SensorResponseModel(noise_sigma_v=0.005)
    v = np.array([read_voltage(s, 1000.0, rng) for _ in range(10_000)])
    assert v.std(ddof=1) == pytest.approx(0.005, rel=0.05)


def test_two_point_examples():
    slope, intercept = two_point_calibrate(0.38, 0.20)
    assert slope == pytest.approx(-1e-4) and intercept == pytest.approx(0.4)
    assert two_point_calibrate(0.3, 0.3) == (0.0, 0.3)
    with pytest.raises(ValueError):
        two_point_calibrate(0.3, 0.2, 100.0, 100.0)


@given(st.floats(-5e-4, -1e-6), st.floats(0.1, 1.0))
def test_calibration_recovers_truth(slope, intercept):
    s = healthy(true_slope_v_per_ppm=slope, true_intercept_v=intercept)
    fs, fi = two_point_calibrate(read_voltage(s, 200.0), read_voltage(s, 2000.0))
    assert fs == pytest.approx(slope, rel=1e-12, abs=0)
    assert fi == pytest.approx(intercept, rel=1e-12, abs=1e-15)


@pytest.mark.parametrize("c", [0.0, 200.0, 1000.0, 2000.0])
def test_round_trip(c):
    s = healthy()
    fit = two_point_calibrate(read_voltage(s, 200.0), read_voltage(s, 2000.0))
    est = estimate_concentration(*fit, read_voltage(s, c))
    assert est.ppm == pytest.approx(c, rel=1e-9, abs=1e-9)


def test_estimate_examples():
    assert estimate_concentration(-1e-4, 0.4, 0.3) == pytest.approx((1000.0, False))
    assert estimate_concentration(-1e-4, 0.4, 0.4).ppm == 0.0
    assert estimate_concentration(-1e-4, 0.4, 0.45) == (0.0, True)
    with pytest.raises(ZeroSlope):
        estimate_concentration(0.0, 0.4, 0.3)


def test_validate_examples():
    assert validate_calibration(0.38, 0.20, 0.01) is CalibrationOutcome.PASS
    assert validate_calibration(0.300, 0.301, 0.01) is CalibrationOutcome.FAIL_FLAT
    assert validate_calibration(0.20, 0.38, 0.01) is CalibrationOutcome.FAIL_INVERTED


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0, 0.1))
def test_validate_partitions(v_low, v_high, eps):
    out = validate_calibration(v_low, v_high, eps)
    if out is CalibrationOutcome.PASS:
        assert abs(v_low - v_high) > eps and v_high < v_low
    elif out is CalibrationOutcome.FAIL_FLAT:
        assert abs(v_low - v_high) <= eps
    else:
        assert v_high > v_low + eps


def test_maintenance_noiseless_and_clock():
    unit = SensorUnit("A", healthy())
    clock = SimClock(100.0)
    rec = maintenance_sequence(unit, CalibrationStation(), np.random.default_rng(0), clock)
    assert rec.passed and unit.calibrated and unit.calibration is rec
    assert rec.fitted_slope == pytest.approx(-1e-4, rel=1e-12)
    assert rec.fitted_intercept == pytest.approx(0.4, rel=1e-12)
    assert clock.now_s == 160.0 and (rec.started_s, rec.finished_s) == (100.0, 160.0)
    assert rec.v_clean == (pytest.approx(0.4), pytest.approx(0.4))
    assert rec.to_dict()["outcome"] == "Pass"


def test_maintenance_failed_sensor_not_calibrated():
    unit = SensorUnit("A", healthy(failure=FailureMode.INVERTED))
    rec = maintenance_sequence(unit, CalibrationStation())
    assert rec.outcome is CalibrationOutcome.FAIL_INVERTED and not unit.calibrated


def test_wear_step_counts_and_constant_hazard():
    rng = np.random.default_rng(0)
    unit = SensorUnit("A", SensorResponseModel(wear_base_fail_p=0.0, wear_per_insert_p=0.0))
    for k in range(1, 50):
        wear_step(unit, rng)
        assert unit.insert_count == k and unit.response.failure is None
    r = SensorResponseModel(wear_base_fail_p=0.1, wear_per_insert_p=0.0)
    assert r.failure_probability(0) == r.failure_probability(1000) == 0.1


def test_wear_failure_is_absorbing():
    rng = np.random.default_rng(5)
    unit = SensorUnit("A", SensorResponseModel(noise_sigma_v=0.0, wear_base_fail_p=1.0, wear_per_insert_p=0.0))
    wear_step(unit, rng)
    mode = unit.response.failure
    assert mode is not None
    unit.response.wear_base_fail_p = 0.0
    for _ in range(100):
        wear_step(unit, rng)
        assert unit.response.failure is mode
        assert not maintenance_sequence(unit, CalibrationStation(), rng).passed


def test_failure_mode_split():
    rng = np.random.default_rng(9)
    modes = []
    for i in range(4000):
        unit = SensorUnit(str(i), SensorResponseModel(wear_base_fail_p=1.0, wear_per_insert_p=0.0))
        modes.append(wear_step(unit, rng).response.failure is FailureMode.FLAT)
    assert abs(np.mean(modes) - 0.5) <= 3 * math.sqrt(0.25 / 4000)


def test_pass_rate_non_increasing_in_noise():
    n = 10_000
    rates = []
    for sigma in (0.0, 0.005, 0.02, 0.1):
        rng = np.random.default_rng(11)
        s = SensorResponseModel(noise_sigma_v=sigma, wear_base_fail_p=0.0, wear_per_insert_p=0.0)
        ok = sum(validate_calibration(read_voltage(s, 200.0, rng), read_voltage(s, 2000.0, rng))
                 is CalibrationOutcome.PASS for _ in range(n))
        rates.append(ok / n)
    assert rates[0] == 1.0
    for hi, lo in zip(rates, rates[1:]):
        assert lo <= hi + 3 * math.sqrt(max(hi * (1 - hi), 1 / n) / n)
    assert rates[-1] < 0.95


def test_first_failures_cluster_late_under_weak_linear_wear():
    # first-failure density grows with the event index when the hazard is small
    u = np.random.default_rng(21).random((10_000, 40))
    first = kernels.first_failure(u, 0.0, 1e-4)
    failed = first[first >= 0]
    share = np.mean(failed >= 30)
    assert abs(share - 0.47) <= 0.1
    assert share == pytest.approx(355 / 820, abs=4 * math.sqrt(0.25 / len(failed)))


def test_fitted_wear_puts_few_first_failures_late():
    # with the hazard fitted to the pass rate most sensors have failed well before the end
    u = np.random.default_rng(22).random((10_000, 40))
    first = kernels.first_failure(u, 0.0, SensorResponseModel().wear_per_insert_p)
    assert np.mean(first[first >= 0] >= 30) < 0.1
