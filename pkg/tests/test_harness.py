from __future__ import annotations

import csv
import dataclasses
import json
import math

import numpy as np
import pytest
from scipy.stats import binomtest

from nitrosim.calibration import SensorResponseModel
from nitrosim.config import (
    ConfigError,
    ExperimentConfig,
    config_from_dict,
    config_to_dict,
    load_scenario,
    loads_config,
)
from nitrosim.exchange import FunnelConfig, capture_probability
from nitrosim.harness import experiments as ex
from nitrosim.harness.cli import main
from nitrosim.harness.stats import EmptyInput, funnel_from_counts, funnel_stats, wilson_interval
from nitrosim.mission import TrialRecord


def records(counts: tuple[int, ...], n: int) -> list[TrialRecord]:
    out = []
    for i in range(n):
        flags = [i < c for c in counts]
        out.append(TrialRecord(i, i, detected=flags[0], grasped=flags[1], inserted=flags[2],
                               depth_ok=flags[3], in_pith=flags[4], angle_error_deg=float(i)))
    return out


# --- statistics -----------------------------------------------------------

def test_wilson_examples():
    lo, hi = wilson_interval(16, 30)
    ref = binomtest(16, 30).proportion_ci(confidence_level=0.95, method="wilson")
    assert (lo, hi) == pytest.approx((ref.low, ref.high), abs=1e-9)
    # the uncorrected interval is [0.3614, 0.6977]; a quoted 0.699 upper bound is off in the third place
    assert round(lo, 3) == 0.361 and abs(hi - 0.699) < 2e-3
    assert wilson_interval(0, 10)[0] == 0.0 and wilson_interval(10, 10)[1] == 1.0
    with pytest.raises(EmptyInput):
        wilson_interval(0, 0)


def test_funnel_stats_field_counts():
    s = funnel_stats(records((29, 29, 23, 19, 16), 30))
    assert s.cumulative() == pytest.approx((0.967, 0.967, 0.767, 0.633, 0.533), abs=5e-4)
    assert s.conditional["insert"] == pytest.approx(23 / 29)
    assert s.within_45deg_n == 23 and s.within_45deg_fraction == pytest.approx(23 / 23)
    lo, hi = s.intervals["pith"]
    assert lo < 0.533 < hi


def test_funnel_stats_all_success_and_empty():
    assert funnel_stats(records((5,) * 5, 5)).cumulative() == (1.0,) * 5
    with pytest.raises(EmptyInput):
        funnel_stats([])
    with pytest.raises(EmptyInput):
        funnel_from_counts((0,) * 5, 0)


def test_funnel_stats_staging_inequality():
    batch = ex.run_batch(load_scenario("paper2024").sim, 20, 3)
    r = batch.stats().cumulative()
    assert all(a >= b for a, b in zip(r, r[1:]))


# --- config ---------------------------------------------------------------

def test_config_round_trip():
    cfg = load_scenario("paper2024")
    assert config_from_dict(config_to_dict(cfg)) == cfg
    assert config_from_dict(json.loads(json.dumps(config_to_dict(cfg)))) == cfg


def test_config_defaults():
    assert loads_config("") == ExperimentConfig()


@pytest.mark.parametrize("text, line, key", [
    ("[experiment]\nn_missions = 3\nbogus = 1\n", 3, "experiment.bogus"),
    ("[nope]\nx = 1\n", 1, "nope"),
    ("[arm_error]\n\nsigma_xy_mm = \"wide\"\n", 3, "arm_error.sigma_xy_mm"),
    ("[mission]\nreplace_every = 0\n", 1, "mission"),
])
def test_config_errors_carry_location(text, line, key):
    with pytest.raises(ConfigError) as info:
        loads_config(text)
    assert info.value.line == line and info.value.key == key
    assert f"line {line}" in str(info.value)


def test_config_syntax_error_line():
    with pytest.raises(ConfigError) as info:
        loads_config("[experiment]\nn_missions = = 3\n")
    assert info.value.line == 2


def test_unknown_scenario():
    with pytest.raises(ConfigError):
        load_scenario("nowhere")


# --- experiments ----------------------------------------------------------

def test_zero_noise_scenario_all_ones():
    cfg = load_scenario("zero_noise").with_overrides(n_missions=3)
    assert ex.run_experiments(cfg).stats.cumulative() == (1.0,) * 5


def test_report_is_reproducible():
    cfg = load_scenario("paper2024").with_overrides(n_missions=4, seed=5)
    a, b = ex.run_experiments(cfg), ex.run_experiments(cfg)
    assert a.to_json() == b.to_json() and a.trials_csv() == b.trials_csv() and a.events_jsonl() == b.events_jsonl()
    doc = json.loads(a.to_json())
    assert "out_dir" not in doc["config"]["experiment"]
    assert [m["seed"] for m in doc["per_mission"]] == [5, 6, 7, 8]


def test_replacement_trial_examples():
    assert ex.replacement_trial(50, 0.0, 1) == 50
    assert ex.replacement_trial(50, 1e4, 1) <= 1


def test_replacement_success_non_increasing_in_sigma():
    n = 400
    fr = [ex.replacement_trial(n, s, 9) / n for s in (0.0, 1.0, 2.0, 3.0, 5.0, 8.0)]
    for hi, lo in zip(fr, fr[1:]):
        assert lo <= hi + 3 * math.sqrt(max(hi * (1 - hi), 1 / n) / n)
    assert fr[0] == 1.0 and fr[-1] < 0.5


def test_calibration_noiseless_without_wear_always_passes():
    cfg = ExperimentConfig()
    sim = dataclasses.replace(cfg.sim, sensor=SensorResponseModel(noise_sigma_v=0.0, wear_base_fail_p=0.0,
                                                                  wear_per_insert_p=0.0))
    cfg = dataclasses.replace(cfg, sim=sim, protocol=dataclasses.replace(cfg.protocol, repetitions=5))
    summary = ex.calibration_campaign(cfg, seed=1)
    assert summary.mean_pass_rate == 1.0 and summary.quarter_failures == [0, 0, 0, 0]
    assert math.isnan(summary.fourth_quarter_share)


def test_protocol_mappings():
    p = ex.ProtocolConfig()
    assert [ex.protocol_sensor_index(r, p) for r in (0, 24, 25, 39)] == [0, 24, 0, 14]
    b = dataclasses.replace(p, mapping="blocked")
    idx = [ex.protocol_sensor_index(r, b) for r in range(40)]
    assert idx == sorted(idx) and set(idx) == set(range(25))


def test_funnel_analysis_agrees_with_closed_form():
    rows = ex.funnel_analysis(FunnelConfig(), (0.5, 2.0), 20_000, 3)
    for r in rows:
        assert r["analytic_p"] == capture_probability(FunnelConfig(), r["sigma"])
        assert abs(r["simulated_p"] - r["analytic_p"]) <= 3 * max(r["stderr"], 1e-12) + 1e-12


def test_sweep_analysis_summary():
    rows, summary = ex.sweep_analysis(load_scenario("paper2024").sim, 200, 1)
    assert len(rows) == 200 and 0 <= summary["within_45deg_fraction"] <= 1
    assert all(0 <= r["error_deg"] <= 90 for r in rows)


# --- command line ---------------------------------------------------------

def test_cli_simulate_writes_reproducible_outputs(tmp_path, capsys):
    args = ["simulate", "--trials", "3", "--seed", "2"]
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    assert main(args + ["--out-dir", str(tmp_path / "b")]) == 0
    for name in ("report.json", "trials.csv", "events.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    rows = list(csv.DictReader((tmp_path / "a" / "trials.csv").open()))
    assert len(rows) == 90 and set(rows[0]) == {"mission", *TrialRecord.CSV_FIELDS}
    assert main(["replay", str(tmp_path / "a" / "report.json")]) == 0
    assert "byte-identical" in capsys.readouterr().out


def test_cli_replay_detects_tampering(tmp_path):
    assert main(["simulate", "--trials", "2", "--out-dir", str(tmp_path)]) == 0
    path = tmp_path / "report.json"
    doc = json.loads(path.read_text())
    doc["summary"]["missions"]["n"] = 99
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    assert main(["replay", str(path)]) == 1


def test_cli_config_error_exit(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[sensor]\nwobble = 1\n")
    assert main(["simulate", "--config", str(bad), "--out-dir", str(tmp_path)]) == 2
    assert "line 2" in capsys.readouterr().err


def test_cli_check_fails_on_zero_noise(tmp_path):
    assert main(["simulate", "--scenario", "zero_noise", "--trials", "2", "--check",
                 "--out-dir", str(tmp_path)]) == 3


def test_cli_magazine_empty_exit(tmp_path):
    cfg = tmp_path / "small.toml"
    cfg.write_text("[mission]\nmagazine_capacity = 5\n[experiment]\nn_missions = 1\n")
    assert main(["simulate", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 4


def test_cli_analyses(tmp_path):
    out = str(tmp_path)
    assert main(["funnel-analysis", "--trials", "2000", "--out-dir", out]) == 0
    assert main(["sweep-analysis", "--trials", "50", "--out-dir", out]) == 0
    assert main(["calib-analysis", "--trials", "3", "--out-dir", out]) == 0
    funnel = list(csv.DictReader((tmp_path / "funnel_analysis.csv").open()))
    assert [float(r["sigma"]) for r in funnel] == [0.5, 1.0, 2.0, 4.0]
    sweep = list(csv.DictReader((tmp_path / "sweep_analysis.csv").open()))
    assert len(sweep) == 51 and sweep[-1]["trial"] == "summary"
    calib = list(csv.DictReader((tmp_path / "calib_analysis.csv").open()))
    assert len(calib) == 40 and set(calib[0]) == {"run_index", "sensor", "v_low", "v_high", "outcome"}


def test_module_entry_point():
    import subprocess
    import sys
    out = subprocess.run([sys.executable, "-m", "nitrosim", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "replay" in out.stdout


def test_batch_seeds_are_independent_of_batch_size():
    sim = load_scenario("paper2024").sim
    small, large = ex.run_batch(sim, 2, 40), ex.run_batch(sim, 4, 40)
    assert [r.row() for r in small.records] == [r.row() for r in large.records[:60]]
    assert np.array_equal(ex.mission_seeds(3)[0].generate_state(2), ex.mission_seeds(3)[0].generate_state(2))
