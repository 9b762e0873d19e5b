"""``nitrosim`` command line.

Exit codes: 0 ok, 1 replay mismatch, 2 bad config, 3 a ``--check`` threshold
failed, 4 a mission ended with an empty magazine.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .. import backend
from ..config import ConfigError, ExperimentConfig, config_from_dict, load_config, load_scenario
from . import experiments as ex

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_CONFIG = 2
EXIT_CHECK = 3
EXIT_MAGAZINE_EMPTY = 4


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file (default: the shipped paper2024 scenario)")
    common.add_argument("--scenario", help="name of a shipped scenario, e.g. zero_noise")
    common.add_argument("--seed", type=int, help="override experiment.base_seed")
    common.add_argument("--out-dir", help="override experiment.out_dir")
    common.add_argument("--trials", type=int,
                        help="Monte Carlo size: missions (simulate), draws (funnel), stalks (sweep), "
                             "protocol repetitions (calib)")
    common.add_argument("--check", action="store_true", help="exit 3 if the field or calibration targets are missed")

    ap = argparse.ArgumentParser(prog="nitrosim", description="Seeded simulator of stalk nitrate-sensor insertion.")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="run a batch of field missions")
    sub.add_parser("funnel-analysis", parents=[common], help="funnel capture rate against arm error")
    sub.add_parser("sweep-analysis", parents=[common], help="angle error of the three-view sweep")
    sub.add_parser("calib-analysis", parents=[common], help="40-run calibration protocol")
    rp = sub.add_parser("replay", parents=[common], help="re-run a report from its embedded config")
    rp.add_argument("report", help="path to a report.json")
    return ap


def _load(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = load_scenario(args.scenario or "paper2024")
    return cfg.with_overrides(seed=args.seed, out_dir=args.out_dir)


def _print_checks(checks: list[ex.Check]) -> bool:
    for c in checks:
        print(c.line())
    return all(c.ok for c in checks)


def _simulate(cfg: ExperimentConfig, args) -> int:
    if args.trials is not None:
        cfg = cfg.with_overrides(n_missions=args.trials)
    report = ex.run_experiments(cfg)
    paths = ex.write_report(report, cfg.experiment.out_dir)
    s = report.stats
    print(f"{cfg.experiment.n_missions} missions, {s.n_trials} trials, seed {cfg.experiment.base_seed}, "
          f"backend {backend()}")
    for name, rate in s.rates.items():
        lo, hi = s.intervals[name]
        print(f"  {name:<7} {rate:.4f}  [{lo:.4f}, {hi:.4f}]")
    if s.within_45deg_fraction is not None:
        print(f"  within 45 deg of optimal: {s.within_45deg_fraction:.4f} of {s.within_45deg_n} insertions")
    for p in paths.values():
        print(f"wrote {p}")
    code = EXIT_OK
    if args.check:
        ok = _print_checks(ex.funnel_checks(s) + ex.calibration_checks(ex.calibration_campaign(cfg)))
        code = EXIT_OK if ok else EXIT_CHECK
    empty = report.summary()["missions"]["magazine_empty"]
    if empty:
        print(f"{empty} mission(s) ended with an empty magazine")
        if code == EXIT_OK:
            code = EXIT_MAGAZINE_EMPTY
    return code


def _funnel(cfg: ExperimentConfig, args) -> int:
    n = args.trials or cfg.analysis.funnel_draws
    rows = ex.funnel_analysis(cfg.sim.funnel, cfg.analysis.funnel_sigmas_mm, n, cfg.experiment.base_seed)
    path = ex.write_csv(rows, Path(cfg.experiment.out_dir) / "funnel_analysis.csv")
    for r in rows:
        print(f"  sigma {r['sigma']:.2f} mm: analytic {r['analytic_p']:.5f}  simulated {r['simulated_p']:.5f}"
              f"  (se {r['stderr']:.5f})")
    print(f"wrote {path}")
    return EXIT_OK


def _sweep(cfg: ExperimentConfig, args) -> int:
    n = args.trials or cfg.analysis.sweep_trials
    rows, summary = ex.sweep_analysis(cfg.sim, n, cfg.experiment.base_seed)
    rows = rows + [{"trial": "summary", "error_deg": summary["within_45deg_fraction"]}]
    fields = ("trial", "start_angle", "chosen_angle", "true_optimal", "error_deg")
    path = ex.write_csv(rows, Path(cfg.experiment.out_dir) / "sweep_analysis.csv", fields)
    print(f"  {n} stalks, within 45 deg of optimal: {summary['within_45deg_fraction']:.4f}")
    print(f"wrote {path}")
    return EXIT_OK


def _calib(cfg: ExperimentConfig, args) -> int:
    if args.trials is not None:
        cfg = dataclasses.replace(cfg, protocol=dataclasses.replace(cfg.protocol, repetitions=args.trials))
    rows = ex.calib_analysis(cfg, cfg.experiment.base_seed)
    path = ex.write_csv(rows, Path(cfg.experiment.out_dir) / "calib_analysis.csv")
    campaign = ex.calibration_campaign(cfg)
    print(f"  {campaign.repetitions} campaigns: mean pass rate {campaign.mean_pass_rate:.4f}, "
          f"failures by quarter {campaign.quarter_failures}, last-quarter share {campaign.fourth_quarter_share:.4f}")
    print(f"wrote {path}")
    if args.check:
        return EXIT_OK if _print_checks(ex.calibration_checks(campaign)) else EXIT_CHECK
    return EXIT_OK


def _replay(args) -> int:
    src = Path(args.report)
    doc = json.loads(src.read_text())
    cfg = config_from_dict(doc["config"])
    report = ex.run_experiments(cfg)
    fresh = report.to_json()
    if args.out_dir:
        ex.write_report(report, args.out_dir)
    if fresh == src.read_text():
        print(f"replay of {src} is byte-identical")
        return EXIT_OK
    print(f"replay of {src} differs from the stored report")
    return EXIT_MISMATCH


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "replay":
            return _replay(args)
        cfg = _load(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    handler = {"simulate": _simulate, "funnel-analysis": _funnel, "sweep-analysis": _sweep,
               "calib-analysis": _calib}[args.command]
    return handler(cfg, args)


if __name__ == "__main__":
    raise SystemExit(main())
