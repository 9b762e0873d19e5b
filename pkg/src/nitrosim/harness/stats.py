"""Staged success-funnel statistics."""
from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Iterable, Sequence

STAGES = ("detected", "grasped", "inserted", "depth_ok", "in_pith")
RATE_NAMES = ("detect", "grasp", "insert", "depth", "pith")


class EmptyInput(ValueError):
    pass


def wilson_interval(successes: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    if n <= 0:
        raise EmptyInput("Wilson interval needs n > 0")
    if not 0 <= successes <= n:
        raise ValueError("successes must lie in [0, n]")
    z = NormalDist().inv_cdf(0.5 + confidence / 2.0)
    p = successes / n
    z2n = z * z / n
    centre = (p + z2n / 2.0) / (1.0 + z2n)
    half = z / (1.0 + z2n) * math.sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n))
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == n else min(1.0, centre + half)
    return lo, hi


def binomial_se(p: float, n: int) -> float:
    return math.sqrt(p * (1.0 - p) / n)


@dataclass(frozen=True)
class FunnelStats:
    n_trials: int
    counts: dict[str, int]
    rates: dict[str, float]                      # cumulative over n_trials
    conditional: dict[str, float | None]         # stage given the previous stage
    intervals: dict[str, tuple[float, float]]
    within_45deg_fraction: float | None
    within_45deg_n: int

    @property
    def detect_rate(self) -> float:
        return self.rates["detect"]

    @property
    def grasp_rate(self) -> float:
        return self.rates["grasp"]

    @property
    def insert_rate(self) -> float:
        return self.rates["insert"]

    @property
    def depth_rate(self) -> float:
        return self.rates["depth"]

    @property
    def pith_rate(self) -> float:
        return self.rates["pith"]

    def cumulative(self) -> tuple[float, ...]:
        return tuple(self.rates[k] for k in RATE_NAMES)

    def to_dict(self) -> dict:
        return {
            "n_trials": self.n_trials,
            "counts": dict(self.counts),
            "rates": dict(self.rates),
            "conditional": dict(self.conditional),
            "wilson95": {k: list(v) for k, v in self.intervals.items()},
            "within_45deg_fraction": self.within_45deg_fraction,
            "within_45deg_n": self.within_45deg_n,
        }


def funnel_from_counts(counts: Sequence[int], n_trials: int, within_45: tuple[int, int] | None = None) -> FunnelStats:
    """Stats from stage counts ``(detected, grasped, inserted, depth_ok, in_pith)``."""
    if n_trials <= 0:
        raise EmptyInput("no trials")
    if len(counts) != len(RATE_NAMES):
        raise ValueError("need one count per stage")
    c = dict(zip(RATE_NAMES, (int(k) for k in counts)))
    rates = {k: v / n_trials for k, v in c.items()}
    cond: dict[str, float | None] = {"detect": rates["detect"]}
    for prev, cur in zip(RATE_NAMES, RATE_NAMES[1:]):
        cond[cur] = c[cur] / c[prev] if c[prev] else None
    intervals = {k: wilson_interval(v, n_trials) for k, v in c.items()}
    frac, n45 = None, 0
    if within_45 is not None:
        k45, n45 = within_45
        frac = k45 / n45 if n45 else None
    return FunnelStats(n_trials, c, rates, cond, intervals, frac, n45)


def funnel_stats(records: Iterable, within_deg: float = 45.0) -> FunnelStats:
    """Aggregate trial records; the angle fraction counts inserted trials only."""
    records = list(records)
    if not records:
        raise EmptyInput("no trial records")
    counts = [sum(bool(getattr(r, s)) for r in records) for s in STAGES]
    inserted = [r for r in records if r.inserted and r.angle_error_deg is not None]
    k45 = sum(r.angle_error_deg <= within_deg for r in inserted)
    return funnel_from_counts(counts, len(records), (k45, len(inserted)))
