"""Brute-force reference implementations the fast geometry is checked against.

None of these reuse the closed forms: widths come from projecting a densely
sampled boundary, chords from bisection on the implicit ellipse equation.
"""
from __future__ import annotations

import math

import numpy as np

from nitrosim.geometry import SensorGeometry, StalkCrossSection


def random_cross_sections(rng: np.random.Generator, n: int, pith=(0.3, 1.0)) -> list[StalkCrossSection]:
    out = []
    for _ in range(n):
        b = rng.uniform(5.0, 17.5)
        a = b * rng.uniform(1.0, 1.6)
        out.append(StalkCrossSection(a, b, rng.uniform(0, 180), rng.uniform(*pith)))
    return out


def boundary(cs: StalkCrossSection, n: int) -> np.ndarray:
    t = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    r = math.radians(cs.orientation_deg)
    x, y = cs.semi_major_mm * np.cos(t), cs.semi_minor_mm * np.sin(t)
    return np.stack([x * math.cos(r) - y * math.sin(r), x * math.sin(r) + y * math.cos(r)])


def brute_apparent_width(cs: StalkCrossSection, view_deg: float, n: int = 1_000_000) -> float:
    pts = boundary(cs, n)
    v = math.radians(view_deg)
    proj = -math.sin(v) * pts[0] + math.cos(v) * pts[1]
    return float(proj.max() - proj.min())


def implicit(cs: StalkCrossSection, x: float, y: float, scale: float = 1.0) -> float:
    """< 1 inside, 1 on the boundary of the (scaled) ellipse."""
    r = math.radians(cs.orientation_deg)
    xe = math.cos(r) * x + math.sin(r) * y
    ye = -math.sin(r) * x + math.cos(r) * y
    return (xe / (cs.semi_major_mm * scale)) ** 2 + (ye / (cs.semi_minor_mm * scale)) ** 2


def ray_point(ray_deg: float, offset: float, t: float) -> tuple[float, float]:
    r = math.radians(ray_deg)
    return -offset * math.sin(r) + t * math.cos(r), offset * math.cos(r) + t * math.sin(r)


def _bisect(f, lo: float, hi: float, iters: int = 200) -> float:
    flo = f(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if (f(mid) > 0) == (flo > 0):
            lo, flo = mid, f(mid)
        else:
            hi = mid
    return 0.5 * (lo + hi)


def bisection_entry_exit(cs: StalkCrossSection, ray_deg: float, offset: float) -> tuple[float, float] | None:
    g = lambda t: implicit(cs, *ray_point(ray_deg, offset, t)) - 1.0   # noqa: E731
    lo, hi = -4 * cs.semi_major_mm, 4 * cs.semi_major_mm
    for _ in range(300):                         # ternary search for the deepest point
        m1, m2 = lo + (hi - lo) / 3, hi - (hi - lo) / 3
        if g(m1) < g(m2):
            hi = m2
        else:
            lo = m1
    mid = 0.5 * (lo + hi)
    if g(mid) >= 0:
        return None
    far = 4 * cs.semi_major_mm
    return _bisect(g, mid - far, mid), _bisect(g, mid, mid + far)


def bisection_chord(cs: StalkCrossSection, ray_deg: float, offset: float) -> float:
    hit = bisection_entry_exit(cs, ray_deg, offset)
    return 0.0 if hit is None else hit[1] - hit[0]


def oracle_electrodes_in_pith(cs: StalkCrossSection, ray_deg: float, offset: float, depth: float,
                              geom: SensorGeometry = SensorGeometry()) -> bool:
    hit = bisection_entry_exit(cs, ray_deg, offset)
    if hit is None:
        return False
    entry = hit[0]
    near = depth - geom.electrode_near_tip_mm
    far = near - geom.electrode_separation_mm
    if far < 0:
        return False
    return all(implicit(cs, *ray_point(ray_deg, offset, entry + s), cs.pith_scale) <= 1.0 + 1e-9
               for s in (near, far))
