"""Batch kernels for the Monte Carlo paths.

Every kernel exists twice: a numba loop (``*_loop``) and a vectorised numpy
twin (``*_np``). The public name dispatches on :func:`nitrosim._jit.backend`.
Kernels never draw random numbers; callers pass pre-drawn arrays so both
backends see the same inputs and return the same outputs.

Angles are in degrees, lengths in millimetres.
"""
from __future__ import annotations

import math

import numpy as np

from ._jit import HAS_NUMBA, njit

_DEG = math.pi / 180.0


# --- ellipse / ray --------------------------------------------------------

def apparent_width_np(a, b, rel_deg):
    t = np.asarray(rel_deg, dtype=float) * _DEG
    s, c = np.sin(t), np.cos(t)
    return 2.0 * np.sqrt(a * a * s * s + b * b * c * c)


@njit(cache=True)
def apparent_width_loop(a, b, rel_deg):
    n = rel_deg.shape[0]
    out = np.empty(n)
    for i in range(n):
        t = rel_deg[i] * _DEG
        s = math.sin(t)
        c = math.cos(t)
        out[i] = 2.0 * math.sqrt(a[i] * a[i] * s * s + b[i] * b[i] * c * c)
    return out


def chord_np(a, b, orient_deg, ray_deg, offset):
    """Chord length and entry parameter of the offset ray through the ellipse.

    The ray is ``p(t) = offset * n + t * u`` with ``u`` at ``ray_deg`` and ``n``
    its left normal. Misses return chord 0 and entry ``nan``.
    """
    rel = (np.asarray(ray_deg, dtype=float) - orient_deg) * _DEG
    ux, uy = np.cos(rel), np.sin(rel)
    nx, ny = -uy, ux
    ia2, ib2 = 1.0 / (a * a), 1.0 / (b * b)
    qa = ux * ux * ia2 + uy * uy * ib2
    qb = 2.0 * offset * (nx * ux * ia2 + ny * uy * ib2)
    qc = offset * offset * (nx * nx * ia2 + ny * ny * ib2) - 1.0
    disc = qb * qb - 4.0 * qa * qc
    hit = disc > 0.0
    root = np.sqrt(np.where(hit, disc, 0.0))
    chord = np.where(hit, root / qa, 0.0)
    entry = np.where(hit, (-qb - root) / (2.0 * qa), np.nan)
    return chord, entry


@njit(cache=True)
def chord_loop(a, b, orient_deg, ray_deg, offset):
    n = a.shape[0]
    chord = np.zeros(n)
    entry = np.full(n, np.nan)
    for i in range(n):
        rel = (ray_deg[i] - orient_deg[i]) * _DEG
        ux = math.cos(rel)
        uy = math.sin(rel)
        nx = -uy
        ny = ux
        ia2 = 1.0 / (a[i] * a[i])
        ib2 = 1.0 / (b[i] * b[i])
        d = offset[i]
        qa = ux * ux * ia2 + uy * uy * ib2
        qb = 2.0 * d * (nx * ux * ia2 + ny * uy * ib2)
        qc = d * d * (nx * nx * ia2 + ny * ny * ib2) - 1.0
        disc = qb * qb - 4.0 * qa * qc
        if disc > 0.0:
            root = math.sqrt(disc)
            chord[i] = root / qa
            entry[i] = (-qb - root) / (2.0 * qa)
    return chord, entry


def _inside_np(a, b, orient_deg, ray_deg, offset, t, scale, tol):
    rel = (ray_deg - orient_deg) * _DEG
    ux, uy = np.cos(rel), np.sin(rel)
    x = -offset * uy + t * ux
    y = offset * ux + t * uy
    sa, sb = a * scale, b * scale
    return (x / sa) ** 2 + (y / sb) ** 2 <= 1.0 + tol


def electrodes_in_pith_np(a, b, orient_deg, ray_deg, offset, depth, pith_scale,
                          near_tip, separation, tol=1e-9):
    chord, entry = chord_np(a, b, orient_deg, ray_deg, offset)
    depth = np.asarray(depth, dtype=float)
    s_tip = depth - near_tip
    s_far = depth - near_tip - separation
    ok = (chord > 0.0) & (s_far >= -tol)
    e = np.where(ok, entry, 0.0)
    in1 = _inside_np(a, b, orient_deg, ray_deg, offset, e + s_tip, pith_scale, tol)
    in2 = _inside_np(a, b, orient_deg, ray_deg, offset, e + s_far, pith_scale, tol)
    return ok & in1 & in2


@njit(cache=True)
def electrodes_in_pith_loop(a, b, orient_deg, ray_deg, offset, depth, pith_scale,
                            near_tip, separation, tol):
    chord, entry = chord_loop(a, b, orient_deg, ray_deg, offset)
    n = a.shape[0]
    out = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        s_tip = depth[i] - near_tip
        s_far = depth[i] - near_tip - separation
        if chord[i] <= 0.0 or s_far < -tol:
            continue
        rel = (ray_deg[i] - orient_deg[i]) * _DEG
        ux = math.cos(rel)
        uy = math.sin(rel)
        sa = a[i] * pith_scale[i]
        sb = b[i] * pith_scale[i]
        good = True
        for s in (s_tip, s_far):
            t = entry[i] + s
            x = -offset[i] * uy + t * ux
            y = offset[i] * ux + t * uy
            if (x / sa) ** 2 + (y / sb) ** 2 > 1.0 + tol:
                good = False
        out[i] = good
    return out


def achieved_depth_np(a, b, orient_deg, ray_deg, offset, reach):
    """Penetration depth when the tip stops ``reach`` mm past the gripper centre line."""
    chord, entry = chord_np(a, b, orient_deg, ray_deg, offset)
    pen = np.where(chord > 0.0, np.maximum(0.0, reach - np.nan_to_num(entry)), 0.0)
    return np.minimum(pen, chord), chord


@njit(cache=True)
def achieved_depth_loop(a, b, orient_deg, ray_deg, offset, reach):
    chord, entry = chord_loop(a, b, orient_deg, ray_deg, offset)
    n = a.shape[0]
    depth = np.zeros(n)
    for i in range(n):
        if chord[i] > 0.0:
            pen = reach[i] - entry[i]
            if pen < 0.0:
                pen = 0.0
            depth[i] = pen if pen < chord[i] else chord[i]
    return depth, chord


# --- funnel ---------------------------------------------------------------

def funnel_capture_np(dx, dy, tol_x, tol_y):
    return (np.abs(dx) <= tol_x) & (np.abs(dy) <= tol_y)


@njit(cache=True)
def funnel_capture_loop(dx, dy, tol_x, tol_y):
    n = dx.shape[0]
    out = np.empty(n, dtype=np.bool_)
    for i in range(n):
        out[i] = abs(dx[i]) <= tol_x and abs(dy[i]) <= tol_y
    return out


# --- wear -----------------------------------------------------------------

def first_failure_np(uniforms, base_p, per_insert_p):
    """Index of the first wear event that fails, or -1.

    ``uniforms`` has shape (n_sequences, n_events); event ``k`` (0-based) is the
    sensor's ``k+1``-th insertion with hazard ``min(1, base + per * (k+1))``.
    """
    n_events = uniforms.shape[1]
    hazard = np.minimum(1.0, base_p + per_insert_p * np.arange(1, n_events + 1))
    fails = uniforms < hazard
    first = np.argmax(fails, axis=1)
    return np.where(fails.any(axis=1), first, -1)


@njit(cache=True)
def first_failure_loop(uniforms, base_p, per_insert_p):
    n, m = uniforms.shape
    out = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        for k in range(m):
            h = base_p + per_insert_p * (k + 1)
            if h > 1.0:
                h = 1.0
            if uniforms[i, k] < h:
                out[i] = k
                break
    return out


# --- dispatch -------------------------------------------------------------

def _f(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def _bcast(*arrays):
    return [_f(x) for x in np.broadcast_arrays(*[np.asarray(v, dtype=float) for v in arrays])]


def apparent_width(a, b, rel_deg):
    a, b, rel = _bcast(a, b, rel_deg)
    if HAS_NUMBA:
        return apparent_width_loop(a.ravel(), b.ravel(), rel.ravel()).reshape(a.shape)
    return apparent_width_np(a, b, rel)


def chord(a, b, orient_deg, ray_deg, offset):
    arrs = _bcast(a, b, orient_deg, ray_deg, offset)
    if HAS_NUMBA:
        c, e = chord_loop(*[x.ravel() for x in arrs])
        return c.reshape(arrs[0].shape), e.reshape(arrs[0].shape)
    return chord_np(*arrs)


def electrodes_in_pith(a, b, orient_deg, ray_deg, offset, depth, pith_scale,
                       near_tip=3.0, separation=5.5, tol=1e-9):
    arrs = _bcast(a, b, orient_deg, ray_deg, offset, depth, pith_scale)
    if HAS_NUMBA:
        out = electrodes_in_pith_loop(*[x.ravel() for x in arrs], float(near_tip),
                                      float(separation), float(tol))
        return out.reshape(arrs[0].shape)
    return electrodes_in_pith_np(*arrs, near_tip, separation, tol)


def achieved_depth(a, b, orient_deg, ray_deg, offset, reach):
    arrs = _bcast(a, b, orient_deg, ray_deg, offset, reach)
    if HAS_NUMBA:
        d, c = achieved_depth_loop(*[x.ravel() for x in arrs])
        return d.reshape(arrs[0].shape), c.reshape(arrs[0].shape)
    return achieved_depth_np(*arrs)


def funnel_capture(dx, dy, tol_x, tol_y):
    dx, dy = _bcast(dx, dy)
    if HAS_NUMBA:
        return funnel_capture_loop(dx.ravel(), dy.ravel(), float(tol_x), float(tol_y)).reshape(dx.shape)
    return funnel_capture_np(dx, dy, tol_x, tol_y)


def first_failure(uniforms, base_p, per_insert_p):
    u = _f(np.atleast_2d(uniforms))
    if HAS_NUMBA:
        return first_failure_loop(u, float(base_p), float(per_insert_p))
    return first_failure_np(u, base_p, per_insert_p)
