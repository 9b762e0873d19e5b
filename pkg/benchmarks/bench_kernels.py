"""Time the numpy kernels against their numba loop twins.

    python benchmarks/bench_kernels.py [--n 1000000] [--repeat 5]

Both variants run on the same inputs; results are checked for agreement
before timing. Without numba installed (or with NITROSIM_DISABLE_JIT=1) the
loop variants are plain Python and only a small n is sensible.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from nitrosim import backend, kernels


def _inputs(n: int, seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    b = rng.uniform(6.0, 12.0, n)
    return {
        "a": b * rng.uniform(1.0, 1.4, n),
        "b": b,
        "orient": rng.uniform(0.0, 180.0, n),
        "ray": rng.uniform(0.0, 360.0, n),
        "offset": rng.normal(0.0, 6.0, n),
        "dx": rng.normal(0.0, 2.0, n),
        "dy": rng.normal(0.0, 2.0, n),
        "u": rng.random((max(1, n // 40), 40)),
    }


def _cases(x: dict[str, np.ndarray]):
    a, b, o, r, off = x["a"], x["b"], x["orient"], x["ray"], x["offset"]
    reach, scale = np.full_like(a, 1.5), np.full_like(a, 0.8)   # loop kernels take arrays only
    depth, _ = kernels.achieved_depth_np(a, b, o, r, off, reach)
    return {
        "apparent_width": ((a, b, r - o), kernels.apparent_width_np, kernels.apparent_width_loop),
        "chord": ((a, b, o, r, off), kernels.chord_np, kernels.chord_loop),
        "achieved_depth": ((a, b, o, r, off, reach), kernels.achieved_depth_np, kernels.achieved_depth_loop),
        "electrodes_in_pith": ((a, b, o, r, off, depth, scale, 3.0, 5.5, 1e-9),
                               kernels.electrodes_in_pith_np, kernels.electrodes_in_pith_loop),
        "funnel_capture": ((x["dx"], x["dy"], 2.879, 2.303), kernels.funnel_capture_np, kernels.funnel_capture_loop),
        "first_failure": ((x["u"], 0.0, 0.0173), kernels.first_failure_np, kernels.first_failure_loop),
    }


def _best(fn, args, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def _agree(p, q) -> bool:
    p = p if isinstance(p, tuple) else (p,)
    q = q if isinstance(q, tuple) else (q,)
    return all(np.allclose(np.nan_to_num(u), np.nan_to_num(v), atol=1e-9) for u, v in zip(p, q))


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=1_000_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    cases = _cases(_inputs(args.n))
    print(f"backend: {backend()}   n = {args.n}")
    print(f"{'kernel':<20}{'numpy ms':>12}{'loop ms':>12}{'speedup':>10}")
    for name, (call_args, np_fn, loop_fn) in cases.items():
        if not _agree(np_fn(*call_args), loop_fn(*call_args)):   # also triggers compilation
            print(f"{name}: numpy and loop results disagree")
            return 1
        t_np = _best(np_fn, call_args, args.repeat)
        t_loop = _best(loop_fn, call_args, args.repeat)
        print(f"{name:<20}{1e3 * t_np:>12.2f}{1e3 * t_loop:>12.2f}{t_np / t_loop:>10.2f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
