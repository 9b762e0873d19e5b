from __future__ import annotations

import os
import subprocess
import sys

import numpy as np
import pytest

from nitrosim import backend, kernels
from nitrosim.exchange import FunnelConfig, capture_rate_mc
from nitrosim.geometry import StalkCrossSection, apparent_width, chord_depth


@pytest.fixture(scope="module")
def inputs():
    rng = np.random.default_rng(0)
    n = 5000
    b = rng.uniform(4.0, 14.0, n)
    return {
        "a": b * rng.uniform(1.0, 1.5, n),
        "b": b,
        "o": rng.uniform(0.0, 180.0, n),
        "r": rng.uniform(0.0, 360.0, n),
        "off": rng.normal(0.0, 8.0, n),
        "reach": rng.uniform(-5.0, 10.0, n),
        "scale": rng.uniform(0.3, 1.0, n),
        "dx": rng.normal(0.0, 3.0, n),
        "dy": rng.normal(0.0, 3.0, n),
        "u": rng.random((500, 40)),
    }


def test_apparent_width_twins(inputs):
    x = inputs
    np.testing.assert_allclose(kernels.apparent_width_np(x["a"], x["b"], x["r"] - x["o"]),
                               kernels.apparent_width_loop(x["a"], x["b"], x["r"] - x["o"]), rtol=1e-12)


def test_chord_twins(inputs):
    x = inputs
    c1, e1 = kernels.chord_np(x["a"], x["b"], x["o"], x["r"], x["off"])
    c2, e2 = kernels.chord_loop(x["a"], x["b"], x["o"], x["r"], x["off"])
    np.testing.assert_allclose(c1, c2, atol=1e-12)
    hit = c1 > 0
    np.testing.assert_allclose(e1[hit], e2[hit], atol=1e-12)


def test_depth_and_pith_twins(inputs):
    x = inputs
    args = (x["a"], x["b"], x["o"], x["r"], x["off"], x["reach"])
    d1, _ = kernels.achieved_depth_np(*args)
    d2, _ = kernels.achieved_depth_loop(*args)
    np.testing.assert_allclose(d1, d2, atol=1e-12)
    pargs = (x["a"], x["b"], x["o"], x["r"], x["off"], d1, x["scale"])
    np.testing.assert_array_equal(kernels.electrodes_in_pith_np(*pargs, 3.0, 5.5, 1e-9),
                                  kernels.electrodes_in_pith_loop(*pargs, 3.0, 5.5, 1e-9))


def test_funnel_and_wear_twins(inputs):
    x = inputs
    np.testing.assert_array_equal(kernels.funnel_capture_np(x["dx"], x["dy"], 2.879, 2.303),
                                  kernels.funnel_capture_loop(x["dx"], x["dy"], 2.879, 2.303))
    for base, per in ((0.0, 0.0173), (0.1, 0.0), (0.5, 0.5)):
        np.testing.assert_array_equal(kernels.first_failure_np(x["u"], base, per),
                                      kernels.first_failure_loop(x["u"], base, per))


def test_dispatch_matches_scalar_geometry(inputs):
    x = inputs
    k = slice(0, 200)
    widths = kernels.apparent_width(x["a"][k], x["b"][k], x["r"][k] - x["o"][k])
    chords, _ = kernels.chord(x["a"][k], x["b"][k], x["o"][k], x["r"][k], x["off"][k])
    for i in range(200):
        cs = StalkCrossSection(x["a"][i], x["b"][i], x["o"][i])
        assert widths[i] == pytest.approx(apparent_width(cs, x["r"][i]), abs=1e-9)
        assert chords[i] == pytest.approx(chord_depth(cs, x["r"][i], x["off"][i]), abs=1e-9)


def test_dispatch_broadcasts_scalars():
    out = kernels.apparent_width(12.5, 9.0, np.array([0.0, 90.0]))
    np.testing.assert_allclose(out, [18.0, 25.0])
    assert kernels.first_failure(np.zeros(5), 0.0, 1.0).tolist() == [0]


_SCRIPT = """
import numpy as np
from nitrosim import backend
from nitrosim.exchange import FunnelConfig, capture_rate_mc
print(backend())
print(repr(capture_rate_mc(FunnelConfig(), 2.0, 5000, np.random.default_rng(1))[0]))
"""


def test_disable_flag_selects_numpy_with_identical_results():
    env = {**os.environ, "NITROSIM_DISABLE_JIT": "1"}
    out = subprocess.run([sys.executable, "-c", _SCRIPT], env=env, capture_output=True, text=True, check=True)
    name, rate = out.stdout.split()
    assert name == "numpy"
    here = capture_rate_mc(FunnelConfig(), 2.0, 5000, np.random.default_rng(1))[0]
    assert float(rate) == here
    assert backend() in ("numpy", "numba")
