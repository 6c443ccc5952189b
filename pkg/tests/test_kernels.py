"""Compiled kernels against their plain-python originals."""

import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robustlds import kernels
from robustlds._accel import HAS_NUMBA
from robustlds.nets import _greedy_thin

needs_numba = pytest.mark.skipif(not HAS_NUMBA, reason="numba disabled")


def _same(a, b):
    a, b = np.asarray(a), np.asarray(b)
    assert a.shape == b.shape
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-300, equal_nan=True)


@needs_numba
@pytest.mark.parametrize("ctrl", [kernels.CTRL_CERT_EQUIV, kernels.CTRL_LINEAR])
@pytest.mark.parametrize("h", [0.0, 0.3])
def test_scalar_closed_loop_lb_matches_python(ctrl, h):
    args = (0.7, 4.0, h, 300, ctrl, 0.5, kernels.F_LB_GAME, np.zeros(0), -4.0, 1.0, 0.05)
    logs_j, hist_j = kernels.scalar_closed_loop(*args)
    logs_p, hist_p = kernels.scalar_closed_loop.py_func(*args)
    _same(logs_j, logs_p)
    _same(hist_j, hist_p)


@needs_numba
def test_scalar_closed_loop_scripted_matches_python():
    f = np.random.default_rng(0).standard_normal(200)
    args = (1.3, 2.0, 0.2, 200, kernels.CTRL_CERT_EQUIV, 0.0, kernels.F_SCRIPTED, f, 0.0, 1.0, 0.1)
    _same(kernels.scalar_closed_loop(*args)[0], kernels.scalar_closed_loop.py_func(*args)[0])


@needs_numba
def test_normalized_game_matches_python():
    args = (0.3, 0.1, 0.5, 400, kernels.CTRL_CERT_EQUIV, 0.0, 8.0, -8.0, 2.0, 0.04)
    _same(kernels.normalized_game(*args), kernels.normalized_game.py_func(*args))


@needs_numba
def test_phi_saddle_matches_python():
    rng = np.random.default_rng(4)
    V = rng.standard_normal((2, 7))
    V /= np.linalg.norm(V, axis=0)
    Y = rng.standard_normal((2, 7))
    A0 = np.zeros((2, 2))
    out_j = kernels.phi_saddle(A0, V, Y, 1.0, 1e-10, 2000, 100)
    out_p = kernels.phi_saddle.py_func(A0, V, Y, 1.0, 1e-10, 2000, 100)
    _same(out_j[0], out_p[0])
    assert out_j[1] == pytest.approx(out_p[1], rel=1e-10)
    assert out_j[3] == out_p[3]


@needs_numba
def test_greedy_thin_matches_python():
    pts = np.random.default_rng(2).standard_normal((300, 3))
    np.testing.assert_array_equal(_greedy_thin(pts, 0.7), _greedy_thin.py_func(pts, 0.7))


@settings(max_examples=200)
@given(
    st.floats(-50, 50), st.floats(-50, 50), st.floats(-50, 50),
    st.floats(-10, 10), st.floats(1, 10),
)
def test_lb_nu_branches(z, beta, delta, a0, gamma0):
    mu = 0.01
    nu = kernels.lb_nu.py_func(z, beta, delta, a0, gamma0, mu)
    lo, hi = a0 + (4 + mu) * gamma0, a0 + (8 + 3 * mu) * gamma0
    allowed = {0.0, mu * gamma0, -mu * gamma0, (4 + mu) * gamma0, -(4 + mu) * gamma0}
    assert nu in allowed
    if abs(delta) >= 2 * gamma0 and lo <= beta <= hi:
        assert nu == 0.0
    if HAS_NUMBA:
        assert kernels.lb_nu(z, beta, delta, a0, gamma0, mu) == nu


def test_sign_convention():
    assert kernels.sign1.py_func(0.0) == 1.0
    assert kernels.sign1.py_func(-1e-300) == -1.0


def test_env_flag_selects_python():
    code = (
        "import robustlds.kernels as k, robustlds._accel as a;"
        "print(a.HAS_NUMBA, k.scalar_closed_loop.py_func is k.scalar_closed_loop)"
    )
    env = dict(os.environ, ROBUSTLDS_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["False", "True"]
