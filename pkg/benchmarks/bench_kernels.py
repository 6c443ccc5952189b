#!/usr/bin/env python3
"""Time each jitted kernel against its plain-python original (``.py_func``).

Run with ``python3 benchmarks/bench_kernels.py``.  With
``ROBUSTLDS_DISABLE_NUMBA=1`` both columns run the python version.
"""
import argparse
import time

import numpy as np

from robustlds import kernels
from robustlds._accel import HAS_NUMBA
from robustlds.adversaries import default_mu
from robustlds.nets import _greedy_thin


def best_of(fn, args, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases(scale):
    rng = np.random.default_rng(0)
    T = 2000 * scale
    g0 = 2.0
    yield "scalar_closed_loop", kernels.scalar_closed_loop, (
        1.5, 4.0, 0.25, T, kernels.CTRL_CERT_EQUIV, 0.0, kernels.F_LB_GAME,
        np.zeros(0), -8.0, g0, default_mu(g0),
    )
    yield "normalized_game", kernels.normalized_game, (
        0.5, 0.0, 1.0, T, kernels.CTRL_CERT_EQUIV, 0.0, 4.0, -8.0, g0, default_mu(g0),
    )
    d, n = 3, 12
    V = rng.standard_normal((d, n))
    Y = rng.standard_normal((d, n))
    yield "phi_saddle", kernels.phi_saddle, (np.zeros((d, d)), V, Y, 4.0, 1e-9, 500 * scale, 50)
    pts = rng.standard_normal((1500 * scale, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    yield "_greedy_thin", _greedy_thin, (pts, 0.1)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scale", type=int, default=1, help="problem size multiplier")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    print(f"numba active: {HAS_NUMBA}")
    print(f"{'kernel':<20} {'python (s)':>11} {'jit (s)':>10} {'speedup':>8}  agree")
    print("-" * 60)
    for name, fn, fargs in cases(args.scale):
        fn(*fargs)  # compile outside the timing
        t_py, out_py = best_of(fn.py_func, fargs, 1)
        t_jit, out_jit = best_of(fn, fargs, args.repeat)
        a = out_py if isinstance(out_py, tuple) else (out_py,)
        b = out_jit if isinstance(out_jit, tuple) else (out_jit,)
        agree = all(np.allclose(x, y, rtol=1e-9, atol=1e-12, equal_nan=True) for x, y in zip(a, b))
        print(f"{name:<20} {t_py:>11.4f} {t_jit:>10.4f} {t_py / t_jit:>7.1f}x  {'ok' if agree else 'DIFF'}")


if __name__ == "__main__":
    main()
