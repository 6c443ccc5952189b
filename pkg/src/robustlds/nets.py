"""Finite nets of the unit sphere and of spectral-norm balls of matrices."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._accel import maybe_njit
from .errors import NetTooLarge

STANDARD_BASIS = "standard_basis"
EPS_NET = "eps_net"

DEFAULT_NET_CAP = 1_000_000


@dataclass(frozen=True)
class ExplorationSet:
    """Ordered unit vectors ``v_0 .. v_{N-1}``, stored as rows of ``vectors``."""

    kind: str
    vectors: np.ndarray

    @property
    def N(self) -> int:
        return self.vectors.shape[0]

    @property
    def d(self) -> int:
        return self.vectors.shape[1]


def standard_basis(d: int) -> ExplorationSet:
    return ExplorationSet(STANDARD_BASIS, np.eye(d))


@maybe_njit
def _greedy_thin(points, radius):
    """Indices of a maximal ``radius``-separated subset, scanned in order."""
    n, d = points.shape
    r2 = radius * radius
    keep = np.empty(n, dtype=np.int64)
    m = 0
    for i in range(n):
        ok = True
        for j in range(m):
            c = keep[j]
            s = 0.0
            for k in range(d):
                diff = points[i, k] - points[c, k]
                s += diff * diff
                if s > r2:
                    break
            if s <= r2:
                ok = False
                break
        if ok:
            keep[m] = i
            m += 1
    return keep[:m]


def _cube_surface_grid(d: int, n: int) -> np.ndarray:
    """Grid points on the surface of ``[-1, 1]^d`` with ``n`` points per edge."""
    axis = np.linspace(-1.0, 1.0, n)
    face = np.stack(np.meshgrid(*([axis] * (d - 1)), indexing="ij"), axis=-1).reshape(-1, d - 1)
    pts = []
    for k in range(d):
        for sgn in (1.0, -1.0):
            p = np.insert(face, k, sgn, axis=1)
            pts.append(p)
    pts = np.concatenate(pts)
    return np.unique(np.round(pts, 12), axis=0)


def sphere_net(eps: float, d: int, cap: int = DEFAULT_NET_CAP) -> ExplorationSet:
    """Deterministic ``eps``-net of the unit sphere in ``R^d``.

    A grid on the surface of the cube ``[-1, 1]^d`` is pushed radially onto
    the sphere (radial projection from outside the ball is 1-Lipschitz), which
    gives a fine net of covering radius ``eps / 4``.  Greedy thinning at
    radius ``3 eps / 4`` then keeps a sparse subset that still covers within
    ``eps``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if d < 1:
        raise ValueError("d must be >= 1")
    if eps >= 2.0:
        v = np.zeros((1, d))
        v[0, 0] = 1.0
        return ExplorationSet(EPS_NET, v)
    if d == 1:
        return ExplorationSet(EPS_NET, np.array([[1.0], [-1.0]]))
    fine = eps / 4.0
    spacing = 2.0 * fine / math.sqrt(d - 1)
    n = int(math.ceil(2.0 / spacing)) + 1
    size = 2 * d * n ** (d - 1)
    if size > cap:
        raise NetTooLarge(size, cap)
    pts = _cube_surface_grid(d, n)
    pts = pts / np.linalg.norm(pts, axis=1, keepdims=True)
    keep = _greedy_thin(np.ascontiguousarray(pts), eps - fine)
    return ExplorationSet(EPS_NET, pts[keep])


def covering_radius_estimate(vectors: np.ndarray, samples: np.ndarray) -> float:
    """Largest distance from any sample to its nearest vector."""
    d2 = ((samples[:, None, :] - vectors[None, :, :]) ** 2).sum(-1)
    return float(np.sqrt(d2.min(axis=1).max()))


def clip_spectral(K: np.ndarray, radius: float) -> np.ndarray:
    U, s, Vt = np.linalg.svd(K, full_matrices=False)
    if s[0] <= radius:
        return K
    return (U * np.minimum(s, radius)) @ Vt


class ControllerGridNet:
    """Grid over ``[-kappa, kappa]^{p x d}`` mapped into the ball ``||K||_2 <= kappa``.

    Each axis carries ``ceil(2 kappa sqrt(dp) / eps) + 1`` equally spaced
    values, so every matrix in the ball is within ``eps / sqrt(dp)`` per entry
    (hence ``eps`` in Frobenius and spectral norm) of a grid point.  Grid
    points outside the ball are replaced by their spectral clipping, which is
    nonexpansive and so preserves the covering.

    Candidates are produced lazily: ``order="lex"`` walks the grid
    lexicographically; ``order="scrambled"`` visits index ``(a i + b) mod size``
    for a fixed ``a`` coprime to ``size``, spreading early candidates over the
    whole ball.
    """

    def __init__(self, eps: float, kappa: float, d: int, p: int, order: str = "scrambled"):
        if not (eps > 0 and kappa > 0):
            raise ValueError("eps and kappa must be positive")
        if order not in ("lex", "scrambled"):
            raise ValueError(f"unknown order {order!r}")
        self.eps, self.kappa, self.d, self.p = eps, kappa, d, p
        self.dims = p * d
        self.per_axis = int(math.ceil(2.0 * kappa * math.sqrt(d * p) / eps)) + 1
        self.axis = np.linspace(-kappa, kappa, self.per_axis)
        self.size = self.per_axis ** self.dims
        self.order = order
        self._mult, self._shift = self._affine_params(self.size)

    @staticmethod
    def _affine_params(n: int) -> tuple[int, int]:
        if n <= 2:
            return 1, 0
        a = int(round(n * (math.sqrt(5.0) - 1.0) / 2.0)) | 1
        while math.gcd(a, n) != 1:
            a += 2
        return a, n // 2

    @property
    def log_size(self) -> float:
        return self.dims * math.log(self.per_axis)

    def __len__(self) -> int:
        return self.size

    def grid_point(self, index: int) -> np.ndarray:
        digits = []
        rem = index
        for _ in range(self.dims):
            rem, r = divmod(rem, self.per_axis)
            digits.append(r)
        coords = self.axis[np.array(digits[::-1])]
        return coords.reshape(self.p, self.d)

    def candidate(self, rank: int) -> np.ndarray:
        """The ``rank``-th candidate in visiting order (clipped into the ball)."""
        if not 0 <= rank < self.size:
            raise IndexError(rank)
        idx = rank if self.order == "lex" else (self._mult * rank + self._shift) % self.size
        return clip_spectral(self.grid_point(idx), self.kappa)

    def __iter__(self):
        for r in range(self.size):
            yield self.candidate(r)


def controller_grid_net(eps: float, kappa: float, d: int, p: int, cap: int = DEFAULT_NET_CAP) -> list:
    """Materialized, deduplicated controller net (lexicographic order)."""
    net = ControllerGridNet(eps, kappa, d, p, order="lex")
    if net.size > cap:
        raise NetTooLarge(net.size, cap)
    out, seen = [], set()
    for K in net:
        key = tuple(np.round(K, 12).ravel())
        if key not in seen:
            seen.add(key)
            out.append(K)
    return out
