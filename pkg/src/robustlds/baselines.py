"""Baseline controllers: scalar certainty equivalence and Cusumano-Poolla enumeration."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ControllerExhausted
from .lds_core import NEG_INF, SystemInstance, random_orthogonal
from .nets import ControllerGridNet, clip_spectral, controller_grid_net, sphere_net  # noqa: F401

# ---------------------------------------------------------------------------
# Certainty equivalence (d = 1)


@dataclass(frozen=True)
class CertEquivState:
    """Running least-squares sums ``X = sum x_s^2``, ``Q = sum x_s (x_{s+1} - u_s)``."""

    M: float
    X: float = 0.0
    Q: float = 0.0
    a_hat: float = 0.0

    @property
    def a_bar(self) -> float | None:
        """Unclipped least-squares estimate (``None`` before any data)."""
        return self.Q / self.X if self.X > 0 else None


def cert_equiv_step(state: CertEquivState, x_t: float, x_prev: float, u_prev: float):
    """Absorb ``(x_prev, u_prev -> x_t)`` and return ``(u_t, state')``."""
    X = state.X + x_prev * x_prev
    Q = state.Q + x_prev * (x_t - u_prev)
    a_hat = min(max(Q / X, -state.M), state.M) if X > 0 else 0.0
    return -a_hat * x_t, replace(state, X=X, Q=Q, a_hat=a_hat)


class CertEquivController:
    """Rollout adapter for scalar systems."""

    epoch = 0
    phase = "Exploit"

    def __init__(self, M: float):
        self.state = CertEquivState(float(M))

    def act(self, t, x, traj):
        u, self.state = cert_equiv_step(
            self.state, float(x[0]), float(traj.x[t - 1, 0]), float(traj.u[t - 1, 0])
        )
        return np.array([u])


def cert_equiv_gain_bound(M: float, h: float) -> float:
    """``sqrt(64 M^2 - 8 h) / (1 - 2 h)^{3/2}`` (requires ``h < 1/2``)."""
    if not h < 0.5:
        raise ValueError("bound requires h < 1/2")
    return math.sqrt(64 * M * M - 8 * h) / (1 - 2 * h) ** 1.5


# ---------------------------------------------------------------------------
# Cusumano-Poolla


@dataclass(frozen=True)
class CPState:
    """Enumeration state; ``rank`` indexes the current candidate in ``net``."""

    net: object
    kappa: float
    log_q: float
    rank: int = 0
    switches: int = 0

    @property
    def alpha(self) -> float:
        return 27.0 * self.kappa**4

    @property
    def log_alpha(self) -> float:
        return math.log(27.0) + 4 * math.log(self.kappa)

    @property
    def current_K(self) -> np.ndarray:
        return _net_candidate(self.net, self.rank)

    @property
    def remaining(self) -> int:
        return len(self.net) - self.switches

    @property
    def q(self) -> float:
        return math.exp(self.log_q)


def _net_candidate(net, rank):
    return net.candidate(rank) if isinstance(net, ControllerGridNet) else net[rank]


def cusumano_poolla_step(state: CPState, x_t, prefix_x=None, *, log_prefix=None):
    """Returns ``(u_t, state', event)`` with ``event`` ``None`` or a switch record."""
    if log_prefix is None:
        log_prefix = math.log(prefix_x) if prefix_x and prefix_x > 0 else NEG_INF
    event = None
    if log_prefix > state.log_alpha + state.log_q:
        if state.rank + 1 >= len(state.net):
            raise ControllerExhausted(f"all {len(state.net)} candidates rejected")
        event = {"event": "switch", "q_old_log": state.log_q, "q_new_log": log_prefix,
                 "rank_old": state.rank, "rank_new": state.rank + 1}
        state = replace(state, log_q=log_prefix, rank=state.rank + 1, switches=state.switches + 1)
    u = -state.current_K @ np.asarray(x_t, float)
    return u, state, event


class CusumanoPoollaController:
    """Rollout adapter; candidates come from a lazily enumerated grid net.

    On a switch the next candidate already acts at the same step.
    """

    phase = "Exploit"

    def __init__(self, M: float, kappa: float, d: int, p: int, F: float,
                 order: str = "scrambled", net=None):
        if net is None:
            net = ControllerGridNet(1.0 / (2.0 * M * kappa**2), kappa, d, p, order=order)
        log_q = math.log(F) if F > 0 else NEG_INF
        self.state = CPState(net, float(kappa), log_q)
        self.events: list = []
        self.retained_since = 1

    @property
    def epoch(self) -> int:
        return self.state.switches

    @property
    def net_size(self) -> int:
        return len(self.state.net)

    def current_K(self):
        return self.state.current_K

    def act(self, t, x, traj):
        u, self.state, ev = cusumano_poolla_step(self.state, x, log_prefix=traj.log_prefix_x(t))
        if ev is not None:
            ev["t"] = t
            self.events.append(ev)
            self.retained_since = t
        return u


def cp_gain_certificate_log(kappa: float, M: float, d: int, p: int) -> float:
    """ln of ``(135 kappa^5 M)^{(4 M kappa^3 sqrt(dp))^{dp}}``."""
    dp = d * p
    return (4 * M * kappa**3 * math.sqrt(dp)) ** dp * math.log(135 * kappa**5 * M)


# ---------------------------------------------------------------------------
# Strong stabilizability


@dataclass(frozen=True)
class StabilityCertificate:
    K: np.ndarray
    H: np.ndarray
    Lam: np.ndarray
    kappa: float


@dataclass
class CheckReport:
    checks: list

    @property
    def ok(self) -> bool:
        return all(p for _, p, _ in self.checks)

    def violations(self) -> list:
        return [name for name, p, _ in self.checks if not p]


def assemble_strongly_stabilizable(H, Lam, K, B) -> np.ndarray:
    """``A = H Lam H^{-1} - B K`` so that ``A + B K = H Lam H^{-1}``."""
    H = np.atleast_2d(np.asarray(H, float))
    HL = H @ np.atleast_2d(Lam)
    return np.linalg.solve(H.T, HL.T).T - np.atleast_2d(B) @ np.atleast_2d(K)


def make_strongly_stabilizable_instance(kappa: float, d: int, p: int, seed=None):
    """Random ``kappa``-strongly stabilizable ``(A, B)`` with its certificate.

    ``H`` has singular values in ``[kappa^{-1/2}, kappa^{1/2}]``, ``Lam`` is
    diagonal with entries in ``[-(1 - 1/kappa), 1 - 1/kappa]``, ``||K*|| <= kappa``
    and ``||B|| <= 1``.  The published bound is ``M = max(1, ||A||, ||B||)``.
    """
    if kappa < 1:
        raise ValueError("kappa must be >= 1")
    rng = np.random.default_rng(seed)
    s = kappa ** rng.uniform(-0.5, 0.5, d)
    H = random_orthogonal(d, rng) @ np.diag(s) @ random_orthogonal(d, rng).T
    Lam = np.diag(rng.uniform(-1.0, 1.0, d) * (1.0 - 1.0 / kappa))
    G = rng.standard_normal((p, d))
    K = G / np.linalg.norm(G, 2) * kappa * (1.0 - rng.random())
    Bg = rng.standard_normal((d, p))
    B = Bg / np.linalg.norm(Bg, 2) * (1.0 - rng.random())
    A = assemble_strongly_stabilizable(H, Lam, K, B)
    M = max(1.0, float(np.linalg.norm(A, 2)), float(np.linalg.norm(B, 2)))
    return SystemInstance(A, B, M, None), StabilityCertificate(K, H, Lam, float(kappa))


def verify_strong_stabilizability(A, B, K, H, Lam, kappa, rtol: float = 1e-9) -> CheckReport:
    """Check every condition of the definition; a singular ``H`` is a violation."""
    A, B, K, H, Lam = (np.atleast_2d(np.asarray(m, float)) for m in (A, B, K, H, Lam))
    slack = 1.0 + rtol
    checks = []
    nK = float(np.linalg.norm(K, 2))
    checks.append(("norm_K", nK <= kappa * slack, f"||K||={nK:.6g}, kappa={kappa}"))
    sv = np.linalg.svd(H, compute_uv=False)
    if sv[-1] <= sv[0] * 1e-14:
        checks.append(("H_invertible", False, "H is singular"))
    else:
        nH, nHi = float(sv[0]), float(1.0 / sv[-1])
        checks.append(("norm_H", nH <= kappa * slack, f"||H||={nH:.6g}"))
        checks.append(("norm_H_inv", nHi <= kappa * slack, f"||H^-1||={nHi:.6g}"))
        checks.append(("cond_H", nH * nHi <= kappa * slack, f"cond={nH * nHi:.6g}"))
        target = np.linalg.solve(H.T, (H @ Lam).T).T
        lhs = A + B @ K
        err = float(np.linalg.norm(lhs - target, 2))
        scale = max(1.0, float(np.linalg.norm(target, 2)))
        checks.append(("closed_loop", err <= rtol * scale, f"||A+BK-H Lam H^-1||={err:.3g}"))
    nL = float(np.linalg.norm(Lam, 2))
    bound = 1.0 - 1.0 / kappa
    checks.append(("norm_Lam", nL <= bound + rtol, f"||Lam||={nL:.6g}, bound={bound:.6g}"))
    return CheckReport(checks)
