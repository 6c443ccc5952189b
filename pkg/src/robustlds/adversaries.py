"""Sources of misspecification ``w_t`` and exogenous disturbance ``f_t``.

A misspecification source is called as ``delta(t, traj)`` after the controller
has acted at step ``t``; it may read ``x_{1:t}`` and ``u_t``.  An f-source is
called as ``f(t, traj)`` after ``w_t`` is recorded.  Both follow the rollout
protocol of :func:`robustlds.lds_core.rollout`.
"""

from __future__ import annotations

import csv
import math
import sys
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .kernels import lb_nu, normalized_step, sign1
from .lds_core import NEG_INF, Trajectory

GREEDY_ALIGNED = "greedy_aligned"
GREEDY_ANTI_K = "greedy_anti_k"
GREEDY_RANDOM = "greedy_random"
MATRIX_SHIFT = "matrix_shift"
ZERO = "zero"

POLICIES = (GREEDY_ALIGNED, GREEDY_ANTI_K, GREEDY_RANDOM, MATRIX_SHIFT, ZERO)


# ---------------------------------------------------------------------------
# Misspecification at budget h


@dataclass
class DeltaBudget:
    """Budget ``h`` with the energy spent so far (``spent_sq = sum ||w_s||^2``)."""

    h: float
    policy: str = GREEDY_ALIGNED
    spent_sq: float = 0.0
    E: np.ndarray | None = None

    def __post_init__(self):
        if self.h < 0:
            raise ValueError("h must be >= 0")
        if self.policy not in POLICIES:
            raise ValueError(f"unknown delta policy {self.policy!r}")


def remaining_budget(h: float, log_sq_x: float, log_spent_sq: float) -> float:
    """``sqrt(max(0, h^2 S - spent))`` evaluated from logs of ``S`` and ``spent``."""
    if h == 0.0 or log_sq_x == NEG_INF:
        return 0.0
    # spent / (h^2 S), kept relative to h so tiny budgets do not underflow
    frac = math.exp(log_spent_sq - log_sq_x - 2.0 * math.log(h)) if log_spent_sq > NEG_INF else 0.0
    slack = 1.0 - frac
    if slack <= 0.0:
        return 0.0
    r = math.exp(math.log(h) + 0.5 * log_sq_x) * math.sqrt(slack)
    # subnormal results can round up past the budget
    return r if r >= sys.float_info.min else 0.0


def greedy_delta(x_hist, budget: DeltaBudget, direction=None) -> np.ndarray:
    """Budget-saturating ``w_t`` for the history ``x_hist = (x_1 .. x_t)``.

    ``direction`` overrides the policy direction (used for hinted policies).
    Updates ``budget.spent_sq`` in place.
    """
    xs = np.atleast_2d(np.asarray(x_hist, dtype=float))
    x_t = xs[-1]
    if budget.policy == ZERO or budget.h == 0.0:
        return np.zeros_like(x_t)
    S = float(np.sum(xs * xs))
    r = math.sqrt(max(0.0, budget.h**2 * S - budget.spent_sq))
    w = _policy_w(budget, x_t, r, direction)
    budget.spent_sq += float(w @ w)
    return w


def _policy_w(budget: DeltaBudget, x_t, r, direction=None, rng=None) -> np.ndarray:
    d = x_t.shape[0]
    if r <= 0.0:
        return np.zeros(d)
    if budget.policy == MATRIX_SHIFT:
        w = np.asarray(budget.E, float) @ x_t
        nw = float(np.linalg.norm(w))
        return w if nw <= r else w * (r / nw)
    if direction is None:
        if budget.policy == GREEDY_RANDOM and rng is not None:
            direction = rng.standard_normal(d)
        else:
            direction = x_t
    nd = float(np.linalg.norm(direction))
    if nd == 0.0 or not math.isfinite(nd):
        return np.zeros(d)
    return direction * (r / nd)


def anti_k_direction(hint_matrix, x_t) -> np.ndarray:
    """Top right-singular vector of ``hint_matrix``, signed to agree with ``x_t``."""
    _, _, Vt = np.linalg.svd(np.atleast_2d(hint_matrix))
    v = Vt[0]
    return v * sign1(float(v @ x_t))


class GreedyDelta:
    """Rollout adapter for :func:`greedy_delta`.

    The spent energy is read back from the trajectory's log-space mirror so
    the budget stays exact at state magnitudes where squares overflow.
    ``hint`` (for ``greedy_anti_k``) is a zero-argument callable returning
    the matrix whose top input direction to push along, typically the
    controller's current ``K``.
    """

    def __init__(self, h: float, policy: str = GREEDY_ALIGNED, E=None, hint: Callable | None = None, seed=None):
        self.budget = DeltaBudget(h, policy, E=None if E is None else np.asarray(E, float))
        if policy == MATRIX_SHIFT and E is None:
            raise ValueError("matrix_shift policy needs E")
        self.hint = hint
        self.rng = np.random.default_rng(seed)

    @property
    def h(self) -> float:
        return self.budget.h

    def __call__(self, t: int, traj: Trajectory) -> np.ndarray:
        x_t = traj.x[t]
        b = self.budget
        if b.policy == ZERO or b.h == 0.0:
            return np.zeros(traj.d)
        log_spent = 2.0 * traj.log_prefix_w(t - 1)
        r = remaining_budget(b.h, float(traj.log_sq_x[t]), log_spent)
        direction = None
        if b.policy == GREEDY_ANTI_K:
            K = self.hint() if self.hint is not None else None
            if K is not None and np.any(K):
                direction = anti_k_direction(K, x_t)
        w = _policy_w(b, x_t, r, direction, self.rng)
        spent = math.exp(log_spent) if log_spent < 709.0 else math.inf
        b.spent_sq = spent + float(w @ w)
        return w


def unstabilizable_delta(x_t, eps: float) -> np.ndarray:
    """``w = [[0, -eps], [0, 0]] x_t`` for the 2-D uncontrollable pairing."""
    x_t = np.asarray(x_t, float)
    if x_t.shape != (2,):
        raise ValueError("unstabilizable_delta needs a 2-vector")
    return np.array([-eps * x_t[1], 0.0])


class UnstabilizableDelta:
    def __init__(self, eps: float):
        self.eps = eps
        self.h = eps

    def __call__(self, t, traj):
        return unstabilizable_delta(traj.x[t], self.eps)


def unstabilizable_system(eps: float):
    """``A_eps = [[2, eps], [0, 2]]``, ``B = (0, 1)^T``."""
    from .lds_core import SystemInstance

    A = np.array([[2.0, eps], [0.0, 2.0]])
    B = np.array([[0.0], [1.0]])
    return SystemInstance(A, B, max(1.0, float(np.linalg.norm(A, 2))), None)


# ---------------------------------------------------------------------------
# Lower-bound game (1-D)


@dataclass(frozen=True)
class NormalizedGameState:
    z: float
    beta: float
    theta: float
    t0_reached: bool = True

    def __post_init__(self):
        if self.theta < 0:
            raise ValueError("theta must be >= 0")


def default_mu(gamma0: float) -> float:
    return min(0.1, 1.0 / (3.0 * gamma0 * gamma0)) / 2.0


def check_mu(mu: float, gamma0: float) -> None:
    if not (0.0 < mu < 1.0 / (3.0 * gamma0 * gamma0)):
        raise ValueError(f"mu={mu} outside (0, 1/(3 gamma0^2)) = (0, {1 / (3 * gamma0 ** 2):.6g})")


def game_interval(a0: float, gamma0: float, mu: float) -> tuple[float, float, float]:
    """``(lo, hi, center)`` of the trap interval ``I_0``."""
    return a0 + (4 + mu) * gamma0, a0 + (8 + 3 * mu) * gamma0, a0 + (6 + 2 * mu) * gamma0


def lb_adversary_step(y: NormalizedGameState, delta: float, a0: float, gamma0: float, mu: float) -> float:
    """Adversary move ``nu``; see :func:`robustlds.kernels.lb_nu`."""
    return float(lb_nu(float(y.z), float(y.beta), float(delta), float(a0), float(gamma0), float(mu)))


def normalized_update(y: NormalizedGameState, delta: float, nu: float) -> NormalizedGameState:
    z, beta, theta = normalized_step(float(y.z), float(y.beta), float(y.theta), float(delta), float(nu))
    return NormalizedGameState(z, beta, theta)


def raw_f_from_nu(nu: float, beta: float, a: float, x_t: float, p_t: float, w_t: float = 0.0) -> float:
    """Raw disturbance realizing ``nu``: ``nu sqrt(p + x^2) + (beta - a) x - w``."""
    return nu * math.sqrt(p_t + x_t * x_t) + (beta - a) * x_t - w_t


def raw_game_states(x, u):
    """``(z_t, beta_t, theta_t)`` from raw 1-D data, for every ``t`` with ``p_t > 0``.

    ``x`` has entries ``x_0 .. x_T`` and ``u`` entries ``u_0 .. u_{T-1}``.
    Returns arrays of length ``T + 1`` with NaN where ``p_t = 0``.  ``theta``
    is evaluated as ``sum (xi_s - beta x_s)^2 / p`` to avoid cancellation.
    """
    x = np.asarray(x, float).reshape(-1)
    u = np.asarray(u, float).reshape(-1)
    T = len(u)
    xi = x[1:] - u
    z = np.full(T + 1, np.nan)
    beta = np.full(T + 1, np.nan)
    theta = np.full(T + 1, np.nan)
    for t in range(1, T + 1):
        p = float(np.sum(x[:t] ** 2))
        if p == 0.0:
            continue
        b = float(np.sum(x[:t] * xi[:t])) / p
        beta[t] = b
        z[t] = x[t] / math.sqrt(p)
        theta[t] = float(np.sum((xi[:t] - b * x[:t]) ** 2)) / p
    return z, beta, theta


class LowerBoundF:
    """1-D raw-game f-source: realizes the adversary's ``nu`` for plant ``a``.

    While ``sum_{s<t} x_s^2 = 0`` it sets the innovation ``x_{t+1} - u_t`` to
    1 (so ``f_0 = 1``); afterwards it plays :func:`lb_adversary_step` against
    the controller's normalized move ``delta_t``.
    """

    def __init__(self, a: float, a0: float, gamma0: float, mu: float | None = None):
        self.a, self.a0, self.gamma0 = float(a), float(a0), float(gamma0)
        self.mu = default_mu(gamma0) if mu is None else float(mu)
        check_mu(self.mu, self.gamma0)
        self.P = 0.0
        self.Qg = 0.0
        self._t = 0
        self.history: list = []

    def __call__(self, t: int, traj: Trajectory) -> np.ndarray:
        while self._t < t:
            s = self._t
            xs = float(traj.x[s, 0])
            self.P += xs * xs
            self.Qg += xs * (float(traj.x[s + 1, 0]) - float(traj.u[s, 0]))
            self._t += 1
        x = float(traj.x[t, 0])
        u = float(traj.u[t, 0])
        w = float(traj.w[t, 0])
        if self.P == 0.0:
            return np.array([1.0 - self.a * x - w])
        beta = self.Qg / self.P
        z = x / math.sqrt(self.P)
        delta = (u + beta * x) / math.sqrt(self.P + x * x)
        nu = float(lb_nu(z, beta, delta, self.a0, self.gamma0, self.mu))
        self.history.append((t, z, beta, delta, nu))
        return np.array([raw_f_from_nu(nu, beta, self.a, x, self.P, w)])


# ---------------------------------------------------------------------------
# Scripted f sources


class ZeroF:
    def __call__(self, t, traj):
        return np.zeros(traj.d)


class ImpulseF:
    """Single impulse of magnitude ``mag`` along ``direction`` (default ``e_1``) at ``t0``."""

    def __init__(self, t0: int, mag: float, direction=None):
        self.t0, self.mag = int(t0), float(mag)
        self.direction = None if direction is None else np.asarray(direction, float)

    def __call__(self, t, traj):
        f = np.zeros(traj.d)
        if t == self.t0:
            if self.direction is None:
                f[0] = self.mag
            else:
                f = self.mag * self.direction / np.linalg.norm(self.direction)
        return f


class ScheduledImpulses:
    """Impulses ``f_{t_k} = m_k v_k`` at fixed times."""

    def __init__(self, times, vectors):
        self.schedule = {int(t): np.asarray(v, float) for t, v in zip(times, vectors)}

    def __call__(self, t, traj):
        v = self.schedule.get(t)
        return np.zeros(traj.d) if v is None else v.copy()


def read_f_csv(path) -> np.ndarray:
    """Rows of f (one per step); header optional, columns ``f_0 .. f_{d-1}`` if named."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        return np.zeros((0, 1))
    try:
        [float(v) for v in rows[0]]
        header = None
    except ValueError:
        header, rows = rows[0], rows[1:]
    if header is not None:
        idx = [i for i, name in enumerate(header) if name.strip().startswith("f_")]
        if not idx:
            idx = list(range(len(header)))
        rows = [[r[i] for i in idx] for r in rows]
    return np.array([[float(v) for v in r if v != ""] for r in rows])


class HintedImpulses:
    """Impulses timed and sized from the main controller's declared state.

    At each step, with probability ``rate``, fires ``f = c exp(s) v`` where
    ``v`` is a random unit vector, ``c`` is log-uniform in ``[1e-2, 1e2]`` and
    ``s`` is one of: the log budget ``ln q``, the log threshold
    ``ln alpha + ln q``, or the log of the exploration scale currently in
    use.  Stops firing once ``max_epochs`` epochs have started or the log
    scale would pass ``log_cap``, so states stay in floating range.
    """

    def __init__(self, controller, seed=None, rate: float = 0.05, max_epochs: int = 4,
                 log_cap: float = 600.0, first: float = 1.0):
        self.ctrl = controller
        self.rng = np.random.default_rng(seed)
        self.rate, self.max_epochs, self.log_cap, self.first = rate, max_epochs, log_cap, first
        self.fired: list = []

    def _candidate_log_scales(self):
        from .adaptive import CONTROL_ID, SYSID, log_exploration_scale

        s = self.ctrl.state
        out = []
        if s.log_q > NEG_INF:
            out += [s.log_q, s.alpha_log + s.log_q]
            if s.phase == CONTROL_ID:
                out.append(log_exploration_scale(CONTROL_ID, s.i, s.log_q, s.M, s.eps))
            elif s.phase == SYSID and s.log_q_prime > NEG_INF:
                out.append(log_exploration_scale(SYSID, s.i // 2, s.log_q_prime, s.M, s.eps))
        return out

    def __call__(self, t, traj):
        d = traj.d
        if t == 0:
            v = self.rng.standard_normal(d)
            return self.first * v / np.linalg.norm(v)
        if self.ctrl.epoch >= self.max_epochs or self.rng.random() >= self.rate:
            return np.zeros(d)
        scales = self._candidate_log_scales()
        if not scales:
            return np.zeros(d)
        s = scales[self.rng.integers(len(scales))] + math.log(10.0) * self.rng.uniform(-2.0, 2.0)
        if s > self.log_cap:
            return np.zeros(d)
        v = self.rng.standard_normal(d)
        f = math.exp(s) * v / np.linalg.norm(v)
        self.fired.append((t, s))
        return f


def parse_f_script(spec: str, d: int = 1, T: int | None = None):
    """Build an f-source from ``zero``, ``impulse:<t>:<mag>``, ``file:<csv>``.

    ``lb_game:<a0>:<gamma0>`` is returned as a tuple ``("lb_game", a0, gamma0)``
    because it needs the plant parameter and is wired by the caller.
    """
    spec = spec.strip()
    if spec == "zero":
        return ZeroF()
    kind, _, rest = spec.partition(":")
    if kind == "impulse":
        t0, mag = rest.split(":")
        return ImpulseF(int(t0), float(mag))
    if kind == "file":
        arr = read_f_csv(rest)
        if arr.ndim != 2 or arr.shape[1] != d:
            raise ValueError(f"f file has shape {arr.shape}, expected (*, {d})")
        from .lds_core import ScriptedF

        return ScriptedF(arr)
    if kind == "lb_game":
        a0, gamma0 = rest.split(":")
        return ("lb_game", float(a0), float(gamma0))
    raise ValueError(f"unknown f_script {spec!r}")
