"""Budget-doubling adaptive controller with active exploration.

The controller runs in epochs.  Each epoch holds a disturbance budget ``q``;
it first identifies the control matrix by playing large scaled basis
controls, then identifies the state matrix by playing large controls along
``B_hat^{-1} v`` for every exploration direction ``v``, then plays
``u = -K x`` with ``K = B_hat^{-1} A_hat``.  Whenever the state energy
``||x_{1:t}||`` exceeds ``alpha * q`` (or an estimate fails a sanity check)
the budget is raised to the current energy and identification restarts.

All thresholds and scales are handled as natural logs: ``alpha`` is around
1e20 already for ``d = 2`` and exploration controls reach 1e35 at ``d = 3``.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CertifiedOverflowError, ControllerFailure
from .kernels import phi_saddle, phi_value
from .lds_core import NEG_INF, Trajectory
from .nets import EPS_NET, STANDARD_BASIS, ExplorationSet, sphere_net, standard_basis

LOG_FLOAT_MAX = math.log(np.finfo(float).max)
LN4 = math.log(4.0)

IDLE = "Idle"
CONTROL_ID = "ControlID"
SYSID = "SysID"
EXPLOIT = "Exploit"

MAX_EPS_NET_DIM = 6


def _check_variant(variant: str) -> str:
    if variant not in (STANDARD_BASIS, EPS_NET):
        raise ValueError(f"unknown variant {variant!r}")
    return variant


def default_parameters(M: float, L: float, d: int, variant: str = STANDARD_BASIS) -> tuple[float, float]:
    """Default ``(eps, ln alpha)`` for the given bounds and exploration variant."""
    _check_variant(variant)
    if not (M >= 1 and 0 < L <= 1 and d >= 1):
        raise ValueError(f"need M >= 1, 0 < L <= 1, d >= 1 (got M={M}, L={L}, d={d})")
    if variant == STANDARD_BASIS:
        eps = L / (150.0 * M * d)
        alpha_log = d * (14 * LN4 + 8 * math.log(M) + 2 * math.log(d) - 2 * math.log(L))
    else:
        if d > MAX_EPS_NET_DIM:
            raise ValueError(f"eps_net variant refused for d={d} > {MAX_EPS_NET_DIM}")
        eps = L / (1000.0 * M * math.sqrt(d))
        alpha_log = 5**d * (16 * LN4 + 8 * math.log(M) + math.log(d) - 2 * math.log(L))
    return eps, alpha_log


def log_exploration_scale(phase: str, i: int, log_q: float, M: float, eps: float) -> float:
    """ln of ``lambda_i`` (ControlID) or ``xi_i`` (SysID, ``i`` = probe index ``j``)."""
    if phase == CONTROL_ID:
        return 2 * i * LN4 + (2 * i + 1) * math.log(M) + log_q - (i + 1) * math.log(eps)
    if phase == SYSID:
        return 3 * i * LN4 + (3 * i + 2) * math.log(M) + log_q - (i + 1) * math.log(eps)
    raise ValueError(f"no exploration scale for phase {phase!r}")


def exploration_scale(phase: str, i: int, q: float, M: float, eps: float) -> float:
    """``lambda_i`` or ``xi_i``; raises :class:`CertifiedOverflowError` past float range."""
    return _exp_checked(log_exploration_scale(phase, i, math.log(q), M, eps), f"{phase} scale")


def log_q_prime(log_q: float, M: float, eps: float, d: int) -> float:
    return 2 * d * LN4 + 2 * d * math.log(M) - d * math.log(eps) + log_q


def _exp_checked(log_value: float, what: str) -> float:
    if log_value > LOG_FLOAT_MAX:
        raise CertifiedOverflowError(log_value, what)
    return math.exp(log_value)


def assemble_B_hat(states, log_lambdas) -> np.ndarray:
    """Columns ``x_{t+i+1} / lambda_i``."""
    cols = [np.asarray(x, float) * math.exp(-ll) for x, ll in zip(states, log_lambdas)]
    return np.column_stack(cols)


def assemble_targets(states, log_xis) -> np.ndarray:
    """Columns ``x_{t'+2j+2} / xi_j`` (equals ``A_hat`` for the standard basis)."""
    cols = [np.asarray(x, float) * math.exp(-lx) for x, lx in zip(states, log_xis)]
    return np.column_stack(cols)


@dataclass
class PhiResult:
    A_hat: np.ndarray
    phi: float
    lower: float
    converged: bool
    iterations: int


def minimize_phi(V: ExplorationSet, targets, M: float, tol: float = 1e-8, max_iter: int = 200_000) -> PhiResult:
    """Minimize ``max_i ||A v_i - y_i||`` over ``||A||_2 <= M``.

    ``targets`` holds ``y_i`` as columns (``d x N``) or as a list of vectors.
    The problem is a bilinear saddle point, solved by projected extragradient
    (spectral clipping for ``A``, group-l1 projection for the dual weights)
    started from the clipped least-squares fit.  ``lower`` is a certified lower
    bound on the optimum; ``converged`` means ``phi - lower <= tol``.
    """
    Vm = np.ascontiguousarray(V.vectors.T)
    if isinstance(targets, (list, tuple)):
        targets = np.column_stack([np.asarray(y, float).reshape(-1) for y in targets])
    Y = np.asarray(targets, dtype=float).reshape(V.d, -1)
    if Y.shape != Vm.shape:
        raise ValueError(f"targets must be {Vm.shape}, got {Y.shape}")
    Y = np.ascontiguousarray(Y)
    if not np.any(Y):
        return PhiResult(np.zeros((V.d, V.d)), 0.0, 0.0, True, 0)
    A0 = np.linalg.lstsq(Vm.T, Y.T, rcond=None)[0].T
    A, upper, lower, iters = phi_saddle(np.ascontiguousarray(A0), Vm, Y, float(M), tol, max_iter, 200)
    s = np.linalg.svd(A, compute_uv=False)
    if s[0] > M:
        A = A * (M / s[0])
        upper = phi_value(A, Vm, Y)
    return PhiResult(A, float(upper), float(lower), bool(upper - lower <= tol), int(iters))


def synthesize_K(A_hat, B_hat, L: float | None = None) -> np.ndarray:
    """``K = B_hat^{-1} A_hat`` by a linear solve."""
    B_hat = np.atleast_2d(np.asarray(B_hat, float))
    A_hat = np.atleast_2d(np.asarray(A_hat, float))
    if L is not None:
        smin = float(np.linalg.svd(B_hat, compute_uv=False)[-1])
        if smin < L / 2:
            raise ControllerFailure(f"sigma_min(B_hat)={smin:.6g} < L/2={L / 2:.6g}")
    return np.linalg.solve(B_hat, A_hat)


@dataclass
class EpochState:
    """Mutable knowledge of the main controller (copied on every step)."""

    M: float
    L: float
    d: int
    eps: float
    alpha_log: float
    V: ExplorationSet
    log_q: float = NEG_INF
    log_q_prime: float = NEG_INF
    epoch: int = 0
    phase: str = IDLE
    i: int = 0
    B_hat: np.ndarray | None = None
    A_hat: np.ndarray | None = None
    K: np.ndarray | None = None
    pending: str | None = None
    probe_states: list = field(default_factory=list)
    probe_log_scales: list = field(default_factory=list)

    def __post_init__(self):
        if self.K is None:
            self.K = np.zeros((self.d, self.d))

    @property
    def q(self) -> float:
        return math.exp(self.log_q) if self.log_q < LOG_FLOAT_MAX else math.inf

    @property
    def q_prime(self) -> float:
        return math.exp(self.log_q_prime) if self.log_q_prime < LOG_FLOAT_MAX else math.inf

    @property
    def N(self) -> int:
        return self.V.N

    def label(self) -> str:
        if self.phase == CONTROL_ID:
            return f"ControlID({self.i})"
        if self.phase == SYSID:
            return f"SysID{'Even' if self.i % 2 == 0 else 'Odd'}({self.i})"
        return self.phase

    def copy(self) -> "EpochState":
        s = copy.copy(self)
        s.probe_states = list(self.probe_states)
        s.probe_log_scales = list(self.probe_log_scales)
        return s


def _exceeds(s: EpochState, log_prefix: float) -> bool:
    return log_prefix > s.alpha_log + s.log_q


def _event(events, t, name, s, **extra):
    rec = {"t": t, "event": name, "epoch": s.epoch, "phase": s.label()}
    rec.update(extra)
    events.append(rec)


def _restart(s: EpochState, log_prefix: float, t, events, reason: str, name: str = "restart"):
    q_old_log = s.log_q
    label = s.label()
    s.epoch += 1
    events.append({
        "t": t, "event": name, "epoch": s.epoch, "phase": label,
        "q_old": _safe_exp(q_old_log), "q_new": _safe_exp(log_prefix),
        "q_old_log": q_old_log, "q_new_log": log_prefix, "reason": reason,
    })
    s.log_q = log_prefix
    s.phase, s.i = CONTROL_ID, 0
    s.B_hat = s.A_hat = None
    s.pending = None
    s.probe_states, s.probe_log_scales = [], []


def _safe_exp(v: float) -> float:
    return math.exp(v) if v < LOG_FLOAT_MAX else math.inf


def control_matrix_id_step(state: EpochState, x_t, prefix_x=None, *, log_prefix=None, t=None):
    """One ControlID sub-step; returns ``(u, state', events)``.

    ``u`` is ``None`` when the phase changed without acting (restart, or the
    final observation completed control identification); the caller then
    dispatches again at the same time step.
    """
    lp = _log_prefix(prefix_x, log_prefix)
    s = state.copy()
    events: list = []
    x = np.asarray(x_t, float)
    if s.phase != CONTROL_ID:
        raise ControllerFailure(f"control_matrix_id_step called in phase {s.label()}")
    if s.i > 0 or s.pending == CONTROL_ID:
        s.probe_states.append(x.copy())
    if _exceeds(s, lp):
        _restart(s, lp, t, events, "energy")
        return None, s, events
    if s.pending == CONTROL_ID:
        B_hat = assemble_B_hat(s.probe_states, s.probe_log_scales)
        smin = float(np.linalg.svd(B_hat, compute_uv=False)[-1])
        if smin < s.L / 2:
            _restart(s, lp, t, events, "sigma_min")
            return None, s, events
        s.B_hat = B_hat
        s.pending = None
        s.log_q_prime = log_q_prime(s.log_q, s.M, s.eps, s.d)
        s.phase, s.i = SYSID, 0
        s.probe_states, s.probe_log_scales = [], []
        _event(events, t, "control_id_done", s, sigma_min=smin, _B_hat=B_hat)
        return None, s, events
    ll = log_exploration_scale(CONTROL_ID, s.i, s.log_q, s.M, s.eps)
    lam = _exp_checked(ll, f"lambda_{s.i}")
    u = np.zeros(s.d)
    u[s.i] = lam
    s.probe_log_scales.append(ll)
    s.i += 1
    if s.i == s.d:
        s.pending = CONTROL_ID
        s.i = s.d - 1
    return u, s, events


def sysid_step(state: EpochState, x, prefix_x=None, *, log_prefix=None, t=None):
    """One SysID sub-step (or the final observation); returns ``(u, state', events)``."""
    lp = _log_prefix(prefix_x, log_prefix)
    s = state.copy()
    events: list = []
    x = np.asarray(x, float)
    if s.phase != SYSID or s.B_hat is None:
        raise ControllerFailure(f"sysid_step called in phase {s.label()} without B_hat")
    finishing = s.pending == SYSID
    if finishing or (s.i % 2 == 0 and s.i >= 2):
        s.probe_states.append(x.copy())
    if finishing:
        Y = assemble_targets(s.probe_states, s.probe_log_scales)
        if s.V.kind == STANDARD_BASIS:
            A_hat = Y
            norm_a = float(np.linalg.norm(A_hat, 2))
            if norm_a > 2 * s.M:
                _restart(s, lp, t, events, "norm_A_hat")
                return None, s, events
            extra = {"norm_A_hat": norm_a}
        else:
            res = minimize_phi(s.V, Y, s.M, tol=1e-9 * max(1.0, float(np.abs(Y).max())))
            A_hat = res.A_hat
            extra = {"phi": res.phi, "phi_lower": res.lower, "phi_converged": res.converged}
        s.A_hat = A_hat
        s.K = synthesize_K(A_hat, s.B_hat, s.L)
        s.phase, s.i, s.pending = EXPLOIT, 0, None
        s.probe_states, s.probe_log_scales = [], []
        _event(events, t, "sysid_done", s, _A_hat=A_hat, _K=s.K, **extra)
        return None, s, events
    if _exceeds(s, lp):
        _restart(s, lp, t, events, "energy")
        return None, s, events
    u = np.zeros(s.d)
    if s.i % 2 == 0:
        j = s.i // 2
        lx = log_exploration_scale(SYSID, j, s.log_q_prime, s.M, s.eps)
        xi = _exp_checked(lx, f"xi_{j}")
        u = xi * np.linalg.solve(s.B_hat, s.V.vectors[j])
        s.probe_log_scales.append(lx)
    s.i += 1
    if s.i == 2 * s.N:
        s.pending = SYSID
        s.i = 2 * s.N - 1
    return u, s, events


def _log_prefix(prefix_x, log_prefix):
    if log_prefix is not None:
        return float(log_prefix)
    if prefix_x is None:
        raise ValueError("need prefix_x or log_prefix")
    return math.log(prefix_x) if prefix_x > 0 else NEG_INF


def l2_gain_controller_step(state: EpochState, x_t, prefix_x=None, *, log_prefix=None, t=None):
    """Full controller step: returns ``(u_t, state', events)``."""
    lp = _log_prefix(prefix_x, log_prefix)
    s = state
    events: list = []
    x = np.asarray(x_t, float)
    for _ in range(8):
        if s.phase in (IDLE, EXPLOIT):
            if _exceeds(s, lp):
                s = s.copy()
                name = "epoch_start"
                _restart(s, lp, t, events, "energy", name=name)
                continue
            return -s.K @ x, s, events
        if s.phase == CONTROL_ID:
            u, s, ev = control_matrix_id_step(s, x, log_prefix=lp, t=t)
        else:
            u, s, ev = sysid_step(s, x, log_prefix=lp, t=t)
        events.extend(ev)
        if u is not None:
            return u, s, events
    raise ControllerFailure("controller failed to settle within one step")


@dataclass
class EpochRecord:
    """What one epoch learned; filled in as phases complete."""

    epoch: int
    t_start: int
    log_q: float
    reason: str
    t_sysid: int | None = None
    B_hat: np.ndarray | None = None
    t_exploit: int | None = None
    A_hat: np.ndarray | None = None
    K: np.ndarray | None = None


class L2GainController:
    """Rollout adapter around :func:`l2_gain_controller_step`.

    ``initial_budget`` (optional) starts identification at the first step
    with ``q`` set to it, which is how a known disturbance energy is handed
    to the controller; otherwise the controller starts idle with ``q = 0``.
    """

    def __init__(
        self,
        M: float,
        L: float,
        d: int,
        variant: str = STANDARD_BASIS,
        eps_override: float | None = None,
        alpha_override_log: float | None = None,
        initial_budget: float | None = None,
        net_cap: int | None = None,
    ):
        _check_variant(variant)
        eps, alpha_log = default_parameters(M, L, d, variant)
        if eps_override is not None:
            eps = float(eps_override)
        if alpha_override_log is not None:
            alpha_log = float(alpha_override_log)
        if variant == STANDARD_BASIS:
            V = standard_basis(d)
        else:
            V = sphere_net(0.5, d) if net_cap is None else sphere_net(0.5, d, cap=net_cap)
        self.variant = variant
        self.state = EpochState(M=M, L=L, d=d, eps=eps, alpha_log=alpha_log, V=V)
        self.events: list = []
        self.records: list[EpochRecord] = []
        self._initial_budget = initial_budget
        self._started = False

    @property
    def epoch(self) -> int:
        return self.state.epoch

    @property
    def phase(self) -> str:
        return self.state.label()

    @property
    def alpha_log(self) -> float:
        return self.state.alpha_log

    @property
    def eps(self) -> float:
        return self.state.eps

    def current_K(self) -> np.ndarray:
        return self.state.K

    def act(self, t: int, x, traj: Trajectory):
        lp = traj.log_prefix_x(t)
        if not self._started:
            self._started = True
            if self._initial_budget is not None and self._initial_budget > 0:
                s = self.state.copy()
                s.log_q = math.log(self._initial_budget)
                s.epoch, s.phase, s.i = 1, CONTROL_ID, 0
                self.state = s
                ev = {"t": t, "event": "epoch_start", "epoch": 1, "phase": s.label(),
                      "q_old": 0.0, "q_new": self._initial_budget, "q_old_log": NEG_INF,
                      "q_new_log": s.log_q, "reason": "initial_budget"}
                self.events.append(ev)
                self.records.append(EpochRecord(1, t, s.log_q, "initial_budget"))
        u, self.state, events = l2_gain_controller_step(self.state, x, log_prefix=lp, t=t)
        for ev in events:
            self.events.append(ev)
            name = ev["event"]
            if name in ("restart", "epoch_start"):
                self.records.append(EpochRecord(ev["epoch"], t, ev["q_new_log"], ev["reason"]))
            elif name == "control_id_done":
                self.records[-1].t_sysid = t
                self.records[-1].B_hat = ev["_B_hat"]
            elif name == "sysid_done":
                rec = self.records[-1]
                rec.t_exploit = t
                rec.A_hat, rec.K = ev["_A_hat"], ev["_K"]
        return u

    def events_jsonl(self) -> str:
        return "".join(json.dumps(_jsonable(ev), sort_keys=False) + "\n" for ev in self.events)


def _jsonable(ev: dict) -> dict:
    out = {}
    for k, v in ev.items():
        if k.startswith("_"):
            continue
        if isinstance(v, float) and not math.isfinite(v):
            out[k] = "inf" if v > 0 else ("-inf" if v < 0 else "nan")
        elif isinstance(v, (np.floating, np.integer)):
            out[k] = v.item()
        else:
            out[k] = v
    return out
