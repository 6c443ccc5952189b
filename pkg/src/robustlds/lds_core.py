"""Ground-truth plant, trajectory recording and closed-loop rollout.

The plant is ``x_{t+1} = A x_t + B u_t + w_t + f_t`` with ``x_0 = u_0 = w_0 = 0``.
A rollout of horizon ``T`` records rows ``t = 0 .. T-1`` of ``(x_t, u_t, w_t,
f_t)`` and the final state ``x_T``; the measured gain is
``||x_{1:T}|| / ||f_{0:T-1}||``.

Prefix energies are kept as running sums of squares plus a log-space mirror,
because the main controller's exploration can push states to 1e150 and beyond
where squares overflow.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .errors import CertifiedOverflowError, ControllerFailure, DimensionError, NumericOverflowError

NEG_INF = -math.inf


def log_norm(v) -> float:
    """Natural log of the Euclidean norm of ``v``, overflow-safe (``-inf`` for 0)."""
    v = np.asarray(v, dtype=float)
    m = float(np.max(np.abs(v))) if v.size else 0.0
    if m == 0.0:
        return NEG_INF
    if not math.isfinite(m):
        return math.inf
    return math.log(m) + 0.5 * math.log(float(np.sum((v / m) ** 2)))


def safe_norm(v) -> float:
    return float(np.hypot.reduce(np.ravel(np.asarray(v, dtype=float)))) if np.size(v) else 0.0


def log_add(a: float, b: float) -> float:
    return float(np.logaddexp(a, b))


# ---------------------------------------------------------------------------
# System


@dataclass(frozen=True)
class SystemInstance:
    """Hidden plant ``(A, B)`` with its published bounds ``M`` and ``L``.

    ``B`` is square for everything except the Cusumano-Poolla experiments,
    which use a rectangular ``d x p`` control matrix; ``L`` is ``None`` there.
    """

    A: np.ndarray
    B: np.ndarray
    M: float
    L: float | None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise DimensionError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise DimensionError(f"B has {B.shape[0]} rows, A is {A.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.B.shape[1]


def step(sys: SystemInstance, x, u, w, f) -> np.ndarray:
    """One transition ``A x + B u + w + f``."""
    x, u, w, f = (np.asarray(v, dtype=float).reshape(-1) for v in (x, u, w, f))
    d, p = sys.d, sys.p
    for name, v, n in (("x", x, d), ("u", u, p), ("w", w, d), ("f", f, d)):
        if v.shape[0] != n:
            raise DimensionError(f"{name} has length {v.shape[0]}, expected {n}")
    return sys.A @ x + sys.B @ u + w + f


def prefix_energy(vectors, t: int) -> float:
    """``sqrt(sum_{s<t} ||v_s||^2)`` over the first ``t`` entries of ``vectors``."""
    if t == 0:
        return 0.0
    if t > len(vectors):
        raise IndexError(f"prefix length {t} exceeds {len(vectors)} vectors")
    arr = np.asarray(vectors[:t], dtype=float).reshape(t, -1)
    return safe_norm(arr)


@dataclass
class ValidationReport:
    checks: list[tuple[str, bool, str]]

    @property
    def ok(self) -> bool:
        return all(passed for _, passed, _ in self.checks)

    def violations(self) -> list[str]:
        return [f"{name}: {detail}" for name, passed, detail in self.checks if not passed]


def validate_system(sys: SystemInstance) -> ValidationReport:
    """Check the boundedness / full-actuation assumptions on ``sys``."""
    M, L = sys.M, sys.L
    norm_a = float(np.linalg.norm(sys.A, 2))
    norm_b = float(np.linalg.norm(sys.B, 2))
    checks = [
        ("norm_A_le_M", norm_a <= M, f"||A||={norm_a:.6g}, M={M:.6g}"),
        ("norm_B_le_M", norm_b <= M, f"||B||={norm_b:.6g}, M={M:.6g}"),
    ]
    if sys.B.shape[0] != sys.B.shape[1]:
        checks.append(("sigma_min_B_gt_L", False, f"B is {sys.B.shape}, not square"))
    else:
        smin = float(np.linalg.svd(sys.B, compute_uv=False)[-1])
        checks.append(
            ("sigma_min_B_gt_L", L is not None and smin > L, f"sigma_min(B)={smin:.6g}, L={L}")
        )
    checks.append(
        (
            "parameter_ranges",
            M >= 1 and L is not None and 0 < L <= 1,
            f"M={M}, L={L} (need M >= 1, 0 < L <= 1)",
        )
    )
    return ValidationReport(checks)


def random_orthogonal(d: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def random_system(d: int, M: float, L: float, rng: np.random.Generator) -> SystemInstance:
    """Random plant with ``||A|| <= M``, ``||B|| <= M`` and ``sigma_min(B) > L``."""
    if not M > L:
        raise ValueError("need M > L so that L < sigma_min(B) <= M is feasible")
    G = rng.standard_normal((d, d))
    A = G / np.linalg.norm(G, 2) * M * (1.0 - rng.random())
    s = L + (M - L) * (1.0 - rng.random(d))
    B = random_orthogonal(d, rng) @ np.diag(s) @ random_orthogonal(d, rng).T
    return SystemInstance(A, B, M, L)


# ---------------------------------------------------------------------------
# Trajectory


@dataclass
class Trajectory:
    """Recorded rollout.

    ``x`` has rows ``x_0 .. x_n``; ``u``, ``w``, ``f`` have rows ``0 .. n-1``
    where ``n`` is the number of completed steps.  ``sq_x[t]`` is
    ``sum_{s=1}^t ||x_s||^2`` and ``log_sq_x`` its natural log (``-inf`` for 0);
    ``sq_f[t]`` / ``sq_w[t]`` accumulate ``s = 0 .. t``.
    """

    x: np.ndarray
    u: np.ndarray
    w: np.ndarray
    f: np.ndarray
    epoch: np.ndarray
    phase: list
    sq_x: np.ndarray
    log_sq_x: np.ndarray
    sq_f: np.ndarray
    log_sq_f: np.ndarray
    sq_w: np.ndarray
    log_sq_w: np.ndarray
    n: int = 0
    error: str | None = None
    error_step: int | None = None

    @classmethod
    def empty(cls, T: int, d: int, p: int | None = None) -> "Trajectory":
        p = d if p is None else p
        x = np.zeros((T + 1, d))
        z = np.zeros(T + 1)
        lz = np.full(T + 1, NEG_INF)
        return cls(
            x=x,
            u=np.zeros((T, p)),
            w=np.zeros((T, d)),
            f=np.zeros((T, d)),
            epoch=np.zeros(T + 1, dtype=np.int64),
            phase=["Idle"] * (T + 1),
            sq_x=z.copy(),
            log_sq_x=lz.copy(),
            sq_f=np.zeros(T),
            log_sq_f=np.full(T, NEG_INF),
            sq_w=np.zeros(T),
            log_sq_w=np.full(T, NEG_INF),
        )

    @classmethod
    def from_arrays(cls, x, u, w, f, epoch=None, phase=None) -> "Trajectory":
        """Build from recorded arrays; ``x`` has one row more than ``u``, ``w``, ``f``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[0] == 1 and x.shape[1] > 1 and np.ndim(u) == 1:
            x = x.T
        n, d = x.shape[0] - 1, x.shape[1]
        u, w, f = (np.asarray(a, dtype=float).reshape(n, -1) for a in (u, w, f))
        traj = cls.empty(n, d, u.shape[1])
        for t in range(n):
            traj._record_inputs(t, u[t], w[t], f[t])
        for t in range(1, n + 1):
            traj._record_state(t, x[t])
        traj.x[0] = x[0]
        if epoch is not None:
            traj.epoch[:] = epoch
        if phase is not None:
            traj.phase = list(phase)
        traj.n = n
        return traj

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def T(self) -> int:
        return self.n

    # -- recording ------------------------------------------------------

    def _record_inputs(self, t, u, w, f):
        self.u[t], self.w[t], self.f[t] = u, w, f
        for arr, log_arr, v in ((self.sq_w, self.log_sq_w, w), (self.sq_f, self.log_sq_f, f)):
            prev_sq = arr[t - 1] if t > 0 else 0.0
            prev_log = log_arr[t - 1] if t > 0 else NEG_INF
            arr[t] = prev_sq + float(v @ v)
            log_arr[t] = log_add(prev_log, 2.0 * log_norm(v))

    def _record_state(self, t, x):
        self.x[t] = x
        self.sq_x[t] = self.sq_x[t - 1] + float(x @ x)
        self.log_sq_x[t] = log_add(self.log_sq_x[t - 1], 2.0 * log_norm(x))

    def _truncate(self):
        n = self.n
        self.x = self.x[: n + 1]
        self.u, self.w, self.f = self.u[:n], self.w[:n], self.f[:n]
        self.epoch = self.epoch[: n + 1]
        self.phase = self.phase[: n + 1]
        self.sq_x, self.log_sq_x = self.sq_x[: n + 1], self.log_sq_x[: n + 1]
        self.sq_f, self.log_sq_f = self.sq_f[:n], self.log_sq_f[:n]
        self.sq_w, self.log_sq_w = self.sq_w[:n], self.log_sq_w[:n]

    # -- queries --------------------------------------------------------

    def prefix_x(self, t: int) -> float:
        """``||x_{1:t}||``."""
        return math.exp(0.5 * self.log_sq_x[t])

    def log_prefix_x(self, t: int) -> float:
        return 0.5 * float(self.log_sq_x[t])

    def prefix_f(self, t: int) -> float:
        """``||f_{0:t}||`` (0 for ``t < 0``)."""
        return 0.0 if t < 0 else math.exp(0.5 * self.log_sq_f[t])

    def log_prefix_f(self, t: int) -> float:
        return NEG_INF if t < 0 else 0.5 * float(self.log_sq_f[t])

    def prefix_w(self, t: int) -> float:
        return 0.0 if t < 0 else math.exp(0.5 * self.log_sq_w[t])

    def log_prefix_w(self, t: int) -> float:
        return NEG_INF if t < 0 else 0.5 * float(self.log_sq_w[t])

    def z(self, t: int) -> np.ndarray:
        """Total disturbance ``w_t + f_t``."""
        return self.w[t] + self.f[t]

    # -- serialization --------------------------------------------------

    def to_csv(self, path) -> None:
        d, p = self.d, self.u.shape[1]
        header = (
            ["t"]
            + [f"x_{i}" for i in range(d)]
            + [f"u_{i}" for i in range(p)]
            + [f"w_{i}" for i in range(d)]
            + [f"f_{i}" for i in range(d)]
            + ["prefix_x", "prefix_f", "epoch", "phase"]
        )
        fmt = lambda v: format(float(v), ".17g")  # noqa: E731
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for t in range(self.n + 1):
                row = [t] + [fmt(v) for v in self.x[t]]
                if t < self.n:
                    row += [fmt(v) for v in np.concatenate([self.u[t], self.w[t], self.f[t]])]
                    pf = self.prefix_f(t)
                else:
                    row += [""] * (p + 2 * d)
                    pf = self.prefix_f(t - 1)
                row += [fmt(self.prefix_x(t)), fmt(pf), int(self.epoch[t]), self.phase[t]]
                writer.writerow(row)


def read_trajectory_csv(path) -> dict:
    """Load a trajectory CSV into arrays (``u``/``w``/``f`` have one row fewer than ``x``)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cols = {name: i for i, name in enumerate(header)}

    def block(prefix, last_row):
        idx = [i for name, i in cols.items() if name.startswith(prefix + "_") and name[len(prefix) + 1:].isdigit()]
        sel = body if last_row else body[:-1]
        return np.array([[float(r[i]) for i in idx] for r in sel])

    return {
        "t": np.array([int(r[cols["t"]]) for r in body]),
        "x": block("x", True),
        "u": block("u", False),
        "w": block("w", False),
        "f": block("f", False),
        "prefix_x": np.array([float(r[cols["prefix_x"]]) for r in body]),
        "prefix_f": np.array([float(r[cols["prefix_f"]]) for r in body]),
        "epoch": np.array([int(r[cols["epoch"]]) for r in body]),
        "phase": [r[cols["phase"]] for r in body],
    }


# ---------------------------------------------------------------------------
# Rollout


class Controller(Protocol):
    epoch: int
    phase: str

    def act(self, t: int, x: np.ndarray, traj: Trajectory) -> np.ndarray: ...


class ZeroController:
    epoch = 0
    phase = "Idle"

    def __init__(self, p: int):
        self.p = p

    def act(self, t, x, traj):
        return np.zeros(self.p)


class LinearController:
    """Fixed feedback ``u = -K x``."""

    epoch = 0
    phase = "Exploit"

    def __init__(self, K):
        self.K = np.atleast_2d(np.asarray(K, dtype=float))

    def act(self, t, x, traj):
        return -self.K @ x


def zero_delta(t, traj):
    return np.zeros(traj.d)


class ScriptedF:
    """Replays a fixed ``(T, d)`` disturbance array; zero past its end."""

    def __init__(self, f):
        self.f = np.atleast_2d(np.asarray(f, dtype=float))

    def __call__(self, t, traj):
        if t < len(self.f):
            return self.f[t]
        return np.zeros(traj.d)


def _as_f_source(f_script) -> Callable:
    if f_script is None:
        return zero_delta
    if callable(f_script):
        return f_script
    arr = np.asarray(f_script, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    return ScriptedF(arr)


def rollout(sys: SystemInstance, controller, delta=None, f_script=None, T: int = 1) -> Trajectory:
    """Run the closed loop for ``T`` steps.

    At each ``t >= 1`` the controller sees ``x_t`` (and the recorded prefix)
    and returns ``u_t``; then ``delta(t, traj)`` returns ``w_t`` and
    ``f_script(t, traj)`` returns ``f_t`` (both may read ``u_t``).  At ``t = 0``
    only ``f_0`` is queried.

    A :class:`ControllerFailure` stops the rollout and returns the partial
    trajectory with ``error`` set.  A non-finite state raises
    :class:`NumericOverflowError` carrying the partial trajectory.
    """
    if T < 1:
        raise ValueError("horizon T must be >= 1")
    delta = zero_delta if delta is None else delta
    f_src = _as_f_source(f_script)
    d, p = sys.d, sys.p
    traj = Trajectory.empty(T, d, p)
    x = np.zeros(d)
    with np.errstate(over="ignore", invalid="ignore"):
        return _rollout_loop(sys, controller, delta, f_src, T, traj, x)


def _rollout_loop(sys, controller, delta, f_src, T, traj, x):
    d, p = sys.d, sys.p
    for t in range(T):
        if t == 0:
            u = np.zeros(p)
            w = np.zeros(d)
        else:
            try:
                u = np.asarray(controller.act(t, x, traj), dtype=float).reshape(p)
            except ControllerFailure as exc:
                traj.error, traj.error_step = str(exc), t
                traj.n = t
                traj._truncate()
                return traj
            except CertifiedOverflowError as exc:
                traj.n = t
                traj._truncate()
                raise NumericOverflowError(t, str(exc), trajectory=traj) from exc
            traj.epoch[t] = controller.epoch
            traj.phase[t] = controller.phase
            traj.u[t] = u
            w = np.asarray(delta(t, traj), dtype=float).reshape(d)
            traj.w[t] = w
        f = np.asarray(f_src(t, traj), dtype=float).reshape(d)
        traj._record_inputs(t, u, w, f)
        x = step(sys, x, u, w, f)
        if not np.all(np.isfinite(x)):
            traj.n = t
            traj._truncate()
            raise NumericOverflowError(t + 1, trajectory=traj)
        traj._record_state(t + 1, x)
        traj.n = t + 1
        traj.epoch[t + 1] = traj.epoch[t]
        traj.phase[t + 1] = traj.phase[t]
    return traj
