"""Gain, robustness and cost measurements, certificates and invariant checks.

Undefined quantities (a gain with zero disturbance energy, a ratio against a
zero optimum) are reported as ``None`` and serialized as ``"undefined"``.

Invariant results are ``(name, passed, margin)`` triples.  The margin is
``bound - value`` in the units of the comparison, which is log-space for
every energy bound, so a positive margin means slack.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .adaptive import LN4, default_parameters
from .lds_core import NEG_INF, LinearController, SystemInstance, Trajectory, log_norm, rollout
from .nets import EPS_NET, STANDARD_BASIS

UNDEFINED = "undefined"


def _exp(v: float) -> float:
    return math.exp(v) if v < 709.0 else math.inf


# ---------------------------------------------------------------------------
# Gain and cost


def log_l2_gain(traj: Trajectory) -> float | None:
    """``ln(||x_{1:n}|| / ||f_{0:n-1}||)`` or ``None`` when the f-energy is 0."""
    n = traj.n
    lf = traj.log_prefix_f(n - 1)
    if n == 0 or lf == NEG_INF:
        return None
    return traj.log_prefix_x(n) - lf


def l2_gain(traj: Trajectory) -> float | None:
    lg = log_l2_gain(traj)
    return None if lg is None else _exp(lg)


def _log_sum_sq(rows) -> float:
    logs = [2.0 * log_norm(r) for r in rows]
    return float(np.logaddexp.reduce(logs)) if logs else NEG_INF


def log_cost_lqr(traj: Trajectory) -> float:
    """ln of ``sum_{t=1}^n ||x_t||^2 + sum_{t=0}^{n-1} ||u_t||^2``."""
    lx = float(traj.log_sq_x[traj.n])
    lu = _log_sum_sq(traj.u[: traj.n])
    return float(np.logaddexp(lx, lu))


def cost_lqr(traj: Trajectory) -> float:
    return _exp(log_cost_lqr(traj))


def u_to_x_ratio(traj: Trajectory) -> float | None:
    """Empirical ``||u_{0:n-1}|| / ||x_{1:n}||`` (the multiple linking cost and gain)."""
    lx = traj.log_prefix_x(traj.n)
    if lx == NEG_INF:
        return None
    return _exp(0.5 * _log_sum_sq(traj.u[: traj.n]) - lx)


# ---------------------------------------------------------------------------
# Robustness budget


@dataclass
class RobustnessResult:
    """``margin`` is the smallest relative slack ``1 - W_t / (h^2 S_t)`` seen,
    or the slack at ``first_violation`` when the check fails."""

    passed: bool
    first_violation: int | None
    margin: float


def robustness_check(traj: Trajectory, h: float, rtol: float = 1e-9) -> RobustnessResult:
    """Check ``||w_{1:t}||^2 <= h^2 ||x_{1:t}||^2`` at every recorded ``t``."""
    log_h2 = 2.0 * math.log(h) if h > 0 else NEG_INF
    worst = math.inf
    for t in range(traj.n):
        lw = float(traj.log_sq_w[t])
        if lw == NEG_INF:
            continue
        cap = log_h2 + float(traj.log_sq_x[t])
        slack = -math.inf if cap == NEG_INF else -math.expm1(lw - cap)
        if slack < -rtol:
            return RobustnessResult(False, t, slack)
        worst = min(worst, slack)
    return RobustnessResult(True, None, worst)


# ---------------------------------------------------------------------------
# Competitive ratio


def opt_bounds(f_energy: float, M: float, L: float) -> tuple[float, float]:
    """Bracket of the offline optimal cost for disturbance norm ``f_energy``."""
    f2 = f_energy * f_energy
    return f2 / (9.0 * M * M), 8.0 * M * M * f2 / (L * L)


def oracle_policy(sys: SystemInstance) -> LinearController:
    """``u = -B^{-1} A x``, which cancels the nominal dynamics."""
    return LinearController(np.linalg.solve(sys.B, sys.A))


def oracle_cost(sys: SystemInstance, delta, f_script, T: int) -> float:
    """Cost of the oracle policy; an upper estimate of the optimum."""
    return cost_lqr(rollout(sys, oracle_policy(sys), delta, f_script, T))


def competitive_ratio(traj: Trajectory, opt_estimate: float) -> float | None:
    cost = cost_lqr(traj)
    if opt_estimate <= 0:
        return None
    return cost / opt_estimate


# ---------------------------------------------------------------------------
# Certificates


def gain_certificate_log(M: float, L: float, d: int, variant: str = STANDARD_BASIS) -> float:
    """ln of the proven gain bound of the main controller with default parameters."""
    _, alpha_log = default_parameters(M, L, d, variant)
    if variant == STANDARD_BASIS:
        return math.log(10.0 * M * M / L) + 2.0 * alpha_log
    return 2.0 * 5**d * (17 * LN4 + 10 * math.log(M) + math.log(d) - 3 * math.log(L))


def closed_form_certificate_log(M: float, L: float, d: int) -> float:
    """Looser single-expression bound for the standard-basis variant."""
    return 2.0 * d * (15 * LN4 + 10 * math.log(M) + 2 * math.log(d) - 3 * math.log(L))


# ---------------------------------------------------------------------------
# Invariants of the main controller


@dataclass
class InvariantResult:
    name: str
    passed: bool
    margin: float
    epoch: int | None = None

    def as_tuple(self):
        return self.name, self.passed, self.margin


def _check(out, name, value, bound, rtol, epoch=None, log=False):
    """Append ``value <= bound`` (log-space when ``log``) with slack ``rtol``."""
    if log:
        ok = value <= bound + math.log1p(rtol)
    else:
        ok = value <= bound + rtol * max(1.0, abs(bound))
    margin = bound - value if not (math.isinf(bound) and math.isinf(value)) else 0.0
    out.append(InvariantResult(name, bool(ok), float(margin), epoch))


def _h_cap(variant: str, d: int) -> float:
    return 1.0 / (12.0 * math.sqrt(d)) if variant == STANDARD_BASIS else 1.0 / 15.0


def adaptive_invariants(sys: SystemInstance, traj: Trajectory, ctrl, h: float,
                        initial_budget: float | None = None, rtol: float = 1e-9) -> list[InvariantResult]:
    """Check the l2-gain controller's guarantees on one rollout.

    Always checked: the misspecification budget, monotone budgets, growth
    ``q_new > alpha q_old`` on energy-triggered restarts, the count of such
    restarts, and the estimate sanity checks that gate ``K``.  The gain
    certificate is checked when the run starts from ``q = 0`` (or from a
    budget not above the true disturbance energy) with default parameters.

    The per-epoch estimation and energy bounds assume the epoch's budget
    covers the whole disturbance, ``||f_{0:n-1}|| <= q_k``, and the budget
    ``h`` the corresponding bound requires; epochs where the hypothesis does
    not hold are skipped.
    """
    out: list[InvariantResult] = []
    s = ctrl.state
    M, L, d, eps, alpha_log = s.M, s.L, s.d, s.eps, s.alpha_log
    variant = ctrl.variant
    n = traj.n
    log_f = traj.log_prefix_f(n - 1) if n > 0 else NEG_INF
    A, B = sys.A, sys.B

    rb = robustness_check(traj, h, rtol)
    out.append(InvariantResult("budget", rb.passed, rb.margin))

    epochs = [ev for ev in ctrl.events if ev["event"] in ("restart", "epoch_start")]
    q_logs = [ev["q_new_log"] for ev in epochs]
    mono = all(b >= a for a, b in zip(q_logs, q_logs[1:]))
    out.append(InvariantResult("q_monotone", mono, 0.0))
    energy = [ev for ev in epochs if ev["reason"] == "energy" and ev["q_old_log"] > NEG_INF]
    for ev in energy:
        _check(out, "restart_growth", alpha_log + ev["q_old_log"], ev["q_new_log"], 0.0,
               ev["epoch"], log=True)
    if len(q_logs) >= 1:
        bound = (q_logs[-1] - q_logs[0]) / alpha_log if alpha_log > 0 else math.inf
        _check(out, "energy_restart_count", float(len(energy)), bound, rtol)

    for rec in ctrl.records:
        if rec.K is None:
            continue
        smin = float(np.linalg.svd(rec.B_hat, compute_uv=False)[-1])
        _check(out, "sigma_min_B_hat", L / 2, smin, rtol, rec.epoch)
        if variant == STANDARD_BASIS:
            _check(out, "norm_A_hat", float(np.linalg.norm(rec.A_hat, 2)), 2 * M, rtol, rec.epoch)

    default_eps, default_alpha_log = default_parameters(M, L, d, variant)
    defaults = eps <= default_eps * (1 + 1e-12) and alpha_log >= default_alpha_log - 1e-9
    lg = log_l2_gain(traj)
    if lg is not None and defaults and (initial_budget is None or math.log(initial_budget) <= log_f + 1e-12):
        _check(out, "gain_certificate", lg, gain_certificate_log(M, L, d, variant), rtol, log=True)

    V = s.V.vectors
    h_ok = h <= _h_cap(variant, d) * (1 + 1e-12)
    for k, rec in enumerate(ctrl.records):
        if log_f > rec.log_q + 1e-12:
            continue
        t_end = ctrl.records[k + 1].t_start if k + 1 < len(ctrl.records) else n
        ep = rec.epoch
        for i in range(d + 1):
            t = rec.t_start + i
            if t > min(t_end, n):
                break
            bound = 2 * i * LN4 + 2 * i * math.log(M) + rec.log_q - i * math.log(eps)
            _check(out, "control_id_growth", traj.log_prefix_x(t), bound, rtol, ep, log=True)
        if rec.B_hat is not None:
            _check(out, "B_hat_error_fro", float(np.linalg.norm(rec.B_hat - B, "fro")),
                   3 * eps * math.sqrt(d), rtol, ep)
            E = B @ np.linalg.inv(rec.B_hat) - np.eye(d)
            _check(out, "B_B_hat_inv_minus_I", float(np.linalg.norm(E, 2)),
                   6 * eps * math.sqrt(d) / L, rtol, ep)
            lqp = 2 * d * LN4 + 2 * d * math.log(M) - d * math.log(eps) + rec.log_q
            t1 = rec.t_sysid
            last = rec.t_exploit if rec.t_exploit is not None else min(t_end, n)
            for i in range(V.shape[0]):
                for odd in (0, 1):
                    t = t1 + 2 * i + odd
                    if t > last:
                        break
                    if odd:
                        bound = (3 * i + 2) * (LN4 + math.log(M)) + lqp - (i + 1) * math.log(eps)
                    else:
                        bound = 3 * i * (LN4 + math.log(M)) + lqp - i * math.log(eps)
                    _check(out, "sysid_growth", traj.log_prefix_x(t), bound, rtol, ep, log=True)
        if rec.K is None:
            continue
        err = max(float(np.linalg.norm((A - rec.A_hat) @ v)) for v in V)
        _check(out, "A_hat_error", err, 28 * eps * M * math.sqrt(d) / L + 3 * h, rtol, ep)
        if not (h_ok and defaults):
            continue
        contraction = float(np.linalg.norm(A - B @ rec.K, 2))
        _check(out, "contraction", contraction, 0.5, rtol, ep)
        if contraction <= 0.5 and h <= 1.0 / 6.0:
            ls_star = 2.0 * traj.log_prefix_x(rec.t_exploit)
            rhs = float(np.logaddexp(math.log(18.0) + ls_star, math.log(72.0) + 2 * rec.log_q)) - math.log(7.0)
            _check(out, "exploit_energy", 2.0 * traj.log_prefix_x(t_end), rhs, rtol, ep, log=True)
        _check(out, "confinement", traj.log_prefix_x(t_end), alpha_log + rec.log_q, rtol, ep, log=True)
    return out


def summarize_invariants(results) -> tuple[int, int]:
    """``(passed, failed)`` counts."""
    passed = sum(1 for r in results if r.passed)
    return passed, len(results) - passed


# ---------------------------------------------------------------------------
# Report


@dataclass
class GainReport:
    realized_gain: float | None
    realized_gain_log: float | None
    certificate_log: float | None
    epochs: int
    switches: int
    cost_lqr: float
    cost_lqr_log: float
    u_to_x_ratio: float | None = None
    invariant_results: list = field(default_factory=list)
    steps: int = 0
    error: str | None = None
    error_step: int | None = None

    @property
    def invariants_ok(self) -> bool:
        return all(r.passed for r in self.invariant_results)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["invariant_results"] = [
            {"name": r.name, "pass": r.passed, "margin": _num(r.margin), "epoch": r.epoch}
            for r in self.invariant_results
        ]
        for k in ("realized_gain", "realized_gain_log", "u_to_x_ratio", "certificate_log",
                  "cost_lqr", "cost_lqr_log"):
            out[k] = UNDEFINED if out[k] is None else _num(out[k])
        return out

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def invariants_csv(self, path) -> None:
        write_invariants_csv(self.invariant_results, path)


def _num(v):
    """JSON-safe number with 17 significant digits."""
    if v is None:
        return UNDEFINED
    v = float(v)
    if not math.isfinite(v):
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    return float(format(v, ".17g"))


def write_invariants_csv(results, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["invariant", "pass", "margin", "epoch"])
        for r in results:
            w.writerow([r.name, int(r.passed), format(r.margin, ".17g"), "" if r.epoch is None else r.epoch])


def gain_report(traj: Trajectory, certificate_log=None, epochs: int = 0, switches: int = 0,
                invariants=None) -> GainReport:
    lg = log_l2_gain(traj)
    lc = log_cost_lqr(traj)
    return GainReport(
        realized_gain=None if lg is None else _exp(lg),
        realized_gain_log=lg,
        certificate_log=certificate_log,
        epochs=int(epochs),
        switches=int(switches),
        cost_lqr=_exp(lc),
        cost_lqr_log=lc,
        u_to_x_ratio=u_to_x_ratio(traj),
        invariant_results=list(invariants or []),
        steps=traj.n,
        error=traj.error,
        error_step=traj.error_step,
    )


__all__ = [
    "EPS_NET", "STANDARD_BASIS", "UNDEFINED", "GainReport", "InvariantResult", "RobustnessResult",
    "adaptive_invariants", "closed_form_certificate_log", "competitive_ratio", "cost_lqr",
    "gain_certificate_log", "gain_report", "l2_gain", "log_cost_lqr", "log_l2_gain", "opt_bounds",
    "oracle_cost", "oracle_policy", "robustness_check", "summarize_invariants", "u_to_x_ratio",
    "write_invariants_csv",
]
