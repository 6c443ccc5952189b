"""Command-line harness: ``robustlds {simulate,sweep,lowerbound,certificates}``.

Configuration comes from a TOML or JSON file (``--config``).  Values are
resolved in increasing precedence: built-in defaults, the config file,
``--set key=value`` overrides (dotted keys, values parsed as JSON when
possible), then the dedicated flags ``--seed``, ``--out`` and ``-T``.

Exit codes: 0 ok, 1 invariant failure, 2 config error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import itertools
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels
from .adaptive import MAX_EPS_NET_DIM, L2GainController, default_parameters
from .adversaries import (
    GREEDY_ANTI_K,
    POLICIES,
    GreedyDelta,
    HintedImpulses,
    ImpulseF,
    LowerBoundF,
    UnstabilizableDelta,
    check_mu,
    default_mu,
    game_interval,
    read_f_csv,
    unstabilizable_system,
)
from .baselines import (
    CertEquivController,
    CusumanoPoollaController,
    cert_equiv_gain_bound,
    cp_gain_certificate_log,
    make_strongly_stabilizable_instance,
)
from .errors import NetTooLarge, NumericOverflowError
from .lds_core import (
    LinearController,
    ScriptedF,
    SystemInstance,
    ZeroController,
    random_system,
    rollout,
    validate_system,
)
from .metrics import (
    UNDEFINED,
    InvariantResult,
    adaptive_invariants,
    closed_form_certificate_log,
    gain_certificate_log,
    gain_report,
    robustness_check,
    write_invariants_csv,
)
from .nets import EPS_NET, STANDARD_BASIS

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

DEFAULTS = {
    "seed": 0,
    "T": 200,
    "repetitions": 1,
    "out": "out",
    "system": {"kind": "random", "d": 1, "M": 2.0, "L": 1.0, "eps": 0.1, "kappa": 2.0,
               "allow_invalid": False},
    "controller": {"kind": "l2gain", "variant": STANDARD_BASIS, "order": "scrambled", "k": 0.0},
    "adversary": {"delta": "greedy_aligned", "h": 0.0, "f": "impulse:0:1"},
    "lowerbound": {"M": 4.0, "T": 2000, "controller": "cert_equiv", "k": 0.0, "h": 0.0, "a": "auto"},
    "certificates": {"M": [1.0, 2.0, 4.0], "L": [1.0, 0.5], "d": [1, 2, 3],
                     "variants": [STANDARD_BASIS, EPS_NET], "kappa": 2.0},
    "sweep": {"grid": {}},
}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Config handling


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        if str(path).endswith(".json"):
            with open(path) as fh:
                return json.load(fh)
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def set_dotted(cfg: dict, key: str, value) -> None:
    parts = key.split(".")
    node = cfg
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {key}: {p} is not a table")
    node[parts[-1]] = value


def _parse_value(text: str):
    try:
        return json.loads(text)
    except ValueError:
        return text


def resolve_config(args) -> dict:
    cfg = _merge(DEFAULTS, load_config(getattr(args, "config", None)))
    for item in getattr(args, "set", None) or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        set_dotted(cfg, key.strip(), _parse_value(val.strip()))
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        cfg["out"] = args.out
    if getattr(args, "T", None) is not None:
        cfg["T"] = args.T
    return cfg


_ALIASES = {
    "controller": {"eps_override": "eps", "alpha_override_log": "alpha_log", "F": "known_budget"},
    "adversary": {"delta_policy": "delta", "f_script": "f"},
}
_KIND_ALIASES = {"cusumano_poolla": "cp", "l2_gain": "l2gain"}


def normalize_config(cfg: dict) -> dict:
    """Map documented key spellings onto the internal ones (documented names win)."""
    cfg = copy.deepcopy(cfg)
    if isinstance(cfg.get("controller"), str):
        cfg["controller"] = {**DEFAULTS["controller"], "kind": cfg["controller"]}
    for section, table in _ALIASES.items():
        sec = cfg.setdefault(section, {})
        for public, internal in table.items():
            if public in sec:
                sec[internal] = sec.pop(public)
    cc = cfg["controller"]
    cc["kind"] = _KIND_ALIASES.get(cc.get("kind"), cc.get("kind"))
    return cfg


def _num(v) -> str:
    if v is None:
        return UNDEFINED
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _json_safe(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_json_safe(obj), fh, indent=2)
        fh.write("\n")


def _float(cfg, key, section):
    try:
        return float(cfg[key])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{section}.{key} must be a number") from exc


def _int(cfg, key, section):
    try:
        v = cfg[key]
        if isinstance(v, bool) or int(v) != v:
            raise ValueError
        return int(v)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{section}.{key} must be an integer") from exc


# ---------------------------------------------------------------------------
# Building blocks


def _rng(seed, stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), stream])


def build_system(cfg: dict) -> SystemInstance:
    sc = cfg["system"]
    kind = sc.get("kind", "random")
    seed = sc.get("seed", cfg["seed"])
    if kind == "unstabilizable":
        return unstabilizable_system(_float(sc, "eps", "system"))
    if kind == "strongly_stabilizable":
        kappa = _float(sc, "kappa", "system")
        d = _int(sc, "d", "system")
        p = _int(sc, "p", "system") if "p" in sc else d
        if kappa < 1:
            raise ConfigError("system.kappa must be >= 1")
        return make_strongly_stabilizable_instance(kappa, d, p, seed=_rng(seed, 0))[0]
    M = _float(sc, "M", "system")
    L = sc.get("L")
    L = None if L is None else _float(sc, "L", "system")
    if not M >= 1:
        raise ConfigError(f"system.M must be >= 1, got {M}")
    if L is not None and not 0 < L <= 1:
        raise ConfigError(f"system.L must lie in (0, 1], got {L}")
    if kind == "random":
        d = _int(sc, "d", "system")
        if d < 1:
            raise ConfigError("system.d must be >= 1")
        if L is None or not M > L:
            raise ConfigError("random systems need L < M")
        return random_system(d, M, L, _rng(seed, 0))
    if kind == "explicit":
        if "A" not in sc or "B" not in sc:
            raise ConfigError("explicit system needs A and B")
        try:
            sys_ = SystemInstance(np.array(sc["A"], float), np.array(sc["B"], float), M, L)
        except ValueError as exc:
            raise ConfigError(f"bad explicit system: {exc}") from exc
        rep = validate_system(sys_)
        if not rep.ok and not sc.get("allow_invalid", False):
            raise ConfigError("system violates bounds: " + "; ".join(rep.violations()))
        return sys_
    raise ConfigError(f"unknown system.kind {kind!r}")


@dataclass
class FSpec:
    kind: str
    source: object = None
    norm: float | None = None
    args: tuple = ()


def build_f(cfg: dict, sys_: SystemInstance) -> FSpec:
    spec = str(cfg["adversary"].get("f", "zero")).strip()
    T, d = int(cfg["T"]), sys_.d
    kind, _, rest = spec.partition(":")
    parts = rest.split(":") if rest else []
    try:
        if kind == "zero":
            return FSpec("zero", None, 0.0)
        if kind == "impulse":
            t0, mag = int(parts[0]), float(parts[1])
            return FSpec(kind, ImpulseF(t0, mag), abs(mag) if 0 <= t0 < T else 0.0)
        if kind == "file":
            arr = read_f_csv(rest)
            if arr.ndim != 2 or arr.shape[1] != d:
                raise ConfigError(f"f file has shape {arr.shape}, expected (*, {d})")
            return FSpec(kind, ScriptedF(arr), float(np.linalg.norm(arr[:T])))
        if kind in ("gaussian", "sparse"):
            rng = _rng(cfg["seed"], 1)
            arr = np.zeros((T, d))
            if kind == "gaussian":
                k, scale = int(parts[0]), float(parts[1])
                arr[: min(k, T)] = scale * rng.standard_normal((min(k, T), d))
            else:
                rate, scale = float(parts[0]), float(parts[1])
                mask = rng.random(T) < rate
                mask[0] = True
                arr[mask] = scale * rng.standard_normal((int(mask.sum()), d))
            return FSpec(kind, ScriptedF(arr), float(np.linalg.norm(arr)))
        if kind == "hinted":
            return FSpec(kind)
        if kind == "lb_game":
            if d != 1:
                raise ConfigError("lb_game f needs d = 1")
            a0, g0 = float(parts[0]), float(parts[1])
            return FSpec(kind, args=(a0, g0))
    except (IndexError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad adversary.f {spec!r}: {exc}") from exc
    raise ConfigError(f"unknown adversary.f {spec!r}")


def _budget(cc: dict, fspec: FSpec, default_known: bool):
    kb = cc.get("known_budget", default_known)
    if kb is False:
        return None
    if kb is True:
        if fspec.norm is None:
            raise ConfigError(f"known_budget needs a scripted f, not {fspec.kind!r}")
        return fspec.norm
    try:
        return float(kb)
    except (TypeError, ValueError) as exc:
        raise ConfigError("controller.known_budget must be true, false or a number") from exc


def build_controller(cfg: dict, sys_: SystemInstance, fspec: FSpec):
    cc = cfg["controller"]
    kind = cc.get("kind", "l2gain")
    d, p = sys_.d, sys_.p
    if kind == "l2gain":
        variant = cc.get("variant", STANDARD_BASIS)
        if variant not in (STANDARD_BASIS, EPS_NET):
            raise ConfigError(f"unknown controller.variant {variant!r}")
        if variant == EPS_NET and d > MAX_EPS_NET_DIM:
            raise ConfigError(f"eps_net variant refused for d={d}")
        if sys_.L is None or p != d:
            raise ConfigError("l2gain controller needs a square B and a published L")
        try:
            return L2GainController(
                sys_.M, sys_.L, d, variant,
                eps_override=cc.get("eps"), alpha_override_log=cc.get("alpha_log"),
                initial_budget=_budget(cc, fspec, False), net_cap=cc.get("net_cap"),
            )
        except NetTooLarge as exc:
            raise ConfigError(str(exc)) from exc
    if kind == "cert_equiv":
        if d != 1 or p != 1:
            raise ConfigError("cert_equiv controller needs d = p = 1")
        return CertEquivController(sys_.M)
    if kind == "cp":
        kappa = float(cc.get("kappa", cfg["system"].get("kappa", 2.0)))
        F = _budget(cc, fspec, True)
        if F is None:
            raise ConfigError("cp controller needs a disturbance budget")
        return CusumanoPoollaController(sys_.M, kappa, d, p, F, order=cc.get("order", "scrambled"))
    if kind == "zero":
        return ZeroController(p)
    if kind == "linear":
        K = np.atleast_2d(np.array(cc.get("K", cc.get("k", 0.0)), float))
        if K.shape != (p, d):
            raise ConfigError(f"controller.K must be {p}x{d}")
        return LinearController(K)
    if kind == "oracle":
        if p != d:
            raise ConfigError("oracle controller needs a square B")
        return LinearController(np.linalg.solve(sys_.B, sys_.A))
    raise ConfigError(f"unknown controller.kind {kind!r}")


def build_delta(cfg: dict, sys_: SystemInstance, ctrl):
    ac = cfg["adversary"]
    policy = ac.get("delta", "greedy_aligned")
    h = float(ac.get("h", 0.0))
    if h < 0:
        raise ConfigError("adversary.h must be >= 0")
    if policy == "unstabilizable":
        return UnstabilizableDelta(float(cfg["system"].get("eps", 0.1)))
    if policy not in POLICIES:
        raise ConfigError(f"unknown adversary.delta {policy!r}")
    hint = None
    if policy == GREEDY_ANTI_K and hasattr(ctrl, "current_K"):
        hint = ctrl.current_K
    E = ac.get("E")
    try:
        return GreedyDelta(h, policy, E=E, hint=hint, seed=_rng(cfg["seed"], 2))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_f_source(cfg, sys_, fspec: FSpec, ctrl):
    if fspec.kind == "hinted":
        if not isinstance(ctrl, L2GainController):
            raise ConfigError("hinted f needs the l2gain controller")
        return HintedImpulses(ctrl, seed=_rng(cfg["seed"], 3))
    if fspec.kind == "lb_game":
        a0, g0 = fspec.args
        mu = cfg["adversary"].get("mu")
        try:
            return LowerBoundF(float(sys_.A[0, 0]), a0, g0, mu)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    return fspec.source


# ---------------------------------------------------------------------------
# Single rollout


@dataclass
class SimResult:
    report: object
    traj: object
    ctrl: object
    exit_code: int
    extra: dict


def _certificate_log(sys_, ctrl, cfg, h):
    if isinstance(ctrl, L2GainController):
        return gain_certificate_log(sys_.M, sys_.L, sys_.d, ctrl.variant)
    if isinstance(ctrl, CertEquivController):
        return math.log(cert_equiv_gain_bound(sys_.M, h)) if h < 0.5 else None
    if isinstance(ctrl, CusumanoPoollaController):
        return cp_gain_certificate_log(ctrl.state.kappa, sys_.M, sys_.d, sys_.p)
    return None


def _invariants(sys_, traj, ctrl, cfg, h, fspec, cert_log):
    if isinstance(ctrl, L2GainController):
        return adaptive_invariants(sys_, traj, ctrl, h, initial_budget=ctrl._initial_budget)
    rb = robustness_check(traj, h)
    out = [InvariantResult("budget", rb.passed, rb.margin)]
    n = traj.n
    log_f = traj.log_prefix_f(n - 1) if n > 0 else -math.inf
    if isinstance(ctrl, CertEquivController) and cert_log is not None and log_f > -math.inf:
        if abs(float(sys_.A[0, 0])) <= sys_.M:
            lg = traj.log_prefix_x(n) - log_f
            ok = lg <= cert_log + 1e-9
            out.append(InvariantResult("cert_equiv_gain_bound", ok, cert_log - lg))
    if isinstance(ctrl, CusumanoPoollaController):
        kappa = ctrl.state.kappa
        F = math.exp(ctrl.state.log_q) if ctrl.state.switches == 0 else None
        F0 = cfg["controller"].get("known_budget", True)
        F0 = fspec.norm if F0 is True else (F if F0 is False else float(F0))
        if F0 and h < 1.0 / (5 * kappa**4) and math.log(F0) >= log_f - 1e-12:
            bound = cert_log + math.log(F0)
            lx = traj.log_prefix_x(n)
            out.append(InvariantResult("cp_state_bound", lx <= bound + 1e-9, bound - lx))
        out.append(InvariantResult("cp_switches_le_net", ctrl.state.switches < ctrl.net_size,
                                   float(ctrl.net_size - ctrl.state.switches)))
    return out


def run_simulation(cfg: dict) -> SimResult:
    """Build everything from ``cfg`` and run one rollout (no file output)."""
    cfg = normalize_config(cfg)
    T = int(cfg["T"])
    if T < 1:
        raise ConfigError("T must be >= 1")
    sys_ = build_system(cfg)
    fspec = build_f(cfg, sys_)
    ctrl = build_controller(cfg, sys_, fspec)
    delta = build_delta(cfg, sys_, ctrl)
    f_src = build_f_source(cfg, sys_, fspec, ctrl)
    h = float(cfg["adversary"].get("h", 0.0))
    extra: dict = {}
    code = EXIT_OK
    try:
        traj = rollout(sys_, ctrl, delta, f_src, T)
    except NumericOverflowError as exc:
        traj = exc.trajectory
        traj.error, traj.error_step = str(exc), exc.step
        code = EXIT_NUMERIC
    cert_log = _certificate_log(sys_, ctrl, cfg, h)
    invs = _invariants(sys_, traj, ctrl, cfg, h, fspec, cert_log) if code == EXIT_OK else []
    if traj.error is not None and code == EXIT_OK:
        invs.append(InvariantResult("controller_completed", False, 0.0))
    switches = getattr(getattr(ctrl, "state", None), "switches", None)
    if switches is None:
        switches = max(int(getattr(ctrl, "epoch", 0)) - 1, 0) if isinstance(ctrl, L2GainController) else 0
    epochs = int(getattr(ctrl, "epoch", 0)) if isinstance(ctrl, L2GainController) else switches + 1
    report = gain_report(traj, cert_log, epochs, switches, invs)
    if code == EXIT_OK and not report.invariants_ok:
        code = EXIT_INVARIANT
    if isinstance(ctrl, CusumanoPoollaController):
        extra["net_size"] = ctrl.net_size
        extra["retained_since"] = ctrl.retained_since
    if isinstance(ctrl, L2GainController):
        extra["eps"] = ctrl.eps
        extra["alpha_log"] = ctrl.alpha_log
    extra["f_norm"] = fspec.norm
    return SimResult(report, traj, ctrl, code, extra)


def _events_jsonl(ctrl) -> str:
    if isinstance(ctrl, L2GainController):
        return ctrl.events_jsonl()
    events = getattr(ctrl, "events", [])
    return "".join(json.dumps(_json_safe(ev)) + "\n" for ev in events)


def cmd_simulate(cfg: dict) -> int:
    out = cfg["out"]
    res = run_simulation(cfg)
    os.makedirs(out, exist_ok=True)
    res.traj.to_csv(os.path.join(out, "trajectory.csv"))
    with open(os.path.join(out, "events.jsonl"), "w") as fh:
        fh.write(_events_jsonl(res.ctrl))
    rep = res.report.to_dict()
    rep["exit_code"] = res.exit_code
    rep.update(_json_safe(res.extra))
    _write_json(os.path.join(out, "report.json"), rep)
    write_invariants_csv(res.report.invariant_results, os.path.join(out, "invariants.csv"))
    return res.exit_code


# ---------------------------------------------------------------------------
# Sweep


RESULT_COLUMNS = [
    "realized_gain", "realized_gain_log", "certificate", "certificate_log", "epochs", "switches",
    "invariants_passed", "invariants_failed", "failed_invariants", "steps", "exit_code", "error",
]


def sweep_cells(cfg: dict) -> list[tuple[dict, dict]]:
    """``(cell_params, cell_config)`` pairs in deterministic order."""
    grid = cfg.get("sweep", {}).get("grid", {}) or {}
    keys = list(grid.keys())
    values = [list(grid[k]) if isinstance(grid[k], list) else [grid[k]] for k in keys]
    reps = int(cfg.get("repetitions", 1))
    cells = []
    for combo in itertools.product(*values):
        for r in range(reps):
            c = copy.deepcopy(cfg)
            params = dict(zip(keys, combo))
            for k, v in params.items():
                set_dotted(c, k, v)
            if reps > 1:
                c["seed"] = int(c["seed"]) + r
            params = {"rep": r, "seed": c["seed"], **params}
            cells.append((params, c))
    return cells


def run_cell(cell_cfg: dict) -> dict:
    """One sweep row; failures are recorded in the row, never raised."""
    row = {k: None for k in RESULT_COLUMNS}
    try:
        res = run_simulation(cell_cfg)
    except ConfigError as exc:
        row.update(exit_code=EXIT_CONFIG, error=str(exc))
        return row
    except Exception as exc:  # noqa: BLE001
        row.update(exit_code=EXIT_NUMERIC, error=f"{type(exc).__name__}: {exc}")
        return row
    rep = res.report
    passed = sum(r.passed for r in rep.invariant_results)
    failed = [r.name for r in rep.invariant_results if not r.passed]
    row.update(
        realized_gain=rep.realized_gain,
        realized_gain_log=rep.realized_gain_log,
        certificate=None if rep.certificate_log is None else math.exp(min(rep.certificate_log, 709.0)),
        certificate_log=rep.certificate_log,
        epochs=rep.epochs,
        switches=rep.switches,
        invariants_passed=passed,
        invariants_failed=len(failed),
        failed_invariants=";".join(sorted(set(failed))),
        steps=rep.steps,
        exit_code=res.exit_code,
        error=rep.error or "",
    )
    return row


def cmd_sweep(cfg: dict, jobs: int = 1) -> int:
    cells = sweep_cells(cfg)
    if not cells:
        raise ConfigError("empty sweep")
    cfgs = [c for _, c in cells]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(run_cell, cfgs))
    else:
        rows = [run_cell(c) for c in cfgs]
    param_keys = list(cells[0][0].keys())
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "results.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell"] + param_keys + RESULT_COLUMNS)
        for i, ((params, _), row) in enumerate(zip(cells, rows)):
            w.writerow([i] + [_num(params[k]) for k in param_keys] + [_num(row[k]) for k in RESULT_COLUMNS])
    if any(r["invariants_failed"] for r in rows):
        return EXIT_INVARIANT
    if any(r["exit_code"] == EXIT_NUMERIC for r in rows):
        return EXIT_NUMERIC
    if any(r["exit_code"] == EXIT_CONFIG for r in rows):
        return EXIT_CONFIG
    return EXIT_OK


# ---------------------------------------------------------------------------
# Lower-bound game


def lowerbound_params(lc: dict) -> dict:
    M = _float(lc, "M", "lowerbound")
    if not M >= 1:
        raise ConfigError("lowerbound.M must be >= 1")
    a0 = float(lc["a0"]) if lc.get("a0") is not None else -M
    gamma0 = float(lc["gamma0"]) if lc.get("gamma0") is not None else M / 4.0
    if not gamma0 >= 1:
        raise ConfigError("lowerbound.gamma0 must be >= 1")
    mu = float(lc["mu"]) if lc.get("mu") is not None else default_mu(gamma0)
    try:
        check_mu(mu, gamma0)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    ctrl = lc.get("controller", "cert_equiv")
    if ctrl not in ("cert_equiv", "linear"):
        raise ConfigError(f"lowerbound.controller must be cert_equiv or linear, got {ctrl!r}")
    T = _int(lc, "T", "lowerbound")
    if T < 2:
        raise ConfigError("lowerbound.T must be >= 2")
    h = float(lc.get("h", 0.0))
    if not 0 <= h < 0.5:
        raise ConfigError("lowerbound.h must lie in [0, 1/2)")
    a = lc.get("a", "auto")
    if a != "auto":
        a = float(a)
    return dict(M=M, a0=a0, gamma0=gamma0, mu=mu, controller=ctrl, k=float(lc.get("k", 0.0)),
                T=T, h=h, a=a)


def run_lowerbound(par: dict) -> dict:
    """Run the raw 1-D game and the normalized recursion; returns a report dict."""
    ctrl = kernels.CTRL_CERT_EQUIV if par["controller"] == "cert_equiv" else kernels.CTRL_LINEAR
    M, T, h = par["M"], par["T"], par["h"]
    a0, g0, mu, k = par["a0"], par["gamma0"], par["mu"], par["k"]
    empty = np.zeros(0)

    def run(a):
        return kernels.scalar_closed_loop(a, M, h, T, ctrl, k, kernels.F_LB_GAME, empty, a0, g0, mu)

    if par["a"] == "auto":
        _, probe = run(0.0)
        beta_T = float(probe[1, T])
        a = min(max(beta_T, -M), M) if math.isfinite(beta_T) else 0.0
    else:
        a, probe = par["a"], None
    logs, hist = run(a)
    replay_diff = None
    if probe is not None:
        ok = np.isfinite(probe[6]) & np.isfinite(hist[6])
        same_zero = np.array_equal(np.isfinite(probe[6]), np.isfinite(hist[6]))
        replay_diff = float(np.max(np.abs(probe[6][ok] - hist[6][ok]), initial=0.0)) if same_zero else math.inf
    z, beta, theta = hist[0], hist[1], hist[2]
    finite = np.flatnonzero(np.isfinite(z))
    if finite.size == 0:
        raise NumericOverflowError(T, "game never started")
    t0 = int(finite[0])
    rec = kernels.normalized_game(z[t0], beta[t0], theta[t0], T - t0, ctrl, k, M, a0, g0, mu)
    disc = 0.0
    for row_raw, row_rec in ((z, rec[0]), (beta, rec[1]), (theta, rec[2])):
        raw = row_raw[t0:]
        scale = np.maximum(1.0, np.abs(raw))
        disc = max(disc, float(np.nanmax(np.abs(raw - row_rec) / scale)))
    lo, hi, _ = game_interval(a0, g0, mu)
    inside = np.flatnonzero((beta >= lo) & (beta <= hi))
    zT, bT, thT = float(z[T]), float(beta[T]), float(theta[T])
    gain_log = 0.5 * (logs[0] - logs[1]) if logs[1] > -math.inf else None
    predicted = 0.5 * math.log((1 + zT * zT) / ((a - bT) ** 2 + thT)) if (a - bT) ** 2 + thT > 0 else math.inf
    return {
        "a": a, "M": M, "a0": a0, "gamma0": g0, "mu": mu, "controller": par["controller"], "T": T, "h": h,
        "t0": t0, "z_T": zT, "beta_T": bT, "theta_T": thT,
        "interval_lo": lo, "interval_hi": hi,
        "beta_entered_interval": bool(inside.size), "first_entry": int(inside[0]) if inside.size else None,
        "refuted_gamma": 1.0 / math.sqrt(thT) if thT > 0 else math.inf,
        "realized_gain": math.exp(gain_log) if gain_log is not None else None,
        "realized_gain_log": gain_log,
        "identity_gain_log": predicted if h == 0 else None,
        "recursion_max_rel_discrepancy": disc,
        "replay_max_log_state_diff": replay_diff,
        "budget_worst_excess": float(logs[3]) if math.isfinite(logs[3]) else None,
        "_hist": hist,
    }


def cmd_lowerbound(cfg: dict) -> int:
    par = lowerbound_params(cfg["lowerbound"])
    try:
        rep = run_lowerbound(par)
    except NumericOverflowError as exc:
        os.makedirs(cfg["out"], exist_ok=True)
        _write_json(os.path.join(cfg["out"], "report.json"), {"error": str(exc), "error_step": exc.step})
        return EXIT_NUMERIC
    hist = rep.pop("_hist")
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "lowerbound.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "z", "beta", "theta", "delta", "nu", "a_hat", "abs_x_log"])
        for t in range(hist.shape[1]):
            w.writerow([t] + [_num(float(v)) for v in hist[:, t]])
    _write_json(os.path.join(out, "report.json"), rep)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Certificates


CERT_COLUMNS = ["d", "M", "L", "variant", "eps", "alpha_log", "gain_bound_log",
                "closed_form_bound_log", "kappa", "cp_bound_log"]


def certificate_rows(cc: dict) -> list[dict]:
    kappa = float(cc.get("kappa", 2.0))
    rows = []
    for d in cc["d"]:
        for L in cc["L"]:
            for M in cc["M"]:
                for variant in cc["variants"]:
                    d_, M_, L_ = int(d), float(M), float(L)
                    if not (M_ >= 1 and 0 < L_ <= 1 and d_ >= 1):
                        raise ConfigError(f"bad certificate cell d={d}, M={M}, L={L}")
                    if variant not in (STANDARD_BASIS, EPS_NET):
                        raise ConfigError(f"unknown variant {variant!r}")
                    if variant == EPS_NET and d_ > MAX_EPS_NET_DIM:
                        continue
                    eps, alpha_log = default_parameters(M_, L_, d_, variant)
                    rows.append({
                        "d": d_, "M": M_, "L": L_, "variant": variant, "eps": eps, "alpha_log": alpha_log,
                        "gain_bound_log": gain_certificate_log(M_, L_, d_, variant),
                        "closed_form_bound_log": closed_form_certificate_log(M_, L_, d_)
                        if variant == STANDARD_BASIS else None,
                        "kappa": kappa,
                        "cp_bound_log": cp_gain_certificate_log(kappa, M_, d_, d_),
                    })
    return rows


def cmd_certificates(cfg: dict) -> int:
    rows = certificate_rows(cfg["certificates"])
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "certificates.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CERT_COLUMNS)
        for r in rows:
            w.writerow(["" if r[c] is None else _num(r[c]) for c in CERT_COLUMNS])
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robustlds", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("simulate", "run one rollout"),
        ("sweep", "run a grid of rollouts"),
        ("lowerbound", "play the 1-D lower-bound game"),
        ("certificates", "tabulate gain certificates"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="TOML or JSON config file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="base random seed")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers (sweep only)")
        p.add_argument("-T", type=int, dest="T", help="horizon")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg, max(1, args.jobs))
        if args.command == "lowerbound":
            return cmd_lowerbound(cfg)
        return cmd_certificates(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
