import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from robustlds.cli import (
    EXIT_CONFIG,
    EXIT_INVARIANT,
    EXIT_NUMERIC,
    EXIT_OK,
    main,
    normalize_config,
    resolve_config,
    build_parser,
)
from robustlds.metrics import gain_certificate_log


def write_toml(path, text):
    path.write_text(text)
    return str(path)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def report(out):
    return json.loads((out / "report.json").read_text())


# -- config ---------------------------------------------------------------------------------


def test_precedence(tmp_path):
    cfg_path = write_toml(tmp_path / "c.toml", 'seed = 5\nT = 50\n[system]\nd = 2\n')
    args = build_parser().parse_args(
        ["simulate", "--config", cfg_path, "--set", "system.d=3", "--set", "T=70", "-T", "80"]
    )
    cfg = resolve_config(args)
    assert cfg["seed"] == 5 and cfg["system"]["d"] == 3 and cfg["T"] == 80
    assert cfg["system"]["M"] == 2.0


def test_aliases():
    cfg = normalize_config({"controller": "cusumano_poolla", "adversary": {"delta_policy": "zero", "f_script": "zero"}})
    assert cfg["controller"]["kind"] == "cp"
    assert cfg["adversary"]["delta"] == "zero" and cfg["adversary"]["f"] == "zero"


def test_bad_config_file(tmp_path):
    bad = write_toml(tmp_path / "bad.toml", "this is = = not toml")
    assert main(["simulate", "--config", bad, "--out", str(tmp_path / "o")]) == EXIT_CONFIG


# -- simulate -------------------------------------------------------------------------------


def test_simulate_zero_everything(tmp_path):
    out = tmp_path / "o"
    code = main(["simulate", "--out", str(out), "--set", 'adversary.f="zero"'])
    assert code == EXIT_OK
    rep = report(out)
    assert rep["realized_gain"] == "undefined" and rep["exit_code"] == 0
    for name in ("trajectory.csv", "events.jsonl", "report.json", "invariants.csv"):
        assert (out / name).exists()


def test_simulate_decay_matches_hand_rollout(tmp_path):
    cfg = write_toml(tmp_path / "c.toml", """
T = 8
[system]
kind = "explicit"
A = [[0.5]]
B = [[1.0]]
M = 1.0
L = 0.5
[controller]
kind = "zero"
[adversary]
f = "impulse:0:1"
""")
    out = tmp_path / "o"
    assert main(["simulate", "--config", cfg, "--out", str(out)]) == EXIT_OK
    rows = read_csv(out / "trajectory.csv")
    xs = [float(r["x_0"]) for r in rows]
    assert xs == [0.0, 1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625, 0.0078125]
    assert report(out)["realized_gain"] == pytest.approx(math.sqrt((1 - 4.0**-8) * 4 / 3), rel=1e-15)


def test_simulate_rejects_small_m(tmp_path):
    assert main(["simulate", "--out", str(tmp_path), "--set", "system.M=0.5"]) == EXIT_CONFIG


def test_simulate_numeric_failure(tmp_path):
    out = tmp_path / "o"
    code = main(["simulate", "--out", str(out), "-T", "20", "--set", 'system.kind="explicit"',
                 "--set", "system.A=[[1e200]]", "--set", "system.B=[[1.0]]", "--set", "system.M=1e200", "--set", "system.L=0.5",
                 "--set", 'controller.kind="zero"'])
    assert code == EXIT_NUMERIC
    assert report(out)["error_step"] == 3


def test_simulate_adaptive_known_budget(tmp_path):
    out = tmp_path / "o"
    code = main(["simulate", "--out", str(out), "--seed", "3", "-T", "300", "--set", "system.d=2",
                 "--set", "adversary.h=0.05", "--set", "controller.known_budget=true"])
    assert code == EXIT_OK
    rep = report(out)
    assert rep["certificate_log"] == pytest.approx(gain_certificate_log(2.0, 1.0, 2))
    assert rep["realized_gain_log"] <= rep["certificate_log"]
    events = [json.loads(line) for line in (out / "events.jsonl").read_text().splitlines()]
    assert events[0]["event"] == "epoch_start"


def test_simulate_cp(tmp_path):
    out = tmp_path / "o"
    code = main(["simulate", "--out", str(out), "-T", "200", "--set", 'controller.kind="cp"',
                 "--set", 'system.kind="strongly_stabilizable"', "--set", "system.kappa=1.5",
                 "--set", "system.d=1", "--set", "adversary.h=0.01"])
    assert code == EXIT_OK
    names = [r["name"] for r in report(out)["invariant_results"]]
    assert "cp_switches_le_net" in names and "cp_state_bound" in names


# -- sweep -------------------------------------------------------------------------------------


def test_one_cell_sweep_matches_simulate(tmp_path):
    common = ["--seed", "4", "-T", "150", "--set", "system.d=2", "--set", "adversary.h=0.05"]
    assert main(["simulate", "--out", str(tmp_path / "s")] + common) == EXIT_OK
    assert main(["sweep", "--out", str(tmp_path / "w")] + common) == EXIT_OK
    rows = read_csv(tmp_path / "w" / "results.csv")
    assert len(rows) == 1
    rep = report(tmp_path / "s")
    assert float(rows[0]["realized_gain"]) == rep["realized_gain"]
    assert float(rows[0]["certificate_log"]) == rep["certificate_log"]
    assert int(rows[0]["epochs"]) == rep["epochs"]


def test_cert_equiv_gain_vs_m_sweep(tmp_path):
    cfg = write_toml(tmp_path / "c.toml", """
T = 150
[system]
kind = "explicit"
A = [[0.9]]
B = [[1.0]]
L = 0.5
[controller]
kind = "cert_equiv"
[adversary]
h = 0.25
f = "lb_game:-4:1"
[sweep.grid]
"system.M" = [1.0, 2.0, 4.0, 8.0]
""")
    out = tmp_path / "o"
    assert main(["sweep", "--config", cfg, "--out", str(out)]) == EXIT_OK
    rows = read_csv(out / "results.csv")
    assert len(rows) == 4
    for r in rows:
        M, h = float(r["system.M"]), 0.25
        bound = math.sqrt(64 * M * M - 8 * h) / (1 - 2 * h) ** 1.5
        assert float(r["realized_gain"]) <= bound
        assert float(r["certificate"]) == pytest.approx(bound, rel=1e-15)


def test_sweep_seeds_distinct_and_reproducible(tmp_path):
    args = ["-T", "80", "--set", "repetitions=10", "--set", "seed=1", "--set", 'adversary.f="gaussian:5:1"']
    assert main(["sweep", "--out", str(tmp_path / "a")] + args) == EXIT_OK
    assert main(["sweep", "--out", str(tmp_path / "b")] + args) == EXIT_OK
    assert main(["sweep", "--out", str(tmp_path / "c"), "--jobs", "2"] + args) == EXIT_OK
    a = (tmp_path / "a" / "results.csv").read_bytes()
    assert a == (tmp_path / "b" / "results.csv").read_bytes()
    assert a == (tmp_path / "c" / "results.csv").read_bytes()
    rows = read_csv(tmp_path / "a" / "results.csv")
    assert [int(r["seed"]) for r in rows] == list(range(1, 11))
    assert len({r["realized_gain"] for r in rows}) == 10


def test_sweep_records_cell_failures(tmp_path):
    out = tmp_path / "o"
    code = main(["sweep", "--out", str(out), "-T", "20", "--set", 'sweep.grid={"system.M": [2.0, 0.5]}'])
    assert code == EXIT_CONFIG
    rows = read_csv(out / "results.csv")
    assert rows[0]["exit_code"] == "0" and rows[1]["exit_code"] == "2"
    assert "M must be" in rows[1]["error"]


def test_sweep_invariant_failure_exit(tmp_path):
    # an explicit plant outside the published bounds breaks the estimator guarantees
    out = tmp_path / "o"
    code = main(["sweep", "--out", str(out), "-T", "40", "--set", 'system.kind="explicit"',
                 "--set", "system.A=[[0.0]]", "--set", "system.B=[[0.3]]", "--set", "system.M=2",
                 "--set", "system.L=1", "--set", "system.allow_invalid=true",
                 "--set", "controller.known_budget=true"])
    rows = read_csv(out / "results.csv")
    assert code == EXIT_INVARIANT
    assert rows[0]["failed_invariants"] == "gain_certificate"


# -- lower bound ------------------------------------------------------------------------------------


def test_lowerbound_huge_gamma_traps_beta(tmp_path):
    out = tmp_path / "o"
    code = main(["lowerbound", "--out", str(out), "--set", "lowerbound.gamma0=1e6",
                 "--set", "lowerbound.a0=-2e6", "--set", "lowerbound.T=60", "--set", "lowerbound.M=4"])
    assert code == EXIT_OK
    rep = report(out)
    assert rep["beta_entered_interval"]
    assert rep["theta_T"] < 1e-60
    assert rep["recursion_max_rel_discrepancy"] <= 1e-9
    rows = read_csv(out / "lowerbound.csv")
    assert len(rows) == 61


def test_lowerbound_gain_grows_with_m(tmp_path):
    gains = []
    for M in (4, 8, 16):
        out = tmp_path / f"m{M}"
        assert main(["lowerbound", "--out", str(out), "--set", f"lowerbound.M={M}", "--set", "lowerbound.T=3000"]) == 0
        rep = report(out)
        assert rep["identity_gain_log"] == pytest.approx(rep["realized_gain_log"], abs=1e-9)
        gains.append(rep["realized_gain"])
    assert gains[1] / gains[0] >= 1.5 and gains[2] / gains[1] >= 1.5


@pytest.mark.parametrize("mu", ["0", "0.5", "-1"])
def test_lowerbound_bad_mu(tmp_path, mu):
    assert main(["lowerbound", "--out", str(tmp_path), "--set", f"lowerbound.mu={mu}"]) == EXIT_CONFIG


# -- certificates ---------------------------------------------------------------------------------


def test_certificates_single_cell(tmp_path):
    out = tmp_path / "o"
    code = main(["certificates", "--out", str(out), "--set", "certificates.M=[2.0]",
                 "--set", "certificates.L=[1.0]", "--set", "certificates.d=[1]"])
    assert code == EXIT_OK
    rows = read_csv(out / "certificates.csv")
    std = [r for r in rows if r["variant"] == "standard_basis"][0]
    assert float(std["gain_bound_log"]) == gain_certificate_log(2.0, 1.0, 1)
    # by hand: ln(10 * 4) + 2 ln(4^14 * 2^8)
    assert float(std["gain_bound_log"]) == pytest.approx(math.log(40) + 2 * (14 * math.log(4) + 8 * math.log(2)))
    assert float(std["closed_form_bound_log"]) == pytest.approx(2 * math.log(4**15 * 2**10))
    assert float(std["eps"]) == pytest.approx(1 / 300)
    net = [r for r in rows if r["variant"] == "eps_net"][0]
    assert float(net["gain_bound_log"]) == pytest.approx(10 * math.log(4**17 * 2**10))
    assert float(std["cp_bound_log"]) == pytest.approx(4 * 2 * 8 * math.log(135 * 32 * 2))


def test_certificates_monotone_in_m(tmp_path):
    out = tmp_path / "o"
    assert main(["certificates", "--out", str(out)]) == EXIT_OK
    rows = read_csv(out / "certificates.csv")
    groups = {}
    for r in rows:
        groups.setdefault((r["d"], r["L"], r["variant"]), []).append((float(r["M"]), float(r["gain_bound_log"])))
    for vals in groups.values():
        vals.sort()
        assert all(b[1] > a[1] for a, b in zip(vals, vals[1:]))


def test_console_entry_point(tmp_path):
    out = tmp_path / "o"
    proc = subprocess.run([sys.executable, "-m", "robustlds.cli", "certificates", "--out", str(out)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (out / "certificates.csv").exists()
