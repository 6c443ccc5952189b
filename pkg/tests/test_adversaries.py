import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robustlds import kernels
from robustlds.adversaries import (
    GREEDY_ALIGNED,
    GREEDY_ANTI_K,
    GREEDY_RANDOM,
    MATRIX_SHIFT,
    ZERO,
    DeltaBudget,
    GreedyDelta,
    ImpulseF,
    LowerBoundF,
    NormalizedGameState,
    UnstabilizableDelta,
    check_mu,
    default_mu,
    game_interval,
    greedy_delta,
    lb_adversary_step,
    normalized_update,
    parse_f_script,
    raw_f_from_nu,
    raw_game_states,
    read_f_csv,
    unstabilizable_delta,
    unstabilizable_system,
)
from robustlds.baselines import CertEquivController
from robustlds.lds_core import LinearController, SystemInstance, ZeroController, random_system, rollout
from robustlds.metrics import robustness_check

MU = 0.01


# -- greedy misspecification ---------------------------------------------------


def test_greedy_zero_budget():
    b = DeltaBudget(0.0)
    np.testing.assert_array_equal(greedy_delta([[1.0, 2.0]], b), [0, 0])


def test_greedy_saturates():
    b = DeltaBudget(0.1)
    w = greedy_delta([[0.6, 0.8]], b)
    assert np.linalg.norm(w) == pytest.approx(0.1)
    np.testing.assert_allclose(w / np.linalg.norm(w), [0.6, 0.8])
    assert b.spent_sq == pytest.approx(0.01)


def test_greedy_telescopes():
    h = 0.3
    b = DeltaBudget(h)
    xs = [[1.0, 0.0]]
    greedy_delta(xs, b)
    xs.append([0.0, 2.0])
    w2 = greedy_delta(xs, b)
    assert w2 @ w2 == pytest.approx(h**2 * 5 - h**2 * 1)


def test_greedy_zero_policy_and_bad_policy():
    assert not np.any(greedy_delta([[1.0]], DeltaBudget(0.5, ZERO)))
    with pytest.raises(ValueError):
        DeltaBudget(0.5, "nope")
    with pytest.raises(ValueError):
        DeltaBudget(-0.1)


@settings(max_examples=25, deadline=None)
@given(
    st.sampled_from([GREEDY_ALIGNED, GREEDY_ANTI_K, GREEDY_RANDOM, MATRIX_SHIFT]),
    st.floats(0.0, 0.9),
    st.integers(1, 3),
    st.integers(0, 10**6),
)
def test_budget_safety_every_policy(policy, h, d, seed):
    rng = np.random.default_rng(seed)
    sys_ = random_system(d, 2.0, 1.0, rng)
    K = rng.standard_normal((d, d)) * 0.5
    E = rng.standard_normal((d, d)) if policy == MATRIX_SHIFT else None
    delta = GreedyDelta(h, policy, E=E, hint=lambda: K, seed=seed)
    f = rng.standard_normal((60, d)) * (rng.random((60, 1)) < 0.2)
    traj = rollout(sys_, LinearController(K), delta, f, 60)
    res = robustness_check(traj, h)
    assert res.passed, res


@pytest.mark.parametrize("h", [5e-324, 1e-310, 1e-161])
def test_budget_safety_tiny_h(h):
    rng = np.random.default_rng(0)
    sys_ = random_system(1, 2.0, 1.0, rng)
    f = rng.standard_normal((60, 1))
    traj = rollout(sys_, LinearController([[0.3]]), GreedyDelta(h), f, 60)
    assert robustness_check(traj, h).passed


def test_anti_k_direction_follows_hint():
    K = np.diag([0.1, 3.0])
    delta = GreedyDelta(0.5, GREEDY_ANTI_K, hint=lambda: K)
    sys_ = SystemInstance(np.eye(2) * 0.5, np.eye(2), 1.0, 0.5)
    traj = rollout(sys_, ZeroController(2), delta, [[1.0, 1.0]], 3)
    w = traj.w[1]
    assert abs(w[0]) < 1e-15 and w[1] > 0


# -- unstabilizable example --------------------------------------------------------


def test_unstabilizable_delta_examples():
    np.testing.assert_array_equal(unstabilizable_delta([0.0, 1.0], 0.5), [-0.5, 0.0])
    np.testing.assert_array_equal(unstabilizable_delta([1.0, 0.0], 0.5), [0.0, 0.0])
    assert not np.any(unstabilizable_delta([3.0, -2.0], 0.0))
    with pytest.raises(ValueError):
        unstabilizable_delta([1.0], 0.5)


def test_unstabilizable_pair_behaves_like_a0():
    eps = 0.25
    sys_ = unstabilizable_system(eps)
    rng = np.random.default_rng(0)
    K = rng.standard_normal((1, 2))
    traj = rollout(sys_, LinearController(K), UnstabilizableDelta(eps), [[1.0, 0.0]], 20)
    # the first coordinate evolves under 2 x_1 alone
    np.testing.assert_allclose(traj.x[1:, 0], 2.0 ** np.arange(20))


# -- lower-bound game ------------------------------------------------------------------


def test_lb_adversary_examples():
    a0, g0 = -4.0, 1.0
    lo, hi, c0 = game_interval(a0, g0, MU)
    y = NormalizedGameState(z=0.7, beta=0.5 * (lo + hi), theta=1.0)
    assert lb_adversary_step(y, 3 * g0, a0, g0, MU) == 0.0
    y = NormalizedGameState(z=1.0, beta=c0 - 5.0, theta=1.0)
    assert lb_adversary_step(y, 0.0, a0, g0, MU) == pytest.approx((4 + MU) * g0)
    y = NormalizedGameState(z=0.0, beta=c0, theta=1.0)
    assert lb_adversary_step(y, 0.0, a0, g0, MU) == pytest.approx(-(4 + MU) * g0)
    y = NormalizedGameState(z=1.0, beta=c0 + 50.0, theta=1.0)
    assert lb_adversary_step(y, 2.5 * g0, a0, g0, MU) == pytest.approx(-MU * g0)


def test_normalized_update_examples():
    y = normalized_update(NormalizedGameState(1.0, 0.0, 1.0), 0.0, 1.0)
    assert (y.z, y.beta, y.theta) == pytest.approx((1.0, 1 / math.sqrt(2), 1.0))
    y = normalized_update(NormalizedGameState(2.0, 0.3, 5.0), -1.5, 0.0)
    assert (y.z, y.beta, y.theta) == pytest.approx((-1.5, 0.3, 1.0))
    y = normalized_update(NormalizedGameState(0.0, 0.3, 5.0), 1.0, 2.0)
    assert y.beta == 0.3
    with pytest.raises(ValueError):
        NormalizedGameState(0.0, 0.0, -1.0)


def test_raw_f_from_nu_examples():
    assert raw_f_from_nu(0.0, 0.7, 0.7, 3.0, 2.0) == 0.0
    assert raw_f_from_nu(1.5, 0.2, 0.9, 0.0, 4.0) == pytest.approx(3.0)


def test_mu_default_and_check():
    assert default_mu(1.0) == pytest.approx(0.05)
    assert default_mu(10.0) == pytest.approx(1 / 600)
    with pytest.raises(ValueError):
        check_mu(0.4, 1.0)
    with pytest.raises(ValueError):
        check_mu(0.0, 1.0)


def lb_rollout(a, controller, a0, g0, T, M=4.0):
    sys_ = SystemInstance([[a]], [[1.0]], M, 1.0)
    fsrc = LowerBoundF(a, a0, g0, MU)
    return rollout(sys_, controller, None, fsrc, T), fsrc


@pytest.mark.parametrize("a", [-0.7, 0.0, 1.3])
@pytest.mark.parametrize("ctrl", ["ce", "lin"])
def test_normalization_equivalence(a, ctrl):
    a0, g0 = -4.0, 1.0
    c = CertEquivController(4.0) if ctrl == "ce" else LinearController([[0.5]])
    traj, fsrc = lb_rollout(a, c, a0, g0, 12)
    z, beta, theta = raw_game_states(traj.x[:, 0], traj.u[:, 0])
    hist = fsrc.history
    t0 = hist[0][0]
    y = NormalizedGameState(z[t0], beta[t0], theta[t0])
    for t, zt, bt, dt, nu in hist:
        assert zt == pytest.approx(y.z, rel=1e-9, abs=1e-12)
        assert bt == pytest.approx(y.beta, rel=1e-9, abs=1e-12)
        y = normalized_update(y, dt, nu)
        np.testing.assert_allclose([y.z, y.beta, y.theta], [z[t + 1], beta[t + 1], theta[t + 1]],
                                   rtol=1e-9, atol=1e-12)


def test_lowerbound_f_starts_with_unit_kick():
    traj, _ = lb_rollout(0.5, ZeroController(1), -4.0, 1.0, 3)
    assert traj.f[0, 0] == 1.0 and traj.x[1, 0] == 1.0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=5, max_size=40), st.floats(1.0, 20.0), st.floats(-50, 50),
       st.floats(-3, 3), st.floats(0.1, 3), st.floats(0, 4))
def test_z_stays_outside_band_under_any_delta(deltas, g0, a0, z0, b0, th0):
    mu = default_mu(g0)
    y = NormalizedGameState(z0, b0, th0)
    for t, d in enumerate(deltas):
        nu = lb_adversary_step(y, d, a0, g0, mu)
        y = normalized_update(y, d, nu)
        assert abs(y.z) >= 2 * g0 * (1 - 1e-12)


@pytest.mark.parametrize(
    "ctrl,k,M,a0,g0",
    [
        (kernels.CTRL_LINEAR, -4.0, 8.0, -6.0, 1.0),
        (kernels.CTRL_LINEAR, -2.0, 8.0, -6.0, 1.0),
        (kernels.CTRL_LINEAR, 30.0, 8.0, 0.0, 2.0),
        (kernels.CTRL_CERT_EQUIV, 0.0, 1.0, -2.0, 1.0),
        (kernels.CTRL_CERT_EQUIV, 0.0, 8.0, 2.0, 2.0),
    ],
)
def test_beta_absorption(ctrl, k, M, a0, g0):
    mu = default_mu(g0)
    lo, hi, _ = game_interval(a0, g0, mu)
    z, beta, theta, delta, nu = kernels.normalized_game.py_func(0.3, 0.0, 1.0, 300, ctrl, k, M, a0, g0, mu)
    trapped = (beta[:-1] >= lo) & (beta[:-1] <= hi) & (np.abs(delta[:-1]) >= 2 * g0)
    assert trapped.any()
    t1 = int(np.flatnonzero(trapped)[0])
    assert np.all((beta[t1:] >= lo) & (beta[t1:] <= hi))
    assert np.all(nu[t1:-1] == 0.0)
    assert np.all(theta[t1 + 1:] <= theta[t1:-1] / (1 + 4 * g0 * g0) * (1 + 1e-12))


def test_cert_equiv_inside_clip_range_is_not_trapped():
    # with I_0 inside [-M, M] certainty equivalence cancels beta, so delta = 0
    g0, M, a0 = 2.0, 16.0, -16.0
    mu = default_mu(g0)
    z, beta, theta, delta, nu = kernels.normalized_game.py_func(0.3, 0.0, 1.0, 100, kernels.CTRL_CERT_EQUIV,
                                                                0.0, M, a0, g0, mu)
    assert np.all(np.abs(beta[:-1]) <= M)
    np.testing.assert_allclose(delta[:-1], 0.0, atol=1e-12)
    assert np.all(nu[:-1] != 0.0)


def test_lower_bound_rollout_respects_budget():
    sys_ = SystemInstance([[0.5]], [[1.0]], 4.0, 1.0)
    traj = rollout(sys_, CertEquivController(4.0), GreedyDelta(0.2), LowerBoundF(0.5, -4.0, 1.0, MU), 200)
    assert robustness_check(traj, 0.2).passed


# -- scripted f ------------------------------------------------------------------------------


def test_parse_f_script(tmp_path):
    assert isinstance(parse_f_script("impulse:3:2.5"), ImpulseF)
    assert parse_f_script("lb_game:-4:1") == ("lb_game", -4.0, 1.0)
    p = tmp_path / "f.csv"
    p.write_text("t,f_0,f_1\n0,1,2\n1,3,4\n")
    np.testing.assert_array_equal(read_f_csv(p)[:, -2:], [[1, 2], [3, 4]])
    with pytest.raises(ValueError):
        parse_f_script("bogus")
