import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynamech import environments as envs
from dynamech import gittins
from dynamech.environments import ArmState, DomainError
from dynamech.rng import substream
from dynamech.virtual import VirtualTransform, affine_coefficients

from conftest import constant_arm_env, two_state_env


def _identity_transform(n_rho: int = 1) -> VirtualTransform:
    return VirtualTransform(alpha=1.0, beta=np.zeros(n_rho), pegged_report=1.0)


# ---------------------------------------------------------------------------
# Oracles first: exhaustive stopping-time ratios for the two-state arm
# ---------------------------------------------------------------------------


def stopping_ratio_two_state(n: int, delta: float) -> float:
    """Ratio when committing to exactly n plays of the pay-0-then-1 arm:
    rewards arrive from the second play on."""
    num = sum(delta ** (t - 1) for t in range(2, n + 1))
    den = sum(delta ** (t - 1) for t in range(1, n + 1))
    return num / den


def test_two_state_oracle_supremum_is_half():
    # the ratio increases in n toward delta/(1-delta+delta) = 1/2 at delta=1/2
    ratios = [stopping_ratio_two_state(n, 0.5) for n in range(1, 60)]
    assert all(b >= a for a, b in zip(ratios, ratios[1:]))
    assert ratios[-1] == pytest.approx(0.5, abs=1e-12)


def test_two_state_index_matches_oracles():
    env = two_state_env(0.5)
    tr = affine_coefficients(env, 0, 1.0)
    idx = gittins.gittins_index(env, 0, tr, 0.5, 0, 0, tol=1e-9)
    assert idx == pytest.approx(0.5, abs=1e-8)
    bf = gittins.brute_force_index(env, 0, tr, ArmState(0.5, 0, 0), horizon=30)
    assert bf.tail_bound < 2e-9
    assert bf.value == pytest.approx(0.5, abs=1e-8)
    assert abs(idx - bf.value) <= 1e-9 + bf.tail_bound + 1e-12
    # the state already paying 1 forever is a constant arm
    assert gittins.gittins_index(env, 0, tr, 0.5, 1, 0) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(xi=st.floats(-0.9, 0.9), theta_scale=st.floats(0.1, 1.0))
def test_constant_arm_index_is_exact(xi, theta_scale):
    env = constant_arm_env(0.5)
    tr = VirtualTransform(alpha=1.0, beta=np.array([xi]), pegged_report=1.0)
    got = gittins.gittins_index(env, 0, tr, 0.0, 0, 0, tol=1e-9)
    assert got == xi  # bracket collapse: bit-exact


def test_three_state_cycle_cross_oracle():
    # rewards (0.2, 0.9, 0.1) on a fixed cyclic private chain
    val = envs.AdditiveValue(
        a=lambda t, r: 0.0, da=lambda t, r: 0.0, b=np.array([[0.2], [0.9], [0.1]])
    )
    h = np.array([[0, 1, 0], [0, 0, 1], [1, 0, 0]], dtype=float)
    env = envs.finite_chain(0.6, g=[[1.0]], h=h, value=val)
    tr = affine_coefficients(env, 0, 1.0)
    for start in range(3):
        idx = gittins.gittins_index(env, 0, tr, 0.5, start, 0, tol=1e-9)
        bf = gittins.brute_force_index(env, 0, tr, ArmState(0.5, start, 0), horizon=60)
        assert abs(idx - bf.value) <= 1e-9 + bf.tail_bound


def test_brute_force_guard_refuses_large_instances():
    env = envs.sponsored_search(k=1, cap=5, delta=0.8)
    tr = affine_coefficients(env, 0, 1.0)
    with pytest.raises(DomainError):
        gittins.brute_force_index(env, 0, tr, ArmState(0.9, 0, 0), horizon=100)


def _click_chain_env(cap: int, delta: float) -> envs.Environment:
    """Arm whose reward is the click-belief posterior mean itself."""
    labels, means, succ = envs.beta_posterior_states((1.0, 1.0), cap)
    n = len(labels)
    g = np.zeros((n, n))
    for i, (up, down) in enumerate(succ):
        if up == i and down == i:
            g[i, i] = 1.0
        else:
            g[i, up] += means[i]
            g[i, down] += 1.0 - means[i]
    val = envs.MultiplicativeValue(
        a=lambda t: t, da=lambda t: 1.0, b=means.reshape(1, n), c=np.zeros(n)
    )
    return envs.finite_chain(delta, g=g, h=[[1.0]], value=val, rho_labels=labels)


def test_beta_bernoulli_click_arm_exploration_bonus():
    env = _click_chain_env(cap=20, delta=0.9)
    tr = affine_coefficients(env, 0, 1.0)  # top report: identity transform
    idx = gittins.gittins_index(env, 0, tr, 1.0, 0, 0, tol=1e-6)
    # exploration makes the index exceed the myopic mean 1/2, but it stays
    # below the best reachable posterior mean
    assert 0.5 < idx < 21.0 / 22.0


def test_beta_bernoulli_small_cap_matches_brute_force():
    env = _click_chain_env(cap=3, delta=0.9)
    tr = affine_coefficients(env, 0, 1.0)
    idx = gittins.gittins_index(env, 0, tr, 1.0, 0, 0, tol=1e-7)
    bf = gittins.brute_force_index(env, 0, tr, ArmState(1.0, 0, 0), horizon=180, cap=2000)
    assert abs(idx - bf.value) <= 1e-6 + bf.tail_bound


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_bisection_agrees_with_exact_largest_index_method(seed):
    gen = substream(seed, "vwb")
    n = int(gen.integers(2, 6))
    rewards = gen.random(n)
    p = gen.random((n, n))
    p /= p.sum(axis=1, keepdims=True)
    delta = 0.7
    exact = gittins.vwb_indices(rewards, p, delta)
    val = envs.AdditiveValue(
        a=lambda t, r: 0.0, da=lambda t, r: 0.0, b=rewards.reshape(n, 1)
    )
    env = envs.finite_chain(delta, g=[[1.0]], h=p, value=val)
    tr = affine_coefficients(env, 0, 1.0)
    for s in range(n):
        idx = gittins.gittins_index(env, 0, tr, 0.5, s, 0, tol=1e-9)
        assert idx == pytest.approx(exact[s], abs=2e-9)


def test_vwb_indices_sorted_and_top_state():
    rewards = np.array([0.3, 0.8, 0.1])
    p = np.full((3, 3), 1.0 / 3.0)
    out = gittins.vwb_indices(rewards, p, 0.5)
    assert out[1] == pytest.approx(0.8)
    assert out[1] >= out[0] >= out[2]


def test_index_table_single_state_and_determinism():
    env = constant_arm_env(0.5)
    tr = VirtualTransform(alpha=1.0, beta=np.array([0.25]), pegged_report=1.0)
    t1 = gittins.build_index_table(env, 0, tr, 0.0, tol=1e-9)
    assert t1.values.shape == (1, 1)
    assert t1.lookup(0, 0) == 0.25
    t2 = gittins.build_index_table(env, 0, tr, 0.0, tol=1e-9)
    assert np.array_equal(t1.values, t2.values)


def test_index_table_beta_bernoulli_full_and_finite(sponsored_small):
    tr = affine_coefficients(sponsored_small, 0, 1.0)
    table = gittins.build_index_table(sponsored_small, 0, tr, 1.0, tol=1e-6)
    assert table.values.shape == (6, 6)
    assert np.all(np.isfinite(table.values))
    again = gittins.build_index_table(sponsored_small, 0, tr, 1.0, tol=1e-6)
    assert np.array_equal(table.values, again.values)


def test_allocate_rules():
    assert gittins.allocate([0.4, 0.9]) == 2
    assert gittins.allocate([-0.2, -0.5]) == 0
    assert gittins.allocate([0.7, 0.7]) == 1
    assert gittins.allocate([0.0]) == 0  # tie with the zero arm goes to it
    assert gittins.allocate([]) == 0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 1, allow_nan=False), min_size=1, max_size=6))
def test_allocate_is_argmax_with_lowest_id_ties(vals):
    w = gittins.allocate(vals)
    if w == 0:
        assert max(vals) <= 0.0
    else:
        assert vals[w - 1] == max(vals)
        assert all(v < vals[w - 1] for v in vals[: w - 1])
        assert vals[w - 1] > 0.0


def test_weighted_welfare_constant_arms():
    env = constant_arm_env(0.5, k=2)
    reports = [1.0, 1.0]
    theta = [0.6, 0.2]
    w = gittins.weighted_welfare(env, reports, theta, [0, 0], [0, 0])
    assert w.mean == pytest.approx(1.2, abs=1e-9)
    assert w.std_error == 0.0 and w.method == "exact_dp"
    w1 = gittins.weighted_welfare(env, reports, theta, [0, 0], [0, 0], exclude=0)
    assert w1.mean == pytest.approx(0.4, abs=1e-9)
    w2 = gittins.weighted_welfare(env, reports, [-0.0, 0.0], [0, 0], [0, 0])
    assert w2.mean == 0.0  # all indices at zero: the zero arm absorbs


def test_weighted_welfare_negative_rewards_zero_arm():
    env = constant_arm_env(0.5, k=2)
    # theta values below the transform peg make xi negative: never allocate
    val = gittins.weighted_welfare(env, [1.0, 1.0], [-0.3, -0.1], [0, 0], [0, 0])
    assert val.mean == 0.0


def test_weighted_welfare_rollout_agrees_with_exact(sponsored_small, sponsored_small_runtime):
    env = sponsored_small
    reports = [0.9, 0.7]
    theta = [0.9, 0.7]
    exact = gittins.weighted_welfare(env, reports, theta, [0, 0], [0, 0])
    roll = gittins.weighted_welfare(
        env, reports, theta, [0, 0], [0, 0], mode="rollout", n_paths=3000, seed=5
    )
    assert roll.method == "rollout"
    assert abs(roll.mean - exact.mean) <= 3.5 * roll.std_error


def test_weighted_welfare_exact_refuses_oversized():
    env = envs.sponsored_search(k=2, cap=5, delta=0.8)
    with pytest.raises(DomainError):
        gittins.weighted_welfare(
            env, [0.9, 0.9], [0.9, 0.9], [0, 0], [0, 0], state_cap=1000
        )


def _random_small_instance(seed: int):
    gen = substream(seed, "optimality")
    arms = []
    delta = 0.5 + 0.4 * float(gen.random())
    for _ in range(2):
        n = int(gen.integers(2, 5))
        rewards = -0.3 + 1.3 * gen.random(n)
        p = gen.random((n, n)) + 0.05
        p /= p.sum(axis=1, keepdims=True)
        arms.append((rewards, p))
    return delta, arms


def _instance_env(delta, arms):
    agents = []
    for rewards, p in arms:
        n = len(rewards)
        val = envs.AdditiveValue(
            a=lambda t, r: 0.0, da=lambda t, r: 0.0, b=np.asarray(rewards).reshape(n, 1)
        )
        agents.append(
            envs.AgentModel(
                distribution=envs.uniform_type(1.0),
                public=envs.PublicKernel(matrix=np.eye(1), labels=("p0",)),
                private=envs.PrivateKernel(
                    matrix=np.asarray(p).reshape(1, n, n), labels=tuple(f"e{i}" for i in range(n))
                ),
                value=val,
            )
        )
    return envs.make_environment(agents, delta)


@pytest.mark.parametrize("seed", range(5))
def test_index_policy_achieves_joint_optimum(seed):
    delta, arms = _random_small_instance(seed)
    env = _instance_env(delta, arms)
    policy_val = gittins.weighted_welfare(
        env, [1.0, 1.0], [0.5, 0.5], [0, 0], [0, 0], index_tol=1e-11
    )
    opt_arms = [
        gittins.compile_reward_arm(env.agents[i], env.agents[i].value.b, delta)
        for i in range(2)
    ]
    opt = gittins.joint_optimal_value(opt_arms, delta, tol=1e-12)
    assert policy_val.mean == pytest.approx(float(opt[0]), abs=1e-8)


def test_index_monotone_in_report(sponsored_small):
    env = sponsored_small
    rs = np.linspace(0.55, 1.0, 6)
    prev = None
    for r in rs:
        tr = affine_coefficients(env, 0, float(r))
        table = gittins.build_index_table(env, 0, tr, 0.8, tol=1e-9).values
        if prev is not None:
            assert np.all(table - prev >= -1e-9)
        prev = table


def test_tail_horizon_formula():
    assert gittins.tail_horizon(0.5, 1, 1.0, 1e-4) == 15
    # delta^T * k * vmax / (1 - delta) < eps at the returned T, not before
    t = gittins.tail_horizon(0.8, 2, 1.0, 1e-4)
    assert 0.8**t * 2 / 0.2 < 1e-4 <= 0.8 ** (t - 1) * 2 / 0.2
