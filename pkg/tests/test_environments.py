import math

import numpy as np
import pytest

from dexter.ar_noise import ARProcessSpec, NoiseMatrix
from dexter.environments import (
    AcrobotEnv,
    BaseEnv,
    CartpoleEnv,
    ConstantEnv,
    EnvState,
    Episode,
    PolicyKind,
    Scenario,
    ScenarioConfig,
    arno_step,
    arns_step,
    arts_step,
    builtin_policy,
    estimate_dimension_scales,
    make_env,
    run_episode,
)
from dexter.errors import ConfigError, SimulationDivergedError
from dexter.seeding import rng_from


def cartpole_oracle(vector, action):
    """Fresh transcription of the textbook Euler-integrated cartpole update."""
    gravity, mass_cart, mass_pole = 9.8, 1.0, 0.1
    total = mass_cart + mass_pole
    half_len = 0.5
    pml = mass_pole * half_len
    force_mag, dt = 10.0, 0.02
    x, x_dot, theta, theta_dot = vector
    force = force_mag if action == 1 else -force_mag
    ct, st = math.cos(theta), math.sin(theta)
    temp = (force + pml * theta_dot * theta_dot * st) / total
    theta_acc = (gravity * st - ct * temp) / (half_len * (4.0 / 3.0 - mass_pole * ct * ct / total))
    x_acc = temp - pml * theta_acc * ct / total
    return np.array([
        x + dt * x_dot,
        x_dot + dt * x_acc,
        theta + dt * theta_dot,
        theta_dot + dt * theta_acc,
    ])


def acrobot_oracle_rk4(angles, torque, dt=0.2):
    """Fresh transcription of the standard two-link underactuated dynamics
    integrated with one RK4 step."""
    m, l1, lc, inertia, g = 1.0, 1.0, 0.5, 1.0, 9.8

    def derivs(y):
        th1, th2, w1, w2 = y
        d1 = m * lc * lc + m * (l1 * l1 + lc * lc + 2 * l1 * lc * math.cos(th2)) + 2 * inertia
        d2 = m * (lc * lc + l1 * lc * math.cos(th2)) + inertia
        phi2 = m * lc * g * math.cos(th1 + th2 - math.pi / 2)
        phi1 = (
            -m * l1 * lc * w2 * w2 * math.sin(th2)
            - 2 * m * l1 * lc * w2 * w1 * math.sin(th2)
            + (m * lc + m * l1) * g * math.cos(th1 - math.pi / 2)
            + phi2
        )
        a2 = (torque + d2 / d1 * phi1 - m * l1 * lc * w1 * w1 * math.sin(th2) - phi2) / (
            m * lc * lc + inertia - d2 * d2 / d1
        )
        a1 = -(d2 * a2 + phi1) / d1
        return np.array([w1, w2, a1, a2])

    k1 = derivs(angles)
    k2 = derivs(angles + dt / 2 * k1)
    k3 = derivs(angles + dt / 2 * k2)
    k4 = derivs(angles + dt * k3)
    return angles + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def zero_noise(dims, steps):
    return NoiseMatrix(
        values=np.zeros((dims, steps)), spec=ARProcessSpec.no_correlation(), seed=0
    )


def test_cartpole_step_matches_oracle():
    env = CartpoleEnv(200)
    state = EnvState(vector=np.array([0.0, 0.0, 0.05, 0.0]))
    nxt, reward, terminated = env.step(state, 1)
    assert np.max(np.abs(nxt.vector - cartpole_oracle(state.vector, 1))) < 1e-12
    assert reward == 1.0 and not terminated

    rng = np.random.default_rng(0)
    for _ in range(200):
        vec = rng.uniform(-0.2, 0.2, size=4)
        action = int(rng.integers(2))
        got = env.step(EnvState(vector=vec), action)[0].vector
        assert np.max(np.abs(got - cartpole_oracle(vec, action))) < 1e-12


def test_cartpole_alternating_forces_stay_upright():
    env = CartpoleEnv(200)
    state = EnvState(vector=np.zeros(4))
    for i in range(20):
        state, _, terminated = env.step(state, i % 2)
        assert abs(state.vector[2]) < env.THETA_LIMIT
        assert not terminated


def test_cartpole_horizon_cap():
    env = CartpoleEnv(200)
    state = EnvState(vector=np.zeros(4), step_index=200)
    _, _, terminated = env.step(state, 0)
    assert terminated


def test_cartpole_bounds_and_divergence():
    env = CartpoleEnv(200)
    leaning = EnvState(vector=np.array([0.0, 0.0, 0.3, 0.0]))
    _, _, terminated = env.step(leaning, 0)
    assert terminated  # beyond the 12 degree limit
    with pytest.raises(SimulationDivergedError):
        env.step(EnvState(vector=np.array([np.inf, 0.0, 0.0, 0.0])), 0)


def test_acrobot_hanging_rest_is_fixed_point():
    env = AcrobotEnv(200)
    rest = EnvState(vector=np.array([1.0, 0.0, 1.0, 0.0, 0.0, 0.0]))
    nxt, reward, terminated = env.step(rest, 1)  # zero torque
    assert np.max(np.abs(nxt.vector - rest.vector)) < 1e-12
    assert reward == -1.0 and not terminated


def test_acrobot_cos_sin_invariant():
    env = AcrobotEnv(200)
    rng = np.random.default_rng(1)
    for _ in range(100):
        angles = rng.uniform(-np.pi, np.pi, size=2)
        vels = rng.uniform(-4, 4, size=2)
        vec = np.array([
            math.cos(angles[0]), math.sin(angles[0]),
            math.cos(angles[1]), math.sin(angles[1]),
            vels[0], vels[1],
        ])
        nxt = env.step(EnvState(vector=vec), int(rng.integers(3)))[0].vector
        assert abs(nxt[0] ** 2 + nxt[1] ** 2 - 1.0) < 1e-9
        assert abs(nxt[2] ** 2 + nxt[3] ** 2 - 1.0) < 1e-9


def test_acrobot_positive_torque_spins_up_second_link():
    env = AcrobotEnv(200)
    state = EnvState(vector=np.array([1.0, 0.0, 1.0, 0.0, 0.0, 0.0]))
    for _ in range(5):
        state, _, _ = env.step(state, 2)  # +1 torque
    assert state.vector[5] > 0.0

    # independent RK4 oracle agrees on the trajectory
    angles = np.zeros(4)
    for _ in range(5):
        angles = acrobot_oracle_rk4(angles, 1.0)
    assert angles[3] > 0.0
    assert abs(state.vector[5] - angles[3]) < 1e-9


def test_acrobot_step_matches_oracle_on_random_states():
    env = AcrobotEnv(200)
    rng = np.random.default_rng(2)
    for _ in range(50):
        angles = np.concatenate([rng.uniform(-1.0, 1.0, 2), rng.uniform(-2.0, 2.0, 2)])
        action = int(rng.integers(3))
        vec = np.array([
            math.cos(angles[0]), math.sin(angles[0]),
            math.cos(angles[1]), math.sin(angles[1]),
            angles[2], angles[3],
        ])
        got = env.step(EnvState(vector=vec), action)[0].vector
        expected = acrobot_oracle_rk4(angles, env.TORQUES[action])
        assert abs(got[4] - np.clip(expected[2], -env.MAX_VEL_1, env.MAX_VEL_1)) < 1e-9
        assert abs(got[5] - np.clip(expected[3], -env.MAX_VEL_2, env.MAX_VEL_2)) < 1e-9
        assert abs(got[0] - math.cos(expected[0])) < 1e-9
        assert abs(got[1] - math.sin(expected[0])) < 1e-9


def test_arts_step_direct_lookup():
    noise = NoiseMatrix(
        values=np.array([[0.1, 0.2, 0.3]]), spec=ARProcessSpec.no_correlation(), seed=0
    )
    assert arts_step(1, noise) == pytest.approx(0.2)
    with pytest.raises(IndexError):
        arts_step(3, noise)
    with pytest.raises(ConfigError):
        arts_step(0, zero_noise(2, 5))


def test_arts_episode_observations_carry_the_configured_correlation():
    cfg = ScenarioConfig(
        scenario=Scenario.ARTS,
        base_env=BaseEnv.CONSTANT,
        noise_pre=ARProcessSpec.one_step(0.95),
        noise_post=ARProcessSpec.one_step(0.95),
    )
    policy = builtin_policy(cfg.base_env, PolicyKind.RANDOM)
    ep = run_episode(cfg, policy, seed=3, inject=False)
    x = ep.observations[:, 0]
    xc = x - x.mean()
    acf1 = np.sum(xc[1:] * xc[:-1]) / np.sum(xc * xc)
    assert abs(acf1 - 0.95) < 0.08

    ep2 = run_episode(cfg, policy, seed=3, inject=False)
    assert np.array_equal(ep.observations, ep2.observations)


def test_arno_zero_noise_is_identity():
    env = CartpoleEnv(200)
    noise = zero_noise(4, 50)
    scales = np.ones(4)
    noised = EnvState(vector=np.array([0.0, 0.0, 0.02, 0.0]))
    clean = EnvState(vector=np.array([0.0, 0.0, 0.02, 0.0]))
    for t in range(20):
        noised, obs, _, _ = arno_step(env, noised, t % 2, noise, scales, t)
        clean, _, _ = env.step(clean, t % 2)
        assert np.array_equal(obs, clean.vector)
        assert np.array_equal(noised.vector, clean.vector)


def test_arno_observation_is_state_plus_scaled_noise_column():
    env = CartpoleEnv(200)
    rng = np.random.default_rng(4)
    noise = NoiseMatrix(values=rng.normal(size=(4, 50)), spec=ARProcessSpec.no_correlation(), seed=1)
    scales = np.array([1.0, 2.0, 0.5, 3.0])
    state = EnvState(vector=np.array([0.0, 0.0, 0.02, 0.0]))
    for t in range(20):
        state, obs, _, _ = arno_step(env, state, t % 2, noise, scales, t)
        assert np.array_equal(obs, state.vector + noise.values[:, t + 1] * scales)
        assert np.allclose(obs - state.vector, noise.values[:, t + 1] * scales, atol=1e-12)


def test_arno_hidden_dynamics_equal_clean_run_bit_exact():
    cfg = ScenarioConfig(
        scenario=Scenario.ARNO,
        base_env=BaseEnv.CARTPOLE,
        noise_pre=ARProcessSpec.no_correlation(scale=0.5),
        noise_post=ARProcessSpec.one_step(0.95, scale=0.5),
        per_dimension_scale=(0.2, 0.2, 0.01, 0.2),
    )
    policy = builtin_policy(cfg.base_env, PolicyKind.HEURISTIC)
    ep = run_episode(cfg, policy, seed=11, record_hidden=True)

    env = CartpoleEnv(cfg.horizon)
    state = EnvState(vector=ep.hidden_states[0].copy())
    replayed = [state.vector.copy()]
    for action in ep.actions:
        state, _, _ = env.step(state, int(action))
        replayed.append(state.vector.copy())
    assert np.array_equal(np.asarray(replayed), ep.hidden_states)


def test_arno_noise_std_scales_with_dimension_std():
    cfg = ScenarioConfig(
        scenario=Scenario.ARNO,
        base_env=BaseEnv.CARTPOLE,
        noise_pre=ARProcessSpec.no_correlation(scale=0.5),
        noise_post=ARProcessSpec.one_step(0.95, scale=0.5),
        per_dimension_scale=(0.23, 0.17, 0.008, 0.2),
    )
    policy = builtin_policy(cfg.base_env, PolicyKind.HEURISTIC)
    added = []
    for i in range(50):
        ep = run_episode(cfg, policy, seed=1000 + i, inject=False, record_hidden=True)
        added.append(ep.observations - ep.hidden_states)
    added = np.concatenate(added, axis=0)
    assert added.shape[0] >= 9000
    for d, scale_d in enumerate(cfg.per_dimension_scale):
        assert abs(added[:, d].std() - 0.5 * scale_d) / (0.5 * scale_d) < 0.1


def test_arns_zero_noise_bit_equal_to_clean_env():
    env = CartpoleEnv(200)
    noise = zero_noise(4, 60)
    scales = np.ones(4)
    noisy = EnvState(vector=np.array([0.01, 0.0, 0.01, 0.0]))
    clean = EnvState(vector=np.array([0.01, 0.0, 0.01, 0.0]))
    for t in range(30):
        noisy, _, _ = arns_step(env, noisy, t % 2, noise, scales, t)
        clean, _, _ = env.step(clean, t % 2)
        assert np.array_equal(noisy.vector, clean.vector)


def test_arns_noise_at_single_step_preserves_prefix():
    env = CartpoleEnv(200)
    scales = np.ones(4)
    blank = zero_noise(4, 60)
    bump = zero_noise(4, 60)
    bump.values[2, 25] = 0.2  # angle noise consumed by the transition into obs 25
    a = EnvState(vector=np.array([0.01, 0.0, 0.01, 0.0]))
    b = EnvState(vector=np.array([0.01, 0.0, 0.01, 0.0]))
    for t in range(40):
        a, _, _ = arns_step(env, a, t % 2, blank, scales, t)
        b, _, _ = arns_step(env, b, t % 2, bump, scales, t)
        if t + 1 < 25:
            assert np.array_equal(a.vector, b.vector)
    assert not np.array_equal(a.vector, b.vector)


def test_arns_strong_angle_noise_shortens_episodes():
    base = dict(
        scenario=Scenario.ARNS,
        base_env=BaseEnv.CARTPOLE,
        per_dimension_scale=(0.0, 0.0, 0.05, 0.0),
    )
    noisy_cfg = ScenarioConfig(
        noise_pre=ARProcessSpec.no_correlation(),
        noise_post=ARProcessSpec.one_step(0.9),
        **base,
    )
    policy = builtin_policy(BaseEnv.CARTPOLE, PolicyKind.HEURISTIC)
    noisy_lens, clean_lens = [], []
    for i in range(100):
        noisy_lens.append(run_episode(noisy_cfg, policy, seed=i, inject=True).length)
        clean_env = CartpoleEnv(200)
        state = clean_env.reset(rng_from(i, "clean_env"))
        n = 1
        terminated = False
        prng = rng_from(i, "clean_policy")
        while n < 200 and not terminated:
            state, _, terminated = clean_env.step(state, policy(state.vector, prng))
            n += 1
        clean_lens.append(n)
    assert np.mean(noisy_lens) < np.mean(clean_lens)


def test_run_episode_clean_mode_labels():
    cfg = ScenarioConfig(
        scenario=Scenario.ARTS,
        base_env=BaseEnv.CONSTANT,
        noise_pre=ARProcessSpec.no_correlation(),
        noise_post=ARProcessSpec.one_step(0.95),
    )
    policy = builtin_policy(cfg.base_env, PolicyKind.RANDOM)
    ep = run_episode(cfg, policy, seed=0, inject=False)
    assert ep.injection_time is None
    assert not ep.labels.any()
    assert len(ep.labels) == ep.length - 1


def test_run_episode_label_arithmetic():
    cfg = ScenarioConfig(
        scenario=Scenario.ARTS,
        base_env=BaseEnv.CONSTANT,
        noise_pre=ARProcessSpec.no_correlation(),
        noise_post=ARProcessSpec.one_step(0.95),
        injection_window=(100, 100),
    )
    policy = builtin_policy(cfg.base_env, PolicyKind.RANDOM)
    ep = run_episode(cfg, policy, seed=0)
    assert ep.length == 200 and ep.injection_time == 100
    assert int((~ep.labels).sum()) == 99
    assert int(ep.labels.sum()) == 100
    assert np.array_equal(ep.labels, np.arange(1, 200) >= 100)


def test_run_episode_balanced_labels_in_expectation():
    cfg = ScenarioConfig(
        scenario=Scenario.ARTS,
        base_env=BaseEnv.CONSTANT,
        noise_pre=ARProcessSpec.no_correlation(),
        noise_post=ARProcessSpec.two_step(0.95),
    )
    policy = builtin_policy(cfg.base_env, PolicyKind.RANDOM)
    fractions = [
        run_episode(cfg, policy, seed=i).labels.mean() for i in range(200)
    ]
    assert abs(np.mean(fractions) - 0.5) < 0.05


def test_run_episode_determinism_and_horizon():
    cfg = ScenarioConfig(
        scenario=Scenario.ARNO,
        base_env=BaseEnv.CARTPOLE,
        noise_pre=ARProcessSpec.no_correlation(scale=0.3),
        noise_post=ARProcessSpec.one_step(0.95, scale=0.3),
        per_dimension_scale=(0.2, 0.2, 0.01, 0.2),
    )
    policy = builtin_policy(cfg.base_env, PolicyKind.HEURISTIC)
    a = run_episode(cfg, policy, seed=17)
    b = run_episode(cfg, policy, seed=17)
    assert np.array_equal(a.observations, b.observations)
    assert np.array_equal(a.actions, b.actions)
    assert a.injection_time == b.injection_time
    assert a.length <= cfg.horizon


def test_run_episode_unusable_after_retry_cap():
    # Random-policy cartpole rarely survives past ~60 steps, so a late
    # injection window exhausts the retry cap.
    cfg = ScenarioConfig(
        scenario=Scenario.ARNS,
        base_env=BaseEnv.CARTPOLE,
        noise_pre=ARProcessSpec.no_correlation(scale=0.1),
        noise_post=ARProcessSpec.one_step(0.9, scale=0.1),
        injection_window=(180, 190),
        per_dimension_scale=(0.1, 0.1, 0.01, 0.1),
    )
    policy = builtin_policy(cfg.base_env, PolicyKind.RANDOM)
    ep = run_episode(cfg, policy, seed=1)
    assert not ep.usable
    assert ep.length < ep.injection_time + 1


def test_scenario_config_validation():
    pre = ARProcessSpec.no_correlation()
    post = ARProcessSpec.one_step(0.9)
    with pytest.raises(ConfigError):
        ScenarioConfig(Scenario.ARTS, BaseEnv.CARTPOLE, pre, post)
    with pytest.raises(ConfigError):
        ScenarioConfig(Scenario.ARNO, BaseEnv.CONSTANT, pre, post)
    with pytest.raises(ConfigError):
        ScenarioConfig(Scenario.ARNS, BaseEnv.ACROBOT, pre, post)
    with pytest.raises(ConfigError, match="injection_window"):
        ScenarioConfig(Scenario.ARTS, BaseEnv.CONSTANT, pre, post, injection_window=(3, 100))
    with pytest.raises(ConfigError, match="injection_window"):
        ScenarioConfig(Scenario.ARTS, BaseEnv.CONSTANT, pre, post, injection_window=(6, 195))


def test_builtin_policies():
    rng = np.random.default_rng(5)
    random_pol = builtin_policy(BaseEnv.CARTPOLE, PolicyKind.RANDOM)
    draws = np.array([random_pol(np.zeros(4), rng) for _ in range(10_000)])
    assert abs((draws == 1).mean() - 0.5) < 0.05

    heuristic = builtin_policy(BaseEnv.CARTPOLE, PolicyKind.HEURISTIC)
    env = CartpoleEnv(200)
    lengths = []
    for seed in range(100):
        state = env.reset(rng_from(seed, "env"))
        n, terminated = 1, False
        while n < 200 and not terminated:
            state, _, terminated = env.step(state, heuristic(state.vector, rng))
            n += 1
        lengths.append(n)
    assert np.mean(lengths) >= 150


def test_acrobot_heuristic_beats_random():
    env = AcrobotEnv(200)

    def goals(policy, tag):
        count = 0
        for seed in range(100):
            state = env.reset(rng_from(seed, tag))
            prng = rng_from(seed, tag + "_policy")
            n, terminated = 1, False
            while n < 200 and not terminated:
                state, _, terminated = env.step(state, policy(state.vector, prng))
                n += 1
            count += terminated and env.at_goal(state.vector)
        return count

    heuristic_goals = goals(builtin_policy(BaseEnv.ACROBOT, PolicyKind.HEURISTIC), "h")
    random_goals = goals(builtin_policy(BaseEnv.ACROBOT, PolicyKind.RANDOM), "r")
    assert heuristic_goals > random_goals


def test_estimate_dimension_scales():
    policy = builtin_policy(BaseEnv.CARTPOLE, PolicyKind.HEURISTIC)
    scales = estimate_dimension_scales(BaseEnv.CARTPOLE, policy, num_episodes=20, seed=0)
    assert scales.shape == (4,)
    assert np.all(scales > 0)


def test_episode_json_roundtrip():
    cfg = ScenarioConfig(
        scenario=Scenario.ARTS,
        base_env=BaseEnv.CONSTANT,
        noise_pre=ARProcessSpec.no_correlation(),
        noise_post=ARProcessSpec.one_step(0.95),
    )
    policy = builtin_policy(cfg.base_env, PolicyKind.RANDOM)
    ep = run_episode(cfg, policy, seed=12)
    back = Episode.from_json_dict(ep.to_json_dict())
    assert np.array_equal(back.observations, ep.observations)
    assert np.array_equal(back.labels, ep.labels)
    assert back.injection_time == ep.injection_time
    assert back.scenario == ep.scenario


def test_make_env_constant():
    env = make_env(BaseEnv.CONSTANT, 50)
    assert isinstance(env, ConstantEnv)
    state = env.reset(np.random.default_rng(0))
    nxt, reward, terminated = env.step(state, 0)
    assert np.array_equal(nxt.vector, state.vector)
    assert reward == 0.0 and not terminated
