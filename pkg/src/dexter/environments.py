"""Natively implemented control environments and the noise-injection
scenarios built on them.

Three base environments (classic Cartpole with Euler integration, classic
Acrobot with RK4, and a trivial constant-state environment) are wrapped by
three scenario families:

* ARTS -- the observation *is* a 1-D noise series; the state is constant.
* ARNO -- sensory anomaly: dynamics run on the true state, and the
  per-dimension-scaled noise column is added to the observation only.
* ARNS -- semantic anomaly: the noise perturbs the state fed into the
  transition function, so it changes the dynamics themselves; the recorded
  observation is the true next state.

Episodes label every transition by whether its destination observation index
has reached the injection time t_a, so an episode of length L carries L-1
labels and, with L = 200 and t_a = 100, exactly 99 in-distribution and 100
anomalous transitions.
"""

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .ar_noise import ARProcessSpec, NoiseMatrix, generate_matrix, spliced_matrix
from .errors import ConfigError, SimulationDivergedError
from .seeding import child_seed, rng_from

DEFAULT_HORIZON = 200
EPISODE_RETRY_CAP = 10


class Scenario(str, Enum):
    ARTS = "arts"
    ARNO = "arno"
    ARNS = "arns"


class BaseEnv(str, Enum):
    CARTPOLE = "cartpole"
    ACROBOT = "acrobot"
    CONSTANT = "constant"


class PolicyKind(str, Enum):
    RANDOM = "random"
    HEURISTIC = "heuristic"


@dataclass(frozen=True)
class EnvState:
    """Environment state vector plus the number of completed transitions."""

    vector: np.ndarray
    step_index: int = 0


def _require_finite(vector: np.ndarray, env_name: str):
    if not np.isfinite(vector).all():
        raise SimulationDivergedError(f"{env_name} state became non-finite: {vector}")


class CartpoleEnv:
    """Classic cart-pole balancing with the standard constants and explicit
    Euler integration; binary force direction actions (0 = left, 1 = right)."""

    GRAVITY = 9.8
    MASS_CART = 1.0
    MASS_POLE = 0.1
    TOTAL_MASS = MASS_CART + MASS_POLE
    HALF_LENGTH = 0.5
    POLEMASS_LENGTH = MASS_POLE * HALF_LENGTH
    FORCE_MAG = 10.0
    DT = 0.02
    THETA_LIMIT = 12.0 * math.pi / 180.0
    X_LIMIT = 2.4

    dim = 4
    num_actions = 2
    name = BaseEnv.CARTPOLE

    def __init__(self, horizon: int = DEFAULT_HORIZON):
        self.horizon = horizon

    def reset(self, rng: np.random.Generator) -> EnvState:
        return EnvState(vector=rng.uniform(-0.05, 0.05, size=4), step_index=0)

    def transition(self, vector: np.ndarray, action: int) -> np.ndarray:
        _require_finite(vector, "cartpole")
        x, x_dot, theta, theta_dot = vector
        force = self.FORCE_MAG if action == 1 else -self.FORCE_MAG
        cos_t = math.cos(theta)
        sin_t = math.sin(theta)
        temp = (force + self.POLEMASS_LENGTH * theta_dot**2 * sin_t) / self.TOTAL_MASS
        theta_acc = (self.GRAVITY * sin_t - cos_t * temp) / (
            self.HALF_LENGTH * (4.0 / 3.0 - self.MASS_POLE * cos_t**2 / self.TOTAL_MASS)
        )
        x_acc = temp - self.POLEMASS_LENGTH * theta_acc * cos_t / self.TOTAL_MASS
        nxt = np.array([
            x + self.DT * x_dot,
            x_dot + self.DT * x_acc,
            theta + self.DT * theta_dot,
            theta_dot + self.DT * theta_acc,
        ])
        _require_finite(nxt, "cartpole")
        return nxt

    def out_of_bounds(self, vector: np.ndarray) -> bool:
        return abs(vector[0]) > self.X_LIMIT or abs(vector[2]) > self.THETA_LIMIT

    def step(self, state: EnvState, action: int):
        nxt = self.transition(state.vector, action)
        new_index = state.step_index + 1
        terminated = self.out_of_bounds(nxt) or new_index >= self.horizon
        return EnvState(vector=nxt, step_index=new_index), 1.0, terminated


class AcrobotEnv:
    """Classic two-link acrobot with RK4 integration.

    Observations are [cos th1, sin th1, cos th2, sin th2, w1, w2]; actions
    {0, 1, 2} apply torque {-1, 0, +1} at the second joint. Reward is -1 per
    step until the free end reaches the target height.
    """

    DT = 0.2
    LINK_MASS = 1.0
    LINK_LENGTH = 1.0
    LINK_COM = 0.5
    LINK_INERTIA = 1.0
    GRAVITY = 9.8
    MAX_VEL_1 = 4.0 * math.pi
    MAX_VEL_2 = 9.0 * math.pi
    TORQUES = (-1.0, 0.0, 1.0)

    dim = 6
    num_actions = 3
    name = BaseEnv.ACROBOT

    def __init__(self, horizon: int = DEFAULT_HORIZON):
        self.horizon = horizon

    def reset(self, rng: np.random.Generator) -> EnvState:
        angles = rng.uniform(-0.1, 0.1, size=4)
        return EnvState(vector=self._embed(angles), step_index=0)

    @staticmethod
    def _embed(angles: np.ndarray) -> np.ndarray:
        th1, th2, w1, w2 = angles
        return np.array([math.cos(th1), math.sin(th1), math.cos(th2), math.sin(th2), w1, w2])

    @staticmethod
    def _angles(vector: np.ndarray) -> np.ndarray:
        return np.array([
            math.atan2(vector[1], vector[0]),
            math.atan2(vector[3], vector[2]),
            vector[4],
            vector[5],
        ])

    def _derivs(self, y: np.ndarray, torque: float) -> np.ndarray:
        m, l1, lc, inertia, g = (
            self.LINK_MASS, self.LINK_LENGTH, self.LINK_COM, self.LINK_INERTIA, self.GRAVITY,
        )
        th1, th2, w1, w2 = y
        d1 = m * lc**2 + m * (l1**2 + lc**2 + 2 * l1 * lc * math.cos(th2)) + 2 * inertia
        d2 = m * (lc**2 + l1 * lc * math.cos(th2)) + inertia
        phi2 = m * lc * g * math.cos(th1 + th2 - math.pi / 2.0)
        phi1 = (
            -m * l1 * lc * w2**2 * math.sin(th2)
            - 2 * m * l1 * lc * w2 * w1 * math.sin(th2)
            + (m * lc + m * l1) * g * math.cos(th1 - math.pi / 2.0)
            + phi2
        )
        a2 = (torque + d2 / d1 * phi1 - m * l1 * lc * w1**2 * math.sin(th2) - phi2) / (
            m * lc**2 + inertia - d2**2 / d1
        )
        a1 = -(d2 * a2 + phi1) / d1
        return np.array([w1, w2, a1, a2])

    def _rk4(self, y: np.ndarray, torque: float) -> np.ndarray:
        dt = self.DT
        k1 = self._derivs(y, torque)
        k2 = self._derivs(y + dt / 2.0 * k1, torque)
        k3 = self._derivs(y + dt / 2.0 * k2, torque)
        k4 = self._derivs(y + dt * k3, torque)
        return y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    def transition(self, vector: np.ndarray, action: int) -> np.ndarray:
        _require_finite(vector, "acrobot")
        y = self._rk4(self._angles(vector), self.TORQUES[action])
        th1 = math.atan2(math.sin(y[0]), math.cos(y[0]))
        th2 = math.atan2(math.sin(y[1]), math.cos(y[1]))
        w1 = min(max(y[2], -self.MAX_VEL_1), self.MAX_VEL_1)
        w2 = min(max(y[3], -self.MAX_VEL_2), self.MAX_VEL_2)
        nxt = self._embed(np.array([th1, th2, w1, w2]))
        _require_finite(nxt, "acrobot")
        return nxt

    def at_goal(self, vector: np.ndarray) -> bool:
        th1, th2 = self._angles(vector)[:2]
        return -math.cos(th1) - math.cos(th1 + th2) > 1.0

    def step(self, state: EnvState, action: int):
        nxt = self.transition(state.vector, action)
        new_index = state.step_index + 1
        goal = self.at_goal(nxt)
        terminated = goal or new_index >= self.horizon
        reward = 0.0 if goal else -1.0
        return EnvState(vector=nxt, step_index=new_index), reward, terminated


class ConstantEnv:
    """1-D environment whose state never changes; the ARTS base."""

    dim = 1
    num_actions = 1
    name = BaseEnv.CONSTANT

    def __init__(self, horizon: int = DEFAULT_HORIZON):
        self.horizon = horizon

    def reset(self, rng: np.random.Generator) -> EnvState:
        return EnvState(vector=np.zeros(1), step_index=0)

    def transition(self, vector: np.ndarray, action: int) -> np.ndarray:
        return vector.copy()

    def step(self, state: EnvState, action: int):
        new_index = state.step_index + 1
        return (
            EnvState(vector=state.vector.copy(), step_index=new_index),
            0.0,
            new_index >= self.horizon,
        )


_ENV_CLASSES = {
    BaseEnv.CARTPOLE: CartpoleEnv,
    BaseEnv.ACROBOT: AcrobotEnv,
    BaseEnv.CONSTANT: ConstantEnv,
}


def make_env(base_env: BaseEnv, horizon: int = DEFAULT_HORIZON):
    return _ENV_CLASSES[BaseEnv(base_env)](horizon=horizon)


def arts_step(t: int, noise: NoiseMatrix) -> float:
    """ARTS observation at step t: a direct lookup into the 1-row noise
    matrix; the underlying state is constant and actions are ignored."""
    if noise.num_dimensions != 1:
        raise ConfigError("ARTS noise matrix must have exactly 1 row")
    if not 0 <= t < noise.max_steps:
        raise IndexError(f"step {t} outside noise horizon {noise.max_steps}")
    return float(noise.values[0, t])


def _noise_column(noise: NoiseMatrix, per_dim_scale: np.ndarray, t: int, dim: int) -> np.ndarray:
    if noise.num_dimensions != dim:
        raise ConfigError(
            f"noise matrix has {noise.num_dimensions} rows, environment needs {dim}"
        )
    return noise.values[:, t] * per_dim_scale


def arno_step(env, state: EnvState, action: int, noise: NoiseMatrix, per_dim_scale, t: int):
    """Sensory-anomaly step: the environment transitions on the true state;
    only the returned observation carries the scaled noise column t+1."""
    next_state, reward, terminated = env.step(state, action)
    column = _noise_column(noise, np.asarray(per_dim_scale, dtype=float), t + 1, env.dim)
    observation = next_state.vector + column
    return next_state, observation, reward, terminated


def arns_step(env, state: EnvState, action: int, noise: NoiseMatrix, per_dim_scale, t: int):
    """Semantic-anomaly step: the transition function is evaluated on the
    perturbed state; the returned state is the true next state."""
    column = _noise_column(noise, np.asarray(per_dim_scale, dtype=float), t + 1, env.dim)
    perturbed = EnvState(vector=state.vector + column, step_index=state.step_index)
    _require_finite(perturbed.vector, "arns-perturbed")
    return env.step(perturbed, action)


@dataclass(frozen=True)
class ScenarioConfig:
    """Full description of one benchmark scenario."""

    scenario: Scenario
    base_env: BaseEnv
    noise_pre: ARProcessSpec
    noise_post: ARProcessSpec
    injection_window: tuple = (6, DEFAULT_HORIZON - 7)
    horizon: int = DEFAULT_HORIZON
    per_dimension_scale: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        object.__setattr__(self, "base_env", BaseEnv(self.base_env))
        object.__setattr__(self, "injection_window", tuple(int(v) for v in self.injection_window))
        if self.per_dimension_scale is not None:
            object.__setattr__(
                self, "per_dimension_scale", tuple(float(v) for v in self.per_dimension_scale)
            )
        if self.horizon < 20:
            raise ConfigError("horizon must be at least 20")
        low, high = self.injection_window
        if not (5 < low <= high < self.horizon - 6 + 1):
            raise ConfigError(
                "injection_window must lie strictly inside (t0+5, t_H-5): "
                f"require 5 < low <= high <= {self.horizon - 7}, got ({low}, {high})"
            )
        if self.scenario is Scenario.ARTS and self.base_env is not BaseEnv.CONSTANT:
            raise ConfigError("ARTS requires base_env 'constant'")
        if self.scenario is Scenario.ARNO and self.base_env is BaseEnv.CONSTANT:
            raise ConfigError("ARNO requires a dynamical base_env (cartpole or acrobot)")
        if self.scenario is Scenario.ARNS and self.base_env is not BaseEnv.CARTPOLE:
            # Acrobot is excluded: state noise perversely helps the agent there.
            raise ConfigError("ARNS supports base_env 'cartpole' only")

    @property
    def num_dimensions(self) -> int:
        return _ENV_CLASSES[self.base_env].dim

    def scales(self) -> np.ndarray:
        if self.per_dimension_scale is None:
            return np.ones(self.num_dimensions)
        arr = np.asarray(self.per_dimension_scale, dtype=float)
        if arr.shape != (self.num_dimensions,):
            raise ConfigError(
                f"per_dimension_scale must have {self.num_dimensions} entries, got {arr.shape}"
            )
        return arr

    def to_json_dict(self) -> dict:
        return {
            "scenario": self.scenario.value,
            "base_env": self.base_env.value,
            "noise_pre": self.noise_pre.to_json_dict(),
            "noise_post": self.noise_post.to_json_dict(),
            "injection_window": list(self.injection_window),
            "horizon": int(self.horizon),
            "per_dimension_scale": (
                None if self.per_dimension_scale is None else list(self.per_dimension_scale)
            ),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ScenarioConfig":
        return cls(
            scenario=Scenario(d["scenario"]),
            base_env=BaseEnv(d["base_env"]),
            noise_pre=ARProcessSpec.from_json_dict(d["noise_pre"]),
            noise_post=ARProcessSpec.from_json_dict(d["noise_post"]),
            injection_window=tuple(d["injection_window"]),
            horizon=int(d["horizon"]),
            per_dimension_scale=(
                None if d.get("per_dimension_scale") is None else tuple(d["per_dimension_scale"])
            ),
        )


@dataclass
class Episode:
    """One recorded trajectory.

    ``labels[i]`` refers to the transition from observation i to observation
    i+1 and is True exactly when the destination index i+1 has reached the
    injection time.
    """

    observations: np.ndarray
    actions: np.ndarray
    injection_time: int | None
    labels: np.ndarray
    reward_sum: float
    seed: int
    scenario: str
    usable: bool = True
    hidden_states: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def length(self) -> int:
        return self.observations.shape[0]

    @property
    def num_dimensions(self) -> int:
        return self.observations.shape[1]

    def to_json_dict(self) -> dict:
        return {
            "seed": int(self.seed),
            "scenario": self.scenario,
            "injection_time": None if self.injection_time is None else int(self.injection_time),
            "observations": [[float(v) for v in row] for row in self.observations],
            "actions": [int(a) for a in self.actions],
            "labels": [bool(b) for b in self.labels],
            "reward_sum": float(self.reward_sum),
            "usable": bool(self.usable),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "Episode":
        return cls(
            observations=np.asarray(d["observations"], dtype=float),
            actions=np.asarray(d["actions"], dtype=int),
            injection_time=d["injection_time"],
            labels=np.asarray(d["labels"], dtype=bool),
            reward_sum=float(d["reward_sum"]),
            seed=int(d["seed"]),
            scenario=d["scenario"],
            usable=bool(d.get("usable", True)),
        )


def random_policy(num_actions: int):
    def policy(observation, rng):
        return int(rng.integers(num_actions))

    return policy


def cartpole_heuristic_policy():
    """PD rule on pole angle and angular velocity: push toward the side the
    pole leans."""

    def policy(observation, rng):
        theta, theta_dot = observation[2], observation[3]
        return 1 if theta + 0.5 * theta_dot > 0.0 else 0

    return policy


def acrobot_heuristic_policy():
    """Bang-bang torque aligned with the second link's angular velocity sign
    (monotone energy pumping at the actuated joint)."""

    def policy(observation, rng):
        w2 = observation[5]
        if w2 > 0.0:
            return 2
        if w2 < 0.0:
            return 0
        return 1

    return policy


def builtin_policy(base_env: BaseEnv, kind: PolicyKind):
    base_env = BaseEnv(base_env)
    kind = PolicyKind(kind)
    if kind is PolicyKind.RANDOM or base_env is BaseEnv.CONSTANT:
        return random_policy(_ENV_CLASSES[base_env].num_actions)
    if base_env is BaseEnv.CARTPOLE:
        return cartpole_heuristic_policy()
    return acrobot_heuristic_policy()


def _simulate(config: ScenarioConfig, policy, noise: NoiseMatrix, env_rng, policy_rng,
              record_hidden: bool):
    env = make_env(config.base_env, config.horizon)
    scales = config.scales()
    state = env.reset(env_rng)

    if config.scenario is Scenario.ARTS:
        first_obs = np.array([arts_step(0, noise)])
    elif config.scenario is Scenario.ARNO:
        first_obs = state.vector + _noise_column(noise, scales, 0, env.dim)
    else:
        first_obs = state.vector.copy()

    observations = [first_obs]
    hidden = [state.vector.copy()] if record_hidden else None
    actions = []
    reward_sum = 0.0
    terminated = False
    t = 0
    while len(observations) < config.horizon and not terminated:
        action = policy(observations[-1], policy_rng)
        if config.scenario is Scenario.ARTS:
            state, reward, terminated = env.step(state, action)
            obs = np.array([arts_step(t + 1, noise)])
        elif config.scenario is Scenario.ARNO:
            state, obs, reward, terminated = arno_step(env, state, action, noise, scales, t)
        else:
            state, reward, terminated = arns_step(env, state, action, noise, scales, t)
            obs = state.vector.copy()
        observations.append(obs)
        actions.append(action)
        reward_sum += reward
        if record_hidden:
            hidden.append(state.vector.copy())
        t += 1

    return (
        np.asarray(observations),
        np.asarray(actions, dtype=int),
        reward_sum,
        None if hidden is None else np.asarray(hidden),
    )


def run_episode(config: ScenarioConfig, policy, seed: int, inject: bool = True,
                record_hidden: bool = False) -> Episode:
    """Roll out one episode, deterministic in (config, policy, seed).

    Injected episodes draw t_a uniformly from the injection window and use
    noise spliced from the pre to the post correlation structure at t_a.
    Episodes that terminate before producing any anomalous transition are
    re-rolled with a fresh sub-seed up to a retry cap, then returned with
    ``usable=False``.
    """
    low, high = config.injection_window
    last = None
    for attempt in range(EPISODE_RETRY_CAP + 1):
        attempt_seed = child_seed(seed, "attempt", attempt)
        noise_seed = child_seed(attempt_seed, "noise")
        if inject:
            t_a = int(rng_from(attempt_seed, "t_a").integers(low, high + 1))
            noise = spliced_matrix(
                config.noise_pre, config.noise_post, t_a,
                config.num_dimensions, config.horizon, noise_seed,
            )
        else:
            t_a = None
            noise = generate_matrix(
                config.noise_pre, config.num_dimensions, config.horizon, noise_seed
            )

        observations, actions, reward_sum, hidden = _simulate(
            config, policy, noise,
            rng_from(attempt_seed, "env"), rng_from(attempt_seed, "policy"),
            record_hidden,
        )
        length = observations.shape[0]
        if inject:
            labels = np.arange(1, length) >= t_a
        else:
            labels = np.zeros(max(length - 1, 0), dtype=bool)

        episode = Episode(
            observations=observations,
            actions=actions,
            injection_time=t_a,
            labels=labels,
            reward_sum=reward_sum,
            seed=int(seed),
            scenario=config.scenario.value,
            usable=True,
            hidden_states=hidden,
        )
        if not inject or length >= t_a + 1:
            return episode
        last = episode
    last.usable = False
    return last


def estimate_dimension_scales(base_env: BaseEnv, policy, num_episodes: int = 50,
                              horizon: int = DEFAULT_HORIZON, seed: int = 0) -> np.ndarray:
    """Per-dimension observation std over clean, noise-free rollouts; the
    normalization factors for noise magnitudes."""
    env = make_env(base_env, horizon)
    pooled = []
    for i in range(num_episodes):
        env_rng = rng_from(seed, "scale_env", i)
        policy_rng = rng_from(seed, "scale_policy", i)
        state = env.reset(env_rng)
        vectors = [state.vector.copy()]
        terminated = False
        while len(vectors) < horizon and not terminated:
            action = policy(vectors[-1], policy_rng)
            state, _, terminated = env.step(state, action)
            vectors.append(state.vector.copy())
        pooled.append(np.asarray(vectors))
    stds = np.concatenate(pooled, axis=0).std(axis=0)
    return np.maximum(stds, 1e-8)
