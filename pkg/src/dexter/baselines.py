"""Simplified comparison detectors.

Two stand-ins accompany the main detector:

* PEDM-lite -- an ensemble of probabilistic one-step dynamics regressors
  (per-dimension linear models on a degree-2 polynomial basis of state and
  action, residual variance per dimension), scoring each transition by the
  mean negative Gaussian log-density of the observed next state. Its CUSUM
  variant (PEDM-C-lite) reuses the exact calibration and online recursion of
  the main detector.
* Mean-shift CUSUM -- a per-coordinate two-sided CUSUM with allowance
  kappa = 0.5 on standardized observations, the classic test for changes in
  the mean of a multivariate stream. Its per-transition anomaly score is the
  largest standardized deviation across coordinates; the online alert uses
  the accumulated statistic.
"""

from dataclasses import dataclass

import numpy as np

from .cusum import CusumDetector, calibrate_from_streams, first_alert_step, percentile_threshold, split_halves
from .errors import ConfigError, DataError, IncompatibleModelError
from .seeding import rng_from

DEFAULT_ENSEMBLE_SIZE = 5
DEFAULT_KAPPA = 0.5
_VAR_FLOOR = 1e-12
_LOG_2PI = float(np.log(2.0 * np.pi))


def _poly_basis(z: np.ndarray) -> np.ndarray:
    """[1, z_i, z_i z_j (i <= j)] for standardized inputs z of shape (n, k)."""
    n, k = z.shape
    cols = [np.ones(n)]
    cols.extend(z[:, i] for i in range(k))
    for i in range(k):
        for j in range(i, k):
            cols.append(z[:, i] * z[:, j])
    return np.column_stack(cols)


@dataclass
class DynamicsModelEnsemble:
    """Bootstrap ensemble of probabilistic one-step regressors."""

    coefficients: np.ndarray   # (members, basis, state_dim)
    variances: np.ndarray      # (members, state_dim), strictly positive
    input_mean: np.ndarray     # (state_dim + 1,), action appended as a scalar
    input_std: np.ndarray
    state_dim: int

    @property
    def ensemble_size(self) -> int:
        return self.coefficients.shape[0]

    def to_json_dict(self) -> dict:
        return {
            "coefficients": self.coefficients.tolist(),
            "variances": self.variances.tolist(),
            "input_mean": self.input_mean.tolist(),
            "input_std": self.input_std.tolist(),
            "state_dim": int(self.state_dim),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "DynamicsModelEnsemble":
        return cls(
            coefficients=np.asarray(d["coefficients"], dtype=float),
            variances=np.asarray(d["variances"], dtype=float),
            input_mean=np.asarray(d["input_mean"], dtype=float),
            input_std=np.asarray(d["input_std"], dtype=float),
            state_dim=int(d["state_dim"]),
        )


def _standardize_inputs(states: np.ndarray, actions: np.ndarray, mean, std) -> np.ndarray:
    raw = np.column_stack([states, actions.astype(float)])
    return (raw - mean) / std


def fit_dynamics(states, actions, next_states, ensemble_size: int = DEFAULT_ENSEMBLE_SIZE,
                 seed: int = 0) -> DynamicsModelEnsemble:
    """Fit the ensemble on (s, a, s') transition triples.

    Each member trains on its own bootstrap resample; inputs are standardized
    by the stored normalization. Constant input columns (e.g. the action in a
    single-action environment) are centered and left with unit scale rather
    than rejected, so degenerate-but-valid inputs stay usable.
    """
    states = np.asarray(states, dtype=float)
    actions = np.asarray(actions)
    next_states = np.asarray(next_states, dtype=float)
    n = states.shape[0]
    if n < 100:
        raise DataError(f"need at least 100 transitions, got {n}")
    if ensemble_size < 2:
        raise ConfigError("ensemble_size must be >= 2")
    if not (np.isfinite(states).all() and np.isfinite(next_states).all()):
        raise DataError("transitions contain non-finite values")

    raw = np.column_stack([states, actions.astype(float)])
    mean = raw.mean(axis=0)
    std = raw.std(axis=0)
    if (std < 1e-12).all():
        raise DataError("all input columns have zero variance; nothing to fit")
    std = np.where(std < 1e-12, 1.0, std)

    z = (raw - mean) / std
    basis = _poly_basis(z)
    coefs, variances = [], []
    for member in range(ensemble_size):
        rng = rng_from(seed, "member", member)
        rows = rng.choice(n, size=n, replace=True)
        phi, y = basis[rows], next_states[rows]
        coef, *_ = np.linalg.lstsq(phi, y, rcond=None)
        resid = y - phi @ coef
        variances.append(np.maximum(resid.var(axis=0), _VAR_FLOOR))
        coefs.append(coef)
    return DynamicsModelEnsemble(
        coefficients=np.stack(coefs),
        variances=np.stack(variances),
        input_mean=mean,
        input_std=std,
        state_dim=states.shape[1],
    )


def predict(ensemble: DynamicsModelEnsemble, states, actions):
    """Per-member predictive means for a batch: shape (members, n, state_dim)."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    actions = np.atleast_1d(np.asarray(actions))
    if states.shape[1] != ensemble.state_dim:
        raise IncompatibleModelError(
            f"state dimension {states.shape[1]} != model dimension {ensemble.state_dim}"
        )
    basis = _poly_basis(_standardize_inputs(states, actions, ensemble.input_mean, ensemble.input_std))
    return np.einsum("nb,ebd->end", basis, ensemble.coefficients)


def pedm_score_batch(ensemble: DynamicsModelEnsemble, states, actions, next_states) -> np.ndarray:
    """Mean over members of the negative Gaussian log-density of each
    observed next state; higher is more anomalous."""
    next_states = np.atleast_2d(np.asarray(next_states, dtype=float))
    means = predict(ensemble, states, actions)
    var = ensemble.variances[:, None, :]
    nll = 0.5 * (_LOG_2PI + np.log(var) + (next_states[None] - means) ** 2 / var).sum(axis=2)
    return nll.mean(axis=0)


def pedm_score(ensemble: DynamicsModelEnsemble, state, action, next_state) -> float:
    return float(pedm_score_batch(
        ensemble,
        np.asarray(state, dtype=float)[None, :],
        np.asarray([action]),
        np.asarray(next_state, dtype=float)[None, :],
    )[0])


def episode_transitions(episode):
    obs = np.asarray(episode.observations, dtype=float)
    actions = np.asarray(episode.actions)
    return obs[:-1], actions, obs[1:]


def pedm_episode_scores(ensemble: DynamicsModelEnsemble, episode) -> np.ndarray:
    """Per-transition scores for one episode (no window warm-up)."""
    s, a, s_next = episode_transitions(episode)
    if len(a) == 0:
        return np.empty(0)
    return pedm_score_batch(ensemble, s, a, s_next)


def fit_dynamics_from_episodes(episodes, ensemble_size: int = DEFAULT_ENSEMBLE_SIZE,
                               seed: int = 0) -> DynamicsModelEnsemble:
    parts = [episode_transitions(ep) for ep in episodes]
    return fit_dynamics(
        np.concatenate([p[0] for p in parts]),
        np.concatenate([p[1] for p in parts]),
        np.concatenate([p[2] for p in parts]),
        ensemble_size=ensemble_size,
        seed=seed,
    )


def pedm_cusum(ensemble: DynamicsModelEnsemble, calibration_episodes, target_fpr: float,
               seed: int = 0) -> CusumDetector:
    """Calibrate the shared CUSUM rule on PEDM transition scores."""
    streams = [pedm_episode_scores(ensemble, ep) for ep in calibration_episodes]
    return calibrate_from_streams(streams, target_fpr, seed=seed)


def pedm_detect_online(detector: CusumDetector, ensemble: DynamicsModelEnsemble, episode):
    """Alert step (destination observation index) or None."""
    scores = pedm_episode_scores(ensemble, episode)
    step = first_alert_step(detector, scores)
    return None if step is None else step + 1


class MeanShiftCusum:
    """Per-coordinate two-sided CUSUM for mean shifts in a standardized
    multivariate stream. One instance per monitored episode."""

    def __init__(self, reference_mean, reference_std, threshold: float | None,
                 kappa: float = DEFAULT_KAPPA):
        self.reference_mean = np.asarray(reference_mean, dtype=float)
        self.reference_std = np.asarray(reference_std, dtype=float)
        self.threshold = threshold
        self.kappa = float(kappa)
        dim = self.reference_mean.shape[0]
        self.upper = np.zeros(dim)
        self.lower = np.zeros(dim)

    def statistic(self) -> float:
        return float(np.maximum(self.upper, self.lower).max())

    def step(self, observation) -> bool:
        """Consume one observation; returns the alert flag."""
        if self.threshold is None:
            raise ConfigError("mean-shift CUSUM is not calibrated (no threshold)")
        z = (np.asarray(observation, dtype=float) - self.reference_mean) / self.reference_std
        self.upper = np.maximum(0.0, self.upper + z - self.kappa)
        self.lower = np.maximum(0.0, self.lower - z - self.kappa)
        return self.statistic() > self.threshold


@dataclass
class MeanShiftDetector:
    """Calibrated reference statistics plus alert threshold."""

    reference_mean: np.ndarray
    reference_std: np.ndarray
    threshold: float
    kappa: float = DEFAULT_KAPPA
    target_fpr: float = 0.01

    def to_json_dict(self) -> dict:
        return {
            "reference_mean": self.reference_mean.tolist(),
            "reference_std": self.reference_std.tolist(),
            "threshold": float(self.threshold),
            "kappa": float(self.kappa),
            "target_fpr": float(self.target_fpr),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "MeanShiftDetector":
        return cls(
            reference_mean=np.asarray(d["reference_mean"], dtype=float),
            reference_std=np.asarray(d["reference_std"], dtype=float),
            threshold=float(d["threshold"]),
            kappa=float(d["kappa"]),
            target_fpr=float(d["target_fpr"]),
        )

    def monitor(self) -> MeanShiftCusum:
        return MeanShiftCusum(self.reference_mean, self.reference_std, self.threshold, self.kappa)


def meanshift_statistic_trace(detector: MeanShiftDetector, observations) -> np.ndarray:
    """Accumulated statistic after consuming each observation j >= 1; entry i
    corresponds to the transition into observation i+1."""
    obs = np.asarray(observations, dtype=float)
    monitor = detector.monitor()
    trace = np.empty(obs.shape[0] - 1)
    for j in range(1, obs.shape[0]):
        monitor.step(obs[j])
        trace[j - 1] = monitor.statistic()
    return trace


def meanshift_episode_scores(detector: MeanShiftDetector, episode) -> np.ndarray:
    """Per-transition anomaly score: the largest standardized deviation of
    the destination observation across coordinates."""
    obs = np.asarray(episode.observations, dtype=float)
    z = (obs[1:] - detector.reference_mean) / detector.reference_std
    return np.abs(z).max(axis=1)


def fit_meanshift(calibration_episodes, target_fpr: float, kappa: float = DEFAULT_KAPPA,
                  seed: int = 0) -> MeanShiftDetector:
    """Reference statistics from the first half of the clean episodes; alert
    threshold from the (1 - FPR) percentile of per-episode maxima of the
    accumulated statistic on the second half."""
    episodes = list(calibration_episodes)
    if len(episodes) < 2:
        raise ConfigError("calibration requires at least 2 episodes")
    if not 0.0 < target_fpr < 1.0:
        raise ConfigError(f"target_fpr must be in (0, 1), got {target_fpr}")
    first, second = split_halves(len(episodes), seed)
    pooled = np.concatenate([np.asarray(episodes[i].observations, dtype=float) for i in first])
    ref_mean = pooled.mean(axis=0)
    ref_std = np.maximum(pooled.std(axis=0), 1e-12)

    probe = MeanShiftDetector(ref_mean, ref_std, threshold=np.inf, kappa=kappa, target_fpr=target_fpr)
    maxima = [
        meanshift_statistic_trace(probe, episodes[i].observations).max()
        if len(episodes[i].observations) > 1 else 0.0
        for i in second
    ]
    threshold = percentile_threshold(maxima, target_fpr)
    return MeanShiftDetector(ref_mean, ref_std, threshold, kappa=kappa, target_fpr=target_fpr)


def meanshift_detect_online(detector: MeanShiftDetector, episode):
    """Alert step (destination observation index) or None."""
    obs = np.asarray(episode.observations, dtype=float)
    monitor = detector.monitor()
    for j in range(1, obs.shape[0]):
        if monitor.step(obs[j]):
            return j
    return None
