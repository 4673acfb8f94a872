"""Temporally correlated noise from an AR(p) model.

Generates series following

    Y_t = mu + phi_1 Y_{t-1} + ... + phi_p Y_{t-p} + eps_t

with standard-Gaussian innovations scaled by ``innovation_sigma``. Three
correlation structures are supported:

* ``no_correlation`` -- white noise, Y_t = mu + eps_t
* ``one_step``       -- Y_t = mu + phi_1 Y_{t-1} + eps_t
* ``two_step``       -- Y_t = mu + phi_2 Y_{t-2} + eps_t

The first ``max(50, 10 p)`` samples of every series are burned in so the
output is a draw from the stationary distribution. Series are deterministic
functions of (spec, length, seed).
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import SpliceError, StationarityError
from .seeding import child_seed


class CorrelationMode(str, Enum):
    NO_CORRELATION = "no_correlation"
    ONE_STEP = "one_step"
    TWO_STEP = "two_step"


@dataclass(frozen=True)
class ARProcessSpec:
    """Parameters of the AR(p) disturbance process.

    ``magnitude_scale`` multiplies the generated series after the recursion;
    it is the knob used to express noise levels as a fraction of each state
    dimension's clean standard deviation.
    """

    correlation_mode: CorrelationMode
    coefficients_phi: tuple = ()
    mean_mu: float = 0.0
    innovation_sigma: float = 1.0
    magnitude_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "correlation_mode", CorrelationMode(self.correlation_mode))
        object.__setattr__(self, "coefficients_phi", tuple(float(c) for c in self.coefficients_phi))
        mode, phi = self.correlation_mode, self.coefficients_phi
        if mode is CorrelationMode.NO_CORRELATION and len(phi) != 0:
            raise StationarityError("no_correlation mode requires order p = 0")
        if mode is CorrelationMode.ONE_STEP and len(phi) != 1:
            raise StationarityError("one_step mode requires exactly one coefficient [phi1]")
        if mode is CorrelationMode.TWO_STEP and (len(phi) != 2 or phi[0] != 0.0):
            raise StationarityError("two_step mode requires coefficients [0, phi2]")
        if any(abs(c) >= 1.0 for c in phi):
            raise StationarityError(f"non-stationary coefficients {phi}: every |phi| must be < 1")
        if not self.innovation_sigma > 0:
            raise StationarityError("innovation_sigma must be positive")
        if not self.magnitude_scale > 0:
            raise StationarityError("magnitude_scale must be positive")

    @property
    def order_p(self) -> int:
        return len(self.coefficients_phi)

    @classmethod
    def no_correlation(cls, sigma=1.0, mu=0.0, scale=1.0):
        return cls(CorrelationMode.NO_CORRELATION, (), mu, sigma, scale)

    @classmethod
    def one_step(cls, phi1, sigma=1.0, mu=0.0, scale=1.0):
        return cls(CorrelationMode.ONE_STEP, (phi1,), mu, sigma, scale)

    @classmethod
    def two_step(cls, phi2, sigma=1.0, mu=0.0, scale=1.0):
        return cls(CorrelationMode.TWO_STEP, (0.0, phi2), mu, sigma, scale)

    def to_json_dict(self) -> dict:
        return {
            "correlation_mode": self.correlation_mode.value,
            "coefficients_phi": list(self.coefficients_phi),
            "mean_mu": self.mean_mu,
            "innovation_sigma": self.innovation_sigma,
            "magnitude_scale": self.magnitude_scale,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ARProcessSpec":
        return cls(
            correlation_mode=CorrelationMode(d["correlation_mode"]),
            coefficients_phi=tuple(d["coefficients_phi"]),
            mean_mu=float(d["mean_mu"]),
            innovation_sigma=float(d["innovation_sigma"]),
            magnitude_scale=float(d["magnitude_scale"]),
        )


def stationary_std(spec: ARProcessSpec) -> float:
    """Stationary standard deviation of the unscaled process.

    ``two_step`` decouples into two independent AR(1) subseries, so both
    restricted modes reduce to sigma / sqrt(1 - phi^2).
    """
    if spec.correlation_mode is CorrelationMode.NO_CORRELATION:
        return spec.innovation_sigma
    phi = spec.coefficients_phi[-1]
    return spec.innovation_sigma / np.sqrt(1.0 - phi * phi)


def burn_in_length(order_p: int) -> int:
    return max(50, 10 * order_p)


def _recurse(out, phi, mu, innovations, start):
    """In-place AR recursion out[t] = mu + sum phi_i out[t-i] + innovations[t]
    for t >= start; indices before the series start count as zero lags."""
    p = len(phi)
    if p == 0:
        out[start:] = mu + innovations[start:]
        return
    for t in range(start, len(out)):
        acc = mu + innovations[t]
        for i in range(1, p + 1):
            if phi[i - 1] != 0.0 and t - i >= 0:
                acc += phi[i - 1] * out[t - i]
        out[t] = acc


def generate_series(spec: ARProcessSpec, length: int, seed: int) -> np.ndarray:
    """Draw ``length`` samples of the stationary AR process.

    Returns the burned-in series multiplied by ``spec.magnitude_scale``.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    burn = burn_in_length(spec.order_p)
    total = burn + length
    rng = np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)
    eps = rng.normal(0.0, 1.0, total) * spec.innovation_sigma
    y = np.zeros(total)
    _recurse(y, spec.coefficients_phi, spec.mean_mu, eps, 0)
    return y[burn:] * spec.magnitude_scale


def spliced_series(
    pre_spec: ARProcessSpec,
    post_spec: ARProcessSpec,
    injection_step: int,
    length: int,
    seed: int,
) -> np.ndarray:
    """Series whose correlation structure changes at ``injection_step``.

    Steps ``t < injection_step`` follow ``pre_spec``; steps
    ``t >= injection_step`` follow ``post_spec``'s correlation structure,
    seeded from the last realized pre-injection values. The post segment's
    innovations are rescaled so its stationary standard deviation equals the
    pre segment's: only the correlation changes at the injection, never the
    noise level. With ``pre_spec == post_spec`` the splice degenerates to an
    ordinary draw of the process.
    """
    if not 0 < injection_step < length:
        raise SpliceError(f"injection_step must lie in (0, {length}), got {injection_step}")
    if pre_spec.innovation_sigma != post_spec.innovation_sigma:
        raise SpliceError("pre and post specs must share innovation_sigma")
    if pre_spec.magnitude_scale != post_spec.magnitude_scale:
        raise SpliceError("noise magnitude must not change at the injection")
    if pre_spec.mean_mu != post_spec.mean_mu:
        raise SpliceError("process mean must not change at the injection")

    burn = burn_in_length(pre_spec.order_p)
    total = burn + length
    rng = np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)
    eps = rng.normal(0.0, 1.0, total)

    y = np.zeros(total)
    _recurse(y, pre_spec.coefficients_phi, pre_spec.mean_mu, eps * pre_spec.innovation_sigma, 0)

    # Variance-matched continuation: innovations scaled so the post process's
    # stationary std equals the pre process's.
    target_std = stationary_std(pre_spec)
    post_phi = post_spec.coefficients_phi
    phi_last = post_phi[-1] if post_phi else 0.0
    post_inn_sigma = target_std * np.sqrt(1.0 - phi_last * phi_last)
    _recurse(y, post_phi, post_spec.mean_mu, eps * post_inn_sigma, burn + injection_step)

    return y[burn:] * pre_spec.magnitude_scale


@dataclass(frozen=True)
class NoiseMatrix:
    """Per-dimension noise series for one episode: row d is an independent
    draw of the process, shape (num_dimensions, max_steps)."""

    values: np.ndarray
    spec: ARProcessSpec
    seed: int
    injection_step: int | None = None
    post_spec: ARProcessSpec | None = field(default=None, repr=False)

    @property
    def num_dimensions(self) -> int:
        return self.values.shape[0]

    @property
    def max_steps(self) -> int:
        return self.values.shape[1]

    def to_json_dict(self) -> dict:
        d = {
            "spec": self.spec.to_json_dict(),
            "seed": int(self.seed),
            "values": [[float(v) for v in row] for row in self.values],
        }
        if self.injection_step is not None:
            d["injection_step"] = int(self.injection_step)
            d["post_spec"] = self.post_spec.to_json_dict()
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "NoiseMatrix":
        return cls(
            values=np.asarray(d["values"], dtype=float),
            spec=ARProcessSpec.from_json_dict(d["spec"]),
            seed=int(d["seed"]),
            injection_step=d.get("injection_step"),
            post_spec=ARProcessSpec.from_json_dict(d["post_spec"]) if "post_spec" in d else None,
        )


def _row_seed(seed: int, row: int) -> int:
    return child_seed(seed, "noise_row", row)


def generate_matrix(spec: ARProcessSpec, num_dimensions: int, max_steps: int, seed: int) -> NoiseMatrix:
    """Matrix whose rows are independent draws of the process.

    Row i uses the sub-seed ``child_seed(seed, "noise_row", i)``, so changing
    ``num_dimensions`` never perturbs earlier rows.
    """
    if num_dimensions < 1 or max_steps < 1:
        raise ValueError("num_dimensions and max_steps must be >= 1")
    rows = [generate_series(spec, max_steps, _row_seed(seed, d)) for d in range(num_dimensions)]
    return NoiseMatrix(values=np.stack(rows), spec=spec, seed=int(seed))


def spliced_matrix(
    pre_spec: ARProcessSpec,
    post_spec: ARProcessSpec,
    injection_step: int,
    num_dimensions: int,
    max_steps: int,
    seed: int,
) -> NoiseMatrix:
    """Matrix of independent spliced series sharing one injection step.

    Uses the same per-row sub-seeds as :func:`generate_matrix`, so the
    pre-injection prefix of each row is bit-identical to the clean matrix
    drawn from the same seed.
    """
    if num_dimensions < 1 or max_steps < 1:
        raise ValueError("num_dimensions and max_steps must be >= 1")
    rows = [
        spliced_series(pre_spec, post_spec, injection_step, max_steps, _row_seed(seed, d))
        for d in range(num_dimensions)
    ]
    return NoiseMatrix(
        values=np.stack(rows),
        spec=pre_spec,
        seed=int(seed),
        injection_step=int(injection_step),
        post_spec=post_spec,
    )
