"""Differential-privacy mechanisms.

Each mechanism takes an explicit ``numpy.random.Generator`` and returns the
randomised output together with the ``DpCost`` of that single invocation. The
cost is fixed by the mechanism's parameters alone, so nothing done to the
output afterwards can alter what was charged.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence, TypeVar

import numpy as np

T = TypeVar("T")

RANDOMIZED_RESPONSE_EPSILON = math.log(3.0)


class NormKind(str, enum.Enum):
    L1 = "l1"
    L2 = "l2"


@dataclass(frozen=True)
class SensitivityNorm:
    kind: NormKind
    value: float

    def __post_init__(self):
        object.__setattr__(self, "kind", NormKind(self.kind))
        if not (self.value >= 0 and math.isfinite(self.value)):
            raise ValueError(f"sensitivity must be finite and nonnegative, got {self.value}")

    @classmethod
    def l1(cls, value: float) -> SensitivityNorm:
        return cls(NormKind.L1, value)

    @classmethod
    def l2(cls, value: float) -> SensitivityNorm:
        return cls(NormKind.L2, value)

    def norm(self, diff) -> float:
        return norm_of(diff, self.kind)


def norm_of(diff, kind: NormKind | str) -> float:
    diff = np.asarray(diff, dtype=float).ravel()
    if NormKind(kind) is NormKind.L1:
        return float(np.abs(diff).sum())
    return float(np.sqrt(diff @ diff))


@dataclass(frozen=True)
class DpCost:
    epsilon: float
    delta: float = 0.0

    def __post_init__(self):
        if not (self.epsilon >= 0 and math.isfinite(self.epsilon)):
            raise ValueError(f"epsilon must be finite and nonnegative, got {self.epsilon}")
        if not 0.0 <= self.delta < 1.0:
            raise ValueError(f"delta must lie in [0, 1), got {self.delta}")

    @property
    def pure(self) -> bool:
        return self.delta == 0.0


def randomized_response(truth: int, rng: np.random.Generator) -> tuple[int, DpCost]:
    """Answer truthfully on tails; on heads report a second fair coin (heads = 1).

    Both coins are always drawn so the generator advances identically
    regardless of the outcome.
    """
    if truth not in (0, 1):
        raise ValueError("truth must be 0 or 1")
    first_heads, second_heads = rng.random(2) < 0.5
    answer = (1 if second_heads else 0) if first_heads else int(truth)
    return answer, DpCost(RANDOMIZED_RESPONSE_EPSILON, 0.0)


def randomized_response_distribution(truth: int) -> dict[int, float]:
    """Exact output law by enumerating the four equally likely coin outcomes."""
    probs = {0: 0.0, 1: 0.0}
    for first_heads in (False, True):
        for second_heads in (False, True):
            answer = (1 if second_heads else 0) if first_heads else truth
            probs[answer] += 0.25
    return probs


def laplace_noise(scale: float, size, rng: np.random.Generator) -> np.ndarray:
    """Lap(0, scale) draws by inverse CDF, one uniform per component."""
    # generator yields [0, 1); bump exact zeros so both branches stay finite
    u = np.maximum(rng.random(size), np.nextafter(0.0, 1.0))
    return np.where(u < 0.5, scale * np.log(2.0 * u), -scale * np.log(2.0 - 2.0 * u))


def laplace_mechanism(
    v, sensitivity: SensitivityNorm, epsilon: float, rng: np.random.Generator
) -> tuple[np.ndarray, DpCost]:
    if sensitivity.kind is not NormKind.L1:
        raise ValueError("the Laplace mechanism is calibrated to L1 sensitivity")
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    v = np.asarray(v, dtype=float)
    scale = laplace_scale(sensitivity.value, epsilon)
    noise = laplace_noise(scale, v.shape, rng)
    return v + noise, DpCost(epsilon, 0.0)


def laplace_scale(sensitivity_l1: float, epsilon: float) -> float:
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    return sensitivity_l1 / epsilon


def exponential_probabilities(utilities, delta_u: float, epsilon: float) -> np.ndarray:
    """Normalised selection law, P(r) proportional to exp(eps * u(r) / (2 * delta_u))."""
    utilities = np.asarray(utilities, dtype=float)
    if utilities.size == 0:
        raise ValueError("the output range is empty")
    if not delta_u > 0:
        raise ValueError(f"utility sensitivity must be positive, got {delta_u}")
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    logw = epsilon * utilities / (2.0 * delta_u)
    w = np.exp(logw - logw.max())
    return w / w.sum()


def exponential_mechanism(
    output_range: Sequence[T],
    utilities,
    delta_u: float,
    epsilon: float,
    rng: np.random.Generator,
) -> tuple[T, DpCost]:
    if len(output_range) == 0:
        raise ValueError("the output range is empty")
    if len(utilities) != len(output_range):
        raise ValueError("one utility per output is required")
    probs = exponential_probabilities(utilities, delta_u, epsilon)
    idx = int(np.searchsorted(np.cumsum(probs), rng.random() * probs.sum(), side="right"))
    idx = min(idx, len(output_range) - 1)
    return output_range[idx], DpCost(epsilon, 0.0)


def gaussian_sigma(sensitivity_l2: float, epsilon: float, delta: float) -> float:
    """Smallest sigma meeting sigma^2 >= 2 ln(1.25/delta) (sensitivity/epsilon)^2."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"the Gaussian mechanism requires epsilon in (0, 1), got {epsilon}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"the Gaussian mechanism requires delta in (0, 1), got {delta}")
    if sensitivity_l2 < 0:
        raise ValueError("sensitivity must be nonnegative")
    return math.sqrt(2.0 * math.log(1.25 / delta)) * sensitivity_l2 / epsilon


def gaussian_mechanism(
    v,
    sensitivity: SensitivityNorm,
    epsilon: float,
    delta: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, DpCost]:
    if sensitivity.kind is not NormKind.L2:
        raise ValueError("the Gaussian mechanism is calibrated to L2 sensitivity")
    sigma = gaussian_sigma(sensitivity.value, epsilon, delta)
    v = np.asarray(v, dtype=float)
    return v + sigma * rng.standard_normal(v.shape), DpCost(epsilon, delta)
