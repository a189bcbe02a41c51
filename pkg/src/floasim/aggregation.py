"""Standardization side channel, analog superposition, and PS de-standardization."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channel import ChannelRound
from .errors import DegenerateStandardizationError, StructuralError, UsageError
from .summation import kahan_sum

EPS_MIN = 1e-12


@dataclass(frozen=True)
class StandardizationFactors:
    mean: float
    variance: float

    def __post_init__(self):
        if not (math.isfinite(self.mean) and math.isfinite(self.variance)) or self.variance < 0:
            raise UsageError(f"invalid factors mean={self.mean} variance={self.variance}")

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


@dataclass(frozen=True)
class Transmission:
    worker: int
    amplitude: float  # actual transmit amplitude
    payload: np.ndarray

    def __post_init__(self):
        if self.amplitude < 0:
            raise UsageError("amplitude must be >= 0")


def local_stats(g: np.ndarray) -> tuple[float, float]:
    """Mean and population variance (divide by D) of a gradient's entries."""
    if g.ndim != 1 or g.shape[0] < 1:
        raise StructuralError("gradient must be a non-empty vector")
    mean = float(np.mean(g))
    variance = float(np.mean((g - mean) ** 2))
    return mean, variance


def global_stats(locals_: Sequence[tuple[float, float]]) -> StandardizationFactors:
    """Average the per-worker (mean, variance) reports.

    Attackers report their true local statistics, so no special casing.
    """
    if len(locals_) == 0:
        raise UsageError("need at least one worker")
    means = [m for m, _ in locals_]
    variances = [v for _, v in locals_]
    return StandardizationFactors(math.fsum(means) / len(means), math.fsum(variances) / len(variances))


def standardize(g: np.ndarray, factors: StandardizationFactors) -> np.ndarray:
    eps = factors.std
    if eps <= EPS_MIN:
        raise DegenerateStandardizationError(f"global gradient std {eps:.3e} <= {EPS_MIN}")
    return (g - factors.mean) / eps


def superpose(transmissions: Sequence[Transmission], channel: ChannelRound) -> np.ndarray:
    """Received block ``y = sum_i p_i |h_i| s_i + z`` summed in worker-index order."""
    dim = channel.noise.shape[0]
    ordered = sorted(transmissions, key=lambda tx: tx.worker)
    for tx in ordered:
        if tx.payload.shape != (dim,):
            raise StructuralError(f"worker {tx.worker} payload shape {tx.payload.shape}, expected ({dim},)")
    terms = [tx.amplitude * channel.magnitudes[tx.worker] * tx.payload for tx in ordered]
    terms.append(channel.noise)
    return kahan_sum(terms)


def destandardize(y: np.ndarray, nominal_amplitude_sum: float, factors: StandardizationFactors) -> np.ndarray:
    """PS estimate ``eps * y + (sum_i p_i |h_i|) * mean``.

    ``nominal_amplitude_sum`` uses the amplitudes the policy prescribes for
    every worker, attackers included; the PS cannot know what attackers
    actually transmitted.
    """
    return factors.std * y + nominal_amplitude_sum * factors.mean


def error_free_aggregate(gradients: Sequence[np.ndarray]) -> np.ndarray:
    """Exact average of the uploaded vectors (unit channels, no noise)."""
    if len(gradients) == 0:
        raise UsageError("need at least one gradient")
    return kahan_sum(gradients) / len(gradients)
