"""Transmit amplitudes: channel inversion (CI), best-effort voting (BEV), and the attacker rule.

Amplitudes ``p`` multiply unit-variance symbols, so the per-round energy of a
D-symbol block is ``D p^2`` and the budget reduces to ``p^2 <= p_max / D``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .aggregation import StandardizationFactors
from .channel import ChannelProfile, expected_min_gain
from .errors import DegenerateChannelError, DegenerateGradientError, UsageError


class PolicyKind(str, Enum):
    CI = "CI"
    BEV = "BEV"
    EF = "EF"  # error-free benchmark, no channel


@dataclass(frozen=True)
class PowerPolicy:
    kind: PolicyKind
    ci_truncate: bool = False


def ci_b0(profile: ChannelProfile, p_max, dim: int) -> float:
    """Static CI alignment level ``b0 = sqrt(min_i(p_i^max / D) * E[min_i |h_i|^2])``."""
    p_max = np.broadcast_to(np.asarray(p_max, dtype=np.float64), profile.sigmas.shape)
    if not np.all(p_max > 0):
        raise UsageError("p_max must be positive")
    return math.sqrt(float(np.min(p_max / dim)) * expected_min_gain(profile))


def ci_power(b0: float, magnitude: float, cap: float | None = None) -> float:
    """Invert the channel: ``b0 / |h|``, optionally clipped at ``cap = sqrt(p_max / D)``."""
    if magnitude <= 0:
        raise DegenerateChannelError(f"cannot invert channel magnitude {magnitude}")
    p = b0 / magnitude
    if cap is not None:
        p = min(p, cap)
    return p


def bev_power(p_max: float, dim: int) -> float:
    """Full power regardless of the channel: ``sqrt(p_max / D)``."""
    if not p_max > 0:
        raise UsageError("p_max must be positive")
    return math.sqrt(p_max / dim)


def attack_power(p_max: float, dim: int, factors: StandardizationFactors) -> float:
    """Largest amplitude an attacker can use for an unstandardized gradient.

    The attacker's payload has expected energy ``D (mean^2 + variance)`` per
    unit amplitude, so the budget gives ``sqrt(p_max / ((mean^2 + variance) D))``.
    """
    second_moment = factors.mean**2 + factors.variance
    if not second_moment > 0:
        raise DegenerateGradientError("gradient mean and variance are both zero")
    return math.sqrt(p_max / (second_moment * dim))
