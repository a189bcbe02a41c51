"""One communication round of analog aggregation, from local gradients to the PS estimate."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .aggregation import (
    StandardizationFactors,
    Transmission,
    destandardize,
    error_free_aggregate,
    global_stats,
    local_stats,
    standardize,
    superpose,
)
from .attack import AttackerSet, AttackStrategy, attack_transmission
from .channel import ChannelRound
from .errors import UsageError
from .power import PolicyKind, PowerPolicy, bev_power, ci_power

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RoundAggregate:
    estimate: np.ndarray
    factors: StandardizationFactors
    nominal_amplitudes: np.ndarray  # what the policy prescribes; nan for dropped workers
    actual_amplitudes: np.ndarray  # what was transmitted (attackers differ)
    nominal_sum: float
    dropped: tuple[int, ...] = ()


def nominal_amplitudes(policy: PowerPolicy, magnitudes: np.ndarray, p_max: np.ndarray, dim: int,
                       b0: float | None = None) -> tuple[np.ndarray, tuple[int, ...]]:
    """Policy amplitudes for every worker; zero-magnitude CI workers are dropped (nan)."""
    U = magnitudes.shape[0]
    amps = np.empty(U)
    dropped = []
    if policy.kind is PolicyKind.BEV:
        for i in range(U):
            amps[i] = bev_power(p_max[i], dim)
    elif policy.kind is PolicyKind.CI:
        if b0 is None:
            raise UsageError("CI needs b0")
        for i in range(U):
            if magnitudes[i] <= 0:
                log.warning("worker %d has a zero channel magnitude; dropped from this round", i)
                amps[i] = math.nan
                dropped.append(i)
                continue
            cap = math.sqrt(p_max[i] / dim) if policy.ci_truncate else None
            amps[i] = ci_power(b0, magnitudes[i], cap)
    else:
        raise UsageError(f"no channel amplitudes for policy {policy.kind}")
    return amps, tuple(dropped)


def over_the_air_estimate(
    grads: Sequence[np.ndarray],
    attackers: AttackerSet,
    policy: PowerPolicy,
    channel: ChannelRound | None,
    p_max: np.ndarray,
    strategy: AttackStrategy,
    attack_rng: Callable[[int], np.random.Generator] | None = None,
    b0: float | None = None,
) -> RoundAggregate:
    """Run standardization, power control, superposition and de-standardization.

    ``grads[i]`` is worker ``i``'s honestly computed local gradient; attackers
    replace their transmission according to ``strategy``.  Under the EF policy
    the channel is ignored and the PS receives the exact average of the
    uploaded vectors (attackers upload their payload instead of their gradient).
    """
    U = len(grads)
    dim = grads[0].shape[0]
    factors = global_stats([local_stats(g) for g in grads])

    def attacker_payload(n):
        rng = attack_rng(n) if attack_rng is not None else None
        return attack_transmission(strategy, grads[n], factors, float(p_max[n]), rng)

    if policy.kind is PolicyKind.EF:
        uploads = [attacker_payload(i)[0] if i in attackers else grads[i] for i in range(U)]
        ones = np.ones(U)
        return RoundAggregate(error_free_aggregate(uploads), factors, ones, ones, float(U))

    if channel is None:
        raise UsageError("analog policies need a channel realization")
    if b0 is None and policy.kind is PolicyKind.CI:
        raise UsageError("CI needs b0")
    amps, dropped = nominal_amplitudes(policy, channel.magnitudes, p_max, dim, b0)
    actual = amps.copy()
    txs = []
    for i in range(U):
        if i in dropped:
            continue
        if i in attackers:
            payload, amp = attacker_payload(i)
            actual[i] = amp
            txs.append(Transmission(i, amp, payload))
        else:
            txs.append(Transmission(i, amps[i], standardize(grads[i], factors)))
    y = superpose(txs, channel)
    nominal_sum = math.fsum(amps[i] * channel.magnitudes[i] for i in range(U) if i not in dropped)
    estimate = destandardize(y, nominal_sum, factors)
    return RoundAggregate(estimate, factors, amps, actual, nominal_sum, dropped)
