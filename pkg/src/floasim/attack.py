"""Byzantine workers: who attacks, what they send, and how hard.

Attackers compute their honest local gradient first (same data machinery as
everyone else), report its true mean/variance to the standardization stage,
and then transmit a falsified, unstandardized payload at an amplitude chosen
so the expected block energy equals their power budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .aggregation import StandardizationFactors
from .channel import ChannelProfile, draw_channels
from .errors import UsageError
from .power import PolicyKind, attack_power, ci_b0
from .rng import RngStreams


class Selection(str, Enum):
    NONE = "none"
    WEAKEST = "weakest_channel"
    STRONGEST = "strongest_channel"
    RANDOM = "random_n"


class StrategyKind(str, Enum):
    STRONGEST = "strongest"
    GAUSSIAN = "gaussian_noise"
    CONSTANT = "constant_vector"
    DIRECTION = "direction"
    CUSTOM = "custom"


@dataclass(frozen=True)
class AttackerSet:
    indices: frozenset
    selection: Selection = Selection.NONE

    def __contains__(self, i):
        return i in self.indices

    def __len__(self):
        return len(self.indices)


PayloadFn = Callable[[np.ndarray, StandardizationFactors, np.random.Generator], np.ndarray]


@dataclass(frozen=True)
class AttackStrategy:
    """What an attacker transmits.

    ``amplitude_scale`` multiplies the budget-saturating amplitude; values
    below 1 leave power unused.  ``direction`` is used by ``DIRECTION`` (a
    fixed unit vector), ``sign`` by ``CONSTANT``, and ``payload_fn`` by
    ``CUSTOM``; a custom payload is sent at the budget amplitude, so it should
    have second moment ``mean^2 + variance`` per entry to stay within budget.
    """

    kind: StrategyKind = StrategyKind.STRONGEST
    amplitude_scale: float = 1.0
    sign: float = -1.0
    direction: np.ndarray | None = field(default=None, compare=False)
    payload_fn: PayloadFn | None = field(default=None, compare=False)


def strongest_attack_payload(g_n: np.ndarray) -> np.ndarray:
    """The negated honest gradient."""
    return -g_n


def select_attackers(profile: ChannelProfile, n: int, selection: Selection | str,
                     streams: RngStreams | None = None) -> AttackerSet:
    """Pick ``n`` attacker indices by large-scale channel strength or at random.

    Ties in ``sigma`` go to the lowest index.
    """
    selection = Selection(selection)
    U = profile.num_workers
    if n < 0 or n > U:
        raise UsageError(f"number of attackers {n} must be in [0, {U}]")
    if n == 0 or selection is Selection.NONE:
        if n != 0:
            raise UsageError("selection 'none' requires n = 0")
        return AttackerSet(frozenset(), selection)
    sigmas = profile.sigmas
    if selection is Selection.WEAKEST:
        order = sorted(range(U), key=lambda i: (sigmas[i], i))
    elif selection is Selection.STRONGEST:
        order = sorted(range(U), key=lambda i: (-sigmas[i], i))
    else:
        if streams is None:
            raise UsageError("random_n selection needs RNG streams")
        order = [int(i) for i in streams.generator("attackers").choice(U, size=n, replace=False)]
    return AttackerSet(frozenset(order[:n]), selection)


def attack_transmission(strategy: AttackStrategy, g_n: np.ndarray, factors: StandardizationFactors,
                        p_max: float, rng: np.random.Generator | None = None) -> tuple[np.ndarray, float]:
    """Return ``(payload, amplitude)`` for one attacker in one round."""
    dim = g_n.shape[0]
    amplitude = strategy.amplitude_scale * attack_power(p_max, dim, factors)
    rms = math.sqrt(factors.mean**2 + factors.variance)
    kind = StrategyKind(strategy.kind)
    if kind is StrategyKind.STRONGEST:
        payload = strongest_attack_payload(g_n)
    elif kind is StrategyKind.GAUSSIAN:
        if rng is None:
            raise UsageError("gaussian_noise attack needs a generator")
        payload = rms * rng.standard_normal(dim)
    elif kind is StrategyKind.CONSTANT:
        payload = np.full(dim, math.copysign(rms, strategy.sign))
    elif kind is StrategyKind.DIRECTION:
        u = np.asarray(strategy.direction, dtype=np.float64)
        if u.shape != (dim,):
            raise UsageError(f"direction has shape {u.shape}, expected ({dim},)")
        payload = (math.sqrt(dim) * rms / np.linalg.norm(u)) * u
    else:
        if strategy.payload_fn is None:
            raise UsageError("custom attack needs payload_fn")
        payload = np.asarray(strategy.payload_fn(g_n, factors, rng), dtype=np.float64)
    return payload, amplitude


@dataclass
class OracleScenario:
    """A frozen single-round setting for comparing attacks.

    Everything except the attacker's transmission is drawn from counter-based
    streams keyed by the Monte Carlo round, so every candidate sees the same
    samples, channels and noise (paired comparison).
    """

    arch: object  # ModelArch
    data: object  # Dataset every worker samples from
    w: np.ndarray
    attackers: AttackerSet
    policy: object  # PowerPolicy
    profile: ChannelProfile
    p_max: np.ndarray
    alpha: float
    seed: int = 0
    loss_data: object = None  # Dataset defining F; defaults to ``data``


@dataclass(frozen=True)
class OracleResult:
    mean: float
    stderr: float
    deltas: np.ndarray  # per-round F(w_t) - F(w_{t-1})


def attack_effect_oracle(scenario: OracleScenario, candidate: AttackStrategy, rounds: int = 1000) -> OracleResult:
    """Monte Carlo estimate of ``E[F(w_t) - F(w_{t-1})]`` after one round under ``candidate``.

    Larger is worse for learning.  ``candidate.amplitude_scale`` sets the
    candidate's power relative to the budget-saturating amplitude.
    """
    from .model import forward_loss, local_gradient
    from .ota import over_the_air_estimate

    streams = RngStreams(scenario.seed)
    arch, data = scenario.arch, scenario.data
    loss_data = scenario.loss_data if scenario.loss_data is not None else data
    dim = arch.num_params
    f0 = forward_loss(arch, scenario.w, loss_data.X, loss_data.y)
    U = scenario.profile.num_workers
    b0 = ci_b0(scenario.profile, scenario.p_max, dim) if scenario.policy.kind is PolicyKind.CI else None
    deltas = np.empty(rounds)
    for r in range(rounds):
        grads = []
        for i in range(U):
            k = int(streams.generator("oracle-sample", r, i).integers(len(data)))
            grads.append(local_gradient(arch, scenario.w, data.X[k], int(data.y[k])))
        channel = draw_channels(scenario.profile, r, streams, dim)
        agg = over_the_air_estimate(
            grads, scenario.attackers, scenario.policy, channel, scenario.p_max, candidate,
            attack_rng=lambda n, r=r: streams.generator("oracle-attack", r, n), b0=b0,
        )
        w1 = scenario.w - scenario.alpha * agg.estimate
        deltas[r] = forward_loss(arch, w1, loss_data.X, loss_data.y) - f0
    return OracleResult(float(deltas.mean()), float(deltas.std(ddof=1) / math.sqrt(rounds)), deltas)
