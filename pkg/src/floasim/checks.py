"""Monte Carlo and property checks shared by the CLI and the test-suite."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .attack import AttackerSet, AttackStrategy, OracleScenario, Selection, StrategyKind, attack_effect_oracle
from .channel import ChannelProfile, snr_to_noise_std
from .data import make_blobs
from .model import ModelArch, init_params
from .power import PolicyKind, PowerPolicy
from .rng import RngStreams


def toy_scenario(seed: int = 0, workers: int = 5, n_attackers: int = 1, policy: str = "BEV",
                 alpha: float = 0.1, snr_db: float = 10.0, n_samples: int = 200) -> OracleScenario:
    """A 4-3-2 MLP on two Gaussian blobs with the last ``n_attackers`` workers malicious."""
    streams = RngStreams(seed)
    arch = ModelArch(4, 3, 2)
    data = make_blobs(n_samples, 4, 2, streams.generator("toy-data"), separation=2.0)
    w = init_params(arch, streams.generator("init"))
    dim = arch.num_params
    p_max = np.full(workers, float(dim))
    profile = ChannelProfile(np.ones(workers), snr_to_noise_std(float(dim), dim, snr_db))
    attackers = AttackerSet(frozenset(range(workers - n_attackers, workers)), Selection.RANDOM)
    return OracleScenario(arch, data, w, attackers, PowerPolicy(PolicyKind(policy)), profile, p_max, alpha, seed)


def candidate_attacks(dim: int, count: int = 64, seed: int = 0) -> list[tuple[str, AttackStrategy]]:
    """The strongest attack plus ``count - 1`` alternatives, all at the same power budget.

    Alternatives: Gaussian noise, constant vectors of either sign, and fixed
    random directions.
    """
    out = [
        ("strongest", AttackStrategy(StrategyKind.STRONGEST)),
        ("gaussian_noise", AttackStrategy(StrategyKind.GAUSSIAN)),
        ("constant+", AttackStrategy(StrategyKind.CONSTANT, sign=1.0)),
        ("constant-", AttackStrategy(StrategyKind.CONSTANT, sign=-1.0)),
    ]
    rng = RngStreams(seed).generator("candidates")
    k = 0
    while len(out) < count:
        out.append((f"direction{k}", AttackStrategy(StrategyKind.DIRECTION, direction=rng.standard_normal(dim))))
        k += 1
    return out[:count]


@dataclass(frozen=True)
class CandidateResult:
    name: str
    mean: float  # E[F(w_t) - F(w_{t-1})]
    stderr: float
    diff_mean: float  # paired mean of (strongest - candidate)
    diff_stderr: float

    @property
    def margin_se(self) -> float:
        """Paired advantage of the strongest attack in standard errors."""
        return self.diff_mean / self.diff_stderr if self.diff_stderr > 0 else math.inf


def verify_strongest_attack(scenario: OracleScenario | None = None, candidates: int = 64,
                            rounds: int = 1000, seed: int = 0) -> list[CandidateResult]:
    """Compare budget-matched attacks by the one-round loss increase they cause.

    Every candidate is evaluated on the same Monte Carlo rounds (same samples,
    channels and noise), so differences are paired.  The first entry is the
    strongest attack itself.
    """
    scenario = scenario if scenario is not None else toy_scenario(seed)
    cands = candidate_attacks(scenario.arch.num_params, candidates, seed)
    base = attack_effect_oracle(scenario, cands[0][1], rounds)
    results = [CandidateResult(cands[0][0], base.mean, base.stderr, 0.0, 0.0)]
    for name, strategy in cands[1:]:
        res = attack_effect_oracle(scenario, strategy, rounds)
        diff = base.deltas - res.deltas
        results.append(CandidateResult(name, res.mean, res.stderr, float(diff.mean()),
                                       float(diff.std(ddof=1) / math.sqrt(rounds))))
    return results


def _check_gradient() -> tuple[bool, str]:
    from .model import finite_diff_gradient, local_gradient, sample_loss_fn

    arch = ModelArch(4, 3, 2)
    streams = RngStreams(7)
    worst = 0.0
    for k in range(20):
        rng = streams.generator("selftest-grad", k)
        w = rng.standard_normal(arch.num_params)
        x, label = rng.standard_normal(4), int(rng.integers(2))
        a = local_gradient(arch, w, x, label)
        f = finite_diff_gradient(sample_loss_fn(arch, x, label), w)
        worst = max(worst, float(np.max(np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), 1e-6))))
    return worst <= 1e-4, f"max relative error {worst:.2e}"


def _check_channel() -> tuple[bool, str]:
    from .channel import rayleigh_magnitudes

    h = rayleigh_magnitudes(1.0, RngStreams(3).generator("selftest-channel"), size=200_000)
    m1, m2 = float(h.mean()), float((h**2).mean())
    ok = abs(m1 / math.sqrt(math.pi / 2) - 1) < 0.01 and abs(m2 / 2.0 - 1) < 0.01
    return ok, f"E|h| = {m1:.4f}, E|h|^2 = {m2:.4f}"


def _check_aggregation() -> tuple[bool, str]:
    from .channel import ChannelRound
    from .ota import over_the_air_estimate

    g = RngStreams(5).generator("selftest-agg").standard_normal(50)
    channel = ChannelRound(np.array([1.0]), np.zeros(50))
    agg = over_the_air_estimate([g], AttackerSet(frozenset()), PowerPolicy(PolicyKind.BEV), channel,
                                np.array([50.0]), AttackStrategy())
    err = float(np.max(np.abs(agg.estimate - g)))
    return err <= 1e-12, f"single-worker identity error {err:.1e}"


def _check_bounds() -> tuple[bool, str]:
    from . import bounds

    p = bounds.BoundParams.isomorphic(10, 2, 1.0, 100.0, 100, L=2.0, delta=0.5, eps=0.3, z=0.1)
    general = bounds.omega_ci(p)
    closed = bounds.omega_ci_isomorphic(10, 2, 1.0, 100.0, 100)
    r1 = bounds.rate_rhs("BEV", p, 100, 1.0, 1.0)
    r4 = bounds.rate_rhs("BEV", p, 400, 1.0, 1.0)
    n_bev = bounds.max_tolerable_n("BEV", bounds.BoundParams.isomorphic(10, 0, 1.0, 1.0, 1))
    ok = abs(general - closed) <= 1e-12 and r4 == r1 / 2 and n_bev == 4
    return ok, f"omega general-closed {abs(general - closed):.1e}; rhs(4T)/rhs(T) = {r4 / r1}; BEV N_max = {n_bev}"


def _check_determinism() -> tuple[bool, str]:
    a = RngStreams(11).generator("x", 3, 4).standard_normal(8)
    b = RngStreams(11).generator("x", 3, 4).standard_normal(8)
    c = RngStreams(11).generator("x", 4, 3).standard_normal(8)
    return bool(np.array_equal(a, b) and not np.array_equal(a, c)), "counter-addressed streams"


SELFTESTS = {
    "gradient": _check_gradient,
    "channel": _check_channel,
    "aggregation": _check_aggregation,
    "bounds": _check_bounds,
    "determinism": _check_determinism,
}


def selftest() -> list[tuple[str, bool, str]]:
    """Run the quick built-in property checks; returns ``(name, passed, detail)`` rows."""
    out = []
    for name, fn in SELFTESTS.items():
        try:
            ok, detail = fn()
        except Exception as exc:  # report, don't crash the suite
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append((name, ok, detail))
    return out
