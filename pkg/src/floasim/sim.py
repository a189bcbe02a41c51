"""Experiment orchestration: build the federated setting, run rounds, write metrics.

A run is a pure function of ``(config, seed)``.  All randomness comes from
counter-based streams, per-worker gradients are reduced in fixed worker
order, and BLAS is pinned to one thread, so CSV output is bitwise identical
whatever ``run.threads`` is.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import bounds
from .attack import AttackerSet, AttackStrategy, Selection, StrategyKind, select_attackers
from .channel import ChannelProfile, draw_channels
from .config import SimConfig
from .data import Dataset, draw_shard, load_mnist, make_blobs, resolve_mnist_root
from .errors import FloaError, NoConvergenceGuarantee
from .model import ModelArch, evaluate, init_params, local_gradient, minibatch_gradient, model_update
from .ota import over_the_air_estimate
from .power import PolicyKind, PowerPolicy, ci_b0
from .rng import RngStreams
from .summation import kahan_sum

log = logging.getLogger(__name__)

CSV_SCHEMA_VERSION = 1
CSV_COLUMNS = ("seed", "t", "policy", "N", "train_loss", "test_acc", "grad_norm_sq", "eps_t", "gbar_t", "aborted")


@dataclass(frozen=True)
class RoundRecord:
    seed: int
    t: int
    policy: str
    N: int
    train_loss: float | None  # None on rounds that are not evaluated
    test_acc: float | None
    grad_norm_sq: float  # squared norm of the honest mean gradient
    eps_t: float
    gbar_t: float
    aborted: bool = False
    delta_t: float = math.nan  # RMS deviation of local gradients from their mean
    b0: float | None = None
    amplitudes: tuple = ()
    note: str = ""

    def csv_row(self) -> list[str]:
        def fmt(v):
            return "" if v is None else repr(float(v))

        return [str(self.seed), str(self.t), self.policy, str(self.N), fmt(self.train_loss),
                fmt(self.test_acc), fmt(self.grad_norm_sq), fmt(self.eps_t), fmt(self.gbar_t),
                str(int(self.aborted))]


def load_datasets(cfg: SimConfig) -> tuple[Dataset, Dataset]:
    """Training pool and test set.  Missing MNIST files raise before any compute."""
    if cfg.data.source == "mnist":
        root = resolve_mnist_root(cfg.data.path)
        train, test = load_mnist(root, "train"), load_mnist(root, "test")
        if train.X.shape[1] != cfg.model.input_dim:
            raise ValueError(f"MNIST has {train.X.shape[1]} features but model.input_dim = {cfg.model.input_dim}")
        if cfg.data.test_size:
            test = test.subset(np.arange(min(cfg.data.test_size, len(test))))
        return train, test
    rng = RngStreams(0).generator("synthetic-data")
    d = cfg.data
    full = make_blobs(d.n_train + d.n_test, cfg.model.input_dim, cfg.model.output_dim, rng, d.separation, d.noise)
    return full.subset(np.arange(d.n_train)), full.subset(np.arange(d.n_train, d.n_train + d.n_test))


@dataclass
class Context:
    """Everything fixed for one (config, seed) run."""

    cfg: SimConfig
    seed: int
    arch: ModelArch
    streams: RngStreams
    shards: list[Dataset]
    probe: Dataset
    test: Dataset
    profile: ChannelProfile
    p_max: np.ndarray
    policy: PowerPolicy
    attackers: AttackerSet
    strategy: AttackStrategy
    alpha: float
    b0: float | None
    pool: ThreadPoolExecutor | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.arch.num_params


@dataclass(frozen=True)
class SimState:
    w: np.ndarray
    t: int = 0  # rounds completed


def bound_params(cfg: SimConfig, attackers: Sequence[int] = (), b0: float | None = None) -> bounds.BoundParams:
    return bounds.BoundParams(
        sigmas=tuple(cfg.sigma_vector()), p_max=tuple(cfg.p_max_vector()), dim=cfg.num_params,
        attackers=tuple(sorted(attackers)), b0=b0,
    )


def learning_rate(cfg: SimConfig, attackers: Sequence[int], b0: float | None) -> float:
    """Raw step size from the configured learning-rate spec.

    In scaled mode ``lr`` is ``alpha_hat`` and ``alpha = alpha_hat * omega / Omega``.
    With ``nominal`` calibration the constants are those of the attacker-free
    system, which is all a parameter server can know; ``attack_aware`` uses the
    true attacker set and refuses when ``omega <= 0``.  EF has ``omega = Omega = 1``.
    """
    tr = cfg.training
    kind = PolicyKind(cfg.policy.kind)
    if tr.lr_mode == "raw" or kind is PolicyKind.EF:
        return tr.lr
    known = attackers if tr.lr_calibration == "attack_aware" else ()
    omega, omega_big = bounds.constants(kind, bound_params(cfg, known, b0))
    if omega <= 0:
        raise NoConvergenceGuarantee(f"omega = {omega:.4g} <= 0 for {kind.value} with attackers {sorted(known)}")
    return bounds.lr_from_hat(tr.lr, omega, omega_big)


def build_context(cfg: SimConfig, seed: int, datasets: tuple[Dataset, Dataset] | None = None) -> Context:
    train, test = datasets if datasets is not None else load_datasets(cfg)
    streams = RngStreams(seed)
    arch = ModelArch(cfg.model.input_dim, cfg.model.hidden_dim, cfg.model.output_dim)
    U = cfg.system.workers
    d = cfg.data
    if d.shared_shard:
        idx = draw_shard(len(train), d.shard_size, streams.generator("shard", 0))
        shard_idx = [idx] * U
    else:
        shard_idx = [draw_shard(len(train), d.shard_size, streams.generator("shard", i)) for i in range(U)]
    local = np.unique(np.concatenate(shard_idx))
    probe_rng = streams.generator("probe")
    probe_idx = np.sort(probe_rng.choice(local, size=min(d.train_probe, local.size), replace=False))
    profile = ChannelProfile(cfg.sigma_vector(), cfg.noise_std())
    p_max = np.asarray(cfg.p_max_vector())
    policy = PowerPolicy(PolicyKind(cfg.policy.kind), cfg.policy.ci_truncate)
    attackers = select_attackers(profile, cfg.attack.n, Selection(cfg.attack.selection), streams)
    b0 = ci_b0(profile, p_max, arch.num_params) if policy.kind is PolicyKind.CI else None
    alpha = learning_rate(cfg, attackers.indices, b0)
    return Context(
        cfg=cfg, seed=seed, arch=arch, streams=streams,
        shards=[train.subset(ix) for ix in shard_idx], probe=train.subset(probe_idx), test=test,
        profile=profile, p_max=p_max, policy=policy, attackers=attackers,
        strategy=AttackStrategy(StrategyKind(cfg.attack.strategy)), alpha=alpha, b0=b0,
    )


def initial_state(ctx: Context) -> SimState:
    return SimState(init_params(ctx.arch, ctx.streams.generator("init")), 0)


def worker_gradient(ctx: Context, w: np.ndarray, t: int, i: int) -> np.ndarray:
    """Worker ``i``'s stochastic gradient in round ``t`` (K_b samples from its shard)."""
    shard = ctx.shards[i]
    rng = ctx.streams.generator("sample", t, i)
    k = ctx.cfg.training.batch_size
    if k == 1:
        j = int(rng.integers(len(shard)))
        return local_gradient(ctx.arch, w, shard.X[j], int(shard.y[j]))
    idx = rng.choice(len(shard), size=k, replace=False)
    return minibatch_gradient(ctx.arch, w, shard.X[idx], shard.y[idx])


def is_eval_round(ctx: Context, t: int) -> bool:
    return t % ctx.cfg.training.eval_stride == 0 or t == ctx.cfg.training.rounds


def run_round(state: SimState, ctx: Context) -> tuple[SimState, RoundRecord]:
    """One communication round: gradients, analog aggregation, model update, metrics."""
    t = state.t + 1
    U = ctx.profile.num_workers
    if ctx.pool is not None:
        grads = list(ctx.pool.map(lambda i: worker_gradient(ctx, state.w, t, i), range(U)))
    else:
        grads = [worker_gradient(ctx, state.w, t, i) for i in range(U)]
    mean_grad = kahan_sum(grads) / U
    grad_norm_sq = float(mean_grad @ mean_grad)
    delta_t = bounds.round_deviation(grads)
    base = dict(seed=ctx.seed, t=t, policy=ctx.policy.kind.value, N=len(ctx.attackers),
                grad_norm_sq=grad_norm_sq, delta_t=delta_t, b0=ctx.b0)
    channel = None
    if ctx.policy.kind is not PolicyKind.EF:
        channel = draw_channels(ctx.profile, t, ctx.streams, ctx.dim)
    try:
        agg = over_the_air_estimate(
            grads, ctx.attackers, ctx.policy, channel, ctx.p_max, ctx.strategy,
            attack_rng=lambda n: ctx.streams.generator("attack", t, n), b0=ctx.b0,
        )
        w = model_update(state.w, agg.estimate, ctx.alpha)
    except (FloaError, ArithmeticError) as exc:
        log.error("seed %d round %d aborted: %s", ctx.seed, t, exc)
        record = RoundRecord(train_loss=None, test_acc=None, eps_t=math.nan, gbar_t=math.nan,
                             aborted=True, note=f"{type(exc).__name__}: {exc}", **base)
        return SimState(state.w, t), record
    train_loss = test_acc = None
    if is_eval_round(ctx, t):
        _, train_loss = evaluate(ctx.arch, w, ctx.probe.X, ctx.probe.y)
        test_acc, _ = evaluate(ctx.arch, w, ctx.test.X, ctx.test.y)
    record = RoundRecord(train_loss=train_loss, test_acc=test_acc, eps_t=agg.factors.std,
                         gbar_t=agg.factors.mean, amplitudes=tuple(agg.actual_amplitudes), **base)
    return SimState(w, t), record


@dataclass
class SeedRun:
    seed: int
    records: list[RoundRecord]
    initial_loss: float
    initial_acc: float
    alpha: float
    attackers: tuple[int, ...]
    b0: float | None

    @property
    def aborted(self) -> bool:
        return any(r.aborted for r in self.records)

    def evaluated(self) -> list[RoundRecord]:
        return [r for r in self.records if r.test_acc is not None]

    def final_acc(self) -> float:
        """Last evaluated test accuracy; 0 for a run that aborted."""
        ev = self.evaluated()
        if self.aborted or not ev:
            return 0.0
        return ev[-1].test_acc

    def final_loss(self) -> float:
        ev = self.evaluated()
        if self.aborted or not ev:
            return math.inf
        return ev[-1].train_loss

    def mean_loss(self) -> float:
        """Training loss averaged over evaluated rounds; a rate proxy (area under the curve)."""
        if self.aborted:
            return math.inf
        return math.fsum(r.train_loss for r in self.evaluated()) / max(1, len(self.evaluated()))

    def summary(self) -> dict:
        ev = self.evaluated()
        aborted_at = next((r.t for r in self.records if r.aborted), None)
        return {
            "seed": self.seed,
            "final_acc": self.final_acc(),
            "best_acc": max((r.test_acc for r in ev), default=self.initial_acc),
            "final_loss": self.final_loss(),
            "min_loss": min((r.train_loss for r in ev), default=self.initial_loss),
            "mean_loss": self.mean_loss(),
            "initial_loss": self.initial_loss,
            "aborted": self.aborted,
            "aborted_round": aborted_at,
            "rounds_completed": sum(1 for r in self.records if not r.aborted),
            "alpha": self.alpha,
            "attackers": list(self.attackers),
            "b0": self.b0,
        }


def run_seed(cfg: SimConfig, seed: int, datasets=None, threads: int | None = None) -> SeedRun:
    """Run all rounds for one seed, halting at the first aborted round."""
    ctx = build_context(cfg, seed, datasets)
    threads = cfg.run.threads if threads is None else threads
    state = initial_state(ctx)
    records = []
    with threadpool_limits(limits=1):
        init_acc, init_loss = evaluate(ctx.arch, state.w, ctx.probe.X, ctx.probe.y)
        init_acc, _ = evaluate(ctx.arch, state.w, ctx.test.X, ctx.test.y)
        pool = ThreadPoolExecutor(threads) if threads > 1 else None
        ctx.pool = pool
        try:
            for _ in range(cfg.training.rounds):
                state, record = run_round(state, ctx)
                records.append(record)
                if record.aborted:
                    break
        finally:
            if pool is not None:
                pool.shutdown()
            ctx.pool = None
    return SeedRun(seed, records, init_loss, init_acc, ctx.alpha, tuple(sorted(ctx.attackers.indices)), ctx.b0)


def write_csv(path, runs: Sequence[SeedRun]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for run in runs:
            for r in run.records:
                writer.writerow(r.csv_row())


def _mean_std(values) -> dict:
    arr = np.asarray(list(values), dtype=np.float64)
    finite = arr[np.isfinite(arr)]
    return {
        "mean": float(arr.mean()) if finite.size == arr.size else (math.inf if arr.size else math.nan),
        "std": float(arr.std(ddof=1)) if arr.size > 1 and finite.size == arr.size else math.nan,
    }


def convergence_verdict(cfg: SimConfig, attackers: Sequence[int], b0: float | None) -> dict:
    """Theory-side verdict from the bound constants for the actual attacker set."""
    kind = PolicyKind(cfg.policy.kind)
    if kind is PolicyKind.EF and attackers:
        # exact averaging has no channel constants; attackers simply upload their payloads
        return {"policy": kind.value, "N": len(attackers), "omega": None, "omega_big": None,
                "small_lr_condition": None}
    omega, omega_big = bounds.constants(kind, bound_params(cfg, attackers, b0))
    verdict = {"policy": kind.value, "N": len(attackers), "omega": omega, "omega_big": omega_big,
               "small_lr_condition": omega > 0}
    if cfg.bounds.L is not None and omega > 0:
        verdict["lr_upper_bound"] = bounds.lr_upper_bound(cfg.bounds.L, omega, omega_big)
    return verdict


@dataclass
class ExperimentResult:
    config: SimConfig
    runs: list[SeedRun]

    @property
    def any_aborted(self) -> bool:
        return any(r.aborted for r in self.runs)

    def summary(self) -> dict:
        per_seed = [r.summary() for r in self.runs]
        agg = {key: _mean_std(s[key] for s in per_seed)
               for key in ("final_acc", "best_acc", "final_loss", "min_loss", "mean_loss")}
        first = self.runs[0]
        verdict = convergence_verdict(self.config, first.attackers, first.b0)
        verdict["alpha"] = first.alpha
        if self.config.training.lr_mode == "scaled" and verdict["small_lr_condition"]:
            # the step size actually used, checked against the true attacker set
            if self.config.bounds.L is not None:
                verdict["converges_at_alpha"] = bounds.converges(
                    first.alpha, self.config.bounds.L, verdict["omega"], verdict["omega_big"])
        return {
            "csv_schema_version": CSV_SCHEMA_VERSION,
            "name": self.config.run.name,
            "policy": self.config.policy.kind,
            "N": self.config.attack.n,
            "seeds": [r.seed for r in self.runs],
            "aggregate": agg,
            "per_seed": per_seed,
            "aborted": self.any_aborted,
            "verdict": verdict,
        }


def _run_seed_job(args):
    cfg, seed = args
    return run_seed(cfg, seed)


def run_experiment(cfg: SimConfig, seeds: Sequence[int] | None = None, out_dir=None,
                   datasets=None, jobs: int = 1) -> ExperimentResult:
    """Run every seed and optionally write ``<name>_seed<k>.csv`` files plus ``<name>_summary.json``.

    ``jobs > 1`` runs seeds in separate processes; output is identical either way.
    """
    seeds = list(cfg.run.seeds if seeds is None else seeds)
    if datasets is None and jobs <= 1:
        datasets = load_datasets(cfg)
    elif jobs > 1:
        load_datasets(cfg)  # fail fast on missing data before spawning workers
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(jobs) as ex:
            runs = list(ex.map(_run_seed_job, [(cfg, s) for s in seeds]))
    else:
        runs = [run_seed(cfg, s, datasets) for s in seeds]
    result = ExperimentResult(cfg, runs)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for run in runs:
            write_csv(out / f"{cfg.run.name}_seed{run.seed}.csv", [run])
        with open(out / f"{cfg.run.name}_summary.json", "w") as fh:
            json.dump(_finite_or_null(result.summary()), fh, indent=2, default=_json_default)
    return result


def _finite_or_null(obj):
    """Replace inf/nan with None so the summary is strict JSON."""
    if isinstance(obj, dict):
        return {k: _finite_or_null(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite_or_null(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")



@dataclass(frozen=True)
class EstimatedConstants:
    L: float
    delta: float
    eps: float
    f_gap: float  # initial loss minus the best loss seen on the probe set
    label: str = bounds.ESTIMATED_LABEL


def estimate_constants(cfg: SimConfig, seed: int = 0, rounds: int = 50, datasets=None) -> EstimatedConstants:
    """Estimate the smoothness, variance and standardization constants from a short error-free run.

    Config values in the ``bounds`` section take precedence over estimates.
    """
    from .model import forward_loss

    ef = cfg.replace(policy={"kind": "EF"}, attack={"n": 0, "selection": "none"},
                     training={"lr_mode": "raw", "rounds": rounds})
    ctx = build_context(ef, seed, datasets)
    state = initial_state(ctx)
    U = ctx.profile.num_workers
    trajectory, probes = [], [state.w]
    losses = [forward_loss(ctx.arch, state.w, ctx.probe.X, ctx.probe.y)]
    with threadpool_limits(limits=1):
        for t in range(1, rounds + 1):
            grads = [worker_gradient(ctx, state.w, t, i) for i in range(U)]
            trajectory.append(grads)
            w = model_update(state.w, kahan_sum(grads) / U, ctx.alpha)
            state = SimState(w, t)
            probes.append(w)
            losses.append(forward_loss(ctx.arch, w, ctx.probe.X, ctx.probe.y))
        step = max(1, len(probes) // 8)
        L = bounds.estimate_lipschitz(
            lambda w: minibatch_gradient(ctx.arch, w, ctx.probe.X, ctx.probe.y), probes[::step])
    delta, eps = bounds.estimate_delta_eps(trajectory)
    b = cfg.bounds
    return EstimatedConstants(
        L=b.L if b.L is not None else L,
        delta=b.delta if b.delta is not None else delta,
        eps=b.eps if b.eps is not None else eps,
        f_gap=b.f_gap if b.f_gap is not None else losses[0] - min(losses),
    )
