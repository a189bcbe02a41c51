"""Convergence constants and rate bounds for CI and BEV under the strongest attack.

``omega`` is the expected descent coefficient (first-order term) and ``Omega``
the second-moment coefficient of the PS estimate.  A rate bound exists only
when ``omega > 0``; with a learning rate ``alpha`` the one-step condition is
``alpha^2 L Omega / 2 - alpha omega < 0``.

The Lipschitz constant, gradient-variance bound and standardization bound are
never given numerically, so they are estimated from probes and trajectories;
every number derived from them is labelled as using estimated constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .channel import ChannelProfile
from .errors import NoConvergenceGuarantee, UsageError
from .power import PolicyKind, ci_b0

ESTIMATED_LABEL = "using estimated constants"


@dataclass(frozen=True)
class BoundParams:
    sigmas: np.ndarray
    p_max: np.ndarray
    dim: int
    attackers: tuple[int, ...] = ()
    L: float = 1.0
    delta: float = 0.0
    eps: float = 0.0
    z: float = 0.0
    b0: float | None = None  # CI alignment level; derived from sigmas/p_max when None

    def __post_init__(self):
        sigmas = np.atleast_1d(np.asarray(self.sigmas, dtype=np.float64))
        p_max = np.broadcast_to(np.asarray(self.p_max, dtype=np.float64), sigmas.shape).copy()
        object.__setattr__(self, "sigmas", sigmas)
        object.__setattr__(self, "p_max", p_max)
        object.__setattr__(self, "attackers", tuple(sorted(set(int(a) for a in self.attackers))))
        if any(a < 0 or a >= sigmas.shape[0] for a in self.attackers):
            raise UsageError("attacker index out of range")
        if not (np.all(sigmas > 0) and np.all(p_max > 0)) or self.dim < 1:
            raise UsageError("sigmas, p_max and dim must be positive")
        if self.L <= 0 or self.delta < 0 or self.eps < 0 or self.z < 0:
            raise UsageError("need L > 0 and delta, eps, z >= 0")

    @classmethod
    def isomorphic(cls, U: int, N: int, sigma: float, p_max: float, dim: int, **kw) -> "BoundParams":
        """Identical workers; the last ``N`` are the attackers."""
        if not 0 <= N <= U:
            raise UsageError(f"need 0 <= N <= U, got N={N}, U={U}")
        return cls(np.full(U, float(sigma)), np.full(U, float(p_max)), dim, tuple(range(U - N, U)), **kw)

    @property
    def U(self) -> int:
        return self.sigmas.shape[0]

    @property
    def N(self) -> int:
        return len(self.attackers)

    @property
    def M(self) -> int:
        return self.U - self.N

    @property
    def honest(self) -> tuple[int, ...]:
        att = set(self.attackers)
        return tuple(i for i in range(self.U) if i not in att)

    @property
    def alignment(self) -> float:
        if self.b0 is not None:
            return self.b0
        return ci_b0(ChannelProfile(self.sigmas, 0.0), self.p_max, self.dim)

    def with_attackers(self, attackers) -> "BoundParams":
        return replace(self, attackers=tuple(attackers))


def _attacker_terms(p: BoundParams, idx) -> np.ndarray:
    """``sqrt(pi sigma^2 p_max / (2 D))`` per worker in ``idx``."""
    idx = list(idx)
    return np.sqrt(math.pi * p.sigmas[idx] ** 2 * p.p_max[idx] / (2.0 * p.dim))


def omega_ci(p: BoundParams) -> float:
    return p.M * p.alignment - math.fsum(_attacker_terms(p, p.attackers))


def omega_big_ci(p: BoundParams) -> float:
    att = list(p.attackers)
    energy = math.fsum(2.0 * p.sigmas[att] ** 2 * p.p_max[att] / p.dim)
    return (p.U + p.N) * (p.U * p.alignment**2 + energy)


def omega_ci_isomorphic(U: int, N: int, sigma: float, p_max: float, dim: int) -> float:
    """Closed form for identical workers: ``(M/sqrt(U) - sqrt(N^2 pi / 4)) sqrt(2 p_max sigma^2 / D)``."""
    M = U - N
    return (M / math.sqrt(U) - math.sqrt(N * N * math.pi / 4.0)) * math.sqrt(2.0 * p_max * sigma**2 / dim)


def omega_bev(p: BoundParams) -> float:
    return math.fsum(_attacker_terms(p, p.honest)) - math.fsum(_attacker_terms(p, p.attackers))


def omega_big_bev(p: BoundParams) -> float:
    return (p.U + p.N) * math.fsum(2.0 * p.sigmas**2 * p.p_max / p.dim)


def constants(policy: PolicyKind | str, p: BoundParams) -> tuple[float, float]:
    """``(omega, Omega)`` for the policy."""
    policy = PolicyKind(policy)
    if policy is PolicyKind.CI:
        return omega_ci(p), omega_big_ci(p)
    if policy is PolicyKind.BEV:
        return omega_bev(p), omega_big_bev(p)
    # error-free averaging: unit amplitudes, g_est = (1/U) sum g_i
    if p.N:
        raise UsageError("no EF constants with attackers")
    return 1.0, 1.0


def rate_rhs(policy: PolicyKind | str, p: BoundParams, T: int, alpha_bar: float, f_gap: float) -> float:
    """Right-hand side bounding ``(1/T) sum_t E||g_t||^2``.

    ``(1/sqrt(T)) (2 L Omega f_gap / (omega^2 alpha_bar) + alpha_bar (delta^2 + eps^2 z^2 / Omega))``
    """
    if T < 1:
        raise UsageError("T must be >= 1")
    if not 0 < alpha_bar < 2.0 * math.sqrt(T):
        raise UsageError(f"need 0 < alpha_bar < 2 sqrt(T); got alpha_bar={alpha_bar}, T={T}")
    omega, big = constants(policy, p)
    if omega <= 0:
        raise NoConvergenceGuarantee(f"omega = {omega:.6g} <= 0 for {PolicyKind(policy).value} with N={p.N}")
    return (2.0 * p.L * big * f_gap / (omega**2 * alpha_bar)
            + alpha_bar * (p.delta**2 + p.eps**2 * p.z**2 / big)) / math.sqrt(T)


def rate_rhs_ci_no_attack(p: BoundParams, T: int, alpha_bar: float, f_gap: float) -> float:
    """Attack-free CI bound, where ``omega^2 = Omega = U^2 b0^2``."""
    if p.N:
        raise UsageError("attack-free bound requested with attackers present")
    ub0_sq = (p.U * p.alignment) ** 2
    return (2.0 * p.L * f_gap / alpha_bar + alpha_bar * (p.delta**2 + p.eps**2 * p.z**2 / ub0_sq)) / math.sqrt(T)


def lr_from_scaled(alpha_bar: float, L: float, omega: float, omega_big: float, T: int) -> float:
    """Invert ``alpha_bar = L Omega sqrt(T) alpha / omega``."""
    if omega <= 0:
        raise NoConvergenceGuarantee(f"omega = {omega:.6g} <= 0")
    return alpha_bar * omega / (L * omega_big * math.sqrt(T))


def lr_from_hat(alpha_hat: float, omega: float, omega_big: float) -> float:
    """Invert ``alpha_hat = (Omega / omega) alpha``."""
    if omega <= 0:
        raise NoConvergenceGuarantee(f"omega = {omega:.6g} <= 0")
    return alpha_hat * omega / omega_big


def converges(alpha: float, L: float, omega: float, omega_big: float) -> bool:
    """One-step expected-descent condition ``alpha^2 L Omega / 2 - alpha omega < 0``."""
    if alpha <= 0:
        raise UsageError("alpha must be positive")
    return alpha * alpha * L * omega_big / 2.0 - alpha * omega < 0


def lr_upper_bound(L: float, omega: float, omega_big: float) -> float:
    return 2.0 * omega / (L * omega_big) if omega > 0 else 0.0


def attacker_order(p: BoundParams, selection: str = "strongest") -> list[int]:
    """Worker order in which attackers are added for tolerance scans.

    ``strongest`` (worst case for the defender) adds the largest
    ``sigma * sqrt(p_max)`` first; ``weakest`` the smallest; ``given`` keeps
    the configured attackers first, then the remaining workers strongest-first.
    """
    strength = p.sigmas * np.sqrt(p.p_max)
    by_strength = sorted(range(p.U), key=lambda i: (-strength[i], i))
    if selection == "strongest":
        return by_strength
    if selection == "weakest":
        return sorted(range(p.U), key=lambda i: (strength[i], i))
    if selection == "given":
        return list(p.attackers) + [i for i in by_strength if i not in p.attackers]
    raise UsageError(f"unknown selection {selection!r}")


def omega_scan(policy: PolicyKind | str, p: BoundParams, selection: str = "strongest") -> list[float]:
    """``omega`` for N = 0..U attackers, added in ``attacker_order``."""
    order = attacker_order(p, selection)
    out = []
    for n in range(p.U + 1):
        out.append(constants(policy, p.with_attackers(order[:n]))[0])
    return out


def max_tolerable_n(policy: PolicyKind | str, p: BoundParams, selection: str = "strongest") -> int:
    """Largest N such that omega stays positive for every attacker count up to N."""
    scan = omega_scan(policy, p, selection)
    n_max = -1
    for n, omega in enumerate(scan):
        if omega <= 0:
            break
        n_max = n
    return n_max


def ci_threshold_printed(U: int) -> float:
    """Tolerance ``U / (1 + sqrt(pi U))`` as printed for identical workers."""
    return U / (1.0 + math.sqrt(math.pi * U))


def ci_threshold_solved(U: int) -> float:
    """Root in N of the identical-worker CI omega: ``U / (1 + sqrt(pi U) / 2)``."""
    return U / (1.0 + math.sqrt(math.pi * U) / 2.0)


def estimate_lipschitz(grad_fn: Callable[[np.ndarray], np.ndarray], probes: Sequence[np.ndarray]) -> float:
    """Largest gradient-difference ratio over probe pairs; a lower estimate of L.

    Coincident probes are skipped.
    """
    if len(probes) < 2:
        raise UsageError("need at least two probe points")
    grads = [grad_fn(w) for w in probes]
    best = 0.0
    for a in range(len(probes)):
        for b in range(a + 1, len(probes)):
            dist = float(np.linalg.norm(probes[a] - probes[b]))
            if dist == 0.0:
                continue
            best = max(best, float(np.linalg.norm(grads[a] - grads[b])) / dist)
    return best


def round_deviation(grads: Sequence[np.ndarray]) -> float:
    """RMS distance of local gradients from their average (per-round delta)."""
    G = np.asarray(grads)
    centre = G.mean(axis=0)
    return math.sqrt(float(np.mean(np.sum((G - centre) ** 2, axis=1))))


def estimate_delta_eps(trajectory: Iterable[Sequence[np.ndarray]]) -> tuple[float, float]:
    """``(delta, eps)`` as the max over rounds of the RMS deviation and of eps_t.

    Each trajectory item is the list of local gradients of one round.
    """
    from .aggregation import global_stats, local_stats

    delta = eps = None
    for grads in trajectory:
        d = round_deviation(grads)
        e = global_stats([local_stats(g) for g in grads]).std
        delta = d if delta is None else max(delta, d)
        eps = e if eps is None else max(eps, e)
    if delta is None:
        raise UsageError("empty trajectory")
    return delta, eps


@dataclass
class BoundRow:
    T: int
    policy: str
    N: int
    rhs: float
    omega: float
    omega_big: float
    alpha: float
    note: str = field(default="")


def bound_curve(policy: PolicyKind | str, p: BoundParams, Ts: Sequence[int], alpha_hat: float,
                f_gap: float) -> list[BoundRow]:
    """Rate bound over a T grid at fixed ``alpha_hat`` (so ``alpha_bar = alpha_hat L sqrt(T)``).

    Rows where no bound applies carry ``rhs = inf`` and a note.
    """
    policy = PolicyKind(policy)
    omega, big = constants(policy, p)
    rows = []
    for T in Ts:
        alpha_bar = alpha_hat * p.L * math.sqrt(T)
        note = ""
        alpha = math.nan
        rhs = math.inf
        if omega <= 0:
            note = "omega<=0"
        else:
            alpha = lr_from_hat(alpha_hat, omega, big)
            if alpha_bar >= 2.0 * math.sqrt(T):
                note = "alpha_bar>=2sqrt(T)"
            else:
                rhs = rate_rhs(policy, p, T, alpha_bar, f_gap)
        rows.append(BoundRow(T, policy.value, p.N, rhs, omega, big, alpha, note))
    return rows
