"""Built-in scenario pack: the four experiment families at desk scale.

Each family expands to a list of named member configs.  Channel profiles for
the attacker families place one worker 10 dB below (far from the PS) or above
(close to the PS) the others; with identical channels "weakest" and
"strongest" would be ties.
"""

from __future__ import annotations

from dataclasses import dataclass

from .config import SimConfig

PATH_LOSS_DB = 10.0
WEAK_SIGMA = 10.0 ** (-PATH_LOSS_DB / 20.0)
STRONG_SIGMA = 10.0 ** (PATH_LOSS_DB / 20.0)


NO_ATTACK = {"n": 0, "selection": "none"}


@dataclass(frozen=True)
class Member:
    label: str
    config: SimConfig


def _lr_tag(lr: float) -> str:
    return f"lr{lr:g}".replace(".", "p")


def _member(family: str, base: SimConfig, policy: str, lr: float, extra: str = "", **sections) -> Member:
    label = "_".join(x for x in (family, policy, extra, _lr_tag(lr)) if x)
    sections.setdefault("attack", NO_ATTACK)
    sections.setdefault("training", {})
    sections["training"] = {**sections["training"], "lr": lr}
    cfg = base.replace(policy={"kind": policy}, run={"name": label}, **sections)
    return Member(label, cfg)


def _profile(U: int, odd_sigma: float) -> list[float]:
    return [1.0] * (U - 1) + [odd_sigma]


def no_attack(base: SimConfig) -> list[Member]:
    return [_member("no-attack", base, p, 0.1) for p in ("EF", "CI", "BEV")]


def weak_attacker(base: SimConfig, lrs=(0.1, 1.0, 2.0)) -> list[Member]:
    U = base.system.workers
    attack = {"n": 1, "selection": "weakest_channel"}
    system = {"sigmas": _profile(U, WEAK_SIGMA)}
    out = [_member("weak-attacker", base, "EF", lr, "ref") for lr in lrs]
    out += [_member("weak-attacker", base, p, lr, attack=attack, system=system)
            for lr in lrs for p in ("CI", "BEV")]
    return out


def strong_attacker(base: SimConfig, lrs=(0.1, 1.0)) -> list[Member]:
    U = base.system.workers
    attack = {"n": 1, "selection": "strongest_channel"}
    system = {"sigmas": _profile(U, STRONG_SIGMA)}
    out = [_member("strong-attacker", base, "EF", lr, "ref") for lr in lrs]
    out += [_member("strong-attacker", base, p, lr, attack=attack, system=system)
            for lr in lrs for p in ("CI", "BEV")]
    return out


def n_sweep(base: SimConfig, lr: float = 0.1, max_n: int | None = None) -> list[Member]:
    U = base.system.workers
    max_n = U // 2 if max_n is None else max_n
    out = []
    for n in range(max_n + 1):
        attack = {"n": n, "selection": "random_n" if n else "none"}
        out += [_member("n-sweep", base, p, lr, f"N{n}", attack=attack) for p in ("CI", "BEV")]
    return out


FAMILIES = {
    "no-attack": no_attack,
    "weak-attacker": weak_attacker,
    "strong-attacker": strong_attacker,
    "n-sweep": n_sweep,
}


def scenario(name: str, base: SimConfig | None = None) -> list[Member]:
    """Expand a named family against ``base`` (library defaults when omitted)."""
    if name not in FAMILIES:
        raise KeyError(f"unknown scenario {name!r}; choose from {sorted(FAMILIES)}")
    return FAMILIES[name](base if base is not None else SimConfig())
