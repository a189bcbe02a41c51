"""Experiment configuration: a TOML document with one table per section.

Parsing is strict.  Unknown sections or keys, wrong types and inconsistent
values are all collected and reported together with their field paths.

Example::

    [system]
    workers = 10
    sigmas = 1.0          # scalar or one value per worker
    snr_db = 10.0         # or noise_std = ...

    [attack]
    n = 1
    selection = "strongest_channel"

    [policy]
    kind = "BEV"

    [training]
    rounds = 500
    lr = 1.0              # alpha_hat when lr_mode = "scaled"
"""

from __future__ import annotations

import dataclasses
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import tomli_w

from .errors import ConfigError

POLICIES = ("EF", "CI", "BEV")
SELECTIONS = ("none", "weakest_channel", "strongest_channel", "random_n")
STRATEGIES = ("strongest", "gaussian_noise", "constant_vector")
LR_MODES = ("scaled", "raw")
LR_CALIBRATIONS = ("nominal", "attack_aware")
DATA_SOURCES = ("mnist", "synthetic")


@dataclass
class ModelSection:
    input_dim: int = 784
    hidden_dim: int = 64
    output_dim: int = 10


@dataclass
class DataSection:
    source: str = "mnist"
    path: str | None = None  # MNIST directory; falls back to $FLOASIM_DATA
    shard_size: int = 3000
    shared_shard: bool = False
    test_size: int = 0  # 0 = whole test split
    train_probe: int = 2000  # samples of local data used to report training loss
    n_train: int = 6000  # synthetic only
    n_test: int = 2000  # synthetic only
    separation: float = 3.0  # synthetic only
    noise: float = 1.0  # synthetic only


@dataclass
class SystemSection:
    workers: int = 10
    sigmas: float | list[float] = 1.0
    p_max: float | list[float] | None = None  # None = D, i.e. unit full-power amplitude
    snr_db: float | None = None
    noise_std: float | None = None


@dataclass
class AttackSection:
    n: int = 0
    selection: str = "none"
    strategy: str = "strongest"


@dataclass
class PolicySection:
    kind: str = "BEV"
    ci_truncate: bool = False


@dataclass
class TrainingSection:
    rounds: int = 500
    lr: float = 0.1
    lr_mode: str = "scaled"
    lr_calibration: str = "nominal"
    batch_size: int = 1
    eval_stride: int = 1


@dataclass
class RunSection:
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    threads: int = 1
    name: str = "run"


@dataclass
class BoundsSection:
    L: float | None = None
    delta: float | None = None
    eps: float | None = None
    f_gap: float | None = None


@dataclass
class SimConfig:
    model: ModelSection = field(default_factory=ModelSection)
    data: DataSection = field(default_factory=DataSection)
    system: SystemSection = field(default_factory=SystemSection)
    attack: AttackSection = field(default_factory=AttackSection)
    policy: PolicySection = field(default_factory=PolicySection)
    training: TrainingSection = field(default_factory=TrainingSection)
    run: RunSection = field(default_factory=RunSection)
    bounds: BoundsSection = field(default_factory=BoundsSection)

    @property
    def num_params(self) -> int:
        m = self.model
        return m.input_dim * m.hidden_dim + m.hidden_dim + m.hidden_dim * m.output_dim + m.output_dim

    def sigma_vector(self) -> list[float]:
        s = self.system.sigmas
        return [float(v) for v in s] if isinstance(s, list) else [float(s)] * self.system.workers

    def p_max_vector(self) -> list[float]:
        p = self.system.p_max
        if p is None:
            return [float(self.num_params)] * self.system.workers
        return [float(v) for v in p] if isinstance(p, list) else [float(p)] * self.system.workers

    def noise_std(self) -> float:
        """AWGN std; from ``snr_db`` (default 10 dB) against the smallest power budget."""
        from .channel import snr_to_noise_std

        if self.system.noise_std is not None:
            return float(self.system.noise_std)
        snr = 10.0 if self.system.snr_db is None else self.system.snr_db
        return snr_to_noise_std(min(self.p_max_vector()), self.num_params, snr)

    def replace(self, **sections) -> "SimConfig":
        """Copy with per-section overrides, e.g. ``cfg.replace(policy={"kind": "CI"})``."""
        out = dataclasses.replace(self, **{f.name: dataclasses.replace(getattr(self, f.name))
                                          for f in dataclasses.fields(self)})
        for section, values in sections.items():
            target = getattr(out, section)
            for k, v in values.items():
                if not hasattr(target, k):
                    raise ConfigError([(f"{section}.{k}", "unknown key")])
                setattr(target, k, v)
        validate(out)
        return out


def _type_ok(value: Any, annotation: str) -> bool:
    num = (int, float)
    is_num = isinstance(value, num) and not isinstance(value, bool)
    checks = {
        "int": isinstance(value, int) and not isinstance(value, bool),
        "float": is_num,
        "bool": isinstance(value, bool),
        "str": isinstance(value, str),
        "list[int]": isinstance(value, list) and all(isinstance(v, int) and not isinstance(v, bool) for v in value),
        "list[float]": isinstance(value, list) and all(isinstance(v, num) and not isinstance(v, bool) for v in value),
    }
    for option in annotation.replace(" ", "").split("|"):
        if option == "None" and value is None:
            return True
        if checks.get(option, False):
            return True
    return False


def _coerce(value: Any, annotation: str) -> Any:
    options = annotation.replace(" ", "").split("|")
    if isinstance(value, int) and not isinstance(value, bool) and "float" in options and "int" not in options:
        return float(value)
    if isinstance(value, list) and "list[float]" in options:
        return [float(v) for v in value]
    return value


def from_dict(doc: dict) -> SimConfig:
    """Build and validate a config from a parsed document."""
    problems = []
    cfg = SimConfig()
    sections = {f.name: f for f in dataclasses.fields(SimConfig)}
    for name, body in doc.items():
        if name not in sections:
            problems.append((name, "unknown section"))
            continue
        if not isinstance(body, dict):
            problems.append((name, "must be a table"))
            continue
        target = getattr(cfg, name)
        fields = {f.name: f for f in dataclasses.fields(target)}
        for key, value in body.items():
            path = f"{name}.{key}"
            if key not in fields:
                problems.append((path, "unknown key"))
                continue
            annotation = fields[key].type
            if not _type_ok(value, annotation):
                problems.append((path, f"expected {annotation}, got {type(value).__name__}"))
                continue
            setattr(target, key, _coerce(value, annotation))
    if problems:
        raise ConfigError(problems)
    validate(cfg)
    return cfg


def validate(cfg: SimConfig) -> None:
    problems = []
    sy, at, tr = cfg.system, cfg.attack, cfg.training
    if min(cfg.model.input_dim, cfg.model.hidden_dim, cfg.model.output_dim) < 1:
        problems.append(("model", "all dimensions must be >= 1"))
    if cfg.data.source not in DATA_SOURCES:
        problems.append(("data.source", f"must be one of {DATA_SOURCES}"))
    if cfg.data.shard_size < 1:
        problems.append(("data.shard_size", "must be >= 1"))
    if cfg.data.test_size < 0 or cfg.data.train_probe < 1:
        problems.append(("data.test_size/train_probe", "test_size >= 0 and train_probe >= 1 required"))
    if sy.workers < 1:
        problems.append(("system.workers", "must be >= 1"))
    for key in ("sigmas", "p_max"):
        val = getattr(sy, key)
        if isinstance(val, list):
            if len(val) != sy.workers:
                problems.append((f"system.{key}", f"has {len(val)} entries but system.workers = {sy.workers}"))
            if any(not v > 0 for v in val):
                problems.append((f"system.{key}", "entries must be > 0"))
        elif val is not None and not val > 0:
            problems.append((f"system.{key}", "must be > 0"))
    if sy.snr_db is not None and sy.noise_std is not None:
        problems.append(("system.snr_db", "give exactly one of system.snr_db and system.noise_std"))
    if sy.noise_std is not None and not (sy.noise_std >= 0 and math.isfinite(sy.noise_std)):
        problems.append(("system.noise_std", "must be finite and >= 0"))
    if at.n < 0:
        problems.append(("attack.n", "must be >= 0"))
    if at.n > sy.workers:
        problems.append(("attack.n", f"attack.n = {at.n} exceeds system.workers = {sy.workers}"))
    if at.selection not in SELECTIONS:
        problems.append(("attack.selection", f"must be one of {SELECTIONS}"))
    elif (at.selection == "none") != (at.n == 0):
        problems.append(("attack.selection", "use selection 'none' exactly when attack.n = 0"))
    if at.strategy not in STRATEGIES:
        problems.append(("attack.strategy", f"must be one of {STRATEGIES}"))
    if cfg.policy.kind not in POLICIES:
        problems.append(("policy.kind", f"must be one of {POLICIES}"))
    if tr.rounds < 1:
        problems.append(("training.rounds", "must be >= 1"))
    if not tr.lr > 0:
        problems.append(("training.lr", "must be > 0"))
    if tr.lr_mode not in LR_MODES:
        problems.append(("training.lr_mode", f"must be one of {LR_MODES}"))
    if tr.lr_calibration not in LR_CALIBRATIONS:
        problems.append(("training.lr_calibration", f"must be one of {LR_CALIBRATIONS}"))
    if tr.batch_size < 1 or tr.batch_size > cfg.data.shard_size:
        problems.append(("training.batch_size", "must be in [1, data.shard_size]"))
    if tr.eval_stride < 1:
        problems.append(("training.eval_stride", "must be >= 1"))
    if not cfg.run.seeds:
        problems.append(("run.seeds", "need at least one seed"))
    if cfg.run.threads < 1:
        problems.append(("run.threads", "must be >= 1"))
    if problems:
        raise ConfigError(problems)


def to_dict(cfg: SimConfig) -> dict:
    """Plain nested dict; ``None`` fields are omitted (TOML has no null)."""
    out = {}
    for f in dataclasses.fields(cfg):
        section = dataclasses.asdict(getattr(cfg, f.name))
        out[f.name] = {k: v for k, v in section.items() if v is not None}
    return out


def dumps(cfg: SimConfig) -> str:
    return tomli_w.dumps(to_dict(cfg))


def loads(text: str) -> SimConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([("<document>", str(exc))]) from exc
    return from_dict(doc)


def load_config(path) -> SimConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    return loads(path.read_text())
