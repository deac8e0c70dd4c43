"""Experiment configuration and its flat ``section.key = value`` text format."""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from selftune.agent.losses import REDUCTIONS, LossCoefs
from selftune.agent.networks import NetworkSpec
from selftune.envs.chain import NUM_ACTIONS, OBS_DIM
from selftune.envs.rollout import ENV_IDS
from selftune.errors import ConfigError
from selftune.meta.engine import ALGORITHMS, DIVERGENCES, OUTER_SOURCES, BmgSpec, MetaConfig
from selftune.meta.optim import KINDS, OptimizerState

FORMAT_HEADER = "# selftune config v1"
ARCH_NAMES = {"linear": "linear", "conv + mlp": "conv-mlp", "conv+mlp": "conv-mlp", "conv-mlp": "conv-mlp"}
PRESET_NAMES = (
    "discounting-chain.mg.biased",
    "discounting-chain.mg.fixed",
    "discounting-chain.bmg.biased",
    "discounting-chain.bmg.fixed",
    "snake.mg.biased",
    "snake.mg.fixed",
)

SCI = {"sci": True}  # learning rates print as 5e-4 rather than 0.0005


@dataclass
class EnvSection:
    id: str = "discounting-chain"
    time_limit: int = 500


@dataclass
class NetworkSection:
    architecture: str = "Linear"
    conv_channels: tuple = (16, 32)
    hidden: int = 128
    kernel: int = 3


@dataclass
class InnerSection:
    gamma_start: float = 0.95
    lam: float = 0.0
    c_pg: float = 1.0
    c_td: float = 0.0
    c_en: float = 0.005
    lr: float = field(default=0.5, metadata=SCI)
    optimizer: str = "SGD"
    clip_norm: typing.Optional[float] = None
    value_source: str = "oracle"


@dataclass
class OuterSection:
    gamma: float = 1.0
    lam: float = 0.0
    c_pg: float = 1.0
    c_td: float = 0.0
    c_en: float = 0.005
    critic_lr: float = field(default=5e-4, metadata=SCI)


@dataclass
class MetaSection:
    algorithm: str = "mg"
    outer_source: str = "fixed"
    normalize: bool = False
    optimizer: str = "Adam"
    mg_lr: float = field(default=0.1, metadata=SCI)
    bmg_lr: float = field(default=0.1, metadata=SCI)
    clip_norm: typing.Optional[float] = None
    gamma_lo: float = 0.9
    gamma_hi: float = 1.0
    bmg_steps: int = 1
    bmg_divergence: str = "kl_target_first"


@dataclass
class RunSection:
    batch_size: int = 128
    seq_len: int = 100
    budget: int = 2000
    seeds: tuple = tuple(range(10))
    reduction: str = "sum_time"
    fd_every: int = 0
    output_dir: str = "runs"


@dataclass
class ExperimentConfig:
    env: EnvSection = field(default_factory=EnvSection)
    network: NetworkSection = field(default_factory=NetworkSection)
    inner: InnerSection = field(default_factory=InnerSection)
    outer: OuterSection = field(default_factory=OuterSection)
    meta: MetaSection = field(default_factory=MetaSection)
    run: RunSection = field(default_factory=RunSection)

    # derived views -------------------------------------------------------
    @property
    def is_chain(self) -> bool:
        return self.env.id == "discounting-chain"

    @property
    def meta_lr(self) -> float:
        return self.meta.mg_lr if self.meta.algorithm == "mg" else self.meta.bmg_lr

    def network_spec(self) -> NetworkSpec:
        arch = ARCH_NAMES[self.network.architecture.lower()]
        if self.is_chain:
            return NetworkSpec(arch, (OBS_DIM,), NUM_ACTIONS)
        return NetworkSpec(arch, (6, 6, 4), 4, tuple(self.network.conv_channels), self.network.hidden,
                           self.network.kernel)

    def meta_config(self) -> MetaConfig:
        i, o, m = self.inner, self.outer, self.meta
        return MetaConfig(
            spec=self.network_spec(),
            inner=LossCoefs(i.lam, i.c_pg, i.c_td, i.c_en),
            outer=LossCoefs(o.lam, o.c_pg, o.c_td, o.c_en),
            gamma_prime=o.gamma,
            bounds=(m.gamma_lo, m.gamma_hi),
            inner_values=i.value_source,
            outer_source=m.outer_source,
            normalize=m.normalize,
            reduction=self.run.reduction,
            bmg=BmgSpec(m.bmg_steps, m.bmg_divergence),
        )

    def inner_optimizer(self) -> OptimizerState:
        return OptimizerState(self.inner.optimizer, self.inner.lr, self.inner.clip_norm)

    def meta_optimizer(self) -> OptimizerState:
        return OptimizerState(self.meta.optimizer, self.meta_lr, self.meta.clip_norm)

    def critic_optimizer(self) -> OptimizerState:
        return OptimizerState(self.inner.optimizer, self.outer.critic_lr)

    def run_name(self) -> str:
        env = "discounting-chain" if self.is_chain else "snake"
        name = f"{env}.{self.meta.algorithm}.{self.meta.outer_source}"
        return name + ".normalized" if self.meta.normalize else name


# validation ---------------------------------------------------------------

def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    """Raise ConfigError listing every invalid field by its dotted path."""
    problems = []

    def check(ok, path, msg):
        if not ok:
            problems.append(f"{path}: {msg}")

    check(cfg.env.id in ENV_IDS, "env.id", f"must be one of {ENV_IDS}")
    check(cfg.env.time_limit > 0, "env.time_limit", "must be positive")
    check(cfg.network.architecture.lower() in ARCH_NAMES, "network.architecture", f"unknown '{cfg.network.architecture}'")
    if cfg.network.architecture.lower() in ARCH_NAMES:
        arch = ARCH_NAMES[cfg.network.architecture.lower()]
        check(arch == "linear" or not cfg.is_chain, "network.architecture", "the chain uses the linear policy")
        check(arch == "conv-mlp" or cfg.is_chain, "network.architecture", "snake needs the conv + mlp network")
    check(len(cfg.network.conv_channels) > 0, "network.conv_channels", "need at least one layer")
    check(cfg.network.hidden > 0, "network.hidden", "must be positive")
    lo, hi = cfg.meta.gamma_lo, cfg.meta.gamma_hi
    check(0.0 <= lo < hi <= 1.0, "meta.gamma_lo", "need 0 <= gamma_lo < gamma_hi <= 1")
    check(lo < cfg.inner.gamma_start < hi, "inner.gamma_start", f"must lie strictly inside ({lo}, {hi})")
    for path, v in [("inner.lam", cfg.inner.lam), ("outer.lam", cfg.outer.lam)]:
        check(0.0 <= v <= 1.0, path, "must lie in [0, 1]")
    check(0.0 < cfg.outer.gamma <= 1.0, "outer.gamma", "must lie in (0, 1]")
    for path, v in [("inner.lr", cfg.inner.lr), ("outer.critic_lr", cfg.outer.critic_lr),
                    ("meta.mg_lr", cfg.meta.mg_lr), ("meta.bmg_lr", cfg.meta.bmg_lr)]:
        check(v >= 0.0, path, "must be non-negative")
    for path, v in [("inner.clip_norm", cfg.inner.clip_norm), ("meta.clip_norm", cfg.meta.clip_norm)]:
        check(v is None or v > 0, path, "must be positive or None")
    check(cfg.inner.optimizer.lower() in KINDS, "inner.optimizer", f"must be one of {KINDS}")
    check(cfg.meta.optimizer.lower() in KINDS, "meta.optimizer", f"must be one of {KINDS}")
    check(cfg.inner.value_source in ("oracle", "inner_head"), "inner.value_source", "must be oracle or inner_head")
    check(cfg.inner.value_source != "oracle" or cfg.is_chain, "inner.value_source", "the oracle exists only for the chain")
    check(cfg.inner.value_source != "inner_head" or not cfg.is_chain, "inner.value_source", "the chain policy has no critic")
    check(cfg.meta.algorithm in ALGORITHMS, "meta.algorithm", f"must be one of {ALGORITHMS}")
    check(cfg.meta.outer_source in OUTER_SOURCES, "meta.outer_source", f"must be one of {OUTER_SOURCES}")
    check(cfg.meta.bmg_steps >= 1, "meta.bmg_steps", "must be >= 1")
    check(cfg.meta.bmg_divergence in DIVERGENCES, "meta.bmg_divergence", f"must be one of {DIVERGENCES}")
    check(cfg.run.batch_size >= 1, "run.batch_size", "must be >= 1")
    check(cfg.run.seq_len >= 1, "run.seq_len", "must be >= 1")
    check(cfg.run.budget >= 0, "run.budget", "must be >= 0")
    check(len(cfg.run.seeds) >= 1, "run.seeds", "need at least one seed")
    check(cfg.run.reduction in REDUCTIONS, "run.reduction", f"must be one of {REDUCTIONS}")
    check(cfg.run.fd_every >= 0, "run.fd_every", "must be >= 0")
    if problems:
        raise ConfigError("invalid config:\n  " + "\n  ".join(problems))
    return cfg


# text format --------------------------------------------------------------

def _fmt(value, sci: bool = False) -> str:
    if value is None:
        return "None"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if sci and 0 < abs(value) < 0.01:
            return np.format_float_scientific(value, trim="-", exp_digits=1)
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    return str(value)


def _parse(text: str, tp, path: str):
    text = text.strip()
    origin = typing.get_origin(tp)
    try:
        if origin is typing.Union:
            if text == "None":
                return None
            inner = [a for a in typing.get_args(tp) if a is not type(None)][0]
            return _parse(text, inner, path)
        if tp is bool:
            if text.lower() not in ("true", "false"):
                raise ValueError(text)
            return text.lower() == "true"
        if tp is int:
            return int(text)
        if tp is float:
            return float(text)
        if tp is tuple:
            return tuple(int(x) for x in text.split(",") if x.strip())
        return text
    except ValueError:
        raise ConfigError(f"{path}: cannot parse '{text}'") from None


def _hints(obj) -> dict:
    return typing.get_type_hints(type(obj))


def dumps(cfg: ExperimentConfig) -> str:
    lines = [FORMAT_HEADER]
    for sec in fields(cfg):
        section = getattr(cfg, sec.name)
        lines.append("")
        for f in fields(section):
            lines.append(f"{sec.name}.{f.name} = {_fmt(getattr(section, f.name), f.metadata.get('sci', False))}")
    return "\n".join(lines) + "\n"


def with_overrides(cfg: ExperimentConfig, pairs) -> ExperimentConfig:
    """Apply ``section.key=value`` strings (or (key, value) tuples) to a copy."""
    cfg = dataclasses.replace(cfg, **{s.name: dataclasses.replace(getattr(cfg, s.name)) for s in fields(cfg)})
    for item in pairs:
        key, value = item.split("=", 1) if isinstance(item, str) else item
        key = key.strip()
        if key.count(".") != 1:
            raise ConfigError(f"{key}: keys look like section.name")
        sec, name = key.split(".")
        if sec not in {s.name for s in fields(cfg)}:
            raise ConfigError(f"{key}: unknown section '{sec}'")
        section = getattr(cfg, sec)
        hints = _hints(section)
        if name not in hints:
            raise ConfigError(f"{key}: unknown key")
        setattr(section, name, _parse(str(value), hints[name], key))
    return cfg


def loads(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    pairs = []
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'section.key = value'")
        pairs.append(tuple(line.split("=", 1)))
    return validate(with_overrides(base or ExperimentConfig(), pairs))


def load(path) -> ExperimentConfig:
    return loads(Path(path).read_text())


def save(cfg: ExperimentConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(cfg))
    return path


# presets ------------------------------------------------------------------

def chain_preset(algorithm: str, outer_source: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    cfg.meta.algorithm, cfg.meta.outer_source = algorithm, outer_source
    return validate(cfg)


def snake_preset(algorithm: str, outer_source: str) -> ExperimentConfig:
    cfg = ExperimentConfig(
        env=EnvSection("snake-6x6"),
        network=NetworkSection("Conv + MLP", (16, 32), 128, 3),
        inner=InnerSection(0.8, 0.95, 1.0, 0.5, 0.01, 5e-4, "RMSProp", None, "inner_head"),
        outer=OuterSection(1.0, 1.0, 1.0, 0.0, 0.0, 5e-4),
        meta=MetaSection(algorithm, outer_source, False, "Adam", 3e-3, 6e-3, 0.1, 0.0, 1.0),
        run=RunSection(512, 5, 20000, (0, 1, 2)),
    )
    return validate(cfg)


def build_preset(name: str) -> ExperimentConfig:
    if name not in PRESET_NAMES:
        raise ConfigError(f"unknown preset '{name}', expected one of {PRESET_NAMES}")
    env, alg, src = name.split(".")
    return chain_preset(alg, src) if env == "discounting-chain" else snake_preset(alg, src)


def preset_path(name: str):
    return resources.files("selftune") / "presets" / name


def load_preset(name: str) -> ExperimentConfig:
    if name not in PRESET_NAMES:
        raise ConfigError(f"unknown preset '{name}', expected one of {PRESET_NAMES}")
    return loads(preset_path(name).read_text())


def resolve(name_or_path: str) -> ExperimentConfig:
    """A preset name or a config file path."""
    if name_or_path in PRESET_NAMES:
        return load_preset(name_or_path)
    p = Path(name_or_path)
    if not p.exists():
        raise ConfigError(f"no preset or config file named '{name_or_path}'")
    return load(p)
