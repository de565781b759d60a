"""Dataclass configs and TOML loading."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import tomli

from .errors import InvalidConfigError


@dataclass
class SurrogateConfig:
    h: float = 0.15
    s: float = 6.0
    sigma: float = 0.5


@dataclass
class ModelConfig:
    input_dim: int = 8
    layer_sizes: list = field(default_factory=lambda: [32])
    block_size: int = 32
    num_classes: int = 4
    # "dirac" for event streams; "zoh" treats the input as continuous and keeps
    # the eigenbasis in the first layer's spike readout.
    first_layer_mode: str = "dirac"
    skip_connections: bool = True
    seed: int = 0
    init: str = "hippo"  # or "random"
    eta_init: str = "ones"  # or "log_uniform"
    eta_min: float = 1e-3
    eta_max: float = 1e-1
    eta_shared: bool = False
    threshold: float = 1.0
    dt: float = 1.0
    readout_tau: float = 10.0
    encoder_bias: bool = False
    readout_bias: bool = False
    scan_mode: str = "parallel"
    activation: str = "spike"  # "spike" | "smooth" | "linear"
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)

    def validate(self) -> "ModelConfig":
        if self.input_dim < 1 or self.num_classes < 1:
            raise InvalidConfigError("input_dim and num_classes must be positive")
        if not self.layer_sizes:
            raise InvalidConfigError("layer_sizes must be non-empty")
        for h in self.layer_sizes:
            if h < 1 or self.block_size < 1 or h % self.block_size:
                raise InvalidConfigError(f"block_size {self.block_size} does not divide layer size {h}")
        if self.first_layer_mode not in ("dirac", "zoh"):
            raise InvalidConfigError(f"first_layer_mode must be 'dirac' or 'zoh', got {self.first_layer_mode!r}")
        if self.init not in ("hippo", "random"):
            raise InvalidConfigError(f"init must be 'hippo' or 'random', got {self.init!r}")
        if self.eta_init not in ("ones", "log_uniform"):
            raise InvalidConfigError(f"eta_init must be 'ones' or 'log_uniform', got {self.eta_init!r}")
        if not 0 < self.eta_min <= self.eta_max:
            raise InvalidConfigError("need 0 < eta_min <= eta_max")
        if self.scan_mode not in ("parallel", "sequential"):
            raise InvalidConfigError(f"scan_mode must be 'parallel' or 'sequential'")
        if self.activation not in ("spike", "smooth", "linear"):
            raise InvalidConfigError(f"unknown activation {self.activation!r}")
        if not self.dt > 0 or not self.readout_tau > 0:
            raise InvalidConfigError("dt and readout_tau must be positive")
        return self


@dataclass
class AblationConfig:
    fix_eta: bool = False
    enforce_positive_decay: bool = False


@dataclass
class TrainConfig:
    lr_connections: float = 1e-3
    lr_neuron: float = 1e-4
    weight_decay: float = 0.01
    epochs: int = 30
    batch_size: int = 32
    min_lr: float = 0.0
    warmup_steps: int = 0
    seed: int = 0
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    clip_norm: Optional[float] = None
    channel_shift: bool = False
    channel_shift_prob: float = 0.2
    max_shift: int = 2
    cutmix: bool = False
    cutmix_prob: float = 1.0
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def validate(self) -> "TrainConfig":
        if not self.lr_connections >= self.lr_neuron >= 0:
            raise InvalidConfigError("need lr_connections >= lr_neuron >= 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise InvalidConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.weight_decay < 0 or self.min_lr < 0:
            raise InvalidConfigError("weight_decay and min_lr must be non-negative")
        if not 0 <= self.channel_shift_prob <= 1 or not 0 <= self.cutmix_prob <= 1:
            raise InvalidConfigError("probabilities must lie in [0, 1]")
        return self


@dataclass
class DataConfig:
    task: str = "freq"  # "freq" (synthetic) | "manifest" | "smnist"
    train_manifest: Optional[str] = None
    test_manifest: Optional[str] = None
    train_samples: int = 2000
    test_samples: int = 400
    seq_len: int = 128
    channels: int = 8
    permute: bool = False


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def validate(self) -> "RunConfig":
        self.model.validate()
        self.train.validate()
        return self


def _build(cls, raw: dict, where: str):
    if not isinstance(raw, dict):
        raise InvalidConfigError(f"[{where}] must be a table")
    known = {f.name: f for f in fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        raise InvalidConfigError(f"unknown key(s) in [{where}]: {', '.join(sorted(unknown))}")
    kwargs = {}
    for name, value in raw.items():
        default = known[name].default_factory() if known[name].default_factory is not dataclasses.MISSING else known[name].default
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{where}.{name}")
        elif isinstance(default, tuple):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def from_dict(raw: dict) -> RunConfig:
    return _build(RunConfig, raw, "root").validate()


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = tomli.loads(path.read_text(encoding="utf-8"))
    except (OSError, tomli.TOMLDecodeError) as exc:
        raise InvalidConfigError(f"cannot read config {path}: {exc}") from exc
    return from_dict(raw)


def to_dict(cfg) -> dict:
    d = dataclasses.asdict(cfg)

    def clean(x):
        if isinstance(x, dict):
            return {k: clean(v) for k, v in x.items() if v is not None}
        if isinstance(x, tuple):
            return list(x)
        return x

    return clean(d)


def model_config_from_dict(raw: dict) -> ModelConfig:
    return _build(ModelConfig, raw, "model").validate()
