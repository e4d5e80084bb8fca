"""Pipeline settings stored as a flat ``key = value`` text file.

The file must carry ``version = 1``. Lines starting with ``#`` are comments.
Unknown keys are rejected so typos surface early.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import PianoCoverError
from .performer import ModelConfig, TrainConfig

VERSION = 1


@dataclass
class PipelineConfig:
    # model
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    max_len: int = 1024
    embed_dims: tuple = ModelConfig().embed_dims
    d_ff: int = 0
    seed: int = 0
    # training
    lr: float = 3e-4
    warmup_steps: int = 100
    weight_decay: float = 0.01
    clip_norm: float = 1.0
    batch_size: int = 8
    epochs: int = 1
    steps: int = 0
    target_loss: float = 0.0
    # dataset
    stride_bars: int = 1
    jobs: int = 1
    vocab_path: str = ""
    # sampling
    temperature: float = 1.0
    top_p: float = 0.9
    sampling_seed: int = 0
    max_tokens_per_bar: int = 64
    # evaluation
    hop_seconds: float = 0.01

    def model_config(self) -> ModelConfig:
        return ModelConfig(self.d_model, self.n_layers, self.n_heads, self.max_len,
                           self.embed_dims, self.d_ff, self.seed)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.lr, self.warmup_steps, self.weight_decay, self.clip_norm,
                           self.batch_size, self.epochs, self.steps, self.target_loss)

    def check_paths(self):
        if self.vocab_path and not Path(self.vocab_path).exists():
            raise FileNotFoundError(f"vocab_path does not exist: {self.vocab_path}")


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def dump_config(cfg: PipelineConfig) -> str:
    lines = [f"version = {VERSION}"]
    lines += [f"{f.name} = {_format(getattr(cfg, f.name))}" for f in fields(cfg)]
    return "\n".join(lines) + "\n"


def load_config(text: str) -> PipelineConfig:
    types = {f.name: type(f.default) for f in fields(PipelineConfig)}
    values = {}
    version = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, val = (s.strip() for s in line.partition("="))
        if not sep:
            raise PianoCoverError(f"config line {lineno}: expected 'key = value'")
        if key == "version":
            version = val
            continue
        if key not in types:
            raise PianoCoverError(f"config line {lineno}: unknown key {key!r}")
        kind = types[key]
        try:
            if kind is tuple:
                values[key] = tuple(int(v) for v in val.split(","))
            else:
                values[key] = kind(val)
        except ValueError:
            raise PianoCoverError(f"config line {lineno}: bad value for {key}: {val!r}") from None
    if version != str(VERSION):
        raise PianoCoverError(f"config version must be {VERSION}, got {version!r}")
    return PipelineConfig(**values)
