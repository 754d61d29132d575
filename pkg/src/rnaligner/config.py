"""Run configuration: one flat record of every knob, round-trippable.

Configs load from simple ``key = value`` text files (``#`` comments) and
serialize to JSON inside checkpoints, so a checkpoint always records the
exact setup that produced it.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .errors import ConfigError


@dataclass
class RunConfig:
    # model
    downsample: str = "conv-stride{2}+pooling{2,4}-width{2,2}"
    feature_dim: int = 8            # raw feature dims before deltas
    use_deltas: bool = False
    lstm_layers: int = 4
    cells: int = 32
    bidirectional: bool = False
    mu_count: int = 1
    conv_channels: str = "8"        # comma list; empty = wide default schedule
    row_conv_context: int = 4
    embed_dim: int = 8
    decoder_cells: int = 24
    vocab_size: int = 8
    # language model / fusion
    lm_embed_dim: int = 8
    lm_cells: int = 16
    lm_lr: float = 0.01
    lm_epochs: int = 30
    # loss
    confidence_penalty: float = 0.2
    loss_mode: str = "greedy-path"
    # optimization
    seed: int = 1
    precision: int = 64
    optimizer: str = "adam"
    lr: float = 0.003
    epochs: int = 60
    batch_size: int = 10
    clip_norm: float = 5.0
    lr_patience: int = 10
    lr_decay: float = 0.5
    # decoding
    beam: int = 10
    # synthetic corpus
    synth_train: int = 50
    synth_dev: int = 20
    synth_t_min: int = 40
    synth_t_max: int = 80
    synth_n_min: int = 2
    synth_n_max: int = 5
    synth_noise: float = 0.1
    synth_grammar: str = "uniform"

    def __post_init__(self):
        if self.precision not in (32, 64):
            raise ConfigError(f"precision must be 32 or 64, got {self.precision}")
        if self.loss_mode not in ("lattice-exact", "greedy-path"):
            raise ConfigError(f"unknown loss mode {self.loss_mode!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.confidence_penalty < 0:
            raise ConfigError("confidence_penalty must be >= 0")
        if self.beam < 1:
            raise ConfigError("beam must be >= 1")

    def conv_channel_list(self):
        if not self.conv_channels.strip():
            return None
        try:
            return [int(tok) for tok in self.conv_channels.split(",")]
        except ValueError:
            raise ConfigError(f"bad conv_channels list {self.conv_channels!r}") from None

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path, overrides=None):
        values = {}
        fields = {f.name: f for f in dataclasses.fields(cls)}
        with open(path, "r", encoding="utf-8") as fh:
            for ln, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{ln}: expected key = value")
                key, val = (part.strip() for part in line.split("=", 1))
                if key not in fields:
                    raise ConfigError(f"{path}:{ln}: unknown config key {key!r}")
                values[key] = _coerce(fields[key].type, val, f"{path}:{ln}")
        if overrides:
            values.update(overrides)
        return cls(**values)

    def with_overrides(self, **kw):
        data = self.to_dict()
        for key, val in kw.items():
            if val is None:
                continue
            if key not in data:
                raise ConfigError(f"unknown config key {key!r}")
            data[key] = val
        return RunConfig.from_dict(data)


def _coerce(ftype, text, where):
    if ftype in ("bool", bool):
        lowered = text.lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{where}: bad boolean {text!r}")
    try:
        if ftype in ("int", int):
            return int(text)
        if ftype in ("float", float):
            return float(text)
    except ValueError:
        raise ConfigError(f"{where}: bad number {text!r}") from None
    return text
