"""Run configuration: a flat ``section.key = value`` text format plus named presets.

Example file::

    # desk-scale run on generated data
    model.base_width = 8
    loss.contrastive = 0.1
    train.epochs = 4
    data.synth_count = 4

Blank lines and ``#`` comments are ignored.  Values are parsed as Python
literals when possible (numbers, booleans, tuples) and kept as strings
otherwise.  Later sources override earlier ones: preset, then file, then
command-line flags.
"""

from __future__ import annotations

import ast
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .losses import LossWeights
from .network import ConfigError, LanConfig

_MODEL_KEYS = tuple(f.name for f in fields(LanConfig) if f.name != "labs")
_LOSS_KEYS = tuple(f.name for f in fields(LossWeights))


@dataclass(frozen=True)
class DataConfig:
    input_dir: str = ""
    gt_dir: str = ""
    synth_count: int = 4
    synth_size: int = 64
    synth_seed: int = 0
    gamma: float = 2.0
    gain: float = 0.25
    noise_sigma: float = 0.01

    @property
    def synthetic(self) -> bool:
        return not self.input_dir


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2
    lr: float = 1e-4
    lr_drop_at: float = 0.5     # fraction of epochs after which lr becomes lr / 10
    patch_size: int = 256
    augment: bool = True
    checkpoint_every: int = 0   # steps; 0 keeps only the final checkpoint
    precision: str = "train"
    seed: int = 0
    out_dir: str = "runs/latest"


@dataclass(frozen=True)
class RunConfig:
    model: LanConfig = field(default_factory=LanConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def validate(self) -> "RunConfig":
        t = self.train
        if t.epochs < 1:
            raise ConfigError(f"train.epochs must be >= 1, got {t.epochs}")
        if t.lr <= 0:
            raise ConfigError(f"train.lr must be positive, got {t.lr}")
        if not 0 < t.lr_drop_at <= 1:
            raise ConfigError(f"train.lr_drop_at must be in (0, 1], got {t.lr_drop_at}")
        if t.patch_size < 8 or t.patch_size % 8:
            raise ConfigError(f"train.patch_size must be a positive multiple of 8, got {t.patch_size}")
        if t.precision not in ("train", "verify"):
            raise ConfigError(f"train.precision must be 'train' or 'verify', got {t.precision!r}")
        if t.checkpoint_every < 0:
            raise ConfigError("train.checkpoint_every must be >= 0")
        d = self.data
        if not d.synthetic:
            for key in ("input_dir", "gt_dir"):
                if not Path(getattr(d, key)).is_dir():
                    raise ConfigError(f"data.{key} {getattr(d, key)!r} is not a directory")
        elif d.synth_count < 1:
            raise ConfigError("data.synth_count must be >= 1")
        return self

    def to_flat(self) -> dict:
        out = {}
        model = self.model.to_dict()
        for k in _MODEL_KEYS:
            out[f"model.{k}"] = model[k]
        for section in ("loss", "train", "data"):
            for k, v in asdict(getattr(self, section)).items():
                out[f"{section}.{k}"] = v
        return out

    def dumps(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.to_flat().items())

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())


def _format(v) -> str:
    if isinstance(v, (list, tuple)):
        return "(" + ", ".join(repr(x) for x in v) + ("," if len(v) == 1 else "") + ")"
    if isinstance(v, str):
        return v
    return repr(v)


def _parse_value(text: str):
    text = text.strip()
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def parse(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines into a flat dict, rejecting unknown keys."""
    known = set(RunConfig().to_flat())
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"{source}:{n}: unknown key {key!r}")
        out[key] = _parse_value(value)
    return out


def load_file(path) -> dict:
    path = Path(path)
    return parse(path.read_text(), str(path))


def apply(cfg: RunConfig, flat: dict) -> RunConfig:
    """Return ``cfg`` with the dotted keys of ``flat`` overridden."""
    groups: dict[str, dict] = {"model": {}, "loss": {}, "train": {}, "data": {}}
    for key, value in flat.items():
        section, _, name = key.partition(".")
        if section not in groups:
            raise ConfigError(f"unknown config section in {key!r}")
        groups[section][name] = value
    model = cfg.model
    if groups["model"]:
        d = {k: v for k, v in model.to_dict().items() if k != "labs"}
        d.update(groups["model"])
        model = LanConfig.from_dict(d)  # labs are re-derived from the scalar fields
    loss = replace(cfg.loss, **groups["loss"]) if groups["loss"] else cfg.loss
    if "layer_weights" in groups["loss"]:
        loss = replace(loss, layer_weights=tuple(loss.layer_weights))
    train = replace(cfg.train, **groups["train"])
    data = replace(cfg.data, **{k: str(v) if k.endswith("_dir") else v for k, v in groups["data"].items()})
    return RunConfig(model, loss, train, data)


PRESETS: dict[str, dict] = {
    # small enough for a laptop: generated data, narrow network, short patches
    "desk": {
        "model.base_width": 8,
        "train.epochs": 4,
        "train.patch_size": 32,
        "data.synth_count": 4,
        "data.synth_size": 64,
    },
    "tiny": {
        "model.base_width": 4,
        "train.epochs": 2,
        "train.patch_size": 16,
        "data.synth_count": 2,
        "data.synth_size": 32,
    },
    # published protocol for the RGB dataset (2000 epochs, batch 1)
    "lol-full": {
        "model.base_width": 15,
        "model.in_channels": 3,
        "model.upscale": 1,
        "train.epochs": 2000,
        "train.patch_size": 256,
        "train.checkpoint_every": 10000,
    },
    # published protocol for packed Bayer input (4000 epochs, x2 sub-pixel output)
    "sid-full": {
        "model.base_width": 15,
        "model.in_channels": 4,
        "model.upscale": 2,
        "train.epochs": 4000,
        "train.patch_size": 256,
        "train.checkpoint_every": 10000,
    },
}


def build(preset: str | None = None, path=None, overrides: dict | None = None) -> RunConfig:
    cfg = RunConfig()
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        cfg = apply(cfg, PRESETS[preset])
    if path is not None:
        cfg = apply(cfg, load_file(path))
    if overrides:
        cfg = apply(cfg, overrides)
    return cfg
