"""Linear Array Block / Linear Array Network and the binary model format."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import engine as E
from .attention import CbamParams, LasaParams, SimAM
from .engine import Tensor
from .layers import Conv2d, Module

ATTENTION_KINDS = ("lasa", "cbam", "simam", "none")
RESAMPLE_KINDS = ("none", "down2", "up2")
LAB_PATTERN = ("down2", "down2", "down2", "none", "up2", "up2", "up2")

MAGIC = b"LANMODEL"
FORMAT_VERSION = 1


class ConfigError(ValueError):
    pass


class ModelFileError(ValueError):
    pass


class BadMagicError(ModelFileError):
    pass


class VersionMismatchError(ModelFileError):
    pass


class TruncatedFileError(ModelFileError):
    pass


class ChecksumError(ModelFileError):
    pass


@dataclass(frozen=True)
class LabConfig:
    in_channels: int
    out_channels: int
    resample: str = "none"
    attention: str = "lasa"
    use_lrl: bool = True
    kernel: int = 3
    slope: float = 0.2
    reduction: int = 4
    scale_qk: bool = False

    @property
    def use_lasa(self) -> bool:
        return self.attention == "lasa"

    def validate(self, where: str = "lab") -> None:
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError(f"{where}.in_channels/out_channels must be positive")
        if self.resample not in RESAMPLE_KINDS:
            raise ConfigError(f"{where}.resample must be one of {RESAMPLE_KINDS}, got {self.resample!r}")
        if self.attention not in ATTENTION_KINDS:
            raise ConfigError(f"{where}.attention must be one of {ATTENTION_KINDS}, got {self.attention!r}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError(f"{where}.kernel must be odd, got {self.kernel}")
        if self.reduction < 1:
            raise ConfigError(f"{where}.reduction must be >= 1")


@dataclass(frozen=True)
class LanConfig:
    in_channels: int = 3
    base_width: int = 15
    multipliers: tuple = (1, 2, 4, 8)
    upscale: int = 1
    out_channels: int = 3
    attention: str = "lasa"
    sc: bool = True
    grl: bool = True
    lrl: bool = True
    kernel: int = 3
    slope: float = 0.2
    reduction: int = 4
    scale_qk: bool = False
    seed: int = 0
    labs: tuple = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "multipliers", tuple(self.multipliers))
        if self.labs is None:
            object.__setattr__(self, "labs", default_labs(self))
        else:
            labs = tuple(l if isinstance(l, LabConfig) else LabConfig(**l) for l in self.labs)
            object.__setattr__(self, "labs", labs)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["multipliers"] = list(self.multipliers)
        d["labs"] = [asdict(l) for l in self.labs]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LanConfig":
        d = dict(d)
        d["multipliers"] = tuple(d.get("multipliers", (1, 2, 4, 8)))
        return cls(**d)

    def widths(self) -> list[int]:
        return [self.base_width * m for m in self.multipliers]


def default_labs(cfg: LanConfig) -> tuple:
    """Three strided encoder blocks, one bottleneck, three upsampling decoder blocks."""
    if len(cfg.multipliers) != 4:
        raise ConfigError(f"multipliers must have 4 entries, got {cfg.multipliers}")
    w = [cfg.base_width * m for m in cfg.multipliers]
    chans = [(w[0], w[1]), (w[1], w[2]), (w[2], w[3]), (w[3], w[3]),
             (w[3], w[2]), (w[2], w[1]), (w[1], w[0])]
    common = dict(attention=cfg.attention, use_lrl=cfg.lrl, kernel=cfg.kernel, slope=cfg.slope,
                  reduction=cfg.reduction, scale_qk=cfg.scale_qk)
    return tuple(LabConfig(i, o, r, **common) for (i, o), r in zip(chans, LAB_PATTERN))


def validate_config(cfg: LanConfig) -> None:
    if cfg.in_channels < 1:
        raise ConfigError("in_channels must be positive")
    if cfg.out_channels < 1:
        raise ConfigError("out_channels must be positive")
    if cfg.upscale not in (1, 2):
        raise ConfigError(f"upscale must be 1 or 2, got {cfg.upscale}")
    if cfg.base_width < 1:
        raise ConfigError("base_width must be positive")
    if len(cfg.labs) != 7:
        raise ConfigError(f"labs must hold exactly 7 blocks, got {len(cfg.labs)}")
    for i, (lab, pattern) in enumerate(zip(cfg.labs, LAB_PATTERN)):
        lab.validate(f"labs[{i}]")
        if lab.resample != pattern:
            raise ConfigError(f"labs[{i}].resample must be {pattern!r}, got {lab.resample!r}")
    if cfg.labs[0].in_channels != cfg.base_width:
        raise ConfigError(f"labs[0].in_channels must equal base_width {cfg.base_width}")
    for i in range(1, 7):
        if cfg.labs[i].in_channels != cfg.labs[i - 1].out_channels:
            raise ConfigError(f"labs[{i}].in_channels {cfg.labs[i].in_channels} != "
                              f"labs[{i - 1}].out_channels {cfg.labs[i - 1].out_channels}")
    # skip connections: encoder output at each resolution meets the decoder output there
    enc = [cfg.labs[0].out_channels, cfg.labs[1].out_channels, cfg.labs[2].out_channels]
    dec = [cfg.labs[5].out_channels, cfg.labs[4].out_channels, cfg.labs[3].out_channels]
    if cfg.sc and enc != dec:
        raise ConfigError(f"labs: skip connections need encoder widths {enc} to mirror decoder widths {dec}")
    if cfg.grl and cfg.labs[6].out_channels != cfg.base_width:
        raise ConfigError(f"labs[6].out_channels must equal base_width {cfg.base_width} for GRL")


class LinearArrayBlock(Module):
    """Four conv + leaky-ReLU layers, optional attention, optional local residual."""

    def __init__(self, cfg: LabConfig, rng: np.random.Generator):
        self.cfg = cfg
        k = cfg.kernel
        stride = 2 if cfg.resample == "down2" else 1
        self.conv1 = Conv2d(cfg.in_channels, cfg.out_channels, k, stride, rng)
        self.conv2 = Conv2d(cfg.out_channels, cfg.out_channels, k, 1, rng)
        self.conv3 = Conv2d(cfg.out_channels, cfg.out_channels, k, 1, rng)
        self.conv4 = Conv2d(cfg.out_channels, cfg.out_channels, k, 1, rng)
        if cfg.attention == "lasa":
            self.attn = LasaParams(cfg.out_channels, cfg.reduction, cfg.scale_qk, rng)
        elif cfg.attention == "cbam":
            self.attn = CbamParams(cfg.out_channels, cfg.reduction, rng=rng)
        elif cfg.attention == "simam":
            self.attn = SimAM()
        else:
            self.attn = None
        if cfg.use_lrl and (cfg.in_channels != cfg.out_channels or cfg.resample != "none"):
            self.proj = Conv2d(cfg.in_channels, cfg.out_channels, 1, stride, rng)
        else:
            self.proj = None

    def forward(self, x: Tensor) -> Tensor:
        return lab_forward(x, self)


def lab_forward(x: Tensor, block: LinearArrayBlock) -> Tensor:
    cfg = block.cfg
    if x.shape[1] != cfg.in_channels:
        raise E.ShapeError(f"block expects {cfg.in_channels} channels, got input shape {x.shape}")
    if cfg.resample == "up2":
        x = E.upsample_nearest(x, 2)
    y = x
    for conv in (block.conv1, block.conv2, block.conv3, block.conv4):
        y = E.leaky_relu(conv(y), cfg.slope)
    if block.attn is not None:
        y = block.attn(y)
    if cfg.use_lrl:
        y = y + (block.proj(x) if block.proj is not None else x)
    return y


class LanModel(Module):
    def __init__(self, cfg: LanConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.shallow = Conv2d(cfg.in_channels, cfg.base_width, cfg.kernel, 1, rng)
        self.labs = _BlockList([LinearArrayBlock(l, rng) for l in cfg.labs])
        self.restore = Conv2d(cfg.labs[-1].out_channels, cfg.out_channels * cfg.upscale ** 2,
                              cfg.kernel, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        return lan_forward(self, x)


class _BlockList(Module):
    def __init__(self, blocks):
        self._blocks = list(blocks)
        for i, b in enumerate(blocks):
            setattr(self, str(i), b)

    def __getitem__(self, i) -> LinearArrayBlock:
        return self._blocks[i]

    def __len__(self) -> int:
        return len(self._blocks)


def build_lan(cfg: LanConfig | None = None, **overrides) -> LanModel:
    """Construct a LAN deterministically from ``cfg.seed`` in the active precision."""
    cfg = replace(cfg, **overrides) if cfg is not None else LanConfig(**overrides)
    validate_config(cfg)
    return LanModel(cfg)


def lan_forward(model: LanModel, x: Tensor) -> Tensor:
    cfg = model.cfg
    if x.ndim != 4 or x.shape[1] != cfg.in_channels:
        raise E.ShapeError(f"expected input (N, {cfg.in_channels}, H, W), got {x.shape}")
    h, w = x.shape[2:]
    if h % 8 or w % 8:
        raise E.ShapeError(f"spatial extents must be divisible by 8 (three down-sampling stages), got {h}x{w}")
    labs = model.labs
    s0 = model.shallow(x)
    e1 = labs[0](s0)
    e2 = labs[1](e1)
    e3 = labs[2](e2)
    d = labs[3](e3)
    if cfg.sc:
        d = d + e3
    d = labs[4](d)
    if cfg.sc:
        d = d + e2
    d = labs[5](d)
    if cfg.sc:
        d = d + e1
    d = labs[6](d)
    if cfg.grl:
        d = d + s0
    return E.pixel_shuffle(model.restore(d), cfg.upscale)


def enhance(model: LanModel, x: np.ndarray) -> np.ndarray:
    """Inference on a (N, C, H, W) array; output clamped to [0, 1]."""
    y = lan_forward(model, Tensor(x, dtype=model.shallow.weight.dtype))
    return np.clip(y.data, 0.0, 1.0)


def param_count(model: Module) -> int:
    return model.param_count()


# ---------------------------------------------------------------------------
# Model file
# ---------------------------------------------------------------------------


def _checksum(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=8).digest()


def serialize(model: LanModel) -> bytes:
    cfg = json.dumps(model.cfg.to_dict(), sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(cfg)), cfg]
    params = list(model.named_parameters())
    parts.append(struct.pack("<I", len(params)))
    for name, p in params:
        raw = name.encode()
        parts.append(struct.pack("<HB", len(raw), p.ndim) + raw)
        parts.append(struct.pack(f"<{p.ndim}I", *p.shape))
        parts.append(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    payload = b"".join(parts)
    return payload + _checksum(payload)


def save(model: LanModel, path) -> None:
    """Write ``model`` as float32.  Float64 models lose precision here."""
    Path(path).write_bytes(serialize(model))


class _Reader:
    def __init__(self, buf: bytes, end: int):
        self.buf, self.pos, self.end = buf, 0, end

    def take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise TruncatedFileError(f"model file truncated: needed {n} bytes at offset {self.pos}, "
                                     f"{max(self.end - self.pos, 0)} available")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def deserialize(buf: bytes) -> LanModel:
    if buf[:len(MAGIC)] != MAGIC:
        raise BadMagicError("not a LAN model file (bad magic string)")
    r = _Reader(buf, len(buf) - 8)
    r.take(len(MAGIC))
    version, cfg_len = r.unpack("<II")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"model format version {version} is not supported (expected {FORMAT_VERSION})")
    cfg = LanConfig.from_dict(json.loads(r.take(cfg_len).decode()))
    (count,) = r.unpack("<I")
    state = {}
    for _ in range(count):
        name_len, ndim = r.unpack("<HB")
        name = r.take(name_len).decode()
        shape = r.unpack(f"<{ndim}I")
        n = int(np.prod(shape, dtype=np.int64))
        state[name] = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape)
    if r.pos != r.end:
        raise TruncatedFileError(f"model file has {r.end - r.pos} unexpected bytes before the checksum")
    if _checksum(buf[:r.end]) != buf[r.end:]:
        raise ChecksumError("model file checksum mismatch")
    with E.precision("train"):
        model = build_lan(cfg)
    model.load_state_dict(state)
    return model


def load(path) -> LanModel:
    return deserialize(Path(path).read_bytes())
