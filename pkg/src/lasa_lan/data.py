"""Image pairs, the packed-Bayer RAW path, augmentation and synthetic data.

Images travel as float32 numpy arrays in (C, H, W) layout with values in
[0, 1].  RAW frames use a small portable container: one ASCII header line
``LANRAW 1 <width> <height> <pattern> <black> <white> <exposure_ratio>``
followed by row-major little-endian uint16 sensor counts.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import cv2
import numpy as np

BAYER_PATTERNS = ("RGGB", "BGGR", "GRBG", "GBRG")
MAX_EXPOSURE_RATIO = 300.0
RAW_MAGIC = "LANRAW"
RAW_VERSION = 1
IMAGE_SUFFIXES = (".png",)
RAW_SUFFIX = ".raw"


@dataclass
class ImagePair:
    input_img: np.ndarray
    gt_img: np.ndarray
    identifier: str = ""

    @property
    def scale(self) -> int:
        return self.gt_img.shape[-1] // self.input_img.shape[-1]


@dataclass
class RawFrame:
    mosaic: np.ndarray          # (H, W) sensor counts
    black_level: float
    white_level: float
    exposure_ratio: float = 1.0
    pattern: str = "RGGB"

    def __post_init__(self):
        self.mosaic = np.asarray(self.mosaic)
        if self.mosaic.ndim == 3 and self.mosaic.shape[0] == 1:
            self.mosaic = self.mosaic[0]
        self.black_level = float(self.black_level)
        self.white_level = float(self.white_level)
        self.exposure_ratio = float(self.exposure_ratio)
        if self.white_level <= self.black_level:
            raise ValueError(f"white level {self.white_level} must exceed black level {self.black_level}")
        if self.pattern not in BAYER_PATTERNS:
            raise ValueError(f"unknown Bayer pattern {self.pattern!r}")
        if self.exposure_ratio < 1:
            raise ValueError(f"exposure ratio must be >= 1, got {self.exposure_ratio}")


# ---------------------------------------------------------------------------
# Bayer packing
# ---------------------------------------------------------------------------


def _site_offsets(pattern: str) -> list[tuple[int, int]]:
    """(row, col) offsets of the R, G1, G2, B sites inside the 2x2 tile."""
    cells = [(0, 0), (0, 1), (1, 0), (1, 1)]
    greens = [c for c, ch in zip(cells, pattern) if ch == "G"]
    return [cells[pattern.index("R")], greens[0], greens[1], cells[pattern.index("B")]]


def pack_bayer(frame: RawFrame) -> np.ndarray:
    """Split a mosaic into four half-resolution planes ordered R, G1, G2, B."""
    m = frame.mosaic
    h, w = m.shape
    if h % 2 or w % 2:
        raise ValueError(f"mosaic extents must be even, got {h}x{w}")
    return np.stack([m[r::2, c::2] for r, c in _site_offsets(frame.pattern)])


def unpack_bayer(planes: np.ndarray, pattern: str = "RGGB") -> np.ndarray:
    _, h, w = planes.shape
    m = np.empty((2 * h, 2 * w), dtype=planes.dtype)
    for plane, (r, c) in zip(planes, _site_offsets(pattern)):
        m[r::2, c::2] = plane
    return m


def preprocess_raw(packed: np.ndarray, frame: RawFrame) -> np.ndarray:
    """Black-level subtraction, normalisation, exposure amplification, clipping."""
    if frame.white_level <= frame.black_level:
        raise ValueError(f"white level {frame.white_level} must exceed black level {frame.black_level}")
    ratio = min(float(frame.exposure_ratio), MAX_EXPOSURE_RATIO)
    x = np.maximum(np.asarray(packed, dtype=np.float64) - frame.black_level, 0.0)
    x = x / (frame.white_level - frame.black_level) * ratio
    return np.clip(x, 0.0, 1.0).astype(np.float32)


def write_raw(frame: RawFrame, path) -> None:
    h, w = frame.mosaic.shape
    header = (f"{RAW_MAGIC} {RAW_VERSION} {w} {h} {frame.pattern} {frame.black_level!r} "
              f"{frame.white_level!r} {frame.exposure_ratio!r}\n")
    counts = np.asarray(frame.mosaic)
    if counts.min() < 0 or counts.max() > 65535:
        raise ValueError("sensor counts must fit in 16 bits")
    Path(path).write_bytes(header.encode("ascii") + counts.astype("<u2").tobytes())


def read_raw(path) -> RawFrame:
    buf = Path(path).read_bytes()
    nl = buf.find(b"\n")
    if nl < 0:
        raise ValueError(f"{path}: missing RAW header line")
    fields = buf[:nl].decode("ascii").split()
    if len(fields) != 8 or fields[0] != RAW_MAGIC:
        raise ValueError(f"{path}: not a {RAW_MAGIC} container")
    if int(fields[1]) != RAW_VERSION:
        raise ValueError(f"{path}: unsupported RAW container version {fields[1]}")
    w, h = int(fields[2]), int(fields[3])
    body = buf[nl + 1:]
    if len(body) != 2 * w * h:
        raise ValueError(f"{path}: expected {2 * w * h} data bytes, found {len(body)}")
    mosaic = np.frombuffer(body, dtype="<u2").reshape(h, w)
    return RawFrame(mosaic, float(fields[5]), float(fields[6]), float(fields[7]), fields[4])


def packed_preview(planes: np.ndarray, scale: int = 2) -> np.ndarray:
    """Crude RGB view of packed (..., 4, h, w) planes: R, mean green, B, nearest-upsampled."""
    rgb = np.stack([planes[..., 0, :, :], 0.5 * (planes[..., 1, :, :] + planes[..., 2, :, :]),
                    planes[..., 3, :, :]], axis=-3)
    return rgb.repeat(scale, axis=-2).repeat(scale, axis=-1)


def raw_to_input(frame: RawFrame) -> np.ndarray:
    return preprocess_raw(pack_bayer(frame), frame)


# ---------------------------------------------------------------------------
# PNG I/O
# ---------------------------------------------------------------------------


def load_image(path) -> np.ndarray:
    """Read an 8- or 16-bit PNG as float32 (3, H, W) in [0, 1]."""
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise OSError(f"cannot read image {path}")
    if img.dtype == np.uint8:
        scale = 255.0
    elif img.dtype == np.uint16:
        scale = 65535.0
    else:
        raise OSError(f"{path}: unsupported sample type {img.dtype}")
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    else:
        img = img[:, :, 2::-1]  # BGR(A) -> RGB
    return (img.transpose(2, 0, 1).astype(np.float32) / scale)


def save_image(img: np.ndarray, path, bits: int = 8) -> None:
    """Write a (3, H, W) array, clamped to [0, 1], as an 8- or 16-bit PNG."""
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 4:
        img = img[0]
    top = 255 if bits == 8 else 65535
    q = np.rint(np.clip(img, 0.0, 1.0) * top).astype(np.uint8 if bits == 8 else np.uint16)
    q = q.transpose(1, 2, 0)[:, :, ::-1]
    if not cv2.imwrite(str(path), np.ascontiguousarray(q)):
        raise OSError(f"cannot write image {path}")


def match_names(input_names, gt_names) -> tuple[list[str], list[str]]:
    """Sorted common names and the sorted orphans from either side."""
    a, b = set(input_names), set(gt_names)
    return sorted(a & b), sorted(a ^ b)


def _image_names(d: Path, suffixes=IMAGE_SUFFIXES) -> dict[str, str]:
    """Map file stem to file name for the readable files in ``d``."""
    return {p.stem: p.name for p in sorted(d.iterdir()) if p.suffix.lower() in suffixes}


def load_input(path) -> np.ndarray:
    """An RGB PNG, or a RAW container turned into its packed, normalised planes."""
    path = Path(path)
    if path.suffix.lower() == RAW_SUFFIX:
        return raw_to_input(read_raw(path))
    return load_image(path)


def load_pair_dir(input_dir, gt_dir) -> list[ImagePair]:
    """Pair files of equal stem.  Inputs may be PNG or RAW containers; gt is PNG."""
    input_dir, gt_dir = Path(input_dir), Path(gt_dir)
    inputs = _image_names(input_dir, IMAGE_SUFFIXES + (RAW_SUFFIX,))
    gts = _image_names(gt_dir)
    common, orphans = match_names(inputs, gts)
    if orphans:
        names = sorted(inputs.get(o) or gts[o] for o in orphans)
        warnings.warn(f"unmatched files ignored: {names}", stacklevel=2)
    return [ImagePair(load_input(input_dir / inputs[n]), load_image(gt_dir / gts[n]), inputs[n])
            for n in common]


# ---------------------------------------------------------------------------
# Augmentation and cropping
# ---------------------------------------------------------------------------


def dihedral(img: np.ndarray, t: int) -> np.ndarray:
    """Transform ``t`` in 0..7: rotate by 90*(t % 4) degrees, then mirror if t >= 4."""
    out = np.rot90(img, t % 4, axes=(-2, -1))
    if t >= 4:
        out = out[..., ::-1]
    return np.ascontiguousarray(out)


def draw_transform(seed) -> int:
    return int(np.random.default_rng(seed).integers(8))


def augment(pair: ImagePair, seed) -> ImagePair:
    """Apply one uniformly drawn dihedral transform to both images.

    Non-square images cannot take quarter turns; an odd rotation draw is
    replaced by the rotation one quarter turn earlier (so only flips remain).
    """
    t = draw_transform(seed)
    h, w = pair.input_img.shape[-2:]
    if h != w and t % 2 == 1:
        t -= 1
    return ImagePair(dihedral(pair.input_img, t), dihedral(pair.gt_img, t), pair.identifier)


def random_crop(pair: ImagePair, size: int, seed) -> ImagePair:
    h, w = pair.input_img.shape[-2:]
    if size > h or size > w:
        raise ValueError(f"crop size {size} exceeds image extents {h}x{w}")
    s = pair.scale
    rng = np.random.default_rng(seed)
    y = int(rng.integers(h - size + 1))
    x = int(rng.integers(w - size + 1))
    return ImagePair(pair.input_img[..., y:y + size, x:x + size],
                     pair.gt_img[..., y * s:(y + size) * s, x * s:(x + size) * s],
                     pair.identifier)


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


def synth_lowlight(gt: np.ndarray, gamma: float = 2.0, gain: float = 0.25, noise_sigma: float = 0.01,
                   seed=0) -> ImagePair:
    """Darken a clean image: clip(gain * gt**gamma + gaussian noise, 0, 1)."""
    if gamma < 1:
        raise ValueError(f"gamma must be >= 1, got {gamma}")
    if not 0 < gain <= 1:
        raise ValueError(f"gain must be in (0, 1], got {gain}")
    gt = np.asarray(gt, dtype=np.float32)
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, noise_sigma, size=gt.shape) if noise_sigma > 0 else 0.0
    dark = np.clip(gain * np.power(gt.astype(np.float64), gamma) + noise, 0.0, 1.0)
    return ImagePair(dark.astype(np.float32), gt, f"synth-{seed}")


def make_clean_image(h: int, w: int, seed=0) -> np.ndarray:
    """Procedural RGB scene: colour gradient, a few flat shapes and a sinusoid texture."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w] / np.array([max(h - 1, 1), max(w - 1, 1)])[:, None, None]
    a, b = rng.uniform(0.2, 0.8, size=(2, 3))
    img = a[:, None, None] * xx + b[:, None, None] * yy
    img = img / img.max() * rng.uniform(0.5, 0.9)
    for _ in range(rng.integers(2, 5)):
        color = rng.uniform(0.1, 1.0, size=3)[:, None, None]
        cy, cx = rng.uniform(0, 1, size=2)
        r = rng.uniform(0.1, 0.3)
        if rng.random() < 0.5:
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r ** 2
        else:
            mask = (abs(yy - cy) < r) & (abs(xx - cx) < r * rng.uniform(0.5, 1.5))
        img = np.where(mask, 0.6 * color + 0.4 * img, img)
    freq = rng.uniform(4, 12, size=2)
    tex = 0.05 * np.sin(2 * np.pi * (freq[0] * xx + freq[1] * yy))
    return np.clip(img + tex, 0.0, 1.0).astype(np.float32)


def make_raw_frame(h: int, w: int, seed=0, black: float = 512.0, white: float = 16383.0,
                   exposure_ratio: float = 100.0, pattern: str = "RGGB") -> RawFrame:
    """A dim synthetic Bayer mosaic built from a procedural scene."""
    rgb = make_clean_image(h, w, seed)
    mosaic = np.empty((h, w), dtype=np.float64)
    chan = {"R": 0, "G": 1, "B": 2}
    for (r, c), ch in zip([(0, 0), (0, 1), (1, 0), (1, 1)], pattern):
        mosaic[r::2, c::2] = rgb[chan[ch], r::2, c::2]
    counts = black + mosaic / exposure_ratio * (white - black)
    rng = np.random.default_rng(seed + 1)
    counts = np.clip(np.rint(counts + rng.normal(0, 2.0, size=counts.shape)), 0, 65535)
    return RawFrame(counts.astype(np.uint16), black, white, exposure_ratio, pattern)


def write_synth_dataset(out_dir, count: int, seed: int = 0, size: int = 64, gamma: float = 2.0,
                        gain: float = 0.25, noise_sigma: float = 0.01, overwrite: bool = False) -> list[str]:
    """Write ``count`` pairs into ``out_dir/low`` and ``out_dir/high``."""
    out = Path(out_dir)
    low, high = out / "low", out / "high"
    names = [f"{i:04d}.png" for i in range(count)]
    if not overwrite:
        clash = [n for n in names if (low / n).exists() or (high / n).exists()]
        if clash:
            raise FileExistsError(f"{len(clash)} files already exist in {out} (first: {clash[0]}); "
                                  "pass overwrite to replace them")
    low.mkdir(parents=True, exist_ok=True)
    high.mkdir(parents=True, exist_ok=True)
    for i, n in enumerate(names):
        gt = make_clean_image(size, size, seed=(seed, i))
        pair = synth_lowlight(gt, gamma, gain, noise_sigma, seed=(seed, i, 1))
        save_image(pair.gt_img, high / n)
        save_image(pair.input_img, low / n)
    return names
