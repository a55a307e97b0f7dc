"""Training objective: L1 + (1 - MS-SSIM) + feature-space contrastive ratio."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import engine as E
from .engine import Tensor
from .layers import kaiming_uniform

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


@dataclass(frozen=True)
class LossWeights:
    l1: float = 1.0
    ms_ssim: float = 0.2
    contrastive: float = 0.1
    layer_weights: tuple = (0.25, 0.25, 0.25, 0.25)

    def __post_init__(self):
        lams = (self.l1, self.ms_ssim, self.contrastive)
        if min(lams) < 0 or max(lams) <= 0:
            raise ValueError(f"loss weights must be non-negative with at least one positive, got {lams}")
        w = np.asarray(self.layer_weights, dtype=float)
        if (w < 0).any() or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"layer weights must be non-negative and sum to 1, got {self.layer_weights}")


@dataclass(frozen=True)
class MsSsimConfig:
    """Per-scale exponents follow the multi-scale SSIM convention where the
    luminance exponent at the coarsest scale equals that scale's
    contrast-structure exponent."""

    scales: int = 5
    weights: tuple = MS_SSIM_WEIGHTS
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0

    def __post_init__(self):
        if self.scales < 1 or len(self.weights) < self.scales:
            raise ValueError(f"need at least {self.scales} per-scale weights, got {len(self.weights)}")
        if min(self.weights[: self.scales]) <= 0:
            raise ValueError("per-scale exponents must be positive")

    @property
    def c1(self) -> float:
        return (self.k1 * self.data_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.data_range) ** 2


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def l1_loss(pred: Tensor, gt: Tensor) -> Tensor:
    if pred.shape != gt.shape:
        raise E.ShapeError(f"l1_loss: shapes {pred.shape} and {gt.shape} differ")
    return E.mean_axis(E.abs_(pred - gt))


def _gaussian_filter(x: Tensor, window: np.ndarray) -> Tensor:
    """Separable 'valid' Gaussian filtering of every (n, c) plane."""
    n, c, h, w = x.shape
    planes = E.reshape(x, (n * c, 1, h, w))
    k = len(window)
    kx = Tensor(window.reshape(1, 1, 1, k), dtype=x.dtype)
    ky = Tensor(window.reshape(1, 1, k, 1), dtype=x.dtype)
    out = E.conv2d(E.conv2d(planes, kx), ky)
    return E.reshape(out, (n, c) + out.shape[2:])


def _ssim_terms(p: Tensor, g: Tensor, cfg: MsSsimConfig, window: np.ndarray):
    """Per-plane mean SSIM and mean contrast-structure term, each (N, C)."""
    n = p.shape[0]
    stacked = _gaussian_filter(E.concat([p, g, p * p, g * g, p * g], axis=0), window)
    mu_p, mu_g, e_pp, e_gg, e_pg = E.split(stacked, 0, [n] * 5)
    var_p = e_pp - mu_p * mu_p
    var_g = e_gg - mu_g * mu_g
    cov = e_pg - mu_p * mu_g
    cs_map = (cov * 2.0 + cfg.c2) / (var_p + var_g + cfg.c2)
    lum_map = (mu_p * mu_g * 2.0 + cfg.c1) / (mu_p * mu_p + mu_g * mu_g + cfg.c1)
    ssim = E.mean_axis(lum_map * cs_map, (2, 3))
    cs = E.mean_axis(cs_map, (2, 3))
    return ssim, cs


def effective_scales(h: int, w: int, cfg: MsSsimConfig) -> int:
    m = cfg.scales
    while m > 1 and min(h, w) < cfg.window * 2 ** (m - 1):
        m -= 1
    return m


def ms_ssim(pred: Tensor, gt: Tensor, cfg: MsSsimConfig = MsSsimConfig()) -> Tensor:
    """Multi-scale SSIM averaged over batch and channels.

    When the images are too small for ``cfg.scales`` levels the pyramid is
    shortened and the leading exponents renormalised to sum to one.
    """
    if pred.shape != gt.shape:
        raise E.ShapeError(f"ms_ssim: shapes {pred.shape} and {gt.shape} differ")
    h, w = pred.shape[2:]
    if min(h, w) < cfg.window:
        raise E.ShapeError(f"ms_ssim: images {h}x{w} smaller than the {cfg.window}px window")
    m = effective_scales(h, w, cfg)
    weights = np.asarray(cfg.weights[: cfg.scales], dtype=np.float64)
    if m < cfg.scales:
        warnings.warn(f"ms_ssim: {h}x{w} images support only {m} of {cfg.scales} scales", stacklevel=2)
        weights = weights[:m] / weights[:m].sum()
    window = gaussian_window(cfg.window, cfg.sigma)
    value = None
    for i in range(m):
        ssim, cs = _ssim_terms(pred, gt, cfg, window)
        term = ssim if i == m - 1 else cs
        # negative structure correlation would make fractional powers undefined
        factor = E.power(E.maximum(term, 1e-6), float(weights[i]))
        value = factor if value is None else value * factor
        if i < m - 1:
            pred, gt = E.avg_pool2(pred), E.avg_pool2(gt)
    return E.mean_axis(value)


def ms_ssim_loss(pred: Tensor, gt: Tensor, cfg: MsSsimConfig = MsSsimConfig()) -> Tensor:
    return 1.0 - ms_ssim(pred, gt, cfg)


class FeatureExtractor:
    """Frozen random conv stack standing in for a pretrained perceptual network.

    Four stride-2 3x3 convolutions with leaky ReLU; the output of every stage
    is a tap.  Weights are fixed by ``seed`` and never receive updates, but
    gradients flow through to the input.
    """

    def __init__(self, in_channels: int = 3, widths: Sequence[int] = (8, 16, 32, 64), seed: int = 1234,
                 slope: float = 0.2):
        rng = np.random.default_rng(seed)
        self.slope = slope
        self.weights = []
        cin = in_channels
        for cout in widths:
            w = kaiming_uniform(rng, (cout, cin, 3, 3), cin * 9)
            self.weights.append((w, np.zeros(cout)))
            cin = cout
        self._cache: dict = {}

    @property
    def n_taps(self) -> int:
        return len(self.weights)

    def _consts(self, dtype):
        key = np.dtype(dtype).str
        if key not in self._cache:
            self._cache[key] = [(Tensor(w, dtype=dtype), Tensor(b, dtype=dtype)) for w, b in self.weights]
        return self._cache[key]

    def __call__(self, x: Tensor) -> list[Tensor]:
        taps = []
        for w, b in self._consts(x.dtype):
            x = E.leaky_relu(E.conv2d(x, w, b, stride=2, padding=1), self.slope)
            taps.append(x)
        return taps


def identity_features(x: Tensor) -> list[Tensor]:
    return [x]


def _mean_abs(a: Tensor, b: Tensor) -> Tensor:
    return E.mean_axis(E.abs_(a - b))


def contrastive_loss(pred: Tensor, gt: Tensor, inp: Tensor,
                     fx: Callable[[Tensor], list[Tensor]], w: Sequence[float] | None = None,
                     eps: float = 1e-6) -> Tensor:
    """Sum over taps of w_i * D(G_i(pred), G_i(gt)) / max(D(G_i(pred), G_i(inp)), eps)."""
    if not (pred.shape == gt.shape == inp.shape):
        raise E.ShapeError(f"contrastive_loss: shapes {pred.shape}, {gt.shape}, {inp.shape} differ")
    if np.array_equal(inp.data, gt.data):
        raise ValueError("contrastive_loss: input equals ground truth, so the negative anchor is degenerate")
    fp, fg, fi = fx(pred), fx(gt), fx(inp)
    if w is None:
        w = [1.0 / len(fp)] * len(fp)
    if len(w) != len(fp):
        raise ValueError(f"{len(w)} layer weights for {len(fp)} feature taps")
    total = None
    for wi, a, b, c in zip(w, fp, fg, fi):
        if wi == 0:
            continue
        ratio = _mean_abs(a, b) / E.maximum(_mean_abs(a, c), eps)
        term = ratio * float(wi)
        total = term if total is None else total + term
    return total if total is not None else Tensor(0.0, dtype=pred.dtype)


def mix_loss(pred: Tensor, gt: Tensor, inp: Tensor, lw: LossWeights = LossWeights(),
             cfg: MsSsimConfig = MsSsimConfig(), fx: Callable | None = None,
             return_parts: bool = False):
    """Weighted sum of the three components; components with zero weight are skipped."""
    parts = {}
    total = None
    if lw.l1:
        parts["l1"] = l1_loss(pred, gt)
        total = parts["l1"] * lw.l1
    if lw.ms_ssim:
        parts["ms_ssim"] = ms_ssim_loss(pred, gt, cfg)
        term = parts["ms_ssim"] * lw.ms_ssim
        total = term if total is None else total + term
    if lw.contrastive:
        if fx is None:
            fx = FeatureExtractor(pred.shape[1])
        parts["contrastive"] = contrastive_loss(pred, gt, inp, fx, lw.layer_weights)
        term = parts["contrastive"] * lw.contrastive
        total = term if total is None else total + term
    return (total, parts) if return_parts else total
