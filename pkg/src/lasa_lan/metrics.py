"""PSNR / SSIM on plain arrays and the per-image CSV report."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from .losses import gaussian_window


def _check_shapes(pred, gt, what):
    if pred.shape != gt.shape:
        raise ValueError(f"{what}: shapes {pred.shape} and {gt.shape} differ")


def psnr(pred, gt, max_val: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` for identical inputs."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _check_shapes(pred, gt, "psnr")
    mse = float(np.mean((pred - gt) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val ** 2 / mse)


def _filter_valid(x: np.ndarray, window: np.ndarray) -> np.ndarray:
    k = len(window)
    lo = k // 2
    hi = lo - (k - 1)  # negative stop index that trims the border
    y = correlate1d(x, window, axis=-1, mode="constant")[..., lo:x.shape[-1] + hi]
    y = correlate1d(y, window, axis=-2, mode="constant")[..., lo:x.shape[-2] + hi, :]
    return y


def ssim_map(pred, gt, window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03,
             data_range: float = 1.0) -> np.ndarray:
    """SSIM map over the valid region of every leading-axis plane."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _check_shapes(pred, gt, "ssim")
    if min(pred.shape[-2:]) < window:
        raise ValueError(f"ssim: images {pred.shape[-2]}x{pred.shape[-1]} are smaller than the {window}px window")
    w = gaussian_window(window, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_p = _filter_valid(pred, w)
    mu_g = _filter_valid(gt, w)
    var_p = _filter_valid(pred * pred, w) - mu_p ** 2
    var_g = _filter_valid(gt * gt, w) - mu_g ** 2
    cov = _filter_valid(pred * gt, w) - mu_p * mu_g
    return ((2 * mu_p * mu_g + c1) * (2 * cov + c2)) / ((mu_p ** 2 + mu_g ** 2 + c1) * (var_p + var_g + c2))


def ssim(pred, gt, **kw) -> float:
    """Mean SSIM (Gaussian window 11, sigma 1.5), averaged over channels.

    Accepts (H, W), (C, H, W) or (N, C, H, W) arrays.
    """
    return float(ssim_map(pred, gt, **kw).mean())


@dataclass
class MetricReport:
    names: list = field(default_factory=list)
    psnr_db: list = field(default_factory=list)
    ssim: list = field(default_factory=list)

    def add(self, name: str, pred, gt) -> None:
        pred = np.clip(pred, 0.0, 1.0)
        self.names.append(name)
        self.psnr_db.append(psnr(pred, gt))
        self.ssim.append(ssim(pred, gt))

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr_db))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["path", "psnr_db", "ssim"])
            for n, p, s in zip(self.names, self.psnr_db, self.ssim):
                wr.writerow([n, _fmt(p), repr(float(s))])
            wr.writerow(["mean", _fmt(self.mean_psnr), repr(self.mean_ssim)])


def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else repr(float(v))


def read_report(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{"path": r["path"], "psnr_db": float(r["psnr_db"]), "ssim": float(r["ssim"])}
                for r in csv.DictReader(fh)]
