"""Training loop: batch size 1, Adam, a single tenfold learning-rate drop, dihedral augmentation."""

from __future__ import annotations

import math
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import TextIO

import numpy as np

from . import data as D
from . import engine as E
from . import network as N
from .config import RunConfig
from .engine import Tensor
from .losses import FeatureExtractor, mix_loss
from .optim import AdamState, adam_step


class TrainingAborted(RuntimeError):
    def __init__(self, step: int, reason: str, checkpoint: Path | None):
        self.step = step
        self.checkpoint = checkpoint
        kept = f"; last good checkpoint {checkpoint}" if checkpoint else "; no checkpoint written yet"
        super().__init__(f"training aborted at step {step}: {reason}{kept}")


@dataclass
class TrainResult:
    steps: int
    final_checkpoint: Path
    last_loss: float


def learning_rate(cfg: RunConfig, epoch: int) -> float:
    """``epoch`` counts from 0; the drop happens once ``lr_drop_at`` of the epochs are done."""
    t = cfg.train
    return t.lr / 10 if epoch >= math.ceil(t.lr_drop_at * t.epochs) else t.lr


def load_dataset(cfg: RunConfig) -> list[D.ImagePair]:
    d = cfg.data
    if not d.synthetic:
        pairs = D.load_pair_dir(d.input_dir, d.gt_dir)
        if not pairs:
            raise ValueError(f"no matched pairs in {d.input_dir} and {d.gt_dir}")
        return pairs
    if cfg.model.in_channels != 3 or cfg.model.upscale != 1:
        raise ValueError("generated data is RGB; set data.input_dir/gt_dir for packed-Bayer models")
    pairs = []
    for i in range(d.synth_count):
        gt = D.make_clean_image(d.synth_size, d.synth_size, seed=(d.synth_seed, i))
        pairs.append(D.synth_lowlight(gt, d.gamma, d.gain, d.noise_sigma, seed=(d.synth_seed, i, 1)))
    return pairs


def negative_anchor(inp: np.ndarray, cfg: N.LanConfig) -> np.ndarray:
    """The degraded input expressed in output space, for the contrastive term."""
    if cfg.in_channels == cfg.out_channels and cfg.upscale == 1:
        return inp
    if cfg.in_channels == 4 and cfg.out_channels == 3:
        return D.packed_preview(inp, cfg.upscale)
    raise ValueError(f"no negative anchor for {cfg.in_channels} -> {cfg.out_channels} channels")


def prepare_sample(pair: D.ImagePair, cfg: RunConfig, step_seed) -> D.ImagePair:
    h, w = pair.input_img.shape[-2:]
    size = min(cfg.train.patch_size, h - h % 8, w - w % 8)
    if size < 8:
        raise ValueError(f"{pair.identifier}: image {h}x{w} is smaller than the 8px minimum")
    pair = D.random_crop(pair, size, seed=(*step_seed, 0))
    if cfg.train.augment:
        pair = D.augment(pair, seed=(*step_seed, 1))
    return pair


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def train(cfg: RunConfig, log: TextIO | None = None) -> TrainResult:
    """Run the configured schedule, logging one ``key=value`` line per step (stdout by default)."""
    log = sys.stdout if log is None else log
    cfg.validate()
    t = cfg.train
    out = Path(t.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.txt")
    pairs = load_dataset(cfg)
    with E.precision(t.precision):
        model = N.build_lan(cfg.model)
        dtype = E.get_dtype()
    params = dict(model.named_parameters())
    state = AdamState(lr=t.lr)
    fx = FeatureExtractor(cfg.model.out_channels)
    last_ckpt = None
    step = 0
    loss_value = float("nan")
    with E.precision(t.precision), warnings.catch_warnings():
        warnings.filterwarnings("ignore", message=".*scales.*")  # small patches shrink MS-SSIM
        for epoch in range(t.epochs):
            state.lr = learning_rate(cfg, epoch)
            order = np.random.default_rng((t.seed, epoch)).permutation(len(pairs))
            for idx in order:
                step += 1
                pair = prepare_sample(pairs[idx], cfg, (t.seed, step))
                x = Tensor(pair.input_img[None], dtype=dtype)
                gt = Tensor(pair.gt_img[None], dtype=dtype)
                anchor = Tensor(negative_anchor(pair.input_img, cfg.model)[None], dtype=dtype)
                try:
                    loss, parts = mix_loss(model(x), gt, anchor, cfg.loss, fx=fx, return_parts=True)
                    loss_value = loss.item()
                    if not math.isfinite(loss_value):
                        raise E.NonFiniteError(f"loss is {loss_value}")
                    E.backward(loss)
                except E.NonFiniteError as exc:
                    raise TrainingAborted(step, str(exc), last_ckpt) from exc
                adam_step(params, {k: p.grad for k, p in params.items()}, state)
                comps = " ".join(f"{k}={_fmt(v.item())}" for k, v in parts.items())
                log.write(f"step={step} epoch={epoch + 1} {comps} total={_fmt(loss_value)} lr={state.lr:.0e}\n")
                log.flush()
                if t.checkpoint_every and step % t.checkpoint_every == 0:
                    last_ckpt = out / f"step{step:07d}.lan"
                    N.save(model, last_ckpt)
    final = out / "final.lan"
    N.save(model, final)
    return TrainResult(step, final, loss_value)


def parse_log(lines) -> list[dict]:
    """Read back the per-step records written by :func:`train`."""
    rows = []
    for line in lines:
        if not line.startswith("step="):
            continue
        rec = dict(tok.split("=", 1) for tok in line.split())
        rows.append({k: int(v) if k in ("step", "epoch") else float(v) for k, v in rec.items()})
    return rows
