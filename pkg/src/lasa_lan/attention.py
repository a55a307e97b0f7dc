"""Linear-array self-attention and the CBAM / SimAM baselines.

LASA summarises a (C, H, W) map by its column means (W tokens) and row means
(H tokens), runs single-head self-attention over those H + W tokens of width
C, and turns the result into per-direction sigmoid weights whose outer
product refines the map.  The attention matrix is (H+W) x (H+W) instead of
(HW) x (HW).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import engine as E
from .engine import Tensor
from .layers import Conv2d, Linear, Module

DEFAULT_TOKEN_CAP = 64 * 64


def _batched(f: Tensor) -> tuple[Tensor, bool]:
    if f.ndim == 3:
        return E.reshape(f, (1,) + f.shape), True
    if f.ndim != 4:
        raise E.ShapeError(f"expected a (C,H,W) or (N,C,H,W) map, got shape {f.shape}")
    return f, False


class LasaParams(Module):
    """Learnable part of LASA: token projection C -> 3C and the C -> ceil(C/r) -> C MLP."""

    def __init__(self, channels: int, reduction: int = 4, scale_qk: bool = False,
                 rng: np.random.Generator | None = None):
        if reduction < 1:
            raise ValueError("reduction must be >= 1")
        rng = rng or np.random.default_rng(0)
        self.channels = channels
        self.reduction = reduction
        self.scale_qk = scale_qk
        hidden = max(1, math.ceil(channels / reduction))
        self.qkv = Linear(channels, 3 * channels, rng)
        self.mlp1 = Linear(channels, hidden, rng)
        self.mlp2 = Linear(hidden, channels, rng)

    def forward(self, f: Tensor) -> Tensor:
        return lasa_forward(f, self)


@dataclass
class DirectionalEncoding:
    fx: Tensor       # (N, C, W) column means
    fy: Tensor       # (N, C, H) row means
    tokens: Tensor   # (N, W + H, C); column tokens first

    @property
    def width(self) -> int:
        return self.fx.shape[-1]

    @property
    def height(self) -> int:
        return self.fy.shape[-1]


@dataclass
class AttentionWeights3D:
    a3d: Tensor        # (N, C, H, W)
    ax: Tensor         # (N, C, W)
    ay: Tensor         # (N, C, H)
    attention: Tensor  # (N, T, T) softmax matrix
    context: Tensor    # (N, T, C) attention-weighted values, before the residual


def directional_encode(f: Tensor) -> DirectionalEncoding:
    f4, _ = _batched(f)
    fx = E.mean_axis(f4, 2)  # over H -> (N, C, W)
    fy = E.mean_axis(f4, 3)  # over W -> (N, C, H)
    tokens = E.transpose(E.concat([fx, fy], axis=2), (0, 2, 1))
    return DirectionalEncoding(fx, fy, tokens)


def token_attention(tokens: Tensor, p: LasaParams) -> tuple[Tensor, Tensor, Tensor]:
    """Self-attention with residual over a (N, T, C) token matrix.

    Returns ``(global_features, attention_matrix, context)``.
    """
    c = tokens.shape[-1]
    if c != p.channels:
        raise E.ShapeError(f"token width {c} does not match LASA channels {p.channels}")
    qkv = p.qkv(tokens)
    q, k, v = E.split(qkv, 2, [c, c, c])
    with E.flop_scope("attention_core"):
        logits = E.matmul(q, E.transpose(k, (0, 2, 1)))
        if p.scale_qk:
            logits = logits * (1.0 / math.sqrt(c))
        attn = E.softmax_last(logits)
        context = E.matmul(attn, v)
    return context + tokens, attn, context


def _token_weights(g: Tensor, p: LasaParams) -> Tensor:
    return E.sigmoid(p.mlp2(E.relu(p.mlp1(g))))


def lasa_weights(enc: DirectionalEncoding, p: LasaParams) -> AttentionWeights3D:
    w = enc.width
    h = enc.height
    g, attn, context = token_attention(enc.tokens, p)
    weights = E.transpose(_token_weights(g, p), (0, 2, 1))  # (N, C, T)
    ax, ay = E.split(weights, 2, [w, h])
    n, c = ax.shape[:2]
    a3d = E.reshape(ax, (n, c, 1, w)) * E.reshape(ay, (n, c, h, 1))
    return AttentionWeights3D(a3d, ax, ay, attn, context)


def lasa_forward(f: Tensor, p: LasaParams) -> Tensor:
    """Refine ``f`` by its LASA weight volume (elementwise product)."""
    f4, squeeze = _batched(f)
    out = f4 * lasa_weights(directional_encode(f4), p).a3d
    return E.reshape(out, f.shape) if squeeze else out


def naive_global_attention(f: Tensor, p: LasaParams, max_tokens: int = DEFAULT_TOKEN_CAP,
                           return_attention: bool = False):
    """Full self-attention over all H*W positions, with the same projection
    and MLP as LASA.  Used only as a cost reference."""
    f4, squeeze = _batched(f)
    n, c, h, w = f4.shape
    if h * w > max_tokens:
        raise ValueError(f"{h * w} tokens exceeds the naive-attention cap of {max_tokens}")
    tokens = E.transpose(E.reshape(f4, (n, c, h * w)), (0, 2, 1))
    g, attn, _ = token_attention(tokens, p)
    weights = E.reshape(E.transpose(_token_weights(g, p), (0, 2, 1)), (n, c, h, w))
    out = f4 * weights
    if squeeze:
        out = E.reshape(out, f.shape)
    return (out, attn) if return_attention else out


class CbamParams(Module):
    """Channel MLP (C -> ceil(C/r) -> C) and the 7x7 spatial convolution."""

    def __init__(self, channels: int, reduction: int = 4, spatial_kernel: int = 7,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        hidden = max(1, math.ceil(channels / reduction))
        self.mlp1 = Linear(channels, hidden, rng)
        self.mlp2 = Linear(hidden, channels, rng)
        self.spatial = Conv2d(2, 1, spatial_kernel, rng=rng)

    def forward(self, f: Tensor) -> Tensor:
        return cbam_forward(f, self)

    def zero_(self) -> "CbamParams":
        for _, t in self.named_parameters():
            t.data = np.zeros_like(t.data)
        return self


def cbam_forward(f: Tensor, p: CbamParams) -> Tensor:
    f4, squeeze = _batched(f)
    n, c = f4.shape[:2]

    def mlp(z):
        return p.mlp2(E.relu(p.mlp1(z)))

    avg = E.mean_axis(f4, (2, 3))
    mx = E.max_axis(E.reshape(f4, (n, c, -1)), 2)
    gate_c = E.sigmoid(mlp(avg) + mlp(mx))
    x = f4 * E.reshape(gate_c, (n, c, 1, 1))
    desc = E.concat([E.mean_axis(x, 1, keepdims=True), E.max_axis(x, 1, keepdims=True)], axis=1)
    out = x * E.sigmoid(p.spatial(desc))
    return E.reshape(out, f.shape) if squeeze else out


def simam_forward(f: Tensor, lambda_e: float = 1e-4) -> Tensor:
    """Parameter-free energy attention: x * sigmoid(d / (4 (var + lambda)) + 1/2)."""
    f4, squeeze = _batched(f)
    h, w = f4.shape[2:]
    n_minus_1 = max(h * w - 1, 1)
    mu = E.mean_axis(f4, (2, 3), keepdims=True)
    d = (f4 - mu) * (f4 - mu)
    var = E.sum_axis(d, (2, 3), keepdims=True) * (1.0 / n_minus_1)
    e_inv = d / ((var + lambda_e) * 4.0) + 0.5
    out = f4 * E.sigmoid(e_inv)
    return E.reshape(out, f.shape) if squeeze else out


class SimAM(Module):
    def __init__(self, lambda_e: float = 1e-4):
        self.lambda_e = lambda_e

    def forward(self, f: Tensor) -> Tensor:
        return simam_forward(f, self.lambda_e)
