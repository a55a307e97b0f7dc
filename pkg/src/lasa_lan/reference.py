"""Slow loop-based references used by the verification report.

Plain Python arithmetic over array elements; nothing here touches the
autodiff engine, so agreement with the vectorised code is an independent check.
"""

import math

import numpy as np


def attention_loop(q, k, v):
    """For each query token: explicit exp/sum over keys, then the weighted value sum."""
    t, c = q.shape
    out = np.zeros((t, c))
    rows = np.zeros((t, t))
    for i in range(t):
        logits = [sum(q[i, d] * k[j, d] for d in range(c)) for j in range(t)]
        top = max(logits)
        ex = [math.exp(l - top) for l in logits]
        z = sum(ex)
        for j in range(t):
            rows[i, j] = ex[j] / z
            for d in range(c):
                out[i, d] += rows[i, j] * v[j, d]
    return out, rows


def mean_abs_loop(a, b):
    a = np.ravel(a)
    b = np.ravel(b)
    total = 0.0
    for i in range(a.size):
        total += abs(float(a[i]) - float(b[i]))
    return total / a.size


def gaussian_loop(size=11, sigma=1.5):
    half = (size - 1) / 2
    g = [math.exp(-((i - half) ** 2) / (2 * sigma * sigma)) for i in range(size)]
    s = sum(g)
    return [[g[i] * g[j] / (s * s) for j in range(size)] for i in range(size)]


def ssim_loop(x, y, size=11, sigma=1.5, k1=0.01, k2=0.03, data_range=1.0):
    """Mean SSIM of two 2-D images from windowed statistics, valid region only."""
    win = gaussian_loop(size, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    h, w = x.shape
    vals = []
    for r in range(h - size + 1):
        for c in range(w - size + 1):
            mx = my = sxx = syy = sxy = 0.0
            for i in range(size):
                for j in range(size):
                    a = float(x[r + i, c + j])
                    b = float(y[r + i, c + j])
                    g = win[i][j]
                    mx += g * a
                    my += g * b
                    sxx += g * a * a
                    syy += g * b * b
                    sxy += g * a * b
            vx = sxx - mx * mx
            vy = syy - my * my
            cov = sxy - mx * my
            vals.append(((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return sum(vals) / len(vals)
