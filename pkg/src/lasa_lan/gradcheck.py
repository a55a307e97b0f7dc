"""Finite-difference checks of the reverse pass, for single ops and whole models."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import engine as E
from .engine import Tensor, compare_gradients


@dataclass
class GradCheckResult:
    name: str
    max_rel: float
    max_abs_small: float
    n_checked: int
    passed: bool
    n_reduced: int = 0  # probes that straddled a kink and used a smaller step


def _t(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad, dtype=np.float64)


def gradcheck(f: Callable[..., Tensor], inputs: Sequence[np.ndarray], name: str = "", h: float = 1e-5,
              rtol: float = 1e-4, atol: float = 1e-6, max_elems: int | None = None,
              seed: int = 0) -> GradCheckResult:
    """Compare backward against central differences for every input of ``f``.

    ``max_elems`` caps the probed entries per input (sampled without
    replacement); ``None`` probes them all.
    """
    rng = np.random.default_rng(seed)
    with E.precision("verify"):
        leaves = [_t(x, grad=True) for x in inputs]
        E.backward(f(*leaves))
        worst_rel = worst_abs = 0.0
        n = 0
        ok = True
        reduced = 0
        for i, leaf in enumerate(leaves):
            analytic = leaf.grad if leaf.grad is not None else np.zeros(leaf.shape)
            if max_elems is not None and leaf.size > max_elems:
                flat = rng.choice(leaf.size, size=max_elems, replace=False)
                idx = [np.unravel_index(j, leaf.shape) for j in flat]
            else:
                idx = list(np.ndindex(leaf.shape))

            def fi(x, i=i):
                args = [l.detach() for l in leaves]
                args[i] = x
                return f(*args)

            steps: dict = {}
            numeric = E.finite_diff_grad(fi, leaf.data, h, idx, steps)
            reduced += len(steps)
            sel = tuple(np.array(idx).T) if idx and leaf.ndim else ()
            cmp = compare_gradients(analytic[sel], numeric[sel], rtol, atol)
            worst_rel = max(worst_rel, cmp.max_rel)
            worst_abs = max(worst_abs, cmp.max_abs_small)
            ok &= cmp.passed
            n += len(idx)
    return GradCheckResult(name, worst_rel, worst_abs, n, ok, reduced)


def _probe(rng, shape):
    return rng.normal(size=shape)


def primitive_cases(seed: int = 0) -> dict[str, tuple[Callable, list[np.ndarray]]]:
    """One scalar-valued probe per differentiable primitive.

    Each output is contracted with a fixed random tensor so every output
    element contributes a distinct weight.
    """
    rng = np.random.default_rng(seed)

    def contract(shape):
        r = _t(rng.normal(size=shape))
        return lambda y: E.sum_axis(y * r)

    cases = {}

    def add_case(name, fn, inputs, out_shape):
        c = contract(out_shape)
        cases[name] = (lambda *xs, fn=fn, c=c: c(fn(*xs)), inputs)

    x4 = (1, 2, 5, 5)
    add_case("add", lambda a, b: E.add(a, b), [_probe(rng, (2, 3)), _probe(rng, (1, 3))], (2, 3))
    add_case("sub", lambda a, b: E.sub(a, b), [_probe(rng, (2, 3)), _probe(rng, (2, 1))], (2, 3))
    add_case("mul", lambda a, b: E.mul(a, b), [_probe(rng, (2, 3)), _probe(rng, (2, 3))], (2, 3))
    add_case("div", lambda a, b: E.div(a, b), [_probe(rng, (2, 3)), rng.uniform(0.5, 2, (2, 3))], (2, 3))
    add_case("power", lambda a: E.power(a, 0.7), [rng.uniform(0.5, 2, (2, 3))], (2, 3))
    add_case("abs", lambda a: E.abs_(a), [rng.uniform(0.2, 1, (2, 3)) * rng.choice([-1, 1], (2, 3))], (2, 3))
    add_case("maximum", lambda a: E.maximum(a, 0.05), [rng.uniform(0.2, 1, (2, 3)) * rng.choice([-1, 1], (2, 3))], (2, 3))
    add_case("sigmoid", E.sigmoid, [_probe(rng, (2, 3))], (2, 3))
    add_case("relu", E.relu, [rng.uniform(0.1, 1, (2, 3)) * rng.choice([-1, 1], (2, 3))], (2, 3))
    add_case("leaky_relu", lambda a: E.leaky_relu(a, 0.2),
             [rng.uniform(0.1, 1, (2, 3)) * rng.choice([-1, 1], (2, 3))], (2, 3))
    add_case("sum", lambda a: E.sum_axis(a, 1), [_probe(rng, (2, 3, 4))], (2, 4))
    add_case("mean", lambda a: E.mean_axis(a, (0, 2), keepdims=True), [_probe(rng, (2, 3, 4))], (1, 3, 1))
    add_case("max", lambda a: E.max_axis(a, 1), [_probe(rng, (2, 5, 3))], (2, 3))
    add_case("reshape", lambda a: E.reshape(a, (3, 4)), [_probe(rng, (2, 6))], (3, 4))
    add_case("transpose", lambda a: E.transpose(a, (2, 0, 1)), [_probe(rng, (2, 3, 4))], (4, 2, 3))
    add_case("concat", lambda a, b: E.concat([a, b], 1), [_probe(rng, (2, 3)), _probe(rng, (2, 2))], (2, 5))
    add_case("split", lambda a: E.split(a, 1, [2, 3])[1] * 2.0 + E.split(a, 1, [2, 3])[1],
             [_probe(rng, (2, 5))], (2, 3))
    add_case("matmul", E.matmul, [_probe(rng, (2, 3, 4)), _probe(rng, (2, 4, 2))], (2, 3, 2))
    add_case("linear", E.linear, [_probe(rng, (3, 4)), _probe(rng, (2, 4)), _probe(rng, (2,))], (3, 2))
    add_case("softmax", E.softmax_last, [_probe(rng, (3, 5))], (3, 5))
    add_case("conv2d", lambda x, w, b: E.conv2d(x, w, b, 1, 1),
             [_probe(rng, x4), _probe(rng, (3, 2, 3, 3)), _probe(rng, (3,))], (1, 3, 5, 5))
    add_case("conv2d_stride2", lambda x, w, b: E.conv2d(x, w, b, 2, 1),
             [_probe(rng, (1, 2, 6, 6)), _probe(rng, (3, 2, 3, 3)), _probe(rng, (3,))], (1, 3, 3, 3))
    add_case("pixel_shuffle", lambda a: E.pixel_shuffle(a, 2), [_probe(rng, (1, 8, 2, 3))], (1, 2, 4, 6))
    add_case("pixel_unshuffle", lambda a: E.pixel_unshuffle(a, 2), [_probe(rng, (1, 2, 4, 6))], (1, 8, 2, 3))
    add_case("upsample_nearest", lambda a: E.upsample_nearest(a, 2), [_probe(rng, (1, 2, 3, 3))], (1, 2, 6, 6))
    add_case("avg_pool2", E.avg_pool2, [_probe(rng, (1, 2, 5, 4))], (1, 2, 2, 2))
    return cases


def check_primitives(seed: int = 0, h: float = 1e-5) -> list[GradCheckResult]:
    return [gradcheck(fn, inputs, name, h) for name, (fn, inputs) in primitive_cases(seed).items()]


def check_module(module, loss_fn: Callable[[], Tensor], h: float = 1e-5, rtol: float = 1e-4,
                 atol: float = 1e-6, per_tensor: int = 3, seed: int = 0,
                 name: str = "module") -> GradCheckResult:
    """Finite-difference audit of every parameter tensor of ``module``.

    ``loss_fn`` re-runs the forward pass with the module's current
    parameters.  Every tensor gets ``per_tensor`` sampled entries probed
    individually, and one random direction across all parameters at once is
    checked as a directional derivative, so each entry takes part.
    The module must already be in verification precision.  Probes that
    straddle a kink shrink their step (see ``engine.central_difference``).
    """
    rng = np.random.default_rng(seed)
    params = list(module.named_parameters())
    E.backward(loss_fn())
    analytic = {k: p.grad.copy() for k, p in params}
    rel = absm = 0.0
    ok = True
    n = reduced = 0

    for k, p in params:
        m = min(per_tensor, p.size)
        flat = rng.choice(p.size, size=m, replace=False)
        num = np.empty(m)
        ana = np.empty(m)
        for j, fidx in enumerate(flat):
            idx = np.unravel_index(fidx, p.shape)
            old = p.data[idx]

            def evaluate(offset, p=p, idx=idx, old=old):
                p.data[idx] = old + offset
                try:
                    return float(loss_fn().data)
                finally:
                    p.data[idx] = old

            num[j], used = E.central_difference(evaluate, h)
            reduced += used != h
            ana[j] = analytic[k][idx]
        cmp = compare_gradients(ana, num, rtol, atol)
        rel, absm, ok = max(rel, cmp.max_rel), max(absm, cmp.max_abs_small), ok and cmp.passed
        n += m

    direction = {k: rng.normal(size=p.shape) for k, p in params}
    saved = {k: p.data.copy() for k, p in params}

    def along(offset):
        for k, p in params:
            p.data = saved[k] + offset * direction[k]
        try:
            return float(loss_fn().data)
        finally:
            for k, p in params:
                p.data = saved[k]

    num_dir, used = E.central_difference(along, h)
    reduced += used != h
    ana_dir = sum(float((analytic[k] * direction[k]).sum()) for k, _ in params)
    cmp = compare_gradients(np.array([ana_dir]), np.array([num_dir]), rtol, atol)
    rel, absm, ok = max(rel, cmp.max_rel), max(absm, cmp.max_abs_small), ok and cmp.passed
    return GradCheckResult(name, rel, absm, n + 1, ok, int(reduced))
