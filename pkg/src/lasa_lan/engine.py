"""Dense tensors with reverse-mode differentiation on top of numpy.

Every operation returns a new :class:`Tensor`.  When any operand requires a
gradient the result remembers its parents and a backward rule, and
:func:`backward` replays that record in reverse topological order.

Two working precisions exist: ``"train"`` (float32) and ``"verify"``
(float64).  The active one decides the dtype of freshly created tensors and
of model parameters; operations keep the dtype of their operands.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PRECISIONS = {"train": np.float32, "verify": np.float64}

_state = {"dtype": np.float32, "check_finite": True, "kinks": None}


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


class GraphError(RuntimeError):
    """Misuse of the differentiation record."""


def get_dtype():
    return _state["dtype"]


def set_precision(mode: str) -> None:
    if mode not in PRECISIONS:
        raise ValueError(f"unknown precision {mode!r}; expected one of {sorted(PRECISIONS)}")
    _state["dtype"] = PRECISIONS[mode]


@contextlib.contextmanager
def precision(mode: str):
    """Temporarily switch the default dtype (``"train"`` or ``"verify"``)."""
    old = _state["dtype"]
    set_precision(mode)
    try:
        yield
    finally:
        _state["dtype"] = old


@contextlib.contextmanager
def trace_kinks():
    """Record which side of its kink every piecewise-linear op landed on.

    Two evaluations with equal traces lie in the same linear piece, so a
    central difference between them is free of kink truncation error.
    """
    old = _state["kinks"]
    trace: list[bytes] = []
    _state["kinks"] = trace
    try:
        yield trace
    finally:
        _state["kinks"] = old


def _record_kink(pattern: np.ndarray) -> None:
    if _state["kinks"] is not None:
        _state["kinks"].append(np.packbits(pattern).tobytes())


# ---------------------------------------------------------------------------
# FLOP accounting
# ---------------------------------------------------------------------------


@dataclass
class FlopCounter:
    """Tally of multiply-add work, split by the scope label active at the time."""

    total: int = 0
    by_label: dict = field(default_factory=dict)

    def add(self, n: int, label: str) -> None:
        self.total += n
        self.by_label[label] = self.by_label.get(label, 0) + n

    def __getitem__(self, label: str) -> int:
        return self.by_label.get(label, 0)


_counters: list[FlopCounter] = []
_labels: list[str] = ["other"]


@contextlib.contextmanager
def count_flops():
    counter = FlopCounter()
    _counters.append(counter)
    try:
        yield counter
    finally:
        _counters.remove(counter)


@contextlib.contextmanager
def flop_scope(label: str):
    _labels.append(label)
    try:
        yield
    finally:
        _labels.pop()


def _add_flops(n: int) -> None:
    for c in _counters:
        c.add(int(n), _labels[-1])


# ---------------------------------------------------------------------------
# Tensor
# ---------------------------------------------------------------------------


class Tensor:
    """An immutable n-d array that may take part in a differentiation record."""

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype or _state["dtype"])
        if arr.ndim > 4:
            raise ShapeError(f"tensors have at most 4 axes, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self.op = "leaf"
        self._parents: tuple = ()
        self._backward = None
        self.name = name

    # -- basic properties ---------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name, dtype=dtype)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}{flag})"

    # -- operators ----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def sum(self, axis=None, keepdims=False):
        return sum_axis(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_axis(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    if _state["check_finite"] and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out.name = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


# ---------------------------------------------------------------------------
# Elementwise
# ---------------------------------------------------------------------------


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _binary_operands(a, b, op):
    if not isinstance(a, Tensor):
        a = as_tensor(a, like=b)
    if not isinstance(b, Tensor):
        b = as_tensor(b, like=a)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None
    return a, b


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "div")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data  # non-finite results are reported by _make

    def backward(g):
        gb = -g * out / b.data
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), backward, "div")


def power(x: Tensor, p: float) -> Tensor:
    """``x**p`` for a constant exponent.  Non-integer exponents need ``x > 0``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.power(x.data, p)

    def backward(g):
        return (g * p * np.power(x.data, p - 1),)

    return _make(out, (x,), backward, "power")


def abs_(x: Tensor) -> Tensor:
    _record_kink(x.data > 0)

    def backward(g):
        return (g * np.sign(x.data),)

    return _make(np.abs(x.data), (x,), backward, "abs")


def maximum(x: Tensor, floor: float) -> Tensor:
    """Elementwise ``max(x, floor)`` against a constant."""
    mask = x.data > floor
    _record_kink(mask)

    def backward(g):
        return (g * mask,)

    return _make(np.where(mask, x.data, x.data.dtype.type(floor)), (x,), backward, "maximum")


def _sigmoid_grad(out: np.ndarray, g: np.ndarray) -> np.ndarray:
    return g * out * (1.0 - out)


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype, copy=False)

    def backward(g):
        return (_sigmoid_grad(out, g),)

    return _make(out, (x,), backward, "sigmoid")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    _record_kink(mask)

    def backward(g):
        return (g * mask,)

    return _make(x.data * mask, (x,), backward, "relu")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    _record_kink(x.data > 0)
    scale = np.where(x.data > 0, 1.0, slope).astype(x.dtype)

    def backward(g):
        return (g * scale,)

    return _make(x.data * scale, (x,), backward, "leaky_relu")


# ---------------------------------------------------------------------------
# Reductions and shape manipulation
# ---------------------------------------------------------------------------


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = []
    for a in axis:
        if not -ndim <= a < ndim:
            raise ShapeError(f"axis {a} out of range for {ndim}-d tensor")
        out.append(a % ndim)
    return tuple(sorted(out))


def sum_axis(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape),)

    return _make(np.asarray(out), (x,), backward, "sum")


def mean_axis(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Mean over ``axis`` (an int, a tuple, or None for all axes)."""
    axes = _norm_axes(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, x.shape),)

    return _make(np.asarray(out), (x,), backward, "mean")


def max_axis(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Max over one axis; ties share the incoming gradient equally."""
    axis = _norm_axes(axis, x.ndim)[0]
    m = x.data.max(axis=axis, keepdims=True)
    mask = (x.data == m).astype(x.dtype)
    _record_kink(mask > 0)
    mask /= mask.sum(axis=axis, keepdims=True)
    out = m if keepdims else np.squeeze(m, axis=axis)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * mask,)

    return _make(out, (x,), backward, "max")


def reshape(x: Tensor, shape) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {x.shape} into {tuple(shape)}") from None

    def backward(g):
        return (g.reshape(x.shape),)

    return _make(out, (x,), backward, "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    """Permute axes; ``None`` swaps the last two."""
    if axes is None:
        axes = list(range(x.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        return (g.transpose(inv),)

    return _make(x.data.transpose(axes), (x,), backward, "transpose")


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    ref = parts[0].shape
    axis = axis % len(ref)
    for p in parts[1:]:
        if len(p.shape) != len(ref) or any(
            p.shape[i] != ref[i] for i in range(len(ref)) if i != axis
        ):
            raise ShapeError(f"concat along axis {axis}: shapes {ref} and {p.shape} disagree")
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(np.concatenate([p.data for p in parts], axis=axis), parts, backward, "concat")


def split(x: Tensor, axis: int, sizes: Sequence[int]) -> list[Tensor]:
    axis = axis % x.ndim
    if sum(sizes) != x.shape[axis]:
        raise ShapeError(f"split sizes {list(sizes)} do not sum to extent {x.shape[axis]}")
    out = []
    start = 0
    for n in sizes:
        sl = [slice(None)] * x.ndim
        sl[axis] = slice(start, start + n)
        sl = tuple(sl)

        def backward(g, sl=sl):
            full = np.zeros(x.shape, dtype=g.dtype)
            full[sl] = g
            return (full,)

        out.append(_make(x.data[sl], (x,), backward, "split"))
        start += n
    return out


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner extents differ, shapes {a.shape} and {b.shape}")
    try:
        batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch extents differ, shapes {a.shape} and {b.shape}") from None
    m, k = a.shape[-2:]
    p = b.shape[-1]
    _add_flops(2 * m * k * p * int(np.prod(batch, dtype=np.int64)))

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` on the trailing axis; ``weight`` is (out, in)."""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input width {x.shape[-1]} vs weight shape {weight.shape}")
    y = matmul(x, transpose(weight, (1, 0)))
    return y if bias is None else add(y, bias)


def softmax_last(x: Tensor) -> Tensor:
    """Softmax over the trailing axis, computed after subtracting the row max."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make(out, (x,), backward, "softmax")


# ---------------------------------------------------------------------------
# Convolution and resampling (NCHW)
# ---------------------------------------------------------------------------


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation (no kernel flip) with zero padding."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and kernel, got {x.shape} and {weight.shape}")
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise ShapeError(f"conv2d: input shape {x.shape} has {cin} channels but kernel shape {weight.shape} expects {wcin}")
    if stride < 1:
        raise ValueError("stride must be positive")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    hp, wp = xp.shape[2:]
    if hp < kh or wp < kw:
        raise ShapeError(f"conv2d: padded input {xp.shape} smaller than kernel {weight.shape}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    # (n, ho, wo, cin, kh, kw) contiguous patches
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, cin * kh * kw)
    wmat = weight.data.reshape(cout, -1)
    out = cols @ wmat.T
    out = out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, cout, 1, 1)
    out = np.ascontiguousarray(out)
    _add_flops(2 * n * cout * cin * kh * kw * ho * wo)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, cout)
        gw = (g2.T @ cols).reshape(weight.shape)
        gcols = (g2 @ wmat).reshape(n, ho, wo, cin, kh, kw)
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        for di in range(kh):
            for dj in range(kw):
                gxp[:, :, di:di + stride * (ho - 1) + 1:stride, dj:dj + stride * (wo - 1) + 1:stride] += (
                    gcols[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
                )
        gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, backward, "conv2d")


def pixel_shuffle(x: Tensor, s: int) -> Tensor:
    """Rearrange (N, C*s*s, H, W) into (N, C, H*s, W*s)."""
    n, c, h, w = x.shape
    if c % (s * s):
        raise ShapeError(f"pixel_shuffle: {c} channels not divisible by {s}^2")
    if s == 1:
        return x
    co = c // (s * s)
    out = x.data.reshape(n, co, s, s, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, co, h * s, w * s)

    def backward(g):
        return (g.reshape(n, co, h, s, w, s).transpose(0, 1, 3, 5, 2, 4).reshape(x.shape),)

    return _make(out, (x,), backward, "pixel_shuffle")


def pixel_unshuffle(x: Tensor, s: int) -> Tensor:
    """Inverse of :func:`pixel_shuffle`."""
    n, c, h, w = x.shape
    if h % s or w % s:
        raise ShapeError(f"pixel_unshuffle: spatial {h}x{w} not divisible by {s}")
    if s == 1:
        return x
    out = x.data.reshape(n, c, h // s, s, w // s, s).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * s * s, h // s, w // s)

    def backward(g):
        return (g.reshape(n, c, s, s, h // s, w // s).transpose(0, 1, 4, 2, 5, 3).reshape(x.shape),)

    return _make(out, (x,), backward, "pixel_unshuffle")


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    if factor < 1 or int(factor) != factor:
        raise ValueError(f"upsample factor must be a positive integer, got {factor}")
    if factor == 1:
        return x
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def backward(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return _make(out, (x,), backward, "upsample_nearest")


def avg_pool2(x: Tensor) -> Tensor:
    """Non-overlapping 2x2 mean; trailing odd rows/columns are dropped."""
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    out = x.data[:, :, : 2 * h2, : 2 * w2].reshape(n, c, h2, 2, w2, 2).mean(axis=(3, 5))

    def backward(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[:, :, : 2 * h2, : 2 * w2] = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) / 4.0
        return (gx,)

    return _make(out, (x,), backward, "avg_pool2")


# ---------------------------------------------------------------------------
# Reverse pass
# ---------------------------------------------------------------------------


class Graph:
    """Operations reachable from a loss, in execution order, plus leaf gradients."""

    def __init__(self, ops: list[Tensor]):
        self.ops = ops
        self.grads: dict[int, np.ndarray] = {}
        self._leaves: dict[int, Tensor] = {}

    def grad(self, t: Tensor) -> np.ndarray:
        if id(t) not in self.grads:
            raise GraphError(f"{t!r} is not a gradient-carrying leaf of this graph")
        return self.grads[id(t)]

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self.grads


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> Graph:
    """Accumulate d(loss)/d(leaf) for every leaf with ``requires_grad``.

    Gradients are stored on the returned :class:`Graph` and also assigned to
    each leaf's ``.grad`` attribute (overwriting any previous value).
    """
    if loss.size != 1 or loss.ndim != 0:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    graph = Graph(_topological(loss) if loss.requires_grad else [])
    partial: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.ops):
        g = partial.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            graph.grads[id(node)] = g
            graph._leaves[id(node)] = node
            node.grad = g
            continue
        for p, gp in zip(node._parents, node._backward(g)):
            if not p.requires_grad:
                continue
            if _state["check_finite"] and not np.all(np.isfinite(gp)):
                raise NonFiniteError(f"backward of {node.op} produced non-finite gradient")
            key = id(p)
            partial[key] = partial[key] + gp if key in partial else np.array(gp, dtype=p.dtype)
    return graph


def central_difference(evaluate: Callable[[float], float], h: float = 1e-5, min_h: float = 1e-9,
                       ) -> tuple[float, float]:
    """``(f(+h) - f(-h)) / 2h`` for ``evaluate(offset)``, with a kink guard.

    When the two evaluations fall on different sides of a relu / leaky relu /
    abs / max kink, the step is shrunk tenfold until they agree (or ``min_h``
    is reached).  Returns the derivative and the step actually used.
    """
    while True:
        with trace_kinks() as tp:
            fp = evaluate(h)
        with trace_kinks() as tm:
            fm = evaluate(-h)
        if tp == tm or h / 10 < min_h:
            return (fp - fm) / (2 * h), h
        h /= 10


def finite_diff_grad(f: Callable[[Tensor], Tensor], x: Tensor | np.ndarray, h: float = 1e-5,
                     indices: Iterable[tuple] | None = None, steps: dict | None = None) -> np.ndarray:
    """Central-difference gradient of a scalar function, element by element.

    ``indices`` restricts the probe to the given multi-indices; other entries of
    the result stay zero.  Probes straddling a kink use a smaller step (see
    :func:`central_difference`); if ``steps`` is given, it receives the step
    used for each such index.
    """
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    grad = np.zeros_like(base)
    idx_iter = np.ndindex(base.shape) if indices is None else indices
    for idx in idx_iter:
        old = base[idx]

        def evaluate(offset):
            probe = base.copy()
            probe[idx] = old + offset
            return float(f(Tensor(probe, dtype=np.float64)).data)

        grad[idx], used = central_difference(evaluate, h)
        if steps is not None and used != h:
            steps[idx] = used
    return grad


@dataclass
class GradComparison:
    max_rel: float
    max_abs_small: float
    passed: bool


def compare_gradients(analytic, numeric, rtol: float = 1e-4, atol: float = 1e-6) -> GradComparison:
    """Relative error where the analytic gradient is at least ``atol`` in size,
    absolute error below that."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    diff = np.abs(analytic - numeric)
    small = np.abs(analytic) < atol
    rel = diff[~small] / np.abs(analytic[~small])
    max_rel = float(rel.max()) if rel.size else 0.0
    max_abs = float(diff[small].max()) if small.any() else 0.0
    return GradComparison(max_rel, max_abs, max_rel < rtol and max_abs < atol)
