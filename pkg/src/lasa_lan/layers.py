"""Parameter containers: a tiny module system with dotted parameter names."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import engine as E
from .engine import Tensor


LEAKY_GAIN = math.sqrt(2.0 / (1.0 + 0.2 ** 2))


def kaiming_uniform(rng: np.random.Generator, shape: tuple, fan_in: int, gain: float = LEAKY_GAIN) -> np.ndarray:
    """He-uniform weights; the default gain keeps activation scale through leaky ReLU(0.2)."""
    bound = gain * math.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Holds parameters and child modules as attributes, in assignment order."""

    def __setattr__(self, key, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self.__dict__.setdefault("_params", {})[key] = value
        elif isinstance(value, Module):
            self.__dict__.setdefault("_children", {})[key] = value
        object.__setattr__(self, key, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for k, p in self.__dict__.get("_params", {}).items():
            yield prefix + k, p
        for k, m in self.__dict__.get("_children", {}).items():
            yield from m.named_parameters(prefix + k + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, p in own.items():
            if state[k].shape != p.shape:
                raise E.ShapeError(f"{k}: stored shape {state[k].shape} vs model shape {p.shape}")
            p.data = np.array(state[k], dtype=p.dtype)

    def to(self, mode_or_dtype) -> "Module":
        """Cast every parameter in place to a precision mode or dtype."""
        dtype = E.PRECISIONS.get(mode_or_dtype, mode_or_dtype)
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, kernel: int = 3, stride: int = 1,
                 rng: np.random.Generator | None = None, bias: bool = True):
        if kernel % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {kernel}")
        rng = rng or np.random.default_rng(0)
        self.stride = stride
        self.padding = kernel // 2
        self.weight = E.parameter(kaiming_uniform(rng, (cout, cin, kernel, kernel), cin * kernel * kernel))
        if bias:
            self.bias = E.parameter(np.zeros(cout))
        else:
            self.bias = None

    def forward(self, x: Tensor) -> Tensor:
        return E.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class Linear(Module):
    def __init__(self, din: int, dout: int, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.weight = E.parameter(kaiming_uniform(rng, (dout, din), din))
        self.bias = E.parameter(np.zeros(dout))

    def forward(self, x: Tensor) -> Tensor:
        return E.linear(x, self.weight, self.bias)
