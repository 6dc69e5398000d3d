"""Small layer toolkit on top of the autograd primitives."""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import DimensionError


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal samples clipped to +-2 std, the usual transformer init."""
    return np.clip(rng.standard_normal(shape) * std, -2.0 * std, 2.0 * std)


class Module:
    """Parameter container; submodules discovered from instance attributes."""

    def named_params(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        for name, value in self.__dict__.items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                out.append((key, value))
            elif isinstance(value, Module):
                out.extend(value.named_params(f"{key}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.named_params(f"{key}.{i}."))
                    elif isinstance(item, Tensor) and item.requires_grad:
                        out.append((f"{key}.{i}", item))
        return out

    def params(self) -> list[Tensor]:
        return [p for _, p in self.named_params()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_params()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_params())
        missing = sorted(set(own) - set(state))
        if missing:
            raise DimensionError(f"checkpoint is missing parameters: {missing[:5]}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise DimensionError(
                    f"parameter {name}: checkpoint shape {arr.shape} != model shape {p.data.shape}")
            p.data = arr.copy()

    def param_checksum(self) -> float:
        return float(sum(np.abs(p.data).sum() for p in self.params()))


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, std: float | None = 0.02,
                 bias: bool = True):
        if std is None:
            std = float(np.sqrt(2.0 / n_in))
        self.weight = ag.parameter(trunc_normal(rng, (n_in, n_out), std))
        self.bias = ag.parameter(np.zeros(n_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = ag.matmul(x, self.weight)
        if self.bias is not None:
            y = ag.add(y, self.bias)
        return y


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, pad: int = 0, bias: bool = True):
        fan_in = c_in * kernel * kernel
        std = float(np.sqrt(2.0 / fan_in))
        self.weight = ag.parameter(rng.standard_normal((c_out, c_in, kernel, kernel)) * std)
        self.bias = ag.parameter(np.zeros(c_out)) if bias else None
        self.stride = stride
        self.pad = pad

    def __call__(self, x: Tensor) -> Tensor:
        y = ag.conv2d(x, self.weight, stride=self.stride, pad=self.pad)
        if self.bias is not None:
            y = ag.add(y, ag.reshape(self.bias, (1, -1, 1, 1)))
        return y


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = ag.parameter(np.ones(dim))
        self.beta = ag.parameter(np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ag.layer_norm(x, self.gamma, self.beta, eps=self.eps)
