"""Parameter containers built on :mod:`fieldstyle.tensor.core`."""
from __future__ import annotations

import numpy as np

from . import core as T
from .core import Tensor


def parameter(data, name=None):
    return Tensor(data, requires_grad=True, name=name)


class Module:
    """Collects parameters from attributes (tensors, modules, lists of modules)."""

    def named_parameters(self, prefix=""):
        out = {}
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                out[name] = val
            elif isinstance(val, Module):
                out.update(val.named_parameters(name + "."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{name}.{i}."))
                    elif isinstance(item, Tensor) and item.requires_grad:
                        out[f"{name}.{i}"] = item
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self):
        return int(sum(p.size for p in self.parameters()))

    def state_dict(self):
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state, strict=True):
        params = self.named_parameters()
        missing = [k for k in params if k not in state]
        if strict and missing:
            raise KeyError(f"missing parameters: {missing}")
        for k, p in params.items():
            if k in state:
                arr = np.asarray(state[k])
                if arr.shape != p.shape:
                    raise ValueError(f"{k}: shape {arr.shape} != {p.shape}")
                p.data = arr.astype(p.dtype)

    def astype(self, dtype):
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self


class Linear(Module):
    def __init__(self, n_in, n_out, rng, bias=True, scale=None):
        if scale is None:
            scale = np.sqrt(2.0 / n_in)
        self.weight = parameter(rng.standard_normal((n_in, n_out)) * scale)
        self.bias = parameter(np.zeros(n_out)) if bias else None

    def __call__(self, x):
        y = T.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class Conv2d(Module):
    def __init__(self, c_in, c_out, rng, k=3, padding=None, scale=None):
        if scale is None:
            scale = np.sqrt(2.0 / (c_in * k * k))
        self.weight = parameter(rng.standard_normal((k, k, c_in, c_out)) * scale)
        self.bias = parameter(np.zeros(c_out))
        self.padding = k // 2 if padding is None else padding

    def __call__(self, x):
        return T.conv2d(x, self.weight, self.bias, self.padding)


class MLP(Module):
    """Stack of linear layers with relu between them (none after the last)."""

    def __init__(self, sizes, rng):
        self.layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]

    def __call__(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = T.relu(x)
        return x


def zero_module(module):
    for p in module.parameters():
        p.data = np.zeros_like(p.data)
    return module
