"""Parameter containers and the small layer kit the model is assembled from."""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor, conv2d, gelu, layer_norm, linear


def parameter(data):
    return Tensor(data, requires_grad=True)


def trunc_normal(rng, shape, std=0.02):
    return np.clip(rng.standard_normal(shape), -2.0, 2.0) * std


class Module:
    """Base class: parameters are discovered from attributes in definition order."""

    def named_parameters(self, prefix=""):
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor):
                if val.requires_grad and val._backward is None:
                    yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def modules(self):
        yield self
        for val in vars(self).values():
            if isinstance(val, Module):
                yield from val.modules()
            elif isinstance(val, (list, tuple)):
                for item in val:
                    if isinstance(item, Module):
                        yield from item.modules()

    def num_parameters(self):
        return sum(p.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, d_in, d_out, rng, bias=True, std=0.02):
        self.weight = parameter(trunc_normal(rng, (d_in, d_out), std))
        self.bias = parameter(np.zeros(d_out)) if bias else None

    def forward(self, x):
        return linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in, c_out, k, rng, stride=1, padding=None, bias=True):
        if padding is None:
            padding = k // 2
        self.stride, self.padding = stride, padding
        bound = 1.0 / math.sqrt(c_in * k * k)
        self.weight = parameter(rng.uniform(-bound, bound, (c_out, c_in, k, k)))
        self.bias = parameter(np.zeros(c_out)) if bias else None

    def forward(self, x):
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def zero_(self):
        self.weight.data[...] = 0
        if self.bias is not None:
            self.bias.data[...] = 0


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        self.weight = parameter(np.ones(dim))
        self.bias = parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x):
        return layer_norm(x, self.weight, self.bias, self.eps)


class Mlp(Module):
    def __init__(self, dim, hidden, rng):
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def forward(self, x):
        return self.fc2(gelu(self.fc1(x)))
