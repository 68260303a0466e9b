"""Adam and SGD over a ParameterSet.

State is kept in float32 so checkpoint round-trips reproduce the update
sequence bit for bit. Weight decay is folded into the gradient (L2 style)
before the moment updates, matching the common strong-baseline convention.
"""

from __future__ import annotations

import numpy as np

from .nn import ParameterSet
from .tensor import GraphError


class Adam:
    def __init__(self, params: ParameterSet, lr=3.5e-4, betas=(0.9, 0.999),
                 eps=1e-8, weight_decay=0.0):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.params.items()}

    def step(self):
        if not self.params.consume_ready():
            raise GraphError("optimizer step before backward")
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in self.params.params.items():
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.grad = None

    def state_arrays(self):
        out = {}
        for name in self.params.params:
            out[f"m.{name}"] = self.m[name]
            out[f"v.{name}"] = self.v[name]
        return out

    def load_state(self, arrays, t):
        self.t = int(t)
        for name in self.params.params:
            self.m[name][...] = arrays[f"m.{name}"]
            self.v[name][...] = arrays[f"v.{name}"]


class SGD:
    def __init__(self, params: ParameterSet, lr=0.1, weight_decay=0.0):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.t = 0

    def step(self):
        if not self.params.consume_ready():
            raise GraphError("optimizer step before backward")
        self.t += 1
        for p in self.params.params.values():
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            p.data -= self.lr * g
            p.grad = None

    def state_arrays(self):
        return {}

    def load_state(self, arrays, t):
        self.t = int(t)


def make_optimizer(kind: str, params: ParameterSet, lr: float, weight_decay: float):
    if kind == "adam":
        return Adam(params, lr=lr, weight_decay=weight_decay)
    if kind == "sgd":
        return SGD(params, lr=lr, weight_decay=weight_decay)
    raise ValueError(f"unknown optimizer kind {kind!r} (expected 'adam' or 'sgd')")
