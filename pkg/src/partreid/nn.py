"""Layers built on the tensor engine: conv, batchnorm, linear, GRU cell, BNNeck.

Layers own their parameter tensors; models register them into a ParameterSet
under dotted names for the optimizer and checkpointing.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .rng import RngStream
from .tensor import GraphError, Tensor


class ParameterSet:
    """Named trainable tensors plus persistent buffers (running statistics)."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._ready = False

    def add_param(self, name: str, t: Tensor):
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        if not t.requires_grad:
            raise ValueError(f"parameter {name!r} must require grad")
        self.params[name] = t

    def add_buffer(self, name: str, arr: np.ndarray):
        if name in self.buffers:
            raise ValueError(f"duplicate buffer name {name!r}")
        self.buffers[name] = arr

    def register(self, prefix: str, layer):
        for k, v in layer.params().items():
            self.add_param(f"{prefix}.{k}", v)
        for k, v in layer.buffers().items():
            self.add_buffer(f"{prefix}.{k}", v)

    def mark_ready(self):
        self._ready = True

    def consume_ready(self) -> bool:
        was = self._ready
        self._ready = False
        return was

    def zero_grads(self):
        for p in self.params.values():
            p.grad = None
        self._ready = False


class Conv2d:
    def __init__(self, cin, cout, k, rng: RngStream, stride=1, padding=0):
        self.stride, self.padding = stride, padding
        std = np.sqrt(2.0 / (cin * k * k))
        self.weight = Tensor(rng.normal((cout, cin, k, k), std=std), requires_grad=True)
        self.bias = Tensor(np.zeros(cout), requires_grad=True)

    def __call__(self, x):
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def buffers(self):
        return {}


class BatchNorm:
    """Batchnorm over channel axis 1; works on [N, C] and [N, C, H, W]."""

    def __init__(self, channels, momentum=0.1, eps=1e-5):
        self.momentum, self.eps = momentum, eps
        self.scale = Tensor(np.ones(channels), requires_grad=True)
        self.shift = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=np.float32)
        self.running_var = np.ones(channels, dtype=np.float32)

    def __call__(self, x, training: bool):
        return T.batchnorm(x, self.scale, self.shift, self.running_mean,
                           self.running_var, training, self.momentum, self.eps)

    def params(self):
        return {"scale": self.scale, "shift": self.shift}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}


class Linear:
    def __init__(self, din, dout, rng: RngStream, std=None, bias=True):
        std = np.sqrt(1.0 / din) if std is None else std
        self.weight = Tensor(rng.normal((din, dout), std=std), requires_grad=True)
        self.bias = Tensor(np.zeros(dout), requires_grad=True) if bias else None

    def __call__(self, x):
        out = T.matmul(x, self.weight)
        return T.add_bias(out, self.bias) if self.bias is not None else out

    def params(self):
        out = {"weight": self.weight}
        if self.bias is not None:
            out["bias"] = self.bias
        return out

    def buffers(self):
        return {}


class GRUCell:
    """One-layer gated recurrent cell.

    z = sigmoid(x Wz + h Uz + bz)
    r = sigmoid(x Wr + h Ur + br)
    hcand = tanh(x Wh + (r*h) Uh + bh)
    h' = (1 - z)*h + z*hcand
    """

    def __init__(self, input_dim, hidden_dim, rng: RngStream):
        self.input_dim, self.hidden_dim = input_dim, hidden_dim
        k = 1.0 / np.sqrt(hidden_dim)

        def w(shape):
            return Tensor((rng.uniform(shape) * 2 - 1) * k, requires_grad=True)

        self.wz, self.uz, self.bz = w((input_dim, hidden_dim)), w((hidden_dim, hidden_dim)), w((hidden_dim,))
        self.wr, self.ur, self.br = w((input_dim, hidden_dim)), w((hidden_dim, hidden_dim)), w((hidden_dim,))
        self.wh, self.uh, self.bh = w((input_dim, hidden_dim)), w((hidden_dim, hidden_dim)), w((hidden_dim,))

    def step(self, x: Tensor, h: Tensor) -> Tensor:
        if x.shape[1] != self.input_dim or h.shape[1] != self.hidden_dim:
            raise T.ShapeError(
                f"gru step: x {x.shape} / h {h.shape} vs dims ({self.input_dim}, {self.hidden_dim})"
            )
        z = T.sigmoid(T.add_bias(T.add(T.matmul(x, self.wz), T.matmul(h, self.uz)), self.bz))
        r = T.sigmoid(T.add_bias(T.add(T.matmul(x, self.wr), T.matmul(h, self.ur)), self.br))
        hcand = T.tanh(T.add_bias(T.add(T.matmul(x, self.wh), T.matmul(T.mul(r, h), self.uh)), self.bh))
        return T.add(T.mul(1.0 - z, h), T.mul(z, hcand))

    def params(self):
        return {"wz": self.wz, "uz": self.uz, "bz": self.bz,
                "wr": self.wr, "ur": self.ur, "br": self.br,
                "wh": self.wh, "uh": self.uh, "bh": self.bh}

    def buffers(self):
        return {}


def gru_cell_step(x: Tensor, h_prev: Tensor, cell: GRUCell) -> Tensor:
    return cell.step(x, h_prev)


class BNNeckHead:
    """Identity head: batchnorm neck then a linear classifier.

    Metric losses read the pre-neck embedding; classification reads
    classifier(neck(embedding)). The post-neck feature is what inference
    exports.
    """

    def __init__(self, dim, num_classes, rng: RngStream):
        self.neck = BatchNorm(dim)
        self.classifier = Linear(dim, num_classes, rng, std=0.01)

    def post_neck(self, emb: Tensor, training: bool) -> Tensor:
        return self.neck(emb, training)

    def logits(self, emb: Tensor, training: bool) -> Tensor:
        return self.classifier(self.post_neck(emb, training))

    def params(self):
        out = {}
        for k, v in self.neck.params().items():
            out[f"neck.{k}"] = v
        for k, v in self.classifier.params().items():
            out[f"classifier.{k}"] = v
        return out

    def buffers(self):
        return {f"neck.{k}": v for k, v in self.neck.buffers().items()}
