"""Dense float tensors with reverse-mode automatic differentiation.

Every op records a backward closure and the tensors it consumed; the tape is
the set of result tensors ordered by creation. ``backward`` replays the part
of the tape reachable from the root in reverse creation order, which visits
each node exactly once after all of its downstream gradient contributions
have accumulated.

Shapes are fixed per op; there is no general broadcasting beyond what the
listed ops need. Default dtype is float32. Passing float64 arrays switches
the whole chain to float64, which is the path gradient checks use.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np


class ShapeError(ValueError):
    """Operand dimensions are inconsistent for the requested op."""


class GraphError(RuntimeError):
    """Autodiff contract violation: non-scalar root, repeated backward, step order."""


_creation = itertools.count()
_grad_enabled = [True]


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / metric paths)."""
    _grad_enabled.append(False)
    try:
        yield
    finally:
        _grad_enabled.pop()


class Tensor:
    """A dense float array plus an optional gradient buffer of the same shape."""

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            raise TypeError("wrap raw array data, not another Tensor")
        self.data = np.asarray(data, dtype=np.float32 if dtype is None else dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._bk = None  # closure(grad_out) accumulating into parents
        self._order = next(_creation)
        self._backward_ran = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def backward(self, params=None):
        backward(self, params)

    # arithmetic sugar; scalars mean python numbers, not 0-d tensors
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, scale(other, -1.0))
        return add(self, -float(other))

    def __rsub__(self, other):
        return add(scale(self, -1.0), float(other))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return scale(self, 1.0 / float(other))


def _accum(t: Tensor, g: np.ndarray):
    if t.requires_grad:
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        t.grad += g


def _from_op(data: np.ndarray, parents, bk) -> Tensor:
    track = _grad_enabled[-1] and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track, dtype=data.dtype)
    if track:
        out._parents = tuple(parents)
        out._bk = bk
    return out


def backward(root: Tensor, params=None):
    """Populate grads of every requires_grad tensor the root depends on.

    When a ParameterSet is passed, parameters the root does not depend on get
    zero grads (the derivative of a constant), and the set is marked ready
    for an optimizer step. A root can be backpropagated only once.
    """
    if root.data.ndim != 0:
        raise GraphError(f"backward root must be scalar, got shape {root.data.shape}")
    if root._backward_ran:
        raise GraphError("backward already ran for this root; rebuild the graph first")
    root._backward_ran = True

    nodes, seen, stack = [], set(), [root]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        nodes.append(t)
        stack.extend(t._parents)
    nodes.sort(key=lambda t: t._order, reverse=True)

    root.grad = np.ones((), dtype=root.data.dtype)
    for t in nodes:
        if t._bk is not None and t.grad is not None:
            t._bk(t.grad)
            t.grad = None  # interior node: fan-out fully consumed, free the buffer
    if params is not None:
        for p in params.params.values():
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
        params.mark_ready()


# ---------------------------------------------------------------------------
# elementwise and shape ops
# ---------------------------------------------------------------------------

def _require_same_shape(op: str, a: Tensor, b: Tensor):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shapes {a.data.shape} and {b.data.shape} differ")


def add(a: Tensor, b):
    if not isinstance(b, Tensor):
        c = float(b)

        def bk(g):
            _accum(a, g)

        return _from_op(a.data + c, (a,), bk)
    _require_same_shape("add", a, b)

    def bk(g):
        _accum(a, g)
        _accum(b, g)

    return _from_op(a.data + b.data, (a, b), bk)


def mul(a: Tensor, b):
    if not isinstance(b, Tensor):
        return scale(a, float(b))
    _require_same_shape("mul", a, b)

    def bk(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _from_op(a.data * b.data, (a, b), bk)


def div(a: Tensor, b: Tensor):
    _require_same_shape("div", a, b)
    out = a.data / b.data

    def bk(g):
        _accum(a, g / b.data)
        _accum(b, -g * out / b.data)

    return _from_op(out, (a, b), bk)


def scale(a: Tensor, s: float):
    s = float(s)

    def bk(g):
        _accum(a, g * s)

    return _from_op(a.data * s, (a,), bk)


def mul_const(a: Tensor, const: np.ndarray):
    """Elementwise product with a constant array broadcastable to a's shape.

    The constant is data (masks, gates), never differentiated.
    """
    const = np.asarray(const, dtype=a.data.dtype)
    if np.broadcast_shapes(a.data.shape, const.shape) != a.data.shape:
        raise ShapeError(
            f"mul_const: constant of shape {const.shape} does not broadcast to {a.data.shape}"
        )

    def bk(g):
        _accum(a, g * const)

    return _from_op(a.data * const, (a,), bk)


def relu(a: Tensor):
    mask = a.data > 0

    def bk(g):
        _accum(a, g * mask)

    return _from_op(np.maximum(a.data, 0), (a,), bk)


def sigmoid(a: Tensor):
    out = _stable_sigmoid(a.data)

    def bk(g):
        _accum(a, g * out * (1.0 - out))

    return _from_op(out, (a,), bk)


def tanh(a: Tensor):
    out = np.tanh(a.data)

    def bk(g):
        _accum(a, g * (1.0 - out * out))

    return _from_op(out, (a,), bk)


def sqrt(a: Tensor):
    out = np.sqrt(a.data)

    def bk(g):
        _accum(a, g * 0.5 / out)

    return _from_op(out, (a,), bk)


def clamp_min(a: Tensor, floor: float):
    """max(a, floor); gradient passes only where a is strictly above the floor."""
    floor = float(floor)
    mask = a.data > floor

    def bk(g):
        _accum(a, g * mask)

    return _from_op(np.maximum(a.data, floor), (a,), bk)


def concat(tensors, axis: int = 1):
    tensors = list(tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bk(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(t, g[tuple(idx)])

    return _from_op(np.concatenate([t.data for t in tensors], axis=axis), tensors, bk)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def sum_all(a: Tensor):
    def bk(g):
        _accum(a, np.full_like(a.data, g))

    return _from_op(a.data.sum(dtype=a.data.dtype), (a,), bk)


def mean_all(a: Tensor):
    n = a.data.size

    def bk(g):
        _accum(a, np.full_like(a.data, g / n))

    return _from_op(np.asarray(a.data.mean(), dtype=a.data.dtype), (a,), bk)


def row_sum(a: Tensor):
    """[N, D] -> [N], summing the feature axis."""
    if a.data.ndim != 2:
        raise ShapeError(f"row_sum expects a 2-d tensor, got shape {a.data.shape}")

    def bk(g):
        _accum(a, np.repeat(g[:, None], a.data.shape[1], axis=1))

    return _from_op(a.data.sum(axis=1), (a,), bk)


def mean_scalars(items):
    """Mean of a list of scalar tensors, built from adds."""
    items = list(items)
    total = items[0]
    for t in items[1:]:
        total = add(total, t)
    return scale(total, 1.0 / len(items))


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} @ {b.data.shape}")

    def bk(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _from_op(a.data @ b.data, (a, b), bk)


def add_bias(x: Tensor, b: Tensor):
    """[N, D] + [D] with the bias summed over the batch axis on the way back."""
    if x.data.ndim != 2 or b.data.shape != (x.data.shape[1],):
        raise ShapeError(f"add_bias: x {x.data.shape} with bias {b.data.shape}")

    def bk(g):
        _accum(x, g)
        _accum(b, g.sum(axis=0))

    return _from_op(x.data + b.data[None, :], (x, b), bk)


def take_pairs(m: Tensor, rows, cols):
    """Gather m[rows[i], cols[i]] into a vector; backward scatter-adds."""
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)

    def bk(g):
        if m.requires_grad:
            dm = np.zeros_like(m.data)
            np.add.at(dm, (rows, cols), g)
            _accum(m, dm)

    return _from_op(m.data[rows, cols], (m,), bk)


def pairwise_sqdist(e: Tensor):
    """Squared Euclidean distances between all rows of [B, D] -> [B, B]."""
    if e.data.ndim != 2:
        raise ShapeError(f"pairwise_sqdist expects [B, D], got {e.data.shape}")
    x = e.data
    sq = (x * x).sum(axis=1)
    out = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (x @ x.T), 0.0)

    def bk(g):
        rowcol = g.sum(axis=1) + g.sum(axis=0)
        _accum(e, 2.0 * (rowcol[:, None] * x - g @ x - g.T @ x))

    return _from_op(out, (e,), bk)


# ---------------------------------------------------------------------------
# structured layers
# ---------------------------------------------------------------------------

def _im2col(xp, kh, kw, stride, oh, ow):
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    return cols.reshape(n, c * kh * kw, oh * ow)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0):
    """2-d cross-correlation via im2col + matmul. x [N,C,H,W], weight [Co,C,kh,kw]."""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError(f"conv2d: need 4-d input/weight, got {x.data.shape} / {weight.data.shape}")
    n, c, h, w = x.data.shape
    co, cw, kh, kw = weight.data.shape
    if cw != c:
        raise ShapeError(f"conv2d: input has {c} channels but weight expects {cw}")
    if bias.data.shape != (co,):
        raise ShapeError(f"conv2d: bias shape {bias.data.shape}, expected ({co},)")
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be >= 1, got {stride}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError(
            f"conv2d: kernel {kh}x{kw} exceeds padded input {h + 2 * padding}x{w + 2 * padding}"
        )
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1

    if padding:
        xp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=x.data.dtype)
        xp[:, :, padding : padding + h, padding : padding + w] = x.data
    else:
        xp = x.data
    cols = _im2col(xp, kh, kw, stride, oh, ow)  # [n, c*kh*kw, oh*ow]
    w2 = weight.data.reshape(co, c * kh * kw)
    out = (w2 @ cols).reshape(n, co, oh, ow) + bias.data[None, :, None, None]

    def bk(g):
        gl = g.reshape(n, co, oh * ow)
        if weight.requires_grad:
            _accum(weight, np.matmul(gl, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.data.shape))
        if bias.requires_grad:
            _accum(bias, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dcols = np.matmul(w2.T, gl).reshape(n, c, kh, kw, oh, ow)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += dcols[:, :, i, j]
            _accum(x, dxp[:, :, padding : padding + h, padding : padding + w] if padding else dxp)

    return _from_op(out, (x, weight, bias), bk)


def batchnorm(x: Tensor, scale_t: Tensor, shift: Tensor, running_mean, running_var,
              training: bool, momentum: float = 0.1, eps: float = 1e-5):
    """Channel normalization over axis 1 of [N, C] or [N, C, H, W] input.

    Train mode normalizes with the (biased) batch statistics and updates the
    running buffers in place by exponential moving average; eval mode uses the
    running buffers. Differentiable in both modes.
    """
    nd = x.data.ndim
    if nd not in (2, 4):
        raise ShapeError(f"batchnorm: expected [N,C] or [N,C,H,W], got {x.data.shape}")
    c = x.data.shape[1]
    if scale_t.data.shape != (c,) or shift.data.shape != (c,):
        raise ShapeError(f"batchnorm: scale/shift must have shape ({c},)")
    axes = (0,) if nd == 2 else (0, 2, 3)
    expand = (lambda v: v[None, :]) if nd == 2 else (lambda v: v[None, :, None, None])

    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean = running_mean.astype(x.data.dtype)
        var = running_var.astype(x.data.dtype)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - expand(mean)) * expand(inv)
    out = xhat * expand(scale_t.data) + expand(shift.data)

    m = int(np.prod([x.data.shape[a] for a in axes]))

    def bk(g):
        if scale_t.requires_grad:
            _accum(scale_t, (g * xhat).sum(axis=axes))
        if shift.requires_grad:
            _accum(shift, g.sum(axis=axes))
        if x.requires_grad:
            gs = g * expand(scale_t.data)
            if training:
                dx = (gs - expand(gs.mean(axis=axes)) - xhat * expand((gs * xhat).mean(axis=axes))) * expand(inv)
            else:
                dx = gs * expand(inv)
            _accum(x, dx)

    return _from_op(out, (x, scale_t, shift), bk)


def global_max_pool(x: Tensor):
    """Per-channel spatial max of [N, C, H, W] -> [N, C].

    The gradient routes to exactly one argmax location per (batch, channel);
    ties break to the first maximum in row-major order.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"global_max_pool expects [N,C,H,W], got {x.data.shape}")
    n, c, h, w = x.data.shape
    flat = x.data.reshape(n, c, h * w)
    idx = flat.argmax(axis=2)
    out = np.take_along_axis(flat, idx[:, :, None], axis=2)[:, :, 0]

    def bk(g):
        dflat = np.zeros_like(flat)
        dflat[np.arange(n)[:, None], np.arange(c)[None, :], idx] = g
        _accum(x, dflat.reshape(x.data.shape))

    return _from_op(out, (x,), bk)


# ---------------------------------------------------------------------------
# fused losses
# ---------------------------------------------------------------------------

def softmax_cross_entropy(logits: Tensor, targets):
    """Mean over the batch of -log softmax(logits)[target], max-stabilized."""
    if logits.data.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy expects [B,C] logits, got {logits.data.shape}")
    b, c = logits.data.shape
    targets = np.asarray(targets, dtype=np.intp)
    if targets.shape != (b,):
        raise ShapeError(f"targets shape {targets.shape}, expected ({b},)")
    if targets.min() < 0 or targets.max() >= c:
        raise IndexError(f"target out of range [0, {c})")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    lse = (zmax[:, 0] + np.log(ez.sum(axis=1))).astype(z.dtype)
    loss = np.asarray((lse - z[np.arange(b), targets]).mean(), dtype=z.dtype)
    probs = ez / ez.sum(axis=1, keepdims=True)

    def bk(g):
        d = probs.copy()
        d[np.arange(b), targets] -= 1.0
        _accum(logits, d * (g / b))

    return _from_op(loss, (logits,), bk)


def binary_cross_entropy_logits(logits: Tensor, targets):
    """Mean per-element BCE between logits and soft targets in [0, 1]."""
    t = np.asarray(targets, dtype=logits.data.dtype)
    if t.shape != logits.data.shape:
        raise ShapeError(f"bce: targets shape {t.shape} != logits shape {logits.data.shape}")
    z = logits.data
    per = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    loss = np.asarray(per.mean(), dtype=z.dtype)
    n = z.size

    def bk(g):
        _accum(logits, (_stable_sigmoid(z) - t) * (g / n))

    return _from_op(loss, (logits,), bk)


def _stable_sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# ---------------------------------------------------------------------------
# forward-only resampling
# ---------------------------------------------------------------------------

def bilinear_resize(a: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize the trailing two axes with half-pixel-center bilinear sampling.

    Forward-only by design: it is applied to masks and saliency maps, never
    inside a differentiated path. Source coordinates are
    (dst + 0.5) * in/out - 0.5, clamped to the valid range, so every output
    is a convex combination of the four nearest source pixels.
    """
    a = np.asarray(a)
    *lead, h, w = a.shape
    if (h, w) == (out_h, out_w):
        return a.copy()
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0).astype(a.dtype if a.dtype.kind == "f" else np.float64)
    wx = (xs - x0).astype(wy.dtype)

    flat = a.reshape(-1, h, w)
    top = flat[:, y0[:, None], x0[None, :]] * (1 - wx)[None, None, :] + flat[:, y0[:, None], x1[None, :]] * wx[None, None, :]
    bot = flat[:, y1[:, None], x0[None, :]] * (1 - wx)[None, None, :] + flat[:, y1[:, None], x1[None, :]] * wx[None, None, :]
    out = top * (1 - wy)[None, :, None] + bot * wy[None, :, None]
    return out.reshape(*lead, out_h, out_w).astype(a.dtype if a.dtype.kind == "f" else out.dtype)
