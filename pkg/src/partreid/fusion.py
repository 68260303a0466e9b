"""Recurrent region fusion and its linear-projection comparator.

Pooled region features are fed one by one, in a fixed anatomical order,
through a single GRU cell starting from a zero state; the last hidden state
is the fused embedding. Each region also gets its own BNNeck classifier head
during training to keep the per-region features identity-bearing; those
separate heads are not used at inference.

The comparator branch replaces the recurrence with one shared linear
projection per region (a 1x1 convolution over the region axis) followed by
concatenation, sized so both branches emit the same embedding dimension.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import BNNeckHead, GRUCell, Linear
from .occlusion import ConfigError
from .regions import K, REGIONS
from .rng import RngStream
from .tensor import Tensor

DEFAULT_ORDER = tuple(range(K))  # head, chest, arms, legs, foot, background


def fuse_sequential(pooled: list[Tensor], gru: GRUCell, order=DEFAULT_ORDER) -> Tensor:
    """Run the GRU over pooled region vectors; returns the last hidden state [N, Hd]."""
    if len(order) != len(pooled):
        raise ConfigError(f"region order has {len(order)} entries for {len(pooled)} regions")
    n = pooled[0].shape[0]
    h = Tensor(np.zeros((n, gru.hidden_dim), dtype=pooled[0].dtype))
    for k in order:
        h = gru.step(pooled[k], h)
    return h


def ablation_projection(pooled: list[Tensor], proj: Linear, order=DEFAULT_ORDER) -> Tensor:
    """Project each pooled vector to Hd/K dims with shared weights, then concatenate."""
    return T.concat([proj(pooled[k]) for k in order], axis=1)


def per_region_supervision(pooled: list[Tensor], heads: list[BNNeckHead], labels,
                           training: bool) -> list[Tensor]:
    """One cross-entropy per region through its own BNNeck head. Train mode only."""
    if not training:
        raise ConfigError("per-region supervision is a training-time loss")
    if len(heads) != len(pooled):
        raise ConfigError(f"{len(heads)} heads for {len(pooled)} regions")
    return [T.softmax_cross_entropy(head.logits(p, training=True), labels)
            for p, head in zip(pooled, heads)]


class FusionBranch:
    """GRU fusion (or its projection comparator) plus all its heads."""

    def __init__(self, channels: int, hidden_dim: int, num_classes: int, rng: RngStream,
                 order=DEFAULT_ORDER, use_ablation_branch: bool = False):
        if use_ablation_branch and hidden_dim % len(order) != 0:
            raise ConfigError(
                f"hidden_dim {hidden_dim} must be divisible by K={len(order)} for the projection comparator"
            )
        self.order = tuple(order)
        self.hidden_dim = hidden_dim
        self.use_ablation_branch = use_ablation_branch
        if use_ablation_branch:
            self.proj = Linear(channels, hidden_dim // len(order), rng)
            self.gru = None
        else:
            self.gru = GRUCell(channels, hidden_dim, rng)
            self.proj = None
        self.fused_head = BNNeckHead(hidden_dim, num_classes, rng)
        self.region_heads = [BNNeckHead(channels, num_classes, rng) for _ in range(len(order))]

    def fuse(self, pooled: list[Tensor]) -> Tensor:
        if self.use_ablation_branch:
            return ablation_projection(pooled, self.proj, self.order)
        return fuse_sequential(pooled, self.gru, self.order)

    def params(self):
        out = {}
        core = self.proj if self.use_ablation_branch else self.gru
        core_name = "proj" if self.use_ablation_branch else "gru"
        for k, v in core.params().items():
            out[f"{core_name}.{k}"] = v
        for k, v in self.fused_head.params().items():
            out[f"head.{k}"] = v
        for i, head in enumerate(self.region_heads):
            for k, v in head.params().items():
                out[f"region_head.{REGIONS[self.order[i]]}.{k}"] = v
        return out

    def buffers(self):
        out = {f"head.{k}": v for k, v in self.fused_head.buffers().items()}
        for i, head in enumerate(self.region_heads):
            for k, v in head.buffers().items():
                out[f"region_head.{REGIONS[self.order[i]]}.{k}"] = v
        return out
