"""Region-masked feature alignment.

A sample carries K = 8 region masks at image resolution: seven binary body
parts plus an all-ones background channel, so the background region pools the
whole feature map and keeps holistic context available downstream. Masks are
rescaled to the feature grid with bilinear interpolation and kept fractional;
multiplying the (post-ReLU) feature map by each mask yields one aligned
feature map per region.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

REGIONS = ("head", "chest", "upper_arm", "lower_arm", "upper_leg", "lower_leg", "foot", "background")
K = len(REGIONS)
BACKGROUND = REGIONS.index("background")
PART_INDICES = tuple(i for i in range(K) if i != BACKGROUND)

# torso grouping used by the occlusion sampler
UPPER_TORSO = tuple(REGIONS.index(n) for n in ("head", "chest", "upper_arm", "lower_arm"))
LOWER_TORSO = tuple(REGIONS.index(n) for n in ("upper_leg", "lower_leg", "foot"))


def resize_masks(masks: np.ndarray, feat_h: int, feat_w: int) -> np.ndarray:
    """Rescale [..., K, H, W] masks to the feature grid; values stay in [0, 1]."""
    if feat_h < 1 or feat_w < 1:
        raise ShapeError(f"feature grid must be positive, got {feat_h}x{feat_w}")
    out = T.bilinear_resize(np.asarray(masks, dtype=np.float32), feat_h, feat_w)
    return np.clip(out, 0.0, 1.0)


class AlignedRep:
    """The K masked feature maps of a batch, with pooled vectors computed lazily."""

    def __init__(self, maps: list[Tensor]):
        self.maps = maps
        self._pooled = None

    @property
    def k(self) -> int:
        return len(self.maps)

    @property
    def pooled(self) -> list[Tensor]:
        if self._pooled is None:
            self._pooled = [T.global_max_pool(m) for m in self.maps]
        return self._pooled


def align(feat: Tensor, masks: np.ndarray) -> AlignedRep:
    """Mask the feature map per region: maps[k] = feat * masks[:, k] over all channels.

    feat is [N, C, h, w]; masks is [N, K, h, w] at feature resolution.
    """
    masks = np.asarray(masks)
    if masks.ndim != 4 or masks.shape[0] != feat.shape[0]:
        raise ShapeError(f"align: masks {masks.shape} do not match features {feat.shape}")
    if masks.shape[2:] != feat.shape[2:]:
        raise ShapeError(
            f"align: mask grid {masks.shape[2:]} != feature grid {feat.shape[2:]}; "
            "resize the masks to the feature grid first"
        )
    return AlignedRep([T.mul_const(feat, masks[:, k : k + 1]) for k in range(masks.shape[1])])


def pool_regions(rep: AlignedRep) -> list[Tensor]:
    """Per-region spatial max pooling; [N, C] per region, gradient through argmax."""
    return rep.pooled
