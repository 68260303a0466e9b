"""Feature-level occlusion branch: region sampling and occluded pooling.

During training each image keeps only a sampled subset of its body-part
regions; the surviving masked maps are summed and max-pooled, so the branch
must identify the person from whatever parts remain. Background is never in
the sampling pool: it covers the whole image, so keeping it would leak the
full representation and make the occlusion pointless.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .regions import LOWER_TORSO, PART_INDICES, UPPER_TORSO, AlignedRep
from .rng import RngStream
from .tensor import Tensor


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class OcclusionPlan:
    """Indices of regions kept (ascending); everything else is zeroed out."""

    kept: tuple[int, ...]

    @property
    def k_hat(self) -> int:
        return len(self.kept)


KEEP_ALL = OcclusionPlan(kept=PART_INDICES)


def sample_random_baseline(k_hat: int, rng: RngStream, parts=PART_INDICES) -> OcclusionPlan:
    """Keep a uniformly random k_hat-subset of the body parts."""
    if not 1 <= k_hat <= len(parts):
        raise ConfigError(f"k_hat must be in [1, {len(parts)}], got {k_hat}")
    picks = rng.subset(len(parts), k_hat)
    return OcclusionPlan(kept=tuple(parts[i] for i in picks))


def sample_random_torso(k_hat: int, rng: RngStream,
                        upper=UPPER_TORSO, lower=LOWER_TORSO) -> OcclusionPlan:
    """Keep k_hat/2 regions from each torso group, sampled independently."""
    if k_hat % 2 != 0:
        raise ConfigError(f"torso sampling needs an even k_hat, got {k_hat}")
    half = k_hat // 2
    if half < 1 or half > min(len(upper), len(lower)):
        raise ConfigError(
            f"k_hat/2 = {half} must be in [1, {min(len(upper), len(lower))}] "
            f"for groups of size {len(upper)}/{len(lower)}"
        )
    kept_u = [upper[i] for i in rng.subset(len(upper), half)]
    kept_l = [lower[i] for i in rng.subset(len(lower), half)]
    return OcclusionPlan(kept=tuple(sorted(kept_u + kept_l)))


def sample_plan(strategy: str, k_hat: int, rng: RngStream) -> OcclusionPlan:
    if strategy == "random_torso":
        return sample_random_torso(k_hat, rng)
    if strategy == "random_baseline":
        return sample_random_baseline(k_hat, rng)
    raise ConfigError(f"unknown sampling strategy {strategy!r}")


def adversarial_feature(rep: AlignedRep, plan: OcclusionPlan) -> Tensor:
    """Sum the kept regions' masked maps, then global-max-pool. [N, C] out."""
    if not plan.kept:
        raise ConfigError("occlusion plan keeps no regions; the identity would be unrepresentable")
    if any(k < 0 or k >= rep.k for k in plan.kept):
        raise ConfigError(f"plan indices {plan.kept} out of range for {rep.k} regions")
    total = rep.maps[plan.kept[0]]
    for k in plan.kept[1:]:
        total = T.add(total, rep.maps[k])
    return T.global_max_pool(total)


def combined_keep_mask(masks: np.ndarray, plans: list[OcclusionPlan]) -> np.ndarray:
    """Per-image sum of kept-region masks, shaped [N, 1, h, w].

    Multiplying the feature map by this equals summing the kept masked maps
    (multiplication distributes over the constant masks), which is how the
    batched branch forward avoids materializing K maps per image.
    """
    n, _, h, w = masks.shape
    if len(plans) != n:
        raise ConfigError(f"{len(plans)} plans for a batch of {n}")
    out = np.zeros((n, 1, h, w), dtype=masks.dtype)
    for i, plan in enumerate(plans):
        if not plan.kept:
            raise ConfigError("occlusion plan keeps no regions; the identity would be unrepresentable")
        out[i, 0] = masks[i, list(plan.kept)].sum(axis=0)
    return out


def occluded_pool(feat: Tensor, masks: np.ndarray, plans: list[OcclusionPlan]) -> Tensor:
    """Batched occluded embedding: GMP(feat * combined keep mask) -> [N, C]."""
    return T.global_max_pool(T.mul_const(feat, combined_keep_mask(masks, plans)))
