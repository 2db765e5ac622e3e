"""Class rebalancing at index scale: oversample positives with augmentation,
subsample negatives without replacement."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateInput
from ..imaging import AugmentSpec

# columns of RebalancePlan.augment
AUG_FIELDS = ("flip", "rotation_deg", "brightness_delta", "contrast_scale", "jitter_r", "jitter_g", "jitter_b")
IDENTITY_ROW = np.array([0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0])


@dataclass
class RebalancePlan:
    index: np.ndarray  # original sample index per output entry
    label: np.ndarray
    augment: np.ndarray  # (M, 7) transform parameters; identity rows for untouched copies

    def __len__(self):
        return self.index.size

    @property
    def positive_fraction(self) -> float:
        return float(self.label.mean()) if self.index.size else 0.0

    def spec(self, i: int) -> AugmentSpec:
        f, rot, br, ct, jr, jg, jb = self.augment[i]
        return AugmentSpec(bool(f), float(rot), float(br), float(ct), (float(jr), float(jg), float(jb)))

    def is_augmented(self) -> np.ndarray:
        return np.any(self.augment != IDENTITY_ROW, axis=1)


def target_counts(n_pos: int, n_neg: int, target: float = 0.4, oversample_share: float = 0.65):
    """Output (positives, negatives).

    The total log change in the pos:neg ratio is split between oversampling
    positives (``oversample_share``) and subsampling negatives (the rest).
    """
    if n_pos <= 0 or n_neg <= 0:
        raise DegenerateInput("rebalancing needs both classes")
    if not 0.0 < target < 1.0:
        raise DegenerateInput("target fraction must be in (0, 1)")
    change = (target / (1.0 - target)) * (n_neg / n_pos)
    neg_out = max(1, round(n_neg * change ** (oversample_share - 1.0)))
    pos_out = max(1, round(neg_out * target / (1.0 - target)))
    return pos_out, neg_out


def _draw(indices, count, rng, max_rot, max_brightness, contrast, max_channel):
    """Pick ``count`` entries: a subsample if count <= len, else every index once
    plus augmented duplicates."""
    n = indices.size
    if count <= n:
        pick = np.sort(rng.choice(n, size=count, replace=False))
        return indices[pick], np.tile(IDENTITY_ROW, (count, 1))
    extra = count - n
    src = rng.integers(0, n, size=extra)
    aug = np.empty((extra, len(AUG_FIELDS)))
    aug[:, 0] = rng.random(extra) < 0.5
    aug[:, 1] = rng.uniform(-max_rot, max_rot, extra)
    aug[:, 2] = rng.uniform(-max_brightness, max_brightness, extra)
    aug[:, 3] = rng.uniform(contrast[0], contrast[1], extra)
    aug[:, 4:7] = rng.uniform(-max_channel, max_channel, (extra, 3))
    idx = np.concatenate([indices, indices[src]])
    rows = np.vstack([np.tile(IDENTITY_ROW, (n, 1)), aug])
    return idx, rows


def rebalance(labels, target: float = 0.4, rng=None, oversample_share: float = 0.65,
              max_rot: float = 10.0, max_brightness: float = 20.0, contrast=(0.9, 1.1),
              max_channel: float = 8.0) -> RebalancePlan:
    labels = np.asarray(labels).astype(np.int8)
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    pos_out, neg_out = target_counts(pos.size, neg.size, target, oversample_share)
    from ..numerics import Rng

    rng = rng if rng is not None else Rng(0)
    pi, pa = _draw(pos, pos_out, rng.substream(1), max_rot, max_brightness, contrast, max_channel)
    ni, na = _draw(neg, neg_out, rng.substream(2), max_rot, max_brightness, contrast, max_channel)
    return RebalancePlan(
        index=np.concatenate([pi, ni]),
        label=np.concatenate([np.ones(pi.size, np.int8), np.zeros(ni.size, np.int8)]),
        augment=np.vstack([pa, na]),
    )
