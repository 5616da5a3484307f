"""Mask planning for text tokens and image patches.

Text masking is two-stage: every descriptor-span position is masked
unconditionally (split by polarity into the negative and other sets),
then an exact-count 75% of the remaining non-pad positions is drawn
uniformly without replacement as the random set. Patch masking is the
same exact-count draw over the patch grid. Plans are pure functions of
(inputs, rng state), so a seeded generator reproduces them bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import POLARITY_NEGATIVE, TokenSeq

DEFAULT_TEXT_MASK_RATIO = 0.75
DEFAULT_PATCH_MASK_RATIO = 0.75


def exact_count(ratio: float, n: int) -> int:
    """Number of positions to mask: round(ratio * n), ties to even."""
    return int(round(ratio * n))


@dataclass(frozen=True)
class TextMaskPlan:
    """Disjoint position sets; union with ``visible`` is all non-pads."""

    descriptor_neg: tuple
    descriptor_oth: tuple
    random: tuple
    visible: tuple
    seq_len: int

    @property
    def masked(self) -> tuple:
        return tuple(sorted(self.descriptor_neg + self.descriptor_oth + self.random))


@dataclass(frozen=True)
class PatchMaskPlan:
    masked: tuple
    visible: tuple
    n_patches: int


def plan_text_mask(
    seq: TokenSeq,
    spans: Sequence,
    rng: np.random.Generator,
    ratio: float = DEFAULT_TEXT_MASK_RATIO,
) -> TextMaskPlan:
    """Plan which token positions get masked.

    Descriptor positions are always masked; the random set is an
    exact-count uniform draw over what remains. Positions past
    ``seq.real_len`` (pads) are never candidates.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"plan_text_mask: ratio {ratio} outside [0, 1]")
    neg, oth = set(), set()
    for span in spans:
        for i in span.token_indices:
            if i >= seq.real_len:
                raise ValueError(f"plan_text_mask: span index {i} in padding")
            if span.polarity == POLARITY_NEGATIVE:
                neg.add(i)
            else:
                oth.add(i)
    overlap = neg & oth
    if overlap:
        raise ValueError(f"plan_text_mask: polarity overlap at positions {sorted(overlap)}")

    candidates = np.array(
        [p for p in range(seq.real_len) if p not in neg and p not in oth], dtype=np.int64
    )
    k = exact_count(ratio, candidates.size)
    chosen = rng.permutation(candidates)[:k] if candidates.size else np.empty(0, dtype=np.int64)
    random_set = set(int(i) for i in chosen)
    visible = tuple(
        p for p in range(seq.real_len) if p not in neg and p not in oth and p not in random_set
    )
    return TextMaskPlan(
        descriptor_neg=tuple(sorted(neg)),
        descriptor_oth=tuple(sorted(oth)),
        random=tuple(sorted(random_set)),
        visible=visible,
        seq_len=len(seq),
    )


def apply_text_mask(seq: TokenSeq, plan: TextMaskPlan, mask_id: int) -> TokenSeq:
    """Replace planned positions with the mask id; original seq untouched.

    The caller keeps the input sequence; its ids at masked positions are
    the prediction targets.
    """
    if plan.seq_len != len(seq):
        raise ValueError(f"apply_text_mask: plan built for length {plan.seq_len}, seq is {len(seq)}")
    ids = seq.ids.copy()
    for pos in plan.masked:
        ids[pos] = mask_id
    surfaces = list(seq.surfaces)
    return TokenSeq(
        surfaces=surfaces,
        ids=ids,
        source=seq.source,
        boundary=seq.boundary,
        real_len=seq.real_len,
    )


def plan_patch_mask(
    n_patches: int, rng: np.random.Generator, ratio: float = DEFAULT_PATCH_MASK_RATIO
) -> PatchMaskPlan:
    """Exact-count uniform choice of masked patch indices."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"plan_patch_mask: ratio {ratio} outside [0, 1]")
    if n_patches <= 0:
        raise ValueError(f"plan_patch_mask: n_patches {n_patches} <= 0")
    k = exact_count(ratio, n_patches)
    chosen = set(int(i) for i in rng.permutation(n_patches)[:k])
    masked = tuple(sorted(chosen))
    visible = tuple(p for p in range(n_patches) if p not in chosen)
    return PatchMaskPlan(masked=masked, visible=visible, n_patches=n_patches)


def patchify(image: np.ndarray, patch: int) -> np.ndarray:
    """[H, W] -> [N, patch*patch] rows in row-major patch order."""
    h, w = image.shape
    if h % patch or w % patch:
        raise ValueError(f"patchify: image {image.shape} not divisible by patch {patch}")
    gh, gw = h // patch, w // patch
    tiles = image.reshape(gh, patch, gw, patch).transpose(0, 2, 1, 3)
    return tiles.reshape(gh * gw, patch * patch)


def unpatchify(patches: np.ndarray, height: int, width: int, patch: int) -> np.ndarray:
    """Inverse of :func:`patchify`."""
    gh, gw = height // patch, width // patch
    if patches.shape != (gh * gw, patch * patch):
        raise ValueError(f"unpatchify: got {patches.shape}, expected {(gh * gw, patch * patch)}")
    tiles = patches.reshape(gh, gw, patch, patch).transpose(0, 2, 1, 3)
    return tiles.reshape(height, width)
