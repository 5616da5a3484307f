"""Training objectives: masked-patch reconstruction, re-weighted masked
token prediction, attention-weighted super-resolution, and their sum.

The token loss corrects a structural imbalance in paired radiology text:
negated findings outnumber affirmative descriptors roughly twenty to
one, so uniform weighting lets the model coast on predicting absence.
Descriptor positions get class weights chosen so the two descriptor
groups contribute equally in aggregate while their combined weight
stays equal to the plain-token total. Factors are computed in exact
rational arithmetic; the defining identity holds to the last bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .masking import PatchMaskPlan, TextMaskPlan, patchify

DEFAULT_LAMBDA_NEG = 0.05


@dataclass(frozen=True)
class RebalanceFactors:
    """Descriptor class weights, with the exact rationals that produced them."""

    lambda_neg: float
    lambda_oth: float
    n_random: int
    n_neg: int
    n_oth: int
    lambda_neg_exact: Fraction
    lambda_oth_exact: Fraction

    @property
    def identity_residual(self) -> Fraction:
        """lambda_neg*n_neg + lambda_oth*n_oth - n_a, exact (zero by construction)."""
        n_a = Fraction(self.n_neg + self.n_oth)
        return (
            self.lambda_neg_exact * self.n_neg
            + self.lambda_oth_exact * self.n_oth
            - n_a
        )


def compute_rebalance(
    n_neg: int, n_oth: int, lambda_neg: float = DEFAULT_LAMBDA_NEG, n_random: int = 0
) -> RebalanceFactors:
    """Solve for the other-descriptor weight given the negation weight.

    With n_a = n_neg + n_oth descriptor tokens total, the constraint
    lambda_neg*n_neg + lambda_oth*n_oth = n_a fixes lambda_oth. Division
    is done in Fraction arithmetic on the exact binary value of
    lambda_neg, so the only rounding is the final conversion to float.
    """
    if n_neg < 0 or n_oth < 0:
        raise ValueError(f"compute_rebalance: negative counts ({n_neg}, {n_oth})")
    if n_oth == 0:
        raise ValueError("compute_rebalance: no other-descriptor tokens; weight is undefined")
    if not 0.0 < lambda_neg <= 1.0:
        raise ValueError(f"compute_rebalance: lambda_neg {lambda_neg} outside (0, 1]")
    ln = Fraction(lambda_neg)
    n_a = Fraction(n_neg + n_oth)
    lo = (n_a - ln * n_neg) / n_oth
    if lo <= 0:
        raise ValueError(f"compute_rebalance: derived lambda_oth {float(lo)} not positive")
    return RebalanceFactors(
        lambda_neg=lambda_neg,
        lambda_oth=float(lo),
        n_random=n_random,
        n_neg=n_neg,
        n_oth=n_oth,
        lambda_neg_exact=ln,
        lambda_oth_exact=lo,
    )


def unit_factors(n_neg: int, n_oth: int, n_random: int = 0) -> RebalanceFactors:
    """Uniform weights; the ablation baseline for the re-weighted loss."""
    one = Fraction(1)
    return RebalanceFactors(1.0, 1.0, n_random, n_neg, n_oth, one, one)


def _patch_rows(image: Tensor, patch: int) -> Tensor:
    """Differentiable row-major patchify: (H, W) -> (grid*grid, patch*patch)."""
    h, w = image.shape
    if h != w or h % patch:
        raise ValueError(f"_patch_rows: image {image.shape} not square multiple of {patch}")
    g = h // patch
    tiles = ad.transpose(ad.reshape(image, (g, patch, g, patch)), (0, 2, 1, 3))
    return ad.reshape(tiles, (g * g, patch * patch))


def loss_mim(recon: Tensor, target: np.ndarray, plan: PatchMaskPlan, patch: int) -> Tensor:
    """Mean squared error over masked patches only.

    Both images are cut into the same row-major patch grid and only the
    rows in ``plan.masked`` enter the average, so visible-patch pixels
    cannot influence the value or the gradient.
    """
    if not plan.masked:
        raise ValueError("loss_mim: plan masks no patches")
    idx = np.asarray(plan.masked, dtype=np.int64)
    pred_rows = ad.take_rows(_patch_rows(recon, patch), idx)
    target_rows = patchify(target, patch)[idx]
    return ad.mse(pred_rows, ad.constant(target_rows, dtype=recon.data.dtype))


def loss_mlm(logits: Tensor, target_ids: np.ndarray, plan: TextMaskPlan, factors: RebalanceFactors) -> Tensor:
    """Weighted cross-entropy over masked token positions.

    Random positions weigh 1, negation descriptors ``lambda_neg``, other
    descriptors ``lambda_oth``; the sum is normalized by the total
    weight so the scale is comparable across sequences.
    """
    if logits.shape[0] != plan.seq_len:
        raise ValueError(f"loss_mlm: {logits.shape[0]} logit rows vs plan length {plan.seq_len}")
    masked = plan.masked
    if not masked:
        raise ValueError("loss_mlm: plan masks no tokens")
    nll = ad.cross_entropy_with_logits(logits, np.asarray(target_ids, dtype=np.int64))

    total = None
    weight_sum = 0.0
    for positions, lam in (
        (plan.random, 1.0),
        (plan.descriptor_neg, factors.lambda_neg),
        (plan.descriptor_oth, factors.lambda_oth),
    ):
        if not positions:
            continue
        part = ad.sum_all(ad.take_rows(nll, np.asarray(positions, dtype=np.int64)))
        part = ad.scale(part, lam)
        total = part if total is None else ad.add(total, part)
        weight_sum += lam * len(positions)
    return ad.scale(total, 1.0 / weight_sum)


def loss_sr(sr_output: Tensor, target: np.ndarray, attention: np.ndarray) -> Tensor:
    """Attention-weighted MSE against the high-resolution target.

    Zero-attention pixels contribute nothing; a uniform all-ones map
    recovers plain MSE up to the stabilizing epsilon in the divisor.
    """
    if sr_output.shape != target.shape or sr_output.shape != attention.shape:
        raise ValueError(
            f"loss_sr: shapes differ, output {sr_output.shape}, "
            f"target {target.shape}, attention {attention.shape}"
        )
    if attention.min() < 0:
        raise ValueError("loss_sr: attention weights must be non-negative")
    return ad.weighted_mse(sr_output, ad.constant(target, dtype=sr_output.data.dtype), attention)


@dataclass
class LossBundle:
    mim: Tensor
    mlm: Tensor
    sr: Tensor
    total: Tensor

    def values(self) -> dict:
        return {
            "l_mim": float(self.mim.item()),
            "l_mlm": float(self.mlm.item()),
            "l_sr": float(self.sr.item()),
            "total": float(self.total.item()),
        }


def loss_total(mim: Tensor, mlm: Tensor, sr: Tensor) -> LossBundle:
    """Sum the three objectives, refusing silently broken terms."""
    for name, term in (("mim", mim), ("mlm", mlm), ("sr", sr)):
        v = term.item()
        if not np.isfinite(v):
            raise FloatingPointError(f"loss_total: {name} term is {v}")
    return LossBundle(mim=mim, mlm=mlm, sr=sr, total=ad.add(ad.add(mim, mlm), sr))
