"""Training objective: the mean of soft Dice loss and binary cross-entropy."""

from __future__ import annotations

import torch
from torch import Tensor

from .errors import ContractError, NumericalError

EPS_CLAMP = 1e-7


def _check_pair(probs: Tensor, target: Tensor) -> None:
    if probs.shape != target.shape:
        raise ContractError(
            f"probabilities {tuple(probs.shape)} and target {tuple(target.shape)} "
            "must have identical shapes"
        )
    if probs.numel() == 0:
        raise ContractError("empty tensors have no loss")


def dice_loss(probs: Tensor, target: Tensor, smooth: float = 1e-6) -> Tensor:
    """Soft Dice loss over the whole batch.

    1 - (2*sum(p*t) + smooth) / (sum(p) + sum(t) + smooth), summed over
    every element at once so all pixels in the batch weigh equally.
    """
    _check_pair(probs, target)
    intersection = (probs * target).sum()
    denom = probs.sum() + target.sum()
    return 1.0 - (2.0 * intersection + smooth) / (denom + smooth)


def bce_loss(probs: Tensor, target: Tensor) -> Tensor:
    """Mean binary cross-entropy on probabilities, clamped for finiteness.

    Probabilities are clamped to [EPS_CLAMP, 1 - EPS_CLAMP] before the
    log so saturated sigmoid outputs cannot produce inf.
    """
    _check_pair(probs, target)
    p = probs.clamp(EPS_CLAMP, 1.0 - EPS_CLAMP)
    return -(target * p.log() + (1.0 - target) * (1.0 - p).log()).mean()


def combined_loss(probs: Tensor, target: Tensor, smooth: float = 1e-6) -> Tensor:
    """Average of :func:`dice_loss` and :func:`bce_loss`.

    Raises :class:`NumericalError` if the result is not finite, naming
    which term went bad.
    """
    dice = dice_loss(probs, target, smooth=smooth)
    bce = bce_loss(probs, target)
    loss = 0.5 * (dice + bce)
    if not torch.isfinite(loss):
        raise NumericalError(
            f"non-finite loss: dice={float(dice.detach())!r} bce={float(bce.detach())!r}"
        )
    return loss
