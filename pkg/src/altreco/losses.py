"""Training objectives and ground-truth jittering.

All losses return 0-d tensors connected to the active tape.  The log
primitive clamps its input (see tensor.LOG_CLAMP), so saturated
probabilities yield large-but-finite values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .tensor import Tensor


@dataclass
class HuberConfig:
    """Threshold between the quadratic and linear reconstruction regimes."""

    delta: float = 1.0

    def __post_init__(self):
        if self.delta <= 0:
            raise ContractError(f"huber delta must be positive, got {self.delta}")


@dataclass
class JitterConfig:
    """Soft ranges for discriminator inputs built from binary labels.

    A present tag maps into [presence_scale, presence_scale + noise_range)
    and an absent one into [0, noise_range); the defaults keep the two
    ranges disjoint.
    """

    presence_scale: float = 0.7
    noise_range: float = 0.3

    def __post_init__(self):
        if not 0.0 < self.presence_scale <= 1.0:
            raise ContractError(f"presence_scale must be in (0, 1], got {self.presence_scale}")
        if self.noise_range < 0.0:
            raise ContractError(f"noise_range must be non-negative, got {self.noise_range}")
        if self.presence_scale < self.noise_range:
            raise ContractError("presence_scale must be >= noise_range to keep ranges disjoint")


@dataclass
class LossWeights:
    """Relative weights of the four terms in the total training loss."""

    personalized: float = 1.0
    generalized: float = 1.0
    reconstruction: float = 1.0
    adversarial: float = 1.0

    def __post_init__(self):
        for name in ("personalized", "generalized", "reconstruction", "adversarial"):
            if getattr(self, name) < 0:
                raise ContractError(f"loss weight '{name}' must be non-negative")


def huber_reconstruction(pred: Tensor, target: Tensor, cfg: HuberConfig) -> Tensor:
    """Mean Huber penalty on the history reconstruction residual.

    Residual r = target - pred; each element contributes r^2/2 when
    |r| <= delta and delta*(|r| - delta/2) beyond.  The result is the
    mean over all batch x vocab elements, a non-negative scalar.
    """
    if pred.shape != target.shape:
        raise DimensionError(f"huber: shape mismatch {pred.shape} vs {target.shape}")
    delta = cfg.delta
    diff = target - pred
    near = Tensor(np.abs(diff.data) <= delta)  # constant 0/1 mask
    quadratic = (diff * diff) * 0.5
    linear = (abs(diff) - delta / 2.0) * delta
    return (near * quadratic + (1.0 - near) * linear).mean()


def squared_reconstruction(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared residual, the plain-MSE ablation of the Huber loss."""
    if pred.shape != target.shape:
        raise DimensionError(f"mse: shape mismatch {pred.shape} vs {target.shape}")
    diff = target - pred
    return (diff * diff).mean()


def bce_multilabel(pred: Tensor, target: Tensor) -> Tensor:
    """Mean binary cross-entropy over every (sample, tag) element.

    ``pred`` holds probabilities in [0, 1]; ``target`` is the 0/1
    ground-truth indicator matrix.
    """
    if pred.shape != target.shape:
        raise DimensionError(f"bce: shape mismatch {pred.shape} vs {target.shape}")
    if pred.data.min() < 0.0 or pred.data.max() > 1.0:
        raise ContractError("bce: predictions must lie in [0, 1]")
    tdata = target.data
    if not np.isin(tdata, (0.0, 1.0)).all():
        raise ContractError("bce: targets must be 0 or 1")
    return -(target * T.log(pred) + (1.0 - target) * T.log(1.0 - pred)).mean()


def _check_scores(scores: Tensor, name: str) -> None:
    if scores.data.min() < 0.0 or scores.data.max() > 1.0:
        raise ContractError(f"{name}: discriminator scores must lie in [0, 1]")


def adversarial_generator_loss(fake_scores: Tensor, non_saturating: bool = False) -> Tensor:
    """The generator-side objective, mean log(1 - D(fake)).

    The saturating form is the default; ``non_saturating=True`` swaps in
    -mean log D(fake), which descends the same game with stronger early
    gradients.
    """
    _check_scores(fake_scores, "generator loss")
    if non_saturating:
        return -T.log(fake_scores).mean()
    return T.log(1.0 - fake_scores).mean()


def discriminator_loss(real_scores: Tensor, fake_scores: Tensor) -> Tensor:
    """What the discriminator minimises:
    -(mean log D(real) + mean log(1 - D(fake))).

    This is the negation of the maximised real/fake objective, so one
    descent-only optimizer serves both players.
    """
    _check_scores(real_scores, "discriminator loss")
    _check_scores(fake_scores, "discriminator loss")
    return -(T.log(real_scores).mean() + T.log(1.0 - fake_scores).mean())


def jitter_ground_truth(
    labels: np.ndarray, cfg: JitterConfig, rng: np.random.Generator
) -> np.ndarray:
    """Map binary labels into the soft ranges the discriminator sees.

    Each entry becomes label * presence_scale + uniform(0, noise_range),
    with an independent draw per entry, so present tags land in
    [presence_scale, presence_scale + noise_range) and absent ones in
    [0, noise_range).
    """
    labels = np.asarray(labels, dtype=np.float64)
    if not np.isin(labels, (0.0, 1.0)).all():
        raise ContractError("jitter: labels must be 0 or 1")
    return labels * cfg.presence_scale + rng.uniform(0.0, cfg.noise_range, size=labels.shape)


def total_loss(
    personalized: Optional[Tensor],
    generalized: Optional[Tensor],
    reconstruction: Optional[Tensor],
    adversarial: Optional[Tensor],
    weights: LossWeights,
) -> Tensor:
    """Weighted sum of the four training terms.

    A term passed as None is absent (its gated ablation), regardless of
    its weight.
    """
    terms = [
        (personalized, weights.personalized),
        (generalized, weights.generalized),
        (reconstruction, weights.reconstruction),
        (adversarial, weights.adversarial),
    ]
    total: Optional[Tensor] = None
    for term, weight in terms:
        if term is None:
            continue
        weighted = term * weight
        total = weighted if total is None else total + weighted
    if total is None:
        raise ContractError("total_loss: all terms are absent")
    return total
