"""Generator MLM loss, replaced-token-detection loss, span-corruption loss and their weighted sum.

`mean` reduction divides each summed term by its own supervised-token count; `sum` divides by the
batch size only, which reproduces the per-sequence sums of the loss definitions.
"""
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import torch
import torch.nn.functional as F

from src.errors import ConfigError, ModelError

logger = logging.getLogger(__name__)

REDUCTIONS = ('mean', 'sum')


def _normalize(summed: torch.Tensor, count: int, batch_size: int, reduction: str) -> torch.Tensor:
    if reduction == 'mean':
        return summed / count
    if reduction == 'sum':
        return summed / batch_size
    raise ConfigError(f'loss_reduction must be one of {REDUCTIONS}, got {reduction}')


def loss_generator(gen_logits: torch.Tensor, mlm_mask: torch.Tensor, original: torch.Tensor,
                   reduction: str = 'mean') -> Tuple[torch.Tensor, int]:
    """-log p_G(x | X_c^MLM) over MLM positions only. `original` holds the ground truth at those positions."""
    if gen_logits.shape[:-1] != mlm_mask.shape or mlm_mask.shape != original.shape:
        raise ModelError(f'shape mismatch: logits {tuple(gen_logits.shape)}, mask {tuple(mlm_mask.shape)}, '
                         f'targets {tuple(original.shape)}')
    count = int(mlm_mask.sum())
    if count == 0:
        logger.warning('No MLM positions in batch: generator loss is 0')
        return torch.zeros((), dtype=gen_logits.dtype, device=gen_logits.device), 0
    summed = F.cross_entropy(gen_logits[mlm_mask], original[mlm_mask], reduction='sum')
    return _normalize(summed, count, gen_logits.size(0), reduction), count


def loss_rtd(probs: torch.Tensor, labels: torch.Tensor, valid_mask: torch.Tensor,
             reduction: str = 'mean') -> Tuple[torch.Tensor, int]:
    """Binary cross-entropy over every non-pad position; `probs` is the probability a token is original
    and a true label (replaced) is scored with -log(1 - p)."""
    if probs.shape != labels.shape or labels.shape != valid_mask.shape:
        raise ModelError(f'shape mismatch: probs {tuple(probs.shape)}, labels {tuple(labels.shape)}, '
                         f'mask {tuple(valid_mask.shape)}')
    count = int(valid_mask.sum())
    is_original = (~labels.bool()).to(probs.dtype)
    summed = F.binary_cross_entropy(probs[valid_mask], is_original[valid_mask], reduction='sum')
    return _normalize(summed, max(count, 1), probs.size(0), reduction), count


def loss_sc(dec_logits: torch.Tensor, target: torch.Tensor, target_mask: torch.Tensor,
            reduction: str = 'mean') -> Tuple[torch.Tensor, int]:
    """Token cross-entropy over all non-pad target positions (sentinels, span tokens and eos)."""
    if dec_logits.shape[:-1] != target.shape or target.shape != target_mask.shape:
        raise ModelError(f'shape mismatch: logits {tuple(dec_logits.shape)}, target {tuple(target.shape)}, '
                         f'mask {tuple(target_mask.shape)}')
    count = int(target_mask.sum())
    summed = F.cross_entropy(dec_logits[target_mask], target[target_mask], reduction='sum')
    return _normalize(summed, max(count, 1), dec_logits.size(0), reduction), count


@dataclass
class HybridLossBreakdown:
    l_g: Optional[torch.Tensor]
    l_rtd: Optional[torch.Tensor]
    l_sc: torch.Tensor
    total: torch.Tensor
    lambda1: float
    lambda2: float
    token_counts: Tuple[int, int, int] = (0, 0, 0)

    def as_metrics(self) -> Dict[str, Optional[float]]:
        def value(term):
            return None if term is None else term.detach().item()

        return dict(l_g=value(self.l_g), l_rtd=value(self.l_rtd), l_sc=value(self.l_sc), total=value(self.total))


def hybrid_loss(l_g: Optional[torch.Tensor], l_rtd: Optional[torch.Tensor], l_sc: torch.Tensor,
                lambda1: float, lambda2: float, token_counts: Tuple[int, int, int] = (0, 0, 0)) -> HybridLossBreakdown:
    """total = l_g + lambda1 * l_rtd + lambda2 * l_sc; absent terms (None) are left out."""
    if lambda1 < 0 or lambda2 < 0:
        raise ConfigError(f'loss weights must be >= 0, got lambda1={lambda1}, lambda2={lambda2}')
    terms = [term for term in (l_g, None if l_rtd is None else lambda1 * l_rtd, lambda2 * l_sc) if term is not None]
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return HybridLossBreakdown(l_g=l_g, l_rtd=l_rtd, l_sc=l_sc, total=total, lambda1=lambda1, lambda2=lambda2,
                               token_counts=token_counts)
