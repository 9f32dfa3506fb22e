"""Contrastive losses: the SimCLR batch loss and memory-bank instance discrimination.

Embedding layout convention: a batch of N positive pairs is a 2N x D matrix
whose rows (2k, 2k+1) are the two views of example k. Cosine similarity
reduces to a dot product because rows are unit-normalized; the losses
renormalize defensively but reject rows whose norm drifts more than 1e-3
from 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .errors import ConfigInvalid, IndexOutOfRange, NotNormalized, ShapeMismatch

DEFAULT_TEMPERATURE = 0.07

# Rows may drift from unit norm by at most this much before we refuse them.
_NORM_TOLERANCE = 1e-3


def interleave_pairs(view_a: torch.Tensor, view_b: torch.Tensor) -> torch.Tensor:
    """Stack two N x D view embeddings into the 2N x D paired layout."""
    if view_a.shape != view_b.shape:
        raise ShapeMismatch(
            f"view embeddings differ in shape: {tuple(view_a.shape)} vs {tuple(view_b.shape)}"
        )
    out = torch.empty(
        2 * view_a.shape[0], view_a.shape[1], dtype=view_a.dtype, device=view_a.device
    )
    out[0::2] = view_a
    out[1::2] = view_b
    return out


def _checked_normalize(embeddings: torch.Tensor) -> torch.Tensor:
    norms = embeddings.norm(dim=-1)
    deviation = (norms - 1.0).abs().max().item()
    if deviation > _NORM_TOLERANCE:
        raise NotNormalized(
            f"embedding row norm deviates from 1 by {deviation:.2e} (> {_NORM_TOLERANCE:g})"
        )
    return F.normalize(embeddings, dim=-1)


def nt_xent_loss(
    embeddings: torch.Tensor, temperature: float = DEFAULT_TEMPERATURE
) -> torch.Tensor:
    """Normalized-temperature cross-entropy over 2N paired embeddings.

    For each row i with positive partner j, the per-pair term is
    -log( exp(s_ij / tau) / sum_{k != i} exp(s_ik / tau) ), and the batch
    loss averages both orderings of every pair. Differentiable.
    """
    if temperature <= 0:
        raise ConfigInvalid(f"temperature must be > 0, got {temperature}")
    if embeddings.dim() != 2:
        raise ShapeMismatch(f"expected 2N x D embeddings, got shape {tuple(embeddings.shape)}")
    rows = embeddings.shape[0]
    if rows < 2 or rows % 2 != 0:
        raise ShapeMismatch(f"expected an even number of rows >= 2, got {rows}")

    z = _checked_normalize(embeddings)
    logits = (z @ z.T) / temperature
    # k = i is excluded from every denominator.
    logits.fill_diagonal_(float("-inf"))
    log_denom = torch.logsumexp(logits, dim=1)
    positive = torch.arange(rows, device=z.device) ^ 1  # partner of row i
    log_numer = logits[torch.arange(rows, device=z.device), positive]
    return (log_denom - log_numer).mean()


@dataclass
class MemoryBank:
    """Per-example unit-normalized feature slots with momentum updates.

    Slots are initialized as uniform random unit vectors. ``update`` applies
    m_i <- normalize((1 - r) * m_i + r * z_i) in place; training serializes
    sample -> loss -> update, so there is a single writer.
    """

    slots: torch.Tensor
    update_rate: float = 0.5
    num_negatives: int = 4096

    def __post_init__(self):
        if not 0.0 <= self.update_rate <= 1.0:
            raise ConfigInvalid(f"update_rate must be in [0, 1], got {self.update_rate}")
        if self.slots.dim() != 2:
            raise ShapeMismatch(f"bank slots must be M x D, got shape {tuple(self.slots.shape)}")

    @classmethod
    def initialize(
        cls,
        num_examples: int,
        dim: int,
        generator: torch.Generator,
        update_rate: float = 0.5,
        num_negatives: int = 4096,
        dtype: torch.dtype = torch.float32,
    ) -> "MemoryBank":
        slots = torch.randn(num_examples, dim, generator=generator, dtype=dtype)
        return cls(
            slots=F.normalize(slots, dim=-1),
            update_rate=update_rate,
            num_negatives=num_negatives,
        )

    def update(self, embeddings: torch.Tensor, indices: torch.Tensor) -> "MemoryBank":
        """Momentum-update the addressed slots; untouched slots are unchanged."""
        indices = _validated_indices(indices, self.slots.shape[0])
        z = _checked_normalize(embeddings.detach())
        r = self.update_rate
        mixed = (1.0 - r) * self.slots[indices] + r * z
        self.slots[indices] = F.normalize(mixed, dim=-1)
        return self


def update_bank(
    bank: MemoryBank, embeddings: torch.Tensor, indices: torch.Tensor
) -> MemoryBank:
    """Functional alias for MemoryBank.update."""
    return bank.update(embeddings, indices)


def _validated_indices(indices: torch.Tensor, bank_size: int) -> torch.Tensor:
    indices = torch.as_tensor(indices, dtype=torch.long)
    if indices.numel() == 0:
        return indices
    if indices.min() < 0 or indices.max() >= bank_size:
        raise IndexOutOfRange(
            f"indices must address slots in [0, {bank_size}), got range "
            f"[{int(indices.min())}, {int(indices.max())}]"
        )
    return indices


def instdisc_loss(
    embeddings: torch.Tensor,
    indices: torch.Tensor,
    bank: MemoryBank,
    temperature: float = DEFAULT_TEMPERATURE,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Instance-discrimination loss against a memory bank.

    Each example scores its own slot as the positive and ``bank.num_negatives``
    uniformly sampled other slots (without replacement) as negatives; the
    loss is mean cross-entropy with the positive as the true class. This is a
    sampled-softmax form rather than the original NCE approximation.
    """
    if temperature <= 0:
        raise ConfigInvalid(f"temperature must be > 0, got {temperature}")
    indices = _validated_indices(indices, bank.slots.shape[0])
    num_slots = bank.slots.shape[0]
    num_negatives = bank.num_negatives
    if num_negatives > num_slots - 1:
        raise ConfigInvalid(
            f"num_negatives = {num_negatives} exceeds bank size - 1 = {num_slots - 1}"
        )
    z = _checked_normalize(embeddings)

    # Uniform sample without replacement, excluding each example's own slot:
    # rank random keys and keep the smallest, with the own slot pushed to the top.
    keys = torch.rand(z.shape[0], num_slots, generator=generator, device=z.device)
    keys[torch.arange(z.shape[0], device=z.device), indices] = 2.0
    negative_idx = keys.topk(num_negatives, dim=1, largest=False).indices

    positive_logit = (z * bank.slots[indices]).sum(dim=-1, keepdim=True) / temperature
    negative_logits = torch.einsum("bd,bkd->bk", z, bank.slots[negative_idx]) / temperature
    logits = torch.cat([positive_logit, negative_logits], dim=1)
    target = torch.zeros(z.shape[0], dtype=torch.long, device=z.device)
    return F.cross_entropy(logits, target)
