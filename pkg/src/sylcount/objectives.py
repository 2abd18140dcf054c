"""Training losses and ordinal count encoding.

Two losses are supported: a mean relative L1 error between predicted and
true counts (also the evaluation metric), and an ordinal objective that
treats a count as R-1 ordered binary decisions "is the count larger than
r". The ordinal loss here measures the Euclidean distance between the
sigmoid activations and the 0/1 target vector, scaled by the true count;
a clamped variant of the raw squared-difference-of-squares reading is
available behind a flag for comparison.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch


@dataclass(frozen=True)
class OrdinalTarget:
    """Cumulative binary encoding of one count: a prefix of ones, then zeros."""

    bits: np.ndarray
    count: int
    rank: int


def encode_ordinal(count: int, rank: int) -> OrdinalTarget:
    """Encode a count as R-1 bits where bit r is 1 iff count > r.

    Counts of rank-1 or more saturate at all ones.
    """
    if rank < 2:
        raise ValueError(f"rank must be >= 2, got {rank}")
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    bits = (np.arange(1, rank) <= count).astype(np.float64)
    return OrdinalTarget(bits=bits, count=count, rank=rank)


def encode_ordinal_batch(counts: Sequence[int], rank: int, dtype=torch.float32) -> torch.Tensor:
    rows = [encode_ordinal(int(c), rank).bits for c in counts]
    return torch.as_tensor(np.stack(rows), dtype=dtype)


def decode_ordinal(activations) -> int:
    """Number of activations strictly above 0.5 (total over any vector,
    monotone or not)."""
    if isinstance(activations, torch.Tensor):
        activations = activations.detach().cpu().numpy()
    activations = np.asarray(activations)
    return int(np.count_nonzero(activations > 0.5))


@dataclass
class BatchPrediction:
    """Model outputs for a minibatch: (M,) scalar estimates or (M, R-1)
    sigmoid activations, with the true counts alongside."""

    estimates: torch.Tensor
    targets: torch.Tensor

    def __post_init__(self) -> None:
        if self.estimates.shape[0] != self.targets.shape[0]:
            raise ValueError(
                f"batch size mismatch: {self.estimates.shape[0]} estimates "
                f"vs {self.targets.shape[0]} targets"
            )
        if self.targets.numel() == 0:
            raise ValueError("empty batch")


def l1_relative_loss(batch: BatchPrediction) -> torch.Tensor:
    """Mean over the batch of |estimate - count| / count (scalar head only)."""
    if batch.estimates.dim() != 1:
        raise TypeError("l1_relative_loss expects a scalar-head batch of shape (M,)")
    targets = batch.targets.to(batch.estimates.dtype)
    if bool((targets < 1).any()):
        raise ValueError("all targets must be >= 1")
    return ((batch.estimates - targets).abs() / targets).mean()


def ordinal_loss(
    batch: BatchPrediction,
    targets_encoded: Sequence[OrdinalTarget],
    literal_clamped: bool = False,
) -> torch.Tensor:
    """Mean over the batch of ||activations - bits||_2 / count.

    With literal_clamped=True, computes sqrt(max(sum(act^2 - bits^2), 0))
    per utterance instead; only meaningful for diagnostics.
    """
    if batch.estimates.dim() != 2:
        raise TypeError("ordinal_loss expects an ordinal-head batch of shape (M, R-1)")
    if len(targets_encoded) != batch.estimates.shape[0]:
        raise ValueError("one encoded target required per batch row")
    widths = {t.bits.shape[0] for t in targets_encoded}
    if widths != {batch.estimates.shape[1]}:
        raise ValueError(
            f"encoded target width {sorted(widths)} does not match head width "
            f"{batch.estimates.shape[1]}"
        )
    if bool((batch.estimates < 0).any()) or bool((batch.estimates > 1).any()):
        raise ValueError("ordinal activations must lie in [0, 1]")
    bits = torch.as_tensor(
        np.stack([t.bits for t in targets_encoded]), dtype=batch.estimates.dtype
    )
    counts = batch.targets.to(batch.estimates.dtype)
    if bool((counts < 1).any()):
        raise ValueError("all targets must be >= 1")
    if literal_clamped:
        radicand = (batch.estimates**2 - bits**2).sum(dim=1).clamp(min=0.0)
        per_utt = torch.sqrt(radicand)
    else:
        per_utt = torch.linalg.vector_norm(batch.estimates - bits, dim=1)
    return (per_utt / counts).mean()
