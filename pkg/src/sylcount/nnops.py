"""Small torch helpers shared by the neural models."""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .errors import NumericError


def seeded_generator(seed: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(seed)
    return g


def init_fan_in_uniform_(module: nn.Module, generator: torch.Generator) -> None:
    """Re-initialize every parameter: weights ~ U(+-1/sqrt(fan_in)), biases zero.

    Iterates parameters in registration order, so the result is a pure
    function of (architecture, generator state).
    """
    for name, p in module.named_parameters():
        with torch.no_grad():
            if "bias" in name:
                p.zero_()
            else:
                fan_in = p.shape[1] * (p.shape[2] if p.dim() == 3 else 1)
                bound = 1.0 / float(np.sqrt(fan_in))
                p.uniform_(-bound, bound, generator=generator)


def dropout(x: torch.Tensor, rate: float, generator: torch.Generator | None) -> torch.Tensor:
    """Inverted dropout driven by an explicit generator for reproducibility."""
    if rate <= 0.0:
        return x
    keep = 1.0 - rate
    mask = (torch.rand(x.shape, generator=generator, dtype=x.dtype) < keep).to(x.dtype)
    return x * mask / keep


def check_finite(x: torch.Tensor, stage: str) -> torch.Tensor:
    if not bool(torch.isfinite(x).all()):
        raise NumericError(f"non-finite activation in {stage}")
    return x


def length_mask(lengths: torch.Tensor, max_len: int, dtype) -> torch.Tensor:
    """(B, 1, T) mask with ones over each sequence's valid frames."""
    ar = torch.arange(max_len, device=lengths.device)
    return (ar[None, :] < lengths[:, None]).to(dtype)[:, None, :]


def final_frame_outputs(per_frame: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
    """Gather each sequence's output at its last valid frame: (B, T, H) -> (B, H).

    This is the only place training losses read model outputs from, which
    keeps every non-final frame out of the loss by construction.
    """
    idx = (lengths - 1).view(-1, 1, 1).expand(-1, 1, per_frame.shape[2])
    return per_frame.gather(1, idx).squeeze(1)


def as_feature_tensor(values: np.ndarray, dtype) -> torch.Tensor:
    arr = np.asarray(values)
    return torch.as_tensor(arr, dtype=dtype)
