"""Recurrent end-to-end counting baseline.

Two stacked bidirectional recurrent layers feed a forward recurrent output
layer whose per-frame linear head carries the count estimate; as with the
convolutional model, only the final frame's output enters the loss. The
adaptation partition freezes the bidirectional stack and retrains the
output recurrent layer (with its head).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .features import FeatureMatrix
from .nnops import (
    as_feature_tensor,
    check_finite,
    dropout,
    init_fan_in_uniform_,
    seeded_generator,
)
from .seeding import child_seed
from .sylnet import ForwardTrace


@dataclass(frozen=True)
class BlstmCountConfig:
    cells_per_direction: int = 60
    n_bidirectional_layers: int = 2
    dropout_rate: float = 0.5
    feature_dim: int = 24

    def __post_init__(self) -> None:
        if self.cells_per_direction < 1 or self.n_bidirectional_layers < 1:
            raise ValueError("cells_per_direction and n_bidirectional_layers must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")


class BlstmCount(nn.Module):
    def __init__(self, config: BlstmCountConfig, seed: int = 0, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.config = config
        h = config.cells_per_direction
        self.bidirectional = nn.ModuleList()
        width = config.feature_dim
        for _ in range(config.n_bidirectional_layers):
            self.bidirectional.append(nn.LSTM(width, h, batch_first=True, bidirectional=True))
            width = 2 * h
        self.output_lstm = nn.LSTM(width, h, batch_first=True)
        self.head_dense = nn.Linear(h, 1)
        self.to(dtype)
        self._dtype = dtype
        init_fan_in_uniform_(self, seeded_generator(child_seed(seed, "blstm-init")))

    @property
    def dtype(self) -> torch.dtype:
        return self._dtype

    def forward_batch(
        self,
        feats: torch.Tensor,
        lengths: torch.Tensor,
        train_mode: bool = False,
        dropout_rate: float | None = None,
        generator: torch.Generator | None = None,
    ) -> torch.Tensor:
        """Per-frame scalar outputs (B, T, 1) for a padded batch.

        Sequences run packed, so the backward directions see each
        utterance's true final frame rather than padding.
        """
        rate = self.config.dropout_rate if dropout_rate is None else dropout_rate
        total_len = feats.shape[1]
        packed = pack_padded_sequence(feats, lengths.cpu(), batch_first=True, enforce_sorted=False)
        for i, layer in enumerate(self.bidirectional):
            packed, _ = layer(packed)
            data = check_finite(packed.data, f"bidirectional{i}")
            if train_mode:
                data = dropout(data, rate, generator)
            packed = packed._replace(data=data)
        packed, _ = self.output_lstm(packed)
        data = check_finite(packed.data, "output_lstm")
        if train_mode:
            data = dropout(data, rate, generator)
        packed = packed._replace(data=data)
        out, _ = pad_packed_sequence(packed, batch_first=True, total_length=total_len)
        return check_finite(self.head_dense(out), "head_dense")


def init_params(config: BlstmCountConfig, seed: int, dtype: torch.dtype = torch.float32) -> BlstmCount:
    return BlstmCount(config, seed=seed, dtype=dtype)


def blstm_forward(
    model: BlstmCount,
    features: FeatureMatrix | np.ndarray,
    train_mode: bool = False,
    generator: torch.Generator | None = None,
) -> ForwardTrace:
    """Run one utterance and return its per-frame trace."""
    values = features.values if isinstance(features, FeatureMatrix) else features
    if values.ndim != 2:
        raise ValueError(f"expected a (T, D) feature matrix, got shape {values.shape}")
    if values.shape[1] != model.config.feature_dim:
        raise ValueError(
            f"feature width {values.shape[1]} does not match model input {model.config.feature_dim}"
        )
    feats = as_feature_tensor(values, model.dtype)[None]
    lengths = torch.tensor([feats.shape[1]])
    with torch.no_grad():
        per_frame = model.forward_batch(feats, lengths, train_mode=train_mode, generator=generator)[0]
    per_frame = per_frame.numpy()
    return ForwardTrace(per_frame_head=per_frame, final_estimate=float(per_frame[-1, 0]))


def blstm_adapt_partition(model: BlstmCount) -> tuple[dict[str, nn.Parameter], dict[str, nn.Parameter]]:
    """(frozen, tunable): the bidirectional stack stays frozen, the output
    recurrent layer and its head are retrained."""
    frozen: dict[str, nn.Parameter] = {}
    tunable: dict[str, nn.Parameter] = {}
    for name, p in model.named_parameters():
        if name.startswith(("output_lstm.", "head_dense.")):
            tunable[name] = p
        else:
            frozen[name] = p
    return frozen, tunable
