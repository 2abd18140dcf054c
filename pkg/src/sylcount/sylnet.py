"""Gated-convolutional syllable counting network.

The network stacks a gated convolutional input layer and N residual
gated-conv layers whose skip projections all feed an aggregation head
("PostNet"): the skip sum passes through an affine convolution, a
rectifier, a forward recurrent accumulator, and a dense head emitting
either one regression unit or R-1 ordinal sigmoid units per frame. Only
the last frame's output carries the utterance's count estimate; earlier
frames exist for tracing how the estimate accumulates over time.

Convolutions are centered (zero-padded on both sides), so activations at
frame t draw on both past and future context within the receptive field.
The PostNet partition (skip projections, postnet convolution, recurrent
accumulator, dense head) is the tunable subset during adaptation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
import torch
from torch import nn

from .features import FeatureMatrix
from .nnops import (
    as_feature_tensor,
    check_finite,
    dropout,
    final_frame_outputs,
    init_fan_in_uniform_,
    length_mask,
    seeded_generator,
)
from .seeding import child_seed

HeadKind = Literal["scalar", "ordinal"]


@dataclass(frozen=True)
class SylNetConfig:
    n_layers: int = 10
    n_channels: int = 128
    kernel_len: int = 5
    accumulator_width: int = 128
    head: HeadKind = "scalar"
    rank: int = 0
    dropout_rate: float = 0.5
    feature_dim: int = 24
    dilations: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.n_layers < 1 or self.n_channels < 1 or self.accumulator_width < 1:
            raise ValueError("n_layers, n_channels and accumulator_width must be >= 1")
        if self.kernel_len < 1 or self.kernel_len % 2 == 0:
            raise ValueError(f"kernel_len must be odd and >= 1, got {self.kernel_len}")
        if self.head not in ("scalar", "ordinal"):
            raise ValueError(f"unknown head {self.head!r}")
        if self.head == "ordinal" and self.rank < 2:
            raise ValueError("ordinal head requires rank >= 2")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if self.dilations is not None:
            if len(self.dilations) != self.n_layers:
                raise ValueError("dilations must list one rate per layer")
            if any(d < 1 for d in self.dilations):
                raise ValueError("dilation rates must be >= 1")

    @property
    def head_width(self) -> int:
        return 1 if self.head == "scalar" else self.rank - 1

    @property
    def layer_dilations(self) -> tuple[int, ...]:
        return self.dilations if self.dilations is not None else (1,) * self.n_layers


def receptive_field(config: SylNetConfig) -> int:
    """Span in frames seen by one pre-accumulator activation.

    Centered undilated stacking of the input gated conv, the N layers and
    the postnet convolution gives 1 + (n_layers + 2) * (kernel_len - 1);
    per-layer dilations widen their terms accordingly.
    """
    return 1 + (config.kernel_len - 1) * (2 + sum(config.layer_dilations))


class GatedConvLayer(nn.Module):
    """One residual layer: gated conv unit, residual projection, skip projection."""

    def __init__(self, channels: int, kernel_len: int, dilation: int):
        super().__init__()
        pad = (kernel_len - 1) // 2 * dilation
        self.filter_conv = nn.Conv1d(channels, channels, kernel_len, padding=pad, dilation=dilation)
        self.gate_conv = nn.Conv1d(channels, channels, kernel_len, padding=pad, dilation=dilation)
        self.residual_proj = nn.Conv1d(channels, channels, 1)
        self.skip_proj = nn.Conv1d(channels, channels, 1)

    def gated(self, h: torch.Tensor) -> torch.Tensor:
        return torch.tanh(self.filter_conv(h)) * torch.sigmoid(self.gate_conv(h))


class SylNet(nn.Module):
    """Parameter container and forward computation; see the module docstring."""

    def __init__(self, config: SylNetConfig, seed: int = 0, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.config = config
        k, w, d = config.n_channels, config.kernel_len, config.feature_dim
        pad = (w - 1) // 2
        self.input_filter = nn.Conv1d(d, k, w, padding=pad)
        self.input_gate = nn.Conv1d(d, k, w, padding=pad)
        self.layers = nn.ModuleList(
            GatedConvLayer(k, w, dil) for dil in config.layer_dilations
        )
        self.postnet_conv = nn.Conv1d(k, k, w, padding=pad)
        self.postnet_lstm = nn.LSTM(k, config.accumulator_width, batch_first=True)
        self.head_dense = nn.Linear(config.accumulator_width, config.head_width)
        self.to(dtype)
        self._dtype = dtype
        init_fan_in_uniform_(self, seeded_generator(child_seed(seed, "sylnet-init")))

    @property
    def dtype(self) -> torch.dtype:
        return self._dtype

    def _trunk(
        self,
        x: torch.Tensor,
        mask: torch.Tensor,
        train_mode: bool,
        rate: float,
        generator: torch.Generator | None,
    ) -> torch.Tensor:
        """Convolutional stack up to the rectified postnet conv: (B, K, T).

        Activations at padded frames are zeroed after every stage, so a
        padded batch computes exactly what zero-padding a lone utterance
        would.
        """

        def drop(t: torch.Tensor) -> torch.Tensor:
            return dropout(t, rate, generator) if train_mode else t

        h = torch.tanh(self.input_filter(x)) * torch.sigmoid(self.input_gate(x))
        h = drop(check_finite(h, "input_gated_conv")) * mask
        skip_sum = torch.zeros_like(h)
        for i, layer in enumerate(self.layers):
            g = drop(check_finite(layer.gated(h), f"layer{i}.gated")) * mask
            h = check_finite(layer.residual_proj(g) + h, f"layer{i}.residual") * mask
            skip_sum = skip_sum + layer.skip_proj(g)
        z = torch.relu(self.postnet_conv(skip_sum * mask))
        return drop(check_finite(z, "postnet_conv")) * mask

    def forward_batch(
        self,
        feats: torch.Tensor,
        lengths: torch.Tensor,
        train_mode: bool = False,
        dropout_rate: float | None = None,
        generator: torch.Generator | None = None,
    ) -> torch.Tensor:
        """Per-frame head outputs (B, T, head_width) for a padded batch.

        Padded frames must hold zeros; each sequence's estimate is the row
        at its final valid frame.
        """
        rate = self.config.dropout_rate if dropout_rate is None else dropout_rate
        x = feats.transpose(1, 2)
        mask = length_mask(lengths, feats.shape[1], feats.dtype)
        z = self._trunk(x, mask, train_mode, rate, generator)
        out, _ = self.postnet_lstm(z.transpose(1, 2))
        out = check_finite(out, "postnet_recurrent")
        if train_mode:
            out = dropout(out, rate, generator)
        per_frame = self.head_dense(out)
        if self.config.head == "ordinal":
            per_frame = torch.sigmoid(per_frame)
        return check_finite(per_frame, "head_dense")

    def pre_accumulator_batch(self, feats: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        """Rectified postnet-conv activations (B, T, K), recurrent stage bypassed."""
        x = feats.transpose(1, 2)
        mask = length_mask(lengths, feats.shape[1], feats.dtype)
        return self._trunk(x, mask, train_mode=False, rate=0.0, generator=None).transpose(1, 2)


@dataclass
class ForwardTrace:
    """Per-frame head outputs of one utterance plus the final-frame estimate."""

    per_frame_head: np.ndarray
    final_estimate: float | np.ndarray


def init_params(config: SylNetConfig, seed: int, dtype: torch.dtype = torch.float32) -> SylNet:
    """Fresh deterministic parameters for the given architecture."""
    return SylNet(config, seed=seed, dtype=dtype)


def _single_forward(model, values: np.ndarray, train_mode: bool, generator) -> torch.Tensor:
    if values.ndim != 2:
        raise ValueError(f"expected a (T, D) feature matrix, got shape {values.shape}")
    expected = model.config.feature_dim
    if values.shape[1] != expected:
        raise ValueError(f"feature width {values.shape[1]} does not match model input {expected}")
    feats = as_feature_tensor(values, model.dtype)[None]
    lengths = torch.tensor([feats.shape[1]])
    with torch.no_grad():
        return model.forward_batch(feats, lengths, train_mode=train_mode, generator=generator)[0]


def forward(
    model: SylNet,
    features: FeatureMatrix | np.ndarray,
    train_mode: bool = False,
    generator: torch.Generator | None = None,
) -> ForwardTrace:
    """Run one utterance through the network and return its trace.

    Inference mode is a pure function of (parameters, features); train_mode
    applies dropout driven by the supplied generator.
    """
    values = features.values if isinstance(features, FeatureMatrix) else features
    per_frame = _single_forward(model, values, train_mode, generator).numpy()
    if model.config.head == "scalar":
        final: float | np.ndarray = float(per_frame[-1, 0])
    else:
        final = per_frame[-1].copy()
    return ForwardTrace(per_frame_head=per_frame, final_estimate=final)


def pre_accumulator(model: SylNet, features: FeatureMatrix | np.ndarray) -> np.ndarray:
    """(T, K) probe of the activations entering the recurrent accumulator."""
    values = features.values if isinstance(features, FeatureMatrix) else features
    feats = as_feature_tensor(values, model.dtype)[None]
    lengths = torch.tensor([feats.shape[1]])
    with torch.no_grad():
        return model.pre_accumulator_batch(feats, lengths)[0].numpy()


_POSTNET_PREFIXES = ("postnet_conv.", "postnet_lstm.", "head_dense.")


def _is_postnet(name: str) -> bool:
    return name.startswith(_POSTNET_PREFIXES) or ".skip_proj." in name


def partition_params(model: SylNet) -> tuple[dict[str, nn.Parameter], dict[str, nn.Parameter]]:
    """Split parameters into (conv_stack, postnet); postnet is the tunable
    subset during adaptation and includes the skip projections feeding it."""
    conv_stack: dict[str, nn.Parameter] = {}
    postnet: dict[str, nn.Parameter] = {}
    for name, p in model.named_parameters():
        (postnet if _is_postnet(name) else conv_stack)[name] = p
    return conv_stack, postnet


__all__ = [
    "SylNetConfig",
    "SylNet",
    "ForwardTrace",
    "init_params",
    "forward",
    "pre_accumulator",
    "partition_params",
    "receptive_field",
    "final_frame_outputs",
]
