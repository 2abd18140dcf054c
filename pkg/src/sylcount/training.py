"""Optimization loop and partial-retraining adaptation.

Both network families train the same way: ADAM on minibatches of whole
utterances, loss read from the final frame only, early stopping on a
held-out validation set. Adaptation reuses the loop but freezes everything
outside the model's designated tunable partition, so a handful of labelled
minutes can re-target a trained model without touching its feature stack.
"""

from __future__ import annotations

import copy
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .baseline_nets import BlstmCount, blstm_adapt_partition
from .corpus import CorpusManifest
from .errors import DataError, NumericError
from .evaluation import relative_error_pct
from .features import FeatureConfig, cached_extract, model_input
from .nnops import as_feature_tensor, final_frame_outputs, seeded_generator
from .objectives import (
    BatchPrediction,
    decode_ordinal,
    encode_ordinal,
    l1_relative_loss,
    ordinal_loss,
)
from .seeding import child_seed
from .sylnet import SylNet, partition_params

log = logging.getLogger(__name__)

LossKind = str  # "l1_relative" | "ordinal"


@dataclass(frozen=True)
class Sample:
    """One supervised example: features ready for model input plus the
    reference count."""

    utterance_id: str
    speaker_id: str
    features: np.ndarray
    count: int

    def __post_init__(self) -> None:
        if self.features.ndim != 2:
            raise ValueError(f"features must be (T, D), got shape {self.features.shape}")
        if self.count < 1:
            raise ValueError(f"count must be >= 1, got {self.count}")

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 32
    dropout_rate: float = 0.5
    early_stop_patience: int = 10
    max_epochs: int = 200
    seed: int = 0
    loss: LossKind = "l1_relative"
    # optional extra stopping gate: halt once validation error (percent)
    # reaches this level; None trains to patience or the epoch cap
    target_val_error_pct: float | None = None

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.loss not in ("l1_relative", "ordinal"):
            raise ValueError(f"unknown loss {self.loss!r}")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_error_pct: float
    wall_s: float


@dataclass
class TrainLog:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_val_error_pct: float = float("inf")
    stop_reason: str = ""


def build_samples(
    manifest: CorpusManifest,
    ids: list[str] | None,
    feature_config: FeatureConfig,
    cache_dir,
) -> list[Sample]:
    """Extract (or load cached) model-ready features for the given
    utterance ids, in manifest order."""
    by_id = manifest.by_id()
    if ids is None:
        chosen = list(manifest.utterances)
    else:
        missing = [i for i in ids if i not in by_id]
        if missing:
            raise DataError(f"ids not in manifest {manifest.name!r}: {missing[:5]}")
        chosen = [by_id[i] for i in ids]
    samples = []
    for utt in chosen:
        matrix = cached_extract(utt, feature_config, cache_dir)
        samples.append(
            Sample(
                utterance_id=utt.id,
                speaker_id=utt.speaker_id,
                features=model_input(matrix, feature_config),
                count=utt.syllable_count,
            )
        )
    return samples


def _check_loss_head(model, loss: LossKind) -> None:
    if isinstance(model, SylNet):
        head = model.config.head
        if head == "ordinal" and loss != "ordinal":
            raise ValueError("ordinal-head model requires the ordinal loss")
        if head == "scalar" and loss != "l1_relative":
            raise ValueError("scalar-head model requires the l1_relative loss")
    elif isinstance(model, BlstmCount):
        if loss != "l1_relative":
            raise ValueError("the recurrent baseline supports only the l1_relative loss")
    else:
        raise TypeError(f"unsupported model type {type(model).__name__}")


def _make_batches(samples: list[Sample], batch_size: int) -> list[list[Sample]]:
    """Group similar lengths into fixed minibatches; composition never
    changes across epochs, only the batch order does."""
    ordered = sorted(samples, key=lambda s: (s.n_frames, s.utterance_id))
    return [ordered[i : i + batch_size] for i in range(0, len(ordered), batch_size)]


def _batch_tensors(batch: list[Sample], dtype: torch.dtype):
    max_len = max(s.n_frames for s in batch)
    dim = batch[0].features.shape[1]
    feats = torch.zeros(len(batch), max_len, dim, dtype=dtype)
    for i, s in enumerate(batch):
        feats[i, : s.n_frames] = as_feature_tensor(s.features, dtype)
    lengths = torch.tensor([s.n_frames for s in batch])
    counts = torch.tensor([s.count for s in batch])
    return feats, lengths, counts


def _forward_final(model, feats, lengths, train_mode, dropout_rate, generator) -> torch.Tensor:
    per_frame = model.forward_batch(
        feats, lengths, train_mode=train_mode, dropout_rate=dropout_rate, generator=generator
    )
    return final_frame_outputs(per_frame, lengths)


def _batch_loss(model, batch, config: TrainConfig, train_mode, generator) -> torch.Tensor:
    feats, lengths, counts = _batch_tensors(batch, model.dtype)
    final = _forward_final(model, feats, lengths, train_mode, config.dropout_rate, generator)
    if config.loss == "ordinal":
        rank = model.config.rank
        encoded = [encode_ordinal(s.count, rank) for s in batch]
        return ordinal_loss(BatchPrediction(final, counts), encoded)
    return l1_relative_loss(BatchPrediction(final[:, 0], counts))


def predict_counts(model, samples: list[Sample], batch_size: int = 32) -> np.ndarray:
    """Raw count estimates for a sample list, in input order (no
    reporting-time clamp)."""
    ordinal = isinstance(model, SylNet) and model.config.head == "ordinal"
    by_id: dict[str, float] = {}
    for batch in _make_batches(samples, batch_size):
        feats, lengths, _ = _batch_tensors(batch, model.dtype)
        with torch.no_grad():
            final = _forward_final(model, feats, lengths, False, 0.0, None)
        for s, row in zip(batch, final):
            by_id[s.utterance_id] = float(decode_ordinal(row)) if ordinal else float(row[0])
    return np.asarray([by_id[s.utterance_id] for s in samples], dtype=np.float64)


def dataset_error_pct(model, samples: list[Sample], batch_size: int = 32) -> float:
    """Mean relative error in percent over a sample list (reporting-time
    clamp applied by the metric; the loss itself never clamps)."""
    if not samples:
        raise DataError("cannot evaluate on an empty sample list")
    counts = [s.count for s in samples]
    return relative_error_pct(predict_counts(model, samples, batch_size), counts)


def _snapshot(model) -> dict[str, torch.Tensor]:
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


def _run_epochs(
    model,
    train_samples: list[Sample],
    stop_samples: list[Sample],
    config: TrainConfig,
    on_best=None,
) -> TrainLog:
    """Shared epoch loop: ADAM steps over fixed-composition batches in a
    reshuffled order, stopping decided by the error on stop_samples."""
    batches = _make_batches(train_samples, config.batch_size)
    order_rng = np.random.default_rng(child_seed(config.seed, "train:batch-order"))
    dropout_gen = seeded_generator(child_seed(config.seed, "train:dropout"))
    params = [p for p in model.parameters() if p.requires_grad]
    if not params:
        raise ValueError("model has no trainable parameters")
    optimizer = torch.optim.Adam(
        params,
        lr=config.lr,
        betas=(config.adam_beta1, config.adam_beta2),
        eps=config.adam_eps,
    )

    train_log = TrainLog()
    best_state = _snapshot(model)
    since_best = 0
    for epoch in range(config.max_epochs):
        started = time.perf_counter()
        total, seen = 0.0, 0
        for b in order_rng.permutation(len(batches)):
            batch = batches[int(b)]
            optimizer.zero_grad()
            loss = _batch_loss(model, batch, config, True, dropout_gen)
            if not torch.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch starting with "
                    f"{[s.utterance_id for s in batch[:3]]}"
                )
            loss.backward()
            optimizer.step()
            total += float(loss.detach()) * len(batch)
            seen += len(batch)
        val_error = dataset_error_pct(model, stop_samples, config.batch_size)
        train_log.epochs.append(
            EpochRecord(
                epoch=epoch,
                train_loss=total / seen,
                val_error_pct=val_error,
                wall_s=time.perf_counter() - started,
            )
        )
        if val_error < train_log.best_val_error_pct:
            train_log.best_val_error_pct = val_error
            train_log.best_epoch = epoch
            best_state = _snapshot(model)
            since_best = 0
            if on_best is not None:
                on_best(model, epoch)
        else:
            since_best += 1
        if config.target_val_error_pct is not None and val_error <= config.target_val_error_pct:
            train_log.stop_reason = "target_reached"
            break
        if since_best >= config.early_stop_patience:
            train_log.stop_reason = "early_stop"
            break
    if not train_log.stop_reason:
        train_log.stop_reason = "max_epochs"
    model.load_state_dict(best_state)
    return train_log


def train(
    model,
    train_samples: list[Sample],
    val_samples: list[Sample],
    config: TrainConfig,
    on_best=None,
) -> tuple[object, TrainLog]:
    """Optimize the model's trainable parameters; returns the model loaded
    with the best-validation-epoch state plus the epoch log.

    Deterministic given config.seed: batch composition is fixed by sample
    lengths, batch order is reshuffled each epoch from a derived stream,
    and dropout masks come from a dedicated generator. ``on_best``, when
    given, is called as on_best(model, epoch) at every new validation best.
    """
    if not train_samples:
        raise DataError("empty train set")
    if not val_samples:
        raise DataError("empty validation set")
    _check_loss_head(model, config.loss)
    overlap = {s.utterance_id for s in train_samples} & {s.utterance_id for s in val_samples}
    if overlap:
        raise DataError(f"train and validation sets overlap: {sorted(overlap)[:5]}")
    train_log = _run_epochs(model, train_samples, val_samples, config, on_best)
    return model, train_log


def adapt_partition(model) -> tuple[dict[str, torch.nn.Parameter], dict[str, torch.nn.Parameter]]:
    """(frozen, tunable) parameter partition for either model family."""
    if isinstance(model, SylNet):
        conv_stack, postnet = partition_params(model)
        return conv_stack, postnet
    if isinstance(model, BlstmCount):
        return blstm_adapt_partition(model)
    raise TypeError(f"unsupported model type {type(model).__name__}")


def train_val_split(
    samples: list[Sample], val_fraction: float, seed: int
) -> tuple[list[Sample], list[Sample]]:
    """Hold out roughly val_fraction of the samples, speaker-disjoint when
    more than one speaker is present."""
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must lie in (0, 1)")
    if len(samples) < 2:
        raise DataError("need at least 2 samples to split")
    rng = np.random.default_rng(child_seed(seed, "train:val-split"))
    speakers = sorted({s.speaker_id for s in samples})
    target = val_fraction * len(samples)
    if len(speakers) > 1:
        order = [speakers[int(i)] for i in rng.permutation(len(speakers))]
        val_speakers: set[str] = set()
        n_val = 0
        for spk in order:
            n_spk = sum(1 for s in samples if s.speaker_id == spk)
            # never absorb every speaker into the held-out side
            if len(val_speakers) + 1 == len(speakers):
                break
            val_speakers.add(spk)
            n_val += n_spk
            if n_val >= target:
                break
        val = [s for s in samples if s.speaker_id in val_speakers]
        trainset = [s for s in samples if s.speaker_id not in val_speakers]
        if val and trainset:
            return trainset, val
    # single speaker (or degenerate sizes): fall back to utterance-level split
    idx = rng.permutation(len(samples))
    n_val = min(max(1, round(val_fraction * len(samples))), len(samples) - 1)
    val_ids = {samples[int(i)].utterance_id for i in idx[:n_val]}
    return (
        [s for s in samples if s.utterance_id not in val_ids],
        [s for s in samples if s.utterance_id in val_ids],
    )


def adapt(model, adaptation_samples: list[Sample], config: TrainConfig) -> tuple[object, TrainLog]:
    """Retrain only the model's tunable partition on the adaptation set;
    the input model is left untouched and a new adapted copy is returned.

    Early stopping runs against an internal 80/20 split of the adaptation
    set; with fewer than 5 utterances the whole set both trains and
    decides stopping (with a warning), since a held-out fifth would be
    empty or a single utterance.
    """
    if not adaptation_samples:
        raise DataError("empty adaptation set")
    _check_loss_head(model, config.loss)
    adapted = copy.deepcopy(model)
    frozen, tunable = adapt_partition(adapted)
    for p in frozen.values():
        p.requires_grad_(False)
    for p in tunable.values():
        p.requires_grad_(True)
    if len(adaptation_samples) < 5:
        log.warning(
            "adaptation set has %d utterances; using training loss for stopping",
            len(adaptation_samples),
        )
        train_log = _run_epochs(adapted, adaptation_samples, adaptation_samples, config)
        return adapted, train_log
    train_part, val_part = train_val_split(
        adaptation_samples, 0.2, child_seed(config.seed, "adapt:holdout")
    )
    train_log = _run_epochs(adapted, train_part, val_part, config)
    return adapted, train_log


__all__ = [
    "Sample",
    "TrainConfig",
    "EpochRecord",
    "TrainLog",
    "build_samples",
    "predict_counts",
    "dataset_error_pct",
    "train",
    "adapt",
    "adapt_partition",
    "train_val_split",
]
