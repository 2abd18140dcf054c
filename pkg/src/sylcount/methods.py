"""Counting methods behind the experiment harness protocol.

Each method knows how to score a list of utterances and how to produce an
adapted copy of itself from a small labelled set: neural methods retrain
their tunable partition, the envelope method re-estimates its calibration
triplet (entering the source triplet as a candidate, so re-calibration
never loses to it on the data it saw).
"""

from __future__ import annotations

import dataclasses
import logging
from pathlib import Path

import numpy as np

from .audio import load_wav
from .corpus import Utterance
from .envelope import (
    Envelope,
    EnvelopeCalibration,
    EnvelopeConfig,
    band_energy_envelope,
    calibrate,
    count_with_calibration,
)
from .features import FeatureConfig, cached_extract, model_input
from .sylnet import SylNet
from .training import Sample, TrainConfig, adapt, predict_counts

log = logging.getLogger(__name__)


def loss_for_model(model) -> str:
    """The training loss a model's head admits."""
    if isinstance(model, SylNet) and model.config.head == "ordinal":
        return "ordinal"
    return "l1_relative"


class NeuralCountMethod:
    """A trained network plus everything needed to run and adapt it."""

    def __init__(
        self,
        name: str,
        model,
        feature_config: FeatureConfig,
        cache_dir: str | Path,
        adapt_config: TrainConfig,
    ):
        self.name = name
        self.model = model
        self.feature_config = feature_config
        self.cache_dir = Path(cache_dir)
        self.adapt_config = adapt_config
        self._samples: dict[str, Sample] = {}

    def _sample(self, utt: Utterance) -> Sample:
        cached = self._samples.get(utt.id)
        if cached is None:
            matrix = cached_extract(utt, self.feature_config, self.cache_dir)
            cached = Sample(
                utterance_id=utt.id,
                speaker_id=utt.speaker_id,
                features=model_input(matrix, self.feature_config),
                count=utt.syllable_count,
            )
            self._samples[utt.id] = cached
        return cached

    def predict(self, utterances: list[Utterance]) -> np.ndarray:
        samples = [self._sample(u) for u in utterances]
        return predict_counts(self.model, samples, self.adapt_config.batch_size)

    def adapted(self, utterances: list[Utterance], seed: int) -> "NeuralCountMethod":
        samples = [self._sample(u) for u in utterances]
        config = dataclasses.replace(
            self.adapt_config, seed=seed, loss=loss_for_model(self.model)
        )
        adapted_model, train_log = adapt(self.model, samples, config)
        log.info(
            "%s adapted on %d utterances: best error %.2f%% at epoch %d",
            self.name,
            len(utterances),
            train_log.best_val_error_pct,
            train_log.best_epoch,
        )
        copy = NeuralCountMethod(
            self.name, adapted_model, self.feature_config, self.cache_dir, self.adapt_config
        )
        copy._samples = self._samples  # feature cache is read-only shared state
        return copy


class EnvelopePeakMethod:
    """Band-energy envelope peak counting with a linear calibration."""

    def __init__(
        self,
        name: str,
        envelope_config: EnvelopeConfig,
        calibration: EnvelopeCalibration,
    ):
        self.name = name
        self.envelope_config = envelope_config
        self.calibration = calibration
        self._envelopes: dict[str, Envelope] = {}

    def _envelope(self, utt: Utterance) -> Envelope:
        cached = self._envelopes.get(utt.id)
        if cached is None:
            samples, rate = load_wav(utt.audio_path)
            cached = band_energy_envelope(samples, rate, self.envelope_config)
            self._envelopes[utt.id] = cached
        return cached

    def predict(self, utterances: list[Utterance]) -> np.ndarray:
        return np.asarray(
            [count_with_calibration(self._envelope(u), self.calibration) for u in utterances],
            dtype=np.float64,
        )

    def adapted(self, utterances: list[Utterance], seed: int) -> "EnvelopePeakMethod":
        del seed  # calibration is an exhaustive search, nothing random
        envelopes = [self._envelope(u) for u in utterances]
        counts = [u.syllable_count for u in utterances]
        new_cal = calibrate(envelopes, counts, extra_candidates=[self.calibration])
        copy = EnvelopePeakMethod(self.name, self.envelope_config, new_cal)
        copy._envelopes = self._envelopes
        return copy


__all__ = ["NeuralCountMethod", "EnvelopePeakMethod", "loss_for_model"]
