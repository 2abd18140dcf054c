"""Shared fixtures: synthetic corpora and session-trained models.

Training even the small reference configurations costs tens of seconds on
one core, and several test modules (training, evaluation, CLI, acceptance)
probe the same trained artifacts, so corpora and trained models are built
once per session.
"""

import dataclasses
import time

import pytest

from sylcount.baseline_nets import BlstmCountConfig
from sylcount.baseline_nets import init_params as blstm_init
from sylcount.features import FeatureConfig
from sylcount.sylnet import SylNetConfig
from sylcount.sylnet import init_params as sylnet_init
from sylcount.synth import SynthConfig, generate_corpus
from sylcount.training import TrainConfig, build_samples, train

# small corpus for fast unit tests: short utterances, 3 speakers
UNIT_SYNTH = SynthConfig(
    n_utterances=24,
    min_count=1,
    max_count=4,
    burst_ms_lo=60.0,
    burst_ms_hi=120.0,
    gap_ms_lo=30.0,
    gap_ms_hi=60.0,
    n_speakers=3,
    seed=7,
    name="unit",
)

# source-domain corpus: 200 train + 20 validation + 2 x 20 held-out slices
SOURCE_SYNTH = SynthConfig(
    n_utterances=260,
    min_count=1,
    max_count=8,
    burst_ms_lo=60.0,
    burst_ms_hi=120.0,
    gap_ms_lo=30.0,
    gap_ms_hi=60.0,
    n_speakers=5,
    seed=101,
    name="src",
)

# shifted domain: unseen speakers plus a wider, faster timing distribution
SHIFTED_SYNTH = SynthConfig(
    n_utterances=400,
    min_count=1,
    max_count=8,
    burst_ms_lo=50.0,
    burst_ms_hi=130.0,
    gap_ms_lo=20.0,
    gap_ms_hi=70.0,
    speaker_offset=10,
    seed=203,
    name="shift",
)

SMALL_SYLNET = SylNetConfig(
    n_layers=4, n_channels=32, kernel_len=5, accumulator_width=32, feature_dim=24
)
SMALL_BLSTM = BlstmCountConfig(
    cells_per_direction=24, n_bidirectional_layers=2, dropout_rate=0.0, feature_dim=24
)

# overfit recipes for the trained-model fixtures: dropout off, patience
# disabled, a validation target so training stops once the model is good
# enough. Small batches matter here; large-batch runs on this corpus stall
# in a constant-count basin (the ordinal head is especially prone).
SCALAR_TRAIN = TrainConfig(
    lr=1e-3,
    batch_size=8,
    dropout_rate=0.0,
    max_epochs=200,
    early_stop_patience=200,
    seed=11,
)
ORDINAL_TRAIN = TrainConfig(
    lr=3e-4,
    batch_size=8,
    dropout_rate=0.0,
    max_epochs=200,
    early_stop_patience=200,
    seed=22,
    loss="ordinal",
    target_val_error_pct=6.0,
)
BLSTM_TRAIN = TrainConfig(
    lr=3e-3,
    batch_size=8,
    dropout_rate=0.0,
    max_epochs=150,
    early_stop_patience=150,
    seed=33,
    target_val_error_pct=10.0,
)


@pytest.fixture(scope="session")
def feature_config():
    return FeatureConfig()


@pytest.fixture(scope="session")
def feature_cache(tmp_path_factory):
    return tmp_path_factory.mktemp("feature-cache")


@pytest.fixture(scope="session")
def unit_manifest(tmp_path_factory):
    return generate_corpus(UNIT_SYNTH, tmp_path_factory.mktemp("unit-corpus"))


@pytest.fixture(scope="session")
def unit_samples(unit_manifest, feature_config, feature_cache):
    return build_samples(unit_manifest, None, feature_config, feature_cache)


@pytest.fixture(scope="session")
def source_manifest(tmp_path_factory):
    return generate_corpus(SOURCE_SYNTH, tmp_path_factory.mktemp("source-corpus"))


@pytest.fixture(scope="session")
def source_samples(source_manifest, feature_config, feature_cache):
    return build_samples(source_manifest, None, feature_config, feature_cache)


@pytest.fixture(scope="session")
def source_slices(source_samples):
    """(train, val, heldout_adapt, heldout_test) slices of the source corpus."""
    return (
        source_samples[:200],
        source_samples[200:220],
        source_samples[220:240],
        source_samples[240:260],
    )


@pytest.fixture(scope="session")
def shifted_manifest(tmp_path_factory):
    return generate_corpus(SHIFTED_SYNTH, tmp_path_factory.mktemp("shifted-corpus"))


@pytest.fixture(scope="session")
def trained_scalar(source_slices):
    """Small scalar-head model overfit to the source train set, with its log
    and training wall time."""
    train_s, val_s = source_slices[0], source_slices[1]
    model = sylnet_init(SMALL_SYLNET, seed=11)
    started = time.perf_counter()
    model, log = train(model, train_s, val_s, SCALAR_TRAIN)
    return model, log, time.perf_counter() - started


@pytest.fixture(scope="session")
def trained_ordinal(source_slices):
    train_s, val_s = source_slices[0], source_slices[1]
    rank = max(s.count for s in train_s) + 1
    config = dataclasses.replace(SMALL_SYLNET, head="ordinal", rank=rank)
    model = sylnet_init(config, seed=22)
    started = time.perf_counter()
    model, log = train(model, train_s, val_s, ORDINAL_TRAIN)
    return model, log, time.perf_counter() - started


@pytest.fixture(scope="session")
def trained_blstm(source_slices):
    train_s, val_s = source_slices[0], source_slices[1]
    model = blstm_init(SMALL_BLSTM, seed=23)
    started = time.perf_counter()
    model, log = train(model, train_s, val_s, BLSTM_TRAIN)
    return model, log, time.perf_counter() - started
