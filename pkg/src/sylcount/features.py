"""Log-Mel feature extraction with a deterministic on-disk cache.

Waveforms are converted to T x D matrices of log mel-band energies
(default: 24 bands, 25 ms window, 10 ms hop at 16 kHz). Per-utterance
mean-variance normalization is part of this module's contract and is
applied identically at train and test time; it can be disabled through
the config.
"""

from __future__ import annotations

import hashlib
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

from . import audio
from .corpus import Utterance
from .errors import DataError

log = logging.getLogger(__name__)

_CACHE_MAGIC = "sylcount-mel 1"


@dataclass(frozen=True)
class FeatureConfig:
    """Parameters of the log-Mel front end.

    All audio is resampled to sample_rate_hz before framing, so the mel
    filterbank is fixed regardless of source material.
    """

    sample_rate_hz: int = 16000
    window_ms: float = 25.0
    hop_ms: float = 10.0
    n_mels: int = 24
    fmin_hz: float = 50.0
    fmax_hz: float = 8000.0
    log_floor: float = 1e-10
    mean_var_norm: bool = True

    def __post_init__(self) -> None:
        if not self.window_ms > self.hop_ms > 0:
            raise ValueError(f"require window_ms > hop_ms > 0, got {self.window_ms}/{self.hop_ms}")
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")
        if not (0 < self.fmin_hz < self.fmax_hz <= self.sample_rate_hz / 2):
            raise ValueError(
                f"require 0 < fmin < fmax <= nyquist, got {self.fmin_hz}/{self.fmax_hz}"
                f" at rate {self.sample_rate_hz}"
            )
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")

    @property
    def window_samples(self) -> int:
        return int(round(self.sample_rate_hz * self.window_ms / 1000.0))

    @property
    def hop_samples(self) -> int:
        return int(round(self.sample_rate_hz * self.hop_ms / 1000.0))

    def content_key(self) -> str:
        """Stable hash over every field; cache entries are keyed by it."""
        text = "|".join(
            f"{name}={getattr(self, name)}" for name in sorted(self.__dataclass_fields__)
        )
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass
class FeatureMatrix:
    """T x D matrix of log mel-band energies for one utterance."""

    values: np.ndarray
    frame_hop_ms: float
    utterance_id: str = ""

    @property
    def n_frames(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_bands(self) -> int:
        return int(self.values.shape[1])


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate_hz: int, fmin_hz: float, fmax_hz: float) -> np.ndarray:
    """Triangular mel filterbank, shape (n_mels, n_fft//2 + 1)."""
    n_bins = n_fft // 2 + 1
    fft_freqs = np.arange(n_bins) * sample_rate_hz / n_fft
    mel_pts = np.linspace(hz_to_mel(fmin_hz), hz_to_mel(fmax_hz), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    fb = np.zeros((n_mels, n_bins))
    for i in range(n_mels):
        lo, ctr, hi = hz_pts[i], hz_pts[i + 1], hz_pts[i + 2]
        up = (fft_freqs - lo) / (ctr - lo)
        down = (hi - fft_freqs) / (hi - ctr)
        fb[i] = np.maximum(0.0, np.minimum(up, down))
    return fb


def _fft_size(window_samples: int) -> int:
    n = 1
    while n < window_samples:
        n *= 2
    return n


def extract_features(
    samples: np.ndarray,
    sample_rate_hz: int,
    config: FeatureConfig,
    utterance_id: str = "",
) -> FeatureMatrix:
    """Compute the log-Mel matrix for a mono waveform.

    The waveform is resampled to config.sample_rate_hz if needed. Frames
    are counted as T = (n_samples - window) // hop + 1 and each frame's
    mel-band energies are mapped through log(energy + log_floor). The
    result is a pure function of (samples, rates, config).
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1 or samples.size == 0:
        raise DataError(f"expected non-empty mono waveform for {utterance_id!r}")
    if not np.all(np.isfinite(samples)):
        raise DataError(f"waveform contains non-finite samples: {utterance_id!r}")
    samples = audio.resample(samples, sample_rate_hz, config.sample_rate_hz)

    win = config.window_samples
    hop = config.hop_samples
    if samples.size < win:
        raise DataError(
            f"audio shorter than one analysis window ({samples.size} < {win} samples): {utterance_id!r}"
        )
    frames = sliding_window_view(samples, win)[::hop]
    window_fn = get_window("hann", win, fftbins=True)
    n_fft = _fft_size(win)
    spectrum = np.fft.rfft(frames * window_fn, n=n_fft, axis=1)
    power = spectrum.real**2 + spectrum.imag**2
    fb = mel_filterbank(config.n_mels, n_fft, config.sample_rate_hz, config.fmin_hz, config.fmax_hz)
    mel_energy = power @ fb.T
    values = np.log(mel_energy + config.log_floor)
    return FeatureMatrix(values=values, frame_hop_ms=config.hop_ms, utterance_id=utterance_id)


def apply_mean_var_norm(values: np.ndarray) -> np.ndarray:
    """Per-utterance, per-band zero-mean unit-variance normalization."""
    mean = values.mean(axis=0, keepdims=True)
    std = values.std(axis=0, keepdims=True)
    return (values - mean) / np.maximum(std, 1e-8)


def model_input(matrix: FeatureMatrix, config: FeatureConfig) -> np.ndarray:
    """Feature values as consumed by the neural models (normalized per config)."""
    if config.mean_var_norm:
        return apply_mean_var_norm(matrix.values)
    return matrix.values


def _cache_path(cache_dir: Path, content_hash: str, config: FeatureConfig) -> Path:
    return cache_dir / f"{content_hash[:20]}_{config.content_key()[:20]}.melbin"


def _write_cache(path: Path, matrix: FeatureMatrix) -> None:
    payload = np.ascontiguousarray(matrix.values, dtype="<f8").tobytes()
    checksum = hashlib.sha256(payload).hexdigest()
    header = (
        f"{_CACHE_MAGIC}\n"
        f"rows={matrix.values.shape[0]} cols={matrix.values.shape[1]} "
        f"hop_ms={matrix.frame_hop_ms!r} sha256={checksum}\n"
    ).encode("ascii")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(header)
            f.write(payload)
        os.replace(tmp, path)  # atomic: concurrent writers resolve to one valid entry
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _read_cache(path: Path) -> FeatureMatrix | None:
    with open(path, "rb") as f:
        magic = f.readline().decode("ascii", errors="replace").rstrip("\n")
        if magic != _CACHE_MAGIC:
            return None
        fields = dict(
            kv.split("=", 1) for kv in f.readline().decode("ascii", errors="replace").split()
        )
        rows, cols = int(fields["rows"]), int(fields["cols"])
        payload = f.read()
    if hashlib.sha256(payload).hexdigest() != fields["sha256"]:
        return None
    values = np.frombuffer(payload, dtype="<f8").reshape(rows, cols).copy()
    return FeatureMatrix(values=values, frame_hop_ms=float(fields["hop_ms"]))


def cached_extract(utterance: Utterance, config: FeatureConfig, cache_dir: str | Path) -> FeatureMatrix:
    """Extract features for an utterance, memoized on disk.

    Entries are keyed by (audio content hash, config hash): the same audio
    under the same config loads back bit-exactly, and any config change is
    a cache miss. A corrupted entry is recomputed and overwritten with a
    warning.
    """
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    try:
        content_hash = hashlib.sha256(Path(utterance.audio_path).read_bytes()).hexdigest()
    except OSError as exc:
        raise DataError(f"unreadable audio file {utterance.audio_path}: {exc}") from exc
    path = _cache_path(cache_dir, content_hash, config)
    if path.exists():
        cached = _read_cache(path)
        if cached is not None:
            cached.utterance_id = utterance.id
            return cached
        log.warning("feature cache entry corrupt, recomputing: %s", path)
    samples, rate = audio.load_wav(utterance.audio_path)
    matrix = extract_features(samples, rate, config, utterance_id=utterance.id)
    _write_cache(path, matrix)
    return matrix
