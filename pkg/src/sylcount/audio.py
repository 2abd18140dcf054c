"""Mono PCM WAV input/output and resampling."""

from __future__ import annotations

import math
import wave
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from .errors import DataError

_INT_SCALE = {np.dtype(np.int16): 32768.0, np.dtype(np.int32): 2147483648.0}


def load_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a mono WAV file as float64 samples in [-1, 1] plus its sample rate."""
    path = Path(path)
    try:
        rate, data = wavfile.read(str(path))
    except FileNotFoundError:
        raise DataError(f"audio file not found: {path}") from None
    except Exception as exc:
        raise DataError(f"unreadable audio file {path}: {exc}") from exc
    if data.ndim != 1:
        raise DataError(f"expected mono audio, got {data.shape[1]} channels: {path}")
    if data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype in _INT_SCALE:
        samples = data.astype(np.float64) / _INT_SCALE[data.dtype]
    else:
        samples = data.astype(np.float64)
    return samples, int(rate)


def save_wav(path: str | Path, samples: np.ndarray, rate: int) -> None:
    """Write float samples in [-1, 1] as 16-bit PCM."""
    clipped = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    pcm = np.round(clipped * 32767.0).astype(np.int16)
    wavfile.write(str(path), rate, pcm)


def resample(samples: np.ndarray, rate: int, target_rate: int) -> np.ndarray:
    """Polyphase resampling to target_rate; identity when rates match."""
    if rate == target_rate:
        return np.asarray(samples, dtype=np.float64)
    g = math.gcd(rate, target_rate)
    return resample_poly(np.asarray(samples, dtype=np.float64), target_rate // g, rate // g)


def load_wav_resampled(path: str | Path, target_rate: int) -> np.ndarray:
    samples, rate = load_wav(path)
    return resample(samples, rate, target_rate)


def wav_duration_s(path: str | Path) -> float:
    """Duration in seconds read from the WAV header only."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as f:
            frames = f.getnframes()
            rate = f.getframerate()
    except FileNotFoundError:
        raise DataError(f"audio file not found: {path}") from None
    except Exception as exc:
        raise DataError(f"unreadable audio file {path}: {exc}") from exc
    if rate <= 0 or frames <= 0:
        raise DataError(f"audio file has no samples: {path}")
    return frames / rate
