"""Amplitude-envelope counting pipeline.

A band-limited energy envelope is extracted from the waveform, local maxima
are counted as peaks when they rise at least ``theta`` above the preceding
local minimum, and a per-corpus linear map ``s = alpha * n + beta`` turns
peak counts into count estimates. ``calibrate`` fits all three values
jointly by exhaustive search over a threshold grid with a least-squares
line per candidate.
"""

from __future__ import annotations

import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .errors import DataError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EnvelopeConfig:
    band_low_hz: float = 300.0
    band_high_hz: float = 2500.0
    smooth_hz: float = 10.0
    hop_ms: float = 10.0
    filter_order: int = 4

    def __post_init__(self) -> None:
        if not 0 < self.band_low_hz < self.band_high_hz:
            raise ValueError("band edges must satisfy 0 < low < high")
        if self.smooth_hz <= 0:
            raise ValueError("smooth_hz must be positive")
        if self.hop_ms <= 0:
            raise ValueError("hop_ms must be positive")
        if self.filter_order < 1:
            raise ValueError("filter_order must be >= 1")


@dataclass(frozen=True)
class Envelope:
    values: np.ndarray
    hop_ms: float

    def __post_init__(self) -> None:
        if self.values.ndim != 1:
            raise ValueError(f"envelope must be 1-D, got shape {self.values.shape}")


@dataclass(frozen=True)
class EnvelopeCalibration:
    theta: float
    alpha: float
    beta: float
    training_error_pct: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")


def band_energy_envelope(samples: np.ndarray, sample_rate: int, config: EnvelopeConfig = EnvelopeConfig()) -> Envelope:
    """Extract the smoothed band energy envelope of a waveform.

    Bandpass, full-wave rectification, lowpass smoothing, then decimation
    to one value per hop. The result is clipped to be non-negative and
    scaled so its maximum is 1 (an all-silent input stays all zero).
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1 or samples.size == 0:
        raise DataError(f"expected a non-empty 1-D waveform, got shape {samples.shape}")
    if not np.all(np.isfinite(samples)):
        raise DataError("waveform contains non-finite samples")
    nyquist = sample_rate / 2.0
    if config.band_high_hz >= nyquist:
        raise DataError(
            f"band edge {config.band_high_hz} Hz needs a sample rate above {2 * config.band_high_hz:g} Hz"
        )
    band = signal.butter(
        config.filter_order,
        [config.band_low_hz, config.band_high_hz],
        btype="bandpass",
        fs=sample_rate,
        output="sos",
    )
    x = signal.sosfiltfilt(band, samples)
    x = np.abs(x)
    smooth = signal.butter(config.filter_order, config.smooth_hz, btype="lowpass", fs=sample_rate, output="sos")
    x = signal.sosfiltfilt(smooth, x)
    hop = max(1, round(sample_rate * config.hop_ms / 1000.0))
    x = x[::hop]
    x = np.maximum(x, 0.0)
    peak = x.max()
    if peak > 0:
        x = x / peak
    return Envelope(values=x, hop_ms=config.hop_ms)


def peak_rises(values: np.ndarray) -> np.ndarray:
    """Rise of each local maximum above the preceding local minimum.

    Runs of equal values are compressed so a plateau counts once, at its
    first sample. Only strict interior extrema qualify; a maximum at the
    very start or end of the sequence does not. The minimum preceding the
    first maximum is the lower of the first sample and any interior
    minimum before it, so a sequence that starts low and rises still
    yields a full-height rise.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1:
        raise ValueError(f"expected a 1-D envelope, got shape {values.shape}")
    if values.size < 3:
        return np.empty(0, dtype=np.float64)
    change = np.flatnonzero(np.diff(values) != 0.0)
    if change.size == 0:
        return np.empty(0, dtype=np.float64)
    # representative value of each run of equal samples
    v = values[np.concatenate(([0], change + 1))]
    if v.size < 3:
        return np.empty(0, dtype=np.float64)
    # after run compression neighbours differ, so interior extrema are strict
    mid, left, right = v[1:-1], v[:-2], v[2:]
    max_idx = np.flatnonzero((mid > left) & (mid > right)) + 1
    if max_idx.size == 0:
        return np.empty(0, dtype=np.float64)
    min_idx = np.flatnonzero((mid < left) & (mid < right)) + 1
    if min_idx.size == 0:
        return v[max_idx] - v[0]
    # each maximum pairs with the latest minimum before it, or the first
    # sample when none precedes it
    prev = np.searchsorted(min_idx, max_idx) - 1
    prev_min = np.where(prev >= 0, v[min_idx[np.maximum(prev, 0)]], v[0])
    return v[max_idx] - prev_min


def pick_peaks(values: np.ndarray, theta: float) -> int:
    """Number of local maxima whose rise above the preceding local minimum
    is at least ``theta``."""
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"theta must lie in [0, 1], got {theta}")
    rises = peak_rises(values)
    return int(np.count_nonzero(rises >= theta))


def apply_calibration(n_peaks: int, calibration: EnvelopeCalibration) -> float:
    return calibration.alpha * n_peaks + calibration.beta


def default_theta_grid() -> np.ndarray:
    return np.round(np.arange(101) / 100.0, 2)


def calibration_error(estimates: np.ndarray, counts: np.ndarray) -> float:
    """Mean absolute relative error of estimates against reference counts,
    in percent."""
    estimates = np.asarray(estimates, dtype=np.float64)
    counts = np.asarray(counts, dtype=np.float64)
    if estimates.shape != counts.shape or estimates.size == 0:
        raise ValueError("estimates and counts must be matching non-empty arrays")
    return float(np.mean(np.abs(estimates - counts) / counts) * 100.0)


def _fit_line(n: np.ndarray, s: np.ndarray) -> tuple[float, float]:
    """Least-squares line s ~ alpha * n + beta via the normal equations.

    Peak counts and reference counts are small integers, so the sums below
    are exact in float64 and a consistent system is recovered without
    rounding residue. Degenerate inputs (all peak counts equal) fall back
    to a constant predictor at the mean count.
    """
    m = float(n.size)
    sx, sy = float(n.sum()), float(s.sum())
    sxx, sxy = float((n * n).sum()), float((n * s).sum())
    denom = m * sxx - sx * sx
    if denom == 0.0:
        return 0.0, sy / m
    alpha = (m * sxy - sx * sy) / denom
    beta = (sy * sxx - sx * sxy) / denom
    return alpha, beta


def calibrate(
    envelopes: list[Envelope],
    counts: list[int],
    theta_grid: np.ndarray | None = None,
    extra_candidates: list[EnvelopeCalibration] | None = None,
) -> EnvelopeCalibration:
    """Jointly fit (theta, alpha, beta) on a labelled corpus.

    For each threshold in the grid the peak counts are computed and a
    least-squares line from peak count to reference count is fitted; the
    candidate with the lowest mean relative error wins, ties going to the
    smaller threshold. ``extra_candidates`` lets a caller enter existing
    calibrations into the same contest, so re-calibration can never end
    up worse than the calibration it started from on the data it saw.
    """
    if len(envelopes) != len(counts) or not envelopes:
        raise DataError("calibration needs matching non-empty envelope and count lists")
    if any(c < 1 for c in counts):
        raise DataError("reference counts must be >= 1")
    grid = default_theta_grid() if theta_grid is None else np.asarray(theta_grid, dtype=np.float64)
    if grid.size == 0:
        raise DataError("theta grid is empty")
    s = np.asarray(counts, dtype=np.float64)
    rises = [peak_rises(e.values) for e in envelopes]

    best: EnvelopeCalibration | None = None
    for theta in grid:
        n = np.asarray([np.count_nonzero(r >= theta) for r in rises], dtype=np.float64)
        alpha, beta = _fit_line(n, s)
        err = calibration_error(alpha * n + beta, s)
        if best is None or err < best.training_error_pct:
            best = EnvelopeCalibration(theta=float(theta), alpha=alpha, beta=beta, training_error_pct=err)
    for cand in extra_candidates or []:
        n = np.asarray([np.count_nonzero(r >= cand.theta) for r in rises], dtype=np.float64)
        err = calibration_error(cand.alpha * n + cand.beta, s)
        if err < best.training_error_pct:
            best = EnvelopeCalibration(theta=cand.theta, alpha=cand.alpha, beta=cand.beta, training_error_pct=err)
    return best


def save_calibration(calibration: EnvelopeCalibration, path: str | os.PathLike) -> None:
    payload = {
        "theta": calibration.theta,
        "alpha": calibration.alpha,
        "beta": calibration.beta,
        "training_error_pct": calibration.training_error_pct,
    }
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            json.dump(payload, f, sort_keys=True, indent=2)
            f.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_calibration(path: str | os.PathLike) -> EnvelopeCalibration:
    try:
        with open(path) as f:
            payload = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read calibration {os.fspath(path)}: {exc}") from exc
    try:
        return EnvelopeCalibration(
            theta=float(payload["theta"]),
            alpha=float(payload["alpha"]),
            beta=float(payload["beta"]),
            training_error_pct=float(payload["training_error_pct"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed calibration {os.fspath(path)}: {exc}") from exc


def count_with_calibration(envelope: Envelope, calibration: EnvelopeCalibration) -> float:
    return apply_calibration(pick_peaks(envelope.values, calibration.theta), calibration)


__all__ = [
    "EnvelopeConfig",
    "Envelope",
    "EnvelopeCalibration",
    "band_energy_envelope",
    "peak_rises",
    "pick_peaks",
    "apply_calibration",
    "default_theta_grid",
    "calibration_error",
    "calibrate",
    "save_calibration",
    "load_calibration",
    "count_with_calibration",
]
