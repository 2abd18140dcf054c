"""Metrics, the adaptation-curve experiment, and accumulation traces.

The experiment harness is method-agnostic: anything exposing ``name``,
``predict(utterances)`` and ``adapted(utterances, seed)`` can enter the
same report, so neural models and the calibrated envelope pipeline are
compared on equal footing.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .corpus import CorpusManifest, SplitPlan, Utterance
from .errors import DataError
from .features import FeatureMatrix
from .objectives import decode_ordinal
from .seeding import child_seed
from .sylnet import SylNet, forward

log = logging.getLogger(__name__)

UNADAPTED_LABEL = "0s"


def relative_error_pct(predictions, targets) -> float:
    """100 x mean(|clamp(prediction, 0) - target| / target).

    Estimates are clamped at zero before scoring (a count cannot be
    negative); the training losses never clamp.
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape or predictions.ndim != 1 or predictions.size == 0:
        raise ValueError(
            f"predictions and targets must be matching non-empty vectors, "
            f"got {predictions.shape} vs {targets.shape}"
        )
    if np.any(targets < 1):
        raise ValueError("all targets must be >= 1")
    clamped = np.maximum(predictions, 0.0)
    return float(np.mean(np.abs(clamped - targets) / targets) * 100.0)


class CountMethod(Protocol):
    """What the experiment harness needs from a counting method."""

    name: str

    def predict(self, utterances: list[Utterance]) -> np.ndarray: ...

    def adapted(self, utterances: list[Utterance], seed: int) -> "CountMethod": ...


@dataclass(frozen=True)
class ExperimentCell:
    method: str
    size_label: str
    nominal_size_s: float
    fold: int
    error_pct: float | None
    failure: str | None = None


@dataclass(frozen=True)
class SizeAggregate:
    method: str
    size_label: str
    nominal_size_s: float
    mean_error_pct: float
    std_error_pct: float
    n_folds: int


@dataclass
class ExperimentReport:
    corpus_name: str
    seed: int
    cells: list[ExperimentCell] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def aggregates(self) -> list[SizeAggregate]:
        """Mean and spread over folds per (method, size); failed cells are
        excluded from the statistics but stay visible in ``cells``."""
        groups: dict[tuple[str, str, float], list[float]] = {}
        for cell in self.cells:
            if cell.error_pct is None:
                continue
            groups.setdefault((cell.method, cell.size_label, cell.nominal_size_s), []).append(
                cell.error_pct
            )
        out = []
        for (method, label, nominal), errs in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][2])):
            arr = np.asarray(errs, dtype=np.float64)
            out.append(
                SizeAggregate(
                    method=method,
                    size_label=label,
                    nominal_size_s=nominal,
                    mean_error_pct=float(arr.mean()),
                    std_error_pct=float(arr.std()),
                    n_folds=len(errs),
                )
            )
        return out

    def cell(self, method: str, size_label: str, fold: int) -> ExperimentCell:
        for c in self.cells:
            if (c.method, c.size_label, c.fold) == (method, size_label, fold):
                return c
        raise KeyError(f"no cell ({method}, {size_label}, fold {fold})")


def run_adaptation_experiment(
    methods: list[CountMethod],
    manifest: CorpusManifest,
    plan: SplitPlan,
    seed: int = 0,
    metadata: dict | None = None,
) -> ExperimentReport:
    """Adaptation curve: every method evaluated unadapted, then adapted on
    each (size, fold) set and scored on the fixed test utterances.

    A failing cell is recorded with its diagnostic instead of aborting the
    sweep, so partial hardware or data problems still yield a report.
    """
    by_id = manifest.by_id()
    missing = [i for i in plan.test_ids if i not in by_id]
    if missing:
        raise DataError(f"split plan references unknown test ids: {missing[:5]}")
    test = [by_id[i] for i in plan.test_ids]
    if not test:
        raise DataError("split plan has an empty test set")
    targets = np.asarray([u.syllable_count for u in test], dtype=np.float64)

    report = ExperimentReport(corpus_name=manifest.name, seed=seed, metadata=metadata or {})
    for method in methods:
        try:
            err = relative_error_pct(method.predict(test), targets)
            report.cells.append(
                ExperimentCell(method.name, UNADAPTED_LABEL, 0.0, -1, err)
            )
        except Exception as exc:
            log.warning("unadapted evaluation failed for %s: %s", method.name, exc)
            report.cells.append(
                ExperimentCell(method.name, UNADAPTED_LABEL, 0.0, -1, None, f"{exc}")
            )
        for (label, fold), ids in sorted(plan.adaptation_sets.items()):
            nominal = plan.nominal_sizes_s[label]
            try:
                adaptation = [by_id[i] for i in ids]
                cell_seed = child_seed(seed, f"experiment:{method.name}:{label}:{fold}")
                adapted = method.adapted(adaptation, cell_seed)
                err = relative_error_pct(adapted.predict(test), targets)
                report.cells.append(ExperimentCell(method.name, label, nominal, fold, err))
            except Exception as exc:
                log.warning(
                    "cell (%s, %s, fold %d) failed: %s", method.name, label, fold, exc
                )
                report.cells.append(
                    ExperimentCell(method.name, label, nominal, fold, None, f"{exc}")
                )
    return report


def trace_accumulation(model, features: FeatureMatrix | np.ndarray) -> np.ndarray:
    """Per-frame decoded count curve for one utterance.

    The final element equals the utterance's predicted count; the curve is
    not necessarily monotone (the accumulator may revise downward).
    """
    if isinstance(model, SylNet):
        trace = forward(model, features)
        per_frame = trace.per_frame_head
        if model.config.head == "ordinal":
            return np.asarray(
                [float(decode_ordinal(row)) for row in per_frame], dtype=np.float64
            )
        return per_frame[:, 0].astype(np.float64)
    from .baseline_nets import BlstmCount, blstm_forward

    if isinstance(model, BlstmCount):
        return blstm_forward(model, features).per_frame_head[:, 0].astype(np.float64)
    raise TypeError(f"unsupported model type {type(model).__name__}")


def _cell_payload(cell: ExperimentCell) -> dict:
    return {
        "method": cell.method,
        "size_label": cell.size_label,
        "nominal_size_s": cell.nominal_size_s,
        "fold": cell.fold,
        "error_pct": cell.error_pct,
        "failure": cell.failure,
    }


def save_report(report: ExperimentReport, path: str | os.PathLike) -> None:
    payload = {
        "corpus_name": report.corpus_name,
        "seed": report.seed,
        "metadata": report.metadata,
        "cells": [_cell_payload(c) for c in report.cells],
        "aggregates": [
            {
                "method": a.method,
                "size_label": a.size_label,
                "nominal_size_s": a.nominal_size_s,
                "mean_error_pct": a.mean_error_pct,
                "std_error_pct": a.std_error_pct,
                "n_folds": a.n_folds,
            }
            for a in report.aggregates()
        ],
    }
    with open(path, "w") as f:
        json.dump(payload, f, sort_keys=True, indent=2)
        f.write("\n")


def load_report(path: str | os.PathLike) -> ExperimentReport:
    try:
        with open(path) as f:
            payload = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read report {os.fspath(path)}: {exc}") from exc
    try:
        cells = [
            ExperimentCell(
                method=c["method"],
                size_label=c["size_label"],
                nominal_size_s=float(c["nominal_size_s"]),
                fold=int(c["fold"]),
                error_pct=None if c["error_pct"] is None else float(c["error_pct"]),
                failure=c["failure"],
            )
            for c in payload["cells"]
        ]
        return ExperimentReport(
            corpus_name=payload["corpus_name"],
            seed=int(payload["seed"]),
            cells=cells,
            metadata=payload["metadata"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed report {os.fspath(path)}: {exc}") from exc


def export_report_csv(report: ExperimentReport, path: str | os.PathLike) -> None:
    """One row per cell, for external plotting tools."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["method", "size_label", "nominal_size_s", "fold", "error_pct", "failure"])
        for c in report.cells:
            writer.writerow(
                [
                    c.method,
                    c.size_label,
                    f"{c.nominal_size_s:g}",
                    c.fold,
                    "" if c.error_pct is None else repr(c.error_pct),
                    c.failure or "",
                ]
            )


__all__ = [
    "UNADAPTED_LABEL",
    "relative_error_pct",
    "CountMethod",
    "ExperimentCell",
    "SizeAggregate",
    "ExperimentReport",
    "run_adaptation_experiment",
    "trace_accumulation",
    "save_report",
    "load_report",
    "export_report_csv",
]
