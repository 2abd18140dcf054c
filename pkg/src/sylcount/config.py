"""Layered run configuration.

Resolution order: dataclass defaults, then a JSON config file, then
``section.key=value`` overrides from the command line. Unknown sections or
keys are rejected rather than ignored, and every resolved configuration
can be written back out as a snapshot, which is the reproducibility anchor
for all command-line runs.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass

from .baseline_nets import BlstmCountConfig
from .envelope import EnvelopeConfig
from .errors import DataError
from .features import FeatureConfig
from .sylnet import SylNetConfig
from .synth import SynthConfig
from .training import TrainConfig


@dataclass(frozen=True)
class SplitSection:
    test_fraction: float = 0.5
    folds: int = 5
    sizes_s: tuple[float, ...] | None = None  # None = the 8 default sizes

    def __post_init__(self) -> None:
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must lie in (0, 1)")
        if self.folds < 1:
            raise ValueError("folds must be >= 1")


@dataclass(frozen=True)
class AppConfig:
    feature: FeatureConfig = FeatureConfig()
    sylnet: SylNetConfig = SylNetConfig()
    blstm: BlstmCountConfig = BlstmCountConfig()
    envelope: EnvelopeConfig = EnvelopeConfig()
    train: TrainConfig = TrainConfig()
    synth: SynthConfig = SynthConfig()
    split: SplitSection = SplitSection()


_SECTIONS = {
    "feature": FeatureConfig,
    "sylnet": SylNetConfig,
    "blstm": BlstmCountConfig,
    "envelope": EnvelopeConfig,
    "train": TrainConfig,
    "synth": SynthConfig,
    "split": SplitSection,
}


def _coerce(annotation: str, text: str):
    """Parse an override string according to the target field's annotation."""
    if text.lower() in ("none", "null"):
        if "None" not in annotation:
            raise DataError(f"field of type {annotation} cannot be none")
        return None
    base = annotation.replace(" | None", "")
    if base.startswith("tuple"):
        if not text:
            return ()
        return tuple(int(part) if "int" in base else float(part) for part in text.split(","))
    if base == "bool":
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise DataError(f"cannot parse {text!r} as a boolean")
    if base == "int":
        try:
            return int(text)
        except ValueError as exc:
            raise DataError(f"cannot parse {text!r} as an integer") from exc
    if base == "float":
        try:
            return float(text)
        except ValueError as exc:
            raise DataError(f"cannot parse {text!r} as a number") from exc
    # remaining annotations (str and its aliases) pass through
    return text


def _apply_section(current, updates: dict, section: str):
    cls = type(current)
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(updates) - set(known))
    if unknown:
        raise DataError(f"unknown keys in section {section!r}: {unknown}")
    coerced = {}
    for key, value in updates.items():
        if isinstance(value, str) and known[key].type not in ("str", "HeadKind", "LossKind"):
            value = _coerce(known[key].type, value)
        elif isinstance(value, list):
            value = tuple(value)
        coerced[key] = value
    try:
        return dataclasses.replace(current, **coerced)
    except (TypeError, ValueError) as exc:
        raise DataError(f"invalid value in section {section!r}: {exc}") from exc


def load_config(path: str | os.PathLike | None, overrides: list[str] | None = None) -> AppConfig:
    """Resolve an AppConfig from an optional JSON file plus
    ``section.key=value`` override strings."""
    config = AppConfig()
    if path is not None:
        try:
            with open(path) as f:
                payload = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read config {os.fspath(path)}: {exc}") from exc
        if not isinstance(payload, dict):
            raise DataError(f"config {os.fspath(path)} must hold an object of sections")
        unknown = sorted(set(payload) - set(_SECTIONS))
        if unknown:
            raise DataError(f"unknown config sections: {unknown}")
        for section, updates in payload.items():
            if not isinstance(updates, dict):
                raise DataError(f"section {section!r} must hold an object")
            config = dataclasses.replace(
                config, **{section: _apply_section(getattr(config, section), updates, section)}
            )
    # group overrides per section so jointly constrained fields (for
    # example head and rank) can change together
    grouped: dict[str, dict[str, str]] = {}
    for item in overrides or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise DataError(f"override {item!r} must look like section.key=value")
        dotted, value = item.split("=", 1)
        section, key = dotted.split(".", 1)
        if section not in _SECTIONS:
            raise DataError(f"unknown config section {section!r}")
        grouped.setdefault(section, {})[key] = value
    for section, updates in grouped.items():
        config = dataclasses.replace(
            config, **{section: _apply_section(getattr(config, section), updates, section)}
        )
    return config


def snapshot_config(config: AppConfig, path: str | os.PathLike) -> None:
    """Write the fully resolved configuration; feeding the snapshot back
    through load_config reproduces the same AppConfig."""
    payload = {
        section: dataclasses.asdict(getattr(config, section)) for section in _SECTIONS
    }
    with open(path, "w") as f:
        json.dump(payload, f, sort_keys=True, indent=2)
        f.write("\n")


__all__ = ["AppConfig", "SplitSection", "load_config", "snapshot_config"]
