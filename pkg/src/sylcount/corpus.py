"""Corpus ingestion and speaker-disjoint split planning.

A corpus is described by a line-delimited manifest (one JSON object per
line with fields id, audio_path, syllable_count, speaker_id); utterance
durations are derived from the audio itself. Split plans assign whole
speakers to the test side first, which makes test/adaptation speaker
disjointness constructive rather than checked after the fact.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from . import audio
from .errors import DataError
from .seeding import child_seed

MANIFEST_FIELDS = ("id", "audio_path", "syllable_count", "speaker_id")

#: allowed deviation of a fold's total duration from its nominal size
SIZE_TOLERANCE = 0.10


@dataclass(frozen=True)
class Utterance:
    """One audio clip with its ground-truth syllable count."""

    id: str
    audio_path: Path
    syllable_count: int
    speaker_id: str
    duration_s: float

    def __post_init__(self) -> None:
        if self.syllable_count < 1:
            raise DataError(f"utterance {self.id!r} has syllable_count < 1")
        if self.duration_s <= 0:
            raise DataError(f"utterance {self.id!r} has non-positive duration")
        if not self.speaker_id:
            raise DataError(f"utterance {self.id!r} has empty speaker_id")


@dataclass
class CorpusManifest:
    name: str
    utterances: list[Utterance]

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for u in self.utterances:
            if u.id in seen:
                raise DataError(f"duplicate utterance id in manifest {self.name!r}: {u.id!r}")
            seen.add(u.id)

    def __len__(self) -> int:
        return len(self.utterances)

    def __iter__(self) -> Iterator[Utterance]:
        return iter(self.utterances)

    def by_id(self) -> dict[str, Utterance]:
        return {u.id: u for u in self.utterances}

    def speakers(self) -> list[str]:
        return sorted({u.speaker_id for u in self.utterances})

    def total_duration_s(self) -> float:
        return sum(u.duration_s for u in self.utterances)


def load_manifest(path: str | Path, name: str | None = None) -> CorpusManifest:
    """Read and validate a line-delimited manifest.

    Relative audio paths resolve against the manifest's directory. All
    invariant violations found during ingestion are reported together.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    base = path.parent
    utterances: list[Utterance] = []
    bad: list[str] = []
    seen_ids: set[str] = set()
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: malformed record: {exc}") from exc
        missing = [f for f in MANIFEST_FIELDS if f not in record]
        if missing:
            raise DataError(f"{path}:{lineno}: record missing fields {missing}")
        uid = str(record["id"])
        if uid in seen_ids:
            raise DataError(f"{path}:{lineno}: duplicate utterance id {uid!r}")
        seen_ids.add(uid)
        count = record["syllable_count"]
        if not isinstance(count, int) or count < 1:
            bad.append(uid)
            continue
        audio_path = Path(record["audio_path"])
        if not audio_path.is_absolute():
            audio_path = base / audio_path
        duration = audio.wav_duration_s(audio_path)
        utterances.append(
            Utterance(
                id=uid,
                audio_path=audio_path,
                syllable_count=count,
                speaker_id=str(record["speaker_id"]),
                duration_s=duration,
            )
        )
    if bad:
        raise DataError(f"{path}: utterances with syllable_count < 1 rejected: {bad}")
    return CorpusManifest(name=name or path.stem, utterances=utterances)


def save_manifest(manifest: CorpusManifest, path: str | Path) -> None:
    """Write a manifest as line-delimited records (audio paths relative when possible)."""
    path = Path(path)
    base = path.parent.resolve()
    lines = []
    for u in manifest.utterances:
        audio_path = Path(u.audio_path).resolve()
        try:
            rel = audio_path.relative_to(base)
        except ValueError:
            rel = audio_path
        record = {
            "id": u.id,
            "audio_path": str(rel),
            "syllable_count": u.syllable_count,
            "speaker_id": u.speaker_id,
        }
        lines.append(json.dumps(record, sort_keys=True))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def default_adaptation_sizes(n_sizes: int = 8, lo_s: float = 30.0, hi_s: float = 2700.0) -> list[float]:
    """Geometrically spaced adaptation-set sizes between the endpoints."""
    if n_sizes == 1:
        return [lo_s]
    ratio = (hi_s / lo_s) ** (1.0 / (n_sizes - 1))
    return [lo_s * ratio**i for i in range(n_sizes)]


def size_label(nominal_s: float) -> str:
    return f"{int(round(nominal_s))}s"


@dataclass
class SplitPlan:
    """Speaker-disjoint test/adaptation assignment for one corpus."""

    seed: int
    test_ids: list[str]
    adaptation_sets: dict[tuple[str, int], list[str]]
    nominal_sizes_s: dict[str, float]
    folds: int

    def size_labels(self) -> list[str]:
        return sorted(self.nominal_sizes_s, key=lambda lb: self.nominal_sizes_s[lb])


def make_split_plan(
    manifest: CorpusManifest,
    test_fraction: float = 0.5,
    sizes_s: Iterable[float] | None = None,
    folds: int = 5,
    seed: int = 0,
) -> SplitPlan:
    """Build a deterministic test/adaptation split.

    Speakers are assigned to the test side first (until the test side holds
    roughly test_fraction of all utterances), then each (size, fold) set is
    an independent sample of whole utterances from the remaining speakers,
    landing within +-10% of the nominal duration. Folds of the same size
    may overlap each other but never the test side.
    """
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    speakers = manifest.speakers()
    if len(speakers) < 2:
        raise DataError(
            f"corpus {manifest.name!r} has {len(speakers)} speaker(s); "
            "speaker-disjoint splitting needs at least 2"
        )
    sizes = sorted(float(s) for s in (sizes_s if sizes_s is not None else default_adaptation_sizes()))
    labels = [size_label(s) for s in sizes]
    if len(set(labels)) != len(labels):
        raise ValueError(f"adaptation sizes produce duplicate labels: {labels}")

    rng = random.Random(child_seed(seed, "split:test-speakers"))
    shuffled = rng.sample(speakers, len(speakers))
    per_speaker = {s: [u for u in manifest if u.speaker_id == s] for s in speakers}
    target = test_fraction * len(manifest)
    test_speakers: set[str] = set()
    test_count = 0
    for spk in shuffled:
        if test_count >= target or len(test_speakers) == len(speakers) - 1:
            break
        test_speakers.add(spk)
        test_count += len(per_speaker[spk])
    test_ids = [u.id for u in manifest if u.speaker_id in test_speakers]

    pool = [u for u in manifest if u.speaker_id not in test_speakers]
    pool_total = sum(u.duration_s for u in pool)
    if pool_total < (1 - SIZE_TOLERANCE) * sizes[-1]:
        raise DataError(
            f"non-test pool holds {pool_total:.1f} s of audio; largest requested "
            f"adaptation size {sizes[-1]:.1f} s is unachievable "
            f"(achievable maximum about {pool_total:.1f} s)"
        )

    adaptation_sets: dict[tuple[str, int], list[str]] = {}
    for nominal, label in zip(sizes, labels):
        for fold in range(folds):
            frng = random.Random(child_seed(seed, f"split:adapt:{label}:{fold}"))
            order = frng.sample(pool, len(pool))
            chosen: list[str] = []
            total = 0.0
            for u in order:
                if total >= nominal:
                    break
                if total + u.duration_s <= (1 + SIZE_TOLERANCE) * nominal:
                    chosen.append(u.id)
                    total += u.duration_s
            if total < (1 - SIZE_TOLERANCE) * nominal:
                raise DataError(
                    f"could not assemble adaptation set {label} fold {fold}: "
                    f"reached {total:.1f} s of a nominal {nominal:.1f} s"
                )
            adaptation_sets[(label, fold)] = chosen

    plan = SplitPlan(
        seed=seed,
        test_ids=test_ids,
        adaptation_sets=adaptation_sets,
        nominal_sizes_s=dict(zip(labels, sizes)),
        folds=folds,
    )
    validate_split_plan(plan, manifest)
    return plan


def validate_split_plan(plan: SplitPlan, manifest: CorpusManifest) -> None:
    """Check every SplitPlan invariant against its manifest; raise DataError on violation."""
    by_id = manifest.by_id()
    test_set = set(plan.test_ids)
    test_speakers = {by_id[i].speaker_id for i in plan.test_ids}
    for (label, fold), ids in plan.adaptation_sets.items():
        overlap = test_set.intersection(ids)
        if overlap:
            raise DataError(f"adaptation set {label}/{fold} overlaps test ids: {sorted(overlap)}")
        spk = {by_id[i].speaker_id for i in ids}
        shared = test_speakers & spk
        if shared:
            raise DataError(f"adaptation set {label}/{fold} shares speakers with test: {sorted(shared)}")
        nominal = plan.nominal_sizes_s[label]
        total = sum(by_id[i].duration_s for i in ids)
        if not (1 - SIZE_TOLERANCE) * nominal <= total <= (1 + SIZE_TOLERANCE) * nominal:
            raise DataError(
                f"adaptation set {label}/{fold} duration {total:.1f} s outside "
                f"+-{SIZE_TOLERANCE:.0%} of nominal {nominal:.1f} s"
            )


def save_split_plan(plan: SplitPlan, path: str | Path) -> None:
    doc = {
        "seed": plan.seed,
        "folds": plan.folds,
        "test_ids": plan.test_ids,
        "nominal_sizes_s": plan.nominal_sizes_s,
        "adaptation_sets": {f"{label}:{fold}": ids for (label, fold), ids in sorted(plan.adaptation_sets.items())},
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_split_plan(path: str | Path) -> SplitPlan:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"unreadable split plan {path}: {exc}") from exc
    sets: dict[tuple[str, int], list[str]] = {}
    for key, ids in doc["adaptation_sets"].items():
        label, fold = key.rsplit(":", 1)
        sets[(label, int(fold))] = list(ids)
    return SplitPlan(
        seed=int(doc["seed"]),
        test_ids=list(doc["test_ids"]),
        adaptation_sets=sets,
        nominal_sizes_s={k: float(v) for k, v in doc["nominal_sizes_s"].items()},
        folds=int(doc["folds"]),
    )
