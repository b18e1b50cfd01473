"""Speaker-disjoint k-fold construction with class stratification.

Test sets partition the speakers: each class's shuffled speaker list is
dealt cyclically across folds (the dealing pointer continues from one
class to the next, so total fold sizes stay within one of each other).
The validation set of fold i is the test set of fold i+1 (cyclic), and
the training set is everything else.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
import yaml

from .errors import MalformedDocument, MissingFile, TooFewSpeakers, UnknownSpeaker
from .manifest import Label, Manifest, Recording

FOLD_PLAN_SCHEMA_VERSION = 1


class Role(Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


@dataclass(frozen=True)
class Fold:
    train_speakers: frozenset[str]
    val_speakers: frozenset[str]
    test_speakers: frozenset[str]

    def speakers_for(self, role: Role) -> frozenset[str]:
        return {
            Role.TRAIN: self.train_speakers,
            Role.VAL: self.val_speakers,
            Role.TEST: self.test_speakers,
        }[role]


@dataclass(frozen=True)
class FoldPlan:
    k: int
    seed: int
    folds: tuple[Fold, ...]


def make_folds(manifest: Manifest, k: int, seed: int) -> FoldPlan:
    """Builds k speaker-disjoint, class-stratified folds, deterministically.

    Raises TooFewSpeakers when the manifest has fewer than k speakers.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    all_ids = [s.speaker_id for s in manifest.speakers]
    if len(all_ids) < k:
        raise TooFewSpeakers(f"{len(all_ids)} speakers cannot fill {k} folds")

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    test_sets: list[list[str]] = [[] for _ in range(k)]
    pointer = 0
    for label in Label:
        ids = sorted(s.speaker_id for s in manifest.speakers if s.label is label)
        order = rng.permutation(len(ids))
        for j in order:
            test_sets[pointer % k].append(ids[j])
            pointer += 1

    full = frozenset(all_ids)
    folds = []
    for i in range(k):
        test = frozenset(test_sets[i])
        val = frozenset(test_sets[(i + 1) % k])
        folds.append(
            Fold(train_speakers=full - test - val, val_speakers=val, test_speakers=test)
        )
    return FoldPlan(k=k, seed=seed, folds=tuple(folds))


def recordings_for(fold: Fold, role: Role, manifest: Manifest) -> list[Recording]:
    """Recordings whose speaker has the given role, sorted by recording id."""
    speakers = fold.speakers_for(role)
    known = {s.speaker_id for s in manifest.speakers}
    missing = speakers - known
    if missing:
        raise UnknownSpeaker(f"fold references speakers absent from manifest: {sorted(missing)}")
    selected = [r for r in manifest.recordings if r.speaker_id in speakers]
    return sorted(selected, key=lambda r: r.recording_id)


def save_fold_plan(plan: FoldPlan, path: Path | str) -> None:
    doc = {
        "schema_version": FOLD_PLAN_SCHEMA_VERSION,
        "k": plan.k,
        "seed": plan.seed,
        "folds": [
            {
                "train": sorted(f.train_speakers),
                "val": sorted(f.val_speakers),
                "test": sorted(f.test_speakers),
            }
            for f in plan.folds
        ],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        yaml.safe_dump(doc, f, sort_keys=False)


def load_fold_plan(path: Path | str) -> FoldPlan:
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    try:
        with path.open("r", encoding="utf-8") as f:
            doc = yaml.safe_load(f)
    except yaml.YAMLError as exc:
        raise MalformedDocument(f"{path}: {exc}") from None
    if not isinstance(doc, dict) or doc.get("schema_version") != FOLD_PLAN_SCHEMA_VERSION:
        raise MalformedDocument(f"{path}: not a fold plan document")
    try:
        folds = tuple(
            Fold(
                train_speakers=frozenset(entry["train"]),
                val_speakers=frozenset(entry["val"]),
                test_speakers=frozenset(entry["test"]),
            )
            for entry in doc["folds"]
        )
        return FoldPlan(k=int(doc["k"]), seed=int(doc["seed"]), folds=folds)
    except (KeyError, TypeError) as exc:
        raise MalformedDocument(f"{path}: {exc}") from None
