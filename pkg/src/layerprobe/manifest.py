"""Corpus description: speakers, recordings, and audio loading.

A corpus is described by a manifest, a YAML document with top-level fields
``corpus_name``, ``schema_version`` (currently 1), ``speakers`` (array of
``{id, label, sex, age}``) and ``recordings`` (array of ``{id, speaker,
task, path, sample_rate_hz, duration_s}``).  Audio paths are stored
relative to the manifest's directory.  Manifest values are immutable after
loading and safe to share across concurrent readers.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
import yaml
from scipy.io import wavfile
from scipy.signal import resample_poly

from .errors import (
    DecodeError,
    IntegrityViolation,
    MalformedDocument,
    MissingFile,
    ResampleError,
)

MANIFEST_SCHEMA_VERSION = 1


class Label(Enum):
    """Speaker class. HEALTHY is class index 0, PATHOLOGICAL is 1."""

    HEALTHY = "HEALTHY"
    PATHOLOGICAL = "PATHOLOGICAL"

    @property
    def index(self) -> int:
        return 0 if self is Label.HEALTHY else 1


class Sex(Enum):
    M = "M"
    F = "F"
    UNSPECIFIED = "UNSPECIFIED"


class Task(Enum):
    SENTENCE = "SENTENCE"
    READ_SPEECH = "READ_SPEECH"


@dataclass(frozen=True)
class Speaker:
    speaker_id: str
    label: Label
    sex: Sex = Sex.UNSPECIFIED
    age_years: int | None = None

    def violations(self) -> list[str]:
        problems = []
        if not self.speaker_id:
            problems.append("speaker with empty id")
        if os.sep in self.speaker_id or "\x00" in self.speaker_id:
            problems.append(f"speaker id {self.speaker_id!r} contains path separators")
        if self.age_years is not None and self.age_years <= 0:
            problems.append(f"speaker {self.speaker_id!r}: age must be positive")
        return problems


@dataclass(frozen=True)
class Recording:
    recording_id: str
    speaker_id: str
    task: Task
    audio_path: Path
    sample_rate_hz: int
    duration_s: float

    def violations(self) -> list[str]:
        problems = []
        if not self.recording_id:
            problems.append("recording with empty id")
        if os.sep in self.recording_id or "\x00" in self.recording_id:
            problems.append(f"recording id {self.recording_id!r} contains path separators")
        if self.sample_rate_hz <= 0:
            problems.append(f"recording {self.recording_id!r}: sample_rate_hz must be positive")
        if self.duration_s <= 0:
            problems.append(f"recording {self.recording_id!r}: duration_s must be positive")
        return problems


@dataclass(frozen=True)
class Manifest:
    corpus_name: str
    speakers: tuple[Speaker, ...]
    recordings: tuple[Recording, ...]

    def speaker(self, speaker_id: str) -> Speaker:
        for s in self.speakers:
            if s.speaker_id == speaker_id:
                return s
        raise KeyError(speaker_id)

    def violations(self) -> list[str]:
        """Collects every integrity problem instead of stopping at the first."""
        problems: list[str] = []
        seen_speakers: set[str] = set()
        for s in self.speakers:
            problems.extend(s.violations())
            if s.speaker_id in seen_speakers:
                problems.append(f"duplicate speaker id {s.speaker_id!r}")
            seen_speakers.add(s.speaker_id)
        seen_recordings: set[str] = set()
        recorded_speakers: set[str] = set()
        for r in self.recordings:
            problems.extend(r.violations())
            if r.recording_id in seen_recordings:
                problems.append(f"duplicate recording id {r.recording_id!r}")
            seen_recordings.add(r.recording_id)
            if r.speaker_id not in seen_speakers:
                problems.append(
                    f"recording {r.recording_id!r} references unknown speaker {r.speaker_id!r}"
                )
            recorded_speakers.add(r.speaker_id)
        for s in self.speakers:
            if s.speaker_id not in recorded_speakers:
                problems.append(f"speaker {s.speaker_id!r} has no recordings")
        return problems

    def validate(self) -> None:
        problems = self.violations()
        if problems:
            raise IntegrityViolation("\n".join(problems))


def class_balance(manifest: Manifest) -> dict[Label, int]:
    """Speaker counts per class; both classes always present in the result."""
    counts = {label: 0 for label in Label}
    for s in manifest.speakers:
        counts[s.label] += 1
    return counts


def _require(mapping: dict, field: str, context: str):
    if field not in mapping:
        raise MalformedDocument(f"{context}: missing field {field!r}")
    return mapping[field]


def _parse_enum(enum_cls, raw, context: str):
    try:
        return enum_cls(raw)
    except ValueError:
        allowed = ", ".join(e.value for e in enum_cls)
        raise MalformedDocument(f"{context}: {raw!r} is not one of ({allowed})") from None


def _parse_speaker(entry, idx: int) -> Speaker:
    context = f"speakers[{idx}]"
    if not isinstance(entry, dict):
        raise MalformedDocument(f"{context}: expected a mapping")
    speaker_id = str(_require(entry, "id", context))
    label = _parse_enum(Label, _require(entry, "label", context), f"{context}.label")
    sex = _parse_enum(Sex, entry.get("sex", "UNSPECIFIED"), f"{context}.sex")
    age = entry.get("age")
    if age is not None and not isinstance(age, int):
        raise MalformedDocument(f"{context}.age: expected an integer or absent")
    return Speaker(speaker_id=speaker_id, label=label, sex=sex, age_years=age)


def _parse_recording(entry, idx: int, base_dir: Path) -> Recording:
    context = f"recordings[{idx}]"
    if not isinstance(entry, dict):
        raise MalformedDocument(f"{context}: expected a mapping")
    try:
        rate = int(_require(entry, "sample_rate_hz", context))
        duration = float(_require(entry, "duration_s", context))
    except (TypeError, ValueError) as exc:
        raise MalformedDocument(f"{context}: {exc}") from None
    return Recording(
        recording_id=str(_require(entry, "id", context)),
        speaker_id=str(_require(entry, "speaker", context)),
        task=_parse_enum(Task, _require(entry, "task", context), f"{context}.task"),
        audio_path=base_dir / str(_require(entry, "path", context)),
        sample_rate_hz=rate,
        duration_s=duration,
    )


def load_manifest(path: Path | str) -> Manifest:
    """Loads and validates a manifest document.

    Raises MissingFile, MalformedDocument (with the offending field named),
    or IntegrityViolation (listing every broken invariant).
    """
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    try:
        with path.open("r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as exc:
        raise MalformedDocument(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise MalformedDocument(f"{path}: top level must be a mapping")

    version = _require(data, "schema_version", str(path))
    if version != MANIFEST_SCHEMA_VERSION:
        raise MalformedDocument(
            f"{path}: schema_version {version!r} unsupported (expected {MANIFEST_SCHEMA_VERSION})"
        )
    speakers_raw = _require(data, "speakers", str(path))
    recordings_raw = _require(data, "recordings", str(path))
    if not isinstance(speakers_raw, list) or not isinstance(recordings_raw, list):
        raise MalformedDocument(f"{path}: speakers and recordings must be arrays")

    base_dir = path.resolve().parent
    manifest = Manifest(
        corpus_name=str(_require(data, "corpus_name", str(path))),
        speakers=tuple(_parse_speaker(e, i) for i, e in enumerate(speakers_raw)),
        recordings=tuple(_parse_recording(e, i, base_dir) for i, e in enumerate(recordings_raw)),
    )
    manifest.validate()
    return manifest


def save_manifest(manifest: Manifest, path: Path | str) -> None:
    """Writes a manifest document; audio paths become relative to `path`."""
    path = Path(path)
    base_dir = path.resolve().parent
    doc = {
        "corpus_name": manifest.corpus_name,
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "speakers": [
            {
                "id": s.speaker_id,
                "label": s.label.value,
                "sex": s.sex.value,
                **({"age": s.age_years} if s.age_years is not None else {}),
            }
            for s in manifest.speakers
        ],
        "recordings": [
            {
                "id": r.recording_id,
                "speaker": r.speaker_id,
                "task": r.task.value,
                "path": os.path.relpath(r.audio_path, base_dir),
                "sample_rate_hz": r.sample_rate_hz,
                "duration_s": r.duration_s,
            }
            for r in manifest.recordings
        ],
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        yaml.safe_dump(doc, f, sort_keys=False)


def _to_float_mono(data: np.ndarray) -> np.ndarray:
    if data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    else:
        raise DecodeError(f"unsupported sample format {data.dtype}")
    if x.ndim == 2:
        x = x.mean(axis=1)
    elif x.ndim != 1:
        raise DecodeError(f"unsupported channel layout with shape {x.shape}")
    return x


def load_audio(recording: Recording, target_rate_hz: int) -> np.ndarray:
    """Decodes a recording to a mono waveform in [-1, 1] at `target_rate_hz`.

    Output length is within one sample of duration * target_rate_hz.
    """
    if target_rate_hz <= 0:
        raise ResampleError(f"target rate must be positive, got {target_rate_hz}")
    path = recording.audio_path
    if not path.exists():
        raise MissingFile(str(path))
    try:
        rate, data = wavfile.read(path)
    except Exception as exc:
        raise DecodeError(f"{path}: {exc}") from None
    x = _to_float_mono(np.asarray(data))
    if x.size == 0:
        raise DecodeError(f"{path}: empty audio stream")
    if rate != target_rate_hz:
        try:
            g = math.gcd(int(rate), int(target_rate_hz))
            x = resample_poly(x, target_rate_hz // g, rate // g)
        except Exception as exc:
            raise ResampleError(f"{path}: {rate} -> {target_rate_hz} Hz: {exc}") from None
    if not np.all(np.isfinite(x)):
        raise DecodeError(f"{path}: non-finite samples after decode")
    return np.clip(x, -1.0, 1.0)
