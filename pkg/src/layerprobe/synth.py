"""Synthetic two-class corpus generation with controllable difficulty.

Each speaker gets a constant per-speaker offset drawn around a class mean;
recordings are that offset plus white noise.  Because the synthetic
adapter is linear in the waveform, the offset survives mean pooling, so
the pooled class-mean distance is `separation` times the within-class
speaker std.  separation 0 makes the classes statistically identical.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import InvalidParams
from .manifest import Label, Manifest, Recording, Sex, Speaker, Task, save_manifest

SAMPLE_RATE = 16000
NOISE_STD = 0.05
SPEAKER_STD = 0.01
MIN_DURATION_S = 0.8
MAX_DURATION_S = 1.2


def generate_corpus(
    out_dir: Path | str,
    n_speakers: int,
    samples_per_speaker: int,
    separation: float,
    seed: int,
) -> Path:
    """Writes WAV files plus a manifest; returns the manifest path.

    Deterministic for a given seed: identical parameters reproduce the
    corpus bit for bit.
    """
    if n_speakers < 4 or n_speakers % 2 != 0:
        raise InvalidParams(f"n_speakers must be even and >= 4, got {n_speakers}")
    if samples_per_speaker < 1:
        raise InvalidParams(f"samples_per_speaker must be >= 1, got {samples_per_speaker}")
    if separation < 0:
        raise InvalidParams(f"separation must be nonnegative, got {separation}")

    out_dir = Path(out_dir)
    audio_dir = out_dir / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    class_shift = separation * SPEAKER_STD / 2.0

    speakers: list[Speaker] = []
    recordings: list[Recording] = []
    for i in range(n_speakers):
        label = Label.HEALTHY if i % 2 == 0 else Label.PATHOLOGICAL
        speaker_id = f"spk{i:03d}"
        speakers.append(
            Speaker(
                speaker_id=speaker_id,
                label=label,
                sex=Sex.M if i % 4 < 2 else Sex.F,
                age_years=int(rng.integers(35, 81)),
            )
        )
        class_mean = class_shift if label is Label.HEALTHY else -class_shift
        speaker_offset = class_mean + SPEAKER_STD * rng.standard_normal()
        for j in range(samples_per_speaker):
            duration = rng.uniform(MIN_DURATION_S, MAX_DURATION_S)
            n_samples = int(round(duration * SAMPLE_RATE))
            waveform = speaker_offset + NOISE_STD * rng.standard_normal(n_samples)
            recording_id = f"{speaker_id}-rec{j:02d}"
            path = audio_dir / f"{recording_id}.wav"
            wavfile.write(path, SAMPLE_RATE, waveform.astype(np.float32))
            task = Task.READ_SPEECH if (samples_per_speaker > 1 and j == samples_per_speaker - 1) else Task.SENTENCE
            recordings.append(
                Recording(
                    recording_id=recording_id,
                    speaker_id=speaker_id,
                    task=task,
                    audio_path=path,
                    sample_rate_hz=SAMPLE_RATE,
                    duration_s=n_samples / SAMPLE_RATE,
                )
            )

    manifest = Manifest(
        corpus_name=f"synthetic-sep{separation:g}-seed{seed}",
        speakers=tuple(speakers),
        recordings=tuple(recordings),
    )
    manifest_path = out_dir / "manifest.yaml"
    save_manifest(manifest, manifest_path)
    return manifest_path
