from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from scipy.io import wavfile

from layerprobe.manifest import Label, Manifest, Recording, Speaker, Task


def build_manifest(
    n_speakers: int = 4,
    recordings_per_speaker: int = 2,
    healthy: int | None = None,
    corpus_name: str = "test-corpus",
    base_dir: Path = Path("/nonexistent"),
    rate: int = 16000,
) -> Manifest:
    """In-memory manifest with fake audio paths (structure-only tests)."""
    if healthy is None:
        healthy = n_speakers // 2
    speakers = []
    recordings = []
    for i in range(n_speakers):
        label = Label.HEALTHY if i < healthy else Label.PATHOLOGICAL
        sid = f"spk{i:03d}"
        speakers.append(Speaker(speaker_id=sid, label=label))
        for j in range(recordings_per_speaker):
            rid = f"{sid}-rec{j:02d}"
            recordings.append(
                Recording(
                    recording_id=rid,
                    speaker_id=sid,
                    task=Task.SENTENCE if j else Task.READ_SPEECH,
                    audio_path=base_dir / f"{rid}.wav",
                    sample_rate_hz=rate,
                    duration_s=1.0,
                )
            )
    return Manifest(corpus_name=corpus_name, speakers=tuple(speakers), recordings=tuple(recordings))


def write_wav(path: Path, waveform: np.ndarray, rate: int, dtype=np.float32) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    if dtype == np.int16:
        data = np.clip(waveform * 32767, -32768, 32767).astype(np.int16)
    else:
        data = waveform.astype(dtype)
    wavfile.write(path, rate, data)
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(42)
