"""Per-layer embedding extraction and statistical pooling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adapters import ModelAdapter
from .errors import AdapterFailure, EmptyTemporalAxis, WaveformTooShort


@dataclass(frozen=True)
class LayerEmbeddings:
    """Raw per-layer temporal features, shape (num_layers, hidden_dim, T)."""

    recording_id: str
    model_id: str
    tensor: np.ndarray


@dataclass(frozen=True)
class PooledEmbedding:
    """Per-layer mean and population std over time, shape (num_layers, 2 * hidden_dim).

    Within each layer row, components [0, D) hold the temporal mean and
    components [D, 2D) the standard deviation.
    """

    recording_id: str
    model_id: str
    vectors: np.ndarray

    def layer_slice(self, layer_index: int) -> np.ndarray:
        """Pooled vector for a 1-based layer index."""
        if not 1 <= layer_index <= self.vectors.shape[0]:
            raise IndexError(f"layer index {layer_index} outside [1, {self.vectors.shape[0]}]")
        return self.vectors[layer_index - 1]


def extract(waveform: np.ndarray, adapter: ModelAdapter, recording_id: str = "") -> LayerEmbeddings:
    """Runs the frozen adapter on a waveform and validates its output contract."""
    x = np.asarray(waveform)
    if x.ndim != 1:
        raise AdapterFailure(f"waveform must be 1-D, got shape {x.shape}")
    if x.shape[0] < adapter.min_samples:
        raise WaveformTooShort(
            f"{x.shape[0]} samples < adapter minimum {adapter.min_samples}"
        )
    try:
        tensor = np.asarray(adapter.extract_layers(x), dtype=np.float32)
    except Exception as exc:
        raise AdapterFailure(f"{adapter.model_id}: {exc}") from exc
    expected = (adapter.num_layers, adapter.hidden_dim)
    if tensor.ndim != 3 or tensor.shape[:2] != expected or tensor.shape[2] < 1:
        raise AdapterFailure(
            f"{adapter.model_id}: bad output shape {tensor.shape}, expected {expected} x T"
        )
    if not np.all(np.isfinite(tensor)):
        raise AdapterFailure(f"{adapter.model_id}: non-finite values in output")
    return LayerEmbeddings(recording_id=recording_id, model_id=adapter.model_id, tensor=tensor)


def pool(embeddings: LayerEmbeddings) -> PooledEmbedding:
    """Temporal mean and population std per layer and feature.

    Frames are summed in sorted order, which makes the result exactly
    invariant to any permutation of the temporal axis.
    """
    tensor = embeddings.tensor
    if tensor.ndim != 3 or tensor.shape[2] == 0:
        raise EmptyTemporalAxis(f"cannot pool tensor of shape {tensor.shape}")
    x = tensor.astype(np.float64)
    t = x.shape[2]
    mean = np.sort(x, axis=2).sum(axis=2) / t
    squared_dev = np.square(x - mean[:, :, None])
    std = np.sqrt(np.sort(squared_dev, axis=2).sum(axis=2) / t)
    vectors = np.concatenate([mean, std], axis=1).astype(np.float32)
    return PooledEmbedding(
        recording_id=embeddings.recording_id, model_id=embeddings.model_id, vectors=vectors
    )
