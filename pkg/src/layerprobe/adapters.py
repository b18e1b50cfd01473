"""Model adapters: the interface frozen pretrained encoders are wrapped in.

Real checkpoint-backed adapters are optional plug-ins resolved at runtime;
everything in the test suite and CI runs on the deterministic synthetic
adapter below, which needs no multi-gigabyte downloads.
"""

from __future__ import annotations

import importlib
from typing import Protocol, runtime_checkable

import numpy as np

from .errors import AdapterResolutionError

SYNTH_FRAME_SIZE = 400
SYNTH_HOP = 320


@runtime_checkable
class ModelAdapter(Protocol):
    """Frozen encoder exposing per-layer hidden states.

    `extract_layers` maps a mono waveform at `required_rate_hz` to an array
    of shape (num_layers, hidden_dim, T) and must be deterministic for
    identical input in a fixed environment.  `shareable` declares whether
    one instance may serve several workers.
    """

    model_id: str
    num_layers: int
    hidden_dim: int
    required_rate_hz: int
    min_samples: int
    shareable: bool

    def extract_layers(self, waveform: np.ndarray) -> np.ndarray: ...


class SyntheticAdapter:
    """Deterministic stand-in encoder built from seeded random projections.

    The waveform is framed (25 ms windows, 20 ms hop at 16 kHz) and each
    layer applies its own fixed projection matrix to every frame.  The
    projections are drawn once from seeds derived from (seed, layer), so
    identical waveforms always produce bitwise-identical tensors.
    """

    def __init__(self, seed: int, num_layers: int = 24, hidden_dim: int = 64):
        self.seed = seed
        self.num_layers = num_layers
        self.hidden_dim = hidden_dim
        self.required_rate_hz = 16000
        self.min_samples = SYNTH_FRAME_SIZE
        self.shareable = True
        self.model_id = f"synthetic-{seed}-L{num_layers}-D{hidden_dim}"
        self._projections = np.stack(
            [self._layer_projection(seed, layer, hidden_dim) for layer in range(num_layers)]
        )

    @staticmethod
    def _layer_projection(seed: int, layer: int, hidden_dim: int) -> np.ndarray:
        rng = np.random.default_rng(np.random.SeedSequence((seed, layer)))
        scale = 1.0 / np.sqrt(SYNTH_FRAME_SIZE)
        return rng.standard_normal((hidden_dim, SYNTH_FRAME_SIZE)) * scale

    def extract_layers(self, waveform: np.ndarray) -> np.ndarray:
        x = np.asarray(waveform, dtype=np.float64)
        frames = np.lib.stride_tricks.sliding_window_view(x, SYNTH_FRAME_SIZE)[::SYNTH_HOP]
        # (L, D, F) x (F, T) -> (L, D, T)
        l, d, f = self._projections.shape
        out = (self._projections.reshape(l * d, f) @ frames.T).reshape(l, d, -1)
        return out.astype(np.float32)


def resolve_adapter(
    spec: str,
    *,
    num_layers: int = 24,
    hidden_dim: int = 64,
    checkpoint: str | None = None,
) -> ModelAdapter:
    """Resolves an adapter spec string.

    Supported forms:
      - ``synthetic:<seed>``: the built-in synthetic adapter.
      - ``plugin:<module>:<factory>``: imports `module` and calls
        `factory(checkpoint=...)`, which must return a ModelAdapter.
    """
    if spec.startswith("synthetic:"):
        try:
            seed = int(spec.split(":", 1)[1])
        except ValueError:
            raise AdapterResolutionError(f"bad synthetic adapter seed in {spec!r}") from None
        return SyntheticAdapter(seed, num_layers=num_layers, hidden_dim=hidden_dim)
    if spec.startswith("plugin:"):
        parts = spec.split(":")
        if len(parts) != 3:
            raise AdapterResolutionError(f"plugin spec must be plugin:<module>:<factory>, got {spec!r}")
        _, module_name, factory_name = parts
        try:
            module = importlib.import_module(module_name)
        except ImportError as exc:
            raise AdapterResolutionError(f"cannot import adapter module {module_name!r}: {exc}") from None
        factory = getattr(module, factory_name, None)
        if factory is None:
            raise AdapterResolutionError(f"{module_name!r} has no attribute {factory_name!r}")
        adapter = factory(checkpoint=checkpoint)
        if not isinstance(adapter, ModelAdapter):
            raise AdapterResolutionError(f"{spec!r} did not produce a valid adapter")
        return adapter
    raise AdapterResolutionError(
        f"unrecognized adapter spec {spec!r}; expected synthetic:<seed> or plugin:<module>:<factory>"
    )
