import numpy as np
import pytest

from layerprobe.adapters import SYNTH_FRAME_SIZE, SYNTH_HOP, SyntheticAdapter, resolve_adapter
from layerprobe.embeddings import LayerEmbeddings, extract, pool
from layerprobe.errors import (
    AdapterFailure,
    AdapterResolutionError,
    EmptyTemporalAxis,
    WaveformTooShort,
)


def two_pass_pool_oracle(tensor):
    """Explicit per-element loops: mean then population std."""
    l, d, t = tensor.shape
    out = np.zeros((l, 2 * d))
    for li in range(l):
        for di in range(d):
            total = 0.0
            for ti in range(t):
                total += float(tensor[li, di, ti])
            mean = total / t
            sq = 0.0
            for ti in range(t):
                sq += (float(tensor[li, di, ti]) - mean) ** 2
            out[li, di] = mean
            out[li, d + di] = np.sqrt(sq / t)
    return out


class TestSyntheticAdapter:
    def test_layer_axis_is_24_by_default(self, rng):
        adapter = SyntheticAdapter(seed=5)
        waveform = rng.normal(0, 0.05, 16000)
        emb = extract(waveform, adapter, recording_id="r")
        assert emb.tensor.shape[0] == 24
        assert emb.tensor.shape[1] == 64

    def test_determinism_bitwise(self, rng):
        adapter = SyntheticAdapter(seed=5, num_layers=3, hidden_dim=8)
        waveform = rng.normal(0, 0.05, 9000)
        a = extract(waveform, adapter, recording_id="r")
        b = extract(waveform, adapter, recording_id="r")
        assert a.tensor.tobytes() == b.tensor.tobytes()

    def test_matches_independent_reimplementation(self, rng):
        # oracle: recompute the seeded projections and frame products directly
        seed, layers, dim = 11, 3, 6
        adapter = SyntheticAdapter(seed=seed, num_layers=layers, hidden_dim=dim)
        waveform = rng.normal(0, 0.1, 5000)
        emb = extract(waveform, adapter, recording_id="r")

        n_frames = 1 + (len(waveform) - SYNTH_FRAME_SIZE) // SYNTH_HOP
        assert emb.tensor.shape == (layers, dim, n_frames)
        for layer in range(layers):
            proj_rng = np.random.default_rng(np.random.SeedSequence((seed, layer)))
            proj = proj_rng.standard_normal((dim, SYNTH_FRAME_SIZE)) / np.sqrt(SYNTH_FRAME_SIZE)
            for t in range(n_frames):
                frame = waveform[t * SYNTH_HOP : t * SYNTH_HOP + SYNTH_FRAME_SIZE]
                np.testing.assert_allclose(emb.tensor[layer, :, t], proj @ frame, atol=1e-6)

    def test_waveform_too_short(self):
        adapter = SyntheticAdapter(seed=0, num_layers=2, hidden_dim=4)
        with pytest.raises(WaveformTooShort):
            extract(np.zeros(SYNTH_FRAME_SIZE - 1), adapter)

    def test_adapter_exception_wrapped(self):
        class Broken(SyntheticAdapter):
            def extract_layers(self, waveform):
                raise RuntimeError("kaboom")

        with pytest.raises(AdapterFailure, match="kaboom"):
            extract(np.zeros(1000), Broken(seed=0, num_layers=2, hidden_dim=4))

    def test_bad_output_shape_rejected(self):
        class WrongShape(SyntheticAdapter):
            def extract_layers(self, waveform):
                return np.zeros((1, 1, 1))

        with pytest.raises(AdapterFailure, match="shape"):
            extract(np.zeros(1000), WrongShape(seed=0, num_layers=2, hidden_dim=4))

    def test_resolve_adapter_specs(self):
        adapter = resolve_adapter("synthetic:9", num_layers=5, hidden_dim=7)
        assert adapter.num_layers == 5 and adapter.hidden_dim == 7
        with pytest.raises(AdapterResolutionError):
            resolve_adapter("synthetic:notanint")
        with pytest.raises(AdapterResolutionError):
            resolve_adapter("plugin:no.such.module:factory")
        with pytest.raises(AdapterResolutionError):
            resolve_adapter("mystery")


class TestPool:
    def test_constant_tensor(self):
        tensor = np.full((2, 3, 7), 0.7, dtype=np.float32)
        pooled = pool(LayerEmbeddings(recording_id="r", model_id="m", tensor=tensor))
        np.testing.assert_allclose(pooled.vectors[:, :3], 0.7, atol=1e-12)
        np.testing.assert_allclose(pooled.vectors[:, 3:], 0.0, atol=1e-12)

    def test_single_frame(self):
        tensor = np.arange(6, dtype=np.float32).reshape(2, 3, 1)
        pooled = pool(LayerEmbeddings(recording_id="r", model_id="m", tensor=tensor))
        np.testing.assert_array_equal(pooled.vectors[:, :3], tensor[:, :, 0])
        np.testing.assert_array_equal(pooled.vectors[:, 3:], 0.0)

    def test_two_values_population_std(self):
        # values {1, 3}: mean 2, population std 1 (sample convention would give sqrt(2))
        tensor = np.array([[[1.0, 3.0]]], dtype=np.float32)
        pooled = pool(LayerEmbeddings(recording_id="r", model_id="m", tensor=tensor))
        assert pooled.vectors[0, 0] == 2.0
        assert pooled.vectors[0, 1] == 1.0

    def test_matches_two_pass_oracle(self, rng):
        for _ in range(10):
            shape = (int(rng.integers(1, 6)), int(rng.integers(1, 9)), int(rng.integers(1, 40)))
            tensor = rng.normal(size=shape).astype(np.float32)
            pooled = pool(LayerEmbeddings(recording_id="r", model_id="m", tensor=tensor))
            oracle = two_pass_pool_oracle(tensor)
            np.testing.assert_allclose(pooled.vectors, oracle, atol=1e-6)

    def test_exact_permutation_invariance(self, rng):
        tensor = rng.normal(size=(3, 4, 17)).astype(np.float32)
        base = pool(LayerEmbeddings(recording_id="r", model_id="m", tensor=tensor))
        for _ in range(5):
            permuted = tensor[:, :, rng.permutation(17)]
            shuffled = pool(LayerEmbeddings(recording_id="r", model_id="m", tensor=permuted))
            assert shuffled.vectors.tobytes() == base.vectors.tobytes()

    def test_std_half_nonnegative(self, rng):
        tensor = rng.normal(size=(4, 5, 30)).astype(np.float32) * 100
        pooled = pool(LayerEmbeddings(recording_id="r", model_id="m", tensor=tensor))
        assert np.all(pooled.vectors[:, 5:] >= 0)

    def test_empty_temporal_axis(self):
        tensor = np.zeros((2, 3, 0), dtype=np.float32)
        with pytest.raises(EmptyTemporalAxis):
            pool(LayerEmbeddings(recording_id="r", model_id="m", tensor=tensor))

    def test_layer_slice_is_one_based(self):
        tensor = np.zeros((4, 2, 3), dtype=np.float32)
        pooled = pool(LayerEmbeddings(recording_id="r", model_id="m", tensor=tensor))
        assert pooled.layer_slice(1).shape == (4,)
        with pytest.raises(IndexError):
            pooled.layer_slice(5)
        with pytest.raises(IndexError):
            pooled.layer_slice(0)
