"""Acceptance suite.

Each test implements one release criterion end to end at its stated
tolerance and prints a single PASS line on success.  Criterion 1 drives
the real CLI (synth, extract, sweep) on synthetic corpora and takes a
couple of minutes; everything else is fast.
"""

import json
import math
import time

import numpy as np
import pytest

from layerprobe.cache import EmbeddingKind, cache_get, cache_put
from layerprobe.cli import main
from layerprobe.embeddings import LayerEmbeddings, PooledEmbedding, pool
from layerprobe.errors import CacheCorrupt
from layerprobe.evaluation import (
    AggregationMode,
    PredictionRecord,
    read_prediction_records,
    render_table,
    soft_vote,
    table_from_records,
    write_prediction_records,
)
from layerprobe.folds import make_folds
from layerprobe.losses import (
    contrastive_loss,
    contrastive_loss_grad,
    diversity_loss,
    diversity_loss_grad,
    gumbel_code_probs,
    gumbel_noise,
)
from layerprobe.manifest import Label
from layerprobe.probe import (
    ProbeModel,
    TrainConfig,
    load_probe,
    lr_at_epoch,
    predict,
    save_probe,
    train,
    xavier_init,
)

from conftest import build_manifest


def announce(number: int, name: str) -> None:
    print(f"\nACCEPTANCE {number} PASS: {name}")


ADAPTER_FLAGS = ["--adapter", "synthetic:0", "--adapter-layers", "24", "--adapter-dim", "64"]


def run_pipeline(root, separation: float) -> dict[int, float]:
    corpus = root / f"corpus-sep{separation:g}"
    cache = root / f"cache-sep{separation:g}"
    results = root / f"results-sep{separation:g}"
    assert main(["synth", "--out", str(corpus), "--speakers", "40", "--samples", "5",
                 "--separation", str(separation), "--seed", "7"]) == 0
    assert main(["extract", "--manifest", str(corpus / "manifest.yaml"), "--cache", str(cache),
                 *ADAPTER_FLAGS, "--workers", "1"]) == 0
    assert main(["sweep", "--manifest", str(corpus / "manifest.yaml"), "--cache", str(cache),
                 *ADAPTER_FLAGS, "--k", "10", "--out", str(results), "--workers", "1"]) == 0
    lines = (results / "table.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0].startswith("layer,")
    return {int(row.split(",")[0]): float(row.split(",")[1]) / 100 for row in lines[1:]}


def test_criterion_1_end_to_end_synthetic_run(tmp_path):
    started = time.monotonic()
    accuracies = run_pipeline(tmp_path, separation=4.0)
    elapsed = time.monotonic() - started
    assert elapsed < 300, f"separable pipeline took {elapsed:.0f}s, budget is 300s"
    assert sorted(accuracies) == list(range(1, 25))
    assert all(acc >= 0.90 for acc in accuracies.values()), accuracies

    chance = run_pipeline(tmp_path, separation=0.0)
    assert all(0.35 <= acc <= 0.65 for acc in chance.values()), chance
    announce(1, f"end-to-end synthetic run ({elapsed:.0f}s; "
                f"min separable accuracy {min(accuracies.values()):.3f}; "
                f"chance band [{min(chance.values()):.3f}, {max(chance.values()):.3f}])")


def test_criterion_2_pooling_oracle():
    rng = np.random.default_rng(20)
    worst = 0.0
    for case in range(200):
        shape = (int(rng.integers(1, 25)), int(rng.integers(1, 65)), int(rng.integers(1, 201)))
        tensor = rng.normal(size=shape).astype(np.float32)
        emb = LayerEmbeddings(recording_id="r", model_id="m", tensor=tensor)
        pooled = pool(emb)

        # independent two-pass oracle: exact fsum accumulation per element
        l, d, t = shape
        for li in range(l):
            for di in range(d):
                values = [float(v) for v in tensor[li, di, :]]
                mean = math.fsum(values) / t
                var = math.fsum((v - mean) ** 2 for v in values) / t
                worst = max(
                    worst,
                    abs(float(pooled.vectors[li, di]) - mean),
                    abs(float(pooled.vectors[li, d + di]) - math.sqrt(var)),
                )

        if case % 10 == 0:
            permuted = tensor[:, :, rng.permutation(t)]
            shuffled = pool(LayerEmbeddings(recording_id="r", model_id="m", tensor=permuted))
            assert shuffled.vectors.tobytes() == pooled.vectors.tobytes()
    assert worst < 1e-6, f"worst pooling deviation {worst:.2e}"
    announce(2, f"pooling matches two-pass oracle (worst {worst:.2e}) and is "
                "exactly permutation invariant")


def test_criterion_3_fold_invariants_over_1000_seeds():
    manifest = build_manifest(n_speakers=100, recordings_per_speaker=1, healthy=50)
    labels = {s.speaker_id: s.label for s in manifest.speakers}
    all_speakers = set(labels)
    for seed in range(1000):
        plan = make_folds(manifest, k=10, seed=seed)
        assert plan == make_folds(manifest, k=10, seed=seed)  # determinism per seed
        tested = set()
        for fold in plan.folds:
            assert len(fold.train_speakers) == 80
            assert len(fold.val_speakers) == 10
            assert len(fold.test_speakers) == 10
            assert not fold.train_speakers & fold.val_speakers
            assert not fold.train_speakers & fold.test_speakers
            assert not fold.val_speakers & fold.test_speakers
            assert not tested & fold.test_speakers
            tested |= fold.test_speakers
            for role_set in (fold.train_speakers, fold.val_speakers, fold.test_speakers):
                healthy = sum(1 for s in role_set if labels[s] is Label.HEALTHY)
                assert abs(healthy - len(role_set) / 2) <= 1
        assert tested == all_speakers
    announce(3, "fold invariants hold over 1000 seeds (80/10/10, disjoint, stratified)")


def _fd_gradient(func, x, step):
    grad = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        bump = np.zeros_like(x, dtype=np.float64)
        bump[it.multi_index] = step
        grad[it.multi_index] = (func(x + bump) - func(x - bump)) / (2 * step)
        it.iternext()
    return grad


def _rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


def test_criterion_4_loss_verification():
    rng = np.random.default_rng(4)

    for _ in range(200):
        v = int(rng.integers(2, 64))
        p = gumbel_code_probs(
            rng.normal(size=v) * 4,
            gumbel_noise(rng.uniform(1e-12, 1 - 1e-12, v)),
            float(rng.uniform(0.05, 5.0)),
        )
        assert abs(p.sum() - 1.0) <= 1e-9

    for _ in range(50):
        logits = rng.normal(size=10)
        noise = gumbel_noise(rng.uniform(1e-6, 1 - 1e-6, 10))
        p = gumbel_code_probs(logits, noise, 1e-4)
        assert abs(p.max() - 1.0) <= 1e-3
        assert p.argmax() == (logits + noise).argmax()

    for _ in range(200):
        g, v = int(rng.integers(1, 5)), int(rng.integers(2, 20))
        value = diversity_loss(rng.dirichlet(np.ones(v), size=g))
        assert -math.log(v) / v - 1e-12 <= value <= 1e-12
    assert diversity_loss(np.full((3, 8), 1 / 8)) == pytest.approx(-math.log(8) / 8, abs=1e-12)
    one_hot = np.zeros((3, 8))
    one_hot[:, 2] = 1.0
    assert diversity_loss(one_hot) == 0.0

    anchor = np.array([0.3, -1.2, 0.8])
    assert contrastive_loss(anchor, anchor.copy(), [], 0.4) == 0.0
    for k in (2, 4, 9):
        loss = contrastive_loss(anchor, anchor.copy(), [anchor.copy() for _ in range(k - 1)], 0.9)
        assert loss == pytest.approx(math.log(k), abs=1e-12)

    worst_c = 0.0
    for _ in range(100):
        dim = int(rng.integers(2, 8))
        c = rng.normal(size=dim) + 0.1
        q = rng.normal(size=dim) + 0.1
        ds = [rng.normal(size=dim) + 0.1 for _ in range(int(rng.integers(1, 5)))]
        tau = float(rng.uniform(0.2, 2.0))
        worst_c = max(worst_c, _rel_err(
            contrastive_loss_grad(c, q, ds, tau),
            _fd_gradient(lambda x: contrastive_loss(x, q, ds, tau), c, 1e-6),
        ))
    assert worst_c < 1e-4

    worst_d = 0.0
    for _ in range(100):
        g, v = int(rng.integers(1, 4)), int(rng.integers(2, 8))
        p = rng.dirichlet(np.full(v, 5.0), size=g)
        worst_d = max(worst_d, _rel_err(
            diversity_loss_grad(p), _fd_gradient(diversity_loss, p, 1e-7)
        ))
    assert worst_d < 1e-4
    announce(4, f"loss normalization, limits, bounds, and gradients "
                f"(worst rel err {max(worst_c, worst_d):.2e})")


def test_criterion_5_xavier_statistics():
    for n_in, n_out in ((3, 3), (100, 28), (2048, 2)):
        rng = np.random.default_rng((n_in, n_out))
        bound = math.sqrt(6.0 / (n_in + n_out))
        per_call = n_in * n_out
        calls = math.ceil(1_000_000 / per_call)
        chunks = [xavier_init(n_in, n_out, rng).ravel() for _ in range(calls)]
        samples = np.concatenate(chunks)[:1_000_000]
        assert samples.size == 1_000_000
        assert np.all(np.abs(samples) <= bound), f"out-of-bound sample for ({n_in}, {n_out})"
        assert abs(samples.mean()) < 0.003 * bound
        expected_var = 2.0 / (n_in + n_out)
        assert abs(samples.var() - expected_var) < 0.02 * expected_var
    announce(5, "Xavier bound, mean, and variance at 1e6 draws for three fan configurations")


def test_criterion_6_soft_voting():
    rng = np.random.default_rng(6)

    def group_from(raw, fold=0):
        return [
            PredictionRecord(
                recording_id=f"r{i}", speaker_id="s", probs=(float(p[0]), float(p[1])),
                true_label=Label.HEALTHY, layer_index=1, model_id="m", fold_index=fold,
            )
            for i, p in enumerate(raw)
        ]

    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 12))
        raw = rng.uniform(1e-3, 1.0, size=(n, 2))
        raw /= raw.sum(axis=1, keepdims=True)
        probs, label = soft_vote(group_from(raw))
        brute = np.zeros(2)
        for p in raw:
            brute = brute + p
        brute /= n
        worst = max(worst, float(np.abs(probs - brute).max()))

        scale = float(rng.uniform(0.1, 9.0))
        rescaled = raw * scale
        rescaled /= rescaled.sum(axis=1, keepdims=True)
        _, label_rescaled = soft_vote(group_from(rescaled))
        assert label is label_rescaled
    assert worst < 1e-12

    _, tie_label = soft_vote(group_from(np.array([[0.5, 0.5], [0.5, 0.5]])))
    assert tie_label is Label.HEALTHY
    announce(6, f"soft voting matches brute-force mean (worst {worst:.1e}), argmax "
                "rescale-invariant, tie breaks to class 0")


def test_criterion_7_training_contracts():
    rng = np.random.default_rng(7)

    def gaussian_pairs(n, dim, mean):
        xs, labels = [], []
        for cls, sign in ((0, -1.0), (1, 1.0)):
            block = rng.normal(size=(n, dim))
            block[:, 0] += sign * mean
            xs.append(block)
            labels += [cls] * n
        return [(v, y) for v, y in zip(np.concatenate(xs), labels)]

    train_pairs = gaussian_pairs(40, 8, 4.0)
    val_pairs = gaussian_pairs(10, 8, 4.0)

    # early stop on monotonically worsening validation loss
    inverted = [(v, 1 - y) for v, y in val_pairs]
    config = TrainConfig(max_epochs=500, early_stop_patience=10, seed=0)
    _, history = train(1, train_pairs, inverted, config)
    assert np.all(np.diff(history.val_loss) > 0)
    assert len(history.val_loss) <= 1 + config.early_stop_patience

    for epoch in range(151):
        assert lr_at_epoch(TrainConfig(), epoch) == 0.01 * 0.9 ** (epoch // 15)

    config = TrainConfig(max_epochs=200, seed=9)
    probe_a, hist_a = train(2, train_pairs, val_pairs, config, model_id="m")
    probe_b, hist_b = train(2, train_pairs, val_pairs, config, model_id="m")
    assert probe_a.weights.tobytes() == probe_b.weights.tobytes()
    assert probe_a.bias.tobytes() == probe_b.bias.tobytes()
    assert hist_a == hist_b

    correct = sum(predict(probe_a, v).argmax() == y for v, y in val_pairs)
    assert correct == len(val_pairs)
    announce(7, f"early stop within patience+1 ({len(history.val_loss)} epochs), exact lr "
                "schedule, bitwise-deterministic probes, perfect separable validation")


def test_criterion_8_serialization_and_table_layout(tmp_path):
    rng = np.random.default_rng(8)

    layer_emb = LayerEmbeddings(
        recording_id="rec", model_id="m", tensor=rng.normal(size=(4, 6, 9)).astype(np.float32)
    )
    pooled_emb = PooledEmbedding(
        recording_id="rec", model_id="m",
        vectors=np.abs(rng.normal(size=(4, 12))).astype(np.float32),
    )
    for emb, kind in ((layer_emb, EmbeddingKind.LAYERS), (pooled_emb, EmbeddingKind.POOLED)):
        path = cache_put(emb, tmp_path)
        back = cache_get("rec", "m", kind, tmp_path)
        payload = emb.tensor if kind is EmbeddingKind.LAYERS else emb.vectors
        back_payload = back.tensor if kind is EmbeddingKind.LAYERS else back.vectors
        assert back_payload.tobytes() == payload.tobytes()
        blob = path.read_bytes()
        path.write_bytes(blob[:-3])
        with pytest.raises(CacheCorrupt):
            cache_get("rec", "m", kind, tmp_path)

    probe = ProbeModel(
        weights=rng.normal(size=(2, 12)).astype(np.float32),
        bias=rng.normal(size=2).astype(np.float32),
        layer_index=5, model_id="m",
    )
    probe_path = tmp_path / "probe.bin"
    save_probe(probe, probe_path)
    reloaded = load_probe(probe_path)
    assert reloaded.weights.tobytes() == probe.weights.tobytes()
    save_probe(reloaded, tmp_path / "probe2.bin")
    assert (tmp_path / "probe2.bin").read_bytes() == probe_path.read_bytes()
    probe_path.write_bytes(probe_path.read_bytes()[:-1])
    with pytest.raises(CacheCorrupt):
        load_probe(probe_path)

    # Table layout from a prediction dump: 24 layers x 3 models
    models = ("w2v2-large", "xlsr53", "xlsr53-es")
    records = []
    for model in models:
        for layer in range(1, 25):
            for speaker in range(10):
                correct = (speaker + layer) % 10 > 1
                true = Label.HEALTHY if speaker % 2 == 0 else Label.PATHOLOGICAL
                p_h = 0.9 if (true is Label.HEALTHY) == correct else 0.1
                records.append(PredictionRecord(
                    recording_id=f"{model}-{layer}-{speaker}", speaker_id=f"s{speaker}",
                    probs=(p_h, 1 - p_h), true_label=true, layer_index=layer,
                    model_id=model, fold_index=speaker % 5,
                ))
    dump = tmp_path / "records.jsonl"
    write_prediction_records(records, dump)
    table = table_from_records(read_prediction_records(dump), AggregationMode.POOLED_SPEAKERS)
    csv = render_table(table, "CSV")
    again = render_table(
        table_from_records(read_prediction_records(dump), AggregationMode.POOLED_SPEAKERS), "CSV"
    )
    assert csv == again  # byte-deterministic through a dump round trip
    lines = csv.splitlines()
    assert lines[0] == "layer," + ",".join(sorted(models))
    assert len(lines) == 25  # header + 24 layer rows
    assert all(len(line.split(",")) == 4 for line in lines)
    announce(8, "binary round trips bitwise, truncation raises CacheCorrupt, "
                "table reproduces the 24 x 3 layout byte-deterministically")


def test_criterion_9_documented_reproduction_path():
    # the corpus and checkpoints are access-restricted, so the release ships a
    # documented path instead of a CI job: README instructions plus the plugin
    # adapter hook the instructions rely on
    readme = (__import__("pathlib").Path(__file__).parent.parent / "README.md").read_text(
        encoding="utf-8"
    )
    for needle in ("PC-GITA", "plugin:", "85.0", "86.0", "sweep"):
        assert needle in readme, f"README must document the reproduction path ({needle!r} missing)"

    from layerprobe.adapters import resolve_adapter
    from layerprobe.errors import AdapterResolutionError

    with pytest.raises(AdapterResolutionError):
        resolve_adapter("plugin:nonexistent.module:build", checkpoint="/path/to/ckpt")
    announce(9, "reproduction path documented (README) with runtime plugin adapter hook")
