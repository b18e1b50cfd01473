"""Speaker-level soft voting, accuracy tables, and the layer sweep.

The sweep trains one probe per (layer, fold), predicts the fold's test
recordings, soft-votes each test speaker's class, and aggregates speaker
accuracies either by pooling every fold's test speakers into one pool
(the default) or by averaging per-fold accuracies.
"""

from __future__ import annotations

import dataclasses
import json
from collections.abc import Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adapters import ModelAdapter
from .cache import EmbeddingKind, cache_get, cache_put
from .embeddings import extract, pool
from .errors import (
    EmptyGroup,
    EmptyInput,
    EmptyTable,
    IntegrityViolation,
    LayerProbeError,
    MixedSpeaker,
    NotCached,
    WriteError,
)
from .folds import FoldPlan, Role, recordings_for
from .manifest import Label, Manifest, load_audio
from .probe import TrainConfig, predict, train


class AggregationMode:
    POOLED_SPEAKERS = "pooled_speakers"
    MEAN_OF_FOLDS = "mean_of_folds"

    ALL = (POOLED_SPEAKERS, MEAN_OF_FOLDS)


@dataclass(frozen=True)
class PredictionRecord:
    recording_id: str
    speaker_id: str
    probs: tuple[float, float]
    true_label: Label
    layer_index: int
    model_id: str
    fold_index: int

    def __post_init__(self):
        total = self.probs[0] + self.probs[1]
        if abs(total - 1.0) > 1e-6 or min(self.probs) < 0:
            raise ValueError(f"probs {self.probs} is not a probability vector")


@dataclass
class LayerAccuracyTable:
    aggregation_mode: str
    rows: dict[tuple[int, str], float]  # (layer_index, model_id) -> accuracy in [0, 1]

    def layers(self) -> list[int]:
        return sorted({layer for layer, _ in self.rows})

    def models(self) -> list[str]:
        return sorted({model for _, model in self.rows})


def soft_vote(records: Sequence[PredictionRecord]) -> tuple[np.ndarray, Label]:
    """Mean probability vector over one speaker's samples; argmax label.

    Ties go to the lowest class index (HEALTHY).
    """
    if len(records) == 0:
        raise EmptyGroup("soft voting needs at least one record")
    keys = {(r.speaker_id, r.layer_index, r.model_id) for r in records}
    if len(keys) > 1:
        raise MixedSpeaker(f"records mix speaker/layer/model groups: {sorted(keys)}")
    probs = np.array([r.probs for r in records], dtype=np.float64).mean(axis=0)
    predicted = Label.HEALTHY if int(probs.argmax()) == 0 else Label.PATHOLOGICAL
    return probs, predicted


def speaker_accuracy(votes: Sequence[tuple[Label, Label]]) -> float:
    """Fraction of (predicted, true) pairs that agree."""
    if len(votes) == 0:
        raise EmptyInput("no votes to score")
    return sum(1 for predicted, true in votes if predicted is true) / len(votes)


def _group_votes(records: Iterable[PredictionRecord]) -> list[tuple[Label, Label]]:
    groups: dict[str, list[PredictionRecord]] = {}
    for r in records:
        groups.setdefault(r.speaker_id, []).append(r)
    votes = []
    for speaker_id in sorted(groups):
        group = groups[speaker_id]
        _, predicted = soft_vote(group)
        votes.append((predicted, group[0].true_label))
    return votes


def table_from_records(
    records: Sequence[PredictionRecord], aggregation_mode: str = AggregationMode.POOLED_SPEAKERS
) -> LayerAccuracyTable:
    """Re-votes a prediction dump into a per-(layer, model) accuracy table."""
    if aggregation_mode not in AggregationMode.ALL:
        raise ValueError(f"unknown aggregation mode {aggregation_mode!r}")
    cells: dict[tuple[int, str], list[PredictionRecord]] = {}
    for r in records:
        cells.setdefault((r.layer_index, r.model_id), []).append(r)
    rows: dict[tuple[int, str], float] = {}
    for key in sorted(cells):
        cell = cells[key]
        if aggregation_mode == AggregationMode.POOLED_SPEAKERS:
            rows[key] = speaker_accuracy(_group_votes(cell))
        else:
            folds: dict[int, list[PredictionRecord]] = {}
            for r in cell:
                folds.setdefault(r.fold_index, []).append(r)
            per_fold = [speaker_accuracy(_group_votes(folds[i])) for i in sorted(folds)]
            rows[key] = float(np.mean(per_fold))
    return LayerAccuracyTable(aggregation_mode=aggregation_mode, rows=rows)


def _pooled_for_recording(recording, adapter, cache_dir) -> np.ndarray:
    try:
        cached = cache_get(recording.recording_id, adapter.model_id, EmbeddingKind.POOLED, cache_dir)
        return cached.vectors
    except NotCached:
        pass
    waveform = load_audio(recording, adapter.required_rate_hz)
    layer_emb = extract(waveform, adapter, recording_id=recording.recording_id)
    pooled = pool(layer_emb)
    cache_put(layer_emb, cache_dir)
    cache_put(pooled, cache_dir)
    return pooled.vectors


def _load_all_pooled(
    manifest: Manifest, adapter: ModelAdapter, cache_dir: Path
) -> dict[str, np.ndarray]:
    vectors = {}
    for recording in sorted(manifest.recordings, key=lambda r: r.recording_id):
        vectors[recording.recording_id] = _pooled_for_recording(recording, adapter, cache_dir)
    return vectors


def _job_seed(base_seed: int, layer_index: int, fold_index: int) -> int:
    return int(np.random.SeedSequence((base_seed, layer_index, fold_index)).generate_state(1)[0])


# worker-side state for the process pool; populated once per worker
_SWEEP_STATE: dict = {}


def _init_sweep_worker(state: dict) -> None:
    _SWEEP_STATE.update(state)


def _run_sweep_job(job: tuple[int, int], state: dict | None = None) -> tuple[list[dict], dict]:
    layer_index, fold_index = job
    s = state if state is not None else _SWEEP_STATE
    pooled: dict[str, np.ndarray] = s["pooled"]
    labels: dict[str, Label] = s["labels"]
    speakers_of: dict[str, str] = s["speaker_of"]
    fold_recordings = s["fold_recordings"][fold_index]
    config: TrainConfig = s["train_config"]
    model_id: str = s["model_id"]

    def pairs(role: str):
        return [
            (pooled[rid][layer_index - 1], labels[speakers_of[rid]].index)
            for rid in fold_recordings[role]
        ]

    job_config = dataclasses.replace(
        config, seed=_job_seed(config.seed, layer_index, fold_index)
    )
    try:
        probe, history = train(
            layer_index, pairs("train"), pairs("val"), job_config, model_id=model_id
        )
        results = []
        for rid in fold_recordings["test"]:
            probs = predict(probe, pooled[rid][layer_index - 1])
            results.append(
                {
                    "recording_id": rid,
                    "speaker_id": speakers_of[rid],
                    "probs": (float(probs[0]), float(probs[1])),
                    "true_label": labels[speakers_of[rid]].value,
                    "layer_index": layer_index,
                    "fold_index": fold_index,
                }
            )
        return results, history.to_dict()
    except LayerProbeError as exc:
        raise type(exc)(f"layer {layer_index}, fold {fold_index}: {exc}") from exc


def run_layer_sweep(
    manifest: Manifest,
    fold_plan: FoldPlan,
    adapter: ModelAdapter,
    train_config: TrainConfig,
    layers: Sequence[int],
    cache_dir: Path | str,
    aggregation_mode: str = AggregationMode.POOLED_SPEAKERS,
    workers: int = 1,
    histories_dir: Path | str | None = None,
) -> tuple[LayerAccuracyTable, list[PredictionRecord]]:
    """Trains and evaluates one probe per (layer, fold); returns table + records.

    Deterministic for fixed (manifest, fold plan, adapter, config seeds),
    independent of worker count.  Raises if any fold leaks a test speaker
    into its training or validation roles.  When `histories_dir` is given,
    each job's training history is written there as YAML for audit.
    """
    layers = list(layers)
    for layer in layers:
        if not 1 <= layer <= adapter.num_layers:
            raise ValueError(f"layer {layer} outside [1, {adapter.num_layers}]")

    labels = {s.speaker_id: s.label for s in manifest.speakers}
    speaker_of = {r.recording_id: r.speaker_id for r in manifest.recordings}
    fold_recordings = []
    for fold in fold_plan.folds:
        if (fold.test_speakers & fold.train_speakers) or (fold.test_speakers & fold.val_speakers):
            raise IntegrityViolation("fold leaks test speakers into train or validation")
        fold_recordings.append(
            {
                role.value: [r.recording_id for r in recordings_for(fold, role, manifest)]
                for role in Role
            }
        )

    pooled = _load_all_pooled(manifest, adapter, Path(cache_dir))
    state = {
        "pooled": pooled,
        "labels": labels,
        "speaker_of": speaker_of,
        "fold_recordings": fold_recordings,
        "train_config": train_config,
        "model_id": adapter.model_id,
    }
    jobs = [(layer, fold_index) for layer in layers for fold_index in range(fold_plan.k)]

    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_init_sweep_worker, initargs=(state,)
        ) as pool_exec:
            job_results = list(pool_exec.map(_run_sweep_job, jobs, chunksize=4))
    else:
        job_results = [_run_sweep_job(job, state) for job in jobs]

    if histories_dir is not None:
        import yaml

        histories_dir = Path(histories_dir)
        histories_dir.mkdir(parents=True, exist_ok=True)
        for (layer, fold_index), (_, history) in zip(jobs, job_results):
            path = histories_dir / f"layer{layer:02d}_fold{fold_index:02d}.yaml"
            path.write_text(yaml.safe_dump(history, sort_keys=False), encoding="utf-8")

    records = [
        PredictionRecord(
            recording_id=raw["recording_id"],
            speaker_id=raw["speaker_id"],
            probs=raw["probs"],
            true_label=Label(raw["true_label"]),
            layer_index=raw["layer_index"],
            model_id=adapter.model_id,
            fold_index=raw["fold_index"],
        )
        for result, _ in job_results
        for raw in result
    ]
    return table_from_records(records, aggregation_mode), records


def render_table(table: LayerAccuracyTable, fmt: str) -> str:
    """Renders the table as CSV, JSON, or MARKDOWN; byte-deterministic.

    One row per layer, one column per model id (sorted), accuracies as
    percentages rounded to one decimal.
    """
    fmt = fmt.upper()
    layers = table.layers()
    models = table.models()

    def cell(layer: int, model: str) -> str:
        value = table.rows.get((layer, model))
        return "" if value is None else f"{value * 100:.1f}"

    if fmt == "CSV":
        lines = [",".join(["layer"] + models)]
        for layer in layers:
            lines.append(",".join([str(layer)] + [cell(layer, m) for m in models]))
        return "\n".join(lines) + "\n"
    if fmt == "JSON":
        doc = {
            "aggregation_mode": table.aggregation_mode,
            "rows": [
                {"layer": layer, "model": model, "accuracy": float(f"{acc * 100:.1f}")}
                for (layer, model), acc in sorted(table.rows.items())
            ],
        }
        return json.dumps(doc, indent=2) + "\n"
    if fmt == "MARKDOWN":
        header = "| layer | " + " | ".join(models) + " |"
        rule = "| --- |" + " --- |" * len(models)
        lines = [header, rule]
        for layer in layers:
            lines.append(f"| {layer} | " + " | ".join(cell(layer, m) for m in models) + " |")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown table format {fmt!r}")


def render_plot(table: LayerAccuracyTable, out_path: Path | str, fmt: str | None = None) -> Path:
    """Accuracy-versus-layer curves, one per model; SVG unless the path says otherwise."""
    if not table.rows:
        raise EmptyTable("nothing to plot")
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_path = Path(out_path)
    if fmt is None:
        fmt = out_path.suffix.lstrip(".").lower() or "svg"
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for model in table.models():
        xs = [layer for layer in table.layers() if (layer, model) in table.rows]
        ys = [table.rows[(layer, model)] * 100 for layer in xs]
        ax.plot(xs, ys, marker="o", label=model)
    ax.set_xlabel("Layer")
    ax.set_ylabel("Accuracy (%)")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    try:
        fig.savefig(out_path, format=fmt)
    except OSError as exc:
        raise WriteError(f"{out_path}: {exc}") from None
    finally:
        plt.close(fig)
    return out_path


def write_prediction_records(records: Sequence[PredictionRecord], path: Path | str) -> None:
    """One JSON object per line, re-votable later with read_prediction_records."""
    lines = []
    for r in records:
        lines.append(
            json.dumps(
                {
                    "recording": r.recording_id,
                    "speaker": r.speaker_id,
                    "probs": list(r.probs),
                    "true_label": r.true_label.value,
                    "layer": r.layer_index,
                    "model": r.model_id,
                    "fold": r.fold_index,
                }
            )
        )
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_prediction_records(path: Path | str) -> list[PredictionRecord]:
    records = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        raw = json.loads(line)
        records.append(
            PredictionRecord(
                recording_id=raw["recording"],
                speaker_id=raw["speaker"],
                probs=(raw["probs"][0], raw["probs"][1]),
                true_label=Label(raw["true_label"]),
                layer_index=raw["layer"],
                model_id=raw["model"],
                fold_index=raw["fold"],
            )
        )
    return records
