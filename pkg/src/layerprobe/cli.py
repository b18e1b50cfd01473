"""layerprobe command-line interface.

Commands: validate, synth, extract, sweep, report, losses-selfcheck.
Exit codes: 0 success, 1 validation or user error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from scipy.io import wavfile

from .adapters import resolve_adapter
from .cache import EmbeddingKind, atomic_write_bytes, cache_has, cache_put
from .config import (
    ExperimentConfig,
    apply_overrides,
    config_snapshot_yaml,
    load_experiment_config,
    parse_layers,
    resolve_cache_dir,
)
from .embeddings import extract, pool
from .errors import (
    AdapterResolutionError,
    ConfigError,
    IntegrityViolation,
    InvalidParams,
    LayerProbeError,
    MalformedDocument,
    MissingFile,
    TooFewSpeakers,
)
from .evaluation import (
    AggregationMode,
    LayerAccuracyTable,
    read_prediction_records,
    render_plot,
    render_table,
    run_layer_sweep,
    table_from_records,
    write_prediction_records,
)
from .folds import make_folds, save_fold_plan
from .losses import run_selfcheck
from .manifest import load_audio, load_manifest
from .synth import generate_corpus

EXIT_OK = 0
EXIT_USER = 1
EXIT_RUNTIME = 2

_USER_ERRORS = (
    MissingFile,
    MalformedDocument,
    IntegrityViolation,
    InvalidParams,
    ConfigError,
    AdapterResolutionError,
    TooFewSpeakers,
    ValueError,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USER)


def _add_experiment_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="experiment config file (YAML)")
    parser.add_argument("--manifest", type=Path, help="corpus manifest path")
    parser.add_argument("--cache", type=Path, help="embedding cache directory")
    parser.add_argument("--adapter", help="adapter spec, e.g. synthetic:7")
    parser.add_argument("--adapter-layers", type=int, help="synthetic adapter layer count")
    parser.add_argument("--adapter-dim", type=int, help="synthetic adapter hidden dim")
    parser.add_argument("--checkpoint", help="checkpoint locator for plugin adapters")
    parser.add_argument("--workers", type=int, default=os.cpu_count() or 1)


def _build_config(args) -> ExperimentConfig:
    config = load_experiment_config(args.config) if args.config else ExperimentConfig()
    overrides = {
        "manifest_path": args.manifest,
        "cache_dir": args.cache,
        "adapter_spec": args.adapter,
        "adapter_layers": args.adapter_layers,
        "adapter_dim": args.adapter_dim,
        "checkpoint": args.checkpoint,
        "output_dir": getattr(args, "out", None),
        "k": getattr(args, "k", None),
        "split_seed": getattr(args, "split_seed", None),
        "aggregation_mode": getattr(args, "aggregation", None),
        "train": {"seed": getattr(args, "train_seed", None)},
    }
    layers = getattr(args, "layers", None)
    if layers is not None:
        overrides["layers"] = parse_layers(layers)
    return resolve_cache_dir(apply_overrides(config, **overrides))


def _adapter_from_config(config: ExperimentConfig):
    return resolve_adapter(
        config.adapter_spec,
        num_layers=config.adapter_layers,
        hidden_dim=config.adapter_dim,
        checkpoint=config.checkpoint,
    )


def cmd_validate(args) -> int:
    problems: list[str] = []
    manifest = None
    try:
        manifest = load_manifest(args.manifest)
    except IntegrityViolation as exc:
        problems.extend(str(exc).splitlines())
    except (MissingFile, MalformedDocument) as exc:
        problems.append(str(exc))
    except Exception as exc:
        problems.append(f"unexpected: {exc}")

    if manifest is not None and args.check_audio:
        for recording in manifest.recordings:
            if not recording.audio_path.exists():
                problems.append(f"recording {recording.recording_id!r}: missing audio file "
                                f"{recording.audio_path}")
                continue
            try:
                rate, data = wavfile.read(recording.audio_path)
            except Exception as exc:
                problems.append(f"recording {recording.recording_id!r}: undecodable audio ({exc})")
                continue
            if rate != recording.sample_rate_hz:
                problems.append(
                    f"recording {recording.recording_id!r}: file rate {rate} != declared "
                    f"{recording.sample_rate_hz}"
                )

    if problems:
        for p in problems:
            print(f"ERROR: {p}")
        return EXIT_USER
    print(f"OK: {manifest.corpus_name}: {len(manifest.speakers)} speakers, "
          f"{len(manifest.recordings)} recordings")
    return EXIT_OK


def cmd_synth(args) -> int:
    manifest_path = generate_corpus(
        out_dir=args.out,
        n_speakers=args.speakers,
        samples_per_speaker=args.samples,
        separation=args.separation,
        seed=args.seed,
    )
    print(f"wrote {manifest_path}")
    return EXIT_OK


# extraction worker state, populated once per pool worker
_EXTRACT_STATE: dict = {}


def _init_extract_worker(adapter, cache_dir) -> None:
    _EXTRACT_STATE["adapter"] = adapter
    _EXTRACT_STATE["cache_dir"] = cache_dir


def _extract_one(recording, adapter=None, cache_dir=None) -> tuple[str, str | None]:
    adapter = adapter if adapter is not None else _EXTRACT_STATE["adapter"]
    cache_dir = cache_dir if cache_dir is not None else _EXTRACT_STATE["cache_dir"]
    try:
        waveform = load_audio(recording, adapter.required_rate_hz)
        layer_emb = extract(waveform, adapter, recording_id=recording.recording_id)
        cache_put(layer_emb, cache_dir)
        cache_put(pool(layer_emb), cache_dir)
        return recording.recording_id, None
    except Exception as exc:
        return recording.recording_id, str(exc)


def cmd_extract(args) -> int:
    config = _build_config(args)
    config.require("manifest_path", "cache_dir", "adapter_spec")
    manifest = load_manifest(config.manifest_path)
    adapter = _adapter_from_config(config)

    recordings = sorted(manifest.recordings, key=lambda r: r.recording_id)
    pending = []
    for r in recordings:
        cached = cache_has(r.recording_id, adapter.model_id, EmbeddingKind.LAYERS, config.cache_dir) \
            and cache_has(r.recording_id, adapter.model_id, EmbeddingKind.POOLED, config.cache_dir)
        if args.force or not cached:
            pending.append(r)
    hits = len(recordings) - len(pending)

    workers = args.workers if adapter.shareable else 1
    if workers > 1 and len(pending) > 1:
        with ProcessPoolExecutor(
            max_workers=workers,
            initializer=_init_extract_worker,
            initargs=(adapter, config.cache_dir),
        ) as pool_exec:
            results = list(pool_exec.map(_extract_one, pending, chunksize=8))
    else:
        results = [_extract_one(r, adapter, config.cache_dir) for r in pending]

    failures = [(rid, err) for rid, err in results if err is not None]
    pct = 100.0 * hits / len(recordings) if recordings else 100.0
    print(f"extracted {len(results) - len(failures)}, cache hits {hits}/{len(recordings)} "
          f"({pct:.1f}%)")
    if failures:
        for rid, err in failures:
            print(f"FAILED {rid}: {err}", file=sys.stderr)
        print(f"extraction failed for {len(failures)} recording(s)", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _write_outputs(out_dir: Path, table: LayerAccuracyTable, records, config) -> None:
    # table.csv is the completion marker for idempotent re-runs, so it goes last
    out_dir.mkdir(parents=True, exist_ok=True)
    if records is not None:
        write_prediction_records(records, out_dir / "records.jsonl")
    if config is not None:
        atomic_write_bytes(out_dir / "config.yaml", config_snapshot_yaml(config).encode("utf-8"))
    tmp_plot = out_dir / ".plot.svg.tmp"
    render_plot(table, tmp_plot, fmt="svg")
    os.replace(tmp_plot, out_dir / "plot.svg")
    atomic_write_bytes(out_dir / "table.json", render_table(table, "JSON").encode("utf-8"))
    atomic_write_bytes(out_dir / "table.csv", render_table(table, "CSV").encode("utf-8"))


def cmd_sweep(args) -> int:
    config = _build_config(args)
    config.require("manifest_path", "cache_dir", "adapter_spec", "output_dir")
    manifest = load_manifest(config.manifest_path)
    adapter = _adapter_from_config(config)
    layers = list(config.layers) if config.layers is not None else list(
        range(1, adapter.num_layers + 1)
    )
    for layer in layers:
        if not 1 <= layer <= adapter.num_layers:
            raise ConfigError(f"layers: {layer} outside [1, {adapter.num_layers}]")

    plan = make_folds(manifest, config.k, config.split_seed)
    if args.dry_run:
        for layer in layers:
            for fold_index in range(plan.k):
                print(f"job: layer {layer} fold {fold_index}")
        print(f"plan: {len(layers)} layers x {plan.k} folds = {len(layers) * plan.k} jobs")
        return EXIT_OK

    out_dir = Path(config.output_dir)
    if (out_dir / "table.csv").exists() and not args.force:
        print(f"outputs already present under {out_dir}; use --force to redo")
        return EXIT_OK

    table, records = run_layer_sweep(
        manifest,
        plan,
        adapter,
        config.train,
        layers,
        config.cache_dir,
        aggregation_mode=config.aggregation_mode,
        workers=args.workers,
        histories_dir=out_dir / "histories" if args.save_histories else None,
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    save_fold_plan(plan, out_dir / "fold_plan.yaml")
    _write_outputs(out_dir, table, records, config)
    best = max(table.rows.items(), key=lambda kv: kv[1])
    print(f"wrote {out_dir / 'table.csv'}; best layer {best[0][0]} "
          f"({best[1] * 100:.1f}% {table.aggregation_mode})")
    return EXIT_OK


def _load_table_json(path: Path) -> LayerAccuracyTable:
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        rows = {
            (int(row["layer"]), str(row["model"])): float(row["accuracy"]) / 100.0
            for row in doc["rows"]
        }
        return LayerAccuracyTable(aggregation_mode=doc["aggregation_mode"], rows=rows)
    except FileNotFoundError:
        raise MissingFile(str(path)) from None
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise MalformedDocument(f"{path}: {exc}") from None


def cmd_report(args) -> int:
    if (args.table is None) == (args.records is None):
        raise ConfigError("pass exactly one of --table or --records")
    if args.table is not None:
        table = _load_table_json(args.table)
    else:
        records = read_prediction_records(args.records)
        table = table_from_records(records, args.aggregation or AggregationMode.POOLED_SPEAKERS)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_bytes(out_dir / "table.csv", render_table(table, "CSV").encode("utf-8"))
    atomic_write_bytes(out_dir / "table.md", render_table(table, "MARKDOWN").encode("utf-8"))
    tmp_plot = out_dir / ".plot.svg.tmp"
    render_plot(table, tmp_plot, fmt="svg")
    os.replace(tmp_plot, out_dir / "plot.svg")
    print(f"wrote table.csv, table.md, plot.svg under {out_dir}")
    return EXIT_OK


def cmd_losses_selfcheck(args) -> int:
    results = run_selfcheck(seed=args.seed)
    all_ok = True
    for name, ok, detail in results:
        status = "PASS" if ok else "FAIL"
        suffix = f" ({detail})" if detail else ""
        print(f"{status}: {name}{suffix}")
        all_ok &= ok
    return EXIT_OK if all_ok else EXIT_USER


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="layerprobe", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a manifest document")
    p.add_argument("manifest", type=Path)
    p.add_argument("--check-audio", action="store_true", help="also verify audio files")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("synth", help="generate a synthetic two-class corpus")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--speakers", type=int, default=40)
    p.add_argument("--samples", type=int, default=5, help="recordings per speaker")
    p.add_argument("--separation", type=float, default=4.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="populate the embedding cache")
    _add_experiment_flags(p)
    p.add_argument("--force", action="store_true", help="re-extract cached recordings")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("sweep", help="train and evaluate probes over layers and folds")
    _add_experiment_flags(p)
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--k", type=int, help="number of folds")
    p.add_argument("--split-seed", type=int, help="fold shuffling seed")
    p.add_argument("--train-seed", type=int, help="probe training seed")
    p.add_argument("--layers", help='layer selection, e.g. "all" or "1,4-8,13"')
    p.add_argument("--aggregation", choices=AggregationMode.ALL)
    p.add_argument("--dry-run", action="store_true", help="print the job plan and stop")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p.add_argument("--save-histories", action="store_true",
                   help="write per-(layer, fold) training histories for audit")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="render tables and plots from sweep outputs")
    p.add_argument("--table", type=Path, help="table.json from a sweep")
    p.add_argument("--records", type=Path, help="records.jsonl prediction dump")
    p.add_argument("--aggregation", choices=AggregationMode.ALL)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("losses-selfcheck", help="verify loss bounds and gradients")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_losses_selfcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except LayerProbeError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:
        print(f"unexpected failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
