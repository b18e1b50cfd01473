"""Layer-wise linear probing of frozen speech embeddings."""

from .adapters import ModelAdapter, SyntheticAdapter, resolve_adapter
from .embeddings import LayerEmbeddings, PooledEmbedding, extract, pool
from .evaluation import (
    AggregationMode,
    LayerAccuracyTable,
    PredictionRecord,
    render_plot,
    render_table,
    run_layer_sweep,
    soft_vote,
    speaker_accuracy,
    table_from_records,
)
from .folds import Fold, FoldPlan, Role, make_folds, recordings_for
from .manifest import (
    Label,
    Manifest,
    Recording,
    Sex,
    Speaker,
    Task,
    class_balance,
    load_audio,
    load_manifest,
    save_manifest,
)
from .probe import ProbeModel, TrainConfig, TrainHistory, lr_at_epoch, predict, train, xavier_init

__version__ = "0.1.0"

__all__ = [
    "AggregationMode",
    "Fold",
    "FoldPlan",
    "Label",
    "LayerAccuracyTable",
    "LayerEmbeddings",
    "Manifest",
    "ModelAdapter",
    "PooledEmbedding",
    "PredictionRecord",
    "ProbeModel",
    "Recording",
    "Role",
    "Sex",
    "Speaker",
    "SyntheticAdapter",
    "Task",
    "TrainConfig",
    "TrainHistory",
    "class_balance",
    "extract",
    "load_audio",
    "load_manifest",
    "lr_at_epoch",
    "make_folds",
    "pool",
    "predict",
    "recordings_for",
    "render_plot",
    "render_table",
    "resolve_adapter",
    "run_layer_sweep",
    "save_manifest",
    "soft_vote",
    "speaker_accuracy",
    "table_from_records",
    "train",
    "xavier_init",
]
