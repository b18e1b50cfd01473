"""Linear probe training on pooled embeddings.

One probe is an affine map to two logits plus softmax.  Training follows a
fixed recipe: Xavier-uniform init, Adam on the cross-entropy, a step decay
of the learning rate every 15 epochs with factor 0.9, and early stopping
after 10 epochs without strict validation improvement.  The returned model
is the parameter snapshot from the best validation epoch.  Everything runs
in double precision with a single seeded generator, so identical inputs
give bitwise-identical probes.
"""

from __future__ import annotations

import struct
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cache import atomic_write_bytes
from .errors import (
    CacheCorrupt,
    DimensionMismatch,
    EmptySet,
    MissingFile,
    NonFiniteLoss,
    SingleClassTrainingSet,
)

PROBE_MAGIC = b"LPPRB1"
NUM_CLASSES = 2
IMPROVEMENT_THRESHOLD = 1e-6
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    initial_lr: float = 1e-2
    decay_gamma: float = 0.9
    decay_every_epochs: int = 15
    early_stop_patience: int = 10
    max_epochs: int = 500
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.initial_lr <= 0:
            raise ValueError("initial_lr must be positive")
        if not 0 < self.decay_gamma < 1:
            raise ValueError("decay_gamma must lie in (0, 1)")
        for name in ("decay_every_epochs", "early_stop_patience", "max_epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")


@dataclass(frozen=True)
class ProbeModel:
    weights: np.ndarray  # (2, n_in)
    bias: np.ndarray  # (2,)
    layer_index: int
    model_id: str


@dataclass(frozen=True)
class TrainHistory:
    train_loss: tuple[float, ...]
    val_loss: tuple[float, ...]
    learning_rate: tuple[float, ...]
    best_epoch: int

    def to_dict(self) -> dict:
        return {
            "best_epoch": self.best_epoch,
            "train_loss": list(self.train_loss),
            "val_loss": list(self.val_loss),
            "learning_rate": list(self.learning_rate),
        }


def xavier_init(n_in: int, n_out: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples on [-b, b] with b = sqrt(6 / (n_in + n_out))."""
    if n_in < 1 or n_out < 1:
        raise ValueError("n_in and n_out must be >= 1")
    bound = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-bound, bound, size=(n_out, n_in))


def lr_at_epoch(config: TrainConfig, epoch: int) -> float:
    """initial_lr * gamma^(epoch // decay_every_epochs), epoch counted from 0."""
    if epoch < 0:
        raise ValueError("epoch must be nonnegative")
    return config.initial_lr * config.decay_gamma ** (epoch // config.decay_every_epochs)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def ce_loss(weights: np.ndarray, bias: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    """Mean cross-entropy of softmax(x W^T + b) against integer labels."""
    log_probs = _log_softmax(x @ weights.T + bias)
    return float(-log_probs[np.arange(len(y)), y].mean())


def ce_grads(
    weights: np.ndarray, bias: np.ndarray, x: np.ndarray, y: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradient of ce_loss with respect to weights and bias."""
    probs = np.exp(_log_softmax(x @ weights.T + bias))
    probs[np.arange(len(y)), y] -= 1.0
    probs /= len(y)
    return probs.T @ x, probs.sum(axis=0)


def _stack_set(pairs: Sequence[tuple[np.ndarray, int]], name: str) -> tuple[np.ndarray, np.ndarray]:
    if len(pairs) == 0:
        raise EmptySet(f"{name} set is empty")
    x = np.stack([np.asarray(v, dtype=np.float64) for v, _ in pairs])
    y = np.array([int(label) for _, label in pairs])
    if x.ndim != 2:
        raise DimensionMismatch(f"{name} vectors must be 1-D, got stacked shape {x.shape}")
    if np.any((y < 0) | (y >= NUM_CLASSES)):
        raise ValueError(f"{name} labels must be class indices 0 or 1")
    return x, y


def train(
    layer_index: int,
    train_set: Sequence[tuple[np.ndarray, int]],
    val_set: Sequence[tuple[np.ndarray, int]],
    config: TrainConfig,
    model_id: str = "",
) -> tuple[ProbeModel, TrainHistory]:
    """Trains one probe; returns the best-validation snapshot and the history."""
    x_train, y_train = _stack_set(train_set, "training")
    x_val, y_val = _stack_set(val_set, "validation")
    if len(np.unique(y_train)) < NUM_CLASSES:
        raise SingleClassTrainingSet("training set must contain both classes")
    if x_val.shape[1] != x_train.shape[1]:
        raise DimensionMismatch(
            f"validation dim {x_val.shape[1]} != training dim {x_train.shape[1]}"
        )

    n, n_in = x_train.shape
    rng = np.random.default_rng(config.seed)
    weights = xavier_init(n_in, NUM_CLASSES, rng)
    bias = np.zeros(NUM_CLASSES)
    m_w = np.zeros_like(weights)
    v_w = np.zeros_like(weights)
    m_b = np.zeros_like(bias)
    v_b = np.zeros_like(bias)
    step = 0

    best_val = np.inf
    best_epoch = -1
    best_params = (weights.copy(), bias.copy())
    stale_epochs = 0
    train_losses: list[float] = []
    val_losses: list[float] = []
    lrs: list[float] = []

    # divergence is detected explicitly below, so let overflow produce inf/nan
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(config.max_epochs):
            lr = lr_at_epoch(config, epoch)
            order = rng.permutation(n)
            loss_sum = 0.0
            for start in range(0, n, config.batch_size):
                batch = order[start : start + config.batch_size]
                xb, yb = x_train[batch], y_train[batch]
                loss_sum += ce_loss(weights, bias, xb, yb) * len(batch)
                g_w, g_b = ce_grads(weights, bias, xb, yb)
                step += 1
                m_w = ADAM_BETA1 * m_w + (1 - ADAM_BETA1) * g_w
                v_w = ADAM_BETA2 * v_w + (1 - ADAM_BETA2) * g_w**2
                m_b = ADAM_BETA1 * m_b + (1 - ADAM_BETA1) * g_b
                v_b = ADAM_BETA2 * v_b + (1 - ADAM_BETA2) * g_b**2
                correction1 = 1 - ADAM_BETA1**step
                correction2 = 1 - ADAM_BETA2**step
                weights = weights - lr * (m_w / correction1) / (
                    np.sqrt(v_w / correction2) + ADAM_EPS
                )
                bias = bias - lr * (m_b / correction1) / (np.sqrt(v_b / correction2) + ADAM_EPS)

            train_loss = loss_sum / n
            val_loss = ce_loss(weights, bias, x_val, y_val)
            if not (
                np.isfinite(train_loss)
                and np.isfinite(val_loss)
                and np.all(np.isfinite(weights))
                and np.all(np.isfinite(bias))
            ):
                raise NonFiniteLoss(f"training diverged at epoch {epoch}")
            train_losses.append(train_loss)
            val_losses.append(val_loss)
            lrs.append(lr)

            if val_loss < best_val - IMPROVEMENT_THRESHOLD:
                best_val = val_loss
                best_epoch = epoch
                best_params = (weights.copy(), bias.copy())
                stale_epochs = 0
            else:
                stale_epochs += 1
                if stale_epochs >= config.early_stop_patience:
                    break

    probe = ProbeModel(
        weights=best_params[0], bias=best_params[1], layer_index=layer_index, model_id=model_id
    )
    history = TrainHistory(
        train_loss=tuple(train_losses),
        val_loss=tuple(val_losses),
        learning_rate=tuple(lrs),
        best_epoch=best_epoch,
    )
    return probe, history


def predict(probe: ProbeModel, x: np.ndarray) -> np.ndarray:
    """Class probabilities softmax(W x + b) for a single pooled layer slice."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (probe.weights.shape[1],):
        raise DimensionMismatch(
            f"input shape {x.shape} does not match probe dim {probe.weights.shape[1]}"
        )
    logits = probe.weights.astype(np.float64) @ x + probe.bias.astype(np.float64)
    shifted = logits - logits.max()
    expd = np.exp(shifted)
    return expd / expd.sum()


def save_probe(probe: ProbeModel, path: Path | str) -> None:
    """LPPRB1 binary layout: header, then little-endian float32 weights + bias."""
    model_id = probe.model_id.encode("utf-8")
    n_out, n_in = probe.weights.shape
    header = PROBE_MAGIC + struct.pack(
        "<IH", probe.layer_index, len(model_id)
    ) + model_id + struct.pack("<II", n_out, n_in)
    payload = (
        np.ascontiguousarray(probe.weights, dtype="<f4").tobytes()
        + np.ascontiguousarray(probe.bias, dtype="<f4").tobytes()
    )
    atomic_write_bytes(Path(path), header + payload)


def load_probe(path: Path | str) -> ProbeModel:
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    blob = path.read_bytes()
    fixed = len(PROBE_MAGIC) + struct.calcsize("<IH")
    if len(blob) < fixed or blob[: len(PROBE_MAGIC)] != PROBE_MAGIC:
        raise CacheCorrupt(f"{path}: bad probe header")
    layer_index, id_len = struct.unpack_from("<IH", blob, len(PROBE_MAGIC))
    dims_at = fixed + id_len
    if len(blob) < dims_at + 8:
        raise CacheCorrupt(f"{path}: truncated before dims")
    model_id = blob[fixed:dims_at].decode("utf-8")
    n_out, n_in = struct.unpack_from("<II", blob, dims_at)
    payload = blob[dims_at + 8 :]
    if len(payload) != (n_out * n_in + n_out) * 4:
        raise CacheCorrupt(f"{path}: payload {len(payload)} bytes, expected {(n_out * n_in + n_out) * 4}")
    values = np.frombuffer(payload, dtype="<f4")
    return ProbeModel(
        weights=values[: n_out * n_in].reshape(n_out, n_in),
        bias=values[n_out * n_in :],
        layer_index=layer_index,
        model_id=model_id,
    )
