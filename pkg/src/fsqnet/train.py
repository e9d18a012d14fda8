"""Loss, SGD with momentum, the epoch loop, and evaluation metrics.

The loss is categorical cross-entropy over softmax probabilities,
L = -(1/n) sum_i sum_j y_ij log(p_ij), with the softmax gradient fused so the
backward pass starts from (p - y)/n at the logits.  The optimizer is plain
SGD with momentum: v <- mu v + g, theta <- theta - lr v.

Each epoch reshuffles the training set with seed XOR epoch_index, walks
mini-batches (last partial batch kept), and reports epoch-mean loss, training
accuracy as predicted during the epoch, and validation accuracy with dropout
off.  Batch assembly (augment + normalize + stack) can run ahead of the
optimizer through a small bounded FIFO queue; deterministic mode forces
sequential execution and zeroes wall times so runs are byte-reproducible.
"""

from __future__ import annotations

import json
import queue
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .data import AugmentConfig, Dataset, augment, fisher_yates_order, normalize
from .errors import ConfigError, DataError, NumericError, StateError
from .model import Model, clone_params, model_backward, model_forward
from .tensor import derive_seed

LOG_CLAMP = 1e-12
EVAL_BATCH = 32


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 10
    seed: int = 42
    dropout_on: bool = False
    val_fraction: float = 0.1
    augment: AugmentConfig | None = None
    deterministic: bool = False
    prefetch_batches: int = 2

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0,1), got {self.momentum}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must be in (0,1), got {self.val_fraction}")
        if self.prefetch_batches < 0:
            raise ConfigError(f"prefetch_batches must be >= 0, got {self.prefetch_batches}")


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_accuracy: float
    wall_time: float

    def __post_init__(self):
        if not 0.0 <= self.train_accuracy <= 1.0 or not 0.0 <= self.val_accuracy <= 1.0:
            raise ConfigError(f"accuracies must be in [0,1]: {self}")

    def to_json_line(self) -> str:
        record = {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "train_acc": self.train_accuracy,
            "val_acc": self.val_accuracy,
            "seconds": self.wall_time,
        }
        return json.dumps(record, separators=(",", ":"))


@dataclass
class History:
    entries: list[EpochMetrics] = field(default_factory=list)

    def append(self, metrics: EpochMetrics) -> None:
        previous = self.entries[-1].epoch if self.entries else 0
        if metrics.epoch <= previous or (not self.entries and metrics.epoch != 1):
            raise StateError(
                f"epoch {metrics.epoch} does not continue history ending at {previous}"
            )
        self.entries.append(metrics)

    def last_epoch(self) -> int:
        return self.entries[-1].epoch if self.entries else 0

    def to_jsonable(self) -> list[dict]:
        return [json.loads(m.to_json_line()) for m in self.entries]

    @classmethod
    def from_jsonable(cls, records: list[dict]) -> "History":
        history = cls()
        for r in records:
            history.append(
                EpochMetrics(
                    epoch=int(r["epoch"]),
                    train_loss=float(r["train_loss"]),
                    train_accuracy=float(r["train_acc"]),
                    val_accuracy=float(r["val_acc"]),
                    wall_time=float(r["seconds"]),
                )
            )
        return history


def cross_entropy(probs: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood and the fused softmax gradient (p - y)/N."""
    labels = np.asarray(labels, dtype=np.intp)
    n, m = probs.shape
    if labels.shape != (n,):
        raise DataError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= m):
        raise DataError(f"label outside [0, {m})")
    picked = probs[np.arange(n), labels].astype(np.float64)
    loss = float(-np.log(np.clip(picked, LOG_CLAMP, 1.0)).sum() / n)
    d_logits = probs.astype(np.float64)
    d_logits[np.arange(n), labels] -= 1.0
    d_logits /= n
    return loss, d_logits.astype(np.float32)


def sgd_step(model: Model, grads: dict[str, np.ndarray], config: TrainConfig) -> Model:
    """In-place momentum update: v <- mu v + g, theta <- theta - lr v."""
    missing = [name for name in model.params if name not in grads]
    if missing:
        raise StateError(f"gradients missing for {missing}")
    for name, param in model.params.items():
        v = model.velocity[name]
        v *= np.float32(config.momentum)
        v += grads[name]
        param -= np.float32(config.learning_rate) * v
    return model


def _check_input_sizes(dataset: Dataset, size: int, what: str) -> None:
    if not dataset.samples:
        raise DataError(f"{what} dataset is empty")
    for s in dataset.samples:
        if s.image.width != size or s.image.height != size:
            raise DataError(
                f"{what} sample {s.source_path} is {s.image.width}x{s.image.height}, "
                f"expected {size}x{size}"
            )


def _assemble_batch(samples, means, augment_cfg, seeds):
    tensors = []
    labels = []
    for sample, seed in zip(samples, seeds):
        image = sample.image
        if augment_cfg is not None and augment_cfg.enabled:
            image = augment(image, augment_cfg, seed)
        tensors.append(normalize(image, means))
        labels.append(sample.label)
    return np.stack(tensors), np.asarray(labels, dtype=np.intp)


def _batches(train_set: Dataset, config: TrainConfig, epoch_index: int):
    order = fisher_yates_order(len(train_set.samples), config.seed ^ epoch_index)
    for start in range(0, len(order), config.batch_size):
        chunk = order[start : start + config.batch_size]
        samples = [train_set.samples[i] for i in chunk]
        seeds = [derive_seed(config.seed, epoch_index, i) for i in chunk]
        yield _assemble_batch(samples, train_set.channel_means, config.augment, seeds)


def _prefetched(generator, depth: int):
    """Run a generator in a worker thread behind a bounded FIFO queue."""
    q: queue.Queue = queue.Queue(maxsize=depth)

    def worker():
        try:
            for item in generator:
                q.put(("item", item))
            q.put(("done", None))
        except BaseException as exc:  # surfaced on the consumer side
            q.put(("error", exc))

    threading.Thread(target=worker, daemon=True).start()
    while True:
        kind, value = q.get()
        if kind == "done":
            return
        if kind == "error":
            raise value
        yield value


def train_epoch(
    model: Model,
    train_set: Dataset,
    val_set: Dataset,
    config: TrainConfig,
    epoch_index: int,
) -> EpochMetrics:
    """One pass of shuffled mini-batch SGD plus a validation evaluation."""
    started = time.perf_counter()
    size = model.config.input_size
    _check_input_sizes(train_set, size, "train")
    _check_input_sizes(val_set, size, "val")

    batches = _batches(train_set, config, epoch_index)
    if config.prefetch_batches > 0 and not config.deterministic:
        batches = _prefetched(batches, config.prefetch_batches)

    loss_sum = 0.0
    correct = 0
    seen = 0
    for batch_index, (batch, labels) in enumerate(batches):
        dropout_seed = None
        if config.dropout_on and model.config.dropout_rate > 0.0:
            dropout_seed = derive_seed(config.seed, epoch_index, batch_index, 0xD0)
        probs = model_forward(model, batch, training=True, dropout_seed=dropout_seed)
        loss, d_logits = cross_entropy(probs, labels)
        grads = model_backward(model, d_logits)
        sgd_step(model, grads, config)
        n = len(labels)
        loss_sum += loss * n
        correct += int((probs.argmax(axis=1) == labels).sum())
        seen += n

    val_accuracy, _ = evaluate(model, val_set)
    wall = 0.0 if config.deterministic else time.perf_counter() - started
    return EpochMetrics(
        epoch=epoch_index,
        train_loss=loss_sum / seen,
        train_accuracy=correct / seen,
        val_accuracy=val_accuracy,
        wall_time=wall,
    )


def evaluate(model: Model, dataset: Dataset) -> tuple[float, np.ndarray]:
    """Accuracy and an m x m confusion matrix (true class by row)."""
    _check_input_sizes(dataset, model.config.input_size, "eval")
    m = len(dataset.label_names)
    confusion = np.zeros((m, m), dtype=np.int64)
    for start in range(0, len(dataset.samples), EVAL_BATCH):
        samples = dataset.samples[start : start + EVAL_BATCH]
        batch, labels = _assemble_batch(samples, dataset.channel_means, None, [0] * len(samples))
        predicted = model_forward(model, batch, training=False).argmax(axis=1)
        for truth, guess in zip(labels, predicted):
            confusion[truth, guess] += 1
    accuracy = float(np.trace(confusion) / confusion.sum())
    return accuracy, confusion


def pearson_correlation(a, b) -> float:
    """Standard Pearson r of two equal-length series."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape:
        raise DataError(f"series shapes differ: {a.shape} vs {b.shape}")
    if a.size < 2:
        raise DataError(f"need at least 2 points, got {a.size}")
    da = a - a.mean()
    db = b - b.mean()
    denom = np.sqrt((da * da).sum() * (db * db).sum())
    if denom == 0.0:
        raise NumericError("correlation undefined: a series has zero variance")
    return float((da * db).sum() / denom)


@dataclass
class FitResult:
    history: History
    best_params: dict[str, np.ndarray]
    best_epoch: int
    best_val_accuracy: float


def fit(
    model: Model,
    train_set: Dataset,
    val_set: Dataset,
    config: TrainConfig,
    history: History | None = None,
    emit=None,
) -> FitResult:
    """Run config.epochs epochs, tracking the best-validation parameters.

    With a non-empty starting history (resume), epoch numbering continues from
    where it left off.  `emit` receives one JSON metrics line per epoch.
    """
    history = history if history is not None else History()
    first = history.last_epoch() + 1
    best_params = clone_params(model.params)
    best_epoch = history.last_epoch()
    best_val = -1.0
    for epoch_index in range(first, first + config.epochs):
        metrics = train_epoch(model, train_set, val_set, config, epoch_index)
        history.append(metrics)
        if emit is not None:
            emit(metrics.to_json_line())
        if metrics.val_accuracy > best_val:
            best_val = metrics.val_accuracy
            best_epoch = epoch_index
            best_params = clone_params(model.params)
    return FitResult(history, best_params, best_epoch, best_val)
