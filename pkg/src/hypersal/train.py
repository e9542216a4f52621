"""Adam, the mini-batch training loop, and classification metrics."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import ops
from .data import LabeledPatch, class_weights_from_counts
from .model import ModelParams, forward
from .ops import HEALTHY, INFECTED
from .parallel import fan_out
from .tensor import Tape, Tensor, backward

HISTORY_HEADER = ["epoch", "train_loss", "val_loss", "val_accuracy"]
REPORT_HEADER = ["accuracy", "precision", "recall", "f1", "tp", "fp", "fn", "tn"]

# Reported results on the held-out soybean test set. The data are not public,
# so these are reference constants, not targets this package can check.
REFERENCE_RESULTS = {"precision": 0.92, "recall": 0.82, "f1": 0.87, "accuracy": 0.9573}


@dataclass
class AdamState:
    lr: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def _named(params) -> list[tuple[str, Tensor]]:
    if isinstance(params, dict):
        return list(params.items())
    return list(params.named_tensors())


def adam_step(params, state: AdamState) -> AdamState:
    """One bias-corrected Adam update, in place, from each tensor's ``grad``."""
    named = _named(params)
    for name, t in named:
        if t.grad is None:
            raise ValueError(f"parameter {name} has no gradient")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, t in named:
        g = t.grad.astype(np.float64)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        step = state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        t.data = (t.data - step).astype(t.data.dtype)
    return state


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 126
    lr: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    class_weights: Sequence[float] | None = None  # None: derived from training counts
    loss: str = "weighted"  # or "unweighted"
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.loss not in ("weighted", "unweighted"):
            raise ValueError(f"loss must be 'weighted' or 'unweighted', got {self.loss!r}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float | None = None
    val_accuracy: float | None = None


def stack(patches: Sequence[LabeledPatch]) -> tuple[Tensor, np.ndarray]:
    x = np.stack([p.patch.data for p in patches])
    return Tensor(x), np.array([p.label for p in patches], dtype=np.intp)


def _loss(probs, labels, weights):
    if weights is None:
        return ops.cross_entropy(probs, labels)
    return ops.weighted_cross_entropy(probs, labels, weights)


def resolve_class_weights(train_set: Sequence[LabeledPatch], config: TrainConfig):
    if config.loss == "unweighted":
        return None
    if config.class_weights is not None:
        return [float(w) for w in config.class_weights]
    labels = [p.label for p in train_set]
    return class_weights_from_counts(labels.count(HEALTHY), labels.count(INFECTED))


def dataset_loss(params: ModelParams, patches, weights, batch_size: int = 64) -> float:
    """Eval-mode loss over a whole set, averaged per sample."""
    total = 0.0
    for start in range(0, len(patches), batch_size):
        chunk = patches[start : start + batch_size]
        x, y = stack(chunk)
        _, probs = forward(params, x, "eval")
        total += _loss(probs, y, weights).item() * len(chunk)
    return total / len(patches)


def train(
    params: ModelParams,
    train_set: Sequence[LabeledPatch],
    val_set: Sequence[LabeledPatch] = (),
    config: TrainConfig | None = None,
    progress=None,
) -> tuple[ModelParams, list[EpochRecord]]:
    """Mini-batch Adam training; ``params`` are updated in place and returned.

    ``progress``, if given, is called with each finished :class:`EpochRecord`.
    """
    config = config or TrainConfig()
    if not train_set:
        raise ValueError("training set is empty")
    classes = {p.label for p in train_set}
    if classes != {HEALTHY, INFECTED}:
        raise ValueError("training set must contain both healthy and infected samples")
    weights = resolve_class_weights(train_set, config)
    state = AdamState(config.lr, config.beta1, config.beta2, config.epsilon)
    rng = np.random.default_rng(config.seed)
    n = len(train_set)
    history = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        running = 0.0
        for start in range(0, n, config.batch_size):
            batch = [train_set[i] for i in order[start : start + config.batch_size]]
            x, y = stack(batch)
            params.zero_grad()
            with Tape() as tape:
                _, probs = forward(params, x, "train", rng)
                loss = _loss(probs, y, weights)
            backward(loss, tape)
            adam_step(params, state)
            running += loss.item() * len(batch)
        rec = EpochRecord(epoch, running / n)
        if val_set:
            rec.val_loss = dataset_loss(params, list(val_set), weights)
            rec.val_accuracy = evaluate(params, val_set).accuracy
        history.append(rec)
        if progress is not None:
            progress(rec)
    params.zero_grad()
    return params, history


@dataclass
class EvalReport:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 0.0

    @property
    def precision(self) -> float:
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self) -> float:
        d = self.tp + self.fn
        return self.tp / d if d else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    @property
    def confusion(self) -> tuple[int, int, int, int]:
        return self.tp, self.fp, self.fn, self.tn

    def __add__(self, other: EvalReport) -> EvalReport:
        return EvalReport(*(a + b for a, b in zip(self.confusion, other.confusion)))

    def summary(self) -> str:
        return f"{self.accuracy:.4f},{self.precision:.4f},{self.recall:.4f},{self.f1:.4f}"


def confusion_from(predicted: Sequence[int], actual: Sequence[int]) -> EvalReport:
    p = np.asarray(predicted) == INFECTED
    a = np.asarray(actual) == INFECTED
    return EvalReport(int(np.sum(p & a)), int(np.sum(p & ~a)), int(np.sum(~p & a)), int(np.sum(~p & ~a)))


def predict(params: ModelParams, patches: Sequence[LabeledPatch], batch_size: int = 64, threads=None):
    """Argmax class per patch, evaluated in eval mode across a thread pool."""
    chunks = [patches[i : i + batch_size] for i in range(0, len(patches), batch_size)]

    def run(chunk):
        x, _ = stack(chunk)
        _, probs = forward(params, x, "eval")
        return probs.data.argmax(axis=1)

    parts = fan_out(run, chunks, threads)
    return np.concatenate(parts) if parts else np.zeros(0, dtype=np.intp)


def evaluate(params: ModelParams, patches: Sequence[LabeledPatch], threads=None) -> EvalReport:
    if not patches:
        raise ValueError("evaluation set is empty")
    patches = list(patches)
    return confusion_from(predict(params, patches, threads=threads), [p.label for p in patches])


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def write_history(history: Sequence[EpochRecord], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(HISTORY_HEADER)
        for r in history:
            w.writerow([r.epoch, _fmt(r.train_loss), _fmt(r.val_loss), _fmt(r.val_accuracy)])


def read_history(path) -> list[EpochRecord]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    opt = lambda s: float(s) if s else None  # noqa: E731
    return [
        EpochRecord(int(r["epoch"]), float(r["train_loss"]), opt(r["val_loss"]), opt(r["val_accuracy"]))
        for r in rows
    ]


def write_report(report: EvalReport, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        w.writerow(
            [_fmt(report.accuracy), _fmt(report.precision), _fmt(report.recall), _fmt(report.f1), *report.confusion]
        )
