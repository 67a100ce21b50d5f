"""Experimental protocol: stratified k-fold cross validation, epoch loop,
early stopping, accuracy/loss accounting, and metrics emission.

Each fold trains on the other k-1 folds and validates on the holdout,
recording one train and one val row per epoch.  The per-fold benchmark
is the maximum validation accuracy; the summary reports the mean of the
benchmarks.  Everything derives from explicit seeds so a rerun emits a
byte-identical metrics table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from irisauth.errors import ContractViolation
from irisauth.classifier import (
    ClassifierConfig, build_classifier, classifier_forward,
)
from irisauth.nn import ops
from irisauth.nn.tensor import GradTape, ParamSet, Tensor
from irisauth.optim import Optimizer, OptimHyper

__all__ = [
    "FoldPlan", "TrainConfig", "MetricsRecord", "ClassifierDataset",
    "make_folds", "train_classifier_fold", "evaluate", "early_stop",
    "run_crossval", "CrossvalResult", "write_metrics", "read_metrics",
    "emit_curves", "overall_accuracy",
]


@dataclass(frozen=True)
class MetricsRecord:
    """One (fold, epoch, split) row; accuracy is a percentage.

    Values are quantized to 6 decimals at construction so the CSV
    serialization round-trips exactly.
    """

    fold: int
    epoch: int
    split: str  # "train" | "val"
    accuracy: float
    loss: float

    def __post_init__(self):
        if self.split not in ("train", "val"):
            raise ContractViolation(f"bad split {self.split!r}")
        object.__setattr__(self, "accuracy", round(float(self.accuracy), 6))
        object.__setattr__(self, "loss", round(float(self.loss), 6))
        if not 0.0 <= self.accuracy <= 100.0:
            raise ContractViolation(f"accuracy out of range: {self.accuracy}")
        if self.loss < 0.0:
            raise ContractViolation(f"negative loss: {self.loss}")


@dataclass
class FoldPlan:
    """Disjoint k-way partition of sample indices."""

    folds: list[np.ndarray]
    seed: int

    @property
    def k(self) -> int:
        return len(self.folds)

    def train_indices(self, fold: int) -> np.ndarray:
        rest = [f for i, f in enumerate(self.folds) if i != fold]
        return np.concatenate(rest) if rest else np.array([], dtype=np.int64)


@dataclass(frozen=True)
class TrainConfig:
    """Cross-validation protocol knobs (defaults follow the recognizer
    training recipe: 5 folds, batch 8, 17 epochs, lr 1e-4, AMSGrad)."""

    k: int = 5
    batch_size: int = 8
    epochs: int = 17
    lr: float = 1e-4
    patience: int = 3
    optimizer: str = "amsgrad"
    seed: int = 0
    session: str | None = None  # "VW" | "NIR" | None

    def __post_init__(self):
        if self.k < 2:
            raise ContractViolation(f"k must be >= 2, got {self.k}")
        if min(self.batch_size, self.epochs, self.patience) < 1:
            raise ContractViolation("batch_size, epochs, patience must be >= 1")
        if self.lr <= 0:
            raise ContractViolation(f"lr must be positive, got {self.lr}")


@dataclass
class ClassifierDataset:
    """Normalized crops plus contiguous class indices."""

    X: np.ndarray  # [N,3,S,S] float32
    y: np.ndarray  # [N] int64 in [0, num_classes)
    classes: np.ndarray  # original label per class index

    @classmethod
    def from_arrays(cls, X, y_raw) -> "ClassifierDataset":
        X = np.ascontiguousarray(X, dtype=np.float32)
        y_raw = np.asarray(y_raw)
        if X.ndim != 4 or X.shape[0] != y_raw.shape[0]:
            raise ContractViolation(
                f"dataset arrays disagree: X {X.shape}, y {y_raw.shape}")
        classes, y = np.unique(y_raw, return_inverse=True)
        return cls(X=X, y=y.astype(np.int64), classes=classes)

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def __len__(self) -> int:
        return self.X.shape[0]


def make_folds(labels, k: int, seed: int = 0) -> FoldPlan:
    """Stratified k-fold assignment: seeded shuffle within each class,
    then round-robin over folds.  Fold sizes within a class differ by at
    most one; classes smaller than k are spread best-effort."""
    labels = np.asarray(labels)
    n = labels.shape[0]
    if k < 2:
        raise ContractViolation(f"k must be >= 2, got {k}")
    if k > n:
        raise ContractViolation(f"cannot make {k} folds from {n} samples")
    buckets: list[list[int]] = [[] for _ in range(k)]
    for ci, cls in enumerate(np.unique(labels)):
        idx = np.flatnonzero(labels == cls)
        rng = np.random.default_rng([seed, 0xF01D, ci])
        idx = idx[rng.permutation(idx.size)]
        for j, sample in enumerate(idx):
            buckets[j % k].append(int(sample))
    folds = [np.sort(np.asarray(b, dtype=np.int64)) for b in buckets]
    return FoldPlan(folds=folds, seed=seed)


def early_stop(history, patience: int) -> bool:
    """True when each of the last ``patience`` entries failed to exceed
    the best value seen before it."""
    if patience < 1:
        raise ContractViolation(f"patience must be >= 1, got {patience}")
    n = len(history)
    if n < patience:
        return False
    for i in range(n - patience, n):
        best_before = max(history[:i]) if i > 0 else -math.inf
        if history[i] > best_before:
            return False
    return True


def evaluate(params: ParamSet, model_cfg: ClassifierConfig,
             X: np.ndarray, y: np.ndarray, batch_size: int = 64,
             ) -> tuple[float, float]:
    """(accuracy percent, mean cross-entropy) over a sample set."""
    n = X.shape[0]
    if n == 0:
        raise ContractViolation("evaluate requires a nonempty sample set")
    correct = 0
    loss_sum = 0.0
    for start in range(0, n, batch_size):
        xb = Tensor(X[start:start + batch_size])
        yb = y[start:start + batch_size]
        logits = classifier_forward(xb, params, model_cfg)
        loss = ops.cross_entropy(logits, yb)
        loss_sum += float(loss.data) * len(yb)
        correct += int((logits.data.argmax(axis=1) == yb).sum())
    return 100.0 * correct / n, loss_sum / n


def train_classifier_fold(dataset: ClassifierDataset, fold: int,
                          plan: FoldPlan, cfg: TrainConfig,
                          model_cfg: ClassifierConfig,
                          ) -> tuple[ParamSet, list[MetricsRecord]]:
    """Train on k-1 folds, validate on the holdout each epoch.

    Returns the parameters from the best-validation-accuracy epoch and
    the per-epoch metrics records (one train + one val row per epoch).
    """
    train_idx = plan.train_indices(fold)
    val_idx = plan.folds[fold]
    if train_idx.size == 0:
        raise ContractViolation(f"fold {fold} leaves an empty training set")

    params = build_classifier(model_cfg, seed=int(
        np.random.default_rng([cfg.seed, 0x1217, fold]).integers(2**31)))
    opt = Optimizer(params, OptimHyper(lr=cfg.lr), kind=cfg.optimizer)
    fold_rng = np.random.default_rng([cfg.seed, 0xB01D, fold])

    records: list[MetricsRecord] = []
    val_history: list[float] = []
    best_acc = -1.0
    best_arrays: dict[str, np.ndarray] | None = None

    for epoch in range(cfg.epochs):
        order = fold_rng.permutation(train_idx.size)
        shuffled = train_idx[order]
        correct = 0
        loss_sum = 0.0
        for start in range(0, shuffled.size, cfg.batch_size):
            idx = shuffled[start:start + cfg.batch_size]
            xb = Tensor(dataset.X[idx])
            yb = dataset.y[idx]
            with GradTape() as tape:
                logits = classifier_forward(xb, params, model_cfg)
                loss = ops.cross_entropy(logits, yb)
                params.zero_grads()
                tape.backward(loss, params)
            opt.step()
            correct += int((logits.data.argmax(axis=1) == yb).sum())
            loss_sum += float(loss.data) * len(yb)
        train_acc = 100.0 * correct / shuffled.size
        train_loss = loss_sum / shuffled.size
        records.append(MetricsRecord(fold, epoch, "train", train_acc, train_loss))

        val_acc, val_loss = evaluate(params, model_cfg,
                                     dataset.X[val_idx], dataset.y[val_idx])
        record = MetricsRecord(fold, epoch, "val", val_acc, val_loss)
        records.append(record)
        val_history.append(record.accuracy)
        if record.accuracy > best_acc:
            best_acc = record.accuracy
            best_arrays = {k: v.copy() for k, v in params.arrays().items()}
        if early_stop(val_history, cfg.patience):
            break

    assert best_arrays is not None
    params.load_arrays(best_arrays)
    return params, records


@dataclass
class CrossvalResult:
    records: list[MetricsRecord]
    benchmarks: list[float]  # per-fold max validation accuracy
    average_accuracy: float
    session: str | None = None
    plan: FoldPlan | None = None

    def summary(self) -> dict:
        return {
            "session": self.session,
            "per_fold_benchmark": self.benchmarks,
            "average_accuracy": self.average_accuracy,
        }


def run_crossval(dataset: ClassifierDataset, cfg: TrainConfig,
                 model_cfg: ClassifierConfig | None = None) -> CrossvalResult:
    """All k folds; per-fold benchmark = max val accuracy; the summary
    averages the benchmarks."""
    if model_cfg is None:
        model_cfg = ClassifierConfig(
            num_classes=dataset.num_classes, input_size=dataset.X.shape[2])
    if model_cfg.num_classes != dataset.num_classes:
        raise ContractViolation(
            f"model expects {model_cfg.num_classes} classes, dataset has "
            f"{dataset.num_classes}")
    plan = make_folds(dataset.y, cfg.k, seed=cfg.seed)
    all_records: list[MetricsRecord] = []
    benchmarks: list[float] = []
    for fold in range(cfg.k):
        _, records = train_classifier_fold(dataset, fold, plan, cfg, model_cfg)
        all_records.extend(records)
        benchmarks.append(max(r.accuracy for r in records if r.split == "val"))
    average = round(float(np.mean(benchmarks)), 6)
    return CrossvalResult(records=all_records, benchmarks=benchmarks,
                          average_accuracy=average, session=cfg.session,
                          plan=plan)


def overall_accuracy(results: list[CrossvalResult]) -> float:
    """Cross-session mean of per-session average accuracies."""
    if not results:
        raise ContractViolation("no crossval results to average")
    return round(float(np.mean([r.average_accuracy for r in results])), 6)


# ---------------------------------------------------------------------------
# metrics emission


CSV_HEADER = "fold,epoch,split,accuracy,loss"


def write_metrics(records: list[MetricsRecord], path: Path) -> None:
    """CSV with 6-decimal fixed-point accuracy/loss columns."""
    if not records:
        raise ContractViolation("no metrics records to write")
    lines = [CSV_HEADER]
    for r in records:
        lines.append(f"{r.fold},{r.epoch},{r.split},{r.accuracy:.6f},{r.loss:.6f}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_metrics(path: Path) -> list[MetricsRecord]:
    text = Path(path).read_text().strip().splitlines()
    if not text or text[0] != CSV_HEADER:
        raise ContractViolation(f"unexpected metrics header in {path}")
    records = []
    for line in text[1:]:
        fold, epoch, split, acc, loss = line.split(",")
        records.append(MetricsRecord(int(fold), int(epoch), split,
                                     float(acc), float(loss)))
    return records


def _polyline(points: list[tuple[float, float]], color: str) -> str:
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
    return (f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
            f'points="{pts}" />')


_FOLD_COLORS = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]


def emit_curves(records: list[MetricsRecord], path: Path,
                split: str = "val") -> None:
    """Two-panel SVG: per-fold validation accuracy and loss over epochs."""
    if not records:
        raise ContractViolation("no metrics records to plot")
    rows = [r for r in records if r.split == split]
    folds = sorted({r.fold for r in rows})
    epochs = sorted({r.epoch for r in rows})
    if not rows:
        raise ContractViolation(f"no records for split {split!r}")
    max_epoch = max(epochs)
    max_loss = max(r.loss for r in rows) or 1.0

    panel_w, panel_h, margin, gap = 360.0, 220.0, 45.0, 40.0
    width = margin * 2 + panel_w
    height = margin * 2 + panel_h * 2 + gap

    def x_of(epoch: float) -> float:
        return margin + (epoch / max(max_epoch, 1)) * panel_w

    def y_acc(acc: float) -> float:
        return margin + (1.0 - acc / 100.0) * panel_h

    def y_loss(loss: float) -> float:
        top = margin + panel_h + gap
        return top + (1.0 - loss / max_loss) * panel_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" '
        f'height="{height:.0f}" viewBox="0 0 {width:.0f} {height:.0f}">',
        f'<text x="{margin}" y="{margin - 18}" font-size="13">'
        f'validation accuracy / %</text>',
        f'<text x="{margin}" y="{margin + panel_h + gap - 18}" font-size="13">'
        f'validation loss</text>',
    ]
    for top in (margin, margin + panel_h + gap):
        parts.append(f'<rect x="{margin}" y="{top}" width="{panel_w}" '
                     f'height="{panel_h}" fill="none" stroke="#999" />')
        parts.append(f'<text x="{margin + panel_w / 2 - 18:.0f}" '
                     f'y="{top + panel_h + 28:.0f}" font-size="12">epoch</text>')
    parts.append(f'<text x="{margin - 38}" y="{margin + 10}" font-size="11">100</text>')
    parts.append(f'<text x="{margin - 30}" y="{margin + panel_h:.0f}" font-size="11">0</text>')
    for fold in folds:
        color = _FOLD_COLORS[fold % len(_FOLD_COLORS)]
        fold_rows = sorted((r for r in rows if r.fold == fold),
                           key=lambda r: r.epoch)
        parts.append(_polyline(
            [(x_of(r.epoch), y_acc(r.accuracy)) for r in fold_rows], color))
        parts.append(_polyline(
            [(x_of(r.epoch), y_loss(r.loss)) for r in fold_rows], color))
        parts.append(
            f'<text x="{margin + panel_w + 6:.0f}" '
            f'y="{margin + 14 + 14 * fold:.0f}" font-size="11" '
            f'fill="{color}">fold {fold}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
