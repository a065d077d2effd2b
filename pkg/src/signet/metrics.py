"""Evaluation artifacts (confusion matrix, accuracy, loss) and latency timing."""

from __future__ import annotations

import platform
import time
from dataclasses import dataclass

import numpy as np

from signet import datapipe
from signet.errors import ConfigError, DataError, ShapeError
from signet.head import HeadParams, cross_entropy, one_hot, predict
from signet.mobilenet import Model, forward_features


@dataclass
class ClassStats:
    tp: int
    fp: int
    fn: int
    tn: int


@dataclass
class ConfusionMatrix:
    """counts[t][p] = samples of true class t predicted as p."""

    counts: np.ndarray  # (num_classes, num_classes) int64
    class_names: list[str]

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        if self.total == 0:
            raise DataError("confusion matrix has no samples")
        return float(np.trace(self.counts) / self.total)

    def class_stats(self, index: int) -> ClassStats:
        tp = int(self.counts[index, index])
        fn = int(self.counts[index].sum()) - tp
        fp = int(self.counts[:, index].sum()) - tp
        return ClassStats(tp=tp, fp=fp, fn=fn, tn=self.total - tp - fn - fp)


def confusion(pred_indices, true_indices, num_classes: int,
              class_names: list[str] | None = None) -> ConfusionMatrix:
    pred = np.asarray(pred_indices, dtype=np.int64).ravel()
    true = np.asarray(true_indices, dtype=np.int64).ravel()
    if pred.shape != true.shape:
        raise ShapeError(
            f"prediction and truth lengths differ: {pred.shape[0]} vs {true.shape[0]}"
        )
    for label, arr in (("predicted", pred), ("true", true)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise DataError(f"{label} index out of range [0, {num_classes})")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (true, pred), 1)
    if class_names is None:
        class_names = [str(i) for i in range(num_classes)]
    return ConfusionMatrix(counts=counts, class_names=class_names)


@dataclass
class EvalReport:
    confusion: ConfusionMatrix
    accuracy: float
    mean_loss: float
    n_samples: int


def evaluate(
    model: Model,
    head: HeadParams,
    dataset_split,
    subset: str = "val",
    batch_size: int = 32,
) -> EvalReport:
    """Run images through resize_normalize, the backbone, and the head.

    dataset_split may be a SplitDataset (subset picks "train" or "val") or a
    plain list of samples. No augmentation is applied.
    """
    if isinstance(dataset_split, datapipe.SplitDataset):
        samples = getattr(dataset_split, subset)
        class_names = dataset_split.class_names
    else:
        samples = list(dataset_split)
        class_names = None
    if not samples:
        raise DataError("evaluation set is empty")

    num_classes = head.num_classes
    labels = np.array([s.class_index for s in samples], dtype=np.int64)
    if labels.max() >= num_classes:
        raise ConfigError(
            f"sample class index {labels.max()} exceeds the head's "
            f"{num_classes} classes"
        )

    probs_parts = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        batch = np.concatenate([datapipe.resize_normalize(s.image) for s in chunk])
        feats = forward_features(model, batch)
        probs_parts.append(predict(head, feats)[1])
    probs = np.concatenate(probs_parts)

    preds = probs.argmax(axis=1)
    cm = confusion(preds, labels, num_classes, class_names)
    loss = cross_entropy(probs, one_hot(labels, num_classes))
    return EvalReport(
        confusion=cm, accuracy=cm.accuracy, mean_loss=loss, n_samples=len(samples)
    )


@dataclass
class LatencyReport:
    """Post-warmup per-frame wall times; summaries recompute from the raw list."""

    durations_ms: list[float]
    warmup_frames: int
    environment: str = ""

    @property
    def mean_ms(self) -> float:
        return float(np.mean(self.durations_ms))

    @property
    def median_ms(self) -> float:
        return float(np.median(self.durations_ms))

    def percentile_ms(self, q: float) -> float:
        return float(np.percentile(self.durations_ms, q))

    def summary(self) -> dict[str, float]:
        return {
            "mean_ms": self.mean_ms,
            "median_ms": self.median_ms,
            "p95_ms": self.percentile_ms(95),
            "p99_ms": self.percentile_ms(99),
        }


def bench_latency(
    model: Model, head: HeadParams, frames, warmup: int = 10
) -> LatencyReport:
    """Time the full per-frame path (preprocess, backbone, head) per frame.

    frames is a sequence of uint8 RGB images. The first `warmup` timings are
    discarded; the rest form the report. Single-threaded by design so the
    numbers reflect one steady inference lane.
    """
    frames = list(frames)
    if warmup < 0:
        raise ConfigError(f"warmup must be >= 0, got {warmup}")
    if len(frames) < warmup + 30:
        raise ConfigError(
            f"need at least {warmup + 30} frames (warmup {warmup} + 30 measured), "
            f"got {len(frames)}"
        )
    durations = []
    for frame in frames:
        start = time.perf_counter()
        batch = datapipe.resize_normalize(frame)
        feats = forward_features(model, batch)
        predict(head, feats)
        durations.append((time.perf_counter() - start) * 1000.0)
    return LatencyReport(
        durations_ms=durations[warmup:],
        warmup_frames=warmup,
        environment=describe_environment(),
    )


def describe_environment() -> str:
    return (
        f"{platform.platform()}; python {platform.python_version()}; "
        f"numpy {np.__version__}; single-threaded timed loop"
    )


def confusion_csv(cm: ConfusionMatrix) -> str:
    """CSV with a true\\pred corner cell, one row per true class."""
    header = "true\\pred," + ",".join(cm.class_names)
    rows = [
        cm.class_names[i] + "," + ",".join(str(int(v)) for v in cm.counts[i])
        for i in range(cm.num_classes)
    ]
    return "\n".join([header] + rows) + "\n"


def eval_report_kv(report: EvalReport) -> str:
    lines = [
        f"n_samples = {report.n_samples}",
        f"num_classes = {report.confusion.num_classes}",
        f"accuracy = {report.accuracy:.6f}",
        f"mean_loss = {report.mean_loss:.6f}",
    ]
    for i, name in enumerate(report.confusion.class_names):
        s = report.confusion.class_stats(i)
        lines.append(f"class.{name} = tp:{s.tp} fp:{s.fp} fn:{s.fn} tn:{s.tn}")
    return "\n".join(lines) + "\n"


def eval_report_text(report: EvalReport) -> str:
    return (
        f"samples: {report.n_samples}  classes: {report.confusion.num_classes}\n"
        f"accuracy: {report.accuracy:.4f}\n"
        f"mean loss: {report.mean_loss:.4f}\n"
    )


def latency_report_kv(report: LatencyReport) -> str:
    s = report.summary()
    lines = [
        f"frames_measured = {len(report.durations_ms)}",
        f"warmup_frames = {report.warmup_frames}",
        f"mean_ms = {s['mean_ms']:.4f}",
        f"median_ms = {s['median_ms']:.4f}",
        f"p95_ms = {s['p95_ms']:.4f}",
        f"p99_ms = {s['p99_ms']:.4f}",
        f"environment = {report.environment}",
    ]
    return "\n".join(lines) + "\n"


def latency_raw_lines(report: LatencyReport) -> str:
    return "\n".join(f"{d:.6f}" for d in report.durations_ms) + "\n"


def latency_report_text(report: LatencyReport) -> str:
    s = report.summary()
    return (
        f"{len(report.durations_ms)} frames after {report.warmup_frames} warmup\n"
        f"mean {s['mean_ms']:.2f} ms  median {s['median_ms']:.2f} ms  "
        f"p95 {s['p95_ms']:.2f} ms  p99 {s['p99_ms']:.2f} ms\n"
        f"({report.environment})\n"
    )
