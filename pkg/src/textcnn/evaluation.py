"""Confusion matrices, per-class and macro metrics, latency and feature export."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .model import forward, predict
from .text import EncodedRecord


@dataclass(eq=False)
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    counts: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def tp(self, c: int) -> int:
        return int(self.counts[c, c])

    def fp(self, c: int) -> int:
        return int(self.counts[:, c].sum()) - self.tp(c)

    def fn(self, c: int) -> int:
        return int(self.counts[c, :].sum()) - self.tp(c)

    def tn(self, c: int) -> int:
        return self.total - self.tp(c) - self.fp(c) - self.fn(c)


def confusion(preds: Sequence[int], labels: Sequence[int], num_classes: int) -> ConfusionMatrix:
    if len(preds) != len(labels):
        raise ValueError(f"length mismatch: {len(preds)} predictions vs {len(labels)} labels")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    for t, p in zip(labels, preds):
        if not (0 <= t < num_classes and 0 <= p < num_classes):
            raise ValueError(f"class id out of range 0..{num_classes - 1}")
        counts[t, p] += 1
    return ConfusionMatrix(counts)


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


class ClassMetrics(NamedTuple):
    precision: float
    recall: float
    f1: float
    binary_accuracy: float


def class_metrics(cm: ConfusionMatrix, c: int) -> ClassMetrics:
    """One-vs-rest precision, recall, F1 and accuracy for class ``c``.

    Any 0/0 ratio is reported as 0.
    """
    if not 0 <= c < cm.num_classes:
        raise ValueError(f"class {c} out of range")
    tp, fp, fn, tn = cm.tp(c), cm.fp(c), cm.fn(c), cm.tn(c)
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f1 = _ratio(2 * precision * recall, precision + recall)
    return ClassMetrics(precision, recall, f1, _ratio(tp + tn, cm.total))


@dataclass
class LatencyStats:
    mean_ms: float
    std_ms: float
    min_ms: float
    max_ms: float
    samples: int

    def __str__(self) -> str:
        return f"{self.mean_ms:.2f} ± {self.std_ms:.2f} ms"

    def to_dict(self) -> dict:
        return {"mean_ms": self.mean_ms, "std_ms": self.std_ms, "min_ms": self.min_ms,
                "max_ms": self.max_ms, "samples": self.samples}


@dataclass
class MetricsReport:
    labels: list[str]
    per_class: list[ClassMetrics]
    support: list[int]
    macro: ClassMetrics
    overall_accuracy: float
    confusion: ConfusionMatrix
    latency: LatencyStats | None = field(default=None)

    def to_dict(self) -> dict:
        return {
            "per_class": [
                {"label": lab, "support": n, **m._asdict()}
                for lab, n, m in zip(self.labels, self.support, self.per_class)
            ],
            "macro": self.macro._asdict(),
            "overall_accuracy": self.overall_accuracy,
            "latency": self.latency.to_dict() if self.latency else None,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"

    def format_table(self) -> str:
        width = max([len("macro")] + [len(lab) for lab in self.labels])
        head = f"{'class':<{width}}  {'Precision':>9}  {'Recall':>9}  {'F1-score':>9}  {'Accuracy':>9}  {'support':>7}"
        lines = [head, "-" * len(head)]
        for lab, n, m in zip(self.labels, self.support, self.per_class):
            lines.append(f"{lab:<{width}}  {m.precision:9.4f}  {m.recall:9.4f}  {m.f1:9.4f}  "
                         f"{m.binary_accuracy:9.4f}  {n:7d}")
        lines.append("-" * len(head))
        m = self.macro
        lines.append(f"{'macro':<{width}}  {m.precision:9.4f}  {m.recall:9.4f}  {m.f1:9.4f}  "
                     f"{m.binary_accuracy:9.4f}  {sum(self.support):7d}")
        lines.append(f"overall accuracy (correct/total): {self.overall_accuracy:.4f}")
        if self.latency is not None:
            lines.append(f"prediction time per record: {self.latency} "
                         f"(min {self.latency.min_ms:.2f}, max {self.latency.max_ms:.2f}, n={self.latency.samples})")
        return "\n".join(lines)


def macro_report(cm: ConfusionMatrix, labels: Sequence[str] | None = None) -> MetricsReport:
    if cm.total == 0:
        raise ValueError("cannot report on an empty confusion matrix")
    L = cm.num_classes
    per = [class_metrics(cm, c) for c in range(L)]
    macro = ClassMetrics(*(float(np.mean([m[i] for m in per])) for i in range(4)))
    return MetricsReport(
        labels=list(labels) if labels is not None else [str(c) for c in range(L)],
        per_class=per,
        support=[int(n) for n in cm.counts.sum(axis=1)],
        macro=macro,
        overall_accuracy=float(np.trace(cm.counts)) / cm.total,
        confusion=cm,
    )


def predict_ids(params, records: Sequence[EncodedRecord]) -> list[int]:
    return [int(np.argmax(forward(r.ids, params).probs)) for r in records]


def benchmark_latency(bundle, texts: Sequence[str], repetitions: int = 1) -> LatencyStats:
    """Time ``predict`` on each raw text with a monotonic clock, in milliseconds."""
    if not texts:
        raise ValueError("no records to time")
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    samples = []
    for _ in range(repetitions):
        for text in texts:
            t0 = time.perf_counter_ns()
            predict(text, bundle.params, bundle.vocab, bundle.label_map)
            samples.append(max(time.perf_counter_ns() - t0, 1) / 1e6)
    arr = np.array(samples)
    return LatencyStats(float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0,
                        float(arr.min()), float(arr.max()), int(arr.size))


def evaluate(bundle, records: Sequence[EncodedRecord]) -> MetricsReport:
    preds = predict_ids(bundle.params, records)
    cm = confusion(preds, [r.label for r in records], len(bundle.label_map))
    return macro_report(cm, bundle.label_map.labels)


def export_features(bundle, records: Sequence[EncodedRecord], out_path) -> int:
    """Write one TSV row per record: the pooled feature vector, then the label."""
    n = 0
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            F = forward(r.ids, bundle.params).features
            fh.write("\t".join(repr(float(v)) for v in F))
            fh.write("\t" + bundle.label_map[r.label] + "\n")
            n += 1
    return n
