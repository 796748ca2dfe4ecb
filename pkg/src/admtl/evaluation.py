"""Macro-averaged metrics, confusion matrices, PR curves and attention heatmaps."""
import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

METRICS_SCHEMA_VERSION = 1


@dataclass
class ConfusionMatrix:
    """Counts with rows = gold label, columns = predicted label."""

    labels: tuple
    counts: np.ndarray

    @classmethod
    def from_labels(cls, gold, pred, labels):
        labels = tuple(labels)
        index = {lab: i for i, lab in enumerate(labels)}
        counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
        for g, p in zip(gold, pred):
            counts[index[g], index[p]] += 1
        return cls(labels, counts)

    @property
    def total(self):
        return int(self.counts.sum())

    def __add__(self, other):
        if self.labels != other.labels:
            raise ValueError("cannot add confusion matrices over different label sets")
        return ConfusionMatrix(self.labels, self.counts + other.counts)


@dataclass
class TaskMetrics:
    labels: tuple
    precision: dict
    recall: dict
    f1: dict
    support: dict
    macro_precision: float
    macro_recall: float
    macro_f1: float
    weighted_f1: float
    accuracy: float
    confusion: list = field(default_factory=list)

    def to_dict(self):
        return {
            "schema_version": METRICS_SCHEMA_VERSION,
            "labels": list(self.labels),
            "per_class": {lab: {"precision": self.precision[lab], "recall": self.recall[lab],
                                "f1": self.f1[lab], "support": self.support[lab]} for lab in self.labels},
            "macro": {"precision": self.macro_precision, "recall": self.macro_recall, "f1": self.macro_f1},
            "weighted_f1": self.weighted_f1,
            "accuracy": self.accuracy,
            "confusion": self.confusion,
        }


def _ratio(num, den):
    return float(num) / den if den else 0.0


def _f1(p, r):
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def macro_prf(confusion):
    """Per-class and macro P/R/F1. Undefined ratios count as 0; the macro
    mean runs over classes that occur in the gold standard."""
    counts = np.asarray(confusion.counts)
    if counts.sum() == 0:
        raise ValueError("macro_prf: empty confusion matrix")
    tp = np.diag(counts)
    gold = counts.sum(axis=1)
    predicted = counts.sum(axis=0)
    P, R, F, S = {}, {}, {}, {}
    for i, lab in enumerate(confusion.labels):
        P[lab] = _ratio(tp[i], predicted[i])
        R[lab] = _ratio(tp[i], gold[i])
        F[lab] = _f1(P[lab], R[lab])
        S[lab] = int(gold[i])
    present = [lab for lab in confusion.labels if S[lab] > 0]
    total = counts.sum()
    return TaskMetrics(
        labels=tuple(confusion.labels), precision=P, recall=R, f1=F, support=S,
        macro_precision=float(np.mean([P[lab] for lab in present])),
        macro_recall=float(np.mean([R[lab] for lab in present])),
        macro_f1=float(np.mean([F[lab] for lab in present])),
        weighted_f1=float(sum(F[lab] * S[lab] for lab in present) / total),
        accuracy=float(tp.sum() / total),
        confusion=counts.tolist(),
    )


def average_metrics(metrics):
    """Fold aggregate: unweighted mean of the macro scores."""
    return {
        "macro": {k: float(np.mean([getattr(m, f"macro_{k}") for m in metrics]))
                  for k in ("precision", "recall", "f1")},
        "weighted_f1": float(np.mean([m.weighted_f1 for m in metrics])),
        "accuracy": float(np.mean([m.accuracy for m in metrics])),
        "folds": len(metrics),
    }


def pr_curve_points(scores, gold):
    """(recall, precision) at every distinct score threshold, highest first.

    An example is predicted positive when its score is >= the threshold, so
    tied scores enter together.
    """
    scores = np.asarray(scores, dtype=np.float64)
    gold = np.asarray(gold)
    if scores.shape != gold.shape or scores.ndim != 1:
        raise ValueError(f"scores {scores.shape} and gold {gold.shape} must be equal-length vectors")
    if not np.all(np.isin(gold, (0, 1))):
        raise ValueError("pr_curve_points needs binary gold labels (0/1)")
    if scores.size == 0:
        return []
    order = np.argsort(-scores, kind="stable")
    s, g = scores[order], gold[order].astype(np.int64)
    tp = np.cumsum(g)
    last_of_group = np.r_[s[1:] != s[:-1], True]
    positives = g.sum()
    points = []
    for i in np.flatnonzero(last_of_group):
        points.append((_ratio(tp[i], positives), _ratio(tp[i], i + 1)))
    return points


def write_metrics(path, payload):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_pr_points(path, points):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["recall", "precision"])
        for r, p in points:
            w.writerow([repr(float(r)), repr(float(p))])


@dataclass
class AttentionHeatmap:
    example_id: str
    tokens: list
    weights: np.ndarray  # aspects x tokens

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["aspect"] + self.tokens)
        for k, row in enumerate(self.weights):
            w.writerow([k] + [repr(float(v)) for v in row])
        return buf.getvalue()


def attention_heatmap(example, model, task_id, path_kind=None):
    """Attention weights of one example (PAD columns dropped).

    ``path_kind`` picks "private" or "shared"; default is the private path
    when the variant has one. Mean-pooling variants report uniform weights.
    """
    from .model import forward_task
    from .text import collate, prepare

    head = model.head(task_id)
    prepared = prepare([example], model.config.max_sentence_length, head.spec.entity_token)
    if not prepared:
        raise ValueError(f"{example.example_id}: cannot be windowed to max sentence length")
    batch = collate(prepared, model.vocab, head.labels, task_id)
    res = forward_task(batch, task_id, model, "infer")
    if path_kind is None:
        path_kind = "private" if "private" in res.attention else "shared"
    if path_kind not in res.attention:
        raise ValueError(f"variant {model.config.variant!r} has no {path_kind} path")
    n = int(batch.mask[0].sum())
    tokens = list(prepared[0].tokens)
    V = res.attention[path_kind]
    weights = np.full((1, n), 1.0 / n) if V is None else V.data[0][:, :n]
    return AttentionHeatmap(example.example_id, tokens, weights)


def export_attention(example, model, task_id, path, path_kind=None):
    """Write the heatmap table for ``example`` to ``path`` and return it."""
    heat = attention_heatmap(example, model, task_id, path_kind)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(heat.to_csv())
    except OSError as exc:
        raise OSError(f"cannot write attention heatmap to {path}: {exc}") from exc
    return heat
