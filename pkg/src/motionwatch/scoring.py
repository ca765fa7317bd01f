"""Anomaly-score fusion and threshold-free evaluation.

The camera and body errors are gated by fixed thresholds (the training-set
maxima): crossing either pins the frame's score to 1, otherwise the score
is the learned flow-prediction error.  Pooled per-frame scores are ranked
with AUC-ROC (trapezoidal, ties grouped, equivalent to the Mann-Whitney
statistic with half credit for ties) and AUC-PR (average precision, no
interpolation).  Scores are never normalized per execution.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Thresholds:
    e_c_thres: float
    e_b_thres: float

    def __post_init__(self):
        for name in ("e_c_thres", "e_b_thres"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0")
            object.__setattr__(self, name, v)


def compute_thresholds(train_e_c: list[float], train_e_b: list[float]) -> Thresholds:
    """Elementwise maxima of the nominal training errors."""
    if not len(train_e_c) or not len(train_e_b):
        raise ValueError("threshold computation needs non-empty training errors")
    return Thresholds(float(max(train_e_c)), float(max(train_e_b)))


def fuse(e_c: float, e_b: float, e_o: float, thresholds: Thresholds) -> float:
    """1 when either gated error reaches its threshold (inclusive),
    otherwise the learned error."""
    if not all(map(math.isfinite, (e_c, e_b, e_o))):
        raise ValueError("errors must be finite")
    if e_c >= thresholds.e_c_thres or e_b >= thresholds.e_b_thres:
        return 1.0
    return e_o


@dataclass(frozen=True)
class FrameRecord:
    frame: int
    e_c: float
    e_b: float
    e_o: float
    score: float
    label: bool


@dataclass
class AnomalyTrace:
    """Per-frame error/score sequence for one execution."""

    execution_id: str
    records: list[FrameRecord] = field(default_factory=list)

    def append(self, record: FrameRecord) -> None:
        if self.records and record.frame <= self.records[-1].frame:
            raise ValueError("frame indices must be strictly increasing")
        values = (record.e_c, record.e_b, record.e_o, record.score)
        if not all(map(math.isfinite, values)):
            raise ValueError("trace values must be finite")
        self.records.append(record)

    def scores(self) -> np.ndarray:
        return np.array([r.score for r in self.records])

    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=bool)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["frame", "e_c", "e_b", "e_o", "score", "label"])
            for r in self.records:
                writer.writerow(
                    [r.frame, repr(r.e_c), repr(r.e_b), repr(r.e_o), repr(r.score), int(r.label)]
                )

    @staticmethod
    def read_csv(path, execution_id: str | None = None) -> "AnomalyTrace":
        trace = AnomalyTrace(execution_id or str(path))
        with open(path, newline="") as f:
            reader = csv.DictReader(f)
            for row in reader:
                trace.append(
                    FrameRecord(
                        frame=int(row["frame"]),
                        e_c=float(row["e_c"]),
                        e_b=float(row["e_b"]),
                        e_o=float(row["e_o"]),
                        score=float(row["score"]),
                        label=bool(int(row["label"])),
                    )
                )
        return trace


@dataclass(frozen=True)
class CurveSummary:
    """Operating points plus the area under the curve.

    ROC points are (threshold, fpr, tpr); PR points are
    (threshold, recall, precision).
    """

    kind: str
    points: tuple[tuple[float, float, float], ...]
    auc: float

    def __post_init__(self):
        if self.kind not in ("roc", "pr"):
            raise ValueError("kind must be 'roc' or 'pr'")
        if not 0.0 <= self.auc <= 1.0:
            raise ValueError("auc must lie in [0, 1]")

    def to_json_dict(self) -> dict:
        return {"kind": self.kind, "auc": self.auc, "points": [list(p) for p in self.points]}


def _check_two_classes(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be matching 1D arrays")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    if labels.all() or not labels.any():
        raise ValueError("both classes must be present")
    return scores, labels


def _grouped_counts(scores: np.ndarray, labels: np.ndarray):
    """Descending distinct score values with per-group positive/negative counts."""
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    boundaries = np.flatnonzero(np.diff(s)) + 1
    starts = np.concatenate([[0], boundaries])
    stops = np.concatenate([boundaries, [len(s)]])
    values = s[starts]
    pos = np.add.reduceat(y.astype(np.int64), starts)
    neg = (stops - starts) - pos
    return values, pos, neg


def auc_roc(scores, labels) -> CurveSummary:
    """ROC by grouping tied scores into single operating points and
    integrating with the trapezoid rule ("larger score = more anomalous").
    """
    scores, labels = _check_two_classes(scores, labels)
    values, pos, neg = _grouped_counts(scores, labels)
    p_total = pos.sum()
    n_total = neg.sum()

    tpr = np.concatenate([[0.0], np.cumsum(pos) / p_total])
    fpr = np.concatenate([[0.0], np.cumsum(neg) / n_total])
    auc = float(np.trapezoid(tpr, fpr))
    thresholds = np.concatenate([[math.inf], values])
    points = tuple((float(t), float(f), float(r)) for t, f, r in zip(thresholds, fpr, tpr))
    return CurveSummary("roc", points, float(np.clip(auc, 0.0, 1.0)))


def auc_pr(scores, labels) -> CurveSummary:
    """Average precision over grouped operating points (step-wise, no
    interpolation): sum of precision times the recall increment."""
    scores, labels = _check_two_classes(scores, labels)
    values, pos, neg = _grouped_counts(scores, labels)
    p_total = pos.sum()

    tp = np.cumsum(pos)
    fp = np.cumsum(neg)
    precision = tp / (tp + fp)
    recall = tp / p_total
    recall_prev = np.concatenate([[0.0], recall[:-1]])
    ap = float(np.sum(precision * (recall - recall_prev)))
    points = tuple(
        (float(t), float(r), float(p)) for t, r, p in zip(values, recall, precision)
    )
    return CurveSummary("pr", points, float(np.clip(ap, 0.0, 1.0)))


def pairwise_auc_oracle(scores, labels) -> float:
    """Mann-Whitney statistic by direct pair counting (ties get half
    credit); the independent reference for auc_roc."""
    scores, labels = _check_two_classes(scores, labels)
    pos = scores[labels]
    neg = scores[~labels]
    wins = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return float((wins + 0.5 * ties) / (len(pos) * len(neg)))


def metrics_report(scores, labels) -> dict:
    """JSON-ready summary of both curves plus frame counts and the
    fraction of frames whose score saturates the threshold branch."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    roc = auc_roc(scores, labels)
    pr = auc_pr(scores, labels)
    return {
        "auc_roc": roc.auc,
        "auc_pr": pr.auc,
        "counts": {
            "frames": int(labels.size),
            "anomalous": int(labels.sum()),
            "nominal": int((~labels).sum()),
        },
        "anomalous_fraction": float(labels.mean()),
        "score_saturated_fraction": float((scores >= 1.0).mean()),
    }


def write_metrics_json(report: dict, path) -> None:
    with open(path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
