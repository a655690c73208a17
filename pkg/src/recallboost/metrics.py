"""Binary classification metrics with label 1 (malignant) as the positive class.

Ratios whose denominator is zero are *undefined* and come back as ``None``
rather than 0, so they cannot masquerade as a legitimate score.

The count-based metrics return exact rationals (``fractions.Fraction``) so
identities such as ``accuracy * n == tp + tn`` hold exactly; reports carry
them as floats.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

# Report keys in the order of the published result tables.
TABLE_COLUMNS = (("AUC", "auc"), ("Recall", "recall"), ("Accuracy", "accuracy"),
                 ("F1-Score", "f1"), ("F_beta", "f_beta"))


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


def confusion(labels, predicted) -> ConfusionMatrix:
    y = np.asarray(labels)
    p = np.asarray(predicted)
    if y.shape != p.shape or y.ndim != 1:
        raise ValueError(f"labels and predictions differ in shape: {y.shape} vs {p.shape}")
    if y.size == 0:
        raise ValueError("empty label vector")
    pos, ppos = y == 1, p == 1
    return ConfusionMatrix(tp=int((pos & ppos).sum()), fp=int((~pos & ppos).sum()),
                           fn=int((pos & ~ppos).sum()), tn=int((~pos & ~ppos).sum()))


def accuracy(cm: ConfusionMatrix) -> Fraction:
    return Fraction(cm.tp + cm.tn, cm.n)


def recall(cm: ConfusionMatrix) -> Fraction | None:
    d = cm.tp + cm.fn
    return Fraction(cm.tp, d) if d else None


def precision(cm: ConfusionMatrix) -> Fraction | None:
    d = cm.tp + cm.fp
    return Fraction(cm.tp, d) if d else None


def f_beta(cm: ConfusionMatrix, beta: float) -> Fraction | None:
    """(1 + b^2) * P * R / (b^2 * P + R); undefined when P or R is."""
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    p, r = precision(cm), recall(cm)
    if p is None or r is None:
        return None
    b2 = Fraction(beta) ** 2
    denom = b2 * p + r
    return (1 + b2) * (p * r) / denom if denom else Fraction(0)


def f1(cm: ConfusionMatrix) -> Fraction | None:
    p, r = precision(cm), recall(cm)
    if p is None or r is None:
        return None
    denom = p + r
    return 2 * (p * r) / denom if denom else Fraction(0)


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float | None

    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist(), self.thresholds.tolist()))


def roc_auc(labels, scores) -> RocCurve:
    """ROC over every distinct score (predict positive iff score >= T), with
    +inf and -inf sentinels; AUC by the trapezoid rule.

    The area is accumulated on integer counts, so it equals the Mann-Whitney
    statistic (ties counted one half) up to a single division.
    """
    y = np.asarray(labels)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape or y.ndim != 1:
        raise ValueError("labels and scores differ in shape")
    if not np.isfinite(s).all():
        raise ValueError("scores must be finite")
    n_pos = int((y == 1).sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        empty = np.array([])
        return RocCurve(empty, empty, empty, None)
    order = np.argsort(-s, kind="stable")
    s_sorted, y_sorted = s[order], (y[order] == 1)
    last_of_run = np.r_[np.flatnonzero(np.diff(s_sorted) != 0), s.size - 1]
    tps = np.cumsum(y_sorted)[last_of_run]
    fps = (last_of_run + 1) - tps
    tps = np.r_[0, tps, n_pos].astype(np.int64)
    fps = np.r_[0, fps, n_neg].astype(np.int64)
    thresholds = np.r_[np.inf, s_sorted[last_of_run], -np.inf]
    twice_area = int(np.sum(np.diff(fps) * (tps[1:] + tps[:-1])))
    auc = twice_area / (2 * n_pos * n_neg)
    return RocCurve(thresholds, fps / n_neg, tps / n_pos, auc)


@dataclass
class EvalReport:
    confusion: ConfusionMatrix
    accuracy: float
    recall: float | None
    precision: float | None
    f1: float | None
    f_beta: float | None
    beta: float
    threshold: float
    auc: float | None
    roc: RocCurve

    def to_dict(self, with_roc: bool = True) -> dict:
        d = {
            "n": self.confusion.n,
            "confusion": self.confusion.to_dict(),
            "auc": self.auc,
            "recall": self.recall,
            "accuracy": self.accuracy,
            "f1": self.f1,
            "f_beta": self.f_beta,
            "precision": self.precision,
            "beta": self.beta,
            "threshold": self.threshold,
        }
        if with_roc:
            d["roc"] = [{"threshold": _finite_or_str(t), "fpr": f, "tpr": r}
                        for f, r, t in self.roc.points()]
        return d

    def roc_csv(self) -> str:
        lines = ["threshold,fpr,tpr"]
        lines += [f"{t!r},{f!r},{r!r}" for f, r, t in self.roc.points()]
        return "\n".join(lines) + "\n"


def _finite_or_str(t: float):
    return t if np.isfinite(t) else ("inf" if t > 0 else "-inf")


def evaluate(model, test, threshold: float = 0.5, beta: float = 2.7) -> EvalReport:
    """Score ``model`` on ``test``: labels at ``threshold`` on the probability;
    ROC thresholds are reported on the probability scale."""
    if test.n_cols != model.n_features:
        raise ValueError(f"model expects {model.n_features} features, dataset has {test.n_cols}")
    margin = model.margin(test.features)
    proba = model.link(margin)
    pred = (proba >= threshold).astype(np.int64)
    cm = confusion(test.labels, pred)
    # rank on margins: the link saturates to exact ties far from zero
    roc = roc_auc(test.labels, margin)
    roc = RocCurve(model.link(roc.thresholds), roc.fpr, roc.tpr, roc.auc)
    return EvalReport(cm, float(accuracy(cm)), _float(recall(cm)), _float(precision(cm)),
                      _float(f1(cm)), _float(f_beta(cm, beta)), beta, threshold, roc.auc, roc)


def _float(v: Fraction | None) -> float | None:
    return None if v is None else float(v)
