"""Confusion-matrix metrics and rank-based AUC."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from mcidrive.forest import ForestModel, feature_importance


def confusion_matrix(y_true, y_pred) -> np.ndarray:
    """2x2 counts, rows = observed class, columns = predicted class."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    conf = np.zeros((2, 2), dtype=np.int64)
    np.add.at(conf, (y_true, y_pred), 1)
    return conf


def _ratio(num: float, den: float) -> float:
    return float(num / den) if den else 0.0


def metrics_from_confusion(conf) -> dict:
    """Accuracy plus per-class precision, recall and F1 from an observed x predicted matrix."""
    c = np.asarray(conf, dtype=float)
    if c.shape != (2, 2) or (c < 0).any():
        raise ValueError("expected a non-negative 2x2 confusion matrix")
    total = c.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    precision, recall, f1 = [], [], []
    for k in (0, 1):
        p = _ratio(c[k, k], c[:, k].sum())
        r = _ratio(c[k, k], c[k, :].sum())
        precision.append(p)
        recall.append(r)
        f1.append(_ratio(2 * p * r, p + r))
    return {
        "accuracy": float(np.trace(c) / total),
        "precision": precision,
        "recall": recall,
        "f1": f1,
    }


def auc_score(y_true, scores) -> float:
    """Mann-Whitney U / (n_pos * n_neg), average ranks for ties."""
    y = np.asarray(y_true, dtype=np.int64)
    s = np.asarray(scores, dtype=float)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    ranks = rankdata(s, method="average")
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class EvaluationReport:
    accuracy: float
    auc: float
    precision: list[float]
    recall: list[float]
    f1: list[float]
    confusion: list[list[int]]
    importances: dict[str, float]
    n_test: int

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(model: ForestModel, X_test, y_test) -> EvaluationReport:
    X_test = np.asarray(X_test, dtype=float)
    y_test = np.asarray(y_test, dtype=np.int64)
    if len(y_test) == 0:
        raise ValueError("empty test set")
    votes = model.votes(X_test)
    score = votes.mean(axis=0)
    ones = votes.sum(axis=0)
    zeros = len(model.trees) - ones
    pred = np.where(ones > zeros, 1, np.where(zeros > ones, 0, model.config.tie_class))
    conf = confusion_matrix(y_test, pred)
    m = metrics_from_confusion(conf)
    try:
        auc = auc_score(y_test, score)
    except ValueError:
        auc = float("nan")
    imp = feature_importance(model)
    return EvaluationReport(
        accuracy=m["accuracy"],
        auc=auc,
        precision=m["precision"],
        recall=m["recall"],
        f1=m["f1"],
        confusion=conf.tolist(),
        importances={name: float(v) for name, v in zip(model.feature_names, imp)},
        n_test=int(len(y_test)),
    )
