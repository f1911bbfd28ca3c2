"""The six model-input groups, the holdout split and the results table."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from mcidrive.dbi import DRIVER_FEATURES, DRIVING_FEATURES, FEATURES, FeatureMatrix
from mcidrive.evaluation import EvaluationReport, evaluate
from mcidrive.forest import ForestConfig, ForestModel, train_forest
from mcidrive.preprocess import Preprocessor

GROUP_LABELS = {
    1: "Only age",
    2: "Number of trips (total, peak, night)",
    3: "Driver variables",
    4: "Driving variables",
    5: "Age with driving variables",
    6: "All the variables",
}


class InsufficientClassError(ValueError):
    pass


def select_model_inputs(group: int) -> list[str]:
    if group == 1:
        return ["age"]
    if group == 2:
        return ["total_trips", "peak_trips", "night_trips"]
    if group == 3:
        return list(DRIVER_FEATURES)
    if group == 4:
        return list(DRIVING_FEATURES)
    if group == 5:
        return ["age", *DRIVING_FEATURES]
    if group == 6:
        return list(FEATURES)
    raise ValueError(f"model group must be 1..6, got {group!r}")


def _n_test(n: int, fraction: float) -> int:
    return min(max(int(round(n * fraction)), 1), n - 1)


def split_train_test(
    y, test_fraction: float = 0.33, seed: int = 0, groups=None
) -> tuple[np.ndarray, np.ndarray]:
    """Stratified holdout; returns sorted (train_rows, test_rows).

    With ``groups`` (e.g. participant ids) whole groups are assigned to one
    side, stratified by each group's label.
    """
    y = np.asarray(y, dtype=np.int64)
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    test = []
    if groups is None:
        for k in (0, 1):
            rows = np.flatnonzero(y == k)
            if len(rows) < 2:
                raise InsufficientClassError(f"class {k} has {len(rows)} rows; need at least 2")
            test.append(rng.permutation(rows)[: _n_test(len(rows), test_fraction)])
    else:
        groups = np.asarray(groups)
        names, inverse = np.unique(groups, return_inverse=True)
        label = np.zeros(len(names), dtype=np.int64)
        label[inverse] = y
        if not (label[inverse] == y).all():
            raise ValueError("labels vary within a group")
        for k in (0, 1):
            members = np.flatnonzero(label == k)
            if len(members) < 2:
                raise InsufficientClassError(f"class {k} has {len(members)} groups; need at least 2")
            chosen = rng.permutation(members)[: _n_test(len(members), test_fraction)]
            test.append(np.flatnonzero(np.isin(inverse, chosen)))
    test_rows = np.sort(np.concatenate(test))
    mask = np.ones(len(y), dtype=bool)
    mask[test_rows] = False
    return np.flatnonzero(mask), test_rows


@dataclass
class GroupResult:
    group: int
    label: str
    features: list[str]
    report: EvaluationReport
    model: ForestModel

    def to_dict(self) -> dict:
        rep = self.report.to_dict()
        if isinstance(rep["auc"], float) and math.isnan(rep["auc"]):
            rep["auc"] = None
        return {"model": self.group, "input": self.label, "features": self.features, **rep}


def run_model_suite(
    fm: FeatureMatrix,
    config: ForestConfig = ForestConfig(),
    test_fraction: float = 0.33,
    split_seed: int | None = None,
    groups: Iterable[int] = range(1, 7),
    group_by_participant: bool = False,
    preprocess: bool = True,
) -> list[GroupResult]:
    """Split once, then per group: select columns, fit preprocessing on train, train, evaluate."""
    seed = config.seed if split_seed is None else split_seed
    train_rows, test_rows = split_train_test(
        fm.y, test_fraction, seed, fm.participant_ids if group_by_participant else None
    )
    train, test = fm.take(train_rows), fm.take(test_rows)
    results = []
    for g in groups:
        cols = select_model_inputs(g)
        tr, te = train.select(cols), test.select(cols)
        if preprocess:
            pre = Preprocessor.fit(tr)
            tr, te = pre.transform(tr), pre.transform(te)
        model = train_forest(tr.X, tr.y, config, cols)
        results.append(GroupResult(g, GROUP_LABELS[g], cols, evaluate(model, te.X, te.y), model))
    return results


def results_json(results: list[GroupResult]) -> str:
    return json.dumps({"models": [r.to_dict() for r in results]}, indent=2, sort_keys=True) + "\n"


def format_table(results: list[GroupResult]) -> str:
    """Aligned plain-text table, two lines per model (one per observed class)."""
    head = ["Model", "Input", "Accuracy", "AUC", "Precision", "Recall", "F1", "Confusion"]
    rows = []
    for r in results:
        rep = r.report
        auc = "nan" if math.isnan(rep.auc) else f"{rep.auc:.2f}"
        for k in (0, 1):
            first = k == 0
            rows.append([
                str(r.group) if first else "",
                r.label if first else "",
                f"{rep.accuracy:.2f}" if first else "",
                auc if first else "",
                f"{rep.precision[k]:.2f}",
                f"{rep.recall[k]:.2f}",
                f"{rep.f1[k]:.2f}",
                f"obs{k}: " + " ".join(f"{v:>5d}" for v in rep.confusion[k]),
            ])
    widths = [max(len(h), *(len(row[i]) for row in rows)) for i, h in enumerate(head)]
    fmt = lambda cells: "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()  # noqa: E731
    lines = [fmt(head), fmt(["-" * w for w in widths])]
    lines += [fmt(row) for row in rows]
    lines.append("Confusion rows are observed classes; columns are predicted 0, 1.")
    return "\n".join(lines) + "\n"
