import json
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcidrive.dbi import FEATURES, FeatureMatrix
from mcidrive.evaluation import auc_score, confusion_matrix, evaluate, metrics_from_confusion
from mcidrive.forest import ForestConfig, train_forest
from mcidrive.suite import (
    GROUP_LABELS,
    InsufficientClassError,
    format_table,
    results_json,
    run_model_suite,
    select_model_inputs,
    split_train_test,
)


def close(a, b):
    return abs(a - b) <= 0.005


def test_age_only_row():
    m = metrics_from_confusion([[1242, 533], [0, 797]])
    assert close(m["accuracy"], 0.79)
    assert close(m["precision"][0], 1.00) and close(m["recall"][0], 0.70) and close(m["f1"][0], 0.82)
    assert close(m["precision"][1], 0.60) and close(m["recall"][1], 1.00) and close(m["f1"][1], 0.75)


def test_trip_count_row():
    m = metrics_from_confusion([[1775, 0], [366, 431]])
    assert close(m["accuracy"], 0.86)
    assert close(m["precision"][0], 0.83)
    assert close(m["recall"][1], 0.54)
    assert close(m["f1"][1], 0.70)


def test_confusion_orientation():
    conf = confusion_matrix([0, 0, 1, 1, 1], [0, 1, 1, 1, 0])
    assert conf.tolist() == [[1, 1], [1, 2]]


def test_metric_errors():
    with pytest.raises(ValueError):
        metrics_from_confusion([[0, 0], [0, 0]])
    with pytest.raises(ValueError):
        metrics_from_confusion([[1, 2, 3]])


def pair_count_auc(y, s):
    pos = [v for v, t in zip(s, y) if t == 1]
    neg = [v for v, t in zip(s, y) if t == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in product(pos, neg))
    return wins / (len(pos) * len(neg))


def test_auc_example():
    assert auc_score([0, 0, 1, 1], [0.1, 0.4, 0.35, 0.8]) == pytest.approx(0.75)


def test_auc_extremes():
    assert auc_score([0, 0, 1, 1], [0, 0.1, 0.9, 1]) == 1.0
    assert auc_score([0, 1, 0, 1], [0.3] * 4) == 0.5
    with pytest.raises(ValueError):
        auc_score([1, 1], [0.2, 0.3])


@settings(max_examples=200)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 10)), min_size=2, max_size=40))
def test_auc_matches_pair_counting(rows):
    y = [r[0] for r in rows]
    s = [r[1] / 10 for r in rows]
    if len(set(y)) < 2:
        return
    assert auc_score(y, s) == pytest.approx(pair_count_auc(y, s))
    # strictly monotone transform of the scores
    assert auc_score(y, np.asarray(s) ** 3) == pytest.approx(auc_score(y, s))


def test_evaluate_report_invariants():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(300, 3))
    y = (X[:, 0] > 0).astype(int)
    model = train_forest(X[:200], y[:200], ForestConfig(n_trees=10), ["a", "b", "c"])
    rep = evaluate(model, X[200:], y[200:])
    assert sum(map(sum, rep.confusion)) == rep.n_test == 100
    for v in [rep.accuracy, rep.auc, *rep.precision, *rep.recall, *rep.f1]:
        assert 0.0 <= v <= 1.0
    assert sum(rep.importances.values()) == pytest.approx(1.0)
    assert max(rep.importances, key=rep.importances.get) == "a"
    assert rep.accuracy > 0.9
    with pytest.raises(ValueError):
        evaluate(model, np.zeros((0, 3)), np.zeros(0))


# -- model groups and split ------------------------------------------------------


def test_group_sizes():
    assert [len(select_model_inputs(g)) for g in range(1, 7)] == [1, 3, 7, 12, 13, 19]
    assert select_model_inputs(1) == ["age"]
    assert select_model_inputs(6) == list(FEATURES)
    for bad in (0, 7):
        with pytest.raises(ValueError):
            select_model_inputs(bad)
    assert set(GROUP_LABELS) == set(range(1, 7))


def test_split_size_of_7794_rows():
    y = np.array([0] * 5325 + [1] * 2469)
    train, test = split_train_test(y, 0.33, seed=0)
    assert abs(len(test) - 2572) <= 1
    assert len(train) + len(test) == 7794
    assert not set(train) & set(test)
    for k, n in ((0, 5325), (1, 2469)):
        assert abs((y[test] == k).sum() - 0.33 * n) <= 1


def test_split_deterministic():
    y = np.arange(100) % 3 == 0
    a = split_train_test(y, seed=5)
    b = split_train_test(y, seed=5)
    assert all(np.array_equal(u, v) for u, v in zip(a, b))
    c = split_train_test(y, seed=6)
    assert not np.array_equal(a[1], c[1])


def test_split_errors():
    with pytest.raises(InsufficientClassError):
        split_train_test([0, 0, 0, 1])
    with pytest.raises(ValueError):
        split_train_test([0, 1, 0, 1], test_fraction=1.0)


def test_grouped_split_keeps_participants_whole():
    groups = np.repeat([f"P{i}" for i in range(12)], 10)
    y = np.repeat([i % 2 for i in range(12)], 10)
    train, test = split_train_test(y, 0.33, seed=1, groups=groups)
    assert not set(groups[train]) & set(groups[test])
    assert len(set(groups[test])) == 4
    assert set(y[test]) == {0, 1}
    with pytest.raises(ValueError):
        split_train_test(np.arange(120) % 2, groups=groups)


# -- suite -------------------------------------------------------------------------


def planted_matrix(seed=0, m=400):
    rng = np.random.default_rng(seed)
    X = rng.integers(1, 4, (m, len(FEATURES))).astype(float)
    y = rng.integers(0, 2, m)
    j = FEATURES.index("night_trips")
    X[:, j] = y * 3 + rng.normal(0, 1, m)
    X[:, FEATURES.index("age")] = rng.integers(65, 90, m)
    return FeatureMatrix(X, y, FEATURES, np.array([f"P{i % 20}" for i in range(m)]),
                         np.array(["2024Q1"] * m), np.array([f"T{i}" for i in range(m)]))


def test_model_suite_shape_and_ordering():
    fm = planted_matrix()
    results = run_model_suite(fm, ForestConfig(n_trees=15, seed=3))
    assert [r.group for r in results] == list(range(1, 7))
    assert [r.label for r in results] == [GROUP_LABELS[g] for g in range(1, 7)]
    by = {r.group: r.report for r in results}
    assert by[6].accuracy >= by[1].accuracy
    assert by[2].accuracy > 0.8
    table = format_table(results)
    assert table.count("obs0:") == 6 and table.count("obs1:") == 6
    doc = json.loads(results_json(results))
    assert [m["model"] for m in doc["models"]] == list(range(1, 7))


def test_model_suite_deterministic():
    fm = planted_matrix(1)
    a = run_model_suite(fm, ForestConfig(n_trees=5, seed=2), groups=[2, 4])
    b = run_model_suite(fm, ForestConfig(n_trees=5, seed=2), groups=[2, 4])
    assert results_json(a) == results_json(b)
    assert format_table(a) == format_table(b)
