"""Outlier flooring/capping, rank-to-uniform normalization and skewness.

Continuous columns go through winsorize -> quantile_normalize. The
transform is fitted on training rows and replayed on test rows: values are
clamped to the training floor/cap, then mapped through the training
empirical CDF (linear interpolation between the training plotting
positions).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from mcidrive.dbi import DRIVING_FEATURES, FeatureMatrix

LOWER_P = 0.10
UPPER_P = 0.90


class DegenerateColumnError(ValueError):
    pass


def quantile(values: Sequence[float], p: float) -> float:
    """Linear-interpolation quantile: h = (n-1)p between order statistics."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("quantile of an empty sequence")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    h = (v.size - 1) * p
    lo = math.floor(h)
    if lo + 1 >= v.size:
        return float(v[-1])
    return float(v[lo] + (h - lo) * (v[lo + 1] - v[lo]))


def winsorize(column: Sequence[float], lo_p: float = LOWER_P, hi_p: float = UPPER_P) -> np.ndarray:
    x = np.asarray(column, dtype=float)
    return np.clip(x, quantile(x, lo_p), quantile(x, hi_p))


def skewness(column: Sequence[float]) -> float:
    """Moment coefficient g1 = m3 / m2**1.5 with central moments over n."""
    x = np.asarray(column, dtype=float)
    if x.size < 3:
        raise DegenerateColumnError("skewness needs at least three values")
    d = x - x.mean()
    m2 = np.mean(d * d)
    if m2 <= 1e-12 * max(1.0, float(np.mean(x * x))):
        raise DegenerateColumnError("zero variance")
    return float(np.mean(d ** 3) / m2 ** 1.5)


def quantile_normalize(column: Sequence[float]) -> np.ndarray:
    """Hazen plotting positions (r - 0.5)/m with tie-averaged ranks r."""
    x = np.asarray(column, dtype=float)
    return (rankdata(x, method="average") - 0.5) / x.size


@dataclass(frozen=True)
class ColumnTransform:
    floor: float
    cap: float
    knots: np.ndarray  # distinct winsorized training values
    positions: np.ndarray  # their plotting positions

    @classmethod
    def fit(cls, column, lo_p: float = LOWER_P, hi_p: float = UPPER_P) -> ColumnTransform:
        x = np.asarray(column, dtype=float)
        w = winsorize(x, lo_p, hi_p)
        ranks = quantile_normalize(w)
        knots, first = np.unique(w, return_index=True)
        return cls(float(w.min()), float(w.max()), knots, ranks[first])

    def __call__(self, column) -> np.ndarray:
        x = np.clip(np.asarray(column, dtype=float), self.floor, self.cap)
        return np.interp(x, self.knots, self.positions)


@dataclass
class ColumnReport:
    skewness_before: float | None
    skewness_after: float | None
    floor_value: float
    cap_value: float
    n_floored: int
    n_capped: int


@dataclass
class PreprocessReport:
    columns: dict[str, ColumnReport]

    def to_dict(self) -> dict:
        return {name: asdict(rep) for name, rep in self.columns.items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _skew_or_none(x) -> float | None:
    try:
        return skewness(x)
    except DegenerateColumnError:
        return None


@dataclass
class Preprocessor:
    transforms: dict[str, ColumnTransform]
    report: PreprocessReport

    @classmethod
    def fit(cls, fm: FeatureMatrix, continuous_cols: Sequence[str] | None = None) -> Preprocessor:
        cols = [c for c in (DRIVING_FEATURES if continuous_cols is None else continuous_cols)
                if c in fm.columns]
        missing = set(continuous_cols or ()) - set(fm.columns)
        if missing:
            raise KeyError(f"unknown columns: {sorted(missing)}")
        transforms, reports = {}, {}
        for name in cols:
            x = fm.X[:, fm.columns.index(name)]
            t = ColumnTransform.fit(x)
            out = t(x)
            transforms[name] = t
            reports[name] = ColumnReport(
                skewness_before=_skew_or_none(x),
                skewness_after=_skew_or_none(out),
                floor_value=t.floor,
                cap_value=t.cap,
                n_floored=int(np.sum(x < t.floor)),
                n_capped=int(np.sum(x > t.cap)),
            )
        return cls(transforms, PreprocessReport(reports))

    def transform(self, fm: FeatureMatrix) -> FeatureMatrix:
        X = fm.X.copy()
        for name, t in self.transforms.items():
            j = fm.columns.index(name)
            X[:, j] = t(X[:, j])
        return replace(fm, X=X)


def preprocess_matrix(
    fm: FeatureMatrix, continuous_cols: Sequence[str] | None = None
) -> tuple[FeatureMatrix, PreprocessReport]:
    """Fit on ``fm`` and transform it; other columns and labels pass through."""
    pre = Preprocessor.fit(fm, continuous_cols)
    return pre.transform(fm), pre.report
