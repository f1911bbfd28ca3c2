"""Driver Behavior Indexes: harsh events, trip classes and the 19-column rows."""

from __future__ import annotations

import csv
import enum
from collections import Counter, defaultdict
from dataclasses import dataclass, fields, replace
from datetime import time
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from mcidrive.parsers import ms_to_datetime
from mcidrive.trips import Trip

HARSH_THRESHOLD = 3.943  # m/s^2
URBAN_LIMIT_KM = 32.0
DEFAULT_UTC_OFFSET_H = -5.0

DRIVER_FEATURES = ("age", "gender", "race", "ethnicity", "education", "retired", "bmi_obese")
DRIVING_FEATURES = (
    "total_trips", "night_trips", "peak_trips", "duration_s", "distance_km", "speed_kmh", "rpm",
    "n_harsh_accel", "n_hard_brake", "n_hard_turn", "urban_trips", "suburb_trips",
)
FEATURES = DRIVER_FEATURES + DRIVING_FEATURES
ID_COLUMNS = ("participant_id", "period_id", "trip_id")
LABEL = "mci"

# minute-of-day boundaries: morning, afternoon, evening and night starts
DAY_PARTS = (5 * 60, 12 * 60, 17 * 60, 21 * 60)
PEAK_WINDOWS = ((7 * 60, 9 * 60), (16 * 60, 18 * 60))


class EmptyDatasetError(ValueError):
    pass


class EventKind(str, enum.Enum):
    HARSH_ACCELERATION = "harsh_acceleration"
    HARD_BRAKING = "hard_braking"
    HARD_TURN = "hard_turn"


class TimeOfDay(str, enum.Enum):
    MORNING = "morning"
    AFTERNOON = "afternoon"
    EVENING = "evening"
    NIGHT = "night"


class DistanceClass(str, enum.Enum):
    URBAN = "urban"
    SUBURB = "suburb"


@dataclass(frozen=True, slots=True)
class DrivingEvent:
    kind: EventKind
    timestamp_ms: int
    peak: float  # signed sample with the largest magnitude in the excursion


@dataclass(frozen=True)
class DbiSettings:
    harsh_threshold: float = HARSH_THRESHOLD
    urban_limit_km: float = URBAN_LIMIT_KM
    utc_offset_h: float = DEFAULT_UTC_OFFSET_H
    day_parts: tuple[int, int, int, int] = DAY_PARTS
    peak_windows: tuple[tuple[int, int], ...] = PEAK_WINDOWS


def _runs(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    padded = np.concatenate(([False], mask, [False])).astype(np.int8)
    edges = np.diff(padded)
    return np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)


def detect_events(
    accel,
    rate_hz: float = 1.0,
    timestamps_ms=None,
    threshold: float = HARSH_THRESHOLD,
) -> list[DrivingEvent]:
    """One event per maximal run beyond ``threshold``.

    x > +threshold is harsh acceleration, x < -threshold hard braking and
    |y| > threshold a hard turn. Onset times come from ``timestamps_ms``
    when given, else from the sample index and ``rate_hz``.
    """
    if rate_hz <= 0:
        raise ValueError("rate_hz must be positive")
    a = np.asarray(accel, dtype=float).reshape(-1, 3)
    if timestamps_ms is None:
        stamps = np.round(np.arange(len(a)) * 1000.0 / rate_hz).astype(np.int64)
    else:
        stamps = np.asarray(timestamps_ms, dtype=np.int64)
    x, y = a[:, 0], a[:, 1]
    rules = (
        (EventKind.HARSH_ACCELERATION, x, x > threshold),
        (EventKind.HARD_BRAKING, x, x < -threshold),
        (EventKind.HARD_TURN, y, np.abs(y) > threshold),
    )
    events = []
    for kind, series, mask in rules:
        starts, stops = _runs(mask)
        for s, e in zip(starts, stops):
            seg = series[s:e]
            events.append(DrivingEvent(kind, int(stamps[s]), float(seg[np.argmax(np.abs(seg))])))
    events.sort(key=lambda ev: (ev.timestamp_ms, list(EventKind).index(ev.kind)))
    return events


def annotate_events(trip: Trip, threshold: float = HARSH_THRESHOLD) -> Trip:
    s = trip.samples
    has = ~np.isnan(s.accel[:, 0])
    stamps = s.t_ms[has]
    rate = 1.0
    if len(stamps) > 1 and stamps[-1] > stamps[0]:
        rate = 1000.0 * (len(stamps) - 1) / (stamps[-1] - stamps[0])
    return replace(trip, events=detect_events(s.accel[has], rate, stamps, threshold))


def _minute(t: time | int) -> int:
    if isinstance(t, time):
        return t.hour * 60 + t.minute
    return int(t) % 1440


def time_of_day(t: time | int, day_parts: Sequence[int] = DAY_PARTS) -> TimeOfDay:
    """Classify a local wall-clock time (``datetime.time`` or minute of day)."""
    m = _minute(t)
    morning, afternoon, evening, night = day_parts
    if morning <= m < afternoon:
        return TimeOfDay.MORNING
    if afternoon <= m < evening:
        return TimeOfDay.AFTERNOON
    if evening <= m < night:
        return TimeOfDay.EVENING
    return TimeOfDay.NIGHT


def is_peak(t: time | int, windows: Iterable[tuple[int, int]] = PEAK_WINDOWS) -> bool:
    m = _minute(t)
    return any(lo <= m < hi for lo, hi in windows)


def distance_class(distance_km: float, urban_limit_km: float = URBAN_LIMIT_KM) -> DistanceClass:
    return DistanceClass.URBAN if distance_km < urban_limit_km else DistanceClass.SUBURB


def local_minute(ms: int, utc_offset_h: float = DEFAULT_UTC_OFFSET_H) -> int:
    local_s = ms // 1000 + round(utc_offset_h * 3600)
    return int(local_s % 86400) // 60


def quarter_of(ms: int, utc_offset_h: float = DEFAULT_UTC_OFFSET_H) -> str:
    dt = ms_to_datetime(ms + round(utc_offset_h * 3_600_000))
    return f"{dt.year}Q{(dt.month - 1) // 3 + 1}"


@dataclass(frozen=True)
class Demographics:
    age: int
    gender: int  # 1 male, 2 female
    race: int  # 1..6
    ethnicity: int  # 1..6
    education: int  # 1 (grade school) .. 10 (doctoral degree)
    retired: int
    bmi_obese: int
    mci: int

    def __post_init__(self):
        checks = {
            "age": self.age >= 65,
            "gender": self.gender in (1, 2),
            "race": 1 <= self.race <= 6,
            "ethnicity": 1 <= self.ethnicity <= 6,
            "education": 1 <= self.education <= 10,
            "retired": self.retired in (0, 1),
            "bmi_obese": self.bmi_obese in (0, 1),
            "mci": self.mci in (0, 1),
        }
        bad = [k for k, ok in checks.items() if not ok]
        if bad:
            raise ValueError(f"demographic fields out of range: {', '.join(bad)}")


@dataclass(frozen=True)
class DbiRecord:
    participant_id: str
    period_id: str
    trip_id: str
    age: int
    gender: int
    race: int
    ethnicity: int
    education: int
    retired: int
    bmi_obese: int
    total_trips: int
    night_trips: int
    peak_trips: int
    duration_s: float
    distance_km: float
    speed_kmh: float
    rpm: float
    n_harsh_accel: int
    n_hard_brake: int
    n_hard_turn: int
    urban_trips: int
    suburb_trips: int
    mci: int

    def features(self) -> list[float]:
        return [float(getattr(self, name)) for name in FEATURES]


@dataclass(frozen=True)
class TripLabels:
    """Per-trip classification used both for records and for reports."""

    trip_id: str
    period_id: str
    time_of_day: TimeOfDay
    peak: bool
    distance_class: DistanceClass


def classify_trip(trip: Trip, settings: DbiSettings = DbiSettings()) -> TripLabels:
    minute = local_minute(trip.start_ms, settings.utc_offset_h)
    return TripLabels(
        trip.trip_id,
        quarter_of(trip.start_ms, settings.utc_offset_h),
        time_of_day(minute, settings.day_parts),
        is_peak(minute, settings.peak_windows),
        distance_class(trip.distance_km or 0.0, settings.urban_limit_km),
    )


def build_records(
    trips: Sequence[Trip],
    demo: Demographics,
    period: str,
    settings: DbiSettings = DbiSettings(),
) -> list[DbiRecord]:
    """One record per trip; trip counts are this participant-period's totals.

    Trips must already carry kinematics and events. Missing distance, speed
    or RPM enter the row as 0.
    """
    if not trips:
        return []
    labels = [classify_trip(t, settings) for t in trips]
    total = len(trips)
    night = sum(lab.time_of_day is TimeOfDay.NIGHT for lab in labels)
    peak = sum(lab.peak for lab in labels)
    urban = sum(lab.distance_class is DistanceClass.URBAN for lab in labels)
    records = []
    for trip in trips:
        kinds = Counter(e.kind for e in trip.events)
        records.append(DbiRecord(
            trip.participant_id, period, trip.trip_id,
            demo.age, demo.gender, demo.race, demo.ethnicity, demo.education,
            demo.retired, demo.bmi_obese,
            total, night, peak,
            trip.duration_s,
            trip.distance_km or 0.0,
            trip.mean_speed_kmh or 0.0,
            trip.mean_rpm or 0.0,
            kinds[EventKind.HARSH_ACCELERATION], kinds[EventKind.HARD_BRAKING], kinds[EventKind.HARD_TURN],
            urban, total - urban,
            demo.mci,
        ))
    return records


def build_participant_records(
    trips: Sequence[Trip], demo: Demographics, settings: DbiSettings = DbiSettings()
) -> list[DbiRecord]:
    """Group a participant's trips by calendar quarter and build every period's rows."""
    by_period: dict[str, list[Trip]] = defaultdict(list)
    for trip in sorted(trips, key=lambda t: (t.start_ms, t.trip_id)):
        by_period[quarter_of(trip.start_ms, settings.utc_offset_h)].append(trip)
    records = []
    for period in sorted(by_period):
        records.extend(build_records(by_period[period], demo, period, settings))
    return records


@dataclass
class FeatureMatrix:
    """X (m x n), labels y and the row identifiers they came from."""

    X: np.ndarray
    y: np.ndarray
    columns: tuple[str, ...]
    participant_ids: np.ndarray
    period_ids: np.ndarray
    trip_ids: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.X.shape

    def select(self, columns: Sequence[str]) -> FeatureMatrix:
        idx = [self.columns.index(c) for c in columns]
        return replace(self, X=self.X[:, idx], columns=tuple(columns))

    def take(self, rows) -> FeatureMatrix:
        return FeatureMatrix(self.X[rows], self.y[rows], self.columns,
                             self.participant_ids[rows], self.period_ids[rows], self.trip_ids[rows])


def build_matrix(records: Sequence[DbiRecord]) -> FeatureMatrix:
    if not records:
        raise EmptyDatasetError("cannot build a feature matrix from zero records")
    return FeatureMatrix(
        X=np.array([r.features() for r in records], dtype=float).reshape(len(records), len(FEATURES)),
        y=np.array([r.mci for r in records], dtype=np.int64),
        columns=FEATURES,
        participant_ids=np.array([r.participant_id for r in records], dtype=object),
        period_ids=np.array([r.period_id for r in records], dtype=object),
        trip_ids=np.array([r.trip_id for r in records], dtype=object),
    )


CSV_HEADER = ID_COLUMNS + FEATURES + (LABEL,)
_INT_FIELDS = {f.name for f in fields(DbiRecord) if f.type == "int"}


def write_features_csv(records: Sequence[DbiRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in records:
            writer.writerow([getattr(r, name) for name in CSV_HEADER])


def read_features_csv(path: str | Path) -> list[DbiRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_HEADER:
            raise ValueError(f"{path}: header does not match the feature manifest")
        records = []
        for row in reader:
            values = dict(zip(CSV_HEADER, row))
            kwargs = {}
            for name in CSV_HEADER:
                if name in ID_COLUMNS:
                    kwargs[name] = values[name]
                elif name in _INT_FIELDS:
                    kwargs[name] = int(values[name])
                else:
                    kwargs[name] = float(values[name])
            records.append(DbiRecord(**kwargs))
    return records
