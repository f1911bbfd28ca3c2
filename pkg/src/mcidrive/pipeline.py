"""Pipeline stages behind the CLI: extract features, emit reports, train/evaluate."""

from __future__ import annotations

import csv
import json
import logging
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from mcidrive.dbi import (
    DRIVING_FEATURES,
    DbiRecord,
    DbiSettings,
    Demographics,
    annotate_events,
    build_matrix,
    build_participant_records,
    classify_trip,
    read_features_csv,
    write_features_csv,
)
from mcidrive.forest import ForestConfig
from mcidrive.parsers import read_imu_file, read_nmea_file, read_obd_file
from mcidrive.suite import format_table, results_json, run_model_suite
from mcidrive.trips import DEFAULT_GAP_S, align_streams, segment_trips, trip_kinematics

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    """A stage failed on its input (exit code 1)."""


@dataclass(frozen=True)
class PipelineConfig:
    gap_s: float = DEFAULT_GAP_S
    harsh_threshold: float = 3.943
    urban_limit_km: float = 32.0
    utc_offset_h: float = -5.0
    day_parts: tuple[int, int, int, int] = (300, 720, 1020, 1260)
    peak_windows: tuple[tuple[int, int], ...] = ((420, 540), (960, 1080))
    test_fraction: float = 0.33
    group_by_participant: bool = False
    seed: int = 0
    jobs: int = 1
    forest: ForestConfig = field(default_factory=ForestConfig)

    def __post_init__(self):
        if self.gap_s <= 0 or self.harsh_threshold <= 0 or self.urban_limit_km <= 0:
            raise ValueError("gap_s, harsh_threshold and urban_limit_km must be positive")
        if list(self.day_parts) != sorted(self.day_parts) or len(self.day_parts) != 4:
            raise ValueError("day_parts must be four increasing minute-of-day boundaries")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in (0, 1)")

    @property
    def dbi(self) -> DbiSettings:
        return DbiSettings(self.harsh_threshold, self.urban_limit_km, self.utc_offset_h,
                           tuple(self.day_parts), tuple(tuple(w) for w in self.peak_windows))

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> PipelineConfig:
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "forest" in d:
            d["forest"] = ForestConfig(**d["forest"])
        if "day_parts" in d:
            d["day_parts"] = tuple(d["day_parts"])
        if "peak_windows" in d:
            d["peak_windows"] = tuple(tuple(w) for w in d["peak_windows"])
        return cls(**d)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


# -- extract -------------------------------------------------------------------


def extract_participant(args) -> tuple[list[DbiRecord], list[dict], Counter]:
    data_dir, entry, config = args
    stats: Counter = Counter()
    files = {k: Path(data_dir) / v for k, v in entry["files"].items()}
    pid = entry["participant_id"]
    demo = Demographics(**entry["demographics"])
    readers = {"nmea": (read_nmea_file, []), "obd": (read_obd_file, []), "imu": (read_imu_file, ())}
    streams = {}
    for key, (reader, empty) in readers.items():
        path = files.get(key)
        streams[key] = empty
        if path is None or not path.exists():
            stats[f"missing_{key}_files"] += 1
            continue
        try:
            streams[key] = reader(path, stats)
        except (ValueError, OSError) as exc:
            # unreadable file: count it and carry on with the other streams
            stats[f"unreadable_{key}_files"] += 1
            log.warning("%s: skipping %s (%s)", pid, path, exc)
    gps, obd, imu = streams["nmea"], streams["obd"], streams["imu"]
    samples = align_streams(gps, obd, imu)
    trips = segment_trips(samples, config.gap_s, pid, stats)
    settings = config.dbi
    trips = [annotate_events(trip_kinematics(t), settings.harsh_threshold) for t in trips]
    records = build_participant_records(trips, demo, settings)
    rows = []
    for t in trips:
        labels = classify_trip(t, settings)
        row = t.to_json_dict()
        row.update(period_id=labels.period_id, time_of_day=labels.time_of_day.value,
                   peak=labels.peak, distance_class=labels.distance_class.value)
        rows.append(row)
    stats["trips"] += len(trips)
    return records, rows, stats


def load_manifest(data_dir: Path) -> dict[str, Any]:
    path = data_dir / "manifest.json"
    if not path.exists():
        raise PipelineError(f"no trips extracted: {path} not found")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def extract(data_dir: str | Path, out_dir: str | Path, config: PipelineConfig = PipelineConfig()) -> Path:
    """Streams -> features.csv, trips.jsonl and parse_quality.json; returns the features path."""
    data_dir, out_dir = Path(data_dir), Path(out_dir)
    manifest = load_manifest(data_dir)
    work = [(str(data_dir), entry, config) for entry in manifest["participants"]]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            parts = list(pool.map(extract_participant, work))
    else:
        parts = [extract_participant(w) for w in work]
    records = [r for recs, _, _ in parts for r in recs]
    if not records:
        raise PipelineError("no trips extracted")
    out_dir.mkdir(parents=True, exist_ok=True)
    features = out_dir / "features.csv"
    write_features_csv(records, features)
    with open(out_dir / "trips.jsonl", "w", encoding="utf-8") as fh:
        for _, rows, _ in parts:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    total: Counter = Counter()
    per_participant = {}
    for entry, (_, _, stats) in zip(manifest["participants"], parts):
        per_participant[entry["participant_id"]] = dict(sorted(stats.items()))
        total.update(stats)
    with open(out_dir / "parse_quality.json", "w", encoding="utf-8") as fh:
        json.dump({"total": dict(sorted(total.items())), "participants": per_participant},
                  fh, indent=1, sort_keys=True)
        fh.write("\n")
    log.info("extracted %d rows from %d participants", len(records), len(parts))
    return features


# -- reports -------------------------------------------------------------------

TIME_OF_DAY_ORDER = ("morning", "afternoon", "evening", "night")


def time_of_day_table(trip_rows: Sequence[dict]) -> list[dict[str, Any]]:
    counts = Counter(row["time_of_day"] for row in trip_rows)
    total = sum(counts.values())
    return [{"time_of_day": k, "trips": counts[k], "share": counts[k] / total if total else 0.0}
            for k in TIME_OF_DAY_ORDER]


def quarterly_table(records: Sequence[DbiRecord]) -> list[dict[str, Any]]:
    """Per participant and quarter: the mean of each driving index."""
    groups: dict[tuple[str, str], list[DbiRecord]] = {}
    for r in records:
        groups.setdefault((r.participant_id, r.period_id), []).append(r)
    rows = []
    for (pid, period), recs in sorted(groups.items()):
        row: dict[str, Any] = {"participant_id": pid, "period_id": period, "mci": recs[0].mci, "rows": len(recs)}
        for name in DRIVING_FEATURES:
            row[name] = float(np.mean([getattr(r, name) for r in recs]))
        rows.append(row)
    return rows


def _write_csv(path: Path, rows: list[dict[str, Any]], header: Sequence[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(header), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def report(features_path: str | Path, out_dir: str | Path) -> dict[str, Path]:
    features_path, out_dir = Path(features_path), Path(out_dir)
    records = read_features_csv(features_path)
    if not records:
        raise PipelineError(f"{features_path} has no rows")
    trips_path = features_path.with_name("trips.jsonl")
    if not trips_path.exists():
        raise PipelineError(f"{trips_path} not found; run extract first")
    with open(trips_path, encoding="utf-8") as fh:
        trip_rows = [json.loads(line) for line in fh if line.strip()]
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "time_of_day": out_dir / "time_of_day.csv",
        "quarterly_nonmci": out_dir / "quarterly_nonmci.csv",
        "quarterly_mci": out_dir / "quarterly_mci.csv",
    }
    _write_csv(paths["time_of_day"], time_of_day_table(trip_rows), ["time_of_day", "trips", "share"])
    quarterly = quarterly_table(records)
    header = ["participant_id", "period_id", "mci", "rows", *DRIVING_FEATURES]
    _write_csv(paths["quarterly_nonmci"], [r for r in quarterly if r["mci"] == 0], header)
    _write_csv(paths["quarterly_mci"], [r for r in quarterly if r["mci"] == 1], header)
    return paths


# -- train / evaluate ------------------------------------------------------------


def train_eval(features_path: str | Path, out_dir: str | Path, config: PipelineConfig = PipelineConfig(),
               groups: Sequence[int] = range(1, 7)) -> dict[str, Path]:
    out_dir = Path(out_dir)
    records = read_features_csv(features_path)
    if not records:
        raise PipelineError(f"{features_path} has no rows")
    fm = build_matrix(records)
    results = run_model_suite(fm, config.forest, config.test_fraction, config.seed, groups,
                              config.group_by_participant)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "models").mkdir(exist_ok=True)
    paths = {"results": out_dir / "results.json", "table": out_dir / "results.txt"}
    paths["results"].write_text(results_json(results), encoding="utf-8")
    paths["table"].write_text(format_table(results), encoding="utf-8")
    for r in results:
        path = out_dir / "models" / f"model_group{r.group}.json"
        path.write_text(r.model.to_json() + "\n", encoding="utf-8")
    return paths
