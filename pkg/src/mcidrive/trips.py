"""Stream alignment, trip segmentation and per-trip kinematics."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Any, Iterator, Sequence

import numpy as np

from mcidrive.parsers import GpsFix, ImuRecord, ImuSeries, ObdReading, VoltageRecord, ms_to_iso

EARTH_RADIUS_KM = 6371.0
COALESCE_MS = 100
DEFAULT_GAP_S = 300.0

# source codes, also the tie-break order for records sharing a timestamp
_GPS, _RPM, _SPEED, _IMU, _VOLTS = range(5)


@dataclass(frozen=True, slots=True)
class TelemetrySample:
    timestamp_ms: int
    gps: GpsFix | None = None
    obd_rpm: float | None = None
    obd_speed_kmh: float | None = None
    accel: tuple[float, float, float] | None = None
    volts: float | None = None


@dataclass(frozen=True)
class SampleTable:
    """Columnar sequence of :class:`TelemetrySample`; NaN marks an absent field.

    ``gps_valid`` is -1 where the sample has no fix, else 0/1.
    """

    t_ms: np.ndarray
    gps_t_ms: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    gps_speed: np.ndarray
    gps_valid: np.ndarray
    rpm: np.ndarray
    obd_speed: np.ndarray
    accel: np.ndarray
    volts: np.ndarray

    @classmethod
    def allocate(cls, n: int) -> SampleTable:
        nan = lambda *shape: np.full(shape, np.nan)  # noqa: E731
        return cls(
            t_ms=np.zeros(n, dtype=np.int64),
            gps_t_ms=np.zeros(n, dtype=np.int64),
            lat=nan(n), lon=nan(n), gps_speed=nan(n),
            gps_valid=np.full(n, -1, dtype=np.int8),
            rpm=nan(n), obd_speed=nan(n), accel=nan(n, 3), volts=nan(n),
        )

    def __len__(self) -> int:
        return len(self.t_ms)

    def slice(self, start: int, stop: int) -> SampleTable:
        return SampleTable(**{k: v[start:stop] for k, v in self.__dict__.items()})

    def __getitem__(self, i: int) -> TelemetrySample:
        gps = None
        if self.gps_valid[i] >= 0:
            speed = None if math.isnan(self.gps_speed[i]) else float(self.gps_speed[i])
            gps = GpsFix(int(self.gps_t_ms[i]), float(self.lat[i]), float(self.lon[i]),
                         speed, bool(self.gps_valid[i]))
        opt = lambda v: None if math.isnan(v) else float(v)  # noqa: E731
        accel = None
        if not math.isnan(self.accel[i, 0]):
            accel = tuple(float(a) for a in self.accel[i])
        return TelemetrySample(int(self.t_ms[i]), gps, opt(self.rpm[i]), opt(self.obd_speed[i]),
                               accel, opt(self.volts[i]))

    def __iter__(self) -> Iterator[TelemetrySample]:
        for i in range(len(self)):
            yield self[i]


def _group_events(t: np.ndarray, src: np.ndarray, window_ms: int) -> np.ndarray:
    """Assign sorted records to samples.

    A record opens a new sample when it is ``window_ms`` or more after the
    sample's first record, or when the sample already holds that source.
    """
    n = len(t)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    # a gap >= window always starts a new sample; only clusters between such
    # gaps need the anchored scan
    hard = np.empty(n, dtype=bool)
    hard[0] = True
    hard[1:] = np.diff(t) >= window_ms
    cluster = np.cumsum(hard) - 1
    starts = np.flatnonzero(hard)
    ends = np.append(starts[1:], n)
    sizes = ends - starts
    span = t[ends - 1] - t[starts]

    # clusters whose sources are all distinct and that fit in one window are one sample
    key = cluster * 8 + src
    order = np.argsort(key, kind="stable")
    dup = np.zeros(len(starts), dtype=bool)
    same = key[order][1:] == key[order][:-1]
    dup[cluster[order][1:][same]] = True
    simple = (span < window_ms) & ~dup

    new_sample = hard.copy()
    for c in np.flatnonzero(~simple & (sizes > 1)):
        anchor = t[starts[c]]
        seen = {src[starts[c]]}
        for j in range(starts[c] + 1, ends[c]):
            if t[j] - anchor >= window_ms or src[j] in seen:
                new_sample[j] = True
                anchor = t[j]
                seen = {src[j]}
            else:
                seen.add(src[j])
    return np.cumsum(new_sample) - 1


def align_streams(
    gps: Sequence[GpsFix] = (),
    obd: Sequence[ObdReading] = (),
    imu: Sequence[ImuRecord] | ImuSeries = (),
    volts: Sequence[VoltageRecord] = (),
    window_ms: int = COALESCE_MS,
) -> SampleTable:
    """K-way merge of the four streams into one time-sorted sample table.

    Records less than ``window_ms`` after a sample's first record are folded
    into that sample, unless the sample already carries the same field.
    """
    if not isinstance(imu, ImuSeries):
        imu = ImuSeries.from_records(list(imu))
    rpm = [r for r in obd if r.rpm is not None]
    spd = [r for r in obd if r.speed_kmh is not None]

    times = [
        np.array([f.timestamp_ms for f in gps], dtype=np.int64),
        np.array([r.timestamp_ms for r in rpm], dtype=np.int64),
        np.array([r.timestamp_ms for r in spd], dtype=np.int64),
        imu.t_ms.astype(np.int64),
        np.array([v.timestamp_ms for v in volts], dtype=np.int64),
    ]
    t = np.concatenate(times)
    src = np.concatenate([np.full(len(a), code, dtype=np.int64) for code, a in enumerate(times)])
    local = np.concatenate([np.arange(len(a), dtype=np.int64) for a in times])
    order = np.lexsort((src, t))
    t, src, local = t[order], src[order], local[order]

    group = _group_events(t, src, window_ms)
    n = int(group[-1]) + 1 if len(group) else 0
    table = SampleTable.allocate(n)
    first = np.ones(len(t), dtype=bool)
    first[1:] = group[1:] != group[:-1]
    table.t_ms[:] = t[first]

    sel = src == _GPS
    if sel.any():
        g, i = group[sel], local[sel]
        table.gps_t_ms[g] = times[_GPS][i]
        table.lat[g] = np.array([gps[k].latitude for k in i])
        table.lon[g] = np.array([gps[k].longitude for k in i])
        table.gps_speed[g] = np.array([np.nan if gps[k].speed_kmh is None else gps[k].speed_kmh for k in i])
        table.gps_valid[g] = np.array([gps[k].valid for k in i], dtype=np.int8)
    sel = src == _RPM
    if sel.any():
        table.rpm[group[sel]] = np.array([rpm[k].rpm for k in local[sel]])
    sel = src == _SPEED
    if sel.any():
        table.obd_speed[group[sel]] = np.array([spd[k].speed_kmh for k in local[sel]])
    sel = src == _IMU
    if sel.any():
        table.accel[group[sel]] = imu.accel[local[sel]]
    sel = src == _VOLTS
    if sel.any():
        table.volts[group[sel]] = np.array([volts[k].volts for k in local[sel]])
    return table


@dataclass
class Trip:
    trip_id: str
    participant_id: str
    start_ms: int
    end_ms: int
    samples: SampleTable = field(repr=False)
    duration_s: float = 0.0
    distance_km: float | None = None
    mean_speed_kmh: float | None = None
    mean_rpm: float | None = None
    events: list = field(default_factory=list)

    def to_json_dict(self) -> dict[str, Any]:
        counts = Counter(e.kind.value for e in self.events)
        return {
            "trip_id": self.trip_id,
            "participant_id": self.participant_id,
            "start": ms_to_iso(self.start_ms),
            "end": ms_to_iso(self.end_ms),
            "start_ms": self.start_ms,
            "end_ms": self.end_ms,
            "n_samples": len(self.samples),
            "duration_s": self.duration_s,
            "distance_km": self.distance_km,
            "mean_speed_kmh": self.mean_speed_kmh,
            "mean_rpm": self.mean_rpm,
            "events": dict(sorted(counts.items())),
        }


def make_trip_id(participant_id: str, start_ms: int) -> str:
    stamp = ms_to_iso(start_ms).replace("-", "").replace(":", "")
    return f"{participant_id}-{stamp}" if participant_id else stamp


def segment_trips(
    samples: SampleTable,
    gap_s: float = DEFAULT_GAP_S,
    participant_id: str = "",
    counts: Counter | None = None,
) -> list[Trip]:
    """Split at every inter-sample gap >= ``gap_s``; singleton pieces are dropped."""
    if gap_s <= 0:
        raise ValueError("gap_s must be positive")
    n = len(samples)
    if n == 0:
        return []
    breaks = np.flatnonzero(np.diff(samples.t_ms) >= gap_s * 1000.0) + 1
    bounds = np.concatenate(([0], breaks, [n]))
    trips = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        if b - a < 2:
            if counts is not None:
                counts["singleton_trips"] += 1
            continue
        piece = samples.slice(int(a), int(b))
        start, end = int(piece.t_ms[0]), int(piece.t_ms[-1])
        trips.append(Trip(make_trip_id(participant_id, start), participant_id, start, end, piece,
                          duration_s=(end - start) / 1000.0))
    return trips


def haversine_km(a: tuple[float, float], b: tuple[float, float]) -> float:
    lat1, lon1 = math.radians(a[0]), math.radians(a[1])
    lat2, lon2 = math.radians(b[0]), math.radians(b[1])
    h = math.sin((lat2 - lat1) / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def haversine_km_array(lat1, lon1, lat2, lon2) -> np.ndarray:
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(v, dtype=float)) for v in (lat1, lon1, lat2, lon2))
    h = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def trip_kinematics(trip: Trip) -> Trip:
    """Fill duration, distance and mean speed/RPM from the trip's samples.

    Speed per sample prefers OBD over GPS; invalid GPS fixes are ignored
    for both distance and speed. Fields with no observations stay None.
    """
    s = trip.samples
    if len(s) < 2:
        raise ValueError("a trip needs at least two samples")
    valid = s.gps_valid == 1
    distance = None
    if valid.any():
        lat, lon = s.lat[valid], s.lon[valid]
        distance = float(haversine_km_array(lat[:-1], lon[:-1], lat[1:], lon[1:]).sum())
    speed = np.where(np.isnan(s.obd_speed), np.where(valid, s.gps_speed, np.nan), s.obd_speed)
    speed = speed[~np.isnan(speed)]
    rpm = s.rpm[~np.isnan(s.rpm)]
    return replace(
        trip,
        duration_s=(int(s.t_ms[-1]) - int(s.t_ms[0])) / 1000.0,
        distance_km=distance,
        mean_speed_kmh=float(speed.mean()) if len(speed) else None,
        mean_rpm=float(rpm.mean()) if len(rpm) else None,
    )


def write_trips_jsonl(trips: Sequence[Trip], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for trip in trips:
            fh.write(json.dumps(trip.to_json_dict(), sort_keys=True) + "\n")


def read_trips_jsonl(path) -> list[dict[str, Any]]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
