"""Line decoders for the three TMU stream formats.

Each logger session produces three line-oriented files:

* ``*.nmea``     one NMEA-0183 sentence per line (RMC and GGA are decoded)
* ``*.obd``      ``<ISO-8601 UTC timestamp> <hex bytes>`` mode-01 responses
* ``*.imu.csv``  ``timestamp_ms,ax,ay,az,gx,gy,gz`` rows after a header

All timestamps are integer milliseconds since the Unix epoch (UTC).
The per-line parsers are pure functions; the file readers skip bad lines
and tally them in a :class:`collections.Counter`.
"""

from __future__ import annotations

import calendar
import math
from functools import lru_cache, reduce
from operator import xor
from collections import Counter
from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

KNOTS_TO_KMH = 1.852
PID_RPM = 0x0C
PID_SPEED = 0x0D
IMU_HEADER = "timestamp_ms,ax,ay,az,gx,gy,gz"

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


class ParseError(ValueError):
    """Base class for every rejected input line."""


class ChecksumError(ParseError):
    pass


class UnsupportedSentence(ParseError):
    pass


class UnsupportedPid(ParseError):
    pass


class FrameError(ParseError):
    pass


class FieldError(ParseError):
    """A field could not be decoded. ``column`` is None for shape errors."""

    def __init__(self, message: str, column: int | None = None):
        super().__init__(message if column is None else f"column {column}: {message}")
        self.column = column


@dataclass(frozen=True, slots=True)
class GpsFix:
    timestamp_ms: int
    latitude: float
    longitude: float
    speed_kmh: float | None  # GGA carries no speed
    valid: bool


@dataclass(frozen=True, slots=True)
class ObdReading:
    timestamp_ms: int
    pid: int
    rpm: float | None = None
    speed_kmh: float | None = None


@dataclass(frozen=True, slots=True)
class ImuRecord:
    timestamp_ms: int
    accel: tuple[float, float, float]
    gyro: tuple[float, float, float]


@dataclass(frozen=True, slots=True)
class VoltageRecord:
    timestamp_ms: int
    volts: float


# -- time helpers -----------------------------------------------------------


@lru_cache(maxsize=4096)
def _date_ms(text: str) -> int:
    return calendar.timegm(date.fromisoformat(text).timetuple()) * 1000


def iso_to_ms(text: str) -> int:
    """Parse an ISO-8601 UTC timestamp (``Z`` or ``+00:00`` suffix) to epoch ms."""
    # fast path for the canonical YYYY-MM-DDTHH:MM:SS.fffZ form
    if len(text) == 24 and text[10] == "T" and text[23] == "Z" and text[19] == "." \
            and text[13] == ":" and text[16] == ":" and text[11:23].replace(":", "").replace(".", "").isdigit():
        h, m, sec, ms = int(text[11:13]), int(text[14:16]), int(text[17:19]), int(text[20:23])
        if h < 24 and m < 60 and sec < 60:
            return _date_ms(text[:10]) + ((h * 60 + m) * 60 + sec) * 1000 + ms
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return (dt - _EPOCH) // timedelta(milliseconds=1)


def ms_to_iso(ms: int) -> str:
    dt = _EPOCH + timedelta(milliseconds=int(ms))
    return dt.strftime("%Y-%m-%dT%H:%M:%S.") + f"{dt.microsecond // 1000:03d}Z"


def ms_to_datetime(ms: int) -> datetime:
    return _EPOCH + timedelta(milliseconds=int(ms))


# -- NMEA -------------------------------------------------------------------


def nmea_checksum(body: str) -> int:
    """XOR of every character between ``$`` and ``*``."""
    return reduce(xor, body.encode("latin-1"), 0)


def _split_sentence(line: str) -> list[str]:
    line = line.strip()
    if not line.startswith("$"):
        raise FieldError("sentence must start with '$'", 0)
    if not line.isascii():
        raise FieldError("non-ASCII characters in sentence")
    star = line.rfind("*")
    if star == -1:
        body = line[1:]
    else:
        body = line[1:star]
        given = line[star + 1 :]
        try:
            expected = int(given, 16)
        except ValueError:
            raise ChecksumError(f"unreadable checksum {given!r}") from None
        if len(given) != 2 or nmea_checksum(body) != expected:
            raise ChecksumError(f"checksum mismatch in {line!r}")
    return body.split(",")


def _coord(value: str, hemi: str, index: int, positive: str, negative: str, limit: float) -> float:
    dot = value.find(".")
    if dot == -1:
        dot = len(value)
    if dot < 3:
        raise FieldError(f"bad coordinate {value!r}", index)
    try:
        degrees = int(value[: dot - 2])
        minutes = float(value[dot - 2 :])
    except ValueError:
        raise FieldError(f"bad coordinate {value!r}", index) from None
    if not 0.0 <= minutes < 60.0:
        raise FieldError(f"minutes out of range in {value!r}", index)
    result = degrees + minutes / 60.0
    if result > limit:
        raise FieldError(f"coordinate {value!r} out of range", index)
    if hemi == negative:
        return -result
    if hemi != positive:
        raise FieldError(f"bad hemisphere {hemi!r}", index + 1)
    return result


def _time_of_day_ms(value: str, index: int) -> int:
    try:
        hh, mm = int(value[0:2]), int(value[2:4])
        seconds = float(value[4:])
    except ValueError:
        raise FieldError(f"bad UTC time {value!r}", index) from None
    if len(value) < 6 or hh > 23 or mm > 59 or not 0 <= seconds < 61:
        raise FieldError(f"bad UTC time {value!r}", index)
    return (hh * 3600 + mm * 60) * 1000 + round(seconds * 1000)


def _date(value: str, index: int) -> date:
    if len(value) != 6 or not value.isdigit():
        raise FieldError(f"bad date {value!r}", index)
    day, month, yy = int(value[0:2]), int(value[2:4]), int(value[4:6])
    # two-digit years: 80-99 -> 19xx, otherwise 20xx
    year = 1900 + yy if yy >= 80 else 2000 + yy
    try:
        return date(year, month, day)
    except ValueError:
        raise FieldError(f"bad date {value!r}", index) from None


@lru_cache(maxsize=4096)
def _day_ms(d: date) -> int:
    return calendar.timegm((d.year, d.month, d.day, 0, 0, 0)) * 1000


def parse_nmea(line: str, day: date | None = None) -> GpsFix:
    """Decode one RMC or GGA sentence.

    GGA sentences carry no date; ``day`` supplies it (epoch day when None).
    Invalid fixes may leave the position fields empty; they decode to 0.0.
    """
    fields = _split_sentence(line)
    kind = fields[0][2:] if len(fields[0]) == 5 else fields[0]
    if kind == "RMC":
        if len(fields) < 10:
            raise FieldError(f"RMC needs at least 10 fields, got {len(fields)}")
        status = fields[2]
        if status not in ("A", "V"):
            raise FieldError(f"bad status {status!r}", 2)
        valid = status == "A"
        stamp = _day_ms(_date(fields[9], 9)) + _time_of_day_ms(fields[1], 1)
        lat, lon = _position(fields, 3, valid)
        if fields[7]:
            try:
                knots = float(fields[7])
            except ValueError:
                raise FieldError(f"bad speed {fields[7]!r}", 7) from None
            if not math.isfinite(knots) or knots < 0:
                raise FieldError(f"bad speed {fields[7]!r}", 7)
        else:
            knots = 0.0
        return GpsFix(stamp, lat, lon, knots * KNOTS_TO_KMH, valid)
    if kind == "GGA":
        if len(fields) < 7:
            raise FieldError(f"GGA needs at least 7 fields, got {len(fields)}")
        try:
            quality = int(fields[6] or "0")
        except ValueError:
            raise FieldError(f"bad fix quality {fields[6]!r}", 6) from None
        valid = quality > 0
        stamp = (_day_ms(day) if day is not None else 0) + _time_of_day_ms(fields[1], 1)
        lat, lon = _position(fields, 2, valid)
        return GpsFix(stamp, lat, lon, None, valid)
    raise UnsupportedSentence(fields[0])


def _position(fields: list[str], start: int, valid: bool) -> tuple[float, float]:
    lat_s, ns, lon_s, ew = fields[start : start + 4]
    if not valid and not (lat_s or lon_s):
        return 0.0, 0.0
    lat = _coord(lat_s, ns, start, "N", "S", 90.0)
    lon = _coord(lon_s, ew, start + 2, "E", "W", 180.0)
    return lat, lon


# -- OBD-II -----------------------------------------------------------------


def parse_obd(frame: str) -> ObdReading:
    """Decode ``<timestamp> 41 <PID> <A> [B]``; only PIDs 0x0C and 0x0D."""
    parts = frame.split()
    if len(parts) < 3:
        raise FrameError(f"short frame {frame!r}")
    try:
        stamp = iso_to_ms(parts[0])
    except ValueError:
        raise FrameError(f"bad timestamp {parts[0]!r}") from None
    for token in parts[1:]:
        if len(token) != 2:
            raise FrameError(f"bad byte {token!r}")
    try:
        payload = bytes.fromhex(" ".join(parts[1:]))
    except ValueError:
        raise FrameError(f"bad bytes in {frame!r}") from None
    if payload[0] != 0x41:
        raise FrameError(f"mode byte {payload[0]:02X} is not a mode-01 response")
    pid, data = payload[1], payload[2:]
    if pid == PID_RPM:
        if len(data) != 2:
            raise FrameError(f"PID 0C expects 2 data bytes, got {len(data)}")
        return ObdReading(stamp, pid, rpm=(256 * data[0] + data[1]) / 4.0)
    if pid == PID_SPEED:
        if len(data) != 1:
            raise FrameError(f"PID 0D expects 1 data byte, got {len(data)}")
        return ObdReading(stamp, pid, speed_kmh=float(data[0]))
    raise UnsupportedPid(f"{pid:02X}")


# -- IMU --------------------------------------------------------------------


def parse_imu_line(line: str) -> ImuRecord:
    cols = line.strip().split(",")
    if len(cols) != 7:
        raise FieldError(f"expected 7 columns, got {len(cols)}")
    try:
        stamp = int(cols[0])
    except ValueError:
        raise FieldError(f"bad timestamp {cols[0]!r}", 1) from None
    values = []
    for i, text in enumerate(cols[1:], start=2):
        try:
            v = float(text)
        except ValueError:
            raise FieldError(f"non-numeric {text!r}", i) from None
        if not math.isfinite(v):
            raise FieldError(f"non-finite {text!r}", i)
        values.append(v)
    return ImuRecord(stamp, (values[0], values[1], values[2]), (values[3], values[4], values[5]))


@dataclass(frozen=True)
class ImuSeries:
    """Columnar IMU stream: ``t_ms`` (n,), ``accel`` (n, 3), ``gyro`` (n, 3)."""

    t_ms: np.ndarray
    accel: np.ndarray
    gyro: np.ndarray

    @classmethod
    def empty(cls) -> ImuSeries:
        return cls(np.zeros(0, dtype=np.int64), np.zeros((0, 3)), np.zeros((0, 3)))

    @classmethod
    def from_records(cls, records: Sequence[ImuRecord]) -> ImuSeries:
        if not records:
            return cls.empty()
        return cls(
            np.array([r.timestamp_ms for r in records], dtype=np.int64),
            np.array([r.accel for r in records], dtype=float),
            np.array([r.gyro for r in records], dtype=float),
        )

    def __len__(self) -> int:
        return len(self.t_ms)

    def __getitem__(self, i: int) -> ImuRecord:
        a, g = self.accel[i], self.gyro[i]
        return ImuRecord(int(self.t_ms[i]), (float(a[0]), float(a[1]), float(a[2])),
                         (float(g[0]), float(g[1]), float(g[2])))

    def __iter__(self) -> Iterator[ImuRecord]:
        for i in range(len(self)):
            yield self[i]


# -- file readers -----------------------------------------------------------


def read_nmea_lines(lines: Iterable[str], stats: Counter | None = None) -> list[GpsFix]:
    stats = stats if stats is not None else Counter()
    fixes = []
    day = None
    for line in lines:
        if not line.strip():
            continue
        stats["nmea_lines"] += 1
        try:
            fix = parse_nmea(line, day)
        except ChecksumError:
            stats["nmea_checksum_errors"] += 1
            continue
        except UnsupportedSentence:
            stats["nmea_unsupported"] += 1
            continue
        except FieldError:
            stats["nmea_field_errors"] += 1
            continue
        if "RMC" in line[:6]:
            day = (_EPOCH + timedelta(milliseconds=fix.timestamp_ms)).date()
        fixes.append(fix)
    return fixes


def read_obd_lines(lines: Iterable[str], stats: Counter | None = None) -> list[ObdReading]:
    stats = stats if stats is not None else Counter()
    readings = []
    for line in lines:
        if not line.strip():
            continue
        stats["obd_lines"] += 1
        try:
            readings.append(parse_obd(line))
        except UnsupportedPid:
            stats["obd_unsupported"] += 1
        except FrameError:
            stats["obd_frame_errors"] += 1
    return readings


def read_imu_lines(lines: Iterable[str], stats: Counter | None = None) -> ImuSeries:
    stats = stats if stats is not None else Counter()
    records = []
    for line in lines:
        if not line.strip() or line.startswith("timestamp_ms"):
            continue
        stats["imu_lines"] += 1
        try:
            records.append(parse_imu_line(line))
        except FieldError:
            stats["imu_field_errors"] += 1
    return ImuSeries.from_records(records)


# undecodable bytes become U+FFFD so the bad line is rejected on its own
def read_nmea_file(path: str | Path, stats: Counter | None = None) -> list[GpsFix]:
    with open(path, encoding="ascii", errors="replace") as fh:
        return read_nmea_lines(fh, stats)


def read_obd_file(path: str | Path, stats: Counter | None = None) -> list[ObdReading]:
    with open(path, encoding="ascii", errors="replace") as fh:
        return read_obd_lines(fh, stats)


def read_imu_file(path: str | Path, stats: Counter | None = None) -> ImuSeries:
    """Bulk-load an ``*.imu.csv`` file.

    Well-formed files go through numpy's C reader; anything it rejects, or
    any row with a non-finite value or fractional timestamp, falls back to
    the per-line parser so bad rows are skipped and counted individually.
    """
    stats = stats if stats is not None else Counter()
    path = Path(path)
    with open(path, encoding="ascii", errors="replace") as fh:
        header = fh.readline().strip()
    if header != IMU_HEADER:
        raise FieldError(f"{path.name}: unexpected header {header!r}")
    try:
        table = np.loadtxt(path, delimiter=",", skiprows=1, dtype=float, ndmin=2)
    except ValueError:
        table = None
    if table is not None and table.size == 0:
        return ImuSeries.empty()
    if (
        table is not None
        and table.shape[1] == 7
        and np.isfinite(table).all()
        and (np.floor(table[:, 0]) == table[:, 0]).all()
    ):
        stats["imu_lines"] += len(table)
        return ImuSeries(table[:, 0].astype(np.int64), table[:, 1:4].copy(), table[:, 4:7].copy())
    with open(path, encoding="ascii", errors="replace") as fh:
        return read_imu_lines(fh, stats)
