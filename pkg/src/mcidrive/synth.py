"""Synthetic cohort generator.

Emits demographics plus raw ``*.nmea`` / ``*.obd`` / ``*.imu.csv`` streams per
participant, and a ground-truth ledger of every trip (start, duration, true
path length, time-of-day/peak/distance labels, injected event counts).

Randomness comes from numpy's PCG64 seeded through ``SeedSequence``: the
cohort seed plus a spawn key per participant, so participants can be
generated in any order or in parallel with identical output.

Trips are straight great-circle paths. Speed is drawn per second from a
truncated normal around a per-trip mean; RPM follows speed plus noise.
Accelerometer traces are quiet noise (never beyond +/-2.5 m/s^2) with
harsh-event excursions of 1-3 samples spliced in at the profile's rate.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Any

import numpy as np

from mcidrive.dbi import DbiRecord, Demographics
from mcidrive.parsers import IMU_HEADER, KNOTS_TO_KMH, ms_to_iso, nmea_checksum
from mcidrive.trips import EARTH_RADIUS_KM, make_trip_id

# shares of trip starts by time of day for the default profile
MORNING_SHARE = 0.349
AFTERNOON_SHARE = 0.50
NIGHT_SHARE = 0.022
EVENING_SHARE = 1.0 - MORNING_SHARE - AFTERNOON_SHARE - NIGHT_SHARE

# local minute windows [lo, hi) per category; night wraps past midnight
_WINDOWS = {
    "morning": (300, 720),
    "afternoon": (720, 1020),
    "evening": (1020, 1260),
    "night": (1260, 1740),
}
_CATEGORIES = ("morning", "afternoon", "evening", "night")
_EVENT_KINDS = ("harsh_acceleration", "hard_braking", "hard_turn")

RPM_PER_KMH = 13.8
QUIET_LIMIT = 2.5  # m/s^2, baseline accelerometer noise is clipped here
URBAN_LIMIT_KM = 32.0
TRIP_GUARD_S = 600  # minimum idle time between two trips of one participant
HOME = (26.3683, -80.1289)

EFFECTS = ("none", "night_trip_deficit", "event_rate_shift")


@dataclass(frozen=True)
class BehaviorProfile:
    trips_per_week: float = 18.0
    trips_per_week_sd: float = 7.0
    night_share: float = NIGHT_SHARE
    night_share_sd: float = 0.01
    event_rate_per_100km: float = 28.0  # per event kind
    event_rate_sd: float = 8.0
    speed_mean_kmh: float = 26.7  # mean of per-trip mean speeds
    speed_trip_sd: float = 6.0
    speed_sample_sd: float = 5.0  # second-to-second spread within a trip
    rpm_mean: float = 1118.7
    rpm_sd: float = 60.0
    duration_mean_s: float = 1281.0
    duration_sigma: float = 0.9  # log-normal shape

    def validate(self) -> None:
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"profile field {f.name} must be >= 0")
        if self.night_share > 0.5:
            raise ValueError("night_share must be <= 0.5")


@dataclass(frozen=True)
class CohortSpec:
    n_participants: int = 16
    mci_fraction: float = 0.3
    weeks: int = 26
    seed: int = 0
    start_date: str = "2024-01-01"  # local calendar date of week 0
    utc_offset_h: float = -5.0
    target_trips: int | None = None  # exact cohort trip count when set
    gps_period_s: int = 30
    obd_period_s: int = 30
    imu_hz: float = 1.0
    invalid_fix_rate: float = 0.02
    nonmci: BehaviorProfile = field(default_factory=BehaviorProfile)
    mci: BehaviorProfile = field(default_factory=BehaviorProfile)

    def validate(self) -> None:
        if self.n_participants < 1:
            raise ValueError("n_participants must be >= 1")
        if not 0.0 <= self.mci_fraction <= 1.0:
            raise ValueError("mci_fraction must lie in [0, 1]")
        if self.weeks < 1:
            raise ValueError("weeks must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.target_trips is not None and self.target_trips < 0:
            raise ValueError("target_trips must be >= 0")
        if self.gps_period_s < 1 or self.obd_period_s < 1 or self.imu_hz <= 0:
            raise ValueError("sampling periods and rates must be positive")
        if max(self.gps_period_s, self.obd_period_s, 1.0 / self.imu_hz) >= 300:
            raise ValueError("sampling intervals must stay below the 300 s trip gap")
        if not 0.0 <= self.invalid_fix_rate < 1.0:
            raise ValueError("invalid_fix_rate must lie in [0, 1)")
        date.fromisoformat(self.start_date)
        self.nonmci.validate()
        self.mci.validate()

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> CohortSpec:
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown cohort spec keys: {sorted(unknown)}")
        for key in ("nonmci", "mci"):
            if key in d:
                prof = dict(d[key])
                bad = set(prof) - {f.name for f in fields(BehaviorProfile)}
                if bad:
                    raise ValueError(f"unknown profile keys in {key}: {sorted(bad)}")
                d[key] = BehaviorProfile(**prof)
        spec = cls(**d)
        spec.validate()
        return spec


def _shift(mean: float, sd: float, strength: float) -> tuple[float, float]:
    # lower the mean by strength*sd, keeping the coefficient of variation
    new = max(0.0, mean - strength * sd)
    return new, sd * new / mean if mean > 0 else 0.0


def inject_planted_signal(spec: CohortSpec, effect: str, strength: float = 2.0) -> CohortSpec:
    """Copy the non-MCI profile to the MCI group, shifting one parameter down.

    The shift is ``strength`` between-participant standard deviations of the
    named parameter, so MCI drivers take fewer night trips or have fewer
    harsh events per kilometre. The spread shrinks in proportion, so the
    gamma shape of the participant-level draw is unchanged.
    """
    if effect not in EFFECTS:
        raise ValueError(f"unknown effect {effect!r}; expected one of {EFFECTS}")
    base = spec.nonmci
    if effect == "night_trip_deficit":
        mean, sd = _shift(base.night_share, base.night_share_sd, strength)
        mci = replace(base, night_share=mean, night_share_sd=sd)
    elif effect == "event_rate_shift":
        mean, sd = _shift(base.event_rate_per_100km, base.event_rate_sd, strength)
        mci = replace(base, event_rate_per_100km=mean, event_rate_sd=sd)
    else:
        mci = base
    return replace(spec, mci=mci)


# -- serializers -------------------------------------------------------------


def _ddmm(value: float, width: int) -> str:
    a = abs(value)
    deg = int(a)
    minutes = round((a - deg) * 60.0, 6)
    if minutes >= 60.0:
        deg, minutes = deg + 1, 0.0
    return f"{deg:0{width}d}{minutes:09.6f}"


def nmea_sentence(body: str) -> str:
    return f"${body}*{nmea_checksum(body):02X}"


def format_rmc(t_ms: int, lat: float, lon: float, speed_kmh: float | None, valid: bool) -> str:
    dt = datetime(1970, 1, 1, tzinfo=timezone.utc) + timedelta(milliseconds=int(t_ms))
    hms = dt.strftime("%H%M%S") + f".{dt.microsecond // 1000:03d}"
    dmy = dt.strftime("%d%m%y")
    if valid:
        pos = f"{_ddmm(lat, 2)},{'N' if lat >= 0 else 'S'},{_ddmm(lon, 3)},{'E' if lon >= 0 else 'W'}"
        knots = f"{(speed_kmh or 0.0) / KNOTS_TO_KMH:.3f}"
    else:
        pos, knots = ",,,", ""
    return nmea_sentence(f"GPRMC,{hms},{'A' if valid else 'V'},{pos},{knots},,{dmy},,")


def format_obd_rpm(t_ms: int, rpm: float) -> str:
    code = int(round(rpm * 4))
    return f"{ms_to_iso(t_ms)} 41 0C {code >> 8:02X} {code & 0xFF:02X}"


def format_obd_speed(t_ms: int, speed_kmh: float) -> str:
    return f"{ms_to_iso(t_ms)} 41 0D {int(round(speed_kmh)):02X}"


def format_imu(t_ms: int, accel, gyro) -> str:
    return "%d,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f" % (t_ms, *accel, *gyro)


def quantize_position(lat: float, lon: float) -> tuple[float, float]:
    """Position as it reads back from the NMEA text."""
    def q(v, width):
        s = _ddmm(v, width)
        deg, minutes = int(s[:width]), float(s[width:])
        r = deg + minutes / 60.0
        return -r if v < 0 else r
    return q(lat, 2), q(lon, 3)


def quantize_speed(speed_kmh: float) -> float:
    return float(f"{speed_kmh / KNOTS_TO_KMH:.3f}") * KNOTS_TO_KMH


# -- planning ----------------------------------------------------------------


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def _gamma(rng: np.random.Generator, mean: float, sd: float) -> float:
    if mean <= 0:
        return 0.0
    if sd <= 0:
        return mean
    shape = (mean / sd) ** 2
    return float(rng.gamma(shape, sd * sd / mean))


def _truncnorm(rng: np.random.Generator, mean: float, sd: float, lo: float, hi: float, size=None):
    out = rng.normal(mean, sd, size)
    if size is None:
        while not lo <= out <= hi:
            out = rng.normal(mean, sd)
        return float(out)
    bad = (out < lo) | (out > hi)
    while bad.any():
        out[bad] = rng.normal(mean, sd, int(bad.sum()))
        bad = (out < lo) | (out > hi)
    return out


@dataclass
class ParticipantPlan:
    index: int
    participant_id: str
    demographics: Demographics
    trips_per_week: float
    night_share: float
    event_rate: float
    home: tuple[float, float]
    n_trips: int = 0


def _draw_demographics(rng: np.random.Generator, mci: int) -> Demographics:
    age = int(np.clip(round(rng.normal(75.67, 6.04)), 65, 89))
    return Demographics(
        age=age,
        gender=int(rng.integers(1, 3)),
        race=int(rng.choice(6, p=[0.15, 0.62, 0.06, 0.02, 0.05, 0.10]) + 1),
        ethnicity=int(rng.choice(6, p=[0.12, 0.55, 0.18, 0.05, 0.05, 0.05]) + 1),
        education=int(rng.choice(10, p=[0.02, 0.15, 0.15, 0.05, 0.08, 0.22, 0.05, 0.18, 0.04, 0.06]) + 1),
        retired=int(rng.random() < 0.8),
        bmi_obese=int(rng.random() < 0.3),
        mci=mci,
    )


def _largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    if weights.sum() <= 0:
        weights = np.ones_like(weights)
    raw = weights / weights.sum() * total
    base = np.floor(raw).astype(np.int64)
    rest = total - int(base.sum())
    order = np.lexsort((np.arange(len(raw)), -(raw - base)))
    base[order[:rest]] += 1
    return base


def plan_cohort(spec: CohortSpec) -> list[ParticipantPlan]:
    spec.validate()
    root = _rng(spec.seed)
    n_mci = int(round(spec.n_participants * spec.mci_fraction))
    mci_flags = np.zeros(spec.n_participants, dtype=int)
    mci_flags[root.permutation(spec.n_participants)[:n_mci]] = 1
    plans = []
    for i in range(spec.n_participants):
        rng = _rng(spec.seed, i, 0)
        mci = int(mci_flags[i])
        prof = spec.mci if mci else spec.nonmci
        demo = _draw_demographics(rng, mci)
        plans.append(ParticipantPlan(
            index=i,
            participant_id=f"P{i + 1:04d}",
            demographics=demo,
            trips_per_week=_gamma(rng, prof.trips_per_week, prof.trips_per_week_sd),
            night_share=min(0.5, _gamma(rng, prof.night_share, prof.night_share_sd)),
            event_rate=_gamma(rng, prof.event_rate_per_100km, prof.event_rate_sd),
            home=(HOME[0] + rng.uniform(-0.15, 0.15), HOME[1] + rng.uniform(-0.1, 0.1)),
        ))
    rates = np.array([p.trips_per_week for p in plans])
    if spec.target_trips is not None:
        counts = _largest_remainder(rates, spec.target_trips)
    else:
        counts = root.poisson(rates * spec.weeks)
    for p, n in zip(plans, counts):
        p.n_trips = int(n)
    return plans


# -- trip simulation ---------------------------------------------------------


@dataclass
class TripStreams:
    truth: dict[str, Any]
    gps_t: np.ndarray
    gps_lat: np.ndarray
    gps_lon: np.ndarray
    gps_speed: np.ndarray
    gps_valid: np.ndarray
    obd_t: np.ndarray
    obd_rpm: np.ndarray
    obd_speed: np.ndarray
    imu_t: np.ndarray
    accel: np.ndarray
    gyro: np.ndarray

    def nmea_lines(self) -> list[str]:
        return [format_rmc(t, la, lo, s, v) for t, la, lo, s, v in
                zip(self.gps_t.tolist(), self.gps_lat.tolist(), self.gps_lon.tolist(),
                    self.gps_speed.tolist(), self.gps_valid.tolist())]

    def obd_lines(self) -> list[str]:
        out = []
        for t, r, s in zip(self.obd_t.tolist(), self.obd_rpm.tolist(), self.obd_speed.tolist()):
            out.append(format_obd_rpm(t, r))
            out.append(format_obd_speed(t, s))
        return out

    def imu_lines(self) -> list[str]:
        rows = np.column_stack([self.accel, self.gyro]).tolist()
        return ["%d,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f" % (t, *r) for t, r in zip(self.imu_t.tolist(), rows)]


def _local_epoch_ms(spec: CohortSpec) -> int:
    d = date.fromisoformat(spec.start_date)
    utc_midnight = datetime(d.year, d.month, d.day, tzinfo=timezone.utc)
    return int(utc_midnight.timestamp()) * 1000 - round(spec.utc_offset_h * 3_600_000)


def _category_probs(night_share: float) -> np.ndarray:
    day = 1.0 - NIGHT_SHARE
    rest = 1.0 - night_share
    return np.array([MORNING_SHARE / day * rest, AFTERNOON_SHARE / day * rest,
                     EVENING_SHARE / day * rest, night_share])


def _is_peak_minute(m: int) -> bool:
    return 420 <= m < 540 or 960 <= m < 1080


def _schedule(spec: CohortSpec, plan: ParticipantPlan, rng: np.random.Generator, prof: BehaviorProfile):
    """Non-overlapping (start_s, duration_s, category, local_minute) tuples, sorted by start."""
    epoch_s = _local_epoch_ms(spec) // 1000
    probs = _category_probs(plan.night_share)
    mu = math.log(prof.duration_mean_s) - prof.duration_sigma ** 2 / 2
    placed: list[tuple[int, int]] = []
    trips = []
    for _ in range(plan.n_trips):
        cat = _CATEGORIES[int(rng.choice(4, p=probs))]
        for _attempt in range(200):
            day = int(rng.integers(0, spec.weeks * 7))
            lo, hi = _WINDOWS[cat]
            minute = int(rng.integers(lo, hi))
            start = epoch_s + day * 86400 + minute * 60 + int(rng.integers(0, 60))
            dur = int(np.clip(round(rng.lognormal(mu, prof.duration_sigma)), 60, 38658))
            if all(start + dur + TRIP_GUARD_S <= s or start >= s + d + TRIP_GUARD_S for s, d in placed):
                placed.append((start, dur))
                trips.append((start, dur, cat, minute % 1440))
                break
        else:
            raise RuntimeError(f"{plan.participant_id}: could not place trip without overlap")
    trips.sort()
    return trips


def _destination(lat0: float, lon0: float, bearing: float, dist_km: np.ndarray):
    phi1, lam1, theta = math.radians(lat0), math.radians(lon0), math.radians(bearing)
    delta = dist_km / EARTH_RADIUS_KM
    sin_phi2 = math.sin(phi1) * np.cos(delta) + math.cos(phi1) * np.sin(delta) * math.cos(theta)
    phi2 = np.arcsin(sin_phi2)
    lam2 = lam1 + np.arctan2(math.sin(theta) * np.sin(delta) * math.cos(phi1),
                             np.cos(delta) - math.sin(phi1) * sin_phi2)
    return np.degrees(phi2), (np.degrees(lam2) + 540.0) % 360.0 - 180.0


def _sample_times(duration_s: int, period_s: float) -> np.ndarray:
    t = np.arange(0.0, duration_s + 1e-9, period_s)
    ms = np.round(t * 1000).astype(np.int64)
    if ms[-1] != duration_s * 1000:
        ms = np.append(ms, duration_s * 1000)
    return ms


def _place_events(rng, n_samples: int, counts: dict[str, int]) -> list[tuple[str, int, int]]:
    """Non-touching excursions (kind, first_index, length) with one quiet sample either side."""
    taken = np.zeros(n_samples, dtype=bool)
    out = []
    for kind in _EVENT_KINDS:
        for _ in range(counts[kind]):
            length = int(rng.integers(1, 4))
            for _attempt in range(50):
                if n_samples - length - 1 < 1:
                    break
                i = int(rng.integers(1, n_samples - length))
                if not taken[i - 1 : i + length + 1].any():
                    taken[i - 1 : i + length + 1] = True
                    out.append((kind, i, length))
                    break
    return out


def simulate_trip(spec: CohortSpec, plan: ParticipantPlan, prof: BehaviorProfile,
                  rng: np.random.Generator, start_s: int, duration_s: int, category: str,
                  local_minute: int, render: bool = True) -> TripStreams:
    """One trip: ground truth always, sensor arrays only when ``render``.

    Truth draws come from ``rng``; sensor noise comes from a child generator
    seeded off it, so skipping the render leaves later trips unchanged.
    """
    start_ms = start_s * 1000
    trip_mean = _truncnorm(rng, prof.speed_mean_kmh, prof.speed_trip_sd, 8.0, 110.0)
    bearing = float(rng.uniform(0.0, 360.0))
    lat0, lon0 = plan.home[0] + rng.uniform(-0.05, 0.05), plan.home[1] + rng.uniform(-0.05, 0.05)
    while True:
        v = _truncnorm(rng, trip_mean, prof.speed_sample_sd, 0.5, 160.0, size=duration_s)
        path_km = np.concatenate(([0.0], np.cumsum(v / 3600.0)))
        # keep the ground truth clear of the urban/suburb boundary
        if abs(path_km[-1] - URBAN_LIMIT_KM) > 0.05:
            break

    def speed_at(ms):
        return v[np.minimum(ms // 1000, duration_s - 1)]

    gps_rel = _sample_times(duration_s, spec.gps_period_s)
    valid = rng.random(len(gps_rel)) >= spec.invalid_fix_rate
    valid[0] = valid[-1] = True

    # OBD: integer km/h, quarter-rpm resolution
    obd_rel = _sample_times(duration_s, spec.obd_period_s)
    obd_v = speed_at(obd_rel)
    obd_speed = np.clip(np.round(obd_v), 0, 255)
    rpm = prof.rpm_mean + RPM_PER_KMH * (obd_v - prof.speed_mean_kmh) + rng.normal(0.0, prof.rpm_sd, len(obd_rel))
    obd_rpm = np.round(np.clip(rpm, 600.0, 8000.0) * 4) / 4

    imu_rel = _sample_times(duration_s, 1.0 / spec.imu_hz)
    n = len(imu_rel)
    distance_km = float(path_km[-1])
    counts = {k: int(rng.poisson(plan.event_rate * distance_km / 100.0)) for k in _EVENT_KINDS}
    placed = _place_events(rng, n, counts)
    injected = {k: 0 for k in _EVENT_KINDS}
    for kind, _, _ in placed:
        injected[kind] += 1
    render_seed = int(rng.integers(0, 2**63))

    # speed observations as the pipeline sees them: OBD, else a valid GPS fix
    gps_only = ~np.isin(gps_rel, obd_rel) & valid
    gps_speed = np.zeros(len(gps_rel))
    shown = np.flatnonzero(valid if render else gps_only)
    gps_speed[shown] = [quantize_speed(x) for x in speed_at(gps_rel[shown]).tolist()]
    speed_obs = np.concatenate([obd_speed, gps_speed[gps_only]])
    local_date = (datetime(1970, 1, 1) + timedelta(seconds=start_s + round(spec.utc_offset_h * 3600))).date()
    truth = {
        "trip_id": make_trip_id(plan.participant_id, start_ms),
        "participant_id": plan.participant_id,
        "period_id": f"{local_date.year}Q{(local_date.month - 1) // 3 + 1}",
        "start_ms": start_ms,
        "start": ms_to_iso(start_ms),
        "duration_s": float(duration_s),
        "distance_km": distance_km,
        "time_of_day": category,
        "peak": _is_peak_minute(local_minute),
        "distance_class": "urban" if distance_km < URBAN_LIMIT_KM else "suburb",
        "mean_speed_kmh": float(speed_obs.mean()),
        "mean_rpm": float(obd_rpm.mean()),
        "events": injected,
    }
    if not render:
        return TripStreams(truth, *(np.empty(0),) * 11)

    gps_lat, gps_lon = _destination(lat0, lon0, bearing, path_km[gps_rel // 1000])  # quantized when rendered
    gps_lat[~valid] = 0.0
    gps_lon[~valid] = 0.0

    noise = _rng(render_seed)
    accel = np.column_stack([
        np.clip(noise.normal(0.0, 0.5, n), -QUIET_LIMIT, QUIET_LIMIT),
        np.clip(noise.normal(0.0, 0.4, n), -QUIET_LIMIT, QUIET_LIMIT),
        9.81 + noise.normal(0.0, 0.15, n),
    ])
    gyro = noise.normal(0.0, 1.5, (n, 3))
    for kind, i, length in placed:
        if kind == "harsh_acceleration":
            accel[i : i + length, 0] = noise.uniform(4.3, 7.5, length)
        elif kind == "hard_braking":
            accel[i : i + length, 0] = -noise.uniform(4.3, 8.5, length)
        else:
            accel[i : i + length, 1] = (1 if noise.random() < 0.5 else -1) * noise.uniform(4.3, 6.5, length)
    accel = np.round(accel, 4)
    gyro = np.round(gyro, 4)
    return TripStreams(truth, start_ms + gps_rel, gps_lat, gps_lon, gps_speed, valid,
                       start_ms + obd_rel, obd_rpm, obd_speed, start_ms + imu_rel, accel, gyro)


def simulate_participant(spec: CohortSpec, plan: ParticipantPlan, render: bool = True):
    """Yield the TripStreams of one participant in start order."""
    rng = _rng(spec.seed, plan.index, 1)
    prof = spec.mci if plan.demographics.mci else spec.nonmci
    for start_s, dur, cat, minute in _schedule(spec, plan, rng, prof):
        yield simulate_trip(spec, plan, prof, rng, start_s, dur, cat, minute, render)


# -- outputs -----------------------------------------------------------------


def stream_paths(out_dir: Path, participant_id: str) -> dict[str, Path]:
    base = out_dir / "streams" / participant_id
    return {
        "nmea": base.with_suffix(".nmea"),
        "obd": base.with_suffix(".obd"),
        "imu": Path(str(base) + ".imu.csv"),
    }


def _write_participant(args) -> list[dict[str, Any]]:
    spec, plan, out_dir = args
    paths = stream_paths(Path(out_dir), plan.participant_id)
    ledger = []
    with open(paths["nmea"], "w", encoding="ascii", newline="\n") as nmea, \
            open(paths["obd"], "w", encoding="ascii", newline="\n") as obd, \
            open(paths["imu"], "w", encoding="ascii", newline="\n") as imu:
        imu.write(IMU_HEADER + "\n")
        for trip in simulate_participant(spec, plan):
            ledger.append(trip.truth)
            nmea.write("\n".join(trip.nmea_lines()) + "\n")
            obd.write("\n".join(trip.obd_lines()) + "\n")
            imu.write("\n".join(trip.imu_lines()) + "\n")
    return ledger


def generate_cohort(spec: CohortSpec, out_dir: str | Path, jobs: int = 1) -> Path:
    """Write streams, ``ledger.json`` and ``manifest.json``; return the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "streams").mkdir(parents=True, exist_ok=True)
    plans = plan_cohort(spec)
    work = [(spec, p, str(out_dir)) for p in plans]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            ledgers = list(pool.map(_write_participant, work))
    else:
        ledgers = [_write_participant(w) for w in work]
    ledger = [t for part in ledgers for t in part]
    participants = []
    for p in plans:
        paths = stream_paths(out_dir, p.participant_id)
        participants.append({
            "participant_id": p.participant_id,
            "demographics": asdict(p.demographics),
            "n_trips": p.n_trips,
            "files": {k: str(v.relative_to(out_dir)) for k, v in paths.items()},
        })
    _dump(out_dir / "ledger.json", {"trips": ledger})
    manifest = out_dir / "manifest.json"
    _dump(manifest, {
        "format": "mcidrive.cohort/1",
        "spec": spec.to_dict(),
        "ledger": "ledger.json",
        "participants": participants,
    })
    return manifest


def _dump(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def cohort_ledger(spec: CohortSpec) -> tuple[list[ParticipantPlan], list[dict[str, Any]]]:
    """Ground truth only: simulate every trip without rendering any text."""
    plans = plan_cohort(spec)
    ledger = [trip.truth for p in plans for trip in simulate_participant(spec, p, render=False)]
    return plans, ledger


def records_from_ledger(ledger: list[dict[str, Any]], demographics: dict[str, Demographics]) -> list[DbiRecord]:
    """Build the expected feature rows straight from ground truth."""
    groups: dict[tuple[str, str], list[dict[str, Any]]] = {}
    for t in sorted(ledger, key=lambda t: (t["participant_id"], t["start_ms"])):
        groups.setdefault((t["participant_id"], t["period_id"]), []).append(t)
    records = []
    for (pid, period), trips in sorted(groups.items()):
        d = demographics[pid]
        total = len(trips)
        night = sum(t["time_of_day"] == "night" for t in trips)
        peak = sum(t["peak"] for t in trips)
        urban = sum(t["distance_class"] == "urban" for t in trips)
        for t in trips:
            ev = t["events"]
            records.append(DbiRecord(
                pid, period, t["trip_id"],
                d.age, d.gender, d.race, d.ethnicity, d.education, d.retired, d.bmi_obese,
                total, night, peak, t["duration_s"], t["distance_km"], t["mean_speed_kmh"], t["mean_rpm"],
                ev["harsh_acceleration"], ev["hard_braking"], ev["hard_turn"], urban, total - urban,
                d.mci,
            ))
    return records


def cohort_records(spec: CohortSpec) -> list[DbiRecord]:
    plans, ledger = cohort_ledger(spec)
    return records_from_ledger(ledger, {p.participant_id: p.demographics for p in plans})
