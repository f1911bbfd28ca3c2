import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcidrive.parsers import (
    IMU_HEADER,
    ChecksumError,
    FieldError,
    FrameError,
    UnsupportedPid,
    UnsupportedSentence,
    iso_to_ms,
    ms_to_iso,
    nmea_checksum,
    parse_imu_line,
    parse_nmea,
    parse_obd,
    read_imu_file,
    read_nmea_lines,
    read_obd_lines,
)
from mcidrive.synth import (
    format_imu,
    format_obd_rpm,
    format_obd_speed,
    format_rmc,
    nmea_sentence,
    quantize_position,
    quantize_speed,
)

MUNICH = "$GPRMC,123519,A,4807.038,N,01131.000,E,022.4,084.4,230394,003.1,W*6A"


def xor_oracle(body: str) -> int:
    # independent of the library: numpy reduction over the raw bytes
    return int(np.bitwise_xor.reduce(np.frombuffer(body.encode("ascii"), dtype=np.uint8)))


def with_checksum(body: str) -> str:
    return f"${body}*{xor_oracle(body):02X}"


# -- NMEA ---------------------------------------------------------------------


def test_rmc_reference_sentence():
    fix = parse_nmea(MUNICH)
    assert fix.valid
    assert fix.latitude == pytest.approx(48 + 7.038 / 60, abs=1e-12)
    assert fix.longitude == pytest.approx(11 + 31.0 / 60, abs=1e-12)
    assert fix.speed_kmh == pytest.approx(22.4 * 1.852, abs=1e-12)
    assert fix.timestamp_ms == iso_to_ms("1994-03-23T12:35:19Z")


def test_reference_checksum_matches_oracle():
    body = MUNICH[1 : MUNICH.index("*")]
    assert nmea_checksum(body) == xor_oracle(body) == 0x6A


def test_altered_checksum_rejected():
    with pytest.raises(ChecksumError):
        parse_nmea(MUNICH[:-1] + "B")


def test_invalid_status_zero_speed():
    fix = parse_nmea(with_checksum("GPRMC,000000,V,0000.000,N,00000.000,E,000.0,000.0,010100,,"))
    assert not fix.valid
    assert fix.speed_kmh == 0.0


def test_southern_western_hemispheres_are_negative():
    fix = parse_nmea(with_checksum("GPRMC,010203.500,A,3321.5000,S,07039.0000,W,1.000,,150624,,"))
    assert fix.latitude == pytest.approx(-(33 + 21.5 / 60))
    assert fix.longitude == pytest.approx(-(70 + 39.0 / 60))
    assert fix.timestamp_ms == iso_to_ms("2024-06-15T01:02:03.500Z")


def test_checksum_is_optional():
    assert parse_nmea(MUNICH[: MUNICH.index("*")]) == parse_nmea(MUNICH)


def test_gga_takes_date_from_caller():
    from datetime import date

    line = with_checksum("GPGGA,123519,4807.038,N,01131.000,E,1,08,0.9,545.4,M,46.9,M,,")
    fix = parse_nmea(line, date(2024, 1, 5))
    assert fix.valid and fix.speed_kmh is None
    assert fix.timestamp_ms == iso_to_ms("2024-01-05T12:35:19Z")
    no_fix = parse_nmea(with_checksum("GPGGA,123519,,,,,0,00,,,M,,M,,"))
    assert not no_fix.valid


def test_unsupported_sentence():
    with pytest.raises(UnsupportedSentence):
        parse_nmea(with_checksum("GPGSV,3,1,11,03,03,111,00"))


@pytest.mark.parametrize(
    "body, column",
    [
        ("GPRMC,123519,A,48x7.038,N,01131.000,E,022.4,084.4,230394,,", 3),
        ("GPRMC,123519,A,4807.038,Q,01131.000,E,022.4,084.4,230394,,", 4),
        ("GPRMC,123519,A,4807.038,N,01131.000,E,fast,084.4,230394,,", 7),
        ("GPRMC,123519,A,4807.038,N,01131.000,E,022.4,084.4,320394,,", 9),
        ("GPRMC,256019,A,4807.038,N,01131.000,E,022.4,084.4,230394,,", 1),
        ("GPRMC,123519,X,4807.038,N,01131.000,E,022.4,084.4,230394,,", 2),
    ],
)
def test_field_errors_carry_column(body, column):
    with pytest.raises(FieldError) as err:
        parse_nmea(with_checksum(body))
    assert err.value.column == column


@settings(max_examples=300, deadline=None)
@given(
    lat=st.floats(-89.9, 89.9),
    lon=st.floats(-179.9, 179.9),
    speed=st.floats(0.0, 200.0),
    pos=st.integers(0, 10_000),
    replacement=st.characters(min_codepoint=32, max_codepoint=126),
)
def test_single_character_corruption_is_caught(lat, lon, speed, pos, replacement):
    line = format_rmc(1_704_463_402_000, lat, lon, speed, True)
    body = line[1 : line.index("*")]
    i = pos % len(body)
    if body[i] == replacement:
        return
    corrupted = "$" + body[:i] + replacement + body[i + 1 :] + line[line.index("*") :]
    with pytest.raises((ChecksumError, FieldError)):
        parse_nmea(corrupted)


def test_corruption_acceptance_rate_below_one_in_sixteen():
    rng = np.random.default_rng(11)
    line = format_rmc(1_704_463_402_000, 26.37, -80.1, 42.0, True)
    star = line.index("*")
    body = line[1:star]
    accepted = 0
    trials = 2000
    for _ in range(trials):
        i = int(rng.integers(len(body)))
        ch = chr(int(rng.integers(32, 127)))
        if ch == body[i]:
            ch = chr(ord(ch) ^ 1)
        mutated = body[:i] + ch + body[i + 1 :]
        if nmea_checksum(mutated) == int(line[star + 1 :], 16):
            accepted += 1
    assert accepted / trials < 1 / 16


def test_reader_counts_and_skips():
    stats = Counter()
    lines = [
        MUNICH,
        MUNICH[:-1] + "B",
        with_checksum("GPGSV,3,1,11"),
        with_checksum("GPRMC,123519,A,bad,N,01131.000,E,022.4,,230394,,"),
        "",
        with_checksum("GPGGA,123520,4807.038,N,01131.000,E,1,08,0.9,545.4,M,46.9,M,,"),
    ]
    fixes = read_nmea_lines(lines, stats)
    assert len(fixes) == 2
    assert stats["nmea_lines"] == 5
    assert stats["nmea_checksum_errors"] == 1
    assert stats["nmea_unsupported"] == 1
    assert stats["nmea_field_errors"] == 1
    # GGA inherits the preceding RMC date
    assert fixes[1].timestamp_ms - fixes[0].timestamp_ms == 1000


def test_non_ascii_sentence_is_a_field_error():
    with pytest.raises(FieldError):
        parse_nmea("$GPRMC,12351é,A*00")


# -- OBD ----------------------------------------------------------------------


def test_obd_rpm_example():
    r = parse_obd("2024-01-05T14:03:22.100Z 41 0C 1A F8")
    assert (r.pid, r.rpm, r.speed_kmh) == (0x0C, (256 * 26 + 248) / 4, None)
    assert r.timestamp_ms == 1_704_463_402_100


def test_obd_speed_example():
    r = parse_obd("2024-01-05T14:03:22.600Z 41 0D 3C")
    assert (r.pid, r.speed_kmh, r.rpm) == (0x0D, 60.0, None)


def test_obd_zero_rpm_and_max():
    assert parse_obd("2024-01-05T14:03:22.600Z 41 0C 00 00").rpm == 0.0
    assert parse_obd("2024-01-05T14:03:22.600Z 41 0C FF FF").rpm == 16383.75


@pytest.mark.parametrize(
    "frame, error",
    [
        ("2024-01-05T14:03:22.600Z 42 0D 3C", FrameError),
        ("2024-01-05T14:03:22.600Z 41 0D 3C 00", FrameError),
        ("2024-01-05T14:03:22.600Z 41 0C 1A", FrameError),
        ("2024-01-05T14:03:22.600Z 41 0D ZZ", FrameError),
        ("2024-01-05T14:03:22.600Z 41 0D 3", FrameError),
        ("yesterday 41 0D 3C", FrameError),
        ("2024-01-05T14:03:22.600Z", FrameError),
        ("2024-01-05T14:03:22.600Z 41 05 7B", UnsupportedPid),
    ],
)
def test_obd_errors(frame, error):
    with pytest.raises(error):
        parse_obd(frame)


def test_obd_reader_counts():
    stats = Counter()
    out = read_obd_lines(
        ["2024-01-05T14:03:22.600Z 41 0D 3C", "2024-01-05T14:03:22.600Z 41 05 7B", "junk"], stats
    )
    assert len(out) == 1
    assert stats == Counter(obd_lines=3, obd_unsupported=1, obd_frame_errors=1)


@given(st.integers(0, 4_102_444_800_000))
def test_iso_timestamp_round_trip(ms):
    assert iso_to_ms(ms_to_iso(ms)) == ms


def test_iso_accepts_offset_and_naive_forms():
    assert iso_to_ms("2024-01-05T14:03:22+00:00") == iso_to_ms("2024-01-05T14:03:22.000Z")
    assert iso_to_ms("2024-01-05T14:03:22") == iso_to_ms("2024-01-05T14:03:22.000Z")


# -- IMU ----------------------------------------------------------------------


def test_imu_example():
    r = parse_imu_line("1704463402100,0.1,-0.2,9.81,0.0,0.0,0.5")
    assert r.timestamp_ms == 1704463402100
    assert r.accel == (0.1, -0.2, 9.81)
    assert r.gyro == (0.0, 0.0, 0.5)


def test_imu_column_count():
    with pytest.raises(FieldError) as err:
        parse_imu_line("1704463402100,0.1,-0.2")
    assert err.value.column is None


def test_imu_non_finite_column():
    with pytest.raises(FieldError) as err:
        parse_imu_line("1704463402100,nan,0,0,0,0,0")
    assert err.value.column == 2


def test_imu_file_fast_and_fallback_paths_agree(tmp_path):
    rows = [format_imu(1_704_463_402_000 + 100 * i, (0.1 * i, -0.2, 9.81), (0.0, 0.0, 0.5)) for i in range(50)]
    good = tmp_path / "good.imu.csv"
    good.write_text(IMU_HEADER + "\n" + "\n".join(rows) + "\n")
    bad = tmp_path / "bad.imu.csv"
    bad.write_text(IMU_HEADER + "\n" + "\n".join(rows[:10] + ["1,2,3"] + rows[10:]) + "\n")
    s1, s2 = Counter(), Counter()
    a, b = read_imu_file(good, s1), read_imu_file(bad, s2)
    assert np.array_equal(a.t_ms, b.t_ms)
    assert np.array_equal(a.accel, b.accel) and np.array_equal(a.gyro, b.gyro)
    assert s1["imu_lines"] == 50 and s2["imu_lines"] == 51 and s2["imu_field_errors"] == 1


def test_imu_file_header_checked(tmp_path):
    path = tmp_path / "x.imu.csv"
    path.write_text("t,ax\n1,2\n")
    with pytest.raises(FieldError):
        read_imu_file(path)


# -- round trip through the synth serializers -----------------------------------


@settings(max_examples=300, deadline=None)
# two-digit RMC years cover 1980-2079
@given(
    t=st.integers(315_532_800_000, 3_471_292_799_999),
    lat=st.floats(-89.99, 89.99),
    lon=st.floats(-179.99, 179.99),
    speed=st.floats(0.0, 250.0),
)
def test_rmc_round_trip(t, lat, lon, speed):
    qlat, qlon = quantize_position(lat, lon)
    fix = parse_nmea(format_rmc(t, qlat, qlon, speed, True))
    assert fix.timestamp_ms == t
    assert math.isclose(fix.latitude, qlat, rel_tol=1e-9, abs_tol=1e-12)
    assert math.isclose(fix.longitude, qlon, rel_tol=1e-9, abs_tol=1e-12)
    assert math.isclose(fix.speed_kmh, quantize_speed(speed), rel_tol=1e-9, abs_tol=1e-12)


@given(t=st.integers(0, 4_102_444_800_000), code=st.integers(0, 0xFFFF), speed=st.integers(0, 255))
def test_obd_round_trip(t, code, speed):
    rpm = code / 4.0
    assert parse_obd(format_obd_rpm(t, rpm)) == parse_obd(format_obd_rpm(t, rpm))
    got = parse_obd(format_obd_rpm(t, rpm))
    assert (got.timestamp_ms, got.rpm) == (t, rpm)
    got = parse_obd(format_obd_speed(t, float(speed)))
    assert (got.timestamp_ms, got.speed_kmh) == (t, float(speed))


@given(
    t=st.integers(0, 4_102_444_800_000),
    values=st.lists(st.integers(-200_000, 200_000), min_size=6, max_size=6),
)
def test_imu_round_trip(t, values):
    v = [x / 10_000 for x in values]
    r = parse_imu_line(format_imu(t, v[:3], v[3:]))
    assert r.timestamp_ms == t
    assert list(r.accel) + list(r.gyro) == pytest.approx(v, rel=1e-9, abs=1e-12)


def test_nmea_sentence_wraps_body():
    assert nmea_sentence(MUNICH[1:-3]) == MUNICH


def test_parsers_are_pure():
    lines = [MUNICH, with_checksum("GPGGA,123519,4807.038,N,01131.000,E,1,08,0.9,545.4,M,46.9,M,,")]
    first = [parse_nmea(line) for line in lines]
    second = [parse_nmea(line) for line in reversed(lines)][::-1]
    assert first == second
