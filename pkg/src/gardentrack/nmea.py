"""Tolerant NMEA 0183 sentence and stream parser.

GGA sentences are the fix source (they carry fix quality, satellite count and
HDOP); RMC sentences only contribute the calendar date, which GGA lacks.
Anything else is counted and skipped.
"""

from __future__ import annotations

import datetime as dt
import enum
import math
import re
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal, InvalidOperation
from pathlib import Path
from typing import Iterable, Optional, Union

from .exceptions import (
    ChecksumMismatch,
    EmptyStream,
    MalformedCoordinate,
    MalformedSentence,
)

__all__ = [
    "FixQuality",
    "GnssFix",
    "ParseReport",
    "RawSentence",
    "checksum",
    "ddmm_to_degrees",
    "degrees_to_ddmm",
    "format_sentence",
    "parse_sentence",
    "parse_stream",
    "quantization_step",
    "read_nmea",
]

# GRS80; identical to WGS84 to well below the quantization step
GRS80_A = 6378137.0
GRS80_INV_F = 298.257222101

# least significant digit of ddmm.mmmm, in degrees
MINUTE_DIGIT_DEG = 1e-4 / 60.0

_CHECKSUM_RE = re.compile(r"^[0-9A-Fa-f]{2}$")
_DDMM_RE = {
    2: re.compile(r"^(\d{2})(\d{2}\.\d+)$"),
    3: re.compile(r"^(\d{3})(\d{2}\.\d+)$"),
}
_ROLLOVER = dt.timedelta(hours=12)


class FixQuality(enum.Enum):
    NO_FIX = "no_fix"
    SPS = "sps"
    DIFFERENTIAL = "differential"
    OTHER = "other"

    @classmethod
    def from_code(cls, code: int) -> "FixQuality":
        return {0: cls.NO_FIX, 1: cls.SPS, 2: cls.DIFFERENTIAL}.get(code, cls.OTHER)


@dataclass(frozen=True)
class RawSentence:
    talker: str
    type_code: str
    fields: tuple
    checksum_declared: Optional[int] = None
    line_number: int = 0

    @property
    def address(self) -> str:
        return self.talker + self.type_code


@dataclass(frozen=True)
class GnssFix:
    """One 1 Hz position epoch assembled from a GGA sentence.

    ``latitude``/``longitude`` are NaN for no-fix epochs that carry empty
    coordinate fields.
    """

    timestamp: dt.datetime
    latitude: float
    longitude: float
    fix_quality: FixQuality = FixQuality.SPS
    fix_quality_code: int = 1
    satellites_used: int = 0
    hdop: Optional[float] = None
    altitude_m: Optional[float] = None
    line_number: int = 0

    @property
    def excluded(self) -> bool:
        return self.fix_quality is FixQuality.NO_FIX


@dataclass
class ParseReport:
    total_lines: int = 0
    accepted: int = 0
    rejected_checksum: int = 0
    rejected_malformed: int = 0
    unsupported: int = 0
    first_timestamp: Optional[dt.datetime] = None
    last_timestamp: Optional[dt.datetime] = None
    date_source: str = "rmc"
    header_lines: list = field(default_factory=list)

    def is_consistent(self) -> bool:
        return self.total_lines == (
            self.accepted
            + self.rejected_checksum
            + self.rejected_malformed
            + self.unsupported
        )

    def as_dict(self) -> dict:
        ts = lambda t: t.isoformat() if t is not None else None  # noqa: E731
        return {
            "total_lines": self.total_lines,
            "accepted": self.accepted,
            "rejected_checksum": self.rejected_checksum,
            "rejected_malformed": self.rejected_malformed,
            "unsupported": self.unsupported,
            "first_timestamp": ts(self.first_timestamp),
            "last_timestamp": ts(self.last_timestamp),
            "date_source": self.date_source,
        }


def checksum(body: str) -> int:
    """XOR of every byte of ``body`` (the text between ``$`` and ``*``)."""
    value = 0
    for byte in body.encode("ascii"):
        value ^= byte
    return value


def format_sentence(body: str) -> str:
    """Wrap a sentence body as ``$body*hh``."""
    return f"${body}*{checksum(body):02X}"


def parse_sentence(line: Union[str, bytes], line_number: int = 0) -> RawSentence:
    """Split one NMEA line into address, fields and checksum.

    No semantic interpretation of the fields happens here.

    Raises
    ------
    MalformedSentence
        Non-ASCII content, missing ``$`` or an unparseable checksum field.
    ChecksumMismatch
        A declared checksum disagrees with the computed one.
    """
    if isinstance(line, bytes):
        try:
            line = line.decode("ascii")
        except UnicodeDecodeError:
            raise MalformedSentence(f"line {line_number}: non-ASCII bytes") from None
    line = line.rstrip("\r\n")
    if not line.isascii():
        raise MalformedSentence(f"line {line_number}: non-ASCII characters")
    if not line.startswith("$"):
        raise MalformedSentence(f"line {line_number}: missing leading '$'")

    body = line[1:]
    declared = None
    if "*" in body:
        body, _, tail = body.partition("*")
        tail = tail.strip()
        if not _CHECKSUM_RE.match(tail):
            raise MalformedSentence(f"line {line_number}: bad checksum field {tail!r}")
        declared = int(tail, 16)
        computed = checksum(body)
        if computed != declared:
            raise ChecksumMismatch(computed, declared, line_number)

    parts = body.split(",")
    address = parts[0]
    if len(address) == 5 and address.isalnum():
        talker, type_code = address[:2], address[2:]
    elif len(address) >= 2 and address[0] == "P" and address.isalnum():
        talker, type_code = "P", address[1:]
    else:
        raise MalformedSentence(f"line {line_number}: bad address field {address!r}")
    return RawSentence(talker, type_code, tuple(parts[1:]), declared, line_number)


def ddmm_to_degrees(value: str, hemisphere: str) -> float:
    """Convert ``ddmm.mmmm`` (latitude) or ``dddmm.mmmm`` (longitude) to degrees.

    >>> round(ddmm_to_degrees("4807.038", "N"), 6)
    48.1173
    """
    hemisphere = hemisphere.strip().upper()
    if hemisphere in ("N", "S"):
        width, limit = 2, 90
    elif hemisphere in ("E", "W"):
        width, limit = 3, 180
    else:
        raise MalformedCoordinate(f"bad hemisphere {hemisphere!r}")
    m = _DDMM_RE[width].match(value.strip())
    if m is None:
        raise MalformedCoordinate(f"bad coordinate field {value!r}")
    try:
        degrees = Decimal(m.group(1))
        minutes = Decimal(m.group(2))
    except InvalidOperation:  # pragma: no cover - regex already filters
        raise MalformedCoordinate(f"bad coordinate field {value!r}") from None
    if minutes >= 60:
        raise MalformedCoordinate(f"minutes >= 60 in {value!r}")
    result = degrees + minutes / Decimal(60)
    if result > limit:
        raise MalformedCoordinate(f"{value!r} exceeds {limit} degrees")
    if hemisphere in ("S", "W"):
        result = -result
    return float(result)


def degrees_to_ddmm(value: float, axis: str, digits: int = 4) -> tuple:
    """Inverse of :func:`ddmm_to_degrees`; returns ``(field, hemisphere)``.

    ``axis`` is ``"lat"`` or ``"lon"``. Minutes are rounded half-even to
    ``digits`` fractional places, so no precision beyond the format's grid is
    ever written.
    """
    if axis == "lat":
        width, hemi = 2, ("N", "S")
    elif axis == "lon":
        width, hemi = 3, ("E", "W")
    else:
        raise ValueError(f"axis must be 'lat' or 'lon', got {axis!r}")
    if not math.isfinite(value):
        raise MalformedCoordinate(f"non-finite coordinate {value!r}")
    hemisphere = hemi[1] if value < 0 else hemi[0]
    total = abs(Decimal(repr(float(value))))
    deg = int(total)
    quantum = Decimal(1).scaleb(-digits)
    minutes = ((total - deg) * 60).quantize(quantum, rounding=ROUND_HALF_EVEN)
    if minutes >= 60:
        deg += 1
        minutes -= 60
    text = f"{deg:0{width}d}{minutes:0{3 + digits}.{digits}f}"
    return text, hemisphere


def quantization_step(
    latitude: float, a: float = GRS80_A, inv_f: float = GRS80_INV_F
) -> tuple:
    """Ground size of one unit in the last ddmm.mmmm digit at ``latitude``.

    Returns ``(lat_step_m, lon_step_m)`` from the ellipsoidal meridian and
    prime-vertical radii of curvature.
    """
    f = 1.0 / inv_f
    e2 = f * (2.0 - f)
    phi = math.radians(latitude)
    w = math.sqrt(1.0 - e2 * math.sin(phi) ** 2)
    meridian_radius = a * (1.0 - e2) / w**3
    normal_radius = a / w
    step_rad = math.radians(MINUTE_DIGIT_DEG)
    return meridian_radius * step_rad, normal_radius * math.cos(phi) * step_rad


# -- stream assembly ---------------------------------------------------------


def _parse_time_of_day(text: str) -> dt.timedelta:
    m = re.match(r"^(\d{2})(\d{2})(\d{2})(\.\d+)?$", text.strip())
    if m is None:
        raise MalformedSentence(f"bad time field {text!r}")
    h, mi, s = (int(g) for g in m.groups()[:3])
    if h > 23 or mi > 59 or s > 60:
        raise MalformedSentence(f"bad time field {text!r}")
    # fractional seconds are truncated to the 1 s epoch grid
    return dt.timedelta(hours=h, minutes=mi, seconds=min(s, 59))


def _parse_date(text: str) -> dt.date:
    m = re.match(r"^(\d{2})(\d{2})(\d{2})$", text.strip())
    if m is None:
        raise MalformedSentence(f"bad date field {text!r}")
    d, mo, yy = (int(g) for g in m.groups())
    year = 2000 + yy if yy < 80 else 1900 + yy
    try:
        return dt.date(year, mo, d)
    except ValueError:
        raise MalformedSentence(f"bad date field {text!r}") from None


def _optional_float(text: str) -> Optional[float]:
    text = text.strip()
    if not text:
        return None
    try:
        return float(text)
    except ValueError:
        raise MalformedSentence(f"bad numeric field {text!r}") from None


@dataclass
class _GgaEpoch:
    tod: dt.timedelta
    latitude: float
    longitude: float
    code: int
    satellites: int
    hdop: Optional[float]
    altitude: Optional[float]
    line_number: int


def _decode_gga(s: RawSentence) -> _GgaEpoch:
    f = s.fields
    if len(f) < 14:
        raise MalformedSentence(f"line {s.line_number}: GGA has {len(f)} fields")
    tod = _parse_time_of_day(f[0])
    try:
        code = int(f[5]) if f[5].strip() else 0
    except ValueError:
        raise MalformedSentence(f"line {s.line_number}: bad fix quality") from None
    if not f[1].strip() and not f[3].strip():
        if code != 0:
            raise MalformedSentence(f"line {s.line_number}: fix without position")
        lat = lon = math.nan
    else:
        try:
            lat = ddmm_to_degrees(f[1], f[2])
            lon = ddmm_to_degrees(f[3], f[4])
        except MalformedCoordinate as exc:
            raise MalformedSentence(f"line {s.line_number}: {exc}") from None
        if f[2].strip().upper() not in "NS" or f[4].strip().upper() not in "EW":
            raise MalformedSentence(f"line {s.line_number}: swapped hemispheres")
    try:
        sats = int(f[6]) if f[6].strip() else 0
    except ValueError:
        raise MalformedSentence(f"line {s.line_number}: bad satellite count") from None
    return _GgaEpoch(
        tod, lat, lon, code, sats, _optional_float(f[7]), _optional_float(f[8]),
        s.line_number,
    )


def _decode_rmc_date(s: RawSentence) -> dt.date:
    if len(s.fields) < 11:
        raise MalformedSentence(f"line {s.line_number}: RMC has {len(s.fields)} fields")
    _parse_time_of_day(s.fields[0])
    return _parse_date(s.fields[8])


def _iter_lines(source):
    for item in source:
        if item.strip():
            yield item


def parse_stream(
    source: Iterable[Union[str, bytes]],
    default_date: Optional[dt.date] = None,
) -> tuple:
    """Assemble GNSS fixes from a sequence of NMEA lines.

    Malformed, corrupt and unsupported lines are counted in the returned
    :class:`ParseReport` and never abort parsing. Blank lines are ignored and
    not counted. Lines that do not start with ``$`` are kept in
    ``report.header_lines`` for metadata extraction and counted as
    unsupported.

    GGA epochs seen before the first RMC date take that date; if no RMC is
    present at all, ``default_date`` (or 1970-01-01) is used and
    ``report.date_source`` says so. A time of day that falls more than 12 h
    behind the previous epoch is a midnight rollover. Epochs that repeat or
    go backwards in time are counted as unsupported.

    Returns
    -------
    fixes : list of GnssFix
    report : ParseReport

    Raises
    ------
    EmptyStream
        No GGA fix was accepted. The partial report is attached.
    """
    report = ParseReport()
    fixes: list = []
    pending: list = []
    current_date: Optional[dt.date] = None
    last_ts: Optional[dt.datetime] = None

    def resolve(epoch: _GgaEpoch) -> None:
        nonlocal current_date, last_ts
        ts = dt.datetime.combine(current_date, dt.time(), tzinfo=dt.timezone.utc) + epoch.tod
        if last_ts is not None and ts < last_ts - _ROLLOVER:
            ts += dt.timedelta(days=1)
            current_date = current_date + dt.timedelta(days=1)
        if last_ts is not None and ts <= last_ts:
            report.unsupported += 1
            return
        report.accepted += 1
        last_ts = ts
        fixes.append(
            GnssFix(
                timestamp=ts,
                latitude=epoch.latitude,
                longitude=epoch.longitude,
                fix_quality=FixQuality.from_code(epoch.code),
                fix_quality_code=epoch.code,
                satellites_used=epoch.satellites,
                hdop=epoch.hdop,
                altitude_m=epoch.altitude,
                line_number=epoch.line_number,
            )
        )

    for number, line in enumerate(_iter_lines(source), start=1):
        report.total_lines += 1
        text = line.decode("ascii", errors="replace") if isinstance(line, bytes) else line
        if not text.lstrip().startswith("$") and text.isascii():
            report.unsupported += 1
            report.header_lines.append(text.rstrip("\r\n"))
            continue
        try:
            sentence = parse_sentence(line.strip(), number)
        except ChecksumMismatch:
            report.rejected_checksum += 1
            continue
        except MalformedSentence:
            report.rejected_malformed += 1
            continue

        try:
            if sentence.type_code == "GGA":
                epoch = _decode_gga(sentence)
                if current_date is None:
                    pending.append(epoch)
                else:
                    resolve(epoch)
            elif sentence.type_code == "RMC":
                date = _decode_rmc_date(sentence)
                report.accepted += 1
                if current_date is None:
                    current_date = date
                    for epoch in pending:
                        resolve(epoch)
                    pending.clear()
                elif date > current_date:
                    current_date = date
            else:
                report.unsupported += 1
        except MalformedSentence:
            report.rejected_malformed += 1

    if pending:
        current_date = default_date or dt.date(1970, 1, 1)
        report.date_source = "default"
        for epoch in pending:
            resolve(epoch)

    if fixes:
        report.first_timestamp = fixes[0].timestamp
        report.last_timestamp = fixes[-1].timestamp
    else:
        raise EmptyStream(report)
    return fixes, report


def read_nmea(path: Union[str, Path], default_date: Optional[dt.date] = None) -> tuple:
    """Parse an NMEA file from disk (LF or CRLF line endings)."""
    with open(path, "rb") as fh:
        return parse_stream(fh.read().splitlines(), default_date=default_date)
