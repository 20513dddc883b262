"""Canonical alert-event schema, CSV parsing/serialization and session ids."""

from __future__ import annotations

import csv
import datetime as dt
import enum
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Mapping

CANONICAL_COLUMNS = ("deviceId", "alarmType", "recordedAt", "latitude", "longitude", "speed")

# Weather attributes kept from the enrichment source (numeric only).
WEATHER_FIELDS = (
    "tempC",
    "humidity",
    "precipMM",
    "visibility",
    "windspeedKmph",
    "pressure",
    "cloudcover",
    "DewPointC",
    "sunHour",
    "uvIndex",
    "winddirDegree",
)

ENRICHED_COLUMNS = CANONICAL_COLUMNS + ("altitude", "roadName") + WEATHER_FIELDS


class DataError(Exception):
    pass


class MissingColumn(DataError):
    def __init__(self, name: str):
        super().__init__(f"missing column: {name}")
        self.name = name


class EmptyFile(DataError):
    pass


class MissingRoadName(DataError):
    pass


@dataclass(frozen=True)
class RowParseError:
    line: int
    field: str
    raw: str
    message: str = ""

    def __str__(self) -> str:
        return f"line {self.line}: bad {self.field}={self.raw!r} ({self.message})"


class AlarmType(str, enum.Enum):
    HMW = "HMW"
    PCW = "PCW"
    FCW = "FCW"
    STOPPAGE = "STOPPAGE"
    HB = "HB"

    @classmethod
    def parse(cls, raw: str) -> "AlarmType":
        try:
            return cls(raw.strip().upper())
        except ValueError:
            raise ValueError(f"unknown alarm type {raw!r}") from None


COLLISION_ALARMS = frozenset({AlarmType.HMW, AlarmType.PCW, AlarmType.FCW})


@dataclass(frozen=True)
class WeatherRecord:
    tempC: float
    humidity: float
    precipMM: float
    visibility: float
    windspeedKmph: float
    pressure: float
    cloudcover: float
    DewPointC: float
    sunHour: float
    uvIndex: float
    winddirDegree: float

    def __post_init__(self):
        for name in WEATHER_FIELDS:
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v}")
        if not 0 <= self.humidity <= 100:
            raise ValueError(f"humidity out of range: {self.humidity}")
        if not 0 <= self.cloudcover <= 100:
            raise ValueError(f"cloudcover out of range: {self.cloudcover}")
        if self.precipMM < 0:
            raise ValueError(f"precipMM negative: {self.precipMM}")
        if self.visibility < 0:
            raise ValueError(f"visibility negative: {self.visibility}")

    @classmethod
    def from_mapping(cls, data: Mapping[str, object]) -> "WeatherRecord":
        """Build from an API-style record; unknown keys are ignored."""
        return cls(**{name: float(data[name]) for name in WEATHER_FIELDS})

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class AlertEvent:
    device_id: str
    alarm_type: AlarmType
    timestamp: dt.datetime
    latitude: float
    longitude: float
    speed: float
    altitude: float | None = None
    road_name: str | None = None
    weather: WeatherRecord | None = None
    # position in the source file; used to break timestamp ties
    line: int = field(default=0, compare=False)

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"latitude out of range: {self.latitude}")
        if not -180.0 <= self.longitude <= 180.0:
            raise ValueError(f"longitude out of range: {self.longitude}")
        if not (self.speed >= 0.0 and math.isfinite(self.speed)):
            raise ValueError(f"speed must be finite and >= 0: {self.speed}")
        if self.timestamp.tzinfo is None:
            raise ValueError("timestamp must be timezone-aware")

    @property
    def hour(self) -> int:
        return self.timestamp.hour

    @property
    def date(self) -> dt.date:
        return self.timestamp.date()

    @property
    def is_enriched(self) -> bool:
        return self.altitude is not None and self.road_name is not None and self.weather is not None

    def with_enrichment(self, altitude: float, road_name: str, weather: WeatherRecord) -> "AlertEvent":
        return replace(self, altitude=altitude, road_name=sanitize_road_name(road_name), weather=weather)


@dataclass(frozen=True, order=True)
class SessionId:
    device_id: str
    road_name: str
    date: dt.date

    def __str__(self) -> str:
        return f"{self.device_id}|{self.road_name}|{self.date.isoformat()}"

    @classmethod
    def parse(cls, text: str) -> "SessionId":
        parts = text.split("|")
        if len(parts) != 3:
            raise ValueError(f"malformed session id: {text!r}")
        return cls(parts[0], parts[1], dt.date.fromisoformat(parts[2]))


def sanitize_road_name(name: str) -> str:
    return name.replace("|", "/").strip()


def make_session_id(event: AlertEvent) -> SessionId:
    if not event.road_name:
        raise MissingRoadName(f"event at line {event.line} has no road name")
    return SessionId(event.device_id, event.road_name, event.date)


def parse_timestamp(raw: str, utc_offset_hours: float = 0.0) -> dt.datetime:
    text = raw.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = dt.datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=dt.timezone(dt.timedelta(hours=utc_offset_hours)))
    return ts.astimezone(dt.timezone.utc)


def format_timestamp(ts: dt.datetime) -> str:
    ts = ts.astimezone(dt.timezone.utc)
    fmt = "%Y-%m-%dT%H:%M:%S.%fZ" if ts.microsecond else "%Y-%m-%dT%H:%M:%SZ"
    return ts.strftime(fmt)


def format_float(x: float) -> str:
    # repr round-trips bit-exactly through float()
    return repr(float(x))


@dataclass
class ParseResult:
    events: list[AlertEvent]
    errors: list[RowParseError]

    def __iter__(self):
        return iter((self.events, self.errors))


def _resolve_columns(header: list[str], schema: Mapping[str, str] | None, wanted: Iterable[str]) -> dict[str, str]:
    schema = dict(schema or {})
    cols = {}
    for name in wanted:
        col = schema.get(name, name)
        if col not in header:
            raise MissingColumn(name)
        cols[name] = col
    return cols


def parse_alert_csv(
    path: str | Path,
    schema: Mapping[str, str] | None = None,
    utc_offset_hours: float = 0.0,
) -> ParseResult:
    """Parse a raw alert CSV.

    ``schema`` maps canonical column names to the file's column names. Rows
    that fail validation become :class:`RowParseError` entries; the remaining
    rows are returned in file order. If the file also carries enrichment
    columns (altitude, roadName and the weather fields) they are parsed too.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyFile(str(path)) from None
        header = [h.strip() for h in header]
        cols = _resolve_columns(header, schema, CANONICAL_COLUMNS)
        enriched = all(c in header for c in ("altitude", "roadName") + WEATHER_FIELDS)
        index = {h: i for i, h in enumerate(header)}

        events: list[AlertEvent] = []
        errors: list[RowParseError] = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            event, err = _parse_row(row, line_no, cols, index, enriched, utc_offset_hours)
            if err is not None:
                errors.append(err)
            else:
                events.append(event)
    return ParseResult(events, errors)


def _parse_row(row, line_no, cols, index, enriched, utc_offset_hours):
    def raw(column: str) -> str:
        i = index[column]
        return row[i] if i < len(row) else ""

    def number(text: str) -> float:
        x = float(text)
        if not math.isfinite(x):
            raise ValueError("not finite")
        return x

    # (event field, source column, converter)
    specs = [
        ("device_id", cols["deviceId"], _nonempty),
        ("alarm_type", cols["alarmType"], AlarmType.parse),
        ("timestamp", cols["recordedAt"], lambda t: parse_timestamp(t, utc_offset_hours)),
        ("latitude", cols["latitude"], number),
        ("longitude", cols["longitude"], number),
        ("speed", cols["speed"], number),
    ]
    if enriched:
        specs += [("altitude", "altitude", number), ("road_name", "roadName", _nonempty)]
        specs += [(w, w, number) for w in WEATHER_FIELDS]

    values = {}
    for name, column, convert in specs:
        text = raw(column)
        try:
            values[name] = convert(text)
        except ValueError as exc:
            return None, RowParseError(line_no, name, text, str(exc))
    if enriched:
        try:
            values["weather"] = WeatherRecord(**{w: values.pop(w) for w in WEATHER_FIELDS})
        except ValueError as exc:
            return None, RowParseError(line_no, "weather", "", str(exc))
    try:
        return AlertEvent(line=line_no, **values), None
    except ValueError as exc:
        bad = next((n for n in ("latitude", "longitude", "speed") if n in str(exc)), "row")
        return None, RowParseError(line_no, bad, raw(cols[bad]) if bad in cols else "", str(exc))


def _nonempty(text: str) -> str:
    text = text.strip()
    if not text:
        raise ValueError("empty value")
    return text


def event_row(event: AlertEvent) -> list[str]:
    row = [
        event.device_id,
        event.alarm_type.value,
        format_timestamp(event.timestamp),
        format_float(event.latitude),
        format_float(event.longitude),
        format_float(event.speed),
    ]
    if event.is_enriched:
        row += [format_float(event.altitude), event.road_name]
        row += [format_float(getattr(event.weather, w)) for w in WEATHER_FIELDS]
    return row


def write_alert_csv(
    path: str | Path,
    events: Iterable[AlertEvent],
    extra_columns: Mapping[str, list] | None = None,
) -> None:
    """Write events in canonical form; enriched columns are emitted when every event is enriched."""
    events = list(events)
    enriched = bool(events) and all(e.is_enriched for e in events)
    header = list(ENRICHED_COLUMNS if enriched else CANONICAL_COLUMNS)
    extra_columns = dict(extra_columns or {})
    for name, values in extra_columns.items():
        if len(values) != len(events):
            raise ValueError(f"column {name} has {len(values)} values for {len(events)} events")
        header.append(name)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i, e in enumerate(events):
            row = event_row(e)
            if not enriched:
                row = row[: len(CANONICAL_COLUMNS)]
            row += [_fmt_cell(extra_columns[name][i]) for name in extra_columns]
            writer.writerow(row)


def _fmt_cell(v) -> str:
    if isinstance(v, float):
        return format_float(v)
    return str(v)


def group_sessions(events: Iterable[AlertEvent]) -> dict[SessionId, list[AlertEvent]]:
    groups: dict[SessionId, list[AlertEvent]] = {}
    for e in events:
        groups.setdefault(make_session_id(e), []).append(e)
    return groups
