"""Weather / altitude / road-name enrichment behind pluggable clients.

Lookups go through an :class:`EnrichmentCache` keyed on rounded coordinates so
that an offline run only needs fixture entries per cell, and a live run only
pays for one request per cell.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
import math
import os
import threading
import urllib.parse
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .data_model import WEATHER_FIELDS, AlertEvent, WeatherRecord

log = logging.getLogger(__name__)

FEATURE_ORDER: tuple[str, ...] = (
    "hour",
    "speed",
    "altitude",
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

# Decimal places of the rounding grid per lookup kind. Weather and altitude
# share the 0.1 degree cell; road names need a much finer grid.
KEY_DECIMALS = {"weather": 1, "altitude": 1, "road": 3}

API_KEY_ENV = "ROADSAFETY_WWO_KEY"


class ClientError(Exception):
    def __init__(self, query: str, cause: object):
        super().__init__(f"{query}: {cause}")
        self.query = query
        self.cause = cause


class MissingEnrichment(ValueError):
    def __init__(self, field_name: str):
        super().__init__(f"event is missing enrichment field: {field_name}")
        self.field = field_name


def _cell(x: float, decimals: int) -> str:
    scale = 10**decimals
    i = math.floor(x * scale + 0.5)
    return f"{i / scale:.{decimals}f}"


def cache_key(kind: str, lat: float, lon: float, date: dt.date | None = None) -> str:
    d = KEY_DECIMALS[kind]
    key = f"{_cell(lat, d)}|{_cell(lon, d)}"
    if kind == "weather":
        key += f"|{date.isoformat()}"
    return key


class EnrichmentClient(Protocol):
    def weather_at(self, lat: float, lon: float, date: dt.date) -> WeatherRecord: ...

    def altitude_at(self, lat: float, lon: float) -> float: ...

    def road_name_at(self, lat: float, lon: float) -> str: ...


class FixtureClient:
    """Replays recorded responses from a fixture JSON file.

    Fixture layout: ``{"weather": {key: record}, "altitude": {key: meters},
    "road": {key: name}}`` with keys built by :func:`cache_key`.
    """

    def __init__(self, fixtures: dict):
        self.weather = fixtures.get("weather", {})
        self.altitude = fixtures.get("altitude", {})
        self.road = fixtures.get("road", {})

    @classmethod
    def from_file(cls, path: str | Path) -> "FixtureClient":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def _get(self, table: dict, kind: str, key: str):
        try:
            return table[key]
        except KeyError:
            raise ClientError(f"{kind} {key}", "no fixture entry") from None

    def weather_at(self, lat, lon, date):
        return WeatherRecord.from_mapping(self._get(self.weather, "weather", cache_key("weather", lat, lon, date)))

    def altitude_at(self, lat, lon):
        return float(self._get(self.altitude, "altitude", cache_key("altitude", lat, lon)))

    def road_name_at(self, lat, lon):
        return str(self._get(self.road, "road", cache_key("road", lat, lon)))


class HttpEnrichmentClient:
    """Live client: World Weather Online, Open-Elevation and Nominatim.

    Never used by the test suite. The WWO key comes from ``$ROADSAFETY_WWO_KEY``.
    """

    weather_url = "https://api.worldweatheronline.com/premium/v1/past-weather.ashx"
    elevation_url = "https://api.open-elevation.com/api/v1/lookup"
    reverse_url = "https://nominatim.openstreetmap.org/reverse"

    def __init__(self, api_key: str | None = None, timeout: float = 20.0, user_agent: str = "roadsafety/0.1"):
        self.api_key = api_key or os.environ.get(API_KEY_ENV)
        self.timeout = timeout
        self.user_agent = user_agent

    def _get_json(self, url: str, params: dict) -> dict:
        req = urllib.request.Request(f"{url}?{urllib.parse.urlencode(params)}", headers={"User-Agent": self.user_agent})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return json.load(resp)
        except Exception as exc:  # network errors of every flavour
            raise ClientError(url, exc) from exc

    def weather_at(self, lat, lon, date):
        if not self.api_key:
            raise ClientError("weather", f"${API_KEY_ENV} not set")
        data = self._get_json(
            self.weather_url,
            {"key": self.api_key, "q": f"{lat},{lon}", "date": date.isoformat(), "format": "json", "tp": 24},
        )
        try:
            day = data["data"]["weather"][0]
            record = {**day, **day["hourly"][0]}
            return WeatherRecord.from_mapping(record)
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise ClientError("weather", exc) from exc

    def altitude_at(self, lat, lon):
        data = self._get_json(self.elevation_url, {"locations": f"{lat},{lon}"})
        try:
            return float(data["results"][0]["elevation"])
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise ClientError("altitude", exc) from exc

    def road_name_at(self, lat, lon):
        data = self._get_json(self.reverse_url, {"format": "jsonv2", "lat": lat, "lon": lon, "zoom": 17})
        address = data.get("address", {})
        name = address.get("road") or data.get("name") or data.get("display_name")
        if not name:
            raise ClientError("road", "no road in reverse-geocode response")
        return name


@dataclass
class EnrichmentCache:
    """Response cache backed by a JSON-lines file (one entry per line, last wins)."""

    path: Path | None = None
    entries: dict[tuple[str, str], object] = field(default_factory=dict)
    _pending: list[tuple[str, str]] = field(default_factory=list, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @classmethod
    def load(cls, path: str | Path) -> "EnrichmentCache":
        path = Path(path)
        cache = cls(path=path)
        if path.exists():
            with path.open(encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        cache.entries[(rec["kind"], rec["key"])] = rec["value"]
        return cache

    def get(self, kind: str, key: str):
        return self.entries.get((kind, key))

    def __contains__(self, item: tuple[str, str]) -> bool:
        return item in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def put(self, kind: str, key: str, value) -> None:
        with self._lock:
            if (kind, key) not in self.entries:
                self._pending.append((kind, key))
            self.entries[(kind, key)] = value

    def flush(self) -> None:
        """Append entries added since the last flush to the backing file."""
        with self._lock:
            if self.path is None or not self._pending:
                self._pending.clear()
                return
            with self.path.open("a", encoding="utf-8") as fh:
                for kind, key in self._pending:
                    fh.write(_cache_line(kind, key, self.entries[(kind, key)]))
            self._pending.clear()

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for kind, key in sorted(self.entries):
                fh.write(_cache_line(kind, key, self.entries[(kind, key)]))


def _cache_line(kind: str, key: str, value) -> str:
    return json.dumps({"kind": kind, "key": key, "value": value}, sort_keys=True) + "\n"


@dataclass
class EnrichResult:
    enriched: list[AlertEvent]
    rejected: list[tuple[AlertEvent, ClientError]]


def _queries(event: AlertEvent) -> list[tuple[str, str]]:
    lat, lon = event.latitude, event.longitude
    return [
        ("weather", cache_key("weather", lat, lon, event.date)),
        ("altitude", cache_key("altitude", lat, lon)),
        ("road", cache_key("road", lat, lon)),
    ]


def _call(client: EnrichmentClient, kind: str, event: AlertEvent):
    if kind == "weather":
        return client.weather_at(event.latitude, event.longitude, event.date).as_dict()
    if kind == "altitude":
        return client.altitude_at(event.latitude, event.longitude)
    return client.road_name_at(event.latitude, event.longitude)


def enrich_events(
    events: Sequence[AlertEvent],
    client: EnrichmentClient,
    cache: EnrichmentCache,
    max_workers: int = 4,
    retries: int = 2,
) -> EnrichResult:
    """Attach weather, altitude and road name to every event.

    Missing cache entries are fetched once per key (using the first event that
    needs it), with at most ``max_workers`` requests in flight. Events whose
    lookups fail are returned in ``rejected``; already-enriched events pass
    through untouched.
    """
    todo: dict[tuple[str, str], AlertEvent] = {}
    for e in events:
        if e.is_enriched:
            continue
        for q in _queries(e):
            if q not in cache and q not in todo:
                todo[q] = e

    def fetch(item):
        (kind, key), event = item
        last: Exception | None = None
        for _ in range(retries + 1):
            try:
                return _call(client, kind, event)
            except ClientError as exc:
                last = exc
            except Exception as exc:
                last = ClientError(f"{kind} {key}", exc)
        return last if isinstance(last, ClientError) else ClientError(f"{kind} {key}", last)

    items = list(todo.items())
    if max_workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(fetch, items))
    else:
        results = [fetch(it) for it in items]

    failures: dict[tuple[str, str], ClientError] = {}
    for (q, _), res in zip(items, results):
        if isinstance(res, ClientError):
            failures[q] = res
        else:
            cache.put(q[0], q[1], res)
    cache.flush()
    if failures:
        log.warning("%d enrichment lookups failed", len(failures))

    out = EnrichResult([], [])
    for e in events:
        if e.is_enriched:
            out.enriched.append(e)
            continue
        qs = _queries(e)
        err = next((failures[q] for q in qs if q in failures), None)
        if err is not None:
            out.rejected.append((e, err))
            continue
        weather, altitude, road = (cache.get(*q) for q in qs)
        out.enriched.append(e.with_enrichment(float(altitude), str(road), WeatherRecord.from_mapping(weather)))
    return out


def build_feature_vector(event: AlertEvent, order: Sequence[str] = FEATURE_ORDER) -> np.ndarray:
    if event.weather is None:
        raise MissingEnrichment("weather")
    if event.altitude is None:
        raise MissingEnrichment("altitude")
    values = []
    for name in order:
        if name == "hour":
            values.append(float(event.hour))
        elif name == "speed":
            values.append(event.speed)
        elif name == "altitude":
            values.append(event.altitude)
        elif name in WEATHER_FIELDS:
            values.append(getattr(event.weather, name))
        else:
            raise ValueError(f"unknown feature {name!r}")
    vec = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(vec)):
        raise ValueError("feature vector has non-finite entries")
    return vec


def feature_matrix(events: Sequence[AlertEvent], order: Sequence[str] = FEATURE_ORDER) -> np.ndarray:
    if not events:
        return np.zeros((0, len(order)))
    return np.vstack([build_feature_vector(e, order) for e in events])
