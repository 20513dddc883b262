"""Synthetic alert data with planted density and sequential structure.

Layout: roads are 2 km east-west segments packed ten to a 0.1 degree cell,
with every cell holding the same number of roads per danger level, so weather
and altitude (both looked up per cell) say nothing about danger.

Density plant: each road carries the same number of "warning sessions" (bus
trips with collision warnings, all inside a sub-kilometre hotspot), plus a
level-dependent number of quiet trips with only STOPPAGE/HB alerts. The trip
normalisation therefore makes density grow geometrically with the level.

Sequential plant: within a warning session speed follows a stationary AR(1)
process whose lag-1 coefficient is ``seq_signal * (level - 3) / 2``. The
process has unit variance whatever the coefficient, so by default every level
shares one marginal speed distribution and only the transitions carry the
level. ``marginal_signal`` optionally adds a per-level mean shift.
"""

from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data_model import AlarmType, AlertEvent, WeatherRecord, format_timestamp, write_alert_csv
from .enrich import cache_key
from .seeding import substream

KM_PER_DEG_LAT = 111.195
ROADS_PER_CELL = 10
HOTSPOT_KM = 0.8
ROAD_KM = 2.0


class InvalidConfig(ValueError):
    pass


@dataclass
class SynthConfig:
    seed: int = 7
    roads_per_level: int = 2
    # one latent level per road; empty -> every level repeated roads_per_level times
    road_levels: tuple[int, ...] = ()
    buses: int = 9
    start_date: str = "2019-03-01"
    days: int = 90
    sessions_per_road: int = 150
    events_per_session: tuple[int, int] = (15, 25)
    noise_scale: float = 1.0
    seq_signal: float = 0.95
    # per-level shift of the speed mean, in units of speed_sd
    marginal_signal: float = 0.0
    trip_ratio: float = 1.5
    speed_mean: float = 45.0
    speed_sd: float = 12.0
    base_lat: float = 12.9
    base_lon: float = 77.6

    def levels(self) -> list[int]:
        if self.road_levels:
            return list(self.road_levels)
        return [lvl for _ in range(self.roads_per_level) for lvl in range(1, 6)]

    def validate(self) -> None:
        levels = self.levels()
        if sorted(set(levels)) != [1, 2, 3, 4, 5]:
            raise InvalidConfig("danger levels must cover all of 1..5 and nothing else")
        for name in ("buses", "days", "sessions_per_road", "roads_per_level"):
            if getattr(self, name) <= 0:
                raise InvalidConfig(f"{name} must be positive")
        lo, hi = self.events_per_session
        if not 1 <= lo <= hi:
            raise InvalidConfig(f"bad events_per_session {self.events_per_session}")
        if not 0.0 <= self.seq_signal < 1.0:
            raise InvalidConfig("seq_signal must be in [0, 1)")
        if self.trip_ratio < 1.0:
            raise InvalidConfig("trip_ratio must be >= 1")
        if self.trips_for(1) > self.buses * self.days:
            raise InvalidConfig(
                f"level-1 roads need {self.trips_for(1)} distinct bus-days, only {self.buses * self.days} exist"
            )

    def trips_for(self, level: int) -> int:
        return int(round(self.sessions_per_road * self.trip_ratio ** (5 - level)))

    def ar_coefficient(self, level: int) -> float:
        return self.seq_signal * (level - 3) / 2.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["road_levels"] = list(self.road_levels)
        d["events_per_session"] = list(self.events_per_session)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        if "road_levels" in d:
            d["road_levels"] = tuple(d["road_levels"])
        if "events_per_session" in d:
            d["events_per_session"] = tuple(d["events_per_session"])
        return cls(**d)


@dataclass
class Road:
    name: str
    level: int
    lat: float
    lon_start: float
    lon_end: float
    hotspot: tuple[float, float]


@dataclass
class SynthDataset:
    events: list[AlertEvent]
    fixtures: dict
    truth: dict
    roads: list[Road] = field(default_factory=list)

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"raw": out / "raw.csv", "fixtures": out / "fixtures.json", "truth": out / "ground_truth.json"}
        write_alert_csv(paths["raw"], self.events)
        for key in ("fixtures", "truth"):
            with open(paths[key], "w", encoding="utf-8") as fh:
                json.dump(getattr(self, key), fh, indent=1, sort_keys=True)
                fh.write("\n")
        return paths


def _lon_per_km(lat: float) -> float:
    return 1.0 / (KM_PER_DEG_LAT * math.cos(math.radians(lat)))


def _layout(config: SynthConfig, rng: np.random.Generator) -> list[Road]:
    """Place roads cell by cell; each full cell holds two roads of every level."""
    levels = config.levels()
    by_level = {lvl: [i for i, l in enumerate(levels) if l == lvl] for lvl in range(1, 6)}
    # interleave so every block of 10 (or final 5) has a balanced level mix
    order = []
    while any(by_level.values()):
        for lvl in range(1, 6):
            if by_level[lvl]:
                order.append(by_level[lvl].pop(0))
    roads: list[Road | None] = [None] * len(levels)
    for block_start in range(0, len(order), ROADS_PER_CELL):
        block = order[block_start : block_start + ROADS_PER_CELL]
        cell = block_start // ROADS_PER_CELL
        clat = config.base_lat
        clon = config.base_lon + 0.1 * cell
        slots = rng.permutation(ROADS_PER_CELL)[: len(block)]
        for road_idx, slot in zip(block, slots):
            row, col = divmod(int(slot), 2)
            lat = clat + (row - 2) * 0.02
            lon0 = clon - 0.04 + col * 0.04
            lon1 = lon0 + ROAD_KM * _lon_per_km(lat)
            mid = (lon0 + lon1) / 2
            half = HOTSPOT_KM / 2 * _lon_per_km(lat)
            roads[road_idx] = Road(
                name=f"SR-{road_idx + 1:02d}",
                level=levels[road_idx],
                lat=round(lat, 6),
                lon_start=lon0,
                lon_end=lon1,
                hotspot=(mid - half, mid + half),
            )
    return roads


def _weather(rng: np.random.Generator, noise: float) -> dict:
    temp = 27 + 4 * noise * rng.standard_normal()
    hum = float(np.clip(65 + 15 * noise * rng.standard_normal(), 5, 100))
    rec = {
        "tempC": temp,
        "humidity": hum,
        "precipMM": float(max(0.0, rng.exponential(2.0 * noise) - 1.0)),
        "visibility": float(np.clip(9 + noise * rng.standard_normal(), 0, 10)),
        "windspeedKmph": float(abs(10 + 5 * noise * rng.standard_normal())),
        "pressure": 1011 + 4 * noise * rng.standard_normal(),
        "cloudcover": float(np.clip(45 + 25 * noise * rng.standard_normal(), 0, 100)),
        "DewPointC": temp - (100 - hum) / 5,
        "sunHour": float(np.clip(9 + 2 * noise * rng.standard_normal(), 0, 14)),
        "uvIndex": float(np.clip(np.round(6 + 2 * noise * rng.standard_normal()), 1, 12)),
        "winddirDegree": float(rng.integers(0, 360)),
    }
    WeatherRecord.from_mapping(rec)  # range check
    return {k: round(float(v), 3) for k, v in rec.items()}


def _ar1(rng: np.random.Generator, n: int, phi: float) -> np.ndarray:
    z = np.empty(n)
    z[0] = rng.standard_normal()
    scale = math.sqrt(1.0 - phi * phi)
    for t in range(1, n):
        z[t] = phi * z[t - 1] + scale * rng.standard_normal()
    return z


def generate(config: SynthConfig | None = None) -> SynthDataset:
    config = config or SynthConfig()
    config.validate()
    rng_layout = substream(config.seed, "synth/layout")
    rng_len = substream(config.seed, "synth/lengths")
    roads = _layout(config, rng_layout)
    start = dt.date.fromisoformat(config.start_date)
    bus_days = [(b, d) for b in range(config.buses) for d in range(config.days)]

    # session-length pools shared by roads of the same slot across levels, so
    # every level contributes exactly the same number of warning events
    lo, hi = config.events_per_session
    n_slots = max(sum(1 for r in roads if r.level == lvl) for lvl in range(1, 6))
    pools = [rng_len.integers(lo, hi + 1, size=config.sessions_per_road) for _ in range(n_slots)]
    slot_of = {}
    seen = {lvl: 0 for lvl in range(1, 6)}
    for r in roads:
        slot_of[r.name] = seen[r.level]
        seen[r.level] += 1

    events: list[AlertEvent] = []
    fixtures = {"weather": {}, "altitude": {}, "road": {}}
    truth_sessions = {}
    truth_roads = []
    for road in roads:
        rng = substream(config.seed, f"synth/road/{road.name}")
        n_trips = config.trips_for(road.level)
        chosen = rng.choice(len(bus_days), size=n_trips, replace=False)
        lengths = rng.permutation(pools[slot_of[road.name]])
        phi = config.ar_coefficient(road.level)
        for trip_no, pick in enumerate(chosen):
            bus, day = bus_days[int(pick)]
            date = start + dt.timedelta(days=day)
            device = f"bus{bus + 1:02d}"
            t = dt.datetime.combine(date, dt.time(int(rng.integers(6, 19))), tzinfo=dt.timezone.utc)
            t += dt.timedelta(minutes=int(rng.integers(0, 60)))
            if trip_no < config.sessions_per_road:
                n = int(lengths[trip_no])
                shift = config.marginal_signal * (road.level - 3)
                speeds = config.speed_mean + config.speed_sd * (shift + _ar1(rng, n, phi))
                lons = rng.uniform(*road.hotspot, size=n)
                alarms = rng.choice(["HMW", "PCW", "FCW"], size=n, p=[0.5, 0.2, 0.3])
                truth_sessions[f"{device}|{road.name}|{date.isoformat()}"] = road.level
            else:
                n = int(rng.integers(1, 3))
                speeds = np.abs(config.speed_mean + config.speed_sd * rng.standard_normal(n))
                lons = rng.uniform(road.lon_start, road.lon_end, size=n)
                alarms = rng.choice(["STOPPAGE", "HB"], size=n)
            for k in range(n):
                t += dt.timedelta(seconds=int(rng.integers(30, 600)))
                lat = road.lat + float(rng.uniform(-1e-4, 1e-4))
                lon = round(float(lons[k]), 6)
                lat = round(lat, 6)
                events.append(AlertEvent(device, AlarmType(str(alarms[k])), t, lat, lon, round(max(0.0, float(speeds[k])), 3)))
                fixtures["road"][cache_key("road", lat, lon)] = road.name
                wkey = cache_key("weather", lat, lon, t.date())
                fixtures["weather"].setdefault(wkey, None)
                fixtures["altitude"].setdefault(cache_key("altitude", lat, lon), None)
        truth_roads.append({**asdict(road), "trips": n_trips, "warning_sessions": config.sessions_per_road})

    rng_env = substream(config.seed, "synth/environment")
    for key in sorted(fixtures["altitude"]):
        fixtures["altitude"][key] = round(float(rng_env.uniform(850, 950)), 1)
    for key in sorted(fixtures["weather"]):
        fixtures["weather"][key] = _weather(rng_env, config.noise_scale)

    events.sort(key=lambda e: (e.timestamp, e.device_id, e.latitude, e.longitude))
    truth = {
        "config": config.to_dict(),
        "roads": truth_roads,
        "sessions": dict(sorted(truth_sessions.items())),
        "ar_coefficients": {str(lvl): config.ar_coefficient(lvl) for lvl in range(1, 6)},
        "first_timestamp": format_timestamp(events[0].timestamp),
    }
    return SynthDataset(events, fixtures, truth, roads)
