"""Great-circle distance, warning density and the 1-5 safety index."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .data_model import COLLISION_ALARMS, AlarmType, AlertEvent

EARTH_RADIUS_KM = 6371.0
QUINTILES = (20.0, 40.0, 60.0, 80.0)


class EmptyInput(ValueError):
    pass


def haversine_km(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = math.radians(lat2 - lat1)
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(math.sqrt(min(1.0, a)))


def haversine_matrix(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Pairwise distances (km) between points set 1 (rows) and set 2 (columns)."""
    p1 = np.radians(np.asarray(lat1, dtype=float))[:, None]
    p2 = np.radians(np.asarray(lat2, dtype=float))[None, :]
    l1 = np.asarray(lon1, dtype=float)[:, None]
    l2 = np.asarray(lon2, dtype=float)[None, :]
    dp = np.radians(np.asarray(lat2, dtype=float)[None, :] - np.asarray(lat1, dtype=float)[:, None])
    dl = np.radians(l2 - l1)
    a = np.sin(dp / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.minimum(1.0, a)))


@dataclass(frozen=True)
class LocationDensity:
    index: int  # position in the input event list
    raw_count: int
    trips: int

    @property
    def normalized_density(self) -> float:
        return self.raw_count / self.trips


def road_trips(events: Sequence[AlertEvent]) -> dict[str, int]:
    """Distinct (device, date) visits per road, over all alarm types."""
    visits: dict[str, set] = defaultdict(set)
    for e in events:
        visits[e.road_name].add((e.device_id, e.date))
    return {road: len(v) for road, v in visits.items()}


def warning_density(
    events: Sequence[AlertEvent],
    radius_km: float = 1.0,
    counted_alarms: Iterable[AlarmType] = COLLISION_ALARMS,
    method: str = "grid",
    chunk: int = 1024,
) -> list[LocationDensity]:
    """Per-event count of counted warnings within ``radius_km`` (self included).

    Only events whose own alarm type is counted get a record. Trips are taken
    over every event on the road, counted or not. ``method="brute"`` compares
    every pair; ``"grid"`` only compares neighbouring grid cells and falls back
    to brute force near the poles or the antimeridian.
    """
    if not events:
        raise EmptyInput("no events")
    if method not in ("grid", "brute"):
        raise ValueError(f"unknown density method {method!r}")
    counted = frozenset(counted_alarms)
    trips = road_trips(events)
    idx = [i for i, e in enumerate(events) if e.alarm_type in counted]
    if not idx:
        return []
    lat = np.array([events[i].latitude for i in idx])
    lon = np.array([events[i].longitude for i in idx])
    counts = None
    if method == "grid":
        counts = _grid_counts(lat, lon, radius_km)
    if counts is None:
        counts = _brute_counts(lat, lon, radius_km, chunk)
    return [LocationDensity(i, int(c), trips[events[i].road_name]) for i, c in zip(idx, counts)]


def _brute_counts(lat, lon, radius_km, chunk):
    counts = np.empty(len(lat), dtype=np.int64)
    for start in range(0, len(lat), chunk):
        stop = start + chunk
        d = haversine_matrix(lat[start:stop], lon[start:stop], lat, lon)
        counts[start:stop] = (d <= radius_km).sum(axis=1)
    return counts


def _grid_counts(lat, lon, radius_km):
    """Bucket points into cells at least one radius wide; None if unsafe."""
    half = radius_km / (2 * EARTH_RADIUS_KM)
    if half >= math.pi / 4:
        return None
    dlat = math.degrees(2 * half) * 1.001
    top = float(np.max(np.abs(lat))) + dlat
    if top >= 89.0:
        return None
    # sin(d/2) >= cos(lat_max) sin(dlon/2) bounds the longitude gap
    ratio = math.sin(half) / math.cos(math.radians(top))
    if ratio >= 1.0:
        return None
    dlon = math.degrees(2 * math.asin(ratio)) * 1.001
    if np.max(np.abs(lon)) + dlon >= 180.0:
        return None
    ci = np.floor(lat / dlat).astype(np.int64)
    cj = np.floor(lon / dlon).astype(np.int64)
    cells: dict[tuple[int, int], list[int]] = defaultdict(list)
    for k, key in enumerate(zip(ci.tolist(), cj.tolist())):
        cells[key].append(k)
    counts = np.zeros(len(lat), dtype=np.int64)
    for (a, b), members in cells.items():
        near = [k for da in (-1, 0, 1) for db in (-1, 0, 1) for k in cells.get((a + da, b + db), ())]
        rows, cols = np.array(members), np.array(near)
        d = haversine_matrix(lat[rows], lon[rows], lat[cols], lon[cols])
        counts[rows] = (d <= radius_km).sum(axis=1)
    return counts


def nearest_rank(sorted_values: Sequence[float], pct: float) -> float:
    n = len(sorted_values)
    rank = max(1, math.ceil(pct / 100.0 * n))
    return sorted_values[rank - 1]


def density_transform(density: float) -> float:
    return math.log1p(density)


@dataclass(frozen=True)
class IndexBinning:
    edges: tuple[float, float, float, float]
    transform: str = "log1p"
    method: str = "nearest-rank"
    percentiles: tuple[float, ...] = QUINTILES

    def __post_init__(self):
        if len(self.edges) != 4 or any(b < a for a, b in zip(self.edges, self.edges[1:])):
            raise ValueError(f"edges must be 4 non-decreasing values: {self.edges}")

    def to_dict(self) -> dict:
        return {
            "edges": list(self.edges),
            "transform": self.transform,
            "method": self.method,
            "percentiles": list(self.percentiles),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "IndexBinning":
        if data.get("transform", "log1p") != "log1p":
            raise ValueError(f"unsupported transform {data['transform']!r}")
        return cls(tuple(float(e) for e in data["edges"]), percentiles=tuple(data.get("percentiles", QUINTILES)))


def fit_index_binning(densities: Sequence[LocationDensity]) -> IndexBinning:
    if not densities:
        raise EmptyInput("no densities to bin")
    t = sorted(density_transform(d.normalized_density) for d in densities)
    return IndexBinning(tuple(nearest_rank(t, p) for p in QUINTILES))


def index_from_density(density: float, binning: IndexBinning) -> int:
    t = density_transform(density)
    return 1 + sum(1 for edge in binning.edges if edge < t)


def assign_safety_index(d: LocationDensity, binning: IndexBinning) -> int:
    return index_from_density(d.normalized_density, binning)


def session_label(indices: Sequence[int]) -> int:
    if len(indices) == 0:
        raise EmptyInput("session has no labeled events")
    return max(indices)


def binary_label(index: int, threshold: int = 3) -> int:
    return int(index >= threshold)


@dataclass
class LabeledEvent:
    event: AlertEvent
    density: LocationDensity
    safety_index: int


def label_events(
    events: Sequence[AlertEvent],
    radius_km: float = 1.0,
    counted_alarms: Iterable[AlarmType] = COLLISION_ALARMS,
    binning: IndexBinning | None = None,
) -> tuple[list[LabeledEvent], IndexBinning]:
    """Density + index for every counted event; fits the binning unless one is given."""
    dens = warning_density(events, radius_km, counted_alarms)
    if binning is None:
        binning = fit_index_binning(dens)
    labeled = [LabeledEvent(events[d.index], d, assign_safety_index(d, binning)) for d in dens]
    return labeled, binning
