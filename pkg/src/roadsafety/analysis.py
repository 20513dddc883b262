"""Standardization, Jacobi eigensolver, PCA, correlations and the road report."""

from __future__ import annotations

import math
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .geo import EmptyInput, LabeledEvent, road_trips


class NotSymmetric(ValueError):
    pass


class KTooLarge(ValueError):
    pass


@dataclass
class DataMatrix:
    values: np.ndarray
    columns: list[str]
    constant_columns: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.columns):
            raise ValueError(f"values {self.values.shape} do not match {len(self.columns)} columns")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("data matrix has non-finite entries")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass
class Scaler:
    """Column mean / sample std learned on one matrix, applied to others."""

    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Scaler":
        x = np.asarray(x, dtype=np.float64)
        mean = x.mean(axis=0)
        std = x.std(axis=0, ddof=1) if len(x) > 1 else np.zeros(x.shape[1])
        scale = np.maximum(np.abs(mean), 1.0)
        constant = std <= 1e-12 * scale
        return cls(mean, np.where(constant, 1.0, std), constant)

    def transform(self, x: np.ndarray) -> np.ndarray:
        z = (np.asarray(x, dtype=np.float64) - self.mean) / self.std
        z[:, self.constant] = 0.0
        return z

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "constant": self.constant.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(np.array(d["mean"]), np.array(d["std"]), np.array(d["constant"], dtype=bool))


def standardize(m: DataMatrix) -> DataMatrix:
    """Zero-mean, unit sample-std columns; constant columns become zeros (and are reported)."""
    scaler = Scaler.fit(m.values)
    z = scaler.transform(m.values)
    # second centering pass trims the O(eps) residual mean left by the division
    z -= z.mean(axis=0)
    constant = [c for c, flag in zip(m.columns, scaler.constant) if flag]
    if constant:
        warnings.warn(f"constant columns set to zero: {', '.join(constant)}", stacklevel=2)
    return DataMatrix(z, list(m.columns), constant)


def covariance(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if len(x) < 2:
        raise ValueError("need at least 2 rows")
    c = x - x.mean(axis=0)
    cov = c.T @ c / (len(x) - 1)
    return (cov + cov.T) / 2


def eigh_symmetric(a: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Returns eigenvalues in descending order and the matching eigenvectors as
    columns. Sweeps until the off-diagonal Frobenius norm drops below
    ``tol * max(1, ||A||_F)``.
    """
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NotSymmetric(f"not square: {a.shape}")
    n = a.shape[0]
    if np.max(np.abs(a - a.T), initial=0.0) > 1e-10:
        raise NotSymmetric("matrix is not symmetric within 1e-10")
    a = (a + a.T) / 2
    v = np.eye(n)
    threshold = tol * max(1.0, np.linalg.norm(a))

    for _ in range(max_sweeps):
        # summed directly: ||A||^2 - sum(diag^2) cancels to ~eps * ||A||^2
        off = float(np.linalg.norm(a - np.diag(np.diag(a))))
        if off < threshold:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 1.0 / (2.0 * theta)
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                # A <- J^T A J with J the (p, q) rotation
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        warnings.warn("Jacobi eigensolver hit max_sweeps before converging", stacklevel=2)

    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    vectors = vectors.copy()
    for j in range(vectors.shape[1]):
        i = int(np.argmax(np.abs(vectors[:, j])))
        if vectors[i, j] < 0:
            vectors[:, j] *= -1
    return vectors


@dataclass
class PcaResult:
    components: np.ndarray  # p x k, columns are unit vectors
    explained_variance: np.ndarray
    total_variance: float
    scores: np.ndarray
    columns: list[str]

    @property
    def explained_variance_ratio(self) -> np.ndarray:
        if self.total_variance <= 0:
            return np.zeros_like(self.explained_variance)
        return self.explained_variance / self.total_variance

    @property
    def loadings(self) -> dict[str, np.ndarray]:
        return {c: self.components[i] for i, c in enumerate(self.columns)}


def pca(m: DataMatrix, k: int) -> PcaResult:
    n, p = m.shape
    if k > p:
        raise KTooLarge(f"k={k} > p={p}")
    if k < 1:
        raise ValueError("k must be positive")
    cov = covariance(m.values)
    w, v = eigh_symmetric(cov)
    comps = _fix_signs(v[:, :k])
    centered = m.values - m.values.mean(axis=0)
    return PcaResult(comps, w[:k], float(np.trace(cov)), centered @ comps, list(m.columns))


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64) - np.mean(x)
    y = np.asarray(y, dtype=np.float64) - np.mean(y)
    sx, sy = math.sqrt(float(x @ x)), math.sqrt(float(y @ y))
    if sx == 0 or sy == 0:
        return 0.0
    return float(np.clip((x @ y) / (sx * sy), -1.0, 1.0))


def feature_correlations(m: DataMatrix, labels: Sequence[int]) -> dict[str, float]:
    labels = np.asarray(labels, dtype=np.float64)
    if m.shape[0] < 3 or len(labels) != m.shape[0]:
        raise ValueError("need >= 3 rows and one label per row")
    out = {}
    flat = []
    for j, name in enumerate(m.columns):
        col = m.values[:, j]
        if np.ptp(col) == 0:
            flat.append(name)
        out[name] = pearson(col, labels)
    if flat:
        warnings.warn(f"constant features get r = 0: {', '.join(flat)}", stacklevel=2)
    return out


@dataclass(frozen=True)
class RoadReportRow:
    road: str
    warnings: int
    trips: int
    normalized_warnings: float
    percent: float
    average_alerts: float
    mean_safety_index: float


def road_risk_report(labeled: Sequence[LabeledEvent], all_events=None) -> list[RoadReportRow]:
    """Share of trip-normalized collision warnings per road, most dangerous first.

    ``normalized_warnings`` is counted warnings on the road divided by its
    trips; ``average_alerts`` is the mean 1 km warning count at the road's
    warning locations.
    """
    if not labeled:
        raise EmptyInput("no labeled events")
    trips = road_trips(all_events if all_events is not None else [le.event for le in labeled])
    by_road: dict[str, list[LabeledEvent]] = defaultdict(list)
    for le in labeled:
        by_road[le.event.road_name].append(le)
    mass = {road: len(items) / trips[road] for road, items in by_road.items()}
    total = sum(mass.values())
    rows = [
        RoadReportRow(
            road=road,
            warnings=len(items),
            trips=trips[road],
            normalized_warnings=mass[road],
            percent=100.0 * mass[road] / total,
            average_alerts=float(np.mean([le.density.raw_count for le in items])),
            mean_safety_index=float(np.mean([le.safety_index for le in items])),
        )
        for road, items in by_road.items()
    ]
    rows.sort(key=lambda r: (-r.percent, r.road))
    return rows


def biplot_svg(result: PcaResult, size: int = 640, max_points: int = 2000) -> str:
    """Two-component biplot as a standalone SVG string (score cloud + loading arrows)."""
    if result.components.shape[1] < 2:
        raise ValueError("biplot needs k >= 2")
    half = size / 2
    pad = 40
    scores = result.scores[:max_points, :2]
    s_lim = float(np.max(np.abs(scores))) if scores.size else 1.0
    s_lim = s_lim or 1.0
    loads = result.components[:, :2]
    l_lim = float(np.max(np.abs(loads))) or 1.0

    def to_px(x, y, lim):
        r = half - pad
        return half + x / lim * r, half - y / lim * r

    ratio = result.explained_variance_ratio
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
        f'<path d="M{pad} {half:.1f}H{size - pad}M{half:.1f} {pad}V{size - pad}" stroke="#999" stroke-width="1"/>',
        f'<text x="{size - pad}" y="{half - 6:.1f}" font-size="12" text-anchor="end">PC1 ({100 * ratio[0]:.1f}%)</text>',
        f'<text x="{half + 6:.1f}" y="{pad - 8}" font-size="12">PC2 ({100 * ratio[1]:.1f}%)</text>',
    ]
    dots = []
    for x, y in scores:
        px, py = to_px(x, y, s_lim)
        dots.append(f"M{px:.1f} {py:.1f}h0.01")
    if dots:
        parts.append(f'<path d="{"".join(dots)}" stroke="#4a7bb7" stroke-opacity="0.35" stroke-width="3" stroke-linecap="round"/>')
    for name, (x, y) in zip(result.columns, loads):
        px, py = to_px(x, y, l_lim)
        parts.append(f'<path d="M{half:.1f} {half:.1f}L{px:.1f} {py:.1f}" stroke="#c0392b" stroke-width="1.5"/>')
        parts.append(f'<text x="{px:.1f}" y="{py:.1f}" font-size="11" fill="#c0392b">{escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
