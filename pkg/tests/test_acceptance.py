"""Acceptance criteria 1-8. Each test records one PASS/FAIL line (shown in the run summary)."""

import hashlib
import time
from pathlib import Path

import mpmath as mp
import numpy as np
import pytest
import yaml

from roadsafety.analysis import DataMatrix, eigh_symmetric, pca
from roadsafety.cli import main
from roadsafety.config import MODEL_KINDS, PipelineConfig
from roadsafety.data_model import COLLISION_ALARMS, AlarmType
from roadsafety.experiments import benchmark, train_dynamics
from roadsafety.geo import (
    EARTH_RADIUS_KM,
    IndexBinning,
    LocationDensity,
    assign_safety_index,
    fit_index_binning,
    haversine_km,
    index_from_density,
    warning_density,
)
from roadsafety.gnn import GnnModel, gnn_forward
from roadsafety.nn.gradcheck import check_gradients
from roadsafety.nn.models import FeedForward, LogisticRegression, LstmClassifier, SequenceBatch
from roadsafety.session_graph import GraphBatch, SessionGraph

from conftest import ACCEPTANCE_LINES, make_event
from test_session_graph import fake_graphs


def record(number, name, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number} ({name}): {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


# --- 1: geo oracles ------------------------------------------------------------------


def cosine_law_km(lat1, lon1, lat2, lon2):
    with mp.workdps(30):
        p1, p2 = mp.radians(mp.mpf(lat1)), mp.radians(mp.mpf(lat2))
        dl = mp.radians(mp.mpf(lon2) - mp.mpf(lon1))
        c = mp.sin(p1) * mp.sin(p2) + mp.cos(p1) * mp.cos(p2) * mp.cos(dl)
        return float(mp.mpf(EARTH_RADIUS_KM) * mp.acos(max(-1, min(1, c))))


def row_distances(lat0, lon0, lat, lon):
    """Plain numpy haversine from one point to many, written independently of the package."""
    p0, p = np.radians(lat0), np.radians(lat)
    a = np.sin((p - p0) / 2) ** 2 + np.cos(p0) * np.cos(p) * np.sin(np.radians(lon - lon0) / 2) ** 2
    return 2 * 6371.0 * np.arcsin(np.sqrt(np.clip(a, 0, 1)))


def brute_density(events):
    counted = np.array([e.alarm_type in COLLISION_ALARMS for e in events])
    lat = np.array([e.latitude for e in events])
    lon = np.array([e.longitude for e in events])
    trips = {}
    for e in events:
        trips.setdefault(e.road_name, set()).add((e.device_id, e.date))
    out = []
    for i, e in enumerate(events):
        if counted[i]:
            d = row_distances(lat[i], lon[i], lat[counted], lon[counted])
            out.append((i, int(np.sum(d <= 1.0)), len(trips[e.road_name])))
    return out


def random_dataset(rng, n):
    # a few hotspots a couple of km wide, sometimes near the antimeridian or a pole
    kind = rng.integers(0, 10)
    if kind == 0:
        base = (rng.uniform(-60, 60), 179.99)
    elif kind == 1:
        base = (89.99, rng.uniform(-180, 180))
    else:
        base = (rng.uniform(-70, 70), rng.uniform(-170, 170))
    centres = [(base[0] + rng.normal(0, 0.01), base[1] + rng.normal(0, 0.01)) for _ in range(3)]
    alarms = list(AlarmType)
    events = []
    for _ in range(n):
        clat, clon = centres[rng.integers(0, 3)]
        lat = float(np.clip(clat + rng.normal(0, 0.006), -90, 90))
        lon = float((clon + rng.normal(0, 0.006) + 180) % 360 - 180)
        events.append(
            make_event(
                device=f"bus{rng.integers(0, 5)}",
                alarm=alarms[rng.integers(0, 5)].value,
                when=f"2019-03-{rng.integers(1, 8):02d}T12:00:00",
                lat=lat,
                lon=lon,
                road=f"R{rng.integers(0, 4)}",
            )
        )
    return events


def test_criterion_1_geo_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    lat = rng.uniform(-90, 90, size=(10_000, 2))
    lon = rng.uniform(-180, 180, size=(10_000, 2))
    worst = max(
        abs(haversine_km(a, c, b, d) - cosine_law_km(a, c, b, d)) for (a, b), (c, d) in zip(lat, lon)
    )
    mismatches = 0
    sizes = rng.integers(1, 501, size=50)
    for n in sizes:
        events = random_dataset(rng, int(n))
        got = [(d.index, d.raw_count, d.trips) for d in warning_density(events)]
        mismatches += got != brute_density(events)
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-6 and mismatches == 0 and elapsed < 60
    detail = f"max |haversine - cosine law| = {worst:.2e} km over 10000 pairs; {mismatches}/50 density mismatches (n <= {sizes.max()}); {elapsed:.1f}s"
    assert record(1, "geo oracle equivalence", ok, detail), detail


# --- 2: gradients -------------------------------------------------------------------


def test_criterion_2_gradients():
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    x = rng.normal(size=(4, 14))
    y = rng.integers(0, 5, 4)
    results = {
        "logistic": check_gradients(LogisticRegression(14, 5, rng=rng), x, y),
        "ffnn 2x200": check_gradients(FeedForward(14, (200, 200), 5, rng=rng), x, y),
    }
    lstm = LstmClassifier(14, hidden=4, n_classes=5, rng=rng)
    batch = SequenceBatch.from_sequences([rng.normal(size=(3, 14)) for _ in range(3)])
    results["lstm h=4 T=3"] = check_gradients(lstm, batch, np.array([0, 2, 4]))
    gnn = GnnModel(14, hidden=8, rng=rng)
    graphs = [SessionGraph(g.session, rng.normal(size=(g.n_nodes, 14)), g.edges, g.label) for g in fake_graphs(3, rng=rng)]
    gb = GraphBatch.from_graphs(graphs)
    results["gnn h=8"] = check_gradients(gnn, gb, gb.labels - 1)
    elapsed = time.perf_counter() - t0
    worst = {k: max(v.values()) for k, v in results.items()}
    ok = all(v <= 1e-4 for v in worst.values()) and elapsed < 120
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f" (max rel. error); {elapsed:.1f}s"
    assert record(2, "gradient correctness", ok, detail), detail


# --- 3: PCA ---------------------------------------------------------------------------


def test_criterion_3_pca():
    rng = np.random.default_rng(303)
    recon = ortho = ratio_err = 0.0
    descending = True
    for k in range(100):
        p = 1 + k % 14
        a = rng.normal(size=(p, p))
        a = (a + a.T) / 2
        w, v = eigh_symmetric(a)
        recon = max(recon, np.linalg.norm(v @ np.diag(w) @ v.T - a, np.inf))
        ortho = max(ortho, np.max(np.abs(v.T @ v - np.eye(p))))
        data = rng.normal(size=(3 * p + 5, p)) @ rng.normal(size=(p, p))
        res = pca(DataMatrix(data, [f"f{j}" for j in range(p)]), p)
        ratio = res.explained_variance_ratio
        descending &= bool(np.all(np.diff(ratio) <= 1e-15))
        ortho = max(ortho, np.max(np.abs(res.components.T @ res.components - np.eye(p))))
        ratio_err = max(ratio_err, abs(ratio.sum() - 1))
    ok = recon < 1e-8 and ortho < 1e-8 and ratio_err < 1e-8 and descending
    detail = f"max ||V L V^T - A||_inf = {recon:.1e}, orthonormality {ortho:.1e}, |sum ratio - 1| = {ratio_err:.1e}, descending={descending}"
    assert record(3, "PCA suite", ok, detail), detail


# --- 4: safety index ----------------------------------------------------------------


def test_criterion_4_index_invariants():
    rng = np.random.default_rng(404)
    # monotonicity on random training sets and random query pairs
    mono_violations = 0
    for _ in range(200):
        train = [LocationDensity(i, int(c), int(t)) for i, (c, t) in enumerate(rng.integers(1, 1000, size=(int(rng.integers(1, 60)), 2)))]
        b = fit_index_binning(train)
        q = np.sort(rng.exponential(5.0, size=50))
        idx = [index_from_density(v, b) for v in q]
        mono_violations += int(np.any(np.diff(idx) < 0))
    # normalization invariance under uniform scaling of counts and trips
    scale_violations = 0
    for _ in range(200):
        pairs = rng.integers(1, 500, size=(int(rng.integers(1, 60)), 2))
        k = int(rng.integers(2, 50))
        base = [LocationDensity(i, int(c), int(t)) for i, (c, t) in enumerate(pairs)]
        scaled = [LocationDensity(i, int(c) * k, int(t) * k) for i, (c, t) in enumerate(pairs)]
        b1, b2 = fit_index_binning(base), fit_index_binning(scaled)
        scale_violations += [assign_safety_index(d, b1) for d in base] != [assign_safety_index(d, b2) for d in scaled]
    # quintile occupancy at n = 10,000 uniform densities
    dens = [LocationDensity(i, int(c), 1000) for i, c in enumerate(rng.integers(1, 100_001, 10_000))]
    b = fit_index_binning(dens)
    occ = np.bincount([assign_safety_index(d, b) for d in dens], minlength=6)[1:] / len(dens)
    ok = mono_violations == 0 and scale_violations == 0 and np.all(np.abs(occ - 0.2) <= 0.02)
    detail = f"monotonicity violations {mono_violations}/200, scaling violations {scale_violations}/200, occupancy {np.round(occ, 4).tolist()}"
    assert record(4, "safety-index invariants", ok, detail), detail
    assert isinstance(b, IndexBinning)


# --- 5: GNN structure -----------------------------------------------------------------


def test_criterion_5_gnn_structure():
    rng = np.random.default_rng(505)
    model = GnnModel(14, hidden=64, rng=rng)
    graphs = [SessionGraph(g.session, rng.normal(size=(g.n_nodes, 14)), g.edges, g.label) for g in fake_graphs(40, rng=rng)]
    perm_err = 0.0
    for g in graphs:
        perm = rng.permutation(g.n_nodes)
        inv = np.argsort(perm)
        pg = SessionGraph(g.session, g.x[perm], inv[g.edges], g.label)
        perm_err = max(perm_err, np.max(np.abs(gnn_forward(model, GraphBatch.from_graphs([g])) - gnn_forward(model, GraphBatch.from_graphs([pg])))))
    batched = gnn_forward(model, GraphBatch.from_graphs(graphs))
    single = np.vstack([gnn_forward(model, GraphBatch.from_graphs([g])) for g in graphs])
    batch_err = float(np.max(np.abs(batched - single)))
    model.params["head_W"][:] = 0.0
    model.params["head_b"][:] = 0.0
    zero_err = float(np.max(np.abs(gnn_forward(model, GraphBatch.from_graphs(graphs)) - 0.2)))
    ok = perm_err < 1e-10 and batch_err < 1e-10 and zero_err <= 1e-12
    detail = f"permutation {perm_err:.1e}, batched vs single {batch_err:.1e}, zero head |p - 0.2| {zero_err:.1e}"
    assert record(5, "GNN structural properties", ok, detail), detail


# --- 6: synthetic benchmark ---------------------------------------------------------


@pytest.mark.slow
def test_criterion_6_synthetic_benchmark():
    verdict = benchmark(PipelineConfig())
    ok = verdict.passed and verdict.numbers["seconds"] <= 600
    detail = verdict.detail
    if verdict.numbers["seconds"] > 600:
        detail += " exceeded 10 min"
    assert record(6, "synthetic benchmark", ok, detail), detail


# --- 7: train dynamics -----------------------------------------------------------------


@pytest.mark.slow
def test_criterion_7_train_dynamics():
    verdict = train_dynamics(PipelineConfig())
    assert record(7, "GNN train dynamics", verdict.passed, verdict.detail), verdict.detail


# --- 8: end-to-end determinism --------------------------------------------------------


def run_pipeline(out: Path, config: Path) -> int:
    base = ["--config", str(config), "--out", str(out)]
    codes = [main(["synth", *base])]
    codes += [main([step, *base, "--offline"]) for step in ("ingest", "enrich", "label", "pca", "report")]
    for kind in MODEL_KINDS:
        codes.append(main(["train", *base, "--model", kind]))
        codes.append(main(["eval", *base, "--model", kind]))
    return max(codes)


@pytest.mark.slow
def test_criterion_8_end_to_end_determinism(tmp_path):
    config = tmp_path / "pipeline.yaml"
    config.write_text(yaml.safe_dump(PipelineConfig().to_dict(include_paths=False)), encoding="utf-8")
    codes = [run_pipeline(tmp_path / name, config) for name in ("a", "b")]
    a, b = tmp_path / "a", tmp_path / "b"
    names = sorted(p.name for p in a.glob("manifest_*.json")) + sorted(p.name for p in a.glob("metrics_*.json"))
    differing = [n for n in names if not (b / n).exists() or (a / n).read_bytes() != (b / n).read_bytes()]
    digest = hashlib.sha256(b"".join((a / n).read_bytes() for n in names)).hexdigest()[:12]
    # six step manifests, train + eval manifests and a metrics file per model
    expected = 6 + 3 * len(MODEL_KINDS)
    ok = codes == [0, 0] and not differing and len(names) == expected
    detail = f"exit codes {codes}; {len(names)} manifest/metric files, {len(differing)} differ; combined sha256 {digest}"
    assert record(8, "end-to-end determinism", ok, detail), detail
