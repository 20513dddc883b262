"""``roadsafety`` command line: synth, ingest, enrich, label, pca, report, train, eval.

Every subcommand reads from and writes into the output directory (``--out``)
and leaves a ``manifest_<step>.json`` with sha256 hashes of its inputs and
outputs, the config hash and the seed. Failures exit nonzero with one JSON
line on stderr: ``{"error": "<Type>", "message": "..."}``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .analysis import DataMatrix, biplot_svg, feature_correlations, pca, road_risk_report, standardize
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import MODEL_KINDS, ConfigError, PipelineConfig, load_config
from .data_model import AlertEvent, format_float, make_session_id, parse_alert_csv, write_alert_csv
from .enrich import API_KEY_ENV, EnrichmentCache, FixtureClient, HttpEnrichmentClient, build_feature_vector, enrich_events
from .geo import IndexBinning, LabeledEvent, LocationDensity
from .nn.train import write_log
from .pipeline import binarize, evaluate, label_and_graph, make_splits, select, train_model
from .session_graph import read_graphs, standardize_graphs, write_graphs
from .synth import generate

log = logging.getLogger("roadsafety")

LABEL_COLUMNS = ("raw_count", "trips", "density", "safety_index")


class MissingInput(FileNotFoundError):
    pass


class Step:
    """Tracks inputs/outputs of one subcommand and writes its manifest."""

    def __init__(self, name: str, config: PipelineConfig):
        self.name = name
        self.config = config
        self.out = config.out_dir()
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}

    def _label(self, path: Path) -> str:
        try:
            return path.resolve().relative_to(self.out.resolve()).as_posix()
        except ValueError:
            return str(path)

    def need(self, path: str | Path) -> Path:
        path = Path(path)
        if not path.is_file():
            raise MissingInput(f"missing input: {path}")
        self.inputs[self._label(path)] = _sha256(path)
        return path

    def path(self, name: str) -> Path:
        return self.out / name

    def wrote(self, path: Path) -> None:
        self.outputs[self._label(path)] = _sha256(path)

    def finish(self, suffix: str = "") -> Path:
        manifest = {
            "step": self.name,
            "version": __version__,
            "seed": self.config.seed,
            "config_hash": self.config.hash(),
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": dict(sorted(self.outputs.items())),
        }
        path = self.path(f"manifest_{self.name}{suffix}.json")
        _write_json(path, manifest)
        return path


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _parse_clean(step: Step, path: Path, config: PipelineConfig) -> list[AlertEvent]:
    events, errors = parse_alert_csv(step.need(path), config.schema, config.utc_offset_hours)
    if errors:
        raise ValueError(f"{path} has {len(errors)} invalid rows, first: {errors[0]}")
    return events


# --- subcommands -------------------------------------------------------------


def cmd_synth(config: PipelineConfig, args) -> None:
    step = Step("synth", config)
    ds = generate(config.synth_config())
    for path in ds.write(step.out).values():
        step.wrote(path)
    print(f"synth: {len(ds.events)} events on {len(ds.roads)} roads -> {step.out}")
    step.finish()


def cmd_ingest(config: PipelineConfig, args) -> None:
    step = Step("ingest", config)
    src = Path(config.paths.input) if config.paths.input else step.path("raw.csv")
    events, errors = parse_alert_csv(step.need(src), config.schema, config.utc_offset_hours)
    write_alert_csv(step.path("events.csv"), events)
    _write_csv(step.path("ingest_errors.csv"), ("line", "field", "raw", "message"), [(e.line, e.field, e.raw, e.message) for e in errors])
    for name in ("events.csv", "ingest_errors.csv"):
        step.wrote(step.path(name))
    print(f"ingest: {len(events)} events, {len(errors)} row errors")
    step.finish()


def cmd_enrich(config: PipelineConfig, args) -> None:
    step = Step("enrich", config)
    events = _parse_clean(step, step.path("events.csv"), config)
    if config.offline:
        fixtures = Path(config.paths.fixtures) if config.paths.fixtures else step.path("fixtures.json")
        client = FixtureClient.from_file(step.need(fixtures))
    else:
        if not os.environ.get(API_KEY_ENV):
            raise ConfigError(f"live enrichment needs ${API_KEY_ENV}; use --offline for fixtures")
        client = HttpEnrichmentClient()
    cache_path = Path(config.paths.cache) if config.paths.cache else step.path("enrich_cache.jsonl")
    cache = EnrichmentCache.load(cache_path)
    res = enrich_events(events, client, cache, max_workers=config.max_workers, retries=config.retries)
    write_alert_csv(step.path("enriched.csv"), res.enriched)
    _write_csv(
        step.path("rejected.csv"),
        ("line", "deviceId", "recordedAt", "error"),
        [(e.line, e.device_id, e.timestamp.isoformat(), str(err)) for e, err in res.rejected],
    )
    for p in (step.path("enriched.csv"), step.path("rejected.csv")):
        step.wrote(p)
    if cache_path.exists():
        step.wrote(cache_path)
    print(f"enrich: {len(res.enriched)} enriched, {len(res.rejected)} rejected, {len(cache)} cache entries")
    step.finish()


def cmd_label(config: PipelineConfig, args) -> None:
    step = Step("label", config)
    events = _parse_clean(step, step.path("enriched.csv"), config)
    binning = None
    if config.paths.binning:
        with open(step.need(config.paths.binning), encoding="utf-8") as fh:
            binning = IndexBinning.from_dict(json.load(fh))
    labeled, binning, graphs = label_and_graph(events, config, binning)
    by_index = {le.density.index: le for le in labeled}
    extra = {name: [] for name in LABEL_COLUMNS}
    for i in range(len(events)):
        le = by_index.get(i)
        extra["raw_count"].append(le.density.raw_count if le else "")
        extra["trips"].append(le.density.trips if le else "")
        extra["density"].append(le.density.normalized_density if le else "")
        extra["safety_index"].append(le.safety_index if le else "")
    write_alert_csv(step.path("labeled.csv"), events, extra)
    _write_json(step.path("binning.json"), {**binning.to_dict(), "seed": config.seed, "radius_km": config.radius_km})
    write_graphs(step.path("graphs.jsonl"), graphs)
    for name in ("labeled.csv", "binning.json", "graphs.jsonl"):
        step.wrote(step.path(name))
    counts = np.bincount([g.label for g in graphs], minlength=6)[1:]
    print(f"label: {len(labeled)} counted events, {len(graphs)} sessions, labels 1-5: {counts.tolist()}")
    step.finish()


def read_labeled(step: Step, config: PipelineConfig) -> tuple[list[LabeledEvent], list[AlertEvent]]:
    path = step.path("labeled.csv")
    events = _parse_clean(step, path, config)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) != len(events):
        raise ValueError(f"{path}: row count mismatch")
    labeled = []
    for i, (e, row) in enumerate(zip(events, rows)):
        if row.get("safety_index", "") == "":
            continue
        d = LocationDensity(i, int(row["raw_count"]), int(row["trips"]))
        labeled.append(LabeledEvent(e, d, int(row["safety_index"])))
    if not labeled:
        raise ValueError(f"{path} has no labeled events")
    return labeled, events


def cmd_pca(config: PipelineConfig, args) -> None:
    step = Step("pca", config)
    labeled, _ = read_labeled(step, config)
    cols = list(config.feature_order)
    x = np.vstack([build_feature_vector(le.event, cols) for le in labeled])
    m = standardize(DataMatrix(x, cols))
    k = min(config.pca_k, len(cols))
    res = pca(m, k)
    names = [f"PC{j + 1}" for j in range(k)]
    _write_csv(step.path("pca_loadings.csv"), ["feature"] + names, [[c] + [format_float(v) for v in res.components[i]] for i, c in enumerate(cols)])
    _write_csv(
        step.path("pca_scores.csv"),
        ["session", "safety_index"] + names,
        [[_session_str(le)] + [le.safety_index] + [format_float(v) for v in res.scores[i]] for i, le in enumerate(labeled)],
    )
    _write_json(
        step.path("pca_variance.json"),
        {
            "note": "features standardized (sample std) before PCA",
            "seed": config.seed,
            "explained_variance": res.explained_variance.tolist(),
            "explained_variance_ratio": res.explained_variance_ratio.tolist(),
            "total_variance": res.total_variance,
            "constant_columns": m.constant_columns,
        },
    )
    corr = feature_correlations(m, [le.safety_index for le in labeled])
    _write_csv(step.path("correlations.csv"), ["feature", "pearson_r"], [[c, format_float(corr[c])] for c in cols])
    outputs = ["pca_loadings.csv", "pca_scores.csv", "pca_variance.json", "correlations.csv"]
    if k >= 2:
        step.path("pca_biplot.svg").write_text(biplot_svg(res), encoding="utf-8")
        outputs.append("pca_biplot.svg")
    for name in outputs:
        step.wrote(step.path(name))
    ratio = ", ".join(f"{r:.3f}" for r in res.explained_variance_ratio)
    print(f"pca: {len(labeled)} rows x {len(cols)} features, explained variance ratio [{ratio}]")
    step.finish()


def _session_str(le: LabeledEvent) -> str:
    return str(make_session_id(le.event))


def cmd_report(config: PipelineConfig, args) -> None:
    step = Step("report", config)
    labeled, events = read_labeled(step, config)
    rows = road_risk_report(labeled, events)
    _write_csv(
        step.path("road_report.csv"),
        ("road", "warnings", "trips", "normalized_warnings", "percent", "average_alerts", "mean_safety_index"),
        [
            (r.road, r.warnings, r.trips, format_float(r.normalized_warnings), f"{r.percent:.4f}", format_float(r.average_alerts), format_float(r.mean_safety_index))
            for r in rows
        ],
    )
    step.wrote(step.path("road_report.csv"))
    print(f"report: {len(rows)} roads; most warning-dense: " + ", ".join(f"{r.road} {r.percent:.1f}%" for r in rows[:3]))
    step.finish()


def _need_model(args) -> str:
    if not args.model:
        raise ConfigError(f"--model is required ({'|'.join(MODEL_KINDS)})")
    return args.model


def cmd_train(config: PipelineConfig, args) -> None:
    kind = _need_model(args)
    step = Step("train", config)
    graphs = read_graphs(step.need(step.path("graphs.jsonl")))
    splits = make_splits(graphs, config)
    result = train_model(kind, splits, config)
    write_log(step.path(f"train_log_{kind}.csv"), result.log)
    ckpt = Checkpoint(kind, result.model, splits.scaler, config.seed, config.hash(), result.best_epoch, splits.names(), result.optimizer)
    save_checkpoint(step.path(f"checkpoint_{kind}.json"), ckpt)
    for name in (f"train_log_{kind}.csv", f"checkpoint_{kind}.json"):
        step.wrote(step.path(name))
    b = result.best
    print(f"train {kind}: {len(result.log)} epochs, best epoch {b.epoch}: train_auc {b.train_auc:.4f} val_auc {b.val_auc:.4f} test_auc {b.test_auc:.4f}")
    step.finish(f"_{kind}")


def cmd_eval(config: PipelineConfig, args) -> None:
    kind = _need_model(args)
    step = Step("eval", config)
    ckpt = load_checkpoint(step.need(step.path(f"checkpoint_{kind}.json")))
    if ckpt.kind != kind:
        raise ValueError(f"checkpoint holds a {ckpt.kind} model, not {kind}")
    graphs = read_graphs(step.need(step.path("graphs.jsonl")))
    if args.split != "all":
        graphs = select(graphs, ckpt.splits[args.split])
    if not graphs:
        raise ValueError(f"no sessions in split {args.split!r}")
    graphs = standardize_graphs(graphs, ckpt.scaler)
    if config.model(kind).binary:
        graphs = binarize(graphs, config.binary_threshold)
    ev = evaluate(kind, ckpt.model, graphs)
    _write_json(step.path(f"metrics_{kind}.json"), {"model": kind, "split": args.split, "seed": config.seed, "best_epoch": ckpt.best_epoch, **ev.to_dict()})
    step.wrote(step.path(f"metrics_{kind}.json"))
    print(f"eval {kind} on {args.split} ({ev.n_sessions} sessions)")
    print(f"macro_auc {ev.macro_auc:.6f}")
    print("per_class_auc " + " ".join(f"{c}:{a:.4f}" for c, a in ev.per_class.items()))
    print("confusion (rows = true index, columns = predicted)")
    for c, row in enumerate(ev.confusion, start=1):
        print(f"  {c} " + " ".join(f"{v:5d}" for v in row))
    step.finish(f"_{kind}")


COMMANDS: dict[str, Callable] = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "enrich": cmd_enrich,
    "label": cmd_label,
    "pca": cmd_pca,
    "report": cmd_report,
    "train": cmd_train,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--out", help="output directory (overrides paths.out)")
    common.add_argument("--seed", type=int, help="pipeline seed (overrides config)")
    common.add_argument("--offline", action="store_true", default=None, help="replay fixtures, never touch the network")
    common.add_argument("--model", choices=MODEL_KINDS, help="model for train/eval")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="roadsafety", description="Safety-index pipeline over bus alert data.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "eval":
            p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    return parser


def resolve_config(args) -> PipelineConfig:
    """Defaults < config file < flags."""
    config = load_config(args.config)
    if args.out is not None:
        config.paths = replace(config.paths, out=args.out)
    if args.seed is not None:
        config.seed = args.seed
    if args.offline:
        config.offline = True
    return config


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        config = resolve_config(args)
        COMMANDS[args.command](config, args)
    except Exception as exc:  # report every failure as one machine-readable line
        if args.verbose:
            log.exception("command failed")
        message = str(exc).replace("\n", " ")
        print(json.dumps({"error": type(exc).__name__, "command": args.command, "message": message}), file=sys.stderr)
        if isinstance(exc, ConfigError):
            return 2
        if isinstance(exc, MissingInput):
            return 3
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
