"""Experiment definitions behind the acceptance suite and the scripts in ``scripts/``.

Each experiment takes a base :class:`PipelineConfig`, derives its variant and
returns plain numbers plus a verdict, so a script and a test run exactly the
same code.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

from .config import MODEL_KINDS, PipelineConfig
from .pipeline import make_splits, run_benchmark, synthetic_graphs, train_model

GNN_MIN_AUC = 0.80
GNN_MARGIN = 0.10
FLOOR_AUC = 0.45
ABLATION_GAP = 0.05
DYNAMICS_EPOCHS = 60
OVERFIT_TRAIN_AUC = 0.95
OVERFIT_GAP = 0.10
PLATEAU_GAIN = 0.05


@dataclass
class Verdict:
    name: str
    passed: bool
    detail: str
    numbers: dict = field(default_factory=dict)

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def benchmark(config: PipelineConfig | None = None) -> Verdict:
    """All four models on the default synthetic set; checks the ranking claims."""
    config = config or PipelineConfig()
    t0 = time.perf_counter()
    res = run_benchmark(config, MODEL_KINDS)
    auc = res.test_auc()
    elapsed = time.perf_counter() - t0
    checks = {
        f"gnn >= {GNN_MIN_AUC}": auc["gnn"] >= GNN_MIN_AUC,
        f"gnn >= logistic + {GNN_MARGIN}": auc["gnn"] >= auc["logistic"] + GNN_MARGIN,
        "lstm >= logistic": auc["lstm"] >= auc["logistic"],
        f"all >= {FLOOR_AUC}": min(auc.values()) >= FLOOR_AUC,
    }
    detail = " ".join(f"{k}={v:.4f}" for k, v in auc.items()) + f" ({elapsed:.0f}s)"
    failed = [k for k, ok in checks.items() if not ok]
    if failed:
        detail += " failed: " + "; ".join(failed)
    return Verdict("synthetic benchmark", not failed, detail, {"test_auc": auc, "seconds": elapsed, "checks": checks})


def ablation_config(config: PipelineConfig | None = None) -> PipelineConfig:
    config = config or PipelineConfig()
    return replace(config, synth=replace(config.synth, seq_signal=0.0))


def ablation(config: PipelineConfig | None = None) -> Verdict:
    """With no sequential plant the GNN should lose its edge over logistic regression."""
    cfg = ablation_config(config)
    auc = run_benchmark(cfg, ("gnn", "logistic")).test_auc()
    gap = auc["gnn"] - auc["logistic"]
    ok = gap < ABLATION_GAP
    return Verdict("seq_signal=0 ablation", ok, f"gnn={auc['gnn']:.4f} logistic={auc['logistic']:.4f} gap={gap:.4f} (< {ABLATION_GAP})", {"test_auc": auc, "gap": gap})


def dynamics_config(config: PipelineConfig | None = None) -> PipelineConfig:
    """Weaker plant and fewer sessions: enough label noise for the GNN to memorize."""
    config = config or PipelineConfig()
    models = dict(config.models)
    models["gnn"] = replace(config.model("gnn"), epochs=DYNAMICS_EPOCHS, patience=None)
    return replace(config, synth=replace(config.synth, seq_signal=0.6, sessions_per_road=40), models=models)


def train_dynamics(config: PipelineConfig | None = None) -> Verdict:
    cfg = dynamics_config(config)
    splits = make_splits(synthetic_graphs(cfg), cfg)
    result = train_model("gnn", splits, cfg)
    log = result.log
    train_auc = log[-1].train_auc
    val = [r.val_auc for r in log]
    early, late = max(val[:40]), max(val[40:])
    checks = {
        f"train auc at epoch {log[-1].epoch} > {OVERFIT_TRAIN_AUC}": len(log) == DYNAMICS_EPOCHS and train_auc > OVERFIT_TRAIN_AUC,
        f"val gain after epoch 40 < {PLATEAU_GAIN}": late - early < PLATEAU_GAIN,
        f"train - val >= {OVERFIT_GAP}": train_auc - late >= OVERFIT_GAP,
    }
    failed = [k for k, ok in checks.items() if not ok]
    first = next((r.epoch for r in log if r.train_auc > OVERFIT_TRAIN_AUC), None)
    detail = f"train={train_auc:.4f} (first > {OVERFIT_TRAIN_AUC} at epoch {first}) val best<=40={early:.4f} val best 41-60={late:.4f}"
    if failed:
        detail += " failed: " + "; ".join(failed)
    return Verdict("GNN train dynamics", not failed, detail, {"log": log, "checks": checks})
