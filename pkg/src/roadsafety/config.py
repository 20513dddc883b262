"""Pipeline configuration: one YAML key-value file, overridden by CLI flags.

Precedence, lowest to highest: dataclass defaults, the ``--config`` file,
command-line flags. Paths are excluded from the config hash so that moving
the output directory does not change it.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .data_model import AlarmType
from .enrich import FEATURE_ORDER
from .nn.train import TrainConfig
from .synth import SynthConfig

MODEL_KINDS = ("logistic", "ffnn", "lstm", "gnn")


class ConfigError(ValueError):
    pass


@dataclass
class Paths:
    input: str | None = None  # raw alert CSV; defaults to <out>/raw.csv
    cache: str | None = None  # enrichment cache; defaults to <out>/enrich_cache.jsonl
    fixtures: str | None = None  # offline fixtures; defaults to <out>/fixtures.json
    out: str = "out"
    binning: str | None = None  # existing sidecar to reuse instead of refitting


@dataclass
class ModelConfig:
    epochs: int = 100
    lr: float = 1e-3
    batch_size: int = 20
    patience: int | None = 10
    hidden: int = 64
    ffnn_hidden: tuple[int, ...] = (200, 200)
    depth: int = 2
    # train on binary_label(index) instead of the 5-class index
    binary: bool = False

    def train_config(self, seed: int, binary: bool = False) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            lr=self.lr,
            batch_size=self.batch_size,
            patience=self.patience,
            seed=seed,
            hidden=self.hidden,
            ffnn_hidden=tuple(self.ffnn_hidden),
            depth=self.depth,
            binary=binary,
        )


def _default_models() -> dict[str, ModelConfig]:
    return {
        "logistic": ModelConfig(batch_size=64),
        "ffnn": ModelConfig(batch_size=64),
        "lstm": ModelConfig(patience=20),
        "gnn": ModelConfig(patience=20),
    }


@dataclass
class PipelineConfig:
    seed: int = 0
    paths: Paths = field(default_factory=Paths)
    schema: dict[str, str] = field(default_factory=dict)
    utc_offset_hours: float = 0.0
    feature_order: tuple[str, ...] = FEATURE_ORDER
    counted_alarms: tuple[str, ...] = ("HMW", "PCW", "FCW")
    radius_km: float = 1.0
    binary_threshold: int = 3
    self_loops: bool = False
    split: tuple[float, float, float] = (0.7, 0.15, 0.15)
    offline: bool = False
    max_workers: int = 4
    retries: int = 2
    pca_k: int = 2
    synth: SynthConfig = field(default_factory=SynthConfig)
    models: dict[str, ModelConfig] = field(default_factory=_default_models)

    def validate(self) -> None:
        # 14 names by default; any other non-empty subset counts as an explicit override
        if not self.feature_order or len(set(self.feature_order)) != len(self.feature_order):
            raise ConfigError("feature_order must be non-empty and free of duplicates")
        bad = set(self.feature_order) - set(FEATURE_ORDER)
        if bad:
            raise ConfigError(f"unknown features: {sorted(bad)}")
        for name in self.counted_alarms:
            try:
                AlarmType(name)
            except ValueError:
                raise ConfigError(f"unknown alarm type in counted_alarms: {name!r}") from None
        if self.radius_km <= 0:
            raise ConfigError("radius_km must be positive")
        if len(self.split) != 3 or abs(sum(self.split) - 1.0) > 1e-9 or min(self.split) < 0:
            raise ConfigError(f"split fractions must be three non-negative numbers summing to 1: {self.split}")
        if set(self.models) - set(MODEL_KINDS):
            raise ConfigError(f"unknown model sections: {sorted(set(self.models) - set(MODEL_KINDS))}")
        if self.max_workers < 1 or self.retries < 0:
            raise ConfigError("max_workers must be >= 1 and retries >= 0")

    def counted(self) -> frozenset[AlarmType]:
        return frozenset(AlarmType(a) for a in self.counted_alarms)

    def synth_config(self) -> SynthConfig:
        # the pipeline seed drives generation too
        return replace(self.synth, seed=self.seed)

    def model(self, kind: str) -> ModelConfig:
        if kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model {kind!r}")
        return self.models.get(kind) or _default_models()[kind]

    def out_dir(self) -> Path:
        return Path(self.paths.out)

    def to_dict(self, include_paths: bool = True) -> dict:
        d = {
            "seed": self.seed,
            "schema": dict(self.schema),
            "utc_offset_hours": self.utc_offset_hours,
            "feature_order": list(self.feature_order),
            "counted_alarms": list(self.counted_alarms),
            "radius_km": self.radius_km,
            "binary_threshold": self.binary_threshold,
            "self_loops": self.self_loops,
            "split": list(self.split),
            "offline": self.offline,
            "max_workers": self.max_workers,
            "retries": self.retries,
            "pca_k": self.pca_k,
            "synth": {k: v for k, v in self.synth_config().to_dict().items() if k != "seed"},
            "models": {k: {**asdict(m), "ffnn_hidden": list(m.ffnn_hidden)} for k, m in sorted(self.models.items())},
        }
        if include_paths:
            d["paths"] = asdict(self.paths)
        return d

    def hash(self) -> str:
        """sha256 of the canonical JSON form, paths excluded."""
        blob = json.dumps(self.to_dict(include_paths=False), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    @classmethod
    def from_dict(cls, data: dict | None) -> "PipelineConfig":
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls()
        try:
            if "paths" in data:
                cfg.paths = _build(Paths, data.pop("paths"), "paths")
            if "synth" in data:
                section = data.pop("synth") or {}
                if "seed" in section:
                    raise ConfigError("synth.seed is not configurable; the top-level seed drives generation")
                cfg.synth = SynthConfig.from_dict({**cfg.synth.to_dict(), **section})
            if "models" in data:
                models = _default_models()
                for kind, section in (data.pop("models") or {}).items():
                    if kind not in MODEL_KINDS:
                        raise ConfigError(f"unknown model section {kind!r}")
                    base = asdict(models[kind])
                    base.update(section or {})
                    base["ffnn_hidden"] = tuple(base["ffnn_hidden"])
                    models[kind] = _build(ModelConfig, base, f"models.{kind}")
                cfg.models = models
            for key in ("feature_order", "counted_alarms", "split"):
                if key in data:
                    data[key] = tuple(data[key])
            cfg = replace(cfg, **data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        cfg.validate()
        return cfg


def _build(cls, section, where: str):
    if not isinstance(section, dict):
        raise ConfigError(f"{where} must be a mapping")
    names = {f.name for f in fields(cls)}
    unknown = set(section) - names
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    return cls(**section)


def load_config(path: str | Path | None = None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}".replace("\n", " ")) from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError("config file must hold a key-value mapping")
    return PipelineConfig.from_dict(data)


def dump_config(cfg: PipelineConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True)
