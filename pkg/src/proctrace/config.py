"""Run configuration loaded from YAML or JSON."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from .calibration import DEFAULT_DELTA_E, DEFAULT_DELTA_W, DEFAULT_HORIZON_CUTS, Method
from .detectors import DetectorConfig
from .scoring import ScoringConfig

CONFIG_ENV = "PROCTRACE_CONFIG"


class ConfigError(ValueError):
    pass


def stage_seed(seed: int, stage: str) -> int:
    """Independent substream seed for a named pipeline stage."""
    digest = hashlib.sha256(f"{seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass(frozen=True)
class CalibrationSettings:
    method: Method = Method.HARD_THRESHOLD
    delta_w: float = DEFAULT_DELTA_W
    delta_e: float = DEFAULT_DELTA_E
    shrinkage_m: float = 10.0
    n_buckets: int = 5
    min_context_count: int = 30
    horizon_cuts: tuple[int, int] = DEFAULT_HORIZON_CUTS

    def __post_init__(self):
        if not 0.0 <= self.delta_w < self.delta_e <= 1.0:
            raise ConfigError(f"need 0 <= delta_w < delta_e <= 1, got {self.delta_w}, {self.delta_e}")
        if self.shrinkage_m <= 0 or self.n_buckets < 1 or self.min_context_count < 1:
            raise ConfigError("shrinkage_m, n_buckets and min_context_count must be positive")
        if not 0 < self.horizon_cuts[0] < self.horizon_cuts[1]:
            raise ConfigError("horizon_cuts must be increasing positive integers")


@dataclass(frozen=True)
class SplitSettings:
    ratios: tuple[float, float, float] = (0.4, 0.2, 0.4)  # development, calibration, evaluation
    strata: tuple[str, ...] = ("source", "outcome")
    min_per_split: int = 0

    def __post_init__(self):
        if len(self.ratios) != 3 or any(r < 0 for r in self.ratios) or abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ConfigError(f"split ratios must be three non-negative numbers summing to 1, got {self.ratios}")

    def sizes(self, n: int) -> list[int]:
        dev = round(n * self.ratios[0])
        cal = round(n * self.ratios[1])
        return [dev, cal, n - dev - cal]


@dataclass(frozen=True)
class EvaluationSettings:
    bootstrap_replicates: int = 1000
    ece_bins: int = 10
    eta_grid: tuple[float, ...] = tuple(i / 10 for i in range(11))
    confidence: float = 0.95

    def __post_init__(self):
        if self.bootstrap_replicates < 1 or self.ece_bins < 1:
            raise ConfigError("bootstrap_replicates and ece_bins must be >= 1")
        if any(not 0.0 <= e <= 1.0 for e in self.eta_grid) or not self.eta_grid:
            raise ConfigError("eta_grid must be a non-empty list inside [0, 1]")


@dataclass(frozen=True)
class RunConfig:
    detectors: DetectorConfig = field(default_factory=DetectorConfig)
    calibration: CalibrationSettings = field(default_factory=CalibrationSettings)
    scoring: ScoringConfig = field(default_factory=ScoringConfig)
    split: SplitSettings = field(default_factory=SplitSettings)
    evaluation: EvaluationSettings = field(default_factory=EvaluationSettings)
    seed: int = 0
    strict: bool = False
    model_path: str | None = None

    @classmethod
    def from_dict(cls, d: Mapping[str, Any] | None) -> "RunConfig":
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            kw: dict[str, Any] = {}
            if "detectors" in d:
                kw["detectors"] = DetectorConfig.from_dict(d["detectors"])
            if "calibration" in d:
                c = dict(d["calibration"])
                if "method" in c:
                    c["method"] = Method(c["method"])
                if "horizon_cuts" in c:
                    c["horizon_cuts"] = tuple(c["horizon_cuts"])
                kw["calibration"] = _build(CalibrationSettings, c, "calibration")
            if "scoring" in d:
                kw["scoring"] = _build(ScoringConfig, dict(d["scoring"]), "scoring")
            if "split" in d:
                s = dict(d["split"])
                for k in ("ratios", "strata"):
                    if k in s:
                        s[k] = tuple(s[k])
                kw["split"] = _build(SplitSettings, s, "split")
            if "evaluation" in d:
                e = dict(d["evaluation"])
                if "eta_grid" in e:
                    e["eta_grid"] = tuple(float(x) for x in e["eta_grid"])
                kw["evaluation"] = _build(EvaluationSettings, e, "evaluation")
            for k in ("seed", "strict", "model_path"):
                if k in d:
                    kw[k] = d[k]
            return cls(**kw)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        cal = asdict(self.calibration)
        cal["method"] = self.calibration.method.value
        cal["horizon_cuts"] = list(self.calibration.horizon_cuts)
        return {
            "detectors": self.detectors.to_dict(),
            "calibration": cal,
            "scoring": asdict(self.scoring),
            "split": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self.split).items()},
            "evaluation": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self.evaluation).items()},
            "seed": self.seed,
            "strict": self.strict,
            "model_path": self.model_path,
        }

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **kw)


def _build(cls, data: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in {section}: {sorted(unknown)}")
    return cls(**data)


def load_config(path: str | os.PathLike | None = None) -> RunConfig:
    """Load from ``path``, else from $PROCTRACE_CONFIG, else defaults."""
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return RunConfig()
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    data = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"config {p} must hold a mapping")
    return RunConfig.from_dict(data)
