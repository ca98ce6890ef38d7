"""Score-to-risk calibration, severity banding and calibration-quality measures."""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

from .detectors import DEFECTS, DefectClass, Dimension, EvidenceRecord, RawFinding
from .trajectory import Trajectory

MODEL_SCHEMA = "calibration-model/1"

DEFAULT_DELTA_W = 0.4
DEFAULT_DELTA_E = 0.8
DEFAULT_HORIZON_CUTS = (50, 200)


class Method(str, Enum):
    HARD_THRESHOLD = "hard_threshold"
    BETA_SMOOTHED = "beta_smoothed"
    MONOTONE_MAP = "monotone_map"


class Severity(str, Enum):
    NONE = "none"
    WARNING = "warning"
    ERROR = "error"


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class CalibrationContext:
    source: str
    horizon_bucket: str

    @property
    def key(self) -> str:
        return f"{self.source}|{self.horizon_bucket}"


def horizon_bucket(n_events: int, cuts: Sequence[int] = DEFAULT_HORIZON_CUTS) -> str:
    short, medium = cuts
    if n_events < short:
        return "short"
    if n_events < medium:
        return "medium"
    return "long"


def context_of(t: Trajectory, cuts: Sequence[int] = DEFAULT_HORIZON_CUTS) -> CalibrationContext:
    return CalibrationContext(t.source.value, horizon_bucket(len(t.events), cuts))


def score_bucket(score: float, n_buckets: int) -> int:
    return min(int(score * n_buckets), n_buckets - 1)


# --- isotonic fit -----------------------------------------------------------------

def pav_fit(scores: Sequence[float], labels: Sequence[float]) -> tuple[list[float], list[float]]:
    """Least-squares non-decreasing step function via pool-adjacent-violators.

    Returns (block start scores, block values); both sorted by score.
    """
    pts: dict[float, list[float]] = {}
    for s, y in zip(scores, labels):
        acc = pts.setdefault(float(s), [0.0, 0.0])
        acc[0] += y
        acc[1] += 1.0
    # blocks of [start, total, weight]
    blocks: list[list[float]] = []
    for s in sorted(pts):
        total, weight = pts[s]
        blocks.append([s, total, weight])
        while len(blocks) > 1 and blocks[-2][1] / blocks[-2][2] >= blocks[-1][1] / blocks[-1][2]:
            start, tot, w = blocks[-2]
            blocks[-2:] = [[start, tot + blocks[-1][1], w + blocks[-1][2]]]
    return [b[0] for b in blocks], [b[1] / b[2] for b in blocks]


def step_value(starts: Sequence[float], values: Sequence[float], score: float) -> float:
    pos = bisect.bisect_right(starts, score) - 1
    return values[max(pos, 0)]


# --- models --------------------------------------------------------------------------

@dataclass(frozen=True)
class CalibrationModel:
    defect: DefectClass
    method: Method
    threshold: float = 0.5
    family_prior: float = 0.5
    shrinkage_m: float = 10.0
    n_buckets: int = 5
    # beta_smoothed: (context key, bucket) -> (positives, count)
    cells: dict[tuple[str, int], tuple[int, int]] = field(default_factory=dict)
    # monotone_map: context key ("*" pooled) -> (starts, values)
    maps: dict[str, tuple[tuple[float, ...], tuple[float, ...]]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "defect": self.defect.value,
            "method": self.method.value,
            "threshold": self.threshold,
            "family_prior": self.family_prior,
            "shrinkage_m": self.shrinkage_m,
            "n_buckets": self.n_buckets,
            "cells": [[ctx, b, k, n] for (ctx, b), (k, n) in sorted(self.cells.items())],
            "maps": {ctx: {"starts": list(s), "values": list(v)} for ctx, (s, v) in sorted(self.maps.items())},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CalibrationModel":
        return cls(
            defect=DefectClass(d["defect"]),
            method=Method(d["method"]),
            threshold=float(d["threshold"]),
            family_prior=float(d["family_prior"]),
            shrinkage_m=float(d["shrinkage_m"]),
            n_buckets=int(d["n_buckets"]),
            cells={(ctx, int(b)): (int(k), int(n)) for ctx, b, k, n in d.get("cells", [])},
            maps={ctx: (tuple(m["starts"]), tuple(m["values"])) for ctx, m in d.get("maps", {}).items()},
        )


def beta_smoothed_risk(k: int, n: int, prior: float, m: float, alpha: float = 1.0, beta: float = 1.0) -> float:
    """Laplace-smoothed bucket frequency shrunk toward the family prior with weight n/(n+m)."""
    if n == 0:
        return prior
    raw = (k + alpha) / (n + alpha + beta)
    w = n / (n + m)
    return w * raw + (1.0 - w) * prior


Datum = tuple[EvidenceRecord, CalibrationContext, int]


def fit_calibrator(
    data: Sequence[Datum],
    defect: DefectClass,
    method: Method | str,
    *,
    threshold: float = 0.5,
    family_prior: float | None = None,
    shrinkage_m: float = 10.0,
    n_buckets: int = 5,
    min_context_count: int = 30,
) -> CalibrationModel:
    method = Method(method)
    if not data:
        raise CalibrationError(f"{defect.value}: no calibration data")
    for ev, _, y in data:
        if y not in (0, 1):
            raise CalibrationError(f"{defect.value}: label {y!r} is not 0/1")
        if ev.defect is not defect:
            raise CalibrationError(f"evidence for {ev.defect.value} passed to the {defect.value} calibrator")
    if family_prior is None:
        family_prior = sum(y for _, _, y in data) / len(data)
    if shrinkage_m <= 0:
        raise CalibrationError("shrinkage_m must be positive")
    base = dict(defect=defect, method=method, threshold=threshold, family_prior=family_prior,
                shrinkage_m=shrinkage_m, n_buckets=n_buckets)
    if method is Method.HARD_THRESHOLD:
        return CalibrationModel(**base)
    if method is Method.BETA_SMOOTHED:
        cells: dict[tuple[str, int], list[int]] = {}
        for ev, ctx, y in data:
            c = cells.setdefault((ctx.key, score_bucket(ev.score, n_buckets)), [0, 0])
            c[0] += y
            c[1] += 1
        return CalibrationModel(**base, cells={k: (v[0], v[1]) for k, v in cells.items()})
    maps = {"*": tuple(map(tuple, pav_fit([ev.score for ev, _, _ in data], [y for _, _, y in data])))}
    by_ctx: dict[str, list[tuple[float, int]]] = {}
    for ev, ctx, y in data:
        by_ctx.setdefault(ctx.key, []).append((ev.score, y))
    for key, pts in sorted(by_ctx.items()):
        if len(pts) >= min_context_count:
            maps[key] = tuple(map(tuple, pav_fit([s for s, _ in pts], [y for _, y in pts])))
    return CalibrationModel(**base, maps=maps)


def apply_calibrator(model: CalibrationModel, evidence: EvidenceRecord, ctx: CalibrationContext) -> float:
    if evidence.defect is not model.defect:
        raise CalibrationError(f"model for {model.defect.value} applied to {evidence.defect.value}")
    if model.method is Method.HARD_THRESHOLD:
        return 1.0 if evidence.score >= model.threshold else 0.0
    if model.method is Method.BETA_SMOOTHED:
        k, n = model.cells.get((ctx.key, score_bucket(evidence.score, model.n_buckets)), (0, 0))
        return min(1.0, max(0.0, beta_smoothed_risk(k, n, model.family_prior, model.shrinkage_m)))
    starts, values = model.maps.get(ctx.key) or model.maps["*"]
    return step_value(starts, values, evidence.score)


@dataclass(frozen=True)
class CalibrationSet:
    """One fitted model per defect class."""

    method: Method
    models: dict[DefectClass, CalibrationModel]
    horizon_cuts: tuple[int, int] = DEFAULT_HORIZON_CUTS

    def to_dict(self) -> dict:
        return {
            "schema": MODEL_SCHEMA,
            "method": self.method.value,
            "horizon_cuts": list(self.horizon_cuts),
            "models": {d.value: self.models[d].to_dict() for d in DEFECTS if d in self.models},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CalibrationSet":
        if d.get("schema") != MODEL_SCHEMA:
            raise CalibrationError(f"unsupported model schema {d.get('schema')!r}")
        return cls(
            method=Method(d["method"]),
            models={DefectClass(k): CalibrationModel.from_dict(v) for k, v in d["models"].items()},
            horizon_cuts=tuple(d.get("horizon_cuts", DEFAULT_HORIZON_CUTS)),
        )


def family_priors(data: Mapping[DefectClass, Sequence[Datum]]) -> dict[Dimension, float]:
    """Pooled positive-label frequency per defect dimension."""
    pos: dict[Dimension, int] = {}
    tot: dict[Dimension, int] = {}
    for defect, rows in data.items():
        dim = defect.dimension
        pos[dim] = pos.get(dim, 0) + sum(y for _, _, y in rows)
        tot[dim] = tot.get(dim, 0) + len(rows)
    return {dim: pos[dim] / tot[dim] for dim in tot if tot[dim]}


def fit_calibration_set(
    data: Mapping[DefectClass, Sequence[Datum]],
    method: Method | str,
    thresholds: Mapping[DefectClass, float] | None = None,
    **kwargs,
) -> CalibrationSet:
    method = Method(method)
    priors = family_priors(data)
    models = {}
    for defect in DEFECTS:
        rows = data.get(defect, ())
        if not rows:
            continue
        tau = (thresholds or {}).get(defect, 0.5)
        models[defect] = fit_calibrator(rows, defect, method, threshold=tau,
                                        family_prior=priors[defect.dimension], **kwargs)
    return CalibrationSet(method, models)


# --- severity -----------------------------------------------------------------------------

def band_severity(p: float, delta_w: float = DEFAULT_DELTA_W, delta_e: float = DEFAULT_DELTA_E) -> Severity:
    if not 0.0 <= delta_w < delta_e <= 1.0:
        raise CalibrationError(f"need 0 <= delta_w < delta_e <= 1, got {delta_w}, {delta_e}")
    if p >= delta_e:
        return Severity.ERROR
    if p >= delta_w:
        return Severity.WARNING
    return Severity.NONE


@dataclass(frozen=True)
class CalibratedFinding:
    raw: RawFinding
    posterior_risk: float
    severity: Severity
    context: CalibrationContext

    @property
    def defect(self) -> DefectClass:
        return self.raw.defect


def calibrate_findings(
    findings: Iterable[RawFinding],
    ctx: CalibrationContext,
    models: CalibrationSet | None = None,
    delta_w: float = DEFAULT_DELTA_W,
    delta_e: float = DEFAULT_DELTA_E,
) -> list[CalibratedFinding]:
    """Attach posterior risk and severity.  Without models, risk is the hard 0/1 activation."""
    out = []
    for f in findings:
        if models is None or models.method is Method.HARD_THRESHOLD or f.defect not in models.models:
            if models is not None and models.method is not Method.HARD_THRESHOLD:
                raise CalibrationError(f"no fitted model for {f.defect.value}")
            p = 1.0 if f.triggered else 0.0
        else:
            p = apply_calibrator(models.models[f.defect], f.evidence, ctx)
        out.append(CalibratedFinding(f, p, band_severity(p, delta_w, delta_e), ctx))
    return out


# --- calibration quality -------------------------------------------------------------------

@dataclass(frozen=True)
class ReliabilityBin:
    lower: float
    upper: float
    mean_predicted: float
    empirical_frequency: float
    count: int


def _bin_index(p: float, bins: int) -> int:
    return min(int(p * bins), bins - 1)


def reliability_bins(pairs: Sequence[tuple[float, int]], bins: int = 10) -> list[ReliabilityBin]:
    """Non-empty equal-width bins over [0, 1]."""
    if bins < 1:
        raise CalibrationError("bins must be >= 1")
    acc: dict[int, list[float]] = {}
    for p, y in pairs:
        a = acc.setdefault(_bin_index(p, bins), [0.0, 0.0, 0])
        a[0] += p
        a[1] += y
        a[2] += 1
    return [
        ReliabilityBin(b / bins, (b + 1) / bins, s / c, k / c, c)
        for b, (s, k, c) in sorted(acc.items())
    ]


def compute_ece(pairs: Sequence[tuple[float, int]], bins: int = 10) -> float:
    if bins < 1:
        raise CalibrationError("bins must be >= 1")
    if not pairs:
        raise CalibrationError("ECE needs at least one prediction")
    n = len(pairs)
    return sum(b.count / n * abs(b.mean_predicted - b.empirical_frequency) for b in reliability_bins(pairs, bins))
