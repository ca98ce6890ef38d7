"""Detector quality, annotation agreement and cross-system stability analyses."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .detectors import DEFECTS, DefectClass

ANNOTATION_SCHEMA = "annotation/1"


class Label(str, Enum):
    PRESENT = "present"
    ABSENT = "absent"
    EXEMPT = "exempt"


class EvaluationError(ValueError):
    pass


# --- annotations -------------------------------------------------------------------------------

@dataclass(frozen=True)
class AnnotationRecord:
    trajectory_id: str
    labels: dict[DefectClass, Label]
    annotator_id: str = "unknown"
    adjudicated: bool = False
    evidence_notes: dict[DefectClass, str] = field(default_factory=dict)

    def __post_init__(self):
        missing = [d.value for d in DEFECTS if d not in self.labels]
        if missing:
            raise EvaluationError(f"{self.trajectory_id}: no label for {missing}")
        for d, lab in self.labels.items():
            if lab is Label.EXEMPT and not self.evidence_notes.get(d, "").strip():
                raise EvaluationError(f"{self.trajectory_id}: exempt label for {d.value} needs an evidence note")

    def to_dict(self) -> dict:
        return {
            "schema": ANNOTATION_SCHEMA,
            "trajectory_id": self.trajectory_id,
            "annotator_id": self.annotator_id,
            "adjudicated": self.adjudicated,
            "labels": {d.value: self.labels[d].value for d in DEFECTS},
            "evidence_notes": {d.value: self.evidence_notes[d] for d in DEFECTS if d in self.evidence_notes},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "AnnotationRecord":
        if d.get("schema", ANNOTATION_SCHEMA) != ANNOTATION_SCHEMA:
            raise EvaluationError(f"unsupported annotation schema {d.get('schema')!r}")
        return cls(
            trajectory_id=str(d["trajectory_id"]),
            labels={DefectClass(k): Label(v) for k, v in d["labels"].items()},
            annotator_id=str(d.get("annotator_id", "unknown")),
            adjudicated=bool(d.get("adjudicated", False)),
            evidence_notes={DefectClass(k): str(v) for k, v in (d.get("evidence_notes") or {}).items()},
        )


def load_annotations(text: str) -> list[AnnotationRecord]:
    out = []
    for no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            out.append(AnnotationRecord.from_dict(json.loads(line)))
        except (KeyError, ValueError) as exc:
            raise EvaluationError(f"annotation line {no}: {exc}") from None
    return out


def dump_annotations(records: Iterable[AnnotationRecord]) -> str:
    return "".join(json.dumps(r.to_dict(), sort_keys=True, separators=(",", ":")) + "\n" for r in records)


# --- splits ------------------------------------------------------------------------------------------

def stratified_split(
    cases: Sequence[Mapping],
    sizes: Sequence[int],
    strata_keys: Sequence[str] = ("source", "outcome"),
    seed: int = 0,
    id_key: str = "trajectory_id",
    min_per_split: int = 0,
) -> list[list[str]]:
    """Partition case ids into len(sizes) disjoint groups of exactly those sizes.

    Each stratum is spread across groups in proportion to the group sizes
    (largest-remainder rounding under both row and column totals).
    """
    if sum(sizes) != len(cases):
        raise EvaluationError(f"split sizes sum to {sum(sizes)} but there are {len(cases)} cases")
    strata: dict[tuple, list[str]] = {}
    for c in cases:
        try:
            key = tuple(str(c[k]) for k in strata_keys)
        except KeyError as exc:
            raise EvaluationError(f"case {c.get(id_key)} lacks stratum key {exc}") from None
        strata.setdefault(key, []).append(str(c[id_key]))
    total = len(cases)
    keys = sorted(strata)
    alloc = {}
    frac = []
    for key in keys:
        n = len(strata[key])
        ideal = [n * s / total for s in sizes]
        alloc[key] = [math.floor(x) for x in ideal]
        frac.extend((ideal[j] - alloc[key][j], key, j) for j in range(len(sizes)))
    row_left = {k: len(strata[k]) - sum(alloc[k]) for k in keys}
    col_left = [sizes[j] - sum(alloc[k][j] for k in keys) for j in range(len(sizes))]
    for _, key, j in sorted(frac, key=lambda x: (-x[0], x[1], x[2])):
        if row_left[key] > 0 and col_left[j] > 0:
            alloc[key][j] += 1
            row_left[key] -= 1
            col_left[j] -= 1
    for key in keys:
        j = 0
        while row_left[key] > 0:
            if col_left[j] > 0:
                alloc[key][j] += 1
                row_left[key] -= 1
                col_left[j] -= 1
            else:
                j += 1
    for key in keys:
        if min_per_split and any(a < min_per_split for a, s in zip(alloc[key], sizes) if s > 0):
            raise EvaluationError(
                f"stratum {key} has {len(strata[key])} cases, too few for {min_per_split} per split"
            )
    groups: list[list[str]] = [[] for _ in sizes]
    rng = np.random.default_rng(seed)
    for key in keys:
        ids = sorted(strata[key])
        order = rng.permutation(len(ids))
        pos = 0
        for j, a in enumerate(alloc[key]):
            groups[j].extend(ids[i] for i in order[pos : pos + a])
            pos += a
    return [sorted(g) for g in groups]


# --- detection metrics --------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricBundle:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float | None
    recall: float | None
    f1: float | None
    average_precision: float | None = None
    auroc: float | None = None
    notes: tuple[str, ...] = ()

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int, tn: int = 0, **extra) -> "MetricBundle":
        notes = list(extra.pop("notes", ()))
        precision = tp / (tp + fp) if tp + fp else None
        recall = tp / (tp + fn) if tp + fn else None
        if recall is None:
            notes.append("no positive labels: recall undefined")
        if precision is None:
            notes.append("no triggered predictions: precision undefined")
        f1 = None
        if precision is not None and recall is not None:
            f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        return cls(tp, fp, fn, tn, precision, recall, f1, notes=tuple(notes), **extra)


def f1_from_pr(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


def average_precision(scores: Sequence[float], labels: Sequence[int]) -> float | None:
    """Step-interpolated area under the precision-recall curve.

    Thresholds are the distinct scores in descending order; tied scores enter
    together.  AP = sum over thresholds of (recall gain) * precision.
    """
    pos = sum(labels)
    if pos == 0:
        return None
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    ap = 0.0
    tp = fp = 0
    i = 0
    prev_recall = 0.0
    while i < len(order):
        s = scores[order[i]]
        while i < len(order) and scores[order[i]] == s:
            if labels[order[i]]:
                tp += 1
            else:
                fp += 1
            i += 1
        recall = tp / pos
        ap += (recall - prev_recall) * (tp / (tp + fp))
        prev_recall = recall
    return ap


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float | None:
    """Mann-Whitney rank statistic with midranks for ties."""
    pos = sum(labels)
    neg = len(labels) - pos
    if pos == 0 or neg == 0:
        return None
    ranks = rankdata(scores, method="average")
    rank_sum = sum(r for r, y in zip(ranks, labels) if y)
    return float((rank_sum - pos * (pos + 1) / 2) / (pos * neg))


def detection_metrics(
    predictions: Sequence[tuple[float, bool]],
    labels: Sequence[Label | int | bool | str],
) -> MetricBundle:
    """P/R/F1 from triggers, AP and AUROC from scores; exempt-labeled cases are dropped."""
    if len(predictions) != len(labels):
        raise EvaluationError("predictions and labels are not aligned")
    scores, trig, ys = [], [], []
    dropped = 0
    for (score, triggered), lab in zip(predictions, labels):
        if isinstance(lab, str):
            lab = Label(lab)
        if lab is Label.EXEMPT:
            dropped += 1
            continue
        y = 1 if (lab is Label.PRESENT or lab is True or lab == 1) and lab is not Label.ABSENT else 0
        scores.append(float(score))
        trig.append(bool(triggered))
        ys.append(y)
    tp = sum(1 for t, y in zip(trig, ys) if t and y)
    fp = sum(1 for t, y in zip(trig, ys) if t and not y)
    fn = sum(1 for t, y in zip(trig, ys) if not t and y)
    tn = sum(1 for t, y in zip(trig, ys) if not t and not y)
    notes = [f"{dropped} exempt-labeled cases excluded"] if dropped else []
    return MetricBundle.from_counts(
        tp, fp, fn, tn, average_precision=average_precision(scores, ys), auroc=auroc(scores, ys), notes=notes
    )


# --- agreement ------------------------------------------------------------------------------------

def cohen_kappa(labels_a: Sequence, labels_b: Sequence, fold_exempt: bool = True) -> float | None:
    """Cohen's kappa over arbitrary categories; None when chance agreement is 1."""
    if len(labels_a) != len(labels_b) or not labels_a:
        raise EvaluationError("kappa needs two aligned, non-empty label lists")

    def norm(x):
        if fold_exempt and (x is Label.EXEMPT or x == "exempt"):
            return Label.ABSENT.value
        return x.value if isinstance(x, Label) else x

    a = [norm(x) for x in labels_a]
    b = [norm(x) for x in labels_b]
    n = len(a)
    p_o = sum(x == y for x, y in zip(a, b)) / n
    cats = set(a) | set(b)
    p_e = sum((a.count(c) / n) * (b.count(c) / n) for c in cats)
    if p_e >= 1.0:
        return None
    return (p_o - p_e) / (1.0 - p_e)


# --- correlations ---------------------------------------------------------------------------------

def pearson(x: Sequence[float], y: Sequence[float]) -> float | None:
    if len(x) != len(y) or len(x) < 2:
        return None
    mx = sum(x) / len(x)
    my = sum(y) / len(y)
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    if sxx == 0 or syy == 0:
        return None
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    return sxy / math.sqrt(sxx * syy)


def defect_failure_correlation(
    risks: Sequence[Mapping[DefectClass, float]], failed: Sequence[bool]
) -> tuple[dict[DefectClass, float | None], list[str]]:
    """Point-biserial correlation between each defect's risk and the failure indicator."""
    if len(risks) != len(failed):
        raise EvaluationError("risks and outcomes are not aligned")
    out, notes = {}, []
    y = [1.0 if f else 0.0 for f in failed]
    for d in DEFECTS:
        r = pearson([row[d] for row in risks], y)
        if r is None:
            notes.append(f"{d.value}: zero variance, correlation undefined")
        out[d] = r
    return out, notes


def defect_correlation_matrix(risks: Sequence[Mapping[DefectClass, float]]) -> list[list[float | None]]:
    """Symmetric Pearson matrix over the eleven defects; None marks undefined entries."""
    if len(risks) < 2:
        raise EvaluationError("need at least two cases")
    cols = [[row[d] for row in risks] for d in DEFECTS]
    k = len(DEFECTS)
    mat: list[list[float | None]] = [[None] * k for _ in range(k)]
    for i in range(k):
        mat[i][i] = 1.0
        for j in range(i + 1, k):
            mat[i][j] = mat[j][i] = pearson(cols[i], cols[j])
    return mat


# --- ranking ----------------------------------------------------------------------------------------

def rank_desc(scores: Mapping[Hashable, float]) -> dict[Hashable, int]:
    """Rank 1 for the highest score; ties share the minimum rank."""
    keys = sorted(scores, key=str)
    ranks = rankdata([-scores[k] for k in keys], method="min")
    return {k: int(r) for k, r in zip(keys, ranks)}


def rank_shift(outcome_scores: Mapping[str, float], pb_scores: Mapping[str, float]) -> dict[str, dict]:
    if set(outcome_scores) != set(pb_scores):
        raise EvaluationError("outcome and PB maps cover different systems")
    ro, rp = rank_desc(outcome_scores), rank_desc(pb_scores)
    return {
        s: {"outcome_score": outcome_scores[s], "outcome_rank": ro[s], "pb": pb_scores[s],
            "pb_rank": rp[s], "shift": ro[s] - rp[s]}
        for s in sorted(outcome_scores)
    }


def shift_from_ranks(outcome_rank: Mapping[str, int], pb_rank: Mapping[str, int]) -> dict[str, int]:
    if set(outcome_rank) != set(pb_rank):
        raise EvaluationError("rank maps cover different systems")
    return {s: outcome_rank[s] - pb_rank[s] for s in sorted(outcome_rank)}


@dataclass(frozen=True)
class SweepPoint:
    eta: float
    pb: dict[str, float]
    ranks: dict[str, int]


def eta_sweep(q_def: Mapping[str, float], cp: Mapping[str, float], grid: Sequence[float]) -> list[SweepPoint]:
    if not grid:
        raise EvaluationError("eta grid is empty")
    if set(q_def) != set(cp):
        raise EvaluationError("q_def and cp maps cover different systems")
    out = []
    for eta in grid:
        if not 0.0 <= eta <= 1.0:
            raise EvaluationError(f"eta {eta} outside [0, 1]")
        pb = {s: eta * q_def[s] + (1.0 - eta) * cp[s] for s in sorted(q_def)}
        out.append(SweepPoint(eta, pb, rank_desc(pb)))
    return out


def eta_crossing(a: tuple[float, float], b: tuple[float, float]) -> float | None:
    """eta in [0, 1] where two (q_def, cp) systems tie on PB, if any."""
    # pb(eta) = cp + eta * (q - cp); solve equality of two lines
    slope = (a[0] - a[1]) - (b[0] - b[1])
    if slope == 0:
        return None
    eta = (b[1] - a[1]) / slope
    return eta if 0.0 <= eta <= 1.0 else None


@dataclass(frozen=True)
class BootstrapSummary:
    system: str
    mean_rank: float
    rank_std: float
    top1: float
    top3: float
    ci: dict[str, tuple[float, float]]
    point: dict[str, float]


def replicate_rng(seed: int, replicate: int) -> np.random.Generator:
    """Independent substream per replicate, so results never depend on scheduling."""
    return np.random.default_rng([seed, replicate])


def bootstrap_indices(strata: Sequence[Hashable], seed: int, replicate: int) -> np.ndarray:
    """Resample positions within each stratum (strata visited in sorted order)."""
    rng = replicate_rng(seed, replicate)
    groups: dict[Hashable, list[int]] = {}
    for i, s in enumerate(strata):
        groups.setdefault(s, []).append(i)
    picks = []
    for key in sorted(groups, key=str):
        members = np.asarray(groups[key])
        picks.append(members[rng.integers(0, len(members), size=len(members))])
    return np.concatenate(picks)


def bootstrap_ranking(
    per_case: Mapping[str, Mapping[str, Mapping[str, float]]],
    strata: Mapping[str, Hashable],
    replicates: int = 1000,
    seed: int = 0,
    rank_metric: str = "pb",
    level: float = 0.95,
) -> list[BootstrapSummary]:
    """Stratified bootstrap of per-system mean scores and ranks.

    ``per_case[system][metric][case_id]`` holds per-case values; ``rank_metric``
    decides the ranking.  Each replicate draws cases within strata with
    replacement, recomputes mean scores, and ranks systems (ties share the
    minimum rank).  CIs are percentile intervals at ``level``.
    """
    if replicates < 1:
        raise EvaluationError("need at least one replicate")
    systems = sorted(per_case)
    if not systems:
        raise EvaluationError("no systems")
    case_ids = sorted(strata)
    for s in systems:
        for metric, values in per_case[s].items():
            if set(values) != set(case_ids):
                raise EvaluationError(f"system {s} metric {metric} covers a different case set")
    metrics = sorted(per_case[systems[0]])
    if rank_metric not in metrics:
        raise EvaluationError(f"rank metric {rank_metric} missing")
    cube = {m: np.array([[per_case[s][m][c] for c in case_ids] for s in systems]) for m in metrics}
    strata_list = [strata[c] for c in case_ids]

    ranks = np.zeros((replicates, len(systems)))
    means = {m: np.zeros((replicates, len(systems))) for m in metrics}
    for r in range(replicates):
        idx = bootstrap_indices(strata_list, seed, r)
        for m in metrics:
            means[m][r] = cube[m][:, idx].mean(axis=1)
        ranks[r] = rankdata(-means[rank_metric][r], method="min")
    lo_q, hi_q = 100 * (1 - level) / 2, 100 * (1 - (1 - level) / 2)
    out = []
    for i, s in enumerate(systems):
        out.append(BootstrapSummary(
            system=s,
            mean_rank=float(ranks[:, i].mean()),
            rank_std=float(ranks[:, i].std()),
            top1=float((ranks[:, i] == 1).mean()),
            top3=float((ranks[:, i] <= 3).mean()),
            ci={m: (float(np.percentile(means[m][:, i], lo_q)), float(np.percentile(means[m][:, i], hi_q)))
                for m in metrics},
            point={m: float(cube[m][i].mean()) for m in metrics},
        ))
    return out
