"""Evidence extraction, scoring, activation and exemptions for the eleven defect classes.

Every detector maps a trajectory to a :class:`RawFinding` whose score lies in
[0, 1].  Exemptions are resolved after scoring: exempt patterns are kept out of
the score and, when they alone would have reached the threshold, the finding
is marked ``exempted`` with a rationale so the raw evidence stays auditable.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import Any, Callable, Mapping

from .graph import (
    DATA_FLOW,
    build_dependency_graph,
    delegations,
    longest_alternation,
    strongly_connected_components,
    unit_invocations,
)
from .trajectory import (
    MUTATING_OPS,
    EventType,
    OpKind,
    SegmentTag,
    Trajectory,
    ValidationStatus,
    context_segment_stats,
    normalize_tokens,
    token_set,
)


class Dimension(str, Enum):
    CONTEXT = "context_mgmt"
    TOOL_USE = "tool_use"
    WORKFLOW = "workflow_arch"
    ECOSYSTEM = "tool_ecosystem"


class DefectClass(str, Enum):
    GHOST_CONTEXT = "ghost_context"
    OVERSIZED_RULES = "oversized_rules"
    CW_THRASHING = "cw_thrashing"
    DUPLICATE_STEP = "duplicate_step"
    TOOL_CALL_CHAIN = "tool_call_chain"
    DEAD_STEP = "dead_step"
    LONG_CHAIN = "long_chain"
    WRAPPER_WORKFLOW = "wrapper_workflow"
    CONTEXT_COUPLING = "context_coupling"
    INCONSISTENT_TOOL_INTERFACE = "inconsistent_tool_interface"
    WEAK_TOOL = "weak_tool"

    @property
    def dimension(self) -> Dimension:
        return DIMENSION_OF[self]


DIMENSION_OF = {
    DefectClass.GHOST_CONTEXT: Dimension.CONTEXT,
    DefectClass.OVERSIZED_RULES: Dimension.CONTEXT,
    DefectClass.CW_THRASHING: Dimension.CONTEXT,
    DefectClass.DUPLICATE_STEP: Dimension.TOOL_USE,
    DefectClass.TOOL_CALL_CHAIN: Dimension.TOOL_USE,
    DefectClass.DEAD_STEP: Dimension.TOOL_USE,
    DefectClass.LONG_CHAIN: Dimension.TOOL_USE,
    DefectClass.WRAPPER_WORKFLOW: Dimension.WORKFLOW,
    DefectClass.CONTEXT_COUPLING: Dimension.WORKFLOW,
    DefectClass.INCONSISTENT_TOOL_INTERFACE: Dimension.ECOSYSTEM,
    DefectClass.WEAK_TOOL: Dimension.ECOSYSTEM,
}

DEFECTS: tuple[DefectClass, ...] = tuple(DefectClass)


def defects_of(dim: Dimension) -> list[DefectClass]:
    return [d for d in DEFECTS if d.dimension is dim]


def _default_thresholds() -> dict[str, float]:
    return {d.value: 0.5 for d in DEFECTS}


def _default_long_chain_ref() -> dict[str, int]:
    return {"synthetic": 40, "terminal": 80, "android": 120, "swebench": 150, "other": 100}


@dataclass(frozen=True)
class DetectorConfig:
    """Tunable detector parameters.  Every field has a working default."""

    thresholds: dict[str, float] = field(default_factory=_default_thresholds)
    # ghost context: caps that map raw stats onto [0, 1]
    ghost_occupancy_cap: float = 0.25
    ghost_persistence_cap: int = 20
    ghost_reference_cap: float = 0.2
    # oversized rules
    rules_base: float = 0.25
    rules_span: float = 0.50
    # context window thrashing
    thrash_saturation: float = 0.90
    thrash_drop: float = 0.30
    thrash_delta: int = 3
    thrash_cycle_cap: int = 5
    # duplicate step
    dup_window: int = 20
    dup_similarity: float = 0.9
    time_varying_tools: tuple[str, ...] = ()
    batch_units: tuple[str, ...] = ()
    # tool call chain
    chain_max_period: int = 4
    chain_min_reps: int = 3
    # dead step / dependency graph
    dataflow_overlap: float = 0.6
    # long chain
    long_chain_ref: dict[str, int] = field(default_factory=_default_long_chain_ref)
    consolidation_unit: int = 25
    # wrapper workflow
    wrapper_min_invocations: int = 3
    # context coupling
    coupling_weights: tuple[float, float, float] = (0.3, 0.3, 0.4)
    coupling_bidir_cap: int = 2
    coupling_alternation_cap: int = 6
    coupling_scc_cap: int = 4
    coupling_scc_force: int = 3
    # inconsistent tool interface
    cluster_similarity: float = 0.5
    # weak tool
    weak_low_rate: float = 0.05
    weak_alt_rate: float = 0.80
    weak_horizon: int = 3
    intent_matchers: dict[str, tuple[str, ...]] = field(default_factory=dict)
    tool_catalog: tuple[dict, ...] = ()

    def __post_init__(self):
        for name, tau in self.thresholds.items():
            if name not in {d.value for d in DEFECTS}:
                raise ValueError(f"unknown defect in thresholds: {name}")
            if not 0.0 <= tau <= 1.0:
                raise ValueError(f"threshold for {name} must lie in [0, 1]")
        for name in ("dup_window", "thrash_delta", "thrash_cycle_cap", "chain_max_period",
                     "chain_min_reps", "consolidation_unit", "wrapper_min_invocations",
                     "ghost_persistence_cap", "weak_horizon"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("dup_similarity", "dataflow_overlap", "cluster_similarity", "thrash_saturation",
                     "thrash_drop", "weak_low_rate", "weak_alt_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.coupling_scc_cap < 2:
            raise ValueError("coupling_scc_cap must be >= 2")

    def threshold(self, defect: DefectClass) -> float:
        return self.thresholds.get(defect.value, 0.5)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any] | None) -> "DetectorConfig":
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown detector config keys: {sorted(unknown)}")
        base = cls()
        if "thresholds" in data:
            data["thresholds"] = {**base.thresholds, **data["thresholds"]}
        if "long_chain_ref" in data:
            data["long_chain_ref"] = {**base.long_chain_ref, **data["long_chain_ref"]}
        for key in ("time_varying_tools", "batch_units", "coupling_weights"):
            if key in data:
                data[key] = tuple(data[key])
        if "intent_matchers" in data:
            data["intent_matchers"] = {k: tuple(v) for k, v in data["intent_matchers"].items()}
        if "tool_catalog" in data:
            data["tool_catalog"] = tuple(dict(x) for x in data["tool_catalog"])
        return replace(base, **data)

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = list(v)
            if f.name == "intent_matchers":
                v = {k: list(x) for k, x in v.items()}
            out[f.name] = v
        return out


@dataclass(frozen=True)
class EvidenceRecord:
    defect: DefectClass
    score: float
    features: dict[str, float] = field(default_factory=dict)
    supporting_spans: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0 or math.isnan(self.score):
            raise ValueError(f"{self.defect.value}: score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class RawFinding:
    defect: DefectClass
    evidence: EvidenceRecord
    threshold: float
    exempted: bool = False
    rationale: str = ""

    @property
    def score(self) -> float:
        return self.evidence.score

    @property
    def triggered(self) -> bool:
        return self.evidence.score >= self.threshold and not self.exempted


def _clamp(x: float, lo: float = 0.0, hi: float = 1.0) -> float:
    return max(lo, min(hi, x))


def _finding(
    defect: DefectClass,
    cfg: DetectorConfig,
    score: float,
    features: dict[str, float] | None = None,
    spans: list[tuple[int, int]] | None = None,
    exempt_score: float = 0.0,
    rationale: str = "",
) -> RawFinding:
    tau = cfg.threshold(defect)
    score = _clamp(score)
    exempted = exempt_score >= tau > score
    spans = sorted(set(spans or []))
    return RawFinding(
        defect=defect,
        evidence=EvidenceRecord(defect, score, dict(features or {}), tuple(spans)),
        threshold=tau,
        exempted=exempted,
        rationale=rationale if exempted or not rationale.startswith("exempt") else "",
    )


# --- context management --------------------------------------------------------

_GHOST_EXEMPT_TAGS = {SegmentTag.RULE_TEXT, SegmentTag.RETAINED_SUMMARY, SegmentTag.PERSISTENT_MEMORY}


def ghost_segment_score(occupancy: float, persistence: int, reference_rate: float, cfg: DetectorConfig) -> float:
    rho = _clamp(occupancy / cfg.ghost_occupancy_cap)
    tau = _clamp(persistence / cfg.ghost_persistence_cap)
    kappa = _clamp(reference_rate / cfg.ghost_reference_cap)
    return rho * tau * (1.0 - kappa)


def detect_ghost_context(t: Trajectory, cfg: DetectorConfig) -> RawFinding:
    stats = context_segment_stats(t)
    best, best_seg = 0.0, None
    exempt_best, exempt_seg = 0.0, None
    for seg_id in sorted(stats):
        s = stats[seg_id]
        score = ghost_segment_score(s.occupancy, s.persistence, s.reference_rate, cfg)
        if s.tag in _GHOST_EXEMPT_TAGS:
            if score > exempt_best:
                exempt_best, exempt_seg = score, s
        elif score > best:
            best, best_seg = score, s
    features: dict[str, float] = {"segments": float(len(stats)), "exempt_score": exempt_best}
    spans = []
    if best_seg is not None:
        features.update(occupancy=best_seg.occupancy, reference_rate=best_seg.reference_rate,
                        persistence=float(best_seg.persistence))
        spans.append((best_seg.created_at, best_seg.last_present))
    rationale = ""
    if exempt_seg is not None:
        rationale = f"exempt: segment {exempt_seg.segment_id} is tagged {exempt_seg.tag.value}"
        if exempt_best >= cfg.threshold(DefectClass.GHOST_CONTEXT) > best:
            spans.append((exempt_seg.created_at, exempt_seg.last_present))
    return _finding(DefectClass.GHOST_CONTEXT, cfg, best, features, spans, exempt_best, rationale)


def rules_occupancy(t: Trajectory) -> tuple[float, list[int]]:
    """Mean per-event occupancy of rule_text segments that exist from event 0."""
    first = {s.segment_id for s in t.events[0].context.segments if s.tag is SegmentTag.RULE_TEXT}
    if not first:
        return 0.0, []
    occ, where = [], []
    for ev in t.events:
        tokens = sum(s.token_count for s in ev.context.segments if s.segment_id in first)
        occ.append(tokens / ev.context.window_capacity)
        if tokens:
            where.append(ev.index)
    return sum(occ) / len(occ), where


def detect_oversized_rules(t: Trajectory, cfg: DetectorConfig) -> RawFinding:
    rho, where = rules_occupancy(t)
    score = _clamp((rho - cfg.rules_base) / cfg.rules_span)
    spans = [(where[0], where[-1])] if where and score > 0 else []
    return _finding(DefectClass.OVERSIZED_RULES, cfg, score, {"rules_occupancy": rho}, spans)


def thrash_cycles(tokens: list[int], capacity: list[int], cfg: DetectorConfig) -> list[tuple[int, int]]:
    """(peak index, drop index) of every saturate-then-compress cycle."""
    cycles = []
    i, n = 0, len(tokens)
    while i < n:
        if tokens[i] >= cfg.thrash_saturation * capacity[i]:
            peak = tokens[i]
            hit = None
            for j in range(i + 1, min(n, i + cfg.thrash_delta + 1)):
                if tokens[j] <= (1.0 - cfg.thrash_drop) * peak:
                    hit = j
                    break
                peak = max(peak, tokens[j])
            if hit is not None:
                cycles.append((i, hit))
                i = hit + 1
                continue
        i += 1
    return cycles


def detect_cw_thrashing(t: Trajectory, cfg: DetectorConfig) -> RawFinding:
    tokens = [ev.context.tokens_used for ev in t.events]
    caps = [ev.context.window_capacity for ev in t.events]
    cycles = thrash_cycles(tokens, caps, cfg)
    score = min(1.0, len(cycles) / cfg.thrash_cycle_cap)
    return _finding(DefectClass.CW_THRASHING, cfg, score, {"cycles": float(len(cycles))}, cycles)


# --- tool-use efficiency -------------------------------------------------------------

def call_signature(tool_name: str, arguments: Mapping[str, str]) -> frozenset[str]:
    flat = " ".join(f"{k} {arguments[k]}" for k in sorted(arguments))
    return token_set(f"{tool_name} {flat}")


def jaccard(a: frozenset[str], b: frozenset[str]) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


@dataclass(frozen=True)
class DuplicatePair:
    first: int
    second: int
    exempt_reason: str | None


def duplicate_pairs(t: Trajectory, cfg: DetectorConfig) -> list[DuplicatePair]:
    calls = t.tool_calls()
    sigs = [call_signature(c.tool.tool_name, c.tool.arguments) for c in calls]
    # prefix counts of state-changing events so the between-check is O(1)
    n = len(t.events)
    mut = [0] * (n + 1)
    for ev in t.events:
        mut[ev.index + 1] = mut[ev.index] + (1 if ev.op_kind in MUTATING_OPS else 0)
    statuses = [ev.validation_status for ev in t.events]
    batch = set(cfg.batch_units)
    varying = set(cfg.time_varying_tools)
    out = []
    for a in range(len(calls)):
        ca = calls[a]
        for b in range(a + 1, len(calls)):
            cb = calls[b]
            if cb.index - ca.index > cfg.dup_window:
                break
            if jaccard(sigs[a], sigs[b]) < cfg.dup_similarity:
                continue
            reason = None
            if ca.tool.tool_name in varying or cb.tool.tool_name in varying:
                reason = "time-varying tool"
            elif ca.dependency.unit_id in batch and cb.dependency.unit_id in batch:
                reason = "declared batch unit"
            elif mut[cb.index] - mut[ca.index + 1] > 0:
                reason = "intervening state mutation"
            else:
                seen = {s for s in statuses[ca.index + 1 : cb.index] if s is not ValidationStatus.NONE}
                if len(seen) > 1:
                    reason = "validation result changed"
            out.append(DuplicatePair(ca.index, cb.index, reason))
    return out


def detect_duplicate_step(t: Trajectory, cfg: DetectorConfig) -> RawFinding:
    n_calls = len(t.tool_calls())
    pairs = duplicate_pairs(t, cfg)
    live = [p for p in pairs if p.exempt_reason is None]
    exempt = [p for p in pairs if p.exempt_reason is not None]
    score = len(live) / n_calls if n_calls else 0.0
    exempt_score = min(1.0, len(pairs) / n_calls) if n_calls else 0.0
    tau = cfg.threshold(DefectClass.DUPLICATE_STEP)
    spans = [(p.first, p.second) for p in live]
    rationale = ""
    if exempt:
        reasons = sorted({p.exempt_reason for p in exempt})
        rationale = "exempt: " + ", ".join(reasons)
        if exempt_score >= tau > min(1.0, score):
            spans += [(p.first, p.second) for p in exempt]
    feats = {"tool_calls": float(n_calls), "duplicate_pairs": float(len(live)), "exempt_pairs": float(len(exempt))}
    return _finding(DefectClass.DUPLICATE_STEP, cfg, score, feats, spans, exempt_score, rationale)


def longest_periodic_run(names: list[str], max_period: int, min_reps: int) -> tuple[int, int, int]:
    """(length, start, period) of the longest block with period <= max_period
    repeated at least min_reps times; (0, 0, 0) when none exists."""
    best = (0, 0, 0)
    n = len(names)
    for p in range(1, max_period + 1):
        k = 0
        while k < n - p:
            if names[k] != names[k + p]:
                k += 1
                continue
            start = k
            while k < n - p and names[k] == names[k + p]:
                k += 1
            length = (k - start) + p
            if length >= min_reps * p and length > best[0]:
                best = (length, start, p)
    return best


def detect_tool_call_chain(t: Trajectory, cfg: DetectorConfig) -> RawFinding:
    calls = t.tool_calls()
    names = [c.tool.tool_name for c in calls]
    length, start, period = longest_periodic_run(names, cfg.chain_max_period, cfg.chain_min_reps)
    score = length / len(names) if names else 0.0
    spans = [(calls[start].index, calls[start + length - 1].index)] if length else []
    feats = {"run_length": float(length), "period": float(period), "tool_calls": float(len(names))}
    return _finding(DefectClass.TOOL_CALL_CHAIN, cfg, score, feats, spans)


def dead_results(t: Trajectory, cfg: DetectorConfig) -> tuple[list[int], int]:
    """Indices of dead tool results and the total number of results."""
    graph = build_dependency_graph(t, cfg.dataflow_overlap)
    has_flow = {e.src for e in graph.of_kind(DATA_FLOW)}
    children: dict[int, list[int]] = {}
    for ev in t.events:
        p = ev.dependency.parent_index
        if p is not None:
            children.setdefault(p, []).append(ev.index)
    dead, total = [], 0
    for res in t.tool_results():
        total += 1
        if res.index in has_flow:
            continue
        call = t.events[res.dependency.parent_index]
        step = [call.index, res.index] + children.get(res.index, []) + children.get(call.index, [])
        step_events = [t.events[i] for i in set(step)]
        if any(ev.external_op is not None for ev in step_events):
            continue
        kids = [t.events[i] for i in children.get(res.index, [])]
        if any(k.event_type is EventType.CONTEXT_OP for k in kids):
            continue  # state update
        if any(k.dependency.branch_id != res.dependency.branch_id for k in kids):
            continue  # branch decision
        dead.append(res.index)
    return dead, total


def detect_dead_step(t: Trajectory, cfg: DetectorConfig) -> RawFinding:
    dead, total = dead_results(t, cfg)
    score = len(dead) / total if total else 0.0
    spans = [(t.events[i].dependency.parent_index, i) for i in dead]
    return _finding(DefectClass.DEAD_STEP, cfg, score, {"dead": float(len(dead)), "results": float(total)}, spans)


_CONSOLIDATION_OPS = {OpKind.STAGE_MARKER, OpKind.CHECKPOINT}


def detect_long_chain(t: Trajectory, cfg: DetectorConfig) -> RawFinding:
    n = len(t.events)
    n_ref = cfg.long_chain_ref.get(t.source.value, cfg.long_chain_ref.get("other", 100))
    markers = sum(1 for ev in t.events if ev.op_kind in _CONSOLIDATION_OPS)
    consolidation = _clamp(markers / (n / cfg.consolidation_unit))
    elongation = _clamp((n - n_ref) / n_ref)
    score = elongation * (1.0 - consolidation)
    spans = [(min(n_ref, n - 1), n - 1)] if score > 0 else []
    feats = {"events": float(n), "reference_length": float(n_ref), "consolidation_rate": consolidation,
             "elongation": elongation}
    return _finding(DefectClass.LONG_CHAIN, cfg, score, feats, spans)


# --- workflow architecture ------------------------------------------------------------------

def detect_wrapper_workflow(t: Trajectory, cfg: DetectorConfig) -> RawFinding:
    by_unit: dict[str, list] = {}
    for inv in unit_invocations(t):
        by_unit.setdefault(inv.unit, []).append(inv)
    best, best_unit, spans = 0.0, None, []
    per_unit = {}
    for unit in sorted(by_unit):
        invs = by_unit[unit]
        if len(invs) < cfg.wrapper_min_invocations:
            continue
        passthrough = []
        for inv in invs:
            evs = [t.events[i] for i in inv.events]
            child_calls = len(inv.children) + sum(1 for e in evs if e.event_type is EventType.TOOL_CALL)
            validated = any(e.validation_status is not ValidationStatus.NONE for e in evs)
            branches = {e.dependency.branch_id for e in evs if e.dependency.branch_id is not None}
            if child_calls == 1 and not validated and len(branches) <= 1:
                passthrough.append(inv)
        frac = len(passthrough) / len(invs)
        per_unit[unit] = frac
        if frac > best:
            best, best_unit = frac, unit
            spans = [(inv.events[0], inv.events[-1]) for inv in passthrough]
    feats = {"units_checked": float(len(per_unit)), "max_passthrough": best}
    return _finding(DefectClass.WRAPPER_WORKFLOW, cfg, best, feats, spans,
                    rationale="" if best_unit is None else f"unit {best_unit}")


@dataclass(frozen=True)
class CouplingFeatures:
    bidirectional_pairs: int
    alternation: int
    largest_scc: int


def coupling_features(t: Trajectory) -> tuple[CouplingFeatures, list[tuple[int, str, str]]]:
    calls = delegations(t)
    units = sorted({ev.dependency.unit_id for ev in t.events if ev.dependency.unit_id is not None})
    adj: dict[str, set[str]] = {u: set() for u in units}
    for _, a, b in calls:
        adj[a].add(b)
    bidir = sum(1 for a in units for b in adj[a] if a < b and a in adj.get(b, ()))
    alternation = longest_alternation([(a, b) for _, a, b in calls])
    if alternation < 2:
        alternation = 0
    sccs = strongly_connected_components(units, adj)
    largest = max((len(c) for c in sccs), default=0)
    return CouplingFeatures(bidir, alternation, largest), calls


def coupling_score(f: CouplingFeatures, cfg: DetectorConfig, tau: float) -> float:
    w_bidir, w_alt, w_scc = cfg.coupling_weights
    scc_part = _clamp((f.largest_scc - 1) / (cfg.coupling_scc_cap - 1)) if f.largest_scc > 1 else 0.0
    score = (w_bidir * _clamp(f.bidirectional_pairs / cfg.coupling_bidir_cap)
             + w_alt * _clamp(f.alternation / cfg.coupling_alternation_cap)
             + w_scc * scc_part)
    if f.largest_scc >= cfg.coupling_scc_force:
        score = max(score, tau)
    return _clamp(score)


def detect_context_coupling(t: Trajectory, cfg: DetectorConfig) -> RawFinding:
    feats, calls = coupling_features(t)
    tau = cfg.threshold(DefectClass.CONTEXT_COUPLING)
    score = coupling_score(feats, cfg, tau)
    spans = [(calls[0][0], calls[-1][0])] if calls and score > 0 else []
    return _finding(
        DefectClass.CONTEXT_COUPLING, cfg, score,
        {"bidirectional_pairs": float(feats.bidirectional_pairs), "alternation": float(feats.alternation),
         "largest_scc": float(feats.largest_scc)},
        spans,
    )


# --- tool ecosystem -------------------------------------------------------------------------

FACETS = ("parameter_names", "parameter_types", "output_structure", "error_format")

_NAME_SPLIT = re.compile(r"[_\-.\s]+")


@dataclass(frozen=True)
class ToolProfile:
    name: str
    description: str = ""
    parameters: tuple[tuple[str, str], ...] = ()
    output: str | None = None
    error_format: str | None = None
    capabilities: tuple[str, ...] = ()
    declared: bool = False

    def facet(self, name: str):
        if name == "parameter_names":
            return frozenset(p for p, _ in self.parameters) if self.parameters else None
        if name == "parameter_types":
            return tuple(sorted(ty for _, ty in self.parameters)) if self.parameters else None
        if name == "output_structure":
            return self.output
        return self.error_format

    def name_tokens(self) -> frozenset[str]:
        toks = {x for x in _NAME_SPLIT.split(self.name.lower()) if x}
        return frozenset(toks | set(normalize_tokens(self.description)))


def _infer_type(value: str) -> str:
    v = value.strip()
    if v.lower() in ("true", "false"):
        return "boolean"
    try:
        int(v)
        return "integer"
    except ValueError:
        pass
    try:
        float(v)
        return "number"
    except ValueError:
        pass
    if v[:1] in "[{":
        try:
            parsed = json.loads(v)
            return "array" if isinstance(parsed, list) else "object"
        except ValueError:
            pass
    return "string"


def _payload_shape(text: str) -> str:
    try:
        parsed = json.loads(text)
    except ValueError:
        return "text"
    if isinstance(parsed, dict):
        return "object:" + ",".join(sorted(parsed))
    if isinstance(parsed, list):
        return "array"
    return "text"


def tool_catalog(t: Trajectory, cfg: DetectorConfig) -> dict[str, dict]:
    """Declared tools: config catalog overridden by the trajectory's own declaration."""
    out = {entry["name"]: dict(entry) for entry in cfg.tool_catalog}
    for entry in t.metadata_json("tool_catalog", []):
        out[entry["name"]] = dict(entry)
    return out


def tool_profiles(t: Trajectory, cfg: DetectorConfig) -> dict[str, ToolProfile]:
    profiles: dict[str, ToolProfile] = {}
    for name, entry in tool_catalog(t, cfg).items():
        params = entry.get("parameters") or {}
        profiles[name] = ToolProfile(
            name=name,
            description=entry.get("description", ""),
            parameters=tuple(sorted(params.items())),
            output=entry.get("output"),
            error_format=entry.get("error_format"),
            capabilities=tuple(entry.get("capabilities") or ()),
            declared=True,
        )
    params: dict[str, dict[str, str]] = {}
    outputs: dict[str, Counter] = {}
    errors: dict[str, Counter] = {}
    for ev in t.events:
        if ev.event_type is EventType.TOOL_CALL and ev.tool.tool_name not in profiles:
            slot = params.setdefault(ev.tool.tool_name, {})
            for k in sorted(ev.tool.arguments):
                slot.setdefault(k, _infer_type(ev.tool.arguments[k]))
        elif ev.event_type is EventType.TOOL_RESULT:
            name = t.events[ev.dependency.parent_index].tool.tool_name
            if name in profiles:
                continue
            bucket = errors if ev.validation_status is ValidationStatus.FAIL else outputs
            bucket.setdefault(name, Counter())[_payload_shape(ev.payload)] += 1
    for name in sorted(params):
        def top(c: Counter | None) -> str | None:
            return None if not c else sorted(c.items(), key=lambda kv: (-kv[1], kv[0]))[0][0]
        profiles[name] = ToolProfile(
            name=name,
            parameters=tuple(sorted(params[name].items())),
            output=top(outputs.get(name)),
            error_format=None if not errors.get(name) else ("json" if top(errors[name]).startswith("object") else "text"),
        )
    return profiles


def tool_clusters(profiles: Mapping[str, ToolProfile], threshold: float) -> list[list[str]]:
    names = sorted(profiles)
    parent = {n: n for n in names}

    def find(x: str) -> str:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    toks = {n: profiles[n].name_tokens() for n in names}
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            if jaccard(toks[a], toks[b]) >= threshold:
                parent[find(a)] = find(b)
    groups: dict[str, list[str]] = {}
    for n in names:
        groups.setdefault(find(n), []).append(n)
    return sorted(groups.values())


def facet_mismatch(a: ToolProfile, b: ToolProfile) -> tuple[int, int]:
    """(mismatched, compared) facet counts between two tools."""
    mismatched = compared = 0
    for facet in FACETS:
        fa, fb = a.facet(facet), b.facet(facet)
        if fa is None or fb is None:
            continue
        compared += 1
        mismatched += fa != fb
    return mismatched, compared


def detect_inconsistent_tool_interface(t: Trajectory, cfg: DetectorConfig) -> RawFinding:
    profiles = tool_profiles(t, cfg)
    best, best_cluster = 0.0, None
    for cluster in tool_clusters(profiles, cfg.cluster_similarity):
        if len(cluster) < 2:
            continue
        mism = comp = 0
        for i, a in enumerate(cluster):
            for b in cluster[i + 1:]:
                m, c = facet_mismatch(profiles[a], profiles[b])
                mism += m
                comp += c
        ratio = mism / comp if comp else 0.0
        if ratio > best:
            best, best_cluster = ratio, cluster
    spans = []
    if best_cluster:
        idx = [ev.index for ev in t.tool_calls() if ev.tool.tool_name in best_cluster]
        if idx:
            spans = [(idx[0], idx[-1])]
    return _finding(DefectClass.INCONSISTENT_TOOL_INTERFACE, cfg, best,
                    {"tools": float(len(profiles)), "max_mismatch": best}, spans,
                    rationale="" if not best_cluster else "cluster " + "/".join(best_cluster))


def intent_matchers(t: Trajectory, cfg: DetectorConfig) -> dict[str, tuple[str, ...]]:
    out = {k: tuple(v) for k, v in cfg.intent_matchers.items()}
    for k, v in t.metadata_json("intent_matchers", {}).items():
        out[k] = tuple(v)
    return out


def detect_weak_tool(t: Trajectory, cfg: DetectorConfig) -> RawFinding:
    catalog = {n: p for n, p in tool_profiles(t, cfg).items() if p.declared and p.capabilities}
    matchers = intent_matchers(t, cfg)
    if not catalog or not matchers:
        return _finding(DefectClass.WEAK_TOOL, cfg, 0.0, {"applicable": 0.0}, [],
                        rationale="inapplicable: no capability tags or intent matchers")
    kw = {tag: {w.lower() for w in words} for tag, words in matchers.items()}
    calls_at = {ev.index: ev.tool.tool_name for ev in t.tool_calls()}
    contexts = []  # (event index, intent tags)
    for ev in t.events:
        if ev.event_type is not EventType.MESSAGE:
            continue
        toks = set(normalize_tokens(ev.payload))
        tags = {tag for tag, words in kw.items() if toks & words}
        if tags:
            contexts.append((ev.index, tags))

    def invoked(i: int, tool: str) -> bool:
        return any(calls_at.get(j) == tool for j in range(i + 1, i + cfg.weak_horizon + 1))

    best, worst_tool, weak = 0.0, None, 0
    spans = []
    for name in sorted(catalog):
        caps = set(catalog[name].capabilities)
        ctx = [i for i, tags in contexts if tags & caps]
        if not ctx:
            continue
        own = sum(invoked(i, name) for i in ctx) / len(ctx)
        alts = [a for a in sorted(catalog) if a != name and caps & set(catalog[a].capabilities)]
        alt = max((sum(invoked(i, a) for i in ctx) / len(ctx) for a in alts), default=0.0)
        if own < cfg.weak_low_rate and alt > cfg.weak_alt_rate:
            weak += 1
            if alt - own > best:
                best, worst_tool = alt - own, name
                spans = [(ctx[0], ctx[-1])]
    return _finding(DefectClass.WEAK_TOOL, cfg, best,
                    {"applicable": 1.0, "contexts": float(len(contexts)), "weak_tools": float(weak)}, spans,
                    rationale="" if worst_tool is None else f"tool {worst_tool}")


DETECTORS: dict[DefectClass, Callable[[Trajectory, DetectorConfig], RawFinding]] = {
    DefectClass.GHOST_CONTEXT: detect_ghost_context,
    DefectClass.OVERSIZED_RULES: detect_oversized_rules,
    DefectClass.CW_THRASHING: detect_cw_thrashing,
    DefectClass.DUPLICATE_STEP: detect_duplicate_step,
    DefectClass.TOOL_CALL_CHAIN: detect_tool_call_chain,
    DefectClass.DEAD_STEP: detect_dead_step,
    DefectClass.LONG_CHAIN: detect_long_chain,
    DefectClass.WRAPPER_WORKFLOW: detect_wrapper_workflow,
    DefectClass.CONTEXT_COUPLING: detect_context_coupling,
    DefectClass.INCONSISTENT_TOOL_INTERFACE: detect_inconsistent_tool_interface,
    DefectClass.WEAK_TOOL: detect_weak_tool,
}


def detect_all(t: Trajectory, cfg: DetectorConfig | None = None) -> list[RawFinding]:
    cfg = cfg or DetectorConfig()
    return [DETECTORS[d](t, cfg) for d in DEFECTS]
