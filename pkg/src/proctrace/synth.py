"""Seeded synthetic trajectories with labeled defect injection.

The generator builds a clean baseline whose evidence stays below threshold
for every detector, then splices in minimal instances of each defect
pattern.  Everything is a pure function of ``(spec, seed)``.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Mapping, Sequence

from .calibration import CalibrationContext
from .detectors import DEFECTS, DefectClass, DetectorConfig, EvidenceRecord
from .evaluation import Label
from .trajectory import (
    ContextSegment,
    ContextState,
    Dependency,
    Event,
    EventType,
    ExternalOp,
    OpKind,
    Outcome,
    SegmentTag,
    Source,
    ToolInvocation,
    Trajectory,
    Validation,
    ValidationStatus,
    validate_trajectory,
)


class SynthError(ValueError):
    """The requested spec or injection cannot be realised."""


class Topology(str, Enum):
    FLAT = "flat"
    TREE = "tree"
    CYCLIC = "cyclic"


@dataclass(frozen=True)
class ToolSpec:
    name: str
    description: str
    parameters: tuple[tuple[str, str], ...]
    capability: str
    output: str = "text"
    error_format: str = "text"
    effect: OpKind | None = None  # external op carried by the result
    validates: bool = False

    def catalog_entry(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "parameters": dict(self.parameters),
            "output": self.output,
            "error_format": self.error_format,
            "capabilities": [self.capability] if self.capability else [],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ToolSpec":
        params = d.get("parameters") or {}
        return cls(
            name=d["name"],
            description=d.get("description", ""),
            parameters=tuple(params.items()) if isinstance(params, Mapping) else tuple(map(tuple, params)),
            capability=d.get("capability", ""),
            output=d.get("output", "text"),
            error_format=d.get("error_format", "text"),
            effect=OpKind(d["effect"]) if d.get("effect") else None,
            validates=bool(d.get("validates", False)),
        )


DEFAULT_PALETTE: tuple[ToolSpec, ...] = (
    ToolSpec("read_file", "return the contents of one source file", (("path", "string"),), "inspect"),
    ToolSpec("search_code", "grep repository index for a pattern", (("pattern", "string"), ("max_hits", "integer")),
             "search"),
    ToolSpec("run_tests", "execute unit test suite", (("target", "string"),), "verify", validates=True),
    ToolSpec("edit_file", "apply patch on disk", (("path", "string"), ("patch", "string")), "modify",
             effect=OpKind.FILE_WRITE),
    ToolSpec("list_dir", "enumerate entries below directory", (("directory", "string"),), "explore"),
    ToolSpec("shell", "spawn subprocess command line", (("command", "string"),), "execute"),
)


@dataclass(frozen=True)
class Injection:
    defect: DefectClass
    intensity: float
    hints: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.intensity <= 1.0:
            raise SynthError(f"{self.defect.value}: intensity {self.intensity} outside [0, 1]")

    @property
    def exempt(self) -> bool:
        return bool(self.hints.get("exempt", False))


@dataclass(frozen=True)
class SynthSpec:
    event_count: tuple[int, int] = (20, 40)
    palette: tuple[ToolSpec, ...] = DEFAULT_PALETTE
    topology: Topology = Topology.TREE
    n_units: int = 3
    capacity: int = 10_000
    injections: tuple[Injection, ...] = ()
    injection_floor: float = 0.3
    outcome: Outcome = Outcome.SUCCESS
    source: Source = Source.SYNTHETIC
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.event_count
        if lo < 3 or hi < lo:
            raise SynthError(f"event_count range {self.event_count} invalid (need 3 <= lo <= hi)")
        if len(self.palette) < 5:
            raise SynthError("palette needs at least 5 tools to avoid periodic call runs")
        if len({t.name for t in self.palette}) != len(self.palette):
            raise SynthError("palette tool names must be unique")
        if self.capacity < 1000:
            raise SynthError("capacity must be at least 1000 tokens")
        if not 0.0 <= self.injection_floor < 1.0:
            raise SynthError("injection_floor must lie in [0, 1)")
        if self.n_units < 1:
            raise SynthError("n_units must be >= 1")
        if self.topology is Topology.CYCLIC and self.n_units < 2:
            raise SynthError("cyclic topology needs at least 2 units")
        if self.topology is Topology.TREE and self.n_units < 2:
            raise SynthError("tree topology needs at least 2 units")

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "SynthSpec":
        d = dict(d or {})
        known = {"event_count", "palette", "topology", "n_units", "capacity", "injections",
                 "injection_floor", "outcome", "source", "seed"}
        unknown = set(d) - known
        if unknown:
            raise SynthError(f"unknown synth spec keys: {sorted(unknown)}")
        kw: dict[str, Any] = {}
        if "event_count" in d:
            kw["event_count"] = tuple(d["event_count"])
        if "palette" in d:
            kw["palette"] = tuple(ToolSpec.from_dict(x) for x in d["palette"])
        if "topology" in d:
            kw["topology"] = Topology(d["topology"])
        if "outcome" in d:
            kw["outcome"] = Outcome(d["outcome"])
        if "source" in d:
            kw["source"] = Source(d["source"])
        if "injections" in d:
            kw["injections"] = tuple(
                Injection(DefectClass(x["defect"]), float(x.get("intensity", 1.0)), dict(x.get("hints") or {}))
                for x in d["injections"]
            )
        for key in ("n_units", "capacity", "seed"):
            if key in d:
                kw[key] = int(d[key])
        if "injection_floor" in d:
            kw["injection_floor"] = float(d["injection_floor"])
        return cls(**kw)


@dataclass(frozen=True)
class GroundTruth:
    trajectory_id: str
    labels: dict[DefectClass, Label]
    spans: dict[DefectClass, tuple[tuple[int, int], ...]]

    def to_dict(self) -> dict:
        return {
            "schema": "ground-truth/1",
            "trajectory_id": self.trajectory_id,
            "labels": {d.value: self.labels[d].value for d in DEFECTS},
            "spans": {d.value: [list(s) for s in self.spans[d]] for d in DEFECTS if self.spans.get(d)},
        }


# --- draft representation -------------------------------------------------------------------
# Events are edited as mutable drafts keyed by a stable uid, so insertions never
# have to patch parent indices by hand.

@dataclass
class _Seg:
    seg_id: str
    tokens: int
    created: int  # uid
    tag: SegmentTag = SegmentTag.RAW_CONTENT
    last_ref: int | None = None


@dataclass
class _Draft:
    uid: int
    kind: EventType
    payload: str = ""
    tool: ToolInvocation | None = None
    validation: Validation | None = None
    op: ExternalOp | None = None
    parent: int | None = None
    unit: str | None = None
    branch: str | None = None
    agent: str | None = None
    overhead: int = 0
    capacity: int = 1
    segs: list[_Seg] = field(default_factory=list)


class _Doc:
    def __init__(self, drafts: list[_Draft], rng: random.Random, tag: str):
        self.drafts = drafts
        self.rng = rng
        self.next_uid = max((d.uid for d in drafts), default=-1) + 1
        self.counter = 0
        self.tag = tag
        self.metadata: dict | None = None

    @classmethod
    def from_trajectory(cls, t: Trajectory, rng: random.Random, tag: str) -> "_Doc":
        drafts = []
        for ev in t.events:
            ctx = ev.context
            segs = [_Seg(s.segment_id, s.token_count, s.created_at, s.tag, s.last_referenced_at)
                    for s in ctx.segments]
            dep = ev.dependency
            drafts.append(_Draft(
                uid=ev.index, kind=ev.event_type, payload=ev.payload, tool=ev.tool, validation=ev.validation,
                op=ev.external_op, parent=dep.parent_index, unit=dep.unit_id, branch=dep.branch_id,
                agent=dep.agent_id, overhead=ctx.tokens_used - sum(s.token_count for s in ctx.segments),
                capacity=ctx.window_capacity, segs=segs,
            ))
        return cls(drafts, rng, tag)

    # unique lowercase alphanumeric tokens that nothing else in the run will contain
    def words(self, k: int = 6) -> str:
        out = []
        for _ in range(k):
            out.append(f"{self.tag}w{self.counter}")
            self.counter += 1
        return " ".join(out)

    def pos(self, uid: int) -> int:
        for i, d in enumerate(self.drafts):
            if d.uid == uid:
                return i
        raise KeyError(uid)

    def new(self, kind: EventType, like: _Draft, **kw) -> _Draft:
        """A draft inheriting context and unit from ``like``."""
        d = _Draft(uid=self.next_uid, kind=kind, unit=like.unit, agent=like.agent, overhead=like.overhead,
                   capacity=like.capacity, segs=[replace(s) for s in like.segs])
        self.next_uid += 1
        for k, v in kw.items():
            setattr(d, k, v)
        return d

    def insert(self, at: int, items: Sequence[_Draft]) -> None:
        self.drafts[at:at] = list(items)

    def boundaries(self, lo: int = 1) -> list[int]:
        """Insertion points that don't separate a tool call from the event after it."""
        return [i for i in range(max(lo, 1), len(self.drafts) + 1)
                if self.drafts[i - 1].kind is not EventType.TOOL_CALL]

    def calls(self) -> list[_Draft]:
        return [d for d in self.drafts if d.kind is EventType.TOOL_CALL]

    def materialize(self, t: Trajectory, metadata: dict | None = None) -> tuple[Trajectory, dict[int, int]]:
        index_of = {d.uid: i for i, d in enumerate(self.drafts)}
        events = []
        for i, d in enumerate(self.drafts):
            segs = tuple(
                ContextSegment(s.seg_id, s.tokens, index_of[s.created], s.tag,
                               None if s.last_ref is None or s.last_ref not in index_of else index_of[s.last_ref])
                for s in d.segs
            )
            seg_total = sum(s.token_count for s in segs)
            cap = d.capacity
            overhead = d.overhead
            if overhead + seg_total > cap:
                overhead = max(0, cap - seg_total)
                cap = max(cap, seg_total)
            events.append(Event(
                index=i, event_type=d.kind, payload=d.payload, tool=d.tool, validation=d.validation,
                external_op=d.op, context=ContextState(overhead + seg_total, cap, segs),
                dependency=Dependency(None if d.parent is None else index_of[d.parent], d.branch, d.unit, d.agent),
            ))
        out = Trajectory(t.trajectory_id, tuple(events), t.source, t.outcome,
                         dict(metadata if metadata is not None else t.metadata))
        return validate_trajectory(out), index_of


def _args_for(tool: ToolSpec, doc: _Doc) -> dict[str, str]:
    args = {}
    for name, ty in tool.parameters:
        if ty == "integer":
            args[name] = str(10 + doc.counter)
            doc.counter += 1
        elif ty == "boolean":
            args[name] = "true"
        else:
            args[name] = doc.words(1)
    return args


def _pick_tool(palette: Sequence[ToolSpec], recent: list[str], rng: random.Random,
               exclude: set[str] = frozenset()) -> ToolSpec:
    """Uniform choice among tools not used in the last four calls, so no periodic run can form."""
    banned = set(recent[-4:]) | set(exclude)
    options = [t for t in palette if t.name not in banned]
    if not options:
        options = [t for t in palette if t.name not in set(recent[-1:])] or list(palette)
    return rng.choice(options)


def _step(doc: _Doc, tool: ToolSpec, like: _Draft, parent: int | None, quote: str, seg_drop: bool = True,
          intent: str | None = None) -> list[_Draft]:
    """plan message -> tool call -> tool result, the result owning a fresh raw segment."""
    intent = intent if intent is not None else tool.capability
    msg = doc.new(EventType.MESSAGE, like, payload=f"plan {intent} next {quote}".strip(), parent=parent)
    call = doc.new(EventType.TOOL_CALL, msg, tool=ToolInvocation(tool.name, _args_for(tool, doc)), parent=msg.uid)
    res = doc.new(EventType.TOOL_RESULT, call, payload=doc.words(6), parent=call.uid)
    if tool.effect is not None:
        res.op = ExternalOp(tool.effect, call.tool.arguments.get("path", tool.name))
    if tool.validates:
        res.validation = Validation(ValidationStatus.PASS, "ok")
    seg = _Seg(f"seg{doc.tag}{res.uid}", doc.rng.randint(200, 600), res.uid)
    res.segs.append(seg)
    return [msg, call, res]


def _quote(res: _Draft) -> str:
    own = [s.seg_id for s in res.segs if s.created == res.uid]
    return " ".join([res.payload] + own)


def _drop_old_segments(d: _Draft, keep: set[str]) -> None:
    d.segs = [s for s in d.segs if s.tag is not SegmentTag.RAW_CONTENT or s.seg_id in keep]


# --- clean baseline ----------------------------------------------------------------------------

def _units_for(spec: SynthSpec) -> list[str]:
    if spec.topology is Topology.FLAT:
        return ["main"]
    return ["main"] + [f"w{i}" for i in range(1, spec.n_units)]


def _clean_trajectory(spec: SynthSpec, seed: int) -> Trajectory:
    rng = random.Random(f"clean:{seed}")
    target = rng.randint(*spec.event_count)
    doc = _Doc([], rng, tag=f"c{seed % 1000}")
    tid = f"synth-{seed:06d}"
    overhead = int(0.10 * spec.capacity)
    rules = int(0.03 * spec.capacity)

    first = _Draft(uid=0, kind=EventType.CONTROL_MARKER, payload="stage start", unit="main", agent="agent-main",
                   op=ExternalOp(OpKind.STAGE_MARKER, "start"), overhead=overhead, capacity=spec.capacity)
    first.segs.append(_Seg("rules", rules, 0, SegmentTag.RULE_TEXT))
    doc.next_uid = 1
    doc.drafts.append(first)
    if target >= 4:
        doc.drafts.append(doc.new(EventType.MESSAGE, first, payload="user task request", parent=0))
    if target >= 6:
        cp = doc.new(EventType.EXTERNAL_OP, doc.drafts[-1], payload="checkpoint baseline",
                     op=ExternalOp(OpKind.CHECKPOINT, "baseline"), parent=doc.drafts[-1].uid)
        doc.drafts.append(cp)

    workers = _units_for(spec)[1:]
    pending_workers = list(workers)
    recent: list[str] = []
    last_main = doc.drafts[-1]
    last_result: _Draft | None = None
    live: list[str] = []
    mid_marker_done = False

    def room(k: int) -> bool:
        return len(doc.drafts) + k + 1 <= target

    while room(3):
        if not mid_marker_done and len(doc.drafts) >= target // 2 and room(4):
            marker = doc.new(EventType.CONTROL_MARKER, doc.drafts[-1], payload="stage midpoint", unit="main",
                             agent="agent-main", op=ExternalOp(OpKind.STAGE_MARKER, "midpoint"), parent=last_main.uid)
            doc.drafts.append(marker)
            last_main = marker
            mid_marker_done = True
            continue
        must = target - len(doc.drafts) <= 5 * len(pending_workers) + 4
        if pending_workers and room(5) and (must or rng.random() < 0.5):
            # delegate to a worker: main message, worker step, main picks the result up
            w = pending_workers.pop(0)
            quote = _quote(last_result) if last_result is not None else ""
            dele = doc.new(EventType.MESSAGE, doc.drafts[-1], payload=f"delegate {w} {quote}".strip(),
                           unit="main", agent="agent-main", parent=last_main.uid)
            _drop_old_segments(dele, set(live[-1:]))
            doc.drafts.append(dele)
            tool = _pick_tool(spec.palette, recent, rng)
            recent.append(tool.name)
            steps = _step(doc, tool, dele, dele.uid, "")
            for d in steps:
                d.unit, d.agent = w, f"agent-{w}"
            doc.drafts.extend(steps)
            last_result = steps[-1]
            live = [s.seg_id for s in last_result.segs if s.created == last_result.uid]
            back_parent = last_result.uid if spec.topology is Topology.CYCLIC and w == workers[0] else dele.uid
            ret = doc.new(EventType.MESSAGE, doc.drafts[-1], payload=f"collect {w} {_quote(last_result)}",
                          unit="main", agent="agent-main", parent=back_parent)
            doc.drafts.append(ret)
            last_main = ret
            last_result = None
            continue
        tool = _pick_tool(spec.palette, recent, rng)
        recent.append(tool.name)
        quote = _quote(last_result) if last_result is not None else ""
        steps = _step(doc, tool, doc.drafts[-1], last_main.uid, quote)
        for d in steps:
            d.unit, d.agent = "main", "agent-main"
        keep = set(live[-1:])
        for d in steps:
            _drop_old_segments(d, keep | {s.seg_id for s in d.segs if s.created == d.uid})
        doc.drafts.extend(steps)
        last_result = steps[-1]
        last_main = last_result
        live = [s.seg_id for s in last_result.segs if s.created == last_result.uid]

    if spec.topology is not Topology.FLAT and pending_workers and pending_workers[0] == workers[0]:
        raise SynthError(f"event_count too small to realise the {spec.topology.value} topology")
    closing_quote = _quote(last_result) if last_result is not None else "done"
    doc.drafts.append(doc.new(EventType.MESSAGE, doc.drafts[-1], payload=f"final answer {closing_quote}",
                              unit="main", agent="agent-main", parent=last_main.uid))
    metadata = {
        "tool_catalog": json.dumps([t.catalog_entry() for t in spec.palette], sort_keys=True),
        "intent_matchers": json.dumps({t.capability: [t.capability] for t in spec.palette if t.capability},
                                      sort_keys=True),
        "generator_seed": str(seed),
        "topology": spec.topology.value,
    }
    base = Trajectory(tid, (), spec.source, spec.outcome, metadata)
    t, _ = doc.materialize(base, metadata)
    return t


# --- injectors ---------------------------------------------------------------------------------------

def _units(t: Trajectory) -> list[str]:
    return sorted({ev.dependency.unit_id for ev in t.events if ev.dependency.unit_id is not None})


def _palette_of(t: Trajectory) -> list[ToolSpec]:
    out = []
    for entry in t.metadata_json("tool_catalog", []):
        caps = entry.get("capabilities") or []
        out.append(ToolSpec(entry["name"], entry.get("description", ""),
                            tuple((entry.get("parameters") or {}).items()), caps[0] if caps else "",
                            entry.get("output", "text"), entry.get("error_format", "text")))
    return out or list(DEFAULT_PALETTE)


def _inj_ghost(doc: _Doc, t: Trajectory, x: float, hints: Mapping) -> list[tuple[int, int]]:
    n = len(doc.drafts)
    spots = [b for b in doc.boundaries() if b <= max(1, int(0.15 * n))] or [1]
    at = spots[doc.rng.randrange(len(spots))] if "at" not in hints else max(1, int(hints["at"] * n))
    like = doc.drafts[at - 1]
    op = doc.new(EventType.CONTEXT_OP, like, payload=f"load notes {doc.words(8)}", parent=like.uid)
    doc.insert(at, [op])
    tag = SegmentTag.RETAINED_SUMMARY if hints.get("exempt") else SegmentTag.RAW_CONTENT
    seg = _Seg(f"ghost{doc.tag}", max(1, int(0.3 * x * like.capacity)), op.uid, tag)
    for d in doc.drafts[at:]:
        d.segs.append(replace(seg))
    return [(op.uid, doc.drafts[-1].uid)]


def _inj_oversized(doc: _Doc, t: Trajectory, x: float, hints: Mapping) -> list[tuple[int, int]]:
    first = doc.drafts[0]
    size = int((0.05 + 0.55 * x) * first.capacity)
    rule_ids = {s.seg_id for s in first.segs if s.tag is SegmentTag.RULE_TEXT}
    for d in doc.drafts:
        d.segs = [s for s in d.segs if s.seg_id not in rule_ids]
        d.segs.insert(0, _Seg("rules", size, first.uid, SegmentTag.RULE_TEXT))
    return [(first.uid, doc.drafts[-1].uid)]


def _inj_thrash(doc: _Doc, t: Trajectory, x: float, hints: Mapping) -> list[tuple[int, int]]:
    cycles = math.ceil(5 * x)
    spans = []
    spots = sorted(doc.rng.sample(doc.boundaries(), min(cycles, len(doc.boundaries()))), reverse=True)
    while len(spots) < cycles:
        spots.append(spots[-1])
    for k, at in enumerate(spots):
        like = doc.drafts[at - 1]
        current = like.overhead + sum(s.tokens for s in like.segs)
        fill = max(1, math.ceil(0.95 * like.capacity) - current)
        load = doc.new(EventType.CONTEXT_OP, like, payload=f"load bulk {doc.words(3)}", parent=like.uid)
        load.segs.append(_Seg(f"bulk{doc.tag}{k}", fill, load.uid))
        comp = doc.new(EventType.CONTEXT_OP, like, payload="compress context", parent=load.uid)
        doc.insert(at, [load, comp])
        spans.append((load.uid, comp.uid))
    return spans


def _inj_duplicate(doc: _Doc, t: Trajectory, x: float, hints: Mapping) -> list[tuple[int, int]]:
    calls = [c for c in doc.calls()]
    results = {d.parent: d for d in doc.drafts if d.kind is EventType.TOOL_RESULT}
    eligible = [c for c in calls if c.uid in results and results[c.uid].op is None]
    if not eligible:
        raise SynthError("duplicate_step uninjectable: no side-effect-free tool call to repeat")
    target = 0.75 * x
    copies: dict[int, int] = {}
    n_calls, pairs = len(calls), 0
    k = 0
    spans = []
    while pairs / n_calls < target or not copies:
        orig = eligible[k % len(eligible)]
        j = copies.get(orig.uid, 0)
        pairs += j + 1
        n_calls += 1
        copies[orig.uid] = j + 1
        k += 1
    for orig in eligible:
        m = copies.get(orig.uid, 0)
        if not m:
            continue
        res = results[orig.uid]
        at = doc.pos(res.uid) + 1
        block = []
        for _ in range(m):
            if hints.get("exempt"):
                block.append(doc.new(EventType.EXTERNAL_OP, res, payload="write scratch file",
                                     op=ExternalOp(OpKind.FILE_WRITE, "scratch.txt"), parent=res.uid))
            c2 = doc.new(EventType.TOOL_CALL, res, tool=orig.tool, parent=orig.parent)
            r2 = doc.new(EventType.TOOL_RESULT, c2, payload=res.payload, validation=res.validation, parent=c2.uid)
            block += [c2, r2]
            spans.append((orig.uid, c2.uid))
        doc.insert(at, block)
    return spans


def _inj_chain(doc: _Doc, t: Trajectory, x: float, hints: Mapping) -> list[tuple[int, int]]:
    palette = _palette_of(t)
    period = 2 + doc.rng.randrange(2)
    pattern = doc.rng.sample(palette, period)
    n_calls = len(doc.calls())
    reps = max(3, math.ceil(1.5 * x * n_calls / period))
    spots = doc.boundaries(lo=max(1, len(doc.drafts) // 3))
    at = spots[doc.rng.randrange(len(spots))]
    like = doc.drafts[at - 1]
    block: list[_Draft] = []
    prev = like
    for r in range(reps * period):
        tool = pattern[r % period]
        call = doc.new(EventType.TOOL_CALL, like, tool=ToolInvocation(tool.name, _args_for(tool, doc)),
                       parent=prev.uid)
        res = doc.new(EventType.TOOL_RESULT, like, payload=doc.words(6), parent=call.uid)
        ack = doc.new(EventType.MESSAGE, like, payload=f"retry loop {res.payload}", parent=res.uid)
        block += [call, res, ack]
        prev = ack
    doc.insert(at, block)
    return [(block[0].uid, block[-1].uid)]


def _inj_dead(doc: _Doc, t: Trajectory, x: float, hints: Mapping) -> list[tuple[int, int]]:
    palette = _palette_of(t)
    safe = [p for p in palette if p.capability in ("inspect", "explore", "search")] or palette
    n_results = sum(1 for d in doc.drafts if d.kind is EventType.TOOL_RESULT)
    k = math.ceil(1.5 * x * max(n_results, 1))
    spans = []
    for _ in range(k):
        spots = doc.boundaries()
        at = spots[doc.rng.randrange(len(spots))]
        like = doc.drafts[at - 1]
        tool = doc.rng.choice(safe)
        call = doc.new(EventType.TOOL_CALL, like, tool=ToolInvocation(tool.name, _args_for(tool, doc)),
                       parent=like.uid)
        res = doc.new(EventType.TOOL_RESULT, like, payload=doc.words(6), parent=call.uid)
        doc.insert(at, [call, res])
        spans.append((call.uid, res.uid))
    return spans


def _inj_long_chain(doc: _Doc, t: Trajectory, x: float, hints: Mapping) -> list[tuple[int, int]]:
    refs = DetectorConfig().long_chain_ref
    n_ref = refs.get(t.source.value, refs["other"])
    target = math.ceil(n_ref * (1 + 4 * x))
    palette = _palette_of(t)
    recent = [c.tool.tool_name for c in doc.calls()]
    last = doc.drafts[-1]
    first_new = None
    prev_res: _Draft | None = None
    while len(doc.drafts) + 4 <= target or first_new is None:
        tool = _pick_tool(palette, recent, doc.rng)
        recent.append(tool.name)
        quote = _quote(prev_res) if prev_res else ""
        steps = _step(doc, tool, doc.drafts[-1], doc.drafts[-1].uid, quote)
        keep = {s.seg_id for s in prev_res.segs if s.created == prev_res.uid} if prev_res else set()
        for d in steps:
            _drop_old_segments(d, keep | {s.seg_id for s in d.segs if s.created == d.uid})
        doc.drafts.extend(steps)
        prev_res = steps[-1]
        first_new = first_new or steps[0]
    doc.drafts.append(doc.new(EventType.MESSAGE, last, payload=f"wrap up {_quote(prev_res)}", parent=prev_res.uid))
    return [(first_new.uid, doc.drafts[-1].uid)]


def _inj_wrapper(doc: _Doc, t: Trajectory, x: float, hints: Mapping) -> list[tuple[int, int]]:
    palette = _palette_of(t)
    main = t.events[0].dependency.unit_id or "main"
    passthrough = round(5 * x)
    spans = []
    main_spots = [b for b in doc.boundaries(lo=2) if doc.drafts[b - 1].unit == main]
    if not main_spots:
        raise SynthError("wrapper_workflow uninjectable: no insertion point in the top-level unit")
    picks = sorted((doc.rng.choice(main_spots) for _ in range(5)), reverse=True)
    for k, at in enumerate(picks):
        like = doc.drafts[at - 1]
        parent = like.uid
        dele = doc.new(EventType.MESSAGE, like, payload="delegate wrapper", unit=main, parent=parent)
        wmsg = doc.new(EventType.MESSAGE, like, payload="wrapper forwarding", unit="wrapper", agent="agent-wrapper",
                       parent=dele.uid)
        block = [dele, wmsg]
        prev = wmsg
        quotes = []
        for _ in range(1 if k < passthrough else 2):
            tool = doc.rng.choice(palette[:2] if len(palette) >= 2 else palette)
            call = doc.new(EventType.TOOL_CALL, wmsg, tool=ToolInvocation(tool.name, _args_for(tool, doc)),
                           parent=prev.uid)
            res = doc.new(EventType.TOOL_RESULT, wmsg, payload=doc.words(6), parent=call.uid)
            block += [call, res]
            prev = res
            quotes.append(res.payload)
        ret = doc.new(EventType.MESSAGE, like, payload="returned " + " ".join(quotes), unit=main, parent=dele.uid)
        block.append(ret)
        doc.insert(at, block)
        if k < passthrough:
            spans.append((wmsg.uid, block[-2].uid))
    return spans


def _inj_coupling(doc: _Doc, t: Trajectory, x: float, hints: Mapping) -> list[tuple[int, int]]:
    units = _units(t)
    if len(units) < 2:
        raise SynthError("context_coupling uninjectable: trajectory has a single unit, nothing to couple")
    main = t.events[0].dependency.unit_id or units[0]
    other = [u for u in units if u != main]
    a, b = main, other[0]
    third = other[1] if len(other) > 1 else f"{b}x"
    spots = [s for s in doc.boundaries(lo=2) if doc.drafts[s - 1].unit == main] or doc.boundaries(lo=2)
    at = spots[doc.rng.randrange(len(spots))]
    like = doc.drafts[at - 1]
    hops = round(6 * x)
    block: list[_Draft] = []
    prev = like
    # hop i lands in seq[i]; the first hop leaves the top-level unit
    seq = [b if i % 2 == 0 else a for i in range(hops)]
    for i, unit in enumerate(seq):
        ev = doc.new(EventType.MESSAGE, like, payload=f"handoff {unit} round {i}", unit=unit,
                     agent=f"agent-{unit}", parent=prev.uid)
        block.append(ev)
        prev = ev
    if x >= 0.75:
        # close a three-unit cycle: a -> b -> third -> a
        if prev.unit != a:
            ev = doc.new(EventType.MESSAGE, like, payload=f"handoff {a} back", unit=a, agent=f"agent-{a}",
                         parent=prev.uid)
            block.append(ev)
            prev = ev
        for unit in (b, third, a):
            ev = doc.new(EventType.MESSAGE, like, payload=f"relay {unit}", unit=unit, agent=f"agent-{unit}",
                         parent=prev.uid)
            block.append(ev)
            prev = ev
    if not block:
        return []
    doc.insert(at, block)
    return [(block[0].uid, block[-1].uid)]


_FACET_ORDER = ("parameter_names", "parameter_types", "output_structure", "error_format")


def _inj_interface(doc: _Doc, t: Trajectory, x: float, hints: Mapping) -> list[tuple[int, int]]:
    catalog = t.metadata_json("tool_catalog", [])
    if not catalog:
        raise SynthError("inconsistent_tool_interface uninjectable: trajectory declares no tool catalog")
    base = catalog[doc.rng.randrange(len(catalog))]
    n_mis = math.ceil(4 * x)
    facets = set(_FACET_ORDER[:n_mis])
    params = dict(base.get("parameters") or {"arg": "string"})
    if "parameter_names" in facets:
        params = {f"{k}_ref": v for k, v in params.items()}
    if "parameter_types" in facets:
        params = {k: ("integer" if v != "integer" else "string") for k, v in params.items()}
    twin = {
        "name": f"{base['name']}_v2",
        "description": base.get("description", "") + " variant",
        "parameters": params,
        "output": "object:body,meta" if "output_structure" in facets else base.get("output", "text"),
        "error_format": ("json" if base.get("error_format", "text") != "json" else "text")
        if "error_format" in facets else base.get("error_format", "text"),
        "capabilities": [],
    }
    catalog = [c for c in catalog if c["name"] != twin["name"]] + [twin]
    doc_meta = dict(t.metadata)
    doc_meta["tool_catalog"] = json.dumps(catalog, sort_keys=True)
    doc.metadata = doc_meta
    spec = ToolSpec(twin["name"], twin["description"], tuple(params.items()), "")
    spots = doc.boundaries(lo=2)
    at = spots[doc.rng.randrange(len(spots))]
    like = doc.drafts[at - 1]
    call = doc.new(EventType.TOOL_CALL, like, tool=ToolInvocation(spec.name, _args_for(spec, doc)), parent=like.uid)
    res = doc.new(EventType.TOOL_RESULT, like, payload=doc.words(6), parent=call.uid)
    ack = doc.new(EventType.MESSAGE, like, payload=f"noted {res.payload}", parent=res.uid)
    doc.insert(at, [call, res, ack])
    return [(call.uid, ack.uid)]


def _inj_weak(doc: _Doc, t: Trajectory, x: float, hints: Mapping) -> list[tuple[int, int]]:
    catalog = t.metadata_json("tool_catalog", [])
    matchers = t.metadata_json("intent_matchers", {})
    host = next((c for c in catalog if c.get("capabilities")), None)
    if host is None or not matchers:
        raise SynthError("weak_tool uninjectable: needs a capability-tagged catalog and intent matchers")
    cap = host["capabilities"][0]
    keyword = matchers.get(cap, [cap])[0]
    weak = {
        "name": "lookup_index",
        "description": "secondary lookup service",
        "parameters": {"query": "string"},
        "output": "text",
        "error_format": "text",
        "capabilities": [cap],
    }
    catalog = [c for c in catalog if c["name"] != weak["name"]] + [weak]
    meta = dict(t.metadata)
    meta["tool_catalog"] = json.dumps(catalog, sort_keys=True)
    doc.metadata = meta
    host_spec = ToolSpec(host["name"], host.get("description", ""), tuple((host.get("parameters") or {}).items()), cap)
    weak_spec = ToolSpec(weak["name"], weak["description"], (("query", "string"),), cap)

    def contexts() -> list[_Draft]:
        return [d for d in doc.drafts if d.kind is EventType.MESSAGE and keyword in d.payload.lower().split()]

    while len(contexts()) < 3:
        spots = doc.boundaries(lo=2)
        at = spots[doc.rng.randrange(len(spots))]
        like = doc.drafts[at - 1]
        steps = _step(doc, host_spec, like, like.uid, "", intent=keyword)
        ack = doc.new(EventType.MESSAGE, like, payload=f"noted {steps[-1].payload}", parent=steps[-1].uid)
        doc.insert(at, steps + [ack])
    ctx = contexts()
    swap = round((1 - x) * len(ctx))
    for d in ctx[:swap]:
        i = doc.pos(d.uid)
        nxt = doc.drafts[i + 1] if i + 1 < len(doc.drafts) else None
        if nxt is not None and nxt.kind is EventType.TOOL_CALL:
            nxt.tool = ToolInvocation(weak_spec.name, _args_for(weak_spec, doc))
    return [(ctx[0].uid, ctx[-1].uid)]


_INJECTORS = {
    DefectClass.GHOST_CONTEXT: _inj_ghost,
    DefectClass.OVERSIZED_RULES: _inj_oversized,
    DefectClass.CW_THRASHING: _inj_thrash,
    DefectClass.DUPLICATE_STEP: _inj_duplicate,
    DefectClass.TOOL_CALL_CHAIN: _inj_chain,
    DefectClass.DEAD_STEP: _inj_dead,
    DefectClass.LONG_CHAIN: _inj_long_chain,
    DefectClass.WRAPPER_WORKFLOW: _inj_wrapper,
    DefectClass.CONTEXT_COUPLING: _inj_coupling,
    DefectClass.INCONSISTENT_TOOL_INTERFACE: _inj_interface,
    DefectClass.WEAK_TOOL: _inj_weak,
}

EXEMPTABLE = frozenset({DefectClass.GHOST_CONTEXT, DefectClass.DUPLICATE_STEP})


def _inject(t: Trajectory, defect: DefectClass, intensity: float, seed: int,
            hints: Mapping | None = None) -> tuple[Trajectory, list[tuple[int, int]], dict[int, int]]:
    hints = dict(hints or {})
    if not 0.0 <= intensity <= 1.0:
        raise SynthError(f"intensity {intensity} outside [0, 1]")
    if hints.get("exempt") and defect not in EXEMPTABLE:
        raise SynthError(f"{defect.value} has no exempt variant")
    identity = {i: i for i in range(len(t.events))}
    if intensity == 0.0:
        return t, [], identity
    rng = random.Random(f"inject:{defect.value}:{seed}")
    doc = _Doc.from_trajectory(t, rng, tag=f"{defect.value[:2]}{rng.getrandbits(24):06x}")
    doc.metadata = dict(t.metadata)
    spans_uid = _INJECTORS[defect](doc, t, intensity, hints)
    out, index_of = doc.materialize(t, doc.metadata)
    spans = sorted((index_of[a], index_of[b]) for a, b in spans_uid)
    return out, spans, {old: index_of[old] for old in identity}


def inject_defect(t: Trajectory, defect: DefectClass | str, intensity: float, seed: int = 0,
                  hints: Mapping | None = None) -> tuple[Trajectory, list[tuple[int, int]]]:
    """Splice one defect pattern into ``t``; returns the new trajectory and the injected spans."""
    out, spans, _ = _inject(t, DefectClass(defect), intensity, seed, hints)
    return out, spans


def generate_trajectory(spec: SynthSpec, seed: int | None = None) -> tuple[Trajectory, GroundTruth]:
    seed = spec.seed if seed is None else seed
    t = _clean_trajectory(spec, seed)
    spans: dict[DefectClass, list[tuple[int, int]]] = {d: [] for d in DEFECTS}
    labels = {d: Label.ABSENT for d in DEFECTS}
    for k, inj in enumerate(spec.injections):
        t, new_spans, moved = _inject(t, inj.defect, inj.intensity, seed * 1009 + k, inj.hints)
        for d in spans:
            spans[d] = [(moved[a], moved[b]) for a, b in spans[d]]
        spans[inj.defect].extend(new_spans)
        if inj.intensity > spec.injection_floor:
            labels[inj.defect] = Label.EXEMPT if inj.exempt else Label.PRESENT
    gt = GroundTruth(t.trajectory_id, labels, {d: tuple(sorted(s)) for d, s in spans.items()})
    return t, gt


# --- labeled findings for calibration experiments ---------------------------------------------

@dataclass(frozen=True)
class LabeledFinding:
    evidence: EvidenceRecord
    context: CalibrationContext
    label: int


_NOISE_SOURCES = ("android", "terminal", "swebench")
_NOISE_HORIZONS = ("short", "medium", "long")


def labeled_findings(n: int, seed: int, noise: float = 0.25) -> list[LabeledFinding]:
    """Evidence scores with known labels and context-dependent trigger noise.

    Each (source, horizon) context shifts scores by its own offset, so the
    same raw score means different defect odds in different contexts: a fixed
    threshold misfires, while a context-aware calibrator can recover.
    """
    rng = random.Random(f"labeled:{seed}")
    ctx_rng = random.Random("labeled-contexts")
    offsets = {(s, h): ctx_rng.uniform(-noise, noise) for s in _NOISE_SOURCES for h in _NOISE_HORIZONS}
    base_rate = {d: 0.15 + 0.5 * ctx_rng.random() for d in DEFECTS}
    out = []
    for _ in range(n):
        d = DEFECTS[rng.randrange(len(DEFECTS))]
        src, hor = rng.choice(_NOISE_SOURCES), rng.choice(_NOISE_HORIZONS)
        y = 1 if rng.random() < base_rate[d] else 0
        mu = 0.62 if y else 0.32
        s = min(1.0, max(0.0, rng.gauss(mu, 0.16) + offsets[(src, hor)]))
        out.append(LabeledFinding(EvidenceRecord(d, s), CalibrationContext(src, hor), y))
    return out
