"""Standardized trajectory model and its canonical line-delimited format.

A trajectory is an ordered tuple of :class:`Event` records.  Every event
carries the seven components (type, payload, tool invocation, validation
result, external operation, context state, dependency info) plus its index.

The canonical file format is UTF-8 JSON lines: one header record followed by
one record per event.  Keys are sorted and separators fixed, so equal
trajectories always serialize to identical bytes.
"""

from __future__ import annotations

import json
import re
import string
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable

SCHEMA_VERSION = "trajectory/1"


class EventType(str, Enum):
    MESSAGE = "message"
    TOOL_CALL = "tool_call"
    TOOL_RESULT = "tool_result"
    CONTEXT_OP = "context_op"
    EXTERNAL_OP = "external_op"
    CONTROL_MARKER = "control_marker"


class ValidationStatus(str, Enum):
    PASS = "pass"
    FAIL = "fail"
    NONE = "none"


class OpKind(str, Enum):
    FILE_WRITE = "file_write"
    FILE_DELETE = "file_delete"
    NETWORK = "network"
    PROCESS_SPAWN = "process_spawn"
    VCS_COMMIT = "vcs_commit"
    CHECKPOINT = "checkpoint"
    ROLLBACK = "rollback"
    HANDOFF_REQUEST = "handoff_request"
    CONFIRMATION_POINT = "confirmation_point"
    STAGE_MARKER = "stage_marker"


class SegmentTag(str, Enum):
    RULE_TEXT = "rule_text"
    RETAINED_SUMMARY = "retained_summary"
    PERSISTENT_MEMORY = "persistent_memory"
    RAW_CONTENT = "raw_content"


class Source(str, Enum):
    ANDROID = "android"
    TERMINAL = "terminal"
    SWEBENCH = "swebench"
    SYNTHETIC = "synthetic"
    OTHER = "other"


class Outcome(str, Enum):
    SUCCESS = "success"
    FAILURE = "failure"
    UNKNOWN = "unknown"


MUTATING_OPS = frozenset({OpKind.FILE_WRITE, OpKind.FILE_DELETE, OpKind.VCS_COMMIT, OpKind.ROLLBACK})


class TrajectoryError(ValueError):
    """A trajectory violates one of the event invariants."""

    def __init__(self, message: str, index: int | None = None):
        self.index = index
        super().__init__(message if index is None else f"event {index}: {message}")


class ParseError(ValueError):
    """Canonical text could not be decoded."""

    def __init__(self, message: str, line: int):
        self.line = line
        super().__init__(f"line {line}: {message}")


@dataclass(frozen=True)
class ToolInvocation:
    tool_name: str
    arguments: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class Validation:
    status: ValidationStatus = ValidationStatus.NONE
    detail: str = ""


@dataclass(frozen=True)
class ExternalOp:
    op_kind: OpKind
    target: str = ""


@dataclass(frozen=True)
class ContextSegment:
    segment_id: str
    token_count: int
    created_at: int
    tag: SegmentTag = SegmentTag.RAW_CONTENT
    last_referenced_at: int | None = None


@dataclass(frozen=True)
class ContextState:
    tokens_used: int = 0
    window_capacity: int = 1
    segments: tuple[ContextSegment, ...] = ()


@dataclass(frozen=True)
class Dependency:
    parent_index: int | None = None
    branch_id: str | None = None
    unit_id: str | None = None
    agent_id: str | None = None


@dataclass(frozen=True)
class Event:
    index: int
    event_type: EventType
    payload: str = ""
    tool: ToolInvocation | None = None
    validation: Validation | None = None
    external_op: ExternalOp | None = None
    context: ContextState = field(default_factory=ContextState)
    dependency: Dependency = field(default_factory=Dependency)

    @property
    def validation_status(self) -> ValidationStatus:
        return self.validation.status if self.validation else ValidationStatus.NONE

    @property
    def op_kind(self) -> OpKind | None:
        return self.external_op.op_kind if self.external_op else None


@dataclass(frozen=True)
class Trajectory:
    trajectory_id: str
    events: tuple[Event, ...]
    source: Source = Source.OTHER
    outcome: Outcome = Outcome.UNKNOWN
    metadata: dict[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.events)

    def tool_calls(self) -> list[Event]:
        return [e for e in self.events if e.event_type is EventType.TOOL_CALL]

    def tool_results(self) -> list[Event]:
        return [e for e in self.events if e.event_type is EventType.TOOL_RESULT]

    def metadata_json(self, key: str, default: Any = None) -> Any:
        """Decode a metadata entry holding JSON text; ``default`` if absent."""
        raw = self.metadata.get(key)
        if raw is None:
            return default
        return json.loads(raw)


def validate_trajectory(t: Trajectory) -> Trajectory:
    """Check every event invariant, raising :class:`TrajectoryError` on the first violation."""
    if not t.events:
        raise TrajectoryError("trajectory has no events")
    for pos, ev in enumerate(t.events):
        if ev.index != pos:
            raise TrajectoryError(f"index {ev.index} out of order, expected {pos}", pos)
        ctx = ev.context
        if ctx.window_capacity <= 0:
            raise TrajectoryError("window_capacity must be positive", pos)
        if ctx.tokens_used < 0:
            raise TrajectoryError("tokens_used must be non-negative", pos)
        if ctx.tokens_used > ctx.window_capacity:
            raise TrajectoryError(
                f"tokens_used {ctx.tokens_used} exceeds window_capacity {ctx.window_capacity}", pos
            )
        seg_total = 0
        for seg in ctx.segments:
            if seg.token_count < 0:
                raise TrajectoryError(f"segment {seg.segment_id} has negative token_count", pos)
            if seg.last_referenced_at is not None and seg.last_referenced_at < seg.created_at:
                raise TrajectoryError(f"segment {seg.segment_id} referenced before creation", pos)
            seg_total += seg.token_count
        if seg_total > ctx.tokens_used:
            raise TrajectoryError(f"segments hold {seg_total} tokens but tokens_used is {ctx.tokens_used}", pos)
        parent = ev.dependency.parent_index
        if parent is not None and not 0 <= parent < pos:
            raise TrajectoryError(f"parent_index {parent} does not precede the event", pos)
        if ev.event_type is EventType.TOOL_RESULT:
            if parent is None or t.events[parent].event_type is not EventType.TOOL_CALL:
                raise TrajectoryError("tool_result must have a tool_call parent", pos)
        if ev.event_type is EventType.TOOL_CALL and ev.tool is None:
            raise TrajectoryError("tool_call without tool invocation", pos)
    return t


# --- text normalization shared by reference detection and similarity -------

_PUNCT = string.punctuation


def normalize_tokens(text: str) -> list[str]:
    """Lowercase, whitespace-split, strip surrounding punctuation; drop empties."""
    out = []
    for raw in text.lower().split():
        tok = raw.strip(_PUNCT)
        if tok:
            out.append(tok)
    return out


def token_set(text: str) -> frozenset[str]:
    return frozenset(normalize_tokens(text))


def event_text_tokens(ev: Event) -> frozenset[str]:
    """Tokens of an event's payload together with its tool argument values."""
    parts = [ev.payload]
    if ev.tool is not None:
        parts.extend(ev.tool.arguments.values())
    return token_set(" ".join(parts))


# --- canonical format ----------------------------------------------------------

def _dump(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _event_record(ev: Event) -> dict:
    return {
        "record": "event",
        "index": ev.index,
        "type": ev.event_type.value,
        "payload": ev.payload,
        "tool": None if ev.tool is None else {"name": ev.tool.tool_name, "arguments": dict(ev.tool.arguments)},
        "validation": None
        if ev.validation is None
        else {"status": ev.validation.status.value, "detail": ev.validation.detail},
        "external_op": None
        if ev.external_op is None
        else {"kind": ev.external_op.op_kind.value, "target": ev.external_op.target},
        "context": {
            "tokens_used": ev.context.tokens_used,
            "window_capacity": ev.context.window_capacity,
            "segments": [
                {
                    "id": s.segment_id,
                    "tokens": s.token_count,
                    "created_at": s.created_at,
                    "last_referenced_at": s.last_referenced_at,
                    "tag": s.tag.value,
                }
                for s in ev.context.segments
            ],
        },
        "dependency": {
            "parent_index": ev.dependency.parent_index,
            "branch_id": ev.dependency.branch_id,
            "unit_id": ev.dependency.unit_id,
            "agent_id": ev.dependency.agent_id,
        },
    }


def canonical_serialize(t: Trajectory) -> bytes:
    header = {
        "record": "header",
        "schema": SCHEMA_VERSION,
        "trajectory_id": t.trajectory_id,
        "source": t.source.value,
        "outcome": t.outcome.value,
        "metadata": dict(t.metadata),
    }
    lines = [_dump(header)] + [_dump(_event_record(ev)) for ev in t.events]
    return ("\n".join(lines) + "\n").encode("utf-8")


def _enum(cls, value, line: int):
    try:
        return cls(value)
    except ValueError:
        raise ParseError(f"unknown {cls.__name__} value {value!r}", line) from None


def _opt_int(value, name: str, line: int) -> int | None:
    if value is None:
        return None
    if not isinstance(value, int) or isinstance(value, bool):
        raise ParseError(f"{name} must be an integer", line)
    return value


def _int(value, name: str, line: int) -> int:
    out = _opt_int(value, name, line)
    if out is None:
        raise ParseError(f"{name} is required", line)
    return out


def _opt_str(value, name: str, line: int) -> str | None:
    if value is not None and not isinstance(value, str):
        raise ParseError(f"{name} must be a string", line)
    return value


def _parse_event(rec: dict, line: int) -> Event:
    if rec.get("record") != "event":
        raise ParseError("expected an event record", line)
    tool = rec.get("tool")
    if tool is not None:
        args = tool.get("arguments") or {}
        if not all(isinstance(k, str) and isinstance(v, str) for k, v in args.items()):
            raise ParseError("tool arguments must map text to text", line)
        tool = ToolInvocation(tool_name=str(tool["name"]), arguments=dict(args))
    val = rec.get("validation")
    if val is not None:
        val = Validation(status=_enum(ValidationStatus, val.get("status", "none"), line), detail=val.get("detail", ""))
    op = rec.get("external_op")
    if op is not None:
        op = ExternalOp(op_kind=_enum(OpKind, op.get("kind"), line), target=op.get("target", ""))
    ctx = rec.get("context") or {}
    segments = tuple(
        ContextSegment(
            segment_id=str(s["id"]),
            token_count=_int(s.get("tokens"), "segment tokens", line),
            created_at=_int(s.get("created_at"), "created_at", line),
            last_referenced_at=_opt_int(s.get("last_referenced_at"), "last_referenced_at", line),
            tag=_enum(SegmentTag, s.get("tag", "raw_content"), line),
        )
        for s in ctx.get("segments", [])
    )
    dep = rec.get("dependency") or {}
    return Event(
        index=_int(rec.get("index"), "index", line),
        event_type=_enum(EventType, rec.get("type"), line),
        payload=_opt_str(rec.get("payload", ""), "payload", line) or "",
        tool=tool,
        validation=val,
        external_op=op,
        context=ContextState(
            tokens_used=_int(ctx.get("tokens_used", 0), "tokens_used", line),
            window_capacity=_int(ctx.get("window_capacity", 1), "window_capacity", line),
            segments=segments,
        ),
        dependency=Dependency(
            parent_index=_opt_int(dep.get("parent_index"), "parent_index", line),
            branch_id=_opt_str(dep.get("branch_id"), "branch_id", line),
            unit_id=_opt_str(dep.get("unit_id"), "unit_id", line),
            agent_id=_opt_str(dep.get("agent_id"), "agent_id", line),
        ),
    )


def canonical_parse(data: bytes | str) -> Trajectory:
    """Inverse of :func:`canonical_serialize`; validates the result."""
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty input", 1)
    records = []
    for no, raw in enumerate(lines, start=1):
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON ({exc.msg})", no) from None
        if not isinstance(rec, dict):
            raise ParseError("record must be an object", no)
        records.append(rec)
    head = records[0]
    if head.get("record") != "header":
        raise ParseError("first record must be the header", 1)
    if head.get("schema") != SCHEMA_VERSION:
        raise ParseError(f"unsupported schema {head.get('schema')!r}", 1)
    meta = head.get("metadata") or {}
    if not all(isinstance(v, str) for v in meta.values()):
        raise ParseError("metadata values must be text", 1)
    events = []
    for no, rec in enumerate(records[1:], start=2):
        ev = _parse_event(rec, no)
        if ev.index != no - 2:
            raise ParseError(f"event index {ev.index} out of order", no)
        events.append(ev)
    t = Trajectory(
        trajectory_id=str(head.get("trajectory_id", "")),
        source=_enum(Source, head.get("source", "other"), 1),
        outcome=_enum(Outcome, head.get("outcome", "unknown"), 1),
        metadata=dict(meta),
        events=tuple(events),
    )
    return validate_trajectory(t)


# --- derived context statistics --------------------------------------------------

@dataclass(frozen=True)
class SegmentStats:
    segment_id: str
    tag: SegmentTag
    created_at: int
    last_present: int
    occupancy: float
    reference_rate: float
    persistence: int
    references: int


_SEGMENT_OVERLAP_TOKENS = 5


def _references_segment(ev: Event, seg_id: str, content: frozenset[str]) -> bool:
    toks = event_text_tokens(ev)
    if seg_id.lower() in toks:
        return True
    if len(content) >= _SEGMENT_OVERLAP_TOKENS and len(toks & content) >= _SEGMENT_OVERLAP_TOKENS:
        return True
    return False


def context_segment_stats(t: Trajectory) -> dict[str, SegmentStats]:
    """Occupancy, reference rate and persistence for every segment ever present.

    A segment's content is taken to be the payload of the event that created
    it; an event references the segment when it names the segment id or shares
    at least five normalized tokens with that content.
    """
    present: dict[str, list[tuple[int, float]]] = {}
    info: dict[str, ContextSegment] = {}
    for ev in t.events:
        cap = ev.context.window_capacity
        for seg in ev.context.segments:
            present.setdefault(seg.segment_id, []).append((ev.index, seg.token_count / cap))
            info.setdefault(seg.segment_id, seg)
    out = {}
    n = len(t.events)
    for seg_id, obs in present.items():
        seg = info[seg_id]
        last = max(i for i, _ in obs)
        persistence = max(0, last - seg.created_at)
        creator = t.events[seg.created_at].payload if 0 <= seg.created_at < n else ""
        content = token_set(creator)
        refs = sum(
            1 for ev in t.events[seg.created_at + 1 : last + 1] if _references_segment(ev, seg_id, content)
        )
        out[seg_id] = SegmentStats(
            segment_id=seg_id,
            tag=seg.tag,
            created_at=seg.created_at,
            last_present=last,
            occupancy=sum(o for _, o in obs) / len(obs),
            reference_rate=min(1.0, refs / max(persistence, 1)),
            persistence=persistence,
            references=refs,
        )
    return out


_SLUG = re.compile(r"[^A-Za-z0-9_.-]+")


def slugify(name: str) -> str:
    return _SLUG.sub("_", name).strip("_") or "trajectory"


def iter_segments(t: Trajectory) -> Iterable[tuple[Event, ContextSegment]]:
    for ev in t.events:
        for seg in ev.context.segments:
            yield ev, seg
