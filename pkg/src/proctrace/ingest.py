"""Raw-log adapters mapping agent logs onto the standardized trajectory."""

from __future__ import annotations

import json
from typing import Callable

from .trajectory import (
    ContextState,
    Dependency,
    Event,
    EventType,
    ExternalOp,
    OpKind,
    Outcome,
    ParseError,
    Source,
    ToolInvocation,
    Trajectory,
    TrajectoryError,
    Validation,
    ValidationStatus,
    canonical_parse,
    validate_trajectory,
)


class IngestError(ValueError):
    """Malformed raw input; ``offset`` is the byte offset of the offending record."""

    def __init__(self, reason: str, offset: int | None = None, index: int | None = None):
        self.reason = reason
        self.offset = offset
        self.index = index
        where = f"byte {offset}: " if offset is not None else ""
        super().__init__(where + reason)


Adapter = Callable[[bytes, str], Trajectory]
_ADAPTERS: dict[str, Adapter] = {}


def register_adapter(name: str):
    def deco(fn: Adapter) -> Adapter:
        if name in _ADAPTERS:
            raise ValueError(f"adapter {name!r} already registered")
        _ADAPTERS[name] = fn
        return fn
    return deco


def adapters() -> list[str]:
    return sorted(_ADAPTERS)


def ingest_raw_log(raw: bytes, adapter: str, trajectory_id: str = "trajectory") -> Trajectory:
    try:
        fn = _ADAPTERS[adapter]
    except KeyError:
        raise IngestError(f"unknown adapter {adapter!r} (known: {', '.join(adapters())})") from None
    if not raw.strip():
        raise IngestError("malformed record: no events", 0)
    return fn(raw, trajectory_id)


def _line_offsets(raw: bytes) -> list[tuple[int, bytes]]:
    out, pos = [], 0
    for line in raw.splitlines(keepends=True):
        out.append((pos, line))
        pos += len(line)
    return out


@register_adapter("canonical")
def _canonical(raw: bytes, trajectory_id: str) -> Trajectory:
    offsets = _line_offsets(raw)
    try:
        return canonical_parse(raw)
    except ParseError as exc:
        off = offsets[exc.line - 1][0] if 0 < exc.line <= len(offsets) else None
        raise IngestError(f"malformed record: {exc}", off) from None
    except TrajectoryError as exc:
        raise IngestError(f"invariant violation: {exc}", index=exc.index) from None


# --- chatlog fixture adapter ----------------------------------------------------------------
# One JSON object per line, loosely modelled on chat-completion transcripts:
#   {"kind": "session", "id", "source", "outcome", "window_capacity"}   optional first line
#   {"role": "user"|"assistant"|"system", "content", "tool_calls": [{"id","name","arguments"}]}
#   {"role": "tool", "tool_call_id", "content", "status": "pass"|"fail"}
#   {"kind": "marker", "op": <op kind>, "label"}   -> control_marker
#   {"kind": "op", "op": <op kind>, "target"}       -> external_op
#   {"kind": "context", "action", ...}              -> context_op
# Optional on any record: "unit", "agent", "branch", "usage": {"tokens_used", "window_capacity"}.

_DEFAULT_CAPACITY = 128_000


def _arg_text(v) -> str:
    return v if isinstance(v, str) else json.dumps(v, sort_keys=True, separators=(",", ":"))


@register_adapter("chatlog")
def _chatlog(raw: bytes, trajectory_id: str) -> Trajectory:
    try:
        text_lines = _line_offsets(raw)
    except UnicodeDecodeError as exc:  # pragma: no cover - bytes never raise here
        raise IngestError(str(exc)) from None
    records = []
    for off, line in text_lines:
        if not line.strip():
            continue
        try:
            rec = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, ValueError) as exc:
            raise IngestError(f"malformed record: {exc}", off) from None
        if not isinstance(rec, dict):
            raise IngestError("malformed record: expected a JSON object", off)
        records.append((off, rec))

    header: dict = {}
    if records and records[0][1].get("kind") == "session":
        header = records.pop(0)[1]
    if not records:
        raise IngestError("malformed record: no events", text_lines[-1][0] if text_lines else 0)
    try:
        source = Source(header.get("source", "other"))
        outcome = Outcome(header.get("outcome", "unknown"))
    except ValueError as exc:
        raise IngestError(f"malformed record: {exc}", 0) from None
    capacity = int(header.get("window_capacity", _DEFAULT_CAPACITY))

    events: list[Event] = []
    call_index: dict[str, int] = {}
    unmapped: set[str] = set()
    tokens = 0

    def add(off: int, rec: dict, etype: EventType, payload: str, parent: int | None, **kw) -> None:
        nonlocal tokens, capacity
        usage = rec.get("usage") or {}
        if "window_capacity" in usage:
            capacity = int(usage["window_capacity"])
        if "tokens_used" in usage:
            tokens = int(usage["tokens_used"])
        if tokens > capacity:
            raise IngestError(f"invariant violation: tokens_used {tokens} exceeds window_capacity {capacity}",
                              off, len(events))
        events.append(Event(
            index=len(events), event_type=etype, payload=payload,
            context=ContextState(tokens, capacity, ()),
            dependency=Dependency(parent, rec.get("branch"), rec.get("unit"), rec.get("agent")),
            **kw,
        ))

    for off, rec in records:
        prev = len(events) - 1 if events else None
        role, kind = rec.get("role"), rec.get("kind")
        try:
            if role in ("user", "assistant", "system"):
                content = str(rec.get("content") or "")
                calls = rec.get("tool_calls") or []
                if content or not calls:
                    add(off, rec, EventType.MESSAGE, content, prev)
                for c in calls:
                    args = {str(k): _arg_text(v) for k, v in sorted((c.get("arguments") or {}).items())}
                    parent = len(events) - 1 if events else None
                    add(off, rec, EventType.TOOL_CALL, "", parent, tool=ToolInvocation(str(c["name"]), args))
                    if "id" in c:
                        call_index[str(c["id"])] = len(events) - 1
            elif role == "tool":
                cid = str(rec.get("tool_call_id"))
                if cid not in call_index:
                    raise IngestError(f"malformed record: tool result for unknown call id {cid!r}", off)
                status = ValidationStatus(rec.get("status", "none"))
                add(off, rec, EventType.TOOL_RESULT, str(rec.get("content") or ""), call_index[cid],
                    validation=Validation(status, str(rec.get("detail", ""))) if status is not ValidationStatus.NONE
                    else None)
            elif kind == "marker":
                add(off, rec, EventType.CONTROL_MARKER, str(rec.get("label", "")), prev,
                    external_op=ExternalOp(OpKind(rec.get("op", "stage_marker")), str(rec.get("label", ""))))
            elif kind == "op":
                add(off, rec, EventType.EXTERNAL_OP, str(rec.get("detail", "")), prev,
                    external_op=ExternalOp(OpKind(rec["op"]), str(rec.get("target", ""))))
            elif kind == "context":
                add(off, rec, EventType.CONTEXT_OP, str(rec.get("action", "")), prev)
            else:
                unmapped.add(str(kind if kind is not None else role))
                add(off, rec, EventType.MESSAGE, str(rec.get("content", "")), prev)
        except KeyError as exc:
            raise IngestError(f"malformed record: missing field {exc}", off) from None
        except ValueError as exc:
            if isinstance(exc, IngestError):
                raise
            raise IngestError(f"malformed record: {exc}", off) from None

    metadata = {str(k): _arg_text(v) for k, v in sorted((header.get("metadata") or {}).items())}
    if unmapped:
        metadata["unmapped_kinds"] = ",".join(sorted(unmapped))
    t = Trajectory(str(header.get("id", trajectory_id)), tuple(events), source, outcome, metadata)
    try:
        return validate_trajectory(t)
    except TrajectoryError as exc:
        raise IngestError(f"invariant violation: {exc}", index=exc.index) from None
