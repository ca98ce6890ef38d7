"""Tiny helpers for hand-built trajectories in tests."""

from __future__ import annotations

from proctrace.trajectory import (
    ContextSegment,
    ContextState,
    Dependency,
    Event,
    EventType,
    ExternalOp,
    OpKind,
    Outcome,
    Source,
    ToolInvocation,
    Trajectory,
    Validation,
    ValidationStatus,
    validate_trajectory,
)


class TB:
    def __init__(self, cap: int = 10_000, tokens: int = 0):
        self.events: list[Event] = []
        self.cap = cap
        self.tokens = tokens
        self.last_call: int | None = None

    def add(self, kind: EventType, payload: str = "", *, parent=None, unit=None, branch=None, agent=None,
            tokens=None, cap=None, segs=(), tool=None, validation=None, external_op=None) -> int:
        i = len(self.events)
        if tokens is not None:
            self.tokens = tokens
        used = max(self.tokens, sum(s.token_count for s in segs))
        self.events.append(Event(
            index=i, event_type=kind, payload=payload, tool=tool, validation=validation, external_op=external_op,
            context=ContextState(used, cap or self.cap, tuple(segs)),
            dependency=Dependency(parent, branch, unit, agent),
        ))
        return i

    def msg(self, text: str = "", **kw) -> int:
        return self.add(EventType.MESSAGE, text, **kw)

    def call(self, name: str, args: dict | None = None, **kw) -> int:
        i = self.add(EventType.TOOL_CALL, "", tool=ToolInvocation(name, dict(args or {})), **kw)
        self.last_call = i
        return i

    def result(self, payload: str = "", call: int | None = None, status: str | None = None, **kw) -> int:
        parent = self.last_call if call is None else call
        val = Validation(ValidationStatus(status)) if status else None
        return self.add(EventType.TOOL_RESULT, payload, parent=parent, validation=val, **kw)

    def op(self, kind: str, target: str = "", **kw) -> int:
        return self.add(EventType.EXTERNAL_OP, "", external_op=ExternalOp(OpKind(kind), target), **kw)

    def marker(self, kind: str = "stage_marker", **kw) -> int:
        return self.add(EventType.CONTROL_MARKER, kind, external_op=ExternalOp(OpKind(kind)), **kw)

    def build(self, tid: str = "t", source: Source = Source.OTHER, outcome: Outcome = Outcome.UNKNOWN,
              metadata: dict | None = None) -> Trajectory:
        return validate_trajectory(Trajectory(tid, tuple(self.events), source, outcome, dict(metadata or {})))


def seg(seg_id: str, tokens: int, created: int, tag: str = "raw_content") -> ContextSegment:
    from proctrace.trajectory import SegmentTag
    return ContextSegment(seg_id, tokens, created, SegmentTag(tag))
