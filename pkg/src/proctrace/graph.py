"""Dependency graph derived from a trajectory's structural information."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Sequence, TypeVar

from .trajectory import Event, EventType, Trajectory, event_text_tokens, token_set

T = TypeVar("T", bound=Hashable)

PARENT = "parent"
DATA_FLOW = "data_flow"
UNIT_CALL = "unit_call"

DEFAULT_OVERLAP = 0.6


@dataclass(frozen=True)
class Edge:
    src: int | str
    dst: int | str
    kind: str
    at: int  # event index where the edge is observed


@dataclass(frozen=True)
class DependencyGraph:
    n_events: int
    units: tuple[str, ...]
    edges: tuple[Edge, ...]

    def of_kind(self, kind: str) -> list[Edge]:
        return [e for e in self.edges if e.kind == kind]

    def out_edges(self, node: int | str, kind: str | None = None) -> list[Edge]:
        return [e for e in self.edges if e.src == node and (kind is None or e.kind == kind)]

    def unit_adjacency(self) -> dict[str, set[str]]:
        adj: dict[str, set[str]] = {u: set() for u in self.units}
        for e in self.of_kind(UNIT_CALL):
            adj[e.src].add(e.dst)
        return adj


def overlap_coefficient(a: frozenset[str], b: frozenset[str]) -> float:
    """|a ∩ b| / min(|a|, |b|); 0 when either side is empty."""
    if not a or not b:
        return 0.0
    return len(a & b) / min(len(a), len(b))


def delegations(t: Trajectory) -> list[tuple[int, str, str]]:
    """(event index, caller unit, callee unit) at every delegation boundary.

    A boundary is an event whose parent belongs to a different unit.
    """
    out = []
    for ev in t.events:
        p = ev.dependency.parent_index
        if p is None:
            continue
        mine, theirs = ev.dependency.unit_id, t.events[p].dependency.unit_id
        if mine is not None and theirs is not None and mine != theirs:
            out.append((ev.index, theirs, mine))
    return out


def build_dependency_graph(t: Trajectory, overlap: float = DEFAULT_OVERLAP) -> DependencyGraph:
    edges: list[Edge] = []
    for ev in t.events:
        p = ev.dependency.parent_index
        if p is not None and p != ev.index:
            edges.append(Edge(p, ev.index, PARENT, ev.index))

    later_tokens = [event_text_tokens(ev) for ev in t.events]
    for res in t.events:
        if res.event_type is not EventType.TOOL_RESULT:
            continue
        rtoks = token_set(res.payload)
        if not rtoks:
            continue
        for j in range(res.index + 1, len(t.events)):
            if overlap_coefficient(rtoks, later_tokens[j]) >= overlap:
                edges.append(Edge(res.index, j, DATA_FLOW, j))

    units = sorted({ev.dependency.unit_id for ev in t.events if ev.dependency.unit_id is not None})
    for idx, caller, callee in delegations(t):
        edges.append(Edge(caller, callee, UNIT_CALL, idx))
    return DependencyGraph(n_events=len(t.events), units=tuple(units), edges=tuple(edges))


def strongly_connected_components(vertices: Iterable[T], edges: Mapping[T, Iterable[T]]) -> list[set[T]]:
    """Tarjan's algorithm, iterative so deep graphs don't hit the recursion limit."""
    index: dict[T, int] = {}
    low: dict[T, int] = {}
    on_stack: set[T] = set()
    stack: list[T] = []
    result: list[set[T]] = []
    counter = 0

    for root in vertices:
        if root in index:
            continue
        work = [(root, iter(edges.get(root, ())))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            v, it = work[-1]
            advanced = False
            for w in it:
                if w not in index:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(edges.get(w, ()))))
                    advanced = True
                    break
                if w in on_stack:
                    low[v] = min(low[v], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[v])
            if low[v] == index[v]:
                comp = set()
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.add(w)
                    if w == v:
                        break
                result.append(comp)
    return result


def longest_alternation(calls: Sequence[tuple[str, str]]) -> int:
    """Longest run of consecutive delegations bouncing between the same two units."""
    best = run = 0
    prev: tuple[str, str] | None = None
    for caller, callee in calls:
        if prev is not None and (caller, callee) == (prev[1], prev[0]):
            run += 1
        else:
            run = 1
        best = max(best, run)
        prev = (caller, callee)
    return best


@dataclass
class Invocation:
    unit: str
    root: int
    events: list[int] = field(default_factory=list)
    children: list[int] = field(default_factory=list)  # root indices of child invocations


def unit_invocations(t: Trajectory) -> list[Invocation]:
    """Group events into invocations of workflow units.

    An event starts a new invocation when its parent lies in another unit (or
    it has no usable parent and the unit differs from the previous event's).
    Otherwise it joins the invocation of its parent, falling back to the
    previous event of the same unit.
    """
    inv_of: dict[int, Invocation] = {}
    invocations: list[Invocation] = []
    last_in_unit: dict[str, Invocation] = {}
    for ev in t.events:
        unit = ev.dependency.unit_id
        if unit is None:
            continue
        p = ev.dependency.parent_index
        parent_unit = t.events[p].dependency.unit_id if p is not None else None
        if p is not None and parent_unit == unit and p in inv_of:
            inv = inv_of[p]
        elif p is None and unit in last_in_unit and (ev.index == 0 or t.events[ev.index - 1].dependency.unit_id == unit):
            inv = last_in_unit[unit]
        elif p is not None and parent_unit is None and unit in last_in_unit:
            inv = last_in_unit[unit]
        else:
            inv = Invocation(unit=unit, root=ev.index)
            invocations.append(inv)
            if p is not None and p in inv_of and parent_unit != unit:
                inv_of[p].children.append(ev.index)
        inv.events.append(ev.index)
        inv_of[ev.index] = inv
        last_in_unit[unit] = inv
    return invocations


def events_by_index(t: Trajectory, idx: Iterable[int]) -> list[Event]:
    return [t.events[i] for i in idx]
