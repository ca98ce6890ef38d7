import itertools
import random

from builders import TB
from proctrace.graph import (
    DATA_FLOW,
    PARENT,
    UNIT_CALL,
    build_dependency_graph,
    longest_alternation,
    strongly_connected_components,
)


def test_no_tools_only_parent_edges():
    b = TB()
    b.msg("a")
    b.msg("b", parent=0)
    g = build_dependency_graph(b.build())
    assert {e.kind for e in g.edges} == {PARENT}


def test_quoted_error_code_makes_data_flow_edge():
    b = TB()
    b.msg("run it")
    b.call("build")
    r = b.result("ERR_42")
    b.msg("unrelated")
    m = b.msg("the build failed with ERR_42 again")
    g = build_dependency_graph(b.build())
    flows = {(e.src, e.dst) for e in g.of_kind(DATA_FLOW)}
    assert (r, m) in flows
    assert (r, m - 1) not in flows


def test_alternating_units_form_two_cycle():
    b = TB()
    b.msg("start", unit="A")
    for i in range(4):
        b.msg(f"hop {i}", parent=i, unit="B" if i % 2 == 0 else "A")
    g = build_dependency_graph(b.build())
    calls = [(e.src, e.dst) for e in g.of_kind(UNIT_CALL)]
    assert calls == [("A", "B"), ("B", "A"), ("A", "B"), ("B", "A")]
    assert g.unit_adjacency() == {"A": {"B"}, "B": {"A"}}
    assert longest_alternation(calls) == 4


def naive_sccs(nodes, adj):
    reach = {v: {v} for v in nodes}
    changed = True
    while changed:
        changed = False
        for v in nodes:
            new = set().union(*(reach[w] for w in adj.get(v, ()))) | reach[v]
            if new != reach[v]:
                reach[v] = new
                changed = True
    return {frozenset(w for w in nodes if w in reach[v] and v in reach[w]) for v in nodes}


def test_tarjan_matches_naive_reachability():
    rng = random.Random(3)
    for _ in range(200):
        n = rng.randint(1, 8)
        nodes = list(range(n))
        adj = {v: {w for w in nodes if rng.random() < 0.25} for v in nodes}
        got = {frozenset(c) for c in strongly_connected_components(nodes, adj)}
        assert got == naive_sccs(nodes, adj)


def test_deep_chain_does_not_recurse():
    n = 5000
    adj = {i: [i + 1] for i in range(n - 1)}
    adj[n - 1] = [0]
    comps = strongly_connected_components(range(n), adj)
    assert len(comps) == 1 and len(comps[0]) == n


def test_alternation_resets_on_other_pairs():
    calls = [("A", "B"), ("B", "A"), ("A", "C"), ("C", "A"), ("A", "C")]
    assert longest_alternation(calls) == 3
    assert longest_alternation([]) == 0
    assert longest_alternation(list(itertools.repeat(("A", "B"), 3))) == 1
