import json
import random

import pytest

from builders import TB, seg
from oracles import duplicate_score, largest_scc, longest_periodic, random_call_trajectory, unit_graph_trajectory
from proctrace.detectors import (
    DEFECTS,
    DIMENSION_OF,
    DefectClass,
    DetectorConfig,
    Dimension,
    coupling_features,
    detect_all,
    detect_context_coupling,
    detect_cw_thrashing,
    detect_dead_step,
    detect_duplicate_step,
    detect_ghost_context,
    detect_inconsistent_tool_interface,
    detect_long_chain,
    detect_oversized_rules,
    detect_tool_call_chain,
    detect_weak_tool,
    detect_wrapper_workflow,
)
from proctrace.trajectory import Source

CFG = DetectorConfig()


def test_eleven_classes_in_four_dimensions():
    assert len(DEFECTS) == 11
    counts = {dim: sum(1 for d in DEFECTS if DIMENSION_OF[d] is dim) for dim in Dimension}
    assert [counts[d] for d in Dimension] == [3, 4, 2, 2]


# -- ghost context


def ghost(tag="raw_content"):
    b = TB(cap=10_000)
    b.msg("blob alpha beta gamma delta epsilon", segs=[seg("blob", 3000, 0, tag)])
    for i in range(1, 51):
        b.msg("see blob" if i <= 2 else f"step {i}", segs=[seg("blob", 3000, 0, tag)])
    return b.build()


def test_ghost_worked_example_triggers():
    f = detect_ghost_context(ghost(), CFG)
    assert f.score == pytest.approx(0.8)
    assert f.triggered and not f.exempted


def test_ghost_rule_text_is_exempted():
    f = detect_ghost_context(ghost("rule_text"), CFG)
    assert f.exempted and not f.triggered
    assert f.score == 0.0
    assert f.rationale.startswith("exempt")


def test_ghost_without_segments():
    b = TB()
    b.msg("x")
    f = detect_ghost_context(b.build(), CFG)
    assert f.score == 0 and not f.triggered


# -- oversized rules


def rules(frac):
    b = TB(cap=10_000)
    for i in range(10):
        b.msg("x", segs=[seg("rules", int(frac * 10_000), 0, "rule_text")])
    return b.build()


@pytest.mark.parametrize("frac,score,trig", [(0.05, 0.0, False), (0.60, 0.70, True)])
def test_oversized_rules(frac, score, trig):
    f = detect_oversized_rules(rules(frac), CFG)
    assert f.score == pytest.approx(score)
    assert f.triggered is trig


def test_no_rule_segments():
    b = TB()
    b.msg("x", segs=[seg("r", 10, 0)])
    assert detect_oversized_rules(b.build(), CFG).score == 0


# -- thrashing


def series(values, cap=1000):
    b = TB(cap=cap)
    for v in values:
        b.msg("x", tokens=v)
    return b.build()


def test_monotone_series_has_no_cycles():
    assert detect_cw_thrashing(series(range(0, 1000, 50)), CFG).score == 0


def test_four_sawtooth_cycles():
    f = detect_cw_thrashing(series([500, 950, 400] * 4), CFG)
    assert f.evidence.features["cycles"] == 4
    assert f.score == pytest.approx(0.8) and f.triggered


def test_single_spike_not_triggered():
    f = detect_cw_thrashing(series([300, 950, 400, 420]), CFG)
    assert f.evidence.features["cycles"] == 1 and not f.triggered


# -- duplicate step


def test_distinct_calls_score_zero():
    b = TB()
    for name in "abc":
        b.call(name, {"path": name})
        b.result("ok")
    assert detect_duplicate_step(b.build(), CFG).score == 0


def test_identical_reads_trigger():
    b = TB()
    for _ in range(2):
        b.call("read_file", {"path": "src/a.py"})
        b.result("contents")
    t = b.build()
    f = detect_duplicate_step(t, CFG)
    assert f.evidence.features["duplicate_pairs"] == 1
    assert f.triggered
    assert f.score == duplicate_score(t)


def test_rerun_after_write_is_exempt():
    b = TB()
    b.call("run_tests", {"target": "tests"})
    b.result("1 failed", status="fail")
    b.op("file_write", "src/a.py")
    b.call("run_tests", {"target": "tests"})
    b.result("passed", status="pass")
    f = detect_duplicate_step(b.build(), CFG)
    assert f.exempted and not f.triggered
    assert "intervening state mutation" in f.rationale


def test_duplicate_matches_pairwise_oracle():
    rng = random.Random(11)
    for _ in range(200):
        t = random_call_trajectory(rng)
        assert detect_duplicate_step(t, CFG).score == pytest.approx(duplicate_score(t))


# -- tool call chain


def chain(names):
    b = TB()
    b.msg("go")
    for n in names:
        b.call(n)
        b.result("r")
    return b.build()


@pytest.mark.parametrize("names,score,trig", [
    ("ABC", 0.0, False), ("ABABAB", 1.0, True), ("AAA", 1.0, True), ("XABABABY", 0.75, True),
])
def test_chain_examples(names, score, trig):
    f = detect_tool_call_chain(chain(list(names)), CFG)
    assert f.score == pytest.approx(score)
    assert f.triggered is trig


def test_chain_matches_exhaustive_search():
    rng = random.Random(5)
    for _ in range(300):
        names = [rng.choice("ABC") for _ in range(rng.randint(0, 20))]
        f = detect_tool_call_chain(chain(names), CFG)
        assert f.evidence.features["run_length"] == longest_periodic(names)


# -- dead step


def test_dead_step_two_of_five():
    b = TB()
    for k in range(5):
        b.call("probe", {"n": str(k)})
        b.result(f"value{k} token{k} marker{k}")
        if k >= 2:
            b.msg(f"so value{k} token{k} marker{k} it is")
    f = detect_dead_step(b.build(), CFG)
    assert f.evidence.features["dead"] == 2
    assert f.score == pytest.approx(0.4)


def test_result_quoted_next_is_live():
    b = TB()
    b.call("probe")
    b.result("answer is 42")
    b.msg("answer is 42")
    assert detect_dead_step(b.build(), CFG).score == 0


def test_step_with_write_is_never_dead():
    b = TB()
    c = b.call("edit_file", {"path": "a"})
    b.result("ok zzz")
    b.op("file_write", "a", parent=c)
    assert detect_dead_step(b.build(), CFG).score == 0


# -- long chain


def long_run(n, marker_every=None):
    b = TB()
    for i in range(n):
        if marker_every and i % marker_every == 0:
            b.marker()
        else:
            b.msg("x")
    return b.build(source=Source.OTHER)


def test_short_run_scores_zero():
    assert detect_long_chain(long_run(100), CFG).score == 0


def test_triple_length_unconsolidated():
    f = detect_long_chain(long_run(300), CFG)
    assert f.score == 1.0 and f.triggered


def test_triple_length_consolidated():
    f = detect_long_chain(long_run(300, marker_every=25), CFG)
    assert f.score == 0 and not f.triggered


# -- wrapper workflow


def wrapper(validate: bool):
    b = TB()
    b.msg("plan", unit="main")
    for k in range(5):
        m = b.msg("forward", unit="w", parent=0)
        b.call("run", {"k": str(k)}, unit="w", parent=m)
        b.result("done", unit="w", status="pass" if validate else None)
    return b.build()


def test_pass_through_unit():
    f = detect_wrapper_workflow(wrapper(False), CFG)
    assert f.score == 1.0 and f.triggered


def test_validating_unit_scores_zero():
    assert detect_wrapper_workflow(wrapper(True), CFG).score == 0


def test_no_units():
    b = TB()
    b.msg("x")
    assert detect_wrapper_workflow(b.build(), CFG).score == 0


# -- context coupling


def test_tree_delegation_scores_zero():
    t = unit_graph_trajectory(["A", "B", "C"], [("A", "B"), ("A", "C")])
    assert detect_context_coupling(t, CFG).score == 0


def test_ping_pong_triggers():
    b = TB()
    b.msg("go", unit="A")
    for i in range(6):
        b.msg("hop", unit="B" if i % 2 == 0 else "A", parent=i)
    f = detect_context_coupling(b.build(), CFG)
    assert f.evidence.features["alternation"] == 6
    assert f.triggered


def test_three_unit_cycle_forces_trigger():
    t = unit_graph_trajectory(["A", "B", "C"], [("A", "B"), ("B", "C"), ("C", "A")])
    f = detect_context_coupling(t, CFG)
    assert f.evidence.features["largest_scc"] == 3
    assert f.triggered


def test_scc_feature_matches_reachability():
    rng = random.Random(8)
    for _ in range(200):
        nodes = [f"u{i}" for i in range(rng.randint(1, 8))]
        edges = [(a, b) for a in nodes for b in nodes if a != b and rng.random() < 0.2]
        feats, _ = coupling_features(unit_graph_trajectory(nodes, edges))
        assert feats.largest_scc == largest_scc(nodes, edges)


# -- tool ecosystem


def catalog_traj(entries, messages=(), calls=(), matchers=None):
    b = TB()
    b.msg("start")
    for m in messages:
        b.msg(m)
    for c in calls:
        b.call(c)
        b.result("ok")
    meta = {"tool_catalog": json.dumps(entries)}
    if matchers is not None:
        meta["intent_matchers"] = json.dumps(matchers)
    return b.build(metadata=meta)


def search_tool(name, param, ptype, output):
    return {"name": name, "description": "search the repository", "parameters": {param: ptype},
            "output": output, "error_format": "text"}


def test_single_tool_no_mismatch():
    t = catalog_traj([search_tool("search_code", "query", "string", "object:hits")])
    assert detect_inconsistent_tool_interface(t, CFG).score == 0


def test_facet_mismatch_three_of_four():
    t = catalog_traj([search_tool("search_code", "query", "string", "object:hits"),
                      search_tool("search_docs", "q", "integer", "text")])
    f = detect_inconsistent_tool_interface(t, CFG)
    assert f.score == pytest.approx(0.75) and f.triggered


def test_identical_interfaces():
    t = catalog_traj([search_tool("search_code", "query", "string", "text"),
                      search_tool("search_docs", "query", "string", "text")])
    assert detect_inconsistent_tool_interface(t, CFG).score == 0


def weak_fixture(own_uses: int):
    entries = [{"name": "fast_find", "description": "find", "capabilities": ["search"]},
               {"name": "grep_tool", "description": "grep", "capabilities": ["search"]}]
    b = TB()
    for k in range(20):
        b.msg(f"find item {k}")
        if k < own_uses:
            b.call("fast_find")
            b.result("ok")
        b.call("grep_tool" if k < 18 else "idle_tool")
        b.result("ok")
    meta = {"tool_catalog": json.dumps(entries), "intent_matchers": json.dumps({"search": ["find"]})}
    return b.build(metadata=meta)


def test_shadowed_tool_scores_point_nine():
    f = detect_weak_tool(weak_fixture(0), CFG)
    assert f.score == pytest.approx(0.9) and f.triggered
    assert "fast_find" in f.rationale


def test_tool_used_everywhere_contributes_nothing():
    f = detect_weak_tool(weak_fixture(20), CFG)
    assert f.score == 0


def test_weak_tool_inapplicable_without_tags():
    t = catalog_traj([{"name": "a", "description": "x"}], matchers={"search": ["find"]})
    f = detect_weak_tool(t, CFG)
    assert f.score == 0 and f.rationale.startswith("inapplicable")


# -- aggregate


def test_single_message_all_zero():
    b = TB()
    b.msg("hello")
    findings = detect_all(b.build())
    assert [f.defect for f in findings] == list(DEFECTS)
    assert all(f.score == 0 and not f.triggered for f in findings)


def test_detect_all_deterministic():
    t = ghost()
    assert detect_all(t) == detect_all(t)


def test_thresholds_are_configurable():
    cfg = DetectorConfig.from_dict({"thresholds": {"ghost_context": 0.9}})
    assert not detect_ghost_context(ghost(), cfg).triggered
    with pytest.raises(ValueError):
        DetectorConfig.from_dict({"thresholds": {"nope": 0.1}})
    with pytest.raises(ValueError):
        DetectorConfig.from_dict({"no_such_knob": 1})


def test_scores_stay_in_unit_interval_on_random_inputs():
    rng = random.Random(2)
    for _ in range(50):
        for f in detect_all(random_call_trajectory(rng)):
            assert 0.0 <= f.score <= 1.0
            assert not (f.triggered and f.exempted)
