import random

import pytest

from builders import TB
from proctrace.calibration import CalibratedFinding, CalibrationContext, Severity, calibrate_findings
from proctrace.detectors import DEFECTS, DefectClass, Dimension, EvidenceRecord, RawFinding, detect_all
from proctrace.scoring import (
    ScoringConfig,
    ScoringError,
    build_scorecard,
    control_features,
    dimension_quality,
    fragile_success,
    overall_defect_quality,
    penalized_cp,
    scenario_scores,
    summary_score,
)
from proctrace.trajectory import EventType, Outcome, Source

CTX = CalibrationContext("terminal", "short")


def cf(defect, risk, severity=None):
    sev = severity or (Severity.ERROR if risk >= 0.8 else Severity.WARNING if risk >= 0.4 else Severity.NONE)
    return CalibratedFinding(RawFinding(defect, EvidenceRecord(defect, risk), 0.5), risk, sev, CTX)


def test_dimension_quality_extremes_and_mean():
    ctx = [DefectClass.GHOST_CONTEXT, DefectClass.OVERSIZED_RULES, DefectClass.CW_THRASHING]
    assert dimension_quality([cf(d, 0.0) for d in ctx], Dimension.CONTEXT) == 1.0
    assert dimension_quality([cf(d, 1.0) for d in ctx], Dimension.CONTEXT) == 0.0
    got = dimension_quality([cf(d, r) for d, r in zip(ctx, (0.2, 0.4, 0.6))], Dimension.CONTEXT)
    assert got == pytest.approx(0.6)


def test_dimension_quality_requires_all_classes():
    with pytest.raises(ScoringError):
        dimension_quality([cf(DefectClass.GHOST_CONTEXT, 0.1)], Dimension.CONTEXT)


def test_overall_quality():
    assert overall_defect_quality(0.78, 0.74, 0.71, 0.69) == pytest.approx(0.73)
    assert overall_defect_quality(0.5, 0.5, 0.5, 0.5) == pytest.approx(0.5)
    assert overall_defect_quality(0.9, 0.1, 0.2, 0.3, weights=(0, 1, 0, 0)) == 0.1
    with pytest.raises(ScoringError):
        overall_defect_quality(1, 1, 1, 1, weights=(0.5, 0.5, 0.5, 0.5))


SUBS = dict.fromkeys(("interpretability", "interruptibility", "correctability", "reversibility",
                      "authority_handoff"), 0.75)


def test_cp_penalty():
    assert penalized_cp(SUBS, [cf(DefectClass.DEAD_STEP, 0.3)], 0.2) == pytest.approx(0.75)
    assert penalized_cp(SUBS, [cf(DefectClass.DEAD_STEP, 1.0)], 0.2) == pytest.approx(0.60)


def test_warning_risk_does_not_penalize():
    assert penalized_cp(SUBS, [cf(DefectClass.DEAD_STEP, 0.7)], 0.2) == pytest.approx(0.75)


def test_summary_score():
    assert summary_score(0.70, 0.75, 0.5) == pytest.approx(0.725)
    assert summary_score(0.3, 0.9, 1.0) == 0.3
    assert summary_score(0.3, 0.9, 0.0) == 0.9
    with pytest.raises(ScoringError):
        summary_score(0.5, 0.5, 1.5)


def test_summary_is_convex_combination():
    rng = random.Random(0)
    for _ in range(1000):
        q, c, e = rng.random(), rng.random(), rng.random()
        pb = summary_score(q, c, e)
        assert pb == pytest.approx(e * q + (1 - e) * c, abs=1e-12)
        assert min(q, c) - 1e-12 <= pb <= max(q, c) + 1e-12


def test_fragile_rules():
    clean = [cf(d, 0.0) for d in DEFECTS]
    assert fragile_success("failure", clean, 0.2) is None
    assert fragile_success("unknown", clean, 0.2) is None
    assert fragile_success("success", clean, 0.9) is False
    assert fragile_success("success", clean, 0.5) is True
    bad = clean[:-1] + [cf(DEFECTS[-1], 0.95)]
    assert fragile_success("success", bad, 0.95) is True


def covered_run(n=10):
    b = TB()
    b.marker()
    for _ in range(n - 1):
        b.msg("x")
    return b.build(outcome=Outcome.SUCCESS, source=Source.TERMINAL)


def test_full_coverage_control_features():
    t = covered_run()
    f = control_features(t)
    assert f.stage_marker_coverage == 1.0
    assert f.interruption_point_density == pytest.approx(1 / (10 / 25))
    assert f.repair_without_restart_rate == 1.0
    assert f.reversible_mutation_rate == 1.0
    assert f.handoff_honored_rate == 1.0


def test_mutation_reversibility():
    b = TB()
    b.op("file_write", "a")
    b.op("checkpoint", "c")
    b.op("file_write", "b")
    assert control_features(b.build()).reversible_mutation_rate == 0.5


def test_repair_and_restart():
    b = TB()
    b.call("test")
    b.result("fail", status="fail")
    b.call("test")
    b.result("pass", status="pass")
    b.call("test")
    b.result("fail", status="fail")
    b.add(EventType.CONTROL_MARKER, "restart from scratch")
    b.call("test")
    b.result("pass", status="pass")
    assert control_features(b.build()).repair_without_restart_rate == 0.5


def test_handoff_honored_only_with_confirmation():
    b = TB()
    b.op("handoff_request", "user")
    b.op("confirmation_point", "user")
    b.op("handoff_request", "user")
    b.op("file_write", "x")
    b.op("confirmation_point", "user")
    assert control_features(b.build()).handoff_honored_rate == 0.5


def test_clean_scorecard_hits_upper_boundary():
    t = covered_run(20)
    findings = calibrate_findings(detect_all(t), CTX)
    card = build_scorecard(t, findings)
    assert card.q_def == 1.0
    assert card.cp_subscores["interpretability"] == 1.0
    assert card.pb == pytest.approx(card.eta * card.q_def + (1 - card.eta) * card.cp)
    assert card.fragile_success is False


def test_scorecard_is_deterministic_and_consistent():
    b = TB()
    b.marker()
    for _ in range(2):
        b.call("read_file", {"path": "a.py"})
        b.result("text")
    t = b.build(outcome=Outcome.SUCCESS)
    cards = [build_scorecard(t, calibrate_findings(detect_all(t), CTX), ScoringConfig(eta=0.3)) for _ in range(2)]
    assert cards[0] == cards[1]
    c = cards[0]
    assert c.pb == pytest.approx(0.3 * c.q_def + 0.7 * c.cp)
    assert c.q_def == pytest.approx((c.q_ctx + c.q_tool + c.q_wf + c.q_eco) / 4)
    dup = next(f for f in c.findings if f.defect is DefectClass.DUPLICATE_STEP)
    assert dup.severity is Severity.ERROR
    assert c.fragile_success is True
    d = c.to_dict()
    assert d["schema"] == "scorecard/1" and len(d["findings"]) == 11


def test_scorecard_needs_all_findings():
    with pytest.raises(ScoringError):
        build_scorecard(covered_run(), [cf(DefectClass.DEAD_STEP, 0.0)])


class _Card:
    def __init__(self, source, pb):
        self.source, self.pb = source, pb


def test_scenario_scores_weighted_mean():
    table, _ = scenario_scores([_Card("a", 0.7), _Card("a", 0.7), _Card("b", 0.8), _Card("b", 0.8)])
    assert table["overall"] == pytest.approx(0.75)
    assert table["a"] == pytest.approx(0.7)
    assert scenario_scores([_Card("x", 0.4)])[0] == {"x": 0.4, "overall": 0.4}


def test_config_validation():
    with pytest.raises(ScoringError):
        ScoringConfig(eta=-0.1)
    with pytest.raises(ScoringError):
        ScoringConfig(dimension_weights={"context": 1.0, "tool_use": 1.0})
