import pytest

from oracles import duplicate_score
from proctrace.detectors import DEFECTS, DETECTORS, DefectClass, DetectorConfig, detect_all
from proctrace.evaluation import Label
from proctrace.synth import (
    Injection,
    SynthError,
    SynthSpec,
    Topology,
    generate_trajectory,
    inject_defect,
    labeled_findings,
)
from proctrace.trajectory import canonical_serialize, context_segment_stats, validate_trajectory

CFG = DetectorConfig()


def spec(*inj, **kw):
    return SynthSpec(injections=tuple(inj), **kw)


def test_clean_baseline_all_absent_and_quiet():
    for seed in range(10):
        t, gt = generate_trajectory(spec(), seed)
        assert all(v is Label.ABSENT for v in gt.labels.values())
        assert not any(f.triggered for f in detect_all(t, CFG))


def test_same_seed_same_output():
    s = spec(Injection(DefectClass.DEAD_STEP, 1.0))
    a, ga = generate_trajectory(s, 3)
    b, gb = generate_trajectory(s, 3)
    assert canonical_serialize(a) == canonical_serialize(b) and ga == gb
    c, _ = generate_trajectory(s, 4)
    assert canonical_serialize(a) != canonical_serialize(c)


def test_duplicate_injection_checked_by_oracle():
    t, gt = generate_trajectory(spec(Injection(DefectClass.DUPLICATE_STEP, 1.0)), 1)
    assert gt.labels[DefectClass.DUPLICATE_STEP] is Label.PRESENT
    assert gt.spans[DefectClass.DUPLICATE_STEP]
    assert duplicate_score(t) > 0
    for a, b in gt.spans[DefectClass.DUPLICATE_STEP]:
        assert t.events[a].tool.arguments == t.events[b].tool.arguments
        assert not any(e.external_op for e in t.events[a:b] if e.op_kind and e.op_kind.value == "file_write")


def test_ghost_injection_pattern():
    t, _ = generate_trajectory(spec(), 2)
    out, spans = inject_defect(t, "ghost_context", 1.0, seed=2)
    stats = context_segment_stats(out)
    ghost = [s for s in stats.values() if s.segment_id.startswith("ghost")]
    assert len(ghost) == 1
    g = ghost[0]
    assert g.tag.value == "raw_content"
    assert g.references == 0
    assert g.persistence >= 0.8 * len(out.events)
    assert spans


def test_intensity_zero_is_identity():
    t, _ = generate_trajectory(spec(), 5)
    for d in DEFECTS:
        assert inject_defect(t, d, 0.0, seed=1) == (t, [])


def test_coupling_needs_two_units():
    t, _ = generate_trajectory(spec(topology=Topology.FLAT, n_units=1), 0)
    with pytest.raises(SynthError, match="uninjectable"):
        inject_defect(t, DefectClass.CONTEXT_COUPLING, 1.0)


def test_infeasible_specs():
    with pytest.raises(SynthError):
        SynthSpec(topology=Topology.CYCLIC, n_units=1)
    with pytest.raises(SynthError):
        SynthSpec(event_count=(2, 5))
    with pytest.raises(SynthError):
        Injection(DefectClass.DEAD_STEP, 1.5)
    with pytest.raises(SynthError):
        SynthSpec.from_dict({"bogus": 1})


def test_exempt_variants_are_exempted():
    for d in (DefectClass.GHOST_CONTEXT, DefectClass.DUPLICATE_STEP):
        t, gt = generate_trajectory(spec(Injection(d, 1.0, {"exempt": True})), 7)
        assert gt.labels[d] is Label.EXEMPT
        f = DETECTORS[d](t, CFG)
        assert f.exempted and not f.triggered


def test_floor_controls_label():
    _, gt = generate_trajectory(spec(Injection(DefectClass.DEAD_STEP, 0.2)), 1)
    assert gt.labels[DefectClass.DEAD_STEP] is Label.ABSENT
    _, gt = generate_trajectory(spec(Injection(DefectClass.DEAD_STEP, 0.31)), 1)
    assert gt.labels[DefectClass.DEAD_STEP] is Label.PRESENT


@pytest.mark.parametrize("topology", list(Topology))
def test_every_injector_keeps_trajectory_valid(topology):
    n_units = 1 if topology is Topology.FLAT else 3
    for d in DEFECTS:
        if d is DefectClass.CONTEXT_COUPLING and topology is Topology.FLAT:
            continue
        for seed in range(3):
            t, gt = generate_trajectory(spec(Injection(d, 1.0), topology=topology, n_units=n_units), seed)
            validate_trajectory(t)
            for a, b in gt.spans[d]:
                assert 0 <= a <= b < len(t.events)


def test_multiple_injections_keep_spans_valid():
    inj = [Injection(d, 1.0) for d in DEFECTS]
    t, gt = generate_trajectory(spec(*inj), 11)
    validate_trajectory(t)
    assert all(gt.labels[d] is Label.PRESENT for d in DEFECTS)
    for d in DEFECTS:
        for a, b in gt.spans[d]:
            assert 0 <= a <= b < len(t.events)


@pytest.mark.parametrize("defect", list(DEFECTS))
def test_dose_response(defect):
    means = []
    for x in (0.0, 0.25, 0.5, 0.75, 1.0):
        scores = [DETECTORS[defect](generate_trajectory(spec(Injection(defect, x)), s)[0], CFG).score
                  for s in range(15)]
        means.append(sum(scores) / len(scores))
    assert all(a <= b + 1e-12 for a, b in zip(means, means[1:])), means


def test_spec_from_dict():
    s = SynthSpec.from_dict({"event_count": [10, 12], "topology": "cyclic", "n_units": 2,
                             "injections": [{"defect": "dead_step", "intensity": 0.5}]})
    assert s.topology is Topology.CYCLIC and s.injections[0].defect is DefectClass.DEAD_STEP


def test_labeled_findings_deterministic():
    a = labeled_findings(200, seed=3)
    assert a == labeled_findings(200, seed=3)
    assert 0 < sum(x.label for x in a) < 200
    assert all(0 <= x.evidence.score <= 1 for x in a)
