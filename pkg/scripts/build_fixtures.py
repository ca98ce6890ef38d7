"""Regenerate the shipped fixture corpus under fixtures/.

    python scripts/build_fixtures.py

Everything is seeded, so rerunning produces identical files.
"""

from __future__ import annotations

import json
import random
from dataclasses import replace
from pathlib import Path

import yaml

from proctrace.detectors import DEFECTS, DefectClass
from proctrace.evaluation import AnnotationRecord, Label, dump_annotations
from proctrace.io import atomic_write, write_json
from proctrace.synth import Injection, SynthSpec, generate_trajectory
from proctrace.trajectory import Outcome, Source, canonical_serialize

ROOT = Path(__file__).resolve().parents[1] / "fixtures"

# per-system defect profiles: (defect, intensity, probability of injecting)
PROFILES = {
    "alpha": [],
    "beta": [(DefectClass.DUPLICATE_STEP, 1.0, 0.6), (DefectClass.DEAD_STEP, 1.0, 0.5)],
    "gamma": [(DefectClass.GHOST_CONTEXT, 1.0, 0.6), (DefectClass.CONTEXT_COUPLING, 1.0, 0.4),
              (DefectClass.WRAPPER_WORKFLOW, 1.0, 0.4)],
}
SUCCESS_RATE = {"alpha": 0.6, "beta": 0.8, "gamma": 0.7}
CASES = 16
SOURCES = (Source.TERMINAL, Source.SWEBENCH, Source.ANDROID)


def chat(*records) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


def raw_logs() -> dict[str, str]:
    hdr = lambda i, src, out: {"kind": "session", "id": i, "source": src, "outcome": out, "window_capacity": 32000}
    u = lambda n: {"usage": {"tokens_used": n}}
    return {
        "chat_small.jsonl": chat(
            hdr("chat-small", "terminal", "success"),
            {"role": "user", "content": "list the repo", **u(400)},
            {"role": "assistant", "content": "", "tool_calls": [{"id": "c1", "name": "ls", "arguments": {"path": "."}}],
             **u(450)},
            {"role": "tool", "tool_call_id": "c1", "content": "README.md setup.py src tests", **u(520)},
        ),
        "chat_repeat.jsonl": chat(
            hdr("chat-repeat", "swebench", "success"),
            {"kind": "marker", "op": "stage_marker", "label": "locate bug"},
            {"role": "user", "content": "fix the failing parser test", **u(900)},
            {"role": "assistant", "content": "reading parser", "tool_calls": [
                {"id": "a", "name": "read_file", "arguments": {"path": "src/parser.py"}}], **u(950)},
            {"role": "tool", "tool_call_id": "a", "content": "def parse(text): return text.split()", **u(1400)},
            {"role": "assistant", "content": "", "tool_calls": [
                {"id": "b", "name": "read_file", "arguments": {"path": "src/parser.py"}}], **u(1420)},
            {"role": "tool", "tool_call_id": "b", "content": "def parse(text): return text.split()", **u(1900)},
            {"kind": "op", "op": "checkpoint", "target": "pre-edit"},
            {"role": "assistant", "content": "patching parse(text) return text.split()", "tool_calls": [
                {"id": "c", "name": "edit_file", "arguments": {"path": "src/parser.py", "patch": "strip first"}}],
             **u(2000)},
            {"role": "tool", "tool_call_id": "c", "content": "patched", **u(2050)},
            {"kind": "op", "op": "file_write", "target": "src/parser.py"},
            {"role": "assistant", "content": "", "tool_calls": [
                {"id": "d", "name": "run_tests", "arguments": {"target": "tests/test_parser.py"}}], **u(2100)},
            {"role": "tool", "tool_call_id": "d", "content": "1 failed", "status": "fail", **u(2300)},
            {"role": "assistant", "content": "", "tool_calls": [
                {"id": "e", "name": "edit_file", "arguments": {"path": "src/parser.py", "patch": "handle empty"}}],
             **u(2350)},
            {"role": "tool", "tool_call_id": "e", "content": "patched", **u(2400)},
            {"kind": "op", "op": "file_write", "target": "src/parser.py"},
            {"role": "assistant", "content": "", "tool_calls": [
                {"id": "f", "name": "run_tests", "arguments": {"target": "tests/test_parser.py"}}], **u(2450)},
            {"role": "tool", "tool_call_id": "f", "content": "all passed", "status": "pass", **u(2600)},
            {"role": "assistant", "content": "fixed: all passed", **u(2650)},
        ),
        "chat_delegate.jsonl": chat(
            hdr("chat-delegate", "android", "failure"),
            {"role": "user", "content": "open settings and enable dark mode", "unit": "planner", **u(700)},
            {"role": "assistant", "content": "handing to ui worker", "unit": "planner", **u(750)},
            {"role": "assistant", "content": "", "unit": "ui", "agent": "ui-bot", "tool_calls": [
                {"id": "t1", "name": "tap", "arguments": {"x": 120, "y": 400}}], **u(800)},
            {"role": "tool", "tool_call_id": "t1", "unit": "ui", "content": "screen settings", **u(900)},
            {"role": "assistant", "content": "settings screen reached", "unit": "planner", **u(950)},
            {"kind": "screenshot", "content": "binary elided", "unit": "planner", **u(1500)},
            {"kind": "context", "action": "compress history", "unit": "planner", **u(600)},
            {"kind": "op", "op": "handoff_request", "target": "user", "unit": "planner"},
            {"kind": "op", "op": "confirmation_point", "target": "user", "unit": "planner"},
            {"role": "assistant", "content": "could not find dark mode toggle", "unit": "planner", **u(650)},
        ),
    }


def mixed_logs() -> dict[str, str]:
    logs = raw_logs()
    return {
        "ok_small.jsonl": logs["chat_small.jsonl"],
        "ok_repeat.jsonl": logs["chat_repeat.jsonl"],
        "broken.jsonl": logs["chat_small.jsonl"] + '{"role": "tool", "tool_call_id": \n',
    }


def corpus():
    rng = random.Random("fixture-corpus")
    out = []
    for system, profile in PROFILES.items():
        for case in range(CASES):
            injections = tuple(Injection(d, x) for d, x, p in profile if rng.random() < p)
            outcome = Outcome.SUCCESS if rng.random() < SUCCESS_RATE[system] else Outcome.FAILURE
            spec = SynthSpec(injections=injections, source=SOURCES[case % len(SOURCES)], outcome=outcome)
            t, gt = generate_trajectory(spec, seed=1000 * (1 + list(PROFILES).index(system)) + case)
            tid = f"{system}-{case:02d}"
            meta = dict(t.metadata, system=system, case_id=f"case-{case:02d}")
            t = replace(t, trajectory_id=tid, metadata=meta)
            out.append((t, replace(gt, trajectory_id=tid)))
    return out


def annotations(items) -> list[AnnotationRecord]:
    rng = random.Random("fixture-annotators")
    recs = []
    for t, gt in items:
        notes = {d: "injected pattern is an exempt variant" for d in DEFECTS if gt.labels[d] is Label.EXEMPT}
        recs.append(AnnotationRecord(t.trajectory_id, dict(gt.labels), "adjudicator", True, notes))
        for who, flip in (("ann_a", 0.05), ("ann_b", 0.10)):
            labels = {}
            for d in DEFECTS:
                lab = gt.labels[d]
                if rng.random() < flip:
                    lab = Label.ABSENT if lab is Label.PRESENT else Label.PRESENT
                labels[d] = lab
            recs.append(AnnotationRecord(t.trajectory_id, labels, who, False,
                                         {d: n for d, n in notes.items() if labels[d] is Label.EXEMPT}))
    return recs


def main() -> None:
    for name, text in raw_logs().items():
        atomic_write(ROOT / "raw" / name, text)
    for name, text in mixed_logs().items():
        atomic_write(ROOT / "mixed" / name, text)
    items = corpus()
    for t, gt in items:
        atomic_write(ROOT / "corpus" / f"{t.trajectory_id}.jsonl", canonical_serialize(t))
        write_json(ROOT / "truth" / f"{t.trajectory_id}.truth.json", gt.to_dict())
    atomic_write(ROOT / "annotations.jsonl", dump_annotations(annotations(items)))
    atomic_write(ROOT / "synth_spec.yaml", yaml.safe_dump({
        "event_count": [20, 40], "topology": "tree", "n_units": 3, "capacity": 10000, "seed": 0,
        "injections": [{"defect": "duplicate_step", "intensity": 1.0},
                       {"defect": "ghost_context", "intensity": 0.8, "hints": {"exempt": False}}],
    }, sort_keys=True))
    atomic_write(ROOT / "config.yaml", yaml.safe_dump({
        "seed": 7,
        "calibration": {"method": "beta_smoothed", "delta_w": 0.4, "delta_e": 0.8},
        "scoring": {"eta": 0.5, "theta_frag": 0.6},
        "split": {"ratios": [0.4, 0.2, 0.4]},
        "evaluation": {"bootstrap_replicates": 200, "ece_bins": 10},
    }, sort_keys=True))
    print(f"wrote fixtures under {ROOT}")


if __name__ == "__main__":
    main()
