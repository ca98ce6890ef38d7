"""Command-line pipeline: ingest, analyze, calibrate, evaluate, synth."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import yaml

from . import evaluation as ev
from .calibration import (
    CalibrationContext,
    CalibrationError,
    CalibrationSet,
    Method,
    calibrate_findings,
    compute_ece,
    context_of,
    fit_calibration_set,
    reliability_bins,
)
from .config import CONFIG_ENV, ConfigError, RunConfig, load_config, stage_seed
from .detectors import DEFECTS, DefectClass, EvidenceRecord, detect_all
from .ingest import IngestError, adapters, ingest_raw_log
from .io import read_json, table, write_json, atomic_write
from .scoring import build_scorecard, fragile_success_rate, scenario_scores
from .synth import SynthError, SynthSpec, generate_trajectory
from .trajectory import ParseError, TrajectoryError, canonical_parse, canonical_serialize, slugify

log = logging.getLogger("proctrace")

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_USAGE = 2

SUMMARY_SCHEMA = "run-summary/1"
SPLITS_SCHEMA = "splits/1"


class CommandError(Exception):
    """Fatal error for the whole command (as opposed to a per-item failure)."""


def _expand(paths: Sequence[str], pattern: str) -> list[Path]:
    out: list[Path] = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(p.glob(pattern)))
        else:
            out.append(p)
    return out


# --- ingest ------------------------------------------------------------------------------------

def cmd_ingest(inputs: Sequence[str], adapter: str, out_dir: str) -> int:
    out = Path(out_dir)
    errors = 0
    files = _expand(inputs, "*")
    if not files:
        raise CommandError("no input files")
    for path in files:
        try:
            raw = path.read_bytes()
        except OSError as exc:
            print(f"{path}: unreadable: {exc.strerror}", file=sys.stderr)
            errors += 1
            continue
        try:
            t = ingest_raw_log(raw, adapter, trajectory_id=path.stem)
        except IngestError as exc:
            print(f"{path}: {exc}", file=sys.stderr)
            errors += 1
            continue
        atomic_write(out / f"{slugify(path.stem)}.jsonl", canonical_serialize(t))
    log.info("ingested %d of %d files", len(files) - errors, len(files))
    return EXIT_PARTIAL if errors else EXIT_OK


# --- analyze --------------------------------------------------------------------------------------

def _load_models(cfg: RunConfig, model_path: str | None) -> CalibrationSet | None:
    method = cfg.calibration.method
    path = model_path or cfg.model_path
    if path is None:
        if method is not Method.HARD_THRESHOLD:
            raise CommandError(f"calibration method {method.value} needs a model file (--model)")
        return None
    try:
        models = CalibrationSet.from_dict(read_json(path))
    except (OSError, ValueError, KeyError) as exc:
        raise CommandError(f"cannot load model {path}: {exc}") from None
    return models


def analyze_trajectory(t, cfg: RunConfig, models: CalibrationSet | None):
    raw = detect_all(t, cfg.detectors)
    ctx = context_of(t, models.horizon_cuts if models else cfg.calibration.horizon_cuts)
    calibrated = calibrate_findings(raw, ctx, models, cfg.calibration.delta_w, cfg.calibration.delta_e)
    return build_scorecard(t, calibrated, cfg.scoring)


def cmd_analyze(inputs: Sequence[str], cfg: RunConfig, out_dir: str, model_path: str | None = None,
                strict: bool | None = None) -> int:
    strict = cfg.strict if strict is None else strict
    models = _load_models(cfg, model_path)
    out = Path(out_dir)
    files = _expand(inputs, "*.jsonl")
    if not files:
        raise CommandError("no trajectory files")
    cards, skipped = [], []
    for path in files:
        try:
            t = canonical_parse(path.read_bytes())
        except (OSError, ParseError, TrajectoryError) as exc:
            print(f"{path}: {exc}", file=sys.stderr)
            skipped.append({"file": path.name, "error": str(exc)})
            if strict:
                return EXIT_PARTIAL
            continue
        try:
            card = analyze_trajectory(t, cfg, models)
        except CalibrationError as exc:
            raise CommandError(str(exc)) from None
        write_json(out / f"{slugify(t.trajectory_id)}.scorecard.json", card.to_dict())
        cards.append(card)
    per_source, notes = scenario_scores(cards)
    summary = {
        "schema": SUMMARY_SCHEMA,
        "trajectories": len(cards),
        "skipped": skipped,
        "method": (models.method if models else Method.HARD_THRESHOLD).value,
        "pb_by_source": per_source,
        "fragile_success_rate": fragile_success_rate(cards),
        "triggered": {d.value: sum(1 for c in cards for f in c.findings if f.defect is d and f.raw.triggered)
                      for d in DEFECTS},
        "notes": notes,
    }
    write_json(out / "summary.json", summary)
    return EXIT_PARTIAL if skipped else EXIT_OK


# --- shared loaders ----------------------------------------------------------------------------------

def load_scorecards(paths: Sequence[str]) -> list[dict]:
    files = _expand(paths, "*.scorecard.json")
    if not files:
        raise CommandError("no scorecard files")
    cards = []
    for f in files:
        try:
            card = read_json(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise CommandError(f"{f}: cannot read scorecard: {exc}") from None
        if card.get("schema") != "scorecard/1":
            raise CommandError(f"{f}: not a scorecard")
        cards.append(card)
    return sorted(cards, key=lambda c: c["trajectory_id"])


def load_annotation_file(path: str) -> list[ev.AnnotationRecord]:
    try:
        return ev.load_annotations(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CommandError(f"cannot read annotations {path}: {exc.strerror}") from None


def resolved_labels(records: Sequence[ev.AnnotationRecord]) -> dict[str, ev.AnnotationRecord]:
    """One label set per trajectory: the adjudicated record, or the only record."""
    by_tid: dict[str, list[ev.AnnotationRecord]] = {}
    for r in records:
        by_tid.setdefault(r.trajectory_id, []).append(r)
    out = {}
    for tid, recs in sorted(by_tid.items()):
        adj = [r for r in recs if r.adjudicated]
        if adj:
            out[tid] = adj[-1]
        elif len(recs) == 1:
            out[tid] = recs[0]
        else:
            raise CommandError(f"{tid}: {len(recs)} annotations but none adjudicated")
    return out


def _finding(card: dict, defect: DefectClass) -> dict:
    for f in card["findings"]:
        if f["defect"] == defect.value:
            return f
    raise CommandError(f"{card['trajectory_id']}: scorecard lacks {defect.value}")


def _binary(label: ev.Label) -> int:
    # exempt counts as absent for risk calibration: the pattern is there but is not a defect
    return 1 if label is ev.Label.PRESENT else 0


# --- calibrate ------------------------------------------------------------------------------------------

def cmd_calibrate(scorecards: Sequence[str], annotations: str, splits: str, method: str, out_path: str,
                  cfg: RunConfig) -> int:
    cards = load_scorecards(scorecards)
    split = read_json(splits)
    if split.get("schema") != SPLITS_SCHEMA:
        raise CommandError(f"{splits}: not a splits file")
    cal_ids = set(split["calibration"])
    leaked = [c["trajectory_id"] for c in cards if c["trajectory_id"] not in cal_ids]
    if leaked:
        raise CommandError(f"split leakage: {len(leaked)} case(s) outside the calibration split, e.g. {leaked[0]}")
    labels = resolved_labels(load_annotation_file(annotations))
    missing = [c["trajectory_id"] for c in cards if c["trajectory_id"] not in labels]
    if missing:
        raise CommandError(f"no annotation for {len(missing)} case(s), e.g. {missing[0]}")
    data: dict[DefectClass, list] = {d: [] for d in DEFECTS}
    for card in cards:
        rec = labels[card["trajectory_id"]]
        for d in DEFECTS:
            f = _finding(card, d)
            ctx = CalibrationContext(f["context"]["source"], f["context"]["horizon_bucket"])
            data[d].append((EvidenceRecord(d, f["score"]), ctx, _binary(rec.labels[d])))
    cal = cfg.calibration
    try:
        models = fit_calibration_set(
            data, Method(method), thresholds={d: cfg.detectors.threshold(d) for d in DEFECTS},
            shrinkage_m=cal.shrinkage_m, n_buckets=cal.n_buckets, min_context_count=cal.min_context_count,
        )
    except CalibrationError as exc:
        raise CommandError(str(exc)) from None
    models = CalibrationSet(models.method, models.models, tuple(cal.horizon_cuts))
    write_json(out_path, models.to_dict())
    return EXIT_OK


# --- evaluate ---------------------------------------------------------------------------------------------

ANALYSES = ("split", "metrics", "ece", "reliability", "kappa", "correlation", "bootstrap", "eta_sweep",
            "rank_shift")


def _need(what: object, name: str, analysis: str) -> None:
    if not what:
        raise CommandError(f"analysis {analysis} requires {name}")


def _r(x):
    return None if x is None else round(float(x), 12)


def analysis_split(cards, cfg: RunConfig) -> dict:
    # split whole cases so every system's run of a task lands on the same side
    groups: dict[str, list[dict]] = {}
    for c in cards:
        groups.setdefault(c.get("case_id") or c["trajectory_id"], []).append(c)
    cases = []
    for cid, cs in sorted(groups.items()):
        first = min(cs, key=lambda c: c["trajectory_id"])
        cases.append({"trajectory_id": cid, "source": first["source"], "outcome": first["outcome"]})
    sizes = cfg.split.sizes(len(cases))
    try:
        parts = ev.stratified_split(cases, sizes, cfg.split.strata, stage_seed(cfg.seed, "split"),
                                    min_per_split=cfg.split.min_per_split)
    except ev.EvaluationError as exc:
        raise CommandError(str(exc)) from None
    dev, cal, evl = (sorted(c["trajectory_id"] for cid in part for c in groups[cid]) for part in parts)
    return {"schema": SPLITS_SCHEMA, "seed": cfg.seed, "development": dev, "calibration": cal, "evaluation": evl}


def _eval_cards(cards, eval_ids):
    return [c for c in cards if eval_ids is None or c["trajectory_id"] in eval_ids]


def analysis_metrics(cards, labels) -> dict:
    rows = []
    for d in DEFECTS:
        preds, labs = [], []
        exempt_ok = exempt_total = 0
        for c in cards:
            if c["trajectory_id"] not in labels:
                continue
            f = _finding(c, d)
            lab = labels[c["trajectory_id"]].labels[d]
            preds.append((f["score"], f["triggered"]))
            labs.append(lab)
            if lab is ev.Label.EXEMPT:
                exempt_total += 1
                exempt_ok += not f["triggered"]
        if not preds:
            continue
        m = ev.detection_metrics(preds, labs)
        trig = sum(t for _, t in preds) / len(preds)
        rows.append([d.value, len(preds), _r(trig), m.tp, m.fp, m.fn, m.tn, _r(m.precision), _r(m.recall),
                     _r(m.f1), _r(m.average_precision), _r(m.auroc), exempt_ok, exempt_total, "; ".join(m.notes)])
    return table("metrics", ["defect", "cases", "trigger_rate", "tp", "fp", "fn", "tn", "precision", "recall", "f1",
                             "average_precision", "auroc", "exempt_correct", "exempt_total", "notes"], rows,
                 notes=["trigger_rate is the triggered fraction over annotated cases (interpretation)"])


def _risk_pairs(cards, labels, defect=None):
    pairs = []
    for c in cards:
        if c["trajectory_id"] not in labels:
            continue
        for d in DEFECTS if defect is None else (defect,):
            lab = labels[c["trajectory_id"]].labels[d]
            if lab is ev.Label.EXEMPT:
                continue
            pairs.append((_finding(c, d)["posterior_risk"], _binary(lab)))
    return pairs


def analysis_ece(cards, labels, bins: int) -> dict:
    rows = []
    for d in list(DEFECTS) + [None]:
        pairs = _risk_pairs(cards, labels, d)
        if pairs:
            rows.append(["overall" if d is None else d.value, len(pairs), _r(compute_ece(pairs, bins))])
    return table("ece", ["defect", "n", "ece"], rows, notes=[f"{bins} equal-width bins, pooled over contexts"])


def analysis_reliability(cards, labels, bins: int) -> dict:
    rows = [[_r(b.lower), _r(b.upper), _r(b.mean_predicted), _r(b.empirical_frequency), b.count]
            for b in reliability_bins(_risk_pairs(cards, labels), bins)]
    return table("reliability", ["lower", "upper", "mean_predicted", "empirical_frequency", "count"], rows)


def analysis_kappa(records) -> dict:
    by_tid: dict[str, dict[str, ev.AnnotationRecord]] = {}
    for r in records:
        if not r.adjudicated:
            by_tid.setdefault(r.trajectory_id, {})[r.annotator_id] = r
    dual = {tid: recs for tid, recs in by_tid.items() if len(recs) >= 2}
    if not dual:
        raise CommandError("analysis kappa requires dual annotations: no trajectory has two annotator records")
    rows = []
    for d in DEFECTS:
        a, b = [], []
        for tid in sorted(dual):
            first, second = sorted(dual[tid])[:2]
            a.append(dual[tid][first].labels[d])
            b.append(dual[tid][second].labels[d])
        rows.append([d.value, len(a), _r(ev.cohen_kappa(a, b))])
    return table("kappa", ["defect", "cases", "kappa"], rows,
                 notes=["exempt folded into absent", "first two annotators by id per case"])


def analysis_correlation(cards) -> dict:
    risks = [{d: _finding(c, d)["posterior_risk"] for d in DEFECTS} for c in cards]
    failed = [c["outcome"] == "failure" for c in cards]
    pb, notes = ev.defect_failure_correlation(risks, failed)
    rows = [["failure", d.value, _r(pb[d])] for d in DEFECTS]
    mat = ev.defect_correlation_matrix(risks)
    for i, a in enumerate(DEFECTS):
        for j, b in enumerate(DEFECTS):
            rows.append([a.value, b.value, _r(mat[i][j])])
    return table("correlation", ["row", "column", "pearson"], rows, notes=notes)


def _systems(cards) -> tuple[dict[str, list[dict]], list[str]]:
    """Scorecards grouped by system, restricted to case ids every system covers."""
    out: dict[str, list[dict]] = {}
    unlabeled = 0
    for c in cards:
        if not c.get("system"):
            unlabeled += 1
            continue
        out.setdefault(c["system"], []).append(c)
    notes = [f"{unlabeled} scorecard(s) without a system label ignored"] if unlabeled else []
    if not out:
        return out, notes
    shared = set.intersection(*({c.get("case_id") or c["trajectory_id"] for c in cs} for cs in out.values()))
    dropped = sum(len(cs) for cs in out.values())
    out = {s: [c for c in cs if (c.get("case_id") or c["trajectory_id"]) in shared] for s, cs in out.items()}
    dropped -= sum(len(cs) for cs in out.values())
    if dropped:
        notes.append(f"{dropped} scorecard(s) outside the shared case set ignored")
    return out, notes


def _mean(xs):
    return sum(xs) / len(xs)


def analysis_bootstrap(cards, cfg: RunConfig) -> dict:
    systems, notes = _systems(cards)
    _need(len(systems) >= 2, "scorecards from at least two systems", "bootstrap")
    _need(all(systems.values()), "a case shared by every system", "bootstrap")
    per_case: dict = {}
    strata: dict = {}
    for s, cs in systems.items():
        per_case[s] = {"pb": {}, "q_def": {}, "cp": {}, "outcome": {}}
        for c in cs:
            cid = c.get("case_id") or c["trajectory_id"]
            per_case[s]["pb"][cid] = c["pb"]
            per_case[s]["q_def"][cid] = c["q_def"]
            per_case[s]["cp"][cid] = c["cp"]
            per_case[s]["outcome"][cid] = 1.0 if c["outcome"] == "success" else 0.0
            strata.setdefault(cid, c["source"])
    try:
        res = ev.bootstrap_ranking(per_case, strata, cfg.evaluation.bootstrap_replicates,
                                   stage_seed(cfg.seed, "bootstrap"), level=cfg.evaluation.confidence)
    except ev.EvaluationError as exc:
        raise CommandError(f"analysis bootstrap: {exc}") from None
    rows = [[b.system, _r(b.point["pb"]), _r(b.ci["pb"][0]), _r(b.ci["pb"][1]), _r(b.mean_rank), _r(b.rank_std),
             _r(b.top1), _r(b.top3)] for b in res]
    return table("bootstrap", ["system", "pb", "pb_ci_low", "pb_ci_high", "mean_rank", "rank_std", "top1", "top3"],
                 rows, notes=[f"R={cfg.evaluation.bootstrap_replicates}, strata=source, ranks by mean PB"] + notes)


def analysis_eta_sweep(cards, cfg: RunConfig) -> dict:
    systems, notes = _systems(cards)
    _need(systems, "scorecards with a system label", "eta_sweep")
    q = {s: _mean([c["q_def"] for c in cs]) for s, cs in systems.items()}
    cp = {s: _mean([c["cp"] for c in cs]) for s, cs in systems.items()}
    rows = []
    for pt in ev.eta_sweep(q, cp, cfg.evaluation.eta_grid):
        for s in sorted(pt.pb):
            rows.append([_r(pt.eta), s, _r(pt.pb[s]), pt.ranks[s]])
    crossings = []
    names = sorted(q)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            x = ev.eta_crossing((q[a], cp[a]), (q[b], cp[b]))
            if x is not None:
                crossings.append(f"{a}/{b} cross at eta={x:.6f}")
    return table("eta_sweep", ["eta", "system", "pb", "rank"], rows, notes=crossings + notes)


def analysis_rank_shift(cards) -> dict:
    systems, notes = _systems(cards)
    _need(len(systems) >= 2, "scorecards from at least two systems", "rank_shift")
    outcome = {s: _mean([1.0 if c["outcome"] == "success" else 0.0 for c in cs]) for s, cs in systems.items()}
    pb = {s: _mean([c["pb"] for c in cs]) for s, cs in systems.items()}
    res = ev.rank_shift(outcome, pb)
    rows = [[s, _r(r["outcome_score"]), r["outcome_rank"], _r(r["pb"]), r["pb_rank"], r["shift"]]
            for s, r in res.items()]
    return table("rank_shift", ["system", "outcome_score", "outcome_rank", "pb", "pb_rank", "shift"], rows,
                 notes=notes)


def cmd_evaluate(scorecards: Sequence[str], analyses: Sequence[str], out_dir: str, cfg: RunConfig,
                 annotations: str | None = None, splits: str | None = None) -> int:
    unknown = [a for a in analyses if a not in ANALYSES]
    if unknown:
        raise CommandError(f"unknown analyses {unknown}; choose from {', '.join(ANALYSES)}")
    cards = load_scorecards(scorecards)
    records = load_annotation_file(annotations) if annotations else []
    eval_ids = None
    if splits:
        eval_ids = set(read_json(splits)["evaluation"])
    out = Path(out_dir)
    bins = cfg.evaluation.ece_bins
    labels = None
    for name in analyses:
        if name in ("metrics", "ece", "reliability"):
            _need(records, "an annotation file (--annotations)", name)
            labels = labels or resolved_labels(records)
        if name == "split":
            write_json(out / "splits.json", analysis_split(cards, cfg))
            continue
        scoped = _eval_cards(cards, eval_ids)
        if name == "metrics":
            result = analysis_metrics(scoped, labels)
        elif name == "ece":
            result = analysis_ece(scoped, labels, bins)
        elif name == "reliability":
            result = analysis_reliability(scoped, labels, bins)
        elif name == "kappa":
            _need(records, "an annotation file (--annotations)", name)
            result = analysis_kappa(records)
        elif name == "correlation":
            _need(len(scoped) >= 2, "at least two scorecards", name)
            result = analysis_correlation(scoped)
        elif name == "bootstrap":
            result = analysis_bootstrap(scoped, cfg)
        elif name == "eta_sweep":
            result = analysis_eta_sweep(scoped, cfg)
        else:
            result = analysis_rank_shift(scoped)
        write_json(out / f"{name}.json", result)
    return EXIT_OK


# --- synth --------------------------------------------------------------------------------------------

def cmd_synth(spec_path: str | None, count: int, seed: int, out_dir: str) -> int:
    if count < 0:
        raise CommandError("count must be >= 0")
    data = {}
    if spec_path:
        data = yaml.safe_load(Path(spec_path).read_text(encoding="utf-8")) or {}
    try:
        spec = SynthSpec.from_dict(data)
    except (SynthError, ValueError, KeyError) as exc:
        raise CommandError(f"infeasible spec: {exc}") from None
    out = Path(out_dir)
    for i in range(count):
        try:
            t, gt = generate_trajectory(spec, seed + i)
        except SynthError as exc:
            raise CommandError(f"infeasible spec: {exc}") from None
        atomic_write(out / f"{t.trajectory_id}.jsonl", canonical_serialize(t))
        write_json(out / f"{t.trajectory_id}.truth.json", gt.to_dict())
    return EXIT_OK


# --- argument parsing ----------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="proctrace", description=__doc__)
    p.add_argument("--config", help=f"YAML/JSON run config (default: ${CONFIG_ENV} or built-in defaults)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="map raw logs to canonical trajectory files")
    s.add_argument("inputs", nargs="+", help="raw log files or directories")
    s.add_argument("--adapter", default="chatlog", choices=adapters())
    s.add_argument("--out", required=True, help="output directory")

    s = sub.add_parser("analyze", help="detect, calibrate and score trajectories")
    s.add_argument("inputs", nargs="+", help="canonical trajectory files or directories")
    s.add_argument("--model", help="calibration model file (needed unless method is hard_threshold)")
    s.add_argument("--method", choices=[m.value for m in Method], help="override calibration.method")
    s.add_argument("--out", required=True)
    s.add_argument("--strict", action="store_true", default=None, help="abort on the first invalid trajectory")

    s = sub.add_parser("calibrate", help="fit calibration models on the calibration split")
    s.add_argument("scorecards", nargs="+")
    s.add_argument("--annotations", required=True)
    s.add_argument("--splits", required=True, help="splits.json from `evaluate --analyses split`")
    s.add_argument("--method", default="beta_smoothed", choices=[m.value for m in Method])
    s.add_argument("--out", required=True, help="model file to write")

    s = sub.add_parser("evaluate", help="compute evaluation tables")
    s.add_argument("scorecards", nargs="+")
    s.add_argument("--annotations")
    s.add_argument("--splits", help="restrict analyses to the evaluation split")
    s.add_argument("--analyses", default="metrics", help=f"comma list from: {','.join(ANALYSES)}")
    s.add_argument("--out", required=True)

    s = sub.add_parser("synth", help="generate synthetic trajectories with ground truth")
    s.add_argument("--spec", help="synth spec (YAML/JSON); defaults to a clean tree-topology baseline")
    s.add_argument("--count", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.command == "ingest":
            return cmd_ingest(args.inputs, args.adapter, args.out)
        if args.command == "analyze":
            if args.method:
                cfg = cfg.with_overrides(calibration=replace(cfg.calibration, method=Method(args.method)))
            return cmd_analyze(args.inputs, cfg, args.out, args.model, args.strict)
        if args.command == "calibrate":
            return cmd_calibrate(args.scorecards, args.annotations, args.splits, args.method, args.out, cfg)
        if args.command == "evaluate":
            names = [a.strip() for a in args.analyses.split(",") if a.strip()]
            return cmd_evaluate(args.scorecards, names, args.out, cfg, args.annotations, args.splits)
        return cmd_synth(args.spec, args.count, args.seed, args.out)
    except (CommandError, ConfigError, ev.EvaluationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
