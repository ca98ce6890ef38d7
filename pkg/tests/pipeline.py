"""Full CLI pipeline over the shipped fixtures, used by CLI and acceptance tests."""

from __future__ import annotations

import json
from pathlib import Path

from proctrace.cli import main

FIXTURES = Path(__file__).resolve().parents[1] / "fixtures"
ALL_ANALYSES = "metrics,ece,reliability,kappa,correlation,bootstrap,eta_sweep,rank_shift"


def run_pipeline(work: Path) -> dict[str, int]:
    """ingest -> analyze -> split -> calibrate -> analyze -> evaluate; returns exit codes."""
    cfg = str(FIXTURES / "config.yaml")
    ann = str(FIXTURES / "annotations.jsonl")
    codes = {}
    codes["ingest_raw"] = main(["ingest", str(FIXTURES / "raw"), "--out", str(work / "traj")])
    codes["ingest_corpus"] = main(["ingest", str(FIXTURES / "corpus"), "--adapter", "canonical",
                                   "--out", str(work / "traj")])
    codes["analyze_hard"] = main(["--config", cfg, "analyze", str(work / "traj"), "--method", "hard_threshold",
                                  "--out", str(work / "hard")])
    codes["split"] = main(["--config", cfg, "evaluate", str(work / "hard"), "--analyses", "split",
                           "--out", str(work / "tables")])
    splits = work / "tables" / "splits.json"
    annotated = {json.loads(line)["trajectory_id"] for line in Path(ann).read_text().splitlines() if line.strip()}
    cal_ids = set(json.loads(splits.read_text())["calibration"]) & annotated
    cal_cards = [str(p) for p in sorted((work / "hard").glob("*.scorecard.json"))
                 if p.name.removesuffix(".scorecard.json") in cal_ids]
    codes["calibrate"] = main(["--config", cfg, "calibrate", *cal_cards, "--annotations", ann,
                               "--splits", str(splits), "--out", str(work / "model.json")])
    codes["analyze"] = main(["--config", cfg, "analyze", str(work / "traj"), "--model", str(work / "model.json"),
                             "--out", str(work / "cards")])
    codes["evaluate"] = main(["--config", cfg, "evaluate", str(work / "cards"), "--annotations", ann,
                              "--splits", str(splits), "--analyses", ALL_ANALYSES, "--out", str(work / "tables")])
    return codes


def snapshot(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}
