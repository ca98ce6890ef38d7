"""Detector trigger rates on seeded synthetic generations: recall per class at
intensity 1, clean false-trigger rate, exemption rate, and the dose-response curve.

    python scripts/oracle_alignment.py [--n 200] [--out results]
"""

from __future__ import annotations

import argparse
from pathlib import Path

from proctrace.detectors import DEFECTS, DETECTORS, DetectorConfig, detect_all
from proctrace.io import table, write_json
from proctrace.synth import EXEMPTABLE, Injection, SynthSpec, generate_trajectory

DOSES = (0.0, 0.25, 0.5, 0.75, 1.0)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200, help="generations per cell")
    ap.add_argument("--out", default="results")
    args = ap.parse_args()
    cfg = DetectorConfig()
    n = args.n

    false = dict.fromkeys(DEFECTS, 0)
    for s in range(n):
        for f in detect_all(generate_trajectory(SynthSpec(), 50_000 + s)[0], cfg):
            false[f.defect] += f.triggered

    rows, dose_rows = [], []
    for d in DEFECTS:
        means = []
        recall = None
        for x in DOSES:
            spec = SynthSpec(injections=(Injection(d, x),))
            found = [DETECTORS[d](generate_trajectory(spec, s)[0], cfg) for s in range(n)]
            means.append(sum(f.score for f in found) / n)
            if x == 1.0:
                recall = sum(f.triggered for f in found) / n
        exempt = None
        if d in EXEMPTABLE:
            spec = SynthSpec(injections=(Injection(d, 1.0, {"exempt": True}),))
            exempt = sum(DETECTORS[d](generate_trajectory(spec, s)[0], cfg).exempted for s in range(n)) / n
        rows.append([d.value, recall, false[d] / n, exempt])
        dose_rows.append([d.value, *means])
        print(f"{d.value:<28} recall {recall:.3f}  false {false[d] / n:.3f}  "
              f"exempted {'-' if exempt is None else f'{exempt:.3f}'}  dose {' '.join(f'{m:.2f}' for m in means)}")
    out = Path(args.out)
    write_json(out / "oracle_alignment.json",
               table("oracle_alignment", ["defect", "recall_at_1", "clean_false_trigger", "exempt_rate"], rows,
                     [f"{n} seeded generations per cell, default detector config"]))
    write_json(out / "dose_response.json",
               table("dose_response", ["defect", *(f"mean_score_at_{x}" for x in DOSES)], dose_rows))


if __name__ == "__main__":
    main()
