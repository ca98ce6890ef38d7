"""Sweep the PB mixing weight over a directory of scorecards and show how the
system ranking moves.  Scorecards need a ``system`` field (the fixture corpus has one).

    proctrace analyze fixtures/corpus --out /tmp/cards
    python scripts/eta_sweep.py /tmp/cards [--steps 11]
"""

from __future__ import annotations

import argparse
from pathlib import Path

from proctrace.evaluation import eta_crossing, eta_sweep
from proctrace.io import read_json


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("cards", help="directory holding *.scorecard.json files")
    ap.add_argument("--steps", type=int, default=11)
    args = ap.parse_args()
    groups: dict[str, list[dict]] = {}
    for p in sorted(Path(args.cards).glob("*.scorecard.json")):
        c = read_json(p)
        if c.get("system"):
            groups.setdefault(c["system"], []).append(c)
    if not groups:
        raise SystemExit("no scorecards with a system label")
    q = {s: sum(c["q_def"] for c in cs) / len(cs) for s, cs in groups.items()}
    cp = {s: sum(c["cp"] for c in cs) / len(cs) for s, cs in groups.items()}
    grid = [i / (args.steps - 1) for i in range(args.steps)]
    systems = sorted(groups)
    print("eta   " + "  ".join(f"{s:>10}" for s in systems))
    for pt in eta_sweep(q, cp, grid):
        print(f"{pt.eta:4.2f}  " + "  ".join(f"{pt.pb[s]:.3f} (#{pt.ranks[s]})" for s in systems))
    for i, a in enumerate(systems):
        for b in systems[i + 1 :]:
            x = eta_crossing((q[a], cp[a]), (q[b], cp[b]))
            if x is not None:
                print(f"{a} and {b} swap order at eta = {x:.3f}")


if __name__ == "__main__":
    main()
