"""Independent reference implementations used as test oracles.

Written the slow, obvious way on purpose; they share no code with the package.
"""

from __future__ import annotations

import random
import string

from builders import TB

MUTATING = {"file_write", "file_delete", "vcs_commit", "rollback"}


def _tokens(text: str) -> set[str]:
    return {w.strip(string.punctuation) for w in text.lower().split()} - {""}


def duplicate_score(t, window: int = 20, sim: float = 0.9) -> float:
    calls = [e for e in t.events if e.event_type.value == "tool_call"]
    if not calls:
        return 0.0
    live = 0
    for i in range(len(calls)):
        for j in range(len(calls)):
            if j <= i:
                continue
            a, b = calls[i], calls[j]
            if b.index - a.index > window:
                continue
            sa = _tokens(a.tool.tool_name + " " + " ".join(f"{k} {v}" for k, v in sorted(a.tool.arguments.items())))
            sb = _tokens(b.tool.tool_name + " " + " ".join(f"{k} {v}" for k, v in sorted(b.tool.arguments.items())))
            jac = 1.0 if not (sa | sb) else len(sa & sb) / len(sa | sb)
            if jac < sim:
                continue
            between = t.events[a.index + 1 : b.index]
            if any(e.external_op is not None and e.external_op.op_kind.value in MUTATING for e in between):
                continue
            statuses = {e.validation.status.value for e in between if e.validation is not None} - {"none"}
            if len(statuses) > 1:
                continue
            live += 1
    return min(1.0, live / len(calls))


def longest_periodic(names: list[str], max_period: int = 4, min_reps: int = 3) -> int:
    best = 0
    n = len(names)
    for i in range(n):
        for j in range(i + 1, n + 1):
            sub = names[i:j]
            for p in range(1, max_period + 1):
                if len(sub) >= min_reps * p and all(sub[k] == sub[k + p] for k in range(len(sub) - p)):
                    best = max(best, len(sub))
    return best


def largest_scc(nodes, edges) -> int:
    reach = {v: {v} for v in nodes}
    for _ in nodes:
        for a, b in edges:
            reach[a] |= reach[b]
    return max((sum(1 for w in nodes if w in reach[v] and v in reach[w]) for v in nodes), default=0)


def random_call_trajectory(rng: random.Random, max_calls: int = 12):
    b = TB(cap=1000)
    b.msg("start")
    tools = ["read", "grep", "test"]
    args = ["a.py", "b.py", "c"]
    for _ in range(rng.randint(0, max_calls)):
        r = rng.random()
        if r < 0.15:
            b.op(rng.choice(["file_write", "checkpoint", "vcs_commit", "network"]), "x")
        elif r < 0.25:
            b.msg("note")
        b.call(rng.choice(tools), {"path": rng.choice(args)})
        b.result("ok", status=rng.choice([None, None, "pass", "fail"]))
    return b.build()


def unit_graph_trajectory(nodes: list[str], edges: list[tuple[str, str]]):
    b = TB(cap=1000)
    for u in nodes:
        b.msg(f"unit {u}", unit=u)
    for a, c in edges:
        i = b.msg("delegate", unit=a)
        b.msg("work", unit=c, parent=i)
    return b.build()
