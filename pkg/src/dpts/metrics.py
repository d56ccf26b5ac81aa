"""Diagnostics computed from run traces, plus trace and summary export.

Every function here reads only the trace, so results are reproducible from
an exported JSON file alone.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from .errors import EmptyTrace, IoError, NoBestPath
from .trace import RunTrace

SUMMARY_HEADER = (
    "algorithm", "seed", "best_reward", "total_expansions", "total_tokens",
    "best_path_tokens", "waste_ratio", "subopt_expansion_ratio", "switches",
    "best_to_subopt_switches", "earliest_best_index", "shortest_best_index",
    "es_ratio", "ds_ratio", "wall_ms",
)

FOCUS_RULES = ("confidence", "first")


def _expansions(trace: RunTrace) -> list[dict[str, Any]]:
    return trace.of_type("expanded")


def parent_map(trace: RunTrace) -> dict[int, int | None]:
    out: dict[int, int | None] = {}
    for e in trace.events:
        if e["type"] in ("expanded", "terminated"):
            out.setdefault(e["node"], e.get("parent"))
    return out


def _lineage(parents: dict[int, int | None], nid: int) -> set[int]:
    seen = set()
    cur: int | None = nid
    while cur is not None and cur not in seen:
        seen.add(cur)
        cur = parents.get(cur)
    return seen


def best_termination(trace: RunTrace) -> dict[str, Any]:
    """Max-reward termination, earliest path index on ties."""
    terms = trace.of_type("terminated")
    if not terms:
        raise NoBestPath("the trace has no terminated path")
    return min(terms, key=lambda e: (-e["reward"], e["path_index"]))


def best_path_nodes(trace: RunTrace) -> set[int]:
    """Ancestors-or-self of the best leaf."""
    return _lineage(parent_map(trace), best_termination(trace)["node"])


def cycle_focus(trace: RunTrace, focus: str = "confidence") -> list[int]:
    """One representative node per cycle, in cycle order.

    ``confidence`` picks the most confident expansion of the cycle (ties by
    lowest id); ``first`` picks the first one recorded.
    """
    if focus not in FOCUS_RULES:
        raise ValueError(f"focus must be one of {FOCUS_RULES}")
    reps: dict[int, dict[str, Any]] = {}
    for e in _expansions(trace):
        cur = reps.get(e["cycle"])
        if cur is None or (focus == "confidence" and
                           (-e["confidence"], e["node"]) < (-cur["confidence"], cur["node"])):
            reps[e["cycle"]] = e
    return [reps[c]["node"] for c in sorted(reps)]


def switch_counts(trace: RunTrace, focus: str = "confidence") -> tuple[int, int]:
    """``(total, best_to_suboptimal)`` focus changes that leave the current
    node's subtree."""
    order = cycle_focus(trace, focus)
    if not order:
        raise EmptyTrace("the trace has no expansions")
    parents = parent_map(trace)
    try:
        on_best = best_path_nodes(trace)
    except NoBestPath:
        on_best = set()
    total = to_subopt = 0
    for a, b in zip(order, order[1:]):
        if a in _lineage(parents, b) and a != b:
            continue
        total += 1
        if a in on_best and b not in on_best:
            to_subopt += 1
    return total, to_subopt


def waste_stats(trace: RunTrace) -> tuple[int, int, float]:
    """``(total_tokens, best_path_tokens, suboptimal_expansion_ratio)``."""
    on_best = best_path_nodes(trace)
    exps = _expansions(trace)
    total = sum(e["new_tokens"] for e in exps)
    best = sum(e["new_tokens"] for e in exps if e["node"] in on_best)
    sub = sum(1 for e in exps if e["node"] not in on_best)
    return total, best, (sub / len(exps) if exps else 0.0)


def best_path_indices(trace: RunTrace) -> tuple[int, int]:
    """``(earliest, shortest)`` 1-based indices of max-reward terminations."""
    top = best_termination(trace)["reward"]
    hits = [e for e in trace.of_type("terminated") if e["reward"] == top]
    earliest = min(e["path_index"] for e in hits)
    shortest = min(hits, key=lambda e: (e["path_tokens"], e["path_index"]))["path_index"]
    return earliest, shortest


def transition_ratios(trace: RunTrace) -> tuple[float, float]:
    """EarlyStop and DeepSeek events per expansion."""
    n = len(_expansions(trace))
    if n == 0:
        return 0.0, 0.0
    kinds = [e["kind"] for e in trace.of_type("transition")]
    return kinds.count("EarlyStop") / n, kinds.count("DeepSeek") / n


def cycle_proportions(trace: RunTrace) -> list[tuple[int, float, float]]:
    """``(cycle, exploit share, explore share)`` for cycles that expanded
    queue nodes."""
    counts: dict[int, list[int]] = {}
    for e in _expansions(trace):
        if e["mode"] in ("Exploit", "Explore"):
            c = counts.setdefault(e["cycle"], [0, 0])
            c[e["mode"] == "Explore"] += 1
    return [(cy, a / (a + b), b / (a + b)) for cy, (a, b) in sorted(counts.items())]


@dataclass
class MetricsSummary:
    algorithm: str
    seed: int
    best_reward: float | None
    total_tokens: int
    best_path_tokens: int
    wasted_token_ratio: float
    total_expansions: int
    suboptimal_expansions: int
    suboptimal_expansion_ratio: float
    total_switches: int
    best_to_suboptimal_switches: int
    earliest_best_index: int | None
    shortest_best_index: int | None
    es_count: int
    ds_count: int
    es_ratio: float
    ds_ratio: float
    exploit_explore_proportion_per_cycle: list[tuple[int, float, float]] = field(
        default_factory=list)
    wall_ms: float = 0.0

    def csv_row(self) -> list[str]:
        def num(x: Any) -> str:
            return "" if x is None else repr(x) if isinstance(x, float) else str(x)
        return [self.algorithm, str(self.seed), num(self.best_reward),
                str(self.total_expansions), str(self.total_tokens),
                str(self.best_path_tokens), num(self.wasted_token_ratio),
                num(self.suboptimal_expansion_ratio), str(self.total_switches),
                str(self.best_to_suboptimal_switches), num(self.earliest_best_index),
                num(self.shortest_best_index), num(self.es_ratio), num(self.ds_ratio),
                f"{self.wall_ms:.3f}"]


def summarize(trace: RunTrace, algorithm: str, seed: int | None = None,
              wall_ms: float = 0.0, focus: str = "confidence") -> MetricsSummary:
    exps = _expansions(trace)
    kinds = [e["kind"] for e in trace.of_type("transition")]
    es_ratio, ds_ratio = transition_ratios(trace)
    switches = switch_counts(trace, focus) if exps else (0, 0)
    if trace.of_type("terminated"):
        total, best_tok, sub_ratio = waste_stats(trace)
        earliest, shortest = best_path_indices(trace)
        best_reward = best_termination(trace)["reward"]
        sub = sum(1 for e in exps if e["node"] not in best_path_nodes(trace))
    else:
        total, best_tok = sum(e["new_tokens"] for e in exps), 0
        sub_ratio = 1.0 if exps else 0.0
        sub = len(exps)
        earliest = shortest = best_reward = None
    return MetricsSummary(
        algorithm=algorithm, seed=trace.seed if seed is None else seed,
        best_reward=best_reward, total_tokens=total, best_path_tokens=best_tok,
        wasted_token_ratio=(1.0 - best_tok / total) if total else 0.0,
        total_expansions=len(exps), suboptimal_expansions=sub,
        suboptimal_expansion_ratio=sub_ratio, total_switches=switches[0],
        best_to_suboptimal_switches=switches[1], earliest_best_index=earliest,
        shortest_best_index=shortest, es_count=kinds.count("EarlyStop"),
        ds_count=kinds.count("DeepSeek"), es_ratio=es_ratio, ds_ratio=ds_ratio,
        exploit_explore_proportion_per_cycle=cycle_proportions(trace), wall_ms=wall_ms)


def export_trace(trace: RunTrace, path: str | Path) -> None:
    trace.save(path)


def import_trace(path: str | Path) -> RunTrace:
    return RunTrace.load(path)


def summary_csv(summaries: Iterable[MetricsSummary], header: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(SUMMARY_HEADER)
    for s in summaries:
        w.writerow(s.csv_row())
    return buf.getvalue()


def export_summary(summaries: Sequence[MetricsSummary], path: str | Path,
                   append: bool = False) -> None:
    """Write summaries as CSV; appending skips the header when the file
    already has content."""
    p = Path(path)
    try:
        fresh = not append or not p.exists() or p.stat().st_size == 0
        with p.open("a" if append else "w", encoding="utf-8", newline="") as fh:
            fh.write(summary_csv(summaries, header=fresh))
    except OSError as exc:
        raise IoError(f"cannot write summary to {path}: {exc}") from exc
