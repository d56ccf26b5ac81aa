"""Command line: ``dpts run | bench | sweep | trace``.

Exit codes: 0 success, 2 configuration or input error, 3 backend failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence, TextIO

from .bench import (ALGORITHMS, grid_points, make_backend, records_csv, run_algorithm,
                    run_grid, sweep_table)
from .config import load_settings
from .errors import (BackendError, BackendUnavailable, DPTSError, InvalidConfig, InvalidInput,
                     IoError, ProtocolViolation)
from .metrics import best_termination, export_trace
from .trace import RunTrace, StopReason

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BACKEND = 3

log = logging.getLogger("dpts")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="INI config (default: $DPTS_CONFIG)")
    p.add_argument("--set", dest="overrides", metavar="KEY=VALUE", action="append", default=[],
                   help="override one setting, e.g. engine.lambda_es=0.7 (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dpts", description="Parallel tree search harness")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one search")
    _common(r)
    r.add_argument("--algorithm", choices=sorted(ALGORITHMS), default="dpts")
    r.add_argument("--trace", metavar="PATH", help="write the trace JSON here")

    for name, text in (("bench", "run the configured benchmark grid"),
                       ("sweep", "benchmark over the threshold grids and pivot the ratios")):
        b = sub.add_parser(name, help=text)
        _common(b)
        b.add_argument("--out", metavar="PATH", help="summary CSV (appended)")
        b.add_argument("--workers", type=int, metavar="N", help="parallel grid points")

    t = sub.add_parser("trace", help="print a recorded trace")
    t.add_argument("trace", metavar="PATH")
    return ap


def cmd_run(args: argparse.Namespace, out: TextIO) -> int:
    settings = load_settings(args.config, args.overrides)
    config = settings.engine
    backend = make_backend(settings, config.seed, config)
    try:
        result, trace = run_algorithm(args.algorithm, config, backend, settings.memory,
                                      settings.baseline)
    except (BackendUnavailable, BackendError, ProtocolViolation) as exc:
        print(f"error: backend failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    if args.trace:
        export_trace(trace, args.trace)
    best = "none" if result.best_reward is None else f"{result.best_reward:.6g}"
    print(f"algorithm      {args.algorithm}", file=out)
    print(f"best_reward    {best}", file=out)
    print(f"best_node      {result.best}", file=out)
    print(f"expansions     {result.expansions}", file=out)
    print(f"cycles         {result.cycles}", file=out)
    print(f"terminated     {len(result.terminated_paths)}", file=out)
    print(f"stop_reason    {result.stop_reason.value}", file=out)
    print(f"wall_ms        {result.wall_seconds * 1000:.1f}", file=out)
    if result.stop_reason is StopReason.BACKEND_FAILURE:
        print(f"error: backend failure: {result.error}", file=sys.stderr)
        return EXIT_BACKEND
    return EXIT_OK


def cmd_bench(args: argparse.Namespace, out: TextIO, sweep: bool = False) -> int:
    settings = load_settings(args.config, args.overrides)
    if not settings.bench_given:
        raise InvalidConfig("the config has no [bench] section")
    b = settings.bench
    if sweep and not (b.lambda_es_grid or b.lambda_ds_grid):
        raise InvalidConfig("sweep needs bench.lambda_es_grid or bench.lambda_ds_grid")
    if sweep:
        settings = replace(settings, bench=replace(b, ablations=[], algorithms=["dpts"]))
    workers = args.workers if args.workers is not None else b.workers
    if workers < 1:
        raise InvalidConfig("--workers must be >= 1")
    points = grid_points(settings)
    records = run_grid(settings, points, workers)
    for r in records:
        if r.error:
            print(f"warning: {r.point.label} seed {r.point.seed}: {r.error}", file=sys.stderr)

    target = args.out or b.out
    if target:
        p = Path(target)
        try:
            fresh = not p.exists() or p.stat().st_size == 0
            with p.open("a", encoding="utf-8", newline="") as fh:
                fh.write(records_csv(records, header=fresh))
        except OSError as exc:
            raise IoError(f"cannot write {target}: {exc}") from exc
        print(f"wrote {len(records)} rows to {target}", file=out)
    else:
        out.write(records_csv(records))
    if sweep:
        table = sweep_table(records)
        if b.sweep_out:
            try:
                Path(b.sweep_out).write_text(table, encoding="utf-8")
            except OSError as exc:
                raise IoError(f"cannot write {b.sweep_out}: {exc}") from exc
        out.write(table)
    if records and all(r.summary is None for r in records):
        return EXIT_BACKEND
    return EXIT_OK


def cycle_rows(trace: RunTrace) -> list[dict[str, Any]]:
    """Per-cycle counts; ``tau_p`` is the queue cap in force (None for
    algorithms that never size a queue)."""
    rows: dict[int, dict[str, Any]] = {}
    tau = None
    for e in trace.events:
        r = rows.setdefault(e["cycle"], {"cycle": e["cycle"], "queue": 0, "exploit": 0,
                                         "explore": 0, "EarlyStop": 0, "DeepSeek": 0,
                                         "Continue": 0, "terminated": 0})
        kind = e["type"]
        if kind == "queue_resized":
            tau = e["tau_p"]
        elif kind == "expanded":
            r["queue"] += 1
            if e["mode"] in ("Exploit", "Explore"):
                r[e["mode"].lower()] += 1
        elif kind == "transition":
            r[e["kind"]] = r.get(e["kind"], 0) + 1
        else:
            r["terminated"] += 1
        r["tau_p"] = tau
    return [rows[c] for c in sorted(rows)]


def render_tree(trace: RunTrace) -> list[str]:
    info: dict[int, dict[str, Any]] = {}
    kids: dict[int | None, list[int]] = {}
    for e in trace.events:
        if e["type"] not in ("expanded", "terminated") or e["node"] in info:
            continue
        info[e["node"]] = e
        kids.setdefault(e.get("parent"), []).append(e["node"])
    try:
        best = best_termination(trace)["node"]
    except DPTSError:
        best = None
    lines: list[str] = []
    roots = [n for n in kids.get(None, [])] + sorted(
        p for p in kids if p is not None and p not in info)

    def walk(nid: int, depth: int) -> None:
        e = info.get(nid)
        if e is None:
            label = f"{nid} (not recorded)"
        elif e["type"] == "terminated":
            label = f"{nid} conf={e['confidence']:.3f} reward={e['reward']:.3f}"
            if nid == best:
                label += " *best"
        else:
            label = f"{nid} conf={e['confidence']:.3f} [{e['mode']}]"
        lines.append("  " * depth + label)
        for k in sorted(kids.get(nid, [])):
            walk(k, depth + 1)

    for r in roots:
        walk(r, 0)
    return lines


TABLE_COLS = ("cycle", "tau_p", "queue", "exploit", "explore", "EarlyStop", "DeepSeek",
              "Continue", "terminated")


def cmd_trace(args: argparse.Namespace, out: TextIO) -> int:
    trace = RunTrace.load(args.trace)
    print(" ".join(f"{c:>10}" for c in TABLE_COLS), file=out)
    for r in cycle_rows(trace):
        print(" ".join(f"{'-' if r[c] is None else r[c]:>10}" for c in TABLE_COLS), file=out)
    tree = render_tree(trace)
    if tree:
        print("", file=out)
        print("tree:", file=out)
        for line in tree:
            print("  " + line, file=out)
    return EXIT_OK


def main(argv: Sequence[str] | None = None, out: TextIO | None = None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return cmd_run(args, out)
        if args.command in ("bench", "sweep"):
            return cmd_bench(args, out, sweep=args.command == "sweep")
        return cmd_trace(args, out)
    except (BackendUnavailable, BackendError) as exc:
        print(f"error: backend failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (InvalidConfig, InvalidInput, IoError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
