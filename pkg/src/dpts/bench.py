"""Benchmark grids over algorithms, seeds, ablations and threshold sweeps.

Grid points are independent and may run in worker processes; results come
back in grid order so output files are stable.
"""

from __future__ import annotations

import csv
import io
import logging
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Iterable, Sequence

from .backends.http import HttpBackend, HttpBackendConfig
from .backends.synthetic import SyntheticEnv, brute_force_best
from .baselines import Algorithm, BaselineConfig, RUNNERS
from .config import Settings
from .core import Budget, Config, MemoryModel
from .errors import DPTSError, InvalidConfig, LimitExceeded
from .metrics import MetricsSummary, SUMMARY_HEADER, summarize
from .scheduler import run
from .trace import RunResult, RunTrace

log = logging.getLogger(__name__)

ALGORITHMS = {"dpts": None, "mcts": Algorithm.MCTS, "bon": Algorithm.BEST_OF_N,
              "beam": Algorithm.BEAM}

# engine switches per ablation row
ABLATIONS: dict[str, dict[str, bool]] = {
    "baseline_p1": {"adaptive_parallelism": False, "use_search": False, "use_transition": False},
    "baseline_ap": {"adaptive_parallelism": True, "use_search": False, "use_transition": False},
    "s": {"adaptive_parallelism": True, "use_search": True, "use_transition": False},
    "t": {"adaptive_parallelism": True, "use_search": False, "use_transition": True},
    "st": {"adaptive_parallelism": True, "use_search": True, "use_transition": True},
}

# the reference efficiency bench: w=4, D=8, term_prob=0.05, 512 expansions
BENCH_ENV = {"width": 4, "depth": 8, "term_prob": 0.05}
BENCH_BUDGET = 512


def bench_engine(seed: int = 0, **changes: Any) -> Config:
    base = Config(width=4, depth_max=16, mini_step=4, p=0.5, lambda_es=0.7, lambda_ds=0.7,
                  seed=seed, budget=Budget(max_expansions=BENCH_BUDGET))
    return replace(base, **changes)


def bench_memory() -> MemoryModel:
    return MemoryModel(o_max=1024.0 + 16384.0, o_init=1024.0, o_peak=1024.0)


def make_env(params: dict[str, Any], seed: int, config: Config) -> SyntheticEnv:
    p = dict(params)
    env_seed = p.pop("seed", None)
    width = p.pop("width", None)
    if width is not None and width != config.width:
        raise InvalidConfig(f"env width {width} != engine width {config.width}")
    return SyntheticEnv(seed=seed if env_seed is None else env_seed, width=config.width,
                        cache_dim=config.cache_dim, pad_token=config.pad_token, **p)


def make_backend(settings: Settings, seed: int, config: Config) -> Any:
    b = settings.backend
    if b.get("kind", "synthetic") == "synthetic":
        return make_env(settings.env, seed, config)
    cfg = HttpBackendConfig(endpoint=b["endpoint"], timeout=b.get("timeout", 30.0),
                            max_retries=b.get("max_retries", 2),
                            auth_token=b.get("auth_token"))
    prompt = b.get("prompt")
    if not prompt:
        prompt = make_env(settings.env, seed, config).prompt().tolist()
    return HttpBackend(cfg, cache_dim=config.cache_dim, pad_token=config.pad_token,
                       prompt=prompt)


def run_algorithm(name: str, config: Config, backend: Any, memory: MemoryModel | None = None,
                  baseline: BaselineConfig | None = None) -> tuple[RunResult, RunTrace]:
    if name not in ALGORITHMS:
        raise InvalidConfig(f"unknown algorithm {name!r}; expected one of {sorted(ALGORITHMS)}")
    if name == "dpts":
        return run(config, backend, memory)
    return RUNNERS[ALGORITHMS[name]](config, backend, baseline)


@dataclass(frozen=True)
class FirstBest:
    cycle: int
    expansions: int
    path_index: int


def first_best(trace: RunTrace, target: float, tol: float = 1e-12) -> FirstBest | None:
    """When the first termination reaching ``target`` was recorded.

    ``cycle`` counts backend calls up to and including that one and
    ``expansions`` counts node expansions up to that point.
    """
    n = 0
    for e in trace.events:
        if e["type"] == "expanded":
            n += 1
        elif e["type"] == "terminated" and e["reward"] >= target - tol:
            return FirstBest(e["cycle"], n, e["path_index"])
    return None


def oracle_reward(backend: Any) -> float | None:
    if not isinstance(backend, SyntheticEnv):
        return None
    try:
        return brute_force_best(backend)[1]
    except LimitExceeded:
        return None


@dataclass(frozen=True)
class GridPoint:
    algorithm: str
    seed: int
    variant: str = ""
    changes: tuple[tuple[str, Any], ...] = ()

    @property
    def label(self) -> str:
        return f"{self.algorithm}[{self.variant}]" if self.variant else self.algorithm


@dataclass
class BenchRecord:
    point: GridPoint
    summary: MetricsSummary | None = None
    oracle: float | None = None
    first: FirstBest | None = None
    stop_reason: str | None = None
    error: str | None = None
    extras: dict[str, Any] = field(default_factory=dict)


def _fmt(x: float) -> str:
    return f"{x:g}"


def grid_points(settings: Settings) -> list[GridPoint]:
    b = settings.bench
    for a in b.algorithms:
        if a not in ALGORITHMS:
            raise InvalidConfig(f"unknown algorithm {a!r}; expected one of {sorted(ALGORITHMS)}")
    for a in b.ablations:
        if a not in ABLATIONS:
            raise InvalidConfig(f"unknown ablation {a!r}; expected one of {sorted(ABLATIONS)}")
    dpts_variants: list[tuple[str, tuple]] = []
    for a in b.ablations:
        dpts_variants.append((a, tuple(ABLATIONS[a].items())))
    if b.lambda_es_grid or b.lambda_ds_grid:
        es_grid = b.lambda_es_grid or [settings.engine.lambda_es]
        ds_grid = b.lambda_ds_grid or [settings.engine.lambda_ds]
        for les in es_grid:
            for lds in ds_grid:
                dpts_variants.append((f"lambda_es={_fmt(les)},lambda_ds={_fmt(lds)}",
                                      (("lambda_es", les), ("lambda_ds", lds))))
    if not dpts_variants:
        dpts_variants.append(("", ()))
    points = []
    for alg in b.algorithms:
        for seed in b.seeds:
            if alg == "dpts":
                points.extend(GridPoint(alg, seed, v, ch) for v, ch in dpts_variants)
            else:
                points.append(GridPoint(alg, seed))
    return points


def run_point(settings: Settings, point: GridPoint) -> BenchRecord:
    rec = BenchRecord(point)
    try:
        config = replace(settings.engine, seed=point.seed, **dict(point.changes))
        backend = make_backend(settings, point.seed, config)
        rec.oracle = oracle_reward(backend)
        memory = MemoryModel(**asdict(settings.memory))
        result, trace = run_algorithm(point.algorithm, config, backend, memory,
                                      settings.baseline)
    except DPTSError as exc:
        rec.error = f"{type(exc).__name__}: {exc}"
        return rec
    rec.stop_reason = result.stop_reason.value
    rec.error = result.error
    rec.summary = summarize(trace, point.label, point.seed, result.wall_seconds * 1000.0)
    if rec.oracle is not None:
        rec.first = first_best(trace, rec.oracle)
    return rec


def _run_star(args: tuple[Settings, GridPoint]) -> BenchRecord:
    return run_point(*args)


def run_grid(settings: Settings, points: Sequence[GridPoint] | None = None,
             workers: int | None = None) -> list[BenchRecord]:
    points = grid_points(settings) if points is None else list(points)
    workers = settings.bench.workers if workers is None else workers
    if workers <= 1 or len(points) <= 1:
        return [run_point(settings, p) for p in points]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_star, [(settings, p) for p in points]))


def records_csv(records: Iterable[BenchRecord], header: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(SUMMARY_HEADER)
    for r in records:
        if r.summary is not None:
            w.writerow(r.summary.csv_row())
        else:
            # failed point: identity columns only
            w.writerow([r.point.label, r.point.seed] + [""] * (len(SUMMARY_HEADER) - 2))
    return buf.getvalue()


def sweep_table(records: Iterable[BenchRecord]) -> str:
    """Pivot of mean ES and DS ratios: one row per lambda_ds value, one
    column per lambda_es value and ratio."""
    cells: dict[tuple[float, float], list[tuple[float, float]]] = {}
    for r in records:
        ch = dict(r.point.changes)
        if r.summary is None or "lambda_es" not in ch:
            continue
        cells.setdefault((ch["lambda_es"], ch["lambda_ds"]), []).append(
            (r.summary.es_ratio, r.summary.ds_ratio))
    es_vals = sorted({k[0] for k in cells})
    ds_vals = sorted({k[1] for k in cells})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["lambda_ds"] + [f"es_ratio@lambda_es={_fmt(x)}" for x in es_vals]
               + [f"ds_ratio@lambda_es={_fmt(x)}" for x in es_vals])
    for lds in ds_vals:
        row: list[str] = [_fmt(lds)]
        for i in (0, 1):
            for les in es_vals:
                got = cells.get((les, lds))
                row.append(repr(statistics.fmean(v[i] for v in got)) if got else "")
        w.writerow(row)
    return buf.getvalue()
