"""INI configuration files for the command line.

Sections: ``[engine]``, ``[memory]``, ``[env]``, ``[backend]``,
``[baseline]`` and ``[bench]``.  Unknown sections or keys are rejected and
missing keys keep their defaults.  ``--set section.key=value`` overrides are
applied on top of the file.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

from .baselines import BaselineConfig
from .core import Budget, Config, MemoryModel
from .errors import InvalidConfig

ENV_VAR = "DPTS_CONFIG"


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt(conv: Callable[[str], Any]) -> Callable[[str], Any]:
    def parse(s: str) -> Any:
        return None if s.strip().lower() in ("", "none") else conv(s)
    return parse


def _list(conv: Callable[[str], Any]) -> Callable[[str], list]:
    def parse(s: str) -> list:
        return [conv(x.strip()) for x in s.replace("\n", ",").split(",") if x.strip()]
    return parse


def parse_seeds(s: str) -> list[int]:
    """``"0..9"`` (inclusive range), ``"3"`` or ``"1, 4, 7"``."""
    s = s.strip()
    if ".." in s:
        lo, hi = s.split("..", 1)
        lo_i, hi_i = int(lo), int(hi)
        if hi_i < lo_i:
            raise ValueError(f"empty seed range {s!r}")
        return list(range(lo_i, hi_i + 1))
    return _list(int)(s)


def _str(s: str) -> str:
    return s.strip()


SCHEMA: dict[str, dict[str, Callable[[str], Any]]] = {
    "engine": {
        "width": int, "depth_max": int, "mini_step": int, "max_tokens": int,
        "p": float, "lambda_es": float, "lambda_ds": float, "t_star": int,
        "pad_token": int, "cache_dim": int, "parallel_cap": int, "seed": int,
        "adaptive_parallelism": _bool, "use_search": _bool, "use_transition": _bool,
        "max_expansions": _opt(int), "max_wall_seconds": _opt(float),
    },
    "memory": {"o_max": float, "o_init": float, "o_peak": float, "cell_cost": float},
    "env": {
        "seed": _opt(int), "width": _opt(int), "depth": int, "term_prob": float,
        "golden_base": float, "golden_span": float, "other_base": float,
        "other_span": float, "prompt_len": int,
    },
    "backend": {
        "kind": _str, "endpoint": _str, "timeout": float, "max_retries": int,
        "auth_token": _opt(_str), "prompt": _list(int),
    },
    "baseline": {"n": int, "beam_k": int, "uct_c": float,
                 "time_limit_seconds": _opt(float)},
    "bench": {
        "algorithms": _list(_str), "seeds": parse_seeds,
        "lambda_es_grid": _list(float), "lambda_ds_grid": _list(float),
        "ablations": _list(_str), "out": _opt(_str), "sweep_out": _opt(_str),
        "workers": int,
    },
}


@dataclass
class BenchSettings:
    algorithms: list[str] = field(default_factory=lambda: ["dpts"])
    seeds: list[int] = field(default_factory=lambda: [0])
    lambda_es_grid: list[float] = field(default_factory=list)
    lambda_ds_grid: list[float] = field(default_factory=list)
    ablations: list[str] = field(default_factory=list)
    out: str | None = None
    sweep_out: str | None = None
    workers: int = 1


@dataclass
class Settings:
    engine: Config = field(default_factory=Config)
    memory: MemoryModel = field(default_factory=MemoryModel)
    env: dict[str, Any] = field(default_factory=dict)
    backend: dict[str, Any] = field(default_factory=lambda: {"kind": "synthetic"})
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    bench: BenchSettings = field(default_factory=BenchSettings)
    bench_given: bool = False
    source: str | None = None


def resolve_path(path: str | None) -> str | None:
    return path if path else os.environ.get(ENV_VAR) or None


def read_raw(path: str | Path) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep key case so typos are caught verbatim
    p = Path(path)
    if not p.is_file():
        raise InvalidConfig(f"config file not found: {p}")
    try:
        parser.read_string(p.read_text(encoding="utf-8"), source=str(p))
    except (OSError, UnicodeDecodeError, configparser.Error) as exc:
        raise InvalidConfig(f"cannot parse config {p}: {exc}") from exc
    return {s: dict(parser[s]) for s in parser.sections()}


def apply_overrides(raw: dict[str, dict[str, str]], overrides: Sequence[str]) -> None:
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot or not name:
            raise InvalidConfig(f"override must look like section.key=value, got {item!r}")
        raw.setdefault(section, {})[name] = value


def _typed(raw: dict[str, dict[str, str]]) -> dict[str, dict[str, Any]]:
    out: dict[str, dict[str, Any]] = {}
    for section, items in raw.items():
        schema = SCHEMA.get(section)
        if schema is None:
            raise InvalidConfig(f"unknown config section [{section}]")
        typed = out.setdefault(section, {})
        for key, text in items.items():
            conv = schema.get(key)
            if conv is None:
                raise InvalidConfig(f"unknown key {section}.{key}")
            try:
                typed[key] = conv(text)
            except ValueError as exc:
                raise InvalidConfig(f"bad value for {section}.{key}: {exc}") from exc
    return out


def build(typed: dict[str, dict[str, Any]], source: str | None = None) -> Settings:
    try:
        eng = dict(typed.get("engine", {}))
        budget = Budget(eng.pop("max_expansions", None), eng.pop("max_wall_seconds", None))
        engine = Config(budget=budget, **eng)
        memory = MemoryModel(**typed.get("memory", {}))
        backend = {"kind": "synthetic", **typed.get("backend", {})}
        if backend["kind"] not in ("synthetic", "http"):
            raise InvalidConfig(f"backend.kind must be synthetic or http, got {backend['kind']!r}")
        if backend["kind"] == "http" and not backend.get("endpoint"):
            raise InvalidConfig("backend.endpoint is required for the http backend")
        baseline = BaselineConfig(**typed.get("baseline", {}))
        bench = BenchSettings(**typed.get("bench", {}))
    except TypeError as exc:
        raise InvalidConfig(str(exc)) from exc
    if bench.workers < 1:
        raise InvalidConfig("bench.workers must be >= 1")
    return Settings(engine=engine, memory=memory, env=dict(typed.get("env", {})),
                    backend=backend, baseline=baseline, bench=bench,
                    bench_given="bench" in typed, source=source)


def load_settings(path: str | None = None, overrides: Sequence[str] = ()) -> Settings:
    """Read ``path`` (or ``$DPTS_CONFIG``), apply overrides, validate."""
    path = resolve_path(path)
    raw = read_raw(path) if path else {}
    apply_overrides(raw, overrides)
    return build(_typed(raw), source=path)
