"""Comparison searches on the same backends and trace format.

Each backend call is one cycle.  MCTS and Best-of-N expand a single node
per call, Beam expands its whole beam per call.
"""

from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .backends.base import backend_prompt
from .backends.synthetic import SyntheticEnv, brute_force_best
from .core import Config, Mode, Node, NodeId, Tree, create_root
from .errors import InvalidConfig
from .scheduler import BACKEND_FAILURES, settle, should_terminate
from .streamline import assemble_batch, evict_caches, partition_outputs
from .trace import RunResult, RunTrace, StopReason

log = logging.getLogger(__name__)


class Algorithm(str, enum.Enum):
    MCTS = "MCTS"
    BEST_OF_N = "BestOfN"
    BEAM = "Beam"
    EXHAUSTIVE = "Exhaustive"


@dataclass
class BaselineConfig:
    algorithm: Algorithm = Algorithm.MCTS
    n: int = 16
    beam_k: int = 4
    uct_c: float = math.sqrt(2.0)
    time_limit_seconds: float | None = 120.0

    def __post_init__(self) -> None:
        self.algorithm = Algorithm(self.algorithm)
        if self.n < 1 or self.beam_k < 1:
            raise InvalidConfig("n and beam_k must be >= 1")
        if self.uct_c < 0:
            raise InvalidConfig("uct_c must be >= 0")
        if self.time_limit_seconds is not None and self.time_limit_seconds <= 0:
            raise InvalidConfig("time_limit_seconds must be > 0")


class _Stop(Exception):
    def __init__(self, reason: StopReason, error: str | None = None) -> None:
        super().__init__(reason.value)
        self.reason = reason
        self.error = error


class _Session:
    """Tree, trace and budget shared by the three sampling baselines."""

    def __init__(self, config: Config, backend, params: BaselineConfig, label: str,
                 prompt: Sequence[int] | np.ndarray | None) -> None:
        if prompt is None:
            prompt = backend_prompt(backend)
            if prompt is None:
                raise InvalidConfig("no prompt given and the backend provides none")
        self.config = config
        self.backend = backend
        self.tree = Tree.from_config(config)
        self.root = create_root(self.tree, prompt)
        echo = config.to_dict()
        echo["baseline"] = {"algorithm": params.algorithm.value, "n": params.n,
                            "beam_k": params.beam_k, "uct_c": params.uct_c}
        self.trace = RunTrace(config=echo, seed=config.seed)
        self.result = RunResult()
        self.label = label
        self.cycle = 0
        self.started = time.perf_counter()
        limits = [x for x in (config.budget.max_wall_seconds, params.time_limit_seconds)
                  if x is not None]
        self.deadline = self.started + min(limits) if limits else None

    def room(self) -> int | None:
        cap = self.config.budget.max_expansions
        return None if cap is None else cap - self.result.expansions

    def check(self, want: int = 1) -> int:
        """Raise ``_Stop`` when out of budget, else return how many
        expansions of ``want`` may proceed."""
        room = self.room()
        if room is not None and room <= 0:
            raise _Stop(StopReason.BUDGET_EXHAUSTED)
        if self.deadline is not None and time.perf_counter() >= self.deadline:
            raise _Stop(StopReason.WALL_CLOCK)
        return want if room is None else min(want, room)

    def expand(self, nids: list[NodeId]) -> list[Node]:
        """One backend call over ``nids``; children come back in row order
        with terminal ones already settled."""
        self.cycle += 1
        tree, cfg = self.tree, self.config
        batch = assemble_batch(tree, nids)
        try:
            out = self.backend.expand(batch, cfg.width, cfg.mini_step)
            kids = partition_outputs(tree, out, nids, cfg.width, cfg.mini_step)
        except BACKEND_FAILURES as exc:
            log.warning("backend failure in cycle %d: %s", self.cycle, exc)
            raise _Stop(StopReason.BACKEND_FAILURE, f"{type(exc).__name__}: {exc}") from exc
        made: dict[NodeId, int] = {}
        for c in kids:
            made[c.parent] = made.get(c.parent, 0) + c.n_new
            if should_terminate(c, cfg):
                settle(tree, c)
        for nid in nids:
            node = tree[nid]
            tree.mark_expanded(nid)
            self.result.expansions += 1
            self.trace.expanded(self.cycle, nid, node.parent, self.label, node.confidence,
                                made.get(nid, 0), node.depth)
        evict_caches(tree)
        return kids

    def record(self, node: Node) -> None:
        self.trace.terminated(self.cycle, node.id, node.parent, node.reward,
                              len(node.seq), node.confidence)
        self.result.record(node.id, node.reward, len(node.seq))

    def finish(self, reason: StopReason, error: str | None = None) -> tuple[RunResult, RunTrace]:
        self.result.stop_reason = reason
        self.result.error = error
        self.result.cycles = self.cycle
        self.result.wall_seconds = time.perf_counter() - self.started
        return self.result, self.trace


def _params(params: BaselineConfig | None, algorithm: Algorithm) -> BaselineConfig:
    if params is None:
        return BaselineConfig(algorithm=algorithm)
    if params.algorithm is not algorithm:
        params = BaselineConfig(algorithm, params.n, params.beam_k, params.uct_c,
                                params.time_limit_seconds)
    return params


def mcts_run(config: Config, backend, params: BaselineConfig | None = None,
             prompt: Sequence[int] | np.ndarray | None = None) -> tuple[RunResult, RunTrace]:
    """Sequential UCT search with a greedy max-confidence rollout policy.

    Every iteration selects down the tree (unvisited children first, ties by
    id), expands the reached leaf, rolls out from its first child to a
    terminal and backs the reward up the whole path.  Rollout nodes stay in
    the tree.  Fully explored subtrees are never selected again, so each
    iteration ends on a new terminal.
    """
    params = _params(params, Algorithm.MCTS)
    s = _Session(config, backend, params, "Sequential", prompt)
    tree = s.tree
    visits: dict[NodeId, int] = {}
    value: dict[NodeId, float] = {}
    done: set[NodeId] = set()
    c = params.uct_c

    def open_kids(nid: NodeId) -> list[NodeId]:
        return [k for k in tree.children[nid] if k not in done]

    def uct(parent: NodeId, kid: NodeId) -> float:
        n = visits.get(kid, 0)
        if n == 0:
            return math.inf
        return value[kid] / n + c * math.sqrt(math.log(visits[parent]) / n)

    def step(nid: NodeId) -> None:
        s.check()
        s.expand([nid])

    try:
        while s.root.id not in done:
            s.check()
            path = [s.root.id]
            cur = s.root.id
            while tree[cur].expanded:
                kids = open_kids(cur)
                cur = max(kids, key=lambda k: (uct(path[-1], k), -k))
                path.append(cur)
            if tree[cur].mode is not Mode.TERMINATED:
                step(cur)
                cur = open_kids(cur)[0]
                path.append(cur)
                while tree[cur].mode is not Mode.TERMINATED:
                    if not tree[cur].expanded:
                        step(cur)
                    kids = open_kids(cur)
                    cur = max(kids, key=lambda k: (tree[k].confidence, -k))
                    path.append(cur)
            leaf = tree[cur]
            s.record(leaf)
            for nid in path:
                visits[nid] = visits.get(nid, 0) + 1
                value[nid] = value.get(nid, 0.0) + leaf.reward
            for nid in reversed(path):
                node = tree[nid]
                if node.mode is Mode.TERMINATED or (node.expanded and not open_kids(nid)):
                    done.add(nid)
                else:
                    break
    except _Stop as stop:
        return s.finish(stop.reason, stop.error)
    return s.finish(StopReason.POOL_DRAINED)


def best_of_n_run(config: Config, backend, params: BaselineConfig | None = None,
                  prompt: Sequence[int] | np.ndarray | None = None) -> tuple[RunResult, RunTrace]:
    """``n`` independent rollouts, sampling children in proportion to
    confidence; rollout ``i`` draws from a generator seeded by
    ``(seed, i)``."""
    params = _params(params, Algorithm.BEST_OF_N)
    s = _Session(config, backend, params, "Sample", prompt)
    try:
        for i in range(params.n):
            rng = np.random.default_rng([config.seed, i])
            cur = s.root
            while True:
                s.check()
                kids = s.expand([cur.id])
                conf = np.array([k.confidence for k in kids])
                probs = conf / conf.sum() if conf.sum() > 0 else None
                cur = kids[int(rng.choice(len(kids), p=probs))]
                for k in kids:
                    if k is not cur and k.mode is Mode.CANDIDATE:
                        s.tree.set_mode(k.id, Mode.STOPPED)
                if cur.mode is Mode.TERMINATED:
                    s.record(cur)
                    break
    except _Stop as stop:
        return s.finish(stop.reason, stop.error)
    return s.finish(StopReason.COMPLETED)


def beam_run(config: Config, backend, params: BaselineConfig | None = None,
             prompt: Sequence[int] | np.ndarray | None = None) -> tuple[RunResult, RunTrace]:
    """Level-synchronous beam over node confidence, ties by id."""
    params = _params(params, Algorithm.BEAM)
    s = _Session(config, backend, params, "Beam", prompt)
    beam = [s.root.id]
    try:
        while beam:
            beam = beam[: s.check(len(beam))]
            kids = s.expand(beam)
            live = []
            for k in kids:
                if k.mode is Mode.TERMINATED:
                    s.record(k)
                else:
                    live.append(k)
            live.sort(key=lambda k: (-k.confidence, k.id))
            for k in live[params.beam_k:]:
                s.tree.set_mode(k.id, Mode.STOPPED)
            beam = [k.id for k in live[: params.beam_k]]
    except _Stop as stop:
        return s.finish(stop.reason, stop.error)
    return s.finish(StopReason.POOL_DRAINED)


def exhaustive_run(config: Config, backend, params: BaselineConfig | None = None) -> RunResult:
    """Global optimum by enumeration; only defined for the synthetic backend."""
    if not isinstance(backend, SyntheticEnv):
        raise InvalidConfig("exhaustive search needs the synthetic backend")
    if backend.width != config.width:
        raise InvalidConfig(f"env width {backend.width} != config width {config.width}")
    started = time.perf_counter()
    path, reward = brute_force_best(backend)
    return RunResult(best_reward=reward, best_path=path, stop_reason=StopReason.COMPLETED,
                     wall_seconds=time.perf_counter() - started)


RUNNERS = {
    Algorithm.MCTS: mcts_run,
    Algorithm.BEST_OF_N: best_of_n_run,
    Algorithm.BEAM: beam_run,
}
