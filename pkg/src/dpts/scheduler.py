"""The parallel search control loop.

One cycle sizes the queue from the memory model, refills it from the
candidate pool, computes the early-stop and deep-seek thresholds, expands
every queued node in a single backend call, collects rewards for finished
paths and finally decides which lineages carry over to the next cycle.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .backends.base import backend_prompt
from .core import (CandidatePool, Config, MemoryModel, Mode, Node, NodeId, ParallelQueue,
                   ThresholdState, Tree, create_root)
from .errors import (BackendError, BackendUnavailable, InvalidConfig, InvalidInput,
                     ProtocolViolation)
from .streamline import assemble_batch, evict_caches, partition_outputs
from .trace import RunResult, RunTrace, StopReason

log = logging.getLogger(__name__)

BACKEND_FAILURES = (BackendError, BackendUnavailable, ProtocolViolation)


@dataclass(frozen=True)
class TransitionThresholds:
    theta_es: float
    theta_ds: float

    def __post_init__(self) -> None:
        if self.theta_es < 0 or self.theta_ds < 0:
            raise InvalidInput("thresholds must be >= 0")


def compute_queue_size(mem: MemoryModel, cap: int) -> int:
    """Number of nodes that fit in one batch given the last observed peak."""
    if cap < 1:
        raise InvalidConfig("cap must be >= 1")
    if mem.o_max < mem.o_init:
        raise InvalidConfig(f"o_max ({mem.o_max}) is below o_init ({mem.o_init})")
    if mem.o_peak <= mem.o_init:
        return cap
    size = math.floor((mem.o_max - mem.o_init) / (mem.o_peak - mem.o_init))
    return max(1, min(cap, size))


def compute_threshold(state: ThresholdState, lam: float, t_star: int) -> float:
    """Scaled mean of past expanded confidences, or their max once enough
    paths have terminated."""
    if lam < 0:
        raise InvalidInput("lambda must be >= 0")
    if not state.history:
        return 0.0
    if state.t <= t_star:
        return lam * state.mean()
    return state.max()


def search(tree: Tree, queue: ParallelQueue, tau_p: int, pool: CandidatePool,
           p: float, use_search: bool = True) -> ParallelQueue:
    """Top up ``queue`` to ``tau_p`` entries from the best pool candidates.

    Refills are Exploit while fewer than ``p * tau_p`` exploit entries are
    queued and Explore afterwards.  With ``use_search`` off every refill is
    Exploit.  A queue above ``tau_p`` (after the cap shrank) hands its least
    confident members back to the pool.
    """
    if tau_p < 1:
        raise InvalidInput("tau_p must be >= 1")
    trim_queue(tree, queue, pool, tau_p)
    e1 = queue.count(Mode.EXPLOIT)
    for nid in pool.take_top(tau_p - len(queue)):
        if not use_search or e1 < p * tau_p:
            mode = Mode.EXPLOIT
            e1 += 1
        else:
            mode = Mode.EXPLORE
        queue.append(nid, mode)
        tree.set_mode(nid, mode)
    return queue


def trim_queue(tree: Tree, queue: ParallelQueue, pool: CandidatePool, limit: int) -> None:
    """Return the least confident queue members beyond ``limit`` to the pool."""
    if len(queue) <= limit:
        return
    ranked = sorted(queue, key=lambda n: (-tree[n].confidence, n))
    for nid in ranked[limit:]:
        queue.remove(nid)
        tree.set_mode(nid, Mode.CANDIDATE)
        pool.add(nid, tree[nid].confidence)


def thresholds_for(state: ThresholdState, config: Config) -> TransitionThresholds:
    # a zero coefficient pins the threshold at zero on both branches so that
    # the all-exploitation regime never early-stops
    def one(lam: float) -> float:
        return compute_threshold(state, lam, config.t_star) if lam > 0 else 0.0
    return TransitionThresholds(one(config.lambda_es), one(config.lambda_ds))


def best_child(tree: Tree, nid: NodeId) -> Node | None:
    best = None
    for cid in tree.children[nid]:
        c = tree[cid]
        if c.mode is Mode.TERMINATED:
            continue
        if best is None or c.confidence > best.confidence:
            best = c
    return best


def transition(tree: Tree, queue: ParallelQueue, thresholds: TransitionThresholds,
               pool: CandidatePool, enabled: bool = True
               ) -> tuple[ParallelQueue, list[tuple[str, NodeId, NodeId | None]]]:
    """Carry promising lineages into the next queue.

    Returns the new queue and ``(kind, parent, child)`` events.  With
    ``enabled`` off the best child of every parent continues silently.
    """
    nxt = ParallelQueue()
    events: list[tuple[str, NodeId, NodeId | None]] = []
    for nid, mode in queue.items():
        child = best_child(tree, nid)
        if child is None:
            continue
        if not enabled:
            promote, kind = True, None
        elif mode is Mode.EXPLOIT:
            promote, kind = child.confidence > thresholds.theta_es, "Continue"
        else:
            promote, kind = child.confidence > thresholds.theta_ds, "DeepSeek"
        if promote:
            pool.discard(child.id)
            nxt.append(child.id, Mode.EXPLOIT)
            tree.set_mode(child.id, Mode.EXPLOIT)
            if kind:
                events.append((kind, nid, child.id))
        elif mode is Mode.EXPLOIT:
            tree.set_mode(nid, Mode.STOPPED)
            events.append(("EarlyStop", nid, None))
    return nxt, events


def should_terminate(node: Node, config: Config) -> bool:
    return (node.term_flag or node.depth >= config.depth_max
            or len(node.seq) >= config.max_tokens)


def settle(tree: Tree, node: Node) -> None:
    """Write the terminal reward; paths cut off by the engine's limits score 0."""
    if node.term_flag and node.term_reward is None:
        raise ProtocolViolation(f"node {node.id} terminated without a reward")
    tree.terminate(node.id, node.term_reward if node.term_reward is not None else 0.0)


def reward_and_collect(tree: Tree, children: Sequence[Node], pool: CandidatePool,
                       state: ThresholdState, config: Config,
                       expanded: Sequence[NodeId] = ()) -> list[Node]:
    """Terminate finished children, pool the rest, and grow the threshold
    history with the confidences of ``expanded`` parents.  Returns the
    children that terminated, in order."""
    for nid in expanded:
        state.record(tree[nid].confidence)
    done = []
    for c in children:
        if should_terminate(c, config):
            settle(tree, c)
            state.t += 1
            done.append(c)
        else:
            pool.add(c.id, c.confidence)
    return done


def run(config: Config, backend, memory: MemoryModel | None = None,
        prompt: Sequence[int] | np.ndarray | None = None) -> tuple[RunResult, RunTrace]:
    """Search until the budget runs out or nothing is left to expand.

    Backend failures end the run early with ``StopReason.BACKEND_FAILURE``
    and the trace recorded so far.
    """
    mem = memory if memory is not None else MemoryModel()
    compute_queue_size(mem, config.parallel_cap)  # validates the model up front
    if prompt is None:
        prompt = backend_prompt(backend)
        if prompt is None:
            raise InvalidConfig("no prompt given and the backend provides none")

    tree = Tree.from_config(config)
    pool = CandidatePool()
    queue = ParallelQueue()
    state = ThresholdState()
    root = create_root(tree, prompt, pool)
    trace = RunTrace(config=config.to_dict(), seed=config.seed)
    result = RunResult()
    budget = config.budget
    started = time.perf_counter()
    tau_prev = None
    cycle = 0

    while True:
        if budget.max_expansions is not None and result.expansions >= budget.max_expansions:
            result.stop_reason = StopReason.BUDGET_EXHAUSTED
            break
        if (budget.max_wall_seconds is not None
                and time.perf_counter() - started >= budget.max_wall_seconds):
            result.stop_reason = StopReason.WALL_CLOCK
            break
        if not queue and not pool:
            result.stop_reason = StopReason.POOL_DRAINED
            break
        cycle += 1

        tau_p = compute_queue_size(mem, config.parallel_cap) if config.adaptive_parallelism else 1
        if tau_p != tau_prev:
            trace.queue_resized(cycle, tau_p)
            tau_prev = tau_p
        search(tree, queue, tau_p, pool, config.p, config.use_search)
        if budget.max_expansions is not None:
            trim_queue(tree, queue, pool, budget.max_expansions - result.expansions)
        thresholds = thresholds_for(state, config)

        batch = assemble_batch(tree, queue)
        try:
            out = backend.expand(batch, config.width, config.mini_step)
            children = partition_outputs(tree, out, queue, config.width, config.mini_step)
        except BACKEND_FAILURES as exc:
            log.warning("backend failure in cycle %d: %s", cycle, exc)
            result.stop_reason = StopReason.BACKEND_FAILURE
            result.error = f"{type(exc).__name__}: {exc}"
            break

        per_parent: dict[NodeId, int] = {}
        for c in children:
            per_parent[c.parent] = per_parent.get(c.parent, 0) + c.n_new
        for nid, mode in queue.items():
            node = tree[nid]
            tree.mark_expanded(nid)
            result.expansions += 1
            trace.expanded(cycle, nid, node.parent, mode.value, node.confidence,
                           per_parent.get(nid, 0), node.depth)
        expanded = [n for n in queue if n != root.id]
        for c in reward_and_collect(tree, children, pool, state, config, expanded):
            trace.terminated(cycle, c.id, c.parent, c.reward, len(c.seq), c.confidence)
            result.record(c.id, c.reward, len(c.seq))

        queue, events = transition(tree, queue, thresholds, pool, config.use_transition)
        for kind, nid, child in events:
            trace.transition(cycle, kind, nid, child)
        evict_caches(tree)
        mem.observe(batch.cell_count, tree.live_cells)

    result.cycles = cycle if result.stop_reason is not StopReason.BACKEND_FAILURE else cycle - 1
    result.wall_seconds = time.perf_counter() - started
    return result, trace
