"""Domain types: nodes, the tree arena, candidate pool, parallel queue and configuration.

Every node owns only the cache cells for the tokens it appended; the full
token path is stored on each node.  Liveness bookkeeping (how many nodes in a
subtree can still be expanded) is maintained incrementally so that cache
eviction never needs a full tree walk.
"""

from __future__ import annotations

import enum
import heapq
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import InvalidConfig, InvalidInput, NotFound

NodeId = int


class Mode(str, enum.Enum):
    CANDIDATE = "Candidate"
    EXPLOIT = "Exploit"
    EXPLORE = "Explore"
    STOPPED = "Stopped"
    TERMINATED = "Terminated"


QUEUE_MODES = (Mode.EXPLOIT, Mode.EXPLORE)


def as_tokens(tokens: Iterable[int] | np.ndarray) -> np.ndarray:
    arr = np.asarray(tokens, dtype=np.int64)
    if arr.ndim != 1:
        raise InvalidInput(f"token sequence must be 1-D, got shape {arr.shape}")
    return arr


def empty_cells(cache_dim: int) -> np.ndarray:
    return np.zeros((0, cache_dim), dtype=np.float64)


@dataclass(eq=False)
class Node:
    id: NodeId
    parent: NodeId | None
    confidence: float
    kv_segment: np.ndarray
    seq: np.ndarray
    mode: Mode
    depth: int
    reward: float | None = None
    # tokens appended at this node; survives cache eviction
    n_new: int = 0
    expanded: bool = False
    live_below: int = 0
    # backend termination verdict, applied by reward collection
    term_flag: bool = False
    term_reward: float | None = None

    @property
    def live(self) -> bool:
        if self.mode is Mode.CANDIDATE:
            return True
        return self.mode in QUEUE_MODES and not self.expanded

    @property
    def new_tokens(self) -> np.ndarray:
        return self.seq[len(self.seq) - self.n_new:]


class Tree:
    """Arena of nodes keyed by id, with ordered child lists."""

    def __init__(self, cache_dim: int = 4, pad_token: int = 0) -> None:
        if cache_dim < 1:
            raise InvalidConfig("cache_dim must be positive")
        self.cache_dim = cache_dim
        self.pad_token = pad_token
        self.nodes: dict[NodeId, Node] = {}
        self.children: dict[NodeId, list[NodeId]] = {}
        self.root: NodeId | None = None
        self.live_cells = 0
        self._next_id = 0
        self._evictable: list[NodeId] = []

    @classmethod
    def from_config(cls, config: "Config") -> "Tree":
        return cls(cache_dim=config.cache_dim, pad_token=config.pad_token)

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, nid: object) -> bool:
        return nid in self.nodes

    def __iter__(self) -> Iterator[Node]:
        return iter(self.nodes.values())

    def __getitem__(self, nid: NodeId) -> Node:
        try:
            return self.nodes[nid]
        except KeyError:
            raise NotFound(f"node {nid} is not in the tree") from None

    node = __getitem__

    @property
    def prompt_len(self) -> int:
        return len(self[self.root].seq) if self.root is not None else 0

    def _insert(self, node: Node) -> None:
        self.nodes[node.id] = node
        self.children[node.id] = []
        if node.parent is not None:
            self.children[node.parent].append(node.id)
        self.live_cells += node.kv_segment.shape[0]
        node.live_below = 0
        if node.live:
            self._propagate(node, +1)
        elif node.kv_segment.shape[0]:
            self._evictable.append(node.id)

    def _new_id(self) -> NodeId:
        nid = self._next_id
        self._next_id += 1
        return nid

    def _propagate(self, node: Node, delta: int) -> None:
        cur: Node | None = node
        while cur is not None:
            cur.live_below += delta
            if cur.live_below == 0:
                self._evictable.append(cur.id)
            cur = self.nodes[cur.parent] if cur.parent is not None else None

    def _relive(self, node: Node, was_live: bool) -> None:
        if node.live != was_live:
            self._propagate(node, +1 if node.live else -1)

    def set_mode(self, nid: NodeId, mode: Mode) -> None:
        node = self[nid]
        was = node.live
        node.mode = Mode(mode)
        self._relive(node, was)

    def mark_expanded(self, nid: NodeId) -> None:
        node = self[nid]
        was = node.live
        node.expanded = True
        self._relive(node, was)

    def terminate(self, nid: NodeId, reward: float) -> None:
        node = self[nid]
        if node.reward is not None:
            raise InvalidInput(f"reward of node {nid} already set")
        if not 0.0 <= reward <= 1.0:
            raise InvalidInput(f"reward {reward} outside [0, 1]")
        node.reward = float(reward)
        self.set_mode(nid, Mode.TERMINATED)

    def take_evictable(self) -> list[NodeId]:
        out, self._evictable = self._evictable, []
        return out

    def path(self, nid: NodeId) -> list[NodeId]:
        """Root-first list of ids ending with ``nid``."""
        out = []
        cur: NodeId | None = nid
        while cur is not None:
            out.append(cur)
            cur = self[cur].parent
        out.reverse()
        return out


def create_root(tree: Tree, prompt: Sequence[int] | np.ndarray,
                pool: "CandidatePool | None" = None) -> Node:
    """Insert the root node (id 0, confidence 1.0) built from ``prompt``."""
    seq = as_tokens(prompt)
    if seq.size == 0:
        raise InvalidInput("prompt must be non-empty")
    if np.any(seq == tree.pad_token):
        raise InvalidInput(f"prompt contains the pad token {tree.pad_token}")
    if np.any(seq < 0):
        raise InvalidInput("token ids must be non-negative")
    if tree.root is not None:
        raise InvalidInput("tree already has a root")
    seq.flags.writeable = False
    root = Node(id=tree._new_id(), parent=None, confidence=1.0,
                kv_segment=empty_cells(tree.cache_dim), seq=seq,
                mode=Mode.CANDIDATE, depth=0)
    tree._insert(root)
    tree.root = root.id
    if pool is not None:
        pool.add(root.id, root.confidence)
    return root


def add_child(tree: Tree, parent: NodeId, tokens: Sequence[int] | np.ndarray,
              cells: np.ndarray, confidence: float) -> Node:
    par = tree[parent]
    toks = as_tokens(tokens)
    cells = np.asarray(cells, dtype=np.float64)
    if cells.ndim != 2 or cells.shape[1] != tree.cache_dim:
        raise InvalidInput(
            f"cells must have shape (n, {tree.cache_dim}), got {cells.shape}")
    if toks.size != cells.shape[0]:
        raise InvalidInput(
            f"{toks.size} tokens but {cells.shape[0]} cache cells")
    if toks.size == 0:
        raise InvalidInput("a child must append at least one token")
    if np.any(toks == tree.pad_token) or np.any(toks < 0):
        raise InvalidInput("child tokens contain the pad token or negative ids")
    if not (0.0 <= confidence <= 1.0) or math.isnan(confidence):
        raise InvalidInput(f"confidence {confidence} outside [0, 1]")
    seq = np.concatenate([par.seq, toks])
    seq.flags.writeable = False
    cells = cells.copy()
    cells.flags.writeable = False
    child = Node(id=tree._new_id(), parent=parent, confidence=float(confidence),
                 kv_segment=cells, seq=seq, mode=Mode.CANDIDATE,
                 depth=par.depth + 1, n_new=int(toks.size))
    tree._insert(child)
    return child


def ancestors(tree: Tree, nid: NodeId) -> list[NodeId]:
    """Root-first ancestor ids of ``nid``, excluding ``nid`` itself."""
    return tree.path(nid)[:-1]


class CandidatePool:
    """Unexpanded nodes ranked by confidence (desc), ties by ascending id.

    Backed by a heap with lazy deletion so that removal of a promoted node is
    O(1) and ``take_top`` is O(k log n).
    """

    def __init__(self) -> None:
        self._heap: list[tuple[float, NodeId]] = []
        self._conf: dict[NodeId, float] = {}

    def __len__(self) -> int:
        return len(self._conf)

    def __contains__(self, nid: object) -> bool:
        return nid in self._conf

    def __iter__(self) -> Iterator[NodeId]:
        return iter(self.ordered())

    def ordered(self) -> list[NodeId]:
        return [nid for _, nid in sorted((-c, n) for n, c in self._conf.items())]

    def add(self, nid: NodeId, confidence: float) -> None:
        if nid in self._conf:
            return
        self._conf[nid] = confidence
        heapq.heappush(self._heap, (-confidence, nid))

    def remove(self, nid: NodeId) -> None:
        if self._conf.pop(nid, None) is None:
            raise NotFound(f"node {nid} is not in the candidate pool")

    def discard(self, nid: NodeId) -> None:
        self._conf.pop(nid, None)

    def take_top(self, k: int) -> list[NodeId]:
        if k < 0:
            raise InvalidInput("k must be non-negative")
        out: list[NodeId] = []
        while self._heap and len(out) < k:
            negc, nid = heapq.heappop(self._heap)
            if self._conf.get(nid) == -negc:
                del self._conf[nid]
                out.append(nid)
        return out


def pool_take_top(pool: CandidatePool, k: int) -> list[NodeId]:
    return pool.take_top(k)


class ParallelQueue:
    """Ordered set of node ids expanded together in one cycle, each tagged
    Exploit or Explore."""

    def __init__(self, entries: Iterable[tuple[NodeId, Mode]] = ()) -> None:
        self._modes: dict[NodeId, Mode] = {}
        for nid, mode in entries:
            self.append(nid, mode)

    def __len__(self) -> int:
        return len(self._modes)

    def __iter__(self) -> Iterator[NodeId]:
        return iter(list(self._modes))

    def __contains__(self, nid: object) -> bool:
        return nid in self._modes

    def __repr__(self) -> str:
        inner = ", ".join(f"{n}:{m.value}" for n, m in self._modes.items())
        return f"ParallelQueue([{inner}])"

    @property
    def entries(self) -> list[NodeId]:
        return list(self._modes)

    def items(self) -> list[tuple[NodeId, Mode]]:
        return list(self._modes.items())

    def mode(self, nid: NodeId) -> Mode:
        return self._modes[nid]

    def append(self, nid: NodeId, mode: Mode) -> None:
        mode = Mode(mode)
        if mode not in QUEUE_MODES:
            raise InvalidInput(f"queue entries must be Exploit or Explore, got {mode}")
        if nid in self._modes:
            raise InvalidInput(f"node {nid} already queued")
        self._modes[nid] = mode

    def remove(self, nid: NodeId) -> None:
        del self._modes[nid]

    def count(self, mode: Mode) -> int:
        return sum(1 for m in self._modes.values() if m is mode)


@dataclass
class Budget:
    max_expansions: int | None = None
    max_wall_seconds: float | None = None


@dataclass
class Config:
    """Engine configuration.

    ``width``, ``depth_max``, ``mini_step``, ``max_tokens`` and ``t_star``
    default to the published experimental settings.  ``adaptive_parallelism``,
    ``use_search`` and ``use_transition`` are ablation switches.
    """

    width: int = 4
    depth_max: int = 16
    mini_step: int = 100
    max_tokens: int = 2048
    p: float = 0.5
    lambda_es: float = 0.7
    lambda_ds: float = 0.7
    t_star: int = 5
    pad_token: int = 0
    cache_dim: int = 4
    parallel_cap: int = 16
    budget: Budget = field(default_factory=Budget)
    seed: int = 0
    adaptive_parallelism: bool = True
    use_search: bool = True
    use_transition: bool = True

    def __post_init__(self) -> None:
        if isinstance(self.budget, dict):
            self.budget = Budget(**self.budget)
        for name in ("width", "depth_max", "mini_step", "max_tokens", "t_star",
                     "cache_dim", "parallel_cap"):
            if int(getattr(self, name)) < 1:
                raise InvalidConfig(f"{name} must be a positive integer")
        if not 0.0 <= self.p <= 1.0:
            raise InvalidConfig("p must lie in [0, 1]")
        if self.lambda_es < 0 or self.lambda_ds < 0:
            raise InvalidConfig("lambda_es and lambda_ds must be >= 0")
        if self.pad_token < 0:
            raise InvalidConfig("pad_token must be a non-negative token id")
        b = self.budget
        if b.max_expansions is not None and b.max_expansions < 0:
            raise InvalidConfig("budget.max_expansions must be >= 0")
        if b.max_wall_seconds is not None and b.max_wall_seconds <= 0:
            raise InvalidConfig("budget.max_wall_seconds must be > 0")
        if not 0 <= self.seed < 2 ** 64:
            raise InvalidConfig("seed must be an unsigned 64-bit integer")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MemoryModel:
    """Simulated memory accounting in abstract cost units."""

    o_max: float = 1024.0 + 4096.0
    o_init: float = 1024.0
    o_peak: float = 1024.0
    cell_cost: float = 1.0

    def __post_init__(self) -> None:
        if self.cell_cost < 0:
            raise InvalidConfig("cell_cost must be >= 0")

    def observe(self, batch_cells: int, live_cells: int) -> None:
        self.o_peak = self.o_init + self.cell_cost * (batch_cells + live_cells)


@dataclass
class ThresholdState:
    """Confidences of expanded nodes and the count of terminated paths."""

    history: list[float] = field(default_factory=list)
    t: int = 0
    _sum: float = field(default=0.0, repr=False)
    _max: float = field(default=0.0, repr=False)

    def __post_init__(self) -> None:
        hist = list(self.history)
        self.history = []
        for c in hist:
            self.record(c)

    def record(self, confidence: float) -> None:
        self.history.append(confidence)
        self._sum += confidence
        if len(self.history) == 1 or confidence > self._max:
            self._max = confidence

    def mean(self) -> float:
        return self._sum / len(self.history) if self.history else 0.0

    def max(self) -> float:
        return self._max if self.history else 0.0
