"""Batched expansion plumbing.

Rows of a batch are ancestor cache chains left-padded with zero cells and
full token paths right-padded with the pad token.  Backend outputs are split
back into per-child nodes that keep only the cells of their new tokens.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import NodeId, Node, Tree, add_child, as_tokens
from .errors import EmptyBatch, InvalidInput, NotFound, ProtocolViolation


@dataclass(frozen=True)
class BatchInput:
    kv_matrix: np.ndarray      # (rows, L_kv, cache_dim)
    seq_matrix: np.ndarray     # (rows, L_seq)
    kv_valid: np.ndarray       # (rows,)
    seq_valid: np.ndarray      # (rows,)
    row_nodes: tuple[NodeId, ...]
    pad_token: int = 0

    @property
    def n_rows(self) -> int:
        return len(self.row_nodes)

    @property
    def cell_count(self) -> int:
        """Cells occupied by the padded KV matrix (rows x L_kv)."""
        return int(self.kv_matrix.shape[0] * self.kv_matrix.shape[1])

    def row_tokens(self, row: int) -> np.ndarray:
        return self.seq_matrix[row, : self.seq_valid[row]]


@dataclass
class ChildRecord:
    tokens: np.ndarray
    cells: np.ndarray
    confidence: float
    terminated: bool = False
    terminal_reward: float | None = None


@dataclass
class BatchOutput:
    rows: list[list[ChildRecord]] = field(default_factory=list)

    @property
    def n_children(self) -> int:
        return sum(len(r) for r in self.rows)


def materialize_kv_chain(tree: Tree, nid: NodeId) -> np.ndarray:
    segs = [tree[n].kv_segment for n in tree.path(nid)]
    return np.concatenate(segs, axis=0)


def assemble_batch(tree: Tree, queue: Iterable[NodeId],
                   pad_token: int | None = None) -> BatchInput:
    """Stack the queue's cache chains and token paths into padded matrices."""
    rows = list(queue)
    if not rows:
        raise EmptyBatch("cannot assemble a batch from an empty queue")
    pad = tree.pad_token if pad_token is None else pad_token
    chains = [materialize_kv_chain(tree, nid) for nid in rows]
    seqs = [tree[nid].seq for nid in rows]
    kv_valid = np.array([c.shape[0] for c in chains], dtype=np.int64)
    seq_valid = np.array([s.shape[0] for s in seqs], dtype=np.int64)
    l_kv = int(kv_valid.max())
    l_seq = int(seq_valid.max())

    kv = np.zeros((len(rows), l_kv, tree.cache_dim), dtype=np.float64)
    seq = np.full((len(rows), l_seq), pad, dtype=np.int64)
    for i, (c, s) in enumerate(zip(chains, seqs)):
        if c.shape[0]:
            kv[i, l_kv - c.shape[0]:] = c
        seq[i, : s.shape[0]] = s
    for arr in (kv, seq, kv_valid, seq_valid):
        arr.flags.writeable = False
    return BatchInput(kv, seq, kv_valid, seq_valid, tuple(rows), pad)


def departition(batch: BatchInput, row: int) -> tuple[np.ndarray, np.ndarray]:
    """Strip the padding of one row, returning ``(cells, tokens)``."""
    if not 0 <= row < batch.n_rows:
        raise NotFound(f"row {row} out of range for a {batch.n_rows}-row batch")
    l_kv = batch.kv_matrix.shape[1]
    cells = batch.kv_matrix[row, l_kv - batch.kv_valid[row]:]
    tokens = batch.seq_matrix[row, : batch.seq_valid[row]]
    return cells, tokens


def check_padding(batch: BatchInput) -> None:
    """Raise ``ProtocolViolation`` unless padding is pure and interiors are not padding."""
    l_kv = batch.kv_matrix.shape[1]
    l_seq = batch.seq_matrix.shape[1]
    for i in range(batch.n_rows):
        kvv, sv = int(batch.kv_valid[i]), int(batch.seq_valid[i])
        if not (0 <= kvv <= l_kv and 0 < sv <= l_seq):
            raise ProtocolViolation(f"row {i}: valid lengths out of range")
        if np.any(batch.kv_matrix[i, : l_kv - kvv] != 0.0):
            raise ProtocolViolation(f"row {i}: nonzero cell in padded KV position")
        if kvv and np.any(np.all(batch.kv_matrix[i, l_kv - kvv:] == 0.0, axis=1)):
            raise ProtocolViolation(f"row {i}: zero cell inside the valid KV chain")
        if np.any(batch.seq_matrix[i, sv:] != batch.pad_token):
            raise ProtocolViolation(f"row {i}: non-pad token in padded position")
        if np.any(batch.seq_matrix[i, :sv] == batch.pad_token):
            raise ProtocolViolation(f"row {i}: pad token inside the valid sequence")


def partition_outputs(tree: Tree, batch_out: BatchOutput, queue: Sequence[NodeId] | Iterable[NodeId],
                      w: int, mini_step: int | None = None) -> list[Node]:
    """Create ``w`` child nodes per queue row from the backend output.

    Children are returned in (row, child) order.  The backend's termination
    verdict is stashed on each child for ``reward_and_collect``.
    """
    parents = list(queue)
    if len(batch_out.rows) != len(parents):
        raise ProtocolViolation(
            f"backend returned {len(batch_out.rows)} rows for {len(parents)} queued nodes")
    for i, row in enumerate(batch_out.rows):
        if len(row) != w:
            raise ProtocolViolation(f"row {i}: expected {w} children, got {len(row)}")
    created: list[Node] = []
    for parent, row in zip(parents, batch_out.rows):
        for rec in row:
            toks = as_tokens(rec.tokens)
            if mini_step is not None and toks.size > mini_step:
                raise ProtocolViolation(
                    f"child of node {parent} has {toks.size} tokens > mini_step {mini_step}")
            if rec.terminated != (rec.terminal_reward is not None):
                raise ProtocolViolation(
                    "terminal_reward must be present exactly when terminated is set")
            try:
                child = add_child(tree, parent, toks, rec.cells, rec.confidence)
            except InvalidInput as exc:
                raise ProtocolViolation(f"malformed child of node {parent}: {exc}") from exc
            child.term_flag = bool(rec.terminated)
            child.term_reward = rec.terminal_reward
            created.append(child)
    return created


def evict_caches(tree: Tree) -> int:
    """Drop the cache cells of every node whose subtree can no longer grow.

    A node qualifies once neither it nor any descendant is a candidate or an
    unexpanded queue member (terminated leaves, early-stopped nodes and fully
    finished branches).  Token paths are kept.  Returns the number of cells
    freed; repeated calls free nothing new.
    """
    freed = 0
    for nid in tree.take_evictable():
        node = tree.nodes.get(nid)
        if node is None or node.live_below != 0:
            continue
        n = node.kv_segment.shape[0]
        if n:
            node.kv_segment = node.kv_segment[:0]
            tree.live_cells -= n
            freed += n
    return freed
