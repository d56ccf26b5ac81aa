"""Deterministic synthetic reasoning environment with a planted optimum.

Every quantity is a pure function of ``(seed, path)`` where ``path`` is the
tuple of child indices from the root.  Hashing uses the splitmix64 finalizer
as the 64-bit avalanche step::

    mix64(x):  z = x + 0x9E3779B97F4A7C15
               z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
               z = (z ^ (z >> 27)) * 0x94D049BB133111EB
               return z ^ (z >> 31)            (all mod 2**64)

    combine(h, v) = mix64(h ^ mix64(v))
    mix(v1, ..., vk) = combine(...combine(combine(0, v1), v2)..., vk)
    unit(h) = (h >> 11) / 2**53                # in [0, 1)

Rules (``d`` is the depth of the child, ``path`` its full index tuple):

* golden index at depth d:  ``g_d = mix(seed, GOLD, d) mod width``
* path hash:                ``H(path) = mix(seed, PATH, *path)``
* confidence: ``golden_base + golden_span*u`` if the whole path is golden,
  otherwise ``other_base + other_span*u``, with ``u = unit(combine(H, CONF))``
* termination: ``d == depth`` always, else ``unit(combine(H, TERM)) < term_prob``
* terminal reward: (length of the golden prefix of ``path``) / depth
* token j: ``1 + idx + width * (combine(combine(H, TOK), j) mod 997)`` so the
  child index is recoverable as ``(token - 1) mod width``
* cache cell (j, c): ``0.5 + unit(combine(combine(H, CELL), j*cache_dim + c))``
  which is never the zero padding cell.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import InvalidConfig, LimitExceeded, ProtocolViolation
from ..streamline import BatchInput, BatchOutput, ChildRecord, check_padding

MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_C1 = 0xBF58476D1CE4E5B9
_C2 = 0x94D049BB133111EB

SALT_GOLD = 0x60D
SALT_PATH = 0x9A7
SALT_CONF = 0xC0F
SALT_TERM = 0x7E3
SALT_TOK = 0x70C
SALT_CELL = 0xCE1
SALT_PROMPT = 0x9F0

TOKEN_SPREAD = 997
BRUTE_FORCE_LIMIT = 10 ** 6


def mix64(x: int) -> int:
    z = (x + _GAMMA) & MASK
    z = ((z ^ (z >> 30)) * _C1) & MASK
    z = ((z ^ (z >> 27)) * _C2) & MASK
    return z ^ (z >> 31)


def combine(h: int, v: int) -> int:
    return mix64(h ^ mix64(v & MASK))


def mix(*values: int) -> int:
    h = 0
    for v in values:
        h = combine(h, v)
    return h


def unit(h: int) -> float:
    return (h >> 11) * (1.0 / (1 << 53))


_U = np.uint64


def mix64_np(x: np.ndarray) -> np.ndarray:
    # arrays wrap silently; 0-d inputs would warn, so callers pass arrays
    z = x + _U(_GAMMA)
    z = (z ^ (z >> _U(30))) * _U(_C1)
    z = (z ^ (z >> _U(27))) * _U(_C2)
    return z ^ (z >> _U(31))


def combine_np(h: np.ndarray, v: np.ndarray | int) -> np.ndarray:
    mv = _U(mix64(int(v))) if np.ndim(v) == 0 else mix64_np(np.asarray(v, dtype=np.uint64))
    return mix64_np(np.atleast_1d(np.asarray(h, dtype=np.uint64)) ^ mv)


def unit_np(h: np.ndarray) -> np.ndarray:
    return (h >> _U(11)).astype(np.float64) * (1.0 / (1 << 53))


@dataclass
class SyntheticEnv:
    """Synthetic tree with enumerable ground truth standing in for LLM + reward model."""

    seed: int = 0
    width: int = 4
    depth: int = 8
    term_prob: float = 0.05
    golden_base: float = 0.75
    golden_span: float = 0.2
    other_base: float = 0.1
    other_span: float = 0.6
    prompt_len: int = 4
    cache_dim: int = 4
    pad_token: int = 0

    def __post_init__(self) -> None:
        if self.width < 1 or self.depth < 1:
            raise InvalidConfig("env width and depth must be positive")
        if not 0.0 <= self.term_prob < 1.0:
            raise InvalidConfig("term_prob must lie in [0, 1)")
        for base, span in ((self.golden_base, self.golden_span),
                           (self.other_base, self.other_span)):
            if base < 0 or span < 0 or base + span > 1.0:
                raise InvalidConfig("confidence ranges must lie inside [0, 1]")
        if self.prompt_len < 1:
            raise InvalidConfig("prompt_len must be positive")
        self.seed &= MASK
        self.golden = tuple(mix(self.seed, SALT_GOLD, d) % self.width
                            for d in range(1, self.depth + 1))
        self._golden_arr = np.array((0,) + self.golden, dtype=np.int64)
        self._prompt = self._make_prompt()

    # -- scalar rules -------------------------------------------------------
    def _make_prompt(self) -> np.ndarray:
        toks = []
        for i in range(self.prompt_len):
            t = 1 + mix(self.seed, SALT_PROMPT, i) % TOKEN_SPREAD
            if t == self.pad_token:
                t += 1
            toks.append(t)
        return np.array(toks, dtype=np.int64)

    def prompt(self) -> np.ndarray:
        return self._prompt.copy()

    def path_hash(self, path: tuple[int, ...] | list[int]) -> int:
        return mix(self.seed, SALT_PATH, *path)

    def golden_prefix_len(self, path) -> int:
        n = 0
        for d, idx in enumerate(path):
            if idx != self.golden[d]:
                break
            n += 1
        return n

    def confidence(self, path) -> float:
        u = unit(combine(self.path_hash(path), SALT_CONF))
        if self.golden_prefix_len(path) == len(path):
            return self.golden_base + self.golden_span * u
        return self.other_base + self.other_span * u

    def is_terminal(self, path) -> bool:
        if len(path) >= self.depth:
            return True
        return unit(combine(self.path_hash(path), SALT_TERM)) < self.term_prob

    def reward(self, path) -> float:
        return self.golden_prefix_len(path) / self.depth

    def describe(self) -> dict:
        d = asdict(self)
        d["kind"] = "synthetic"
        return d

    # -- batch expansion ----------------------------------------------------
    def decode_path(self, tokens: np.ndarray, mini_step: int) -> tuple[int, ...]:
        p = self.prompt_len
        if tokens.shape[0] < p or not np.array_equal(tokens[:p], self._prompt):
            raise ProtocolViolation("row does not start with the environment prompt")
        gen = tokens[p:]
        if gen.shape[0] % mini_step:
            raise ProtocolViolation(
                f"generated length {gen.shape[0]} is not a multiple of mini_step {mini_step}")
        return tuple(int(x) for x in (gen[::mini_step] - 1) % self.width)

    def expand(self, batch: BatchInput, w: int, mini_step: int) -> BatchOutput:
        return synthetic_expand(self, batch, w, mini_step)

    def brute_force_best(self) -> tuple[tuple[int, ...], float]:
        return brute_force_best(self)


def synthetic_expand(env: SyntheticEnv, batch: BatchInput, w: int, mini_step: int) -> BatchOutput:
    if w != env.width:
        raise InvalidConfig(f"engine width {w} != environment width {env.width}")
    if batch.pad_token != env.pad_token:
        raise InvalidConfig("batch pad token differs from the environment's")
    if batch.kv_matrix.shape[2] != env.cache_dim:
        raise InvalidConfig("batch cache_dim differs from the environment's")
    check_padding(batch)

    n = batch.n_rows
    hashes = np.empty(n, dtype=np.uint64)
    on_golden = np.empty(n, dtype=bool)
    gp_len = np.empty(n, dtype=np.int64)
    depth = np.empty(n, dtype=np.int64)
    for i in range(n):
        path = env.decode_path(batch.row_tokens(i), mini_step)
        if len(path) >= env.depth:
            raise ProtocolViolation(f"row {i} is already at terminal depth {env.depth}")
        if batch.kv_valid[i] != len(path) * mini_step:
            raise ProtocolViolation(f"row {i}: cache chain length does not match its path")
        hashes[i] = env.path_hash(path)
        g = env.golden_prefix_len(path)
        on_golden[i] = g == len(path)
        gp_len[i] = g
        depth[i] = len(path) + 1

    idx = np.arange(w, dtype=np.uint64)
    hc = combine_np(hashes[:, None], idx[None, :])                    # (n, w)
    u_conf = unit_np(combine_np(hc, SALT_CONF))
    u_term = unit_np(combine_np(hc, SALT_TERM))
    gold_here = env._golden_arr[depth][:, None] == np.arange(w)[None, :]
    child_golden = on_golden[:, None] & gold_here
    conf = np.where(child_golden, env.golden_base + env.golden_span * u_conf,
                    env.other_base + env.other_span * u_conf)
    term = (depth[:, None] >= env.depth) | (u_term < env.term_prob)
    reward = (gp_len[:, None] + child_golden) / env.depth

    pos = np.arange(mini_step, dtype=np.uint64)
    tok_h = combine_np(combine_np(hc, SALT_TOK)[..., None], pos)      # (n, w, m)
    tokens = 1 + np.arange(w, dtype=np.int64)[None, :, None] + \
        w * (tok_h % _U(TOKEN_SPREAD)).astype(np.int64)
    tokens = np.where(tokens == env.pad_token, tokens + w, tokens)
    cpos = np.arange(mini_step * env.cache_dim, dtype=np.uint64)
    cell_h = combine_np(combine_np(hc, SALT_CELL)[..., None], cpos)
    cells = (0.5 + unit_np(cell_h)).reshape(n, w, mini_step, env.cache_dim)

    rows = []
    for i in range(n):
        row = []
        for j in range(w):
            t = bool(term[i, j])
            row.append(ChildRecord(tokens=tokens[i, j], cells=cells[i, j],
                                   confidence=float(conf[i, j]), terminated=t,
                                   terminal_reward=float(reward[i, j]) if t else None))
        rows.append(row)
    return BatchOutput(rows)


def brute_force_best(env: SyntheticEnv) -> tuple[tuple[int, ...], float]:
    """Enumerate every root-to-terminal path; return the lexicographically
    smallest path achieving the maximum reward."""
    if env.width ** env.depth > BRUTE_FORCE_LIMIT:
        raise LimitExceeded(
            f"{env.width}^{env.depth} leaves exceed the enumeration limit {BRUTE_FORCE_LIMIT}")
    w = env.width
    hashes = np.array([env.path_hash(())], dtype=np.uint64)
    golden = np.array([True])
    gp = np.array([0], dtype=np.int64)
    # per level: index of the parent among the previous level's survivors,
    # the child index, and the positions of this level's survivors
    levels: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
    best_reward = -1.0
    best_path: tuple[int, ...] = ()

    def trace_back(level: int, pos: int) -> tuple[int, ...]:
        out = []
        while level >= 0:
            parent, child, _ = levels[level]
            out.append(int(child[pos]))
            if level:
                pos = int(levels[level - 1][2][parent[pos]])
            level -= 1
        return tuple(reversed(out))

    for d in range(1, env.depth + 1):
        parent = np.repeat(np.arange(hashes.size), w)
        child = np.tile(np.arange(w), hashes.size)
        hc = combine_np(hashes[parent], child.astype(np.uint64))
        on = golden[parent] & (child == env.golden[d - 1])
        gpc = gp[parent] + on
        if d == env.depth:
            term = np.ones(hc.size, dtype=bool)
        else:
            term = unit_np(combine_np(hc, SALT_TERM)) < env.term_prob
        keep = np.flatnonzero(~term)
        levels.append((parent, child, keep))
        if term.any():
            rewards = gpc / env.depth
            rmax = float(rewards[term].max())
            first = int(np.flatnonzero(term & (rewards == rmax))[0])
            cand = trace_back(d - 1, first)
            if rmax > best_reward or (rmax == best_reward and cand < best_path):
                best_reward, best_path = rmax, cand
        hashes, golden, gp = hc[keep], on[keep], gpc[keep]
        if hashes.size == 0:
            break
    return best_path, best_reward
