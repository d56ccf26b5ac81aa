import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpts.backends.synthetic import (SyntheticEnv, brute_force_best, combine, combine_np, mix,
                                     mix64, mix64_np, unit, SALT_GOLD)
from dpts.core import Tree, add_child, create_root
from dpts.errors import InvalidConfig, LimitExceeded, ProtocolViolation
from dpts.streamline import BatchInput, assemble_batch, partition_outputs


def grow(env, mini_step, paths):
    """Tree holding every prefix of ``paths``; returns it and a path->id map."""
    tree = Tree(cache_dim=env.cache_dim, pad_token=env.pad_token)
    create_root(tree, env.prompt())
    ids = {(): tree.root}
    for path in paths:
        for d in range(1, len(path) + 1):
            pre = path[:d]
            if pre in ids:
                continue
            batch = assemble_batch(tree, [ids[pre[:-1]]])
            out = env.expand(batch, env.width, mini_step)
            kids = partition_outputs(tree, out, [ids[pre[:-1]]], env.width, mini_step)
            for j, k in enumerate(kids):
                ids[pre[:-1] + (j,)] = k.id
    return tree, ids


def naive_best(env):
    best = (-1.0, ())

    def rec(path):
        nonlocal best
        if path and env.is_terminal(path):
            r = env.reward(path)
            if r > best[0] or (r == best[0] and path < best[1]):
                best = (r, path)
            return
        for i in range(env.width):
            rec(path + (i,))
    rec(())
    return best[1], best[0]


def test_mix_reference_values():
    # splitmix64 of 0 is a published constant
    assert mix64(0) == 0xE220A8397B1DCDAF
    xs = np.array([0, 1, 2 ** 63, 2 ** 64 - 1], dtype=np.uint64)
    assert [int(v) for v in mix64_np(xs)] == [mix64(int(x)) for x in xs]
    assert int(combine_np(np.array([5], dtype=np.uint64), 9)[0]) == combine(5, 9)
    assert 0.0 <= unit(mix(1, 2, 3)) < 1.0


def test_expand_is_deterministic_and_follows_rules():
    env = SyntheticEnv(seed=3, width=3, depth=4, term_prob=0.3)
    tree, ids = grow(env, 2, [(0, 1), (2,)])
    batch = assemble_batch(tree, [ids[(0, 1)], ids[(2,)]])
    a = env.expand(batch, 3, 2)
    b = env.expand(batch, 3, 2)
    for ra, rb, base in zip(a.rows, b.rows, [(0, 1), (2,)]):
        for j, (x, y) in enumerate(zip(ra, rb)):
            assert np.array_equal(x.tokens, y.tokens) and np.array_equal(x.cells, y.cells)
            path = base + (j,)
            assert x.confidence == pytest.approx(env.confidence(path), abs=1e-15)
            assert x.terminated == env.is_terminal(path)
            if x.terminated:
                assert x.terminal_reward == env.reward(path)
            assert np.all(x.cells >= 0.5) and ((x.tokens - 1) % 3 == j).all()


def test_golden_child_confidence_floor():
    env = SyntheticEnv(seed=11, width=4, depth=6, term_prob=0.0)
    g = env.golden
    for d in range(1, 7):
        assert env.confidence(g[:d]) >= 0.75
    assert env.golden[0] == mix(env.seed, SALT_GOLD, 1) % 4


def test_padding_violation_rejected():
    env = SyntheticEnv(seed=1, width=2, depth=4)
    tree, ids = grow(env, 2, [(0, 0), (1,)])
    batch = assemble_batch(tree, [ids[(0, 0)], ids[(1,)]])
    kv = batch.kv_matrix.copy()
    kv[1, 0, 0] = 1.0
    bad = BatchInput(kv, batch.seq_matrix, batch.kv_valid, batch.seq_valid, batch.row_nodes, 0)
    with pytest.raises(ProtocolViolation):
        env.expand(bad, 2, 2)


def test_width_mismatch():
    env = SyntheticEnv(seed=1, width=2, depth=4)
    tree, _ = grow(env, 2, [])
    with pytest.raises(InvalidConfig):
        env.expand(assemble_batch(tree, [0]), 3, 2)


def test_terminal_rows_rejected():
    env = SyntheticEnv(seed=1, width=2, depth=1)
    tree, ids = grow(env, 2, [(0,)])
    with pytest.raises(ProtocolViolation):
        env.expand(assemble_batch(tree, [ids[(0,)]]), 2, 2)


def test_brute_force_examples():
    for seed in range(5):
        env = SyntheticEnv(seed=seed, width=3, depth=4, term_prob=0.0)
        assert brute_force_best(env) == (env.golden, 1.0)
    env = SyntheticEnv(seed=9, width=2, depth=1)
    r0, r1 = env.reward((0,)), env.reward((1,))
    assert sorted([r0, r1]) == [0.0, 1.0]
    assert brute_force_best(env) == ((env.golden[0],), 1.0)
    with pytest.raises(LimitExceeded):
        brute_force_best(SyntheticEnv(width=4, depth=12))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 64 - 1), st.integers(1, 4), st.integers(1, 5),
       st.floats(0.0, 0.6))
def test_brute_force_matches_recursive_enumeration(seed, w, d, tp):
    env = SyntheticEnv(seed=seed, width=w, depth=d, term_prob=tp)
    assert brute_force_best(env) == naive_best(env)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 64 - 1), st.integers(2, 5), st.integers(1, 8))
def test_golden_child_is_strict_max(seed, w, d):
    env = SyntheticEnv(seed=seed, width=w, depth=d, term_prob=0.0)
    g = env.golden
    for k in range(d):
        sib = [env.confidence(g[:k] + (i,)) for i in range(w)]
        assert max(range(w), key=sib.__getitem__) == g[k]
        assert all(s < sib[g[k]] for i, s in enumerate(sib) if i != g[k])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 64 - 1), st.lists(st.integers(0, 3), max_size=6))
def test_extending_golden_prefix_never_lowers_reward(seed, tail):
    env = SyntheticEnv(seed=seed, width=4, depth=6)
    for k in range(6):
        base = env.golden[:k]
        longer = env.golden[:k + 1]
        rest = tuple(tail)[: 6 - k - 1]
        assert env.reward(longer + rest) >= env.reward(base + (((env.golden[k] + 1) % 4),) + rest)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_batch_composition_does_not_change_rows(seed):
    env = SyntheticEnv(seed=seed, width=3, depth=5, term_prob=0.0)
    tree, ids = grow(env, 2, [(0, 1, 2), (2, 2), (1,)])
    nodes = [ids[(0, 1, 2)], ids[(2, 2)], ids[(1,)]]
    together = env.expand(assemble_batch(tree, nodes), 3, 2)
    for i, nid in enumerate(nodes):
        alone = env.expand(assemble_batch(tree, [nid]), 3, 2).rows[0]
        for x, y in zip(together.rows[i], alone):
            assert np.array_equal(x.tokens, y.tokens) and np.array_equal(x.cells, y.cells)
            assert x.confidence == y.confidence and x.terminated == y.terminated


def test_env_validation():
    with pytest.raises(InvalidConfig):
        SyntheticEnv(term_prob=1.0)
    with pytest.raises(InvalidConfig):
        SyntheticEnv(golden_base=0.9, golden_span=0.2)
