from __future__ import annotations

import numpy as np
import pytest

from dpts.core import CandidatePool, Config, Tree, add_child, create_root
from dpts.backends.synthetic import SyntheticEnv


def random_cells(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    # strictly nonzero so padding is distinguishable
    return rng.uniform(0.5, 1.5, size=(n, dim))


def random_tree(rng: np.random.Generator, width: int, depth: int, mini_step: int,
                cache_dim: int = 4, n_expand: int | None = None) -> Tree:
    """Grow a tree by expanding random frontier nodes with 1..w children of
    1..mini_step tokens each."""
    tree = Tree(cache_dim=cache_dim, pad_token=0)
    create_root(tree, rng.integers(1, 50, size=int(rng.integers(1, 6))))
    frontier = [tree.root]
    steps = n_expand if n_expand is not None else int(rng.integers(1, 12))
    for _ in range(steps):
        if not frontier:
            break
        nid = frontier.pop(int(rng.integers(len(frontier))))
        if tree[nid].depth >= depth:
            continue
        for _ in range(int(rng.integers(1, width + 1))):
            k = int(rng.integers(1, mini_step + 1))
            child = add_child(tree, nid, rng.integers(1, 1000, size=k),
                              random_cells(rng, k, cache_dim), float(rng.uniform()))
            frontier.append(child.id)
    return tree


@pytest.fixture
def small_env() -> SyntheticEnv:
    return SyntheticEnv(seed=7, width=2, depth=3, term_prob=0.0)


@pytest.fixture
def small_config() -> Config:
    return Config(width=2, depth_max=16, mini_step=3, seed=7)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
