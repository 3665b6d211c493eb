"""Shared instance builders for the test-suite."""

import numpy as np

from ksatlab.model import ModelParams
from ksatlab.tree import flatten, sample_gw


def random_tree_formula(rng, k=3, d=1.2, max_depth=4, max_n=40):
    """A tree-shaped formula with at least one clause and at most ``max_n`` variables."""
    p = ModelParams(k, d, 1.0)
    while True:
        depth = int(rng.integers(1, max_depth + 1))
        t = sample_gw(p, depth, rng)
        if 1 <= t.n_clauses and t.n_vars <= max_n:
            f = flatten(t)
            # relabel variables so the root is not always variable 0
            perm = rng.permutation(f.n)
            from ksatlab.model import Formula
            return Formula(f.n, perm[f.var], f.sign, k=f.k)


def all_assignments(n):
    idx = np.arange(2**n)
    return np.where((idx[:, None] >> np.arange(n)) & 1, 1, -1)
