"""Galton-Watson formula trees and Belief Propagation towards their root.

Each variable draws Poisson(d) clause children; each clause has k-1 variable
children.  Every clause stores the sign of its parent variable as well as
the signs of its children.  Several independent trees can be sampled at once
as a forest, which keeps tree BP vectorised across trees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._num import log1mexp, log_sigmoid, logit, sigmoid
from .errors import InvalidInput, ResourceLimit
from .model import Formula, ModelParams, make_rng

NODE_BUDGET = 1_000_000


@dataclass(frozen=True)
class GWTree:
    k: int
    depth: int
    roots: np.ndarray
    var_depth: np.ndarray
    clause_parent: np.ndarray
    clause_parent_sign: np.ndarray
    clause_children: np.ndarray
    clause_child_sign: np.ndarray

    @property
    def n_vars(self) -> int:
        return int(self.var_depth.size)

    @property
    def n_clauses(self) -> int:
        return int(self.clause_parent.size)


def sample_gw_forest(p: ModelParams, depth: int, count: int, rng=None,
                     node_budget: int = NODE_BUDGET) -> GWTree:
    """``count`` independent trees truncated at variable depth ``depth``."""
    if depth < 0 or count < 1:
        raise InvalidInput("need depth >= 0 and count >= 1")
    rng = make_rng(rng)
    k1 = p.k - 1
    var_depth = [np.zeros(count, np.int64)]
    level = np.arange(count, dtype=np.int64)
    n_vars = count
    parents, psigns, children, csigns = [], [], [], []
    for lev in range(depth):
        kids = rng.poisson(p.d, size=level.size)
        nc = int(kids.sum())
        if nc == 0:
            break
        n_clauses = sum(c.size for c in parents) + nc
        if n_vars + nc * k1 + n_clauses > node_budget:
            raise ResourceLimit(f"tree exceeds node budget {node_budget}")
        parents.append(np.repeat(level, kids))
        psigns.append((2 * rng.integers(0, 2, size=nc) - 1).astype(np.int8))
        ids = n_vars + np.arange(nc * k1, dtype=np.int64).reshape(nc, k1)
        children.append(ids)
        csigns.append((2 * rng.integers(0, 2, size=(nc, k1)) - 1).astype(np.int8))
        n_vars += nc * k1
        level = ids.ravel()
        var_depth.append(np.full(level.size, lev + 1, np.int64))
    cat = lambda xs, shape, dt: np.concatenate(xs) if xs else np.zeros(shape, dt)
    return GWTree(
        k=p.k, depth=depth, roots=np.arange(count, dtype=np.int64),
        var_depth=np.concatenate(var_depth),
        clause_parent=cat(parents, (0,), np.int64),
        clause_parent_sign=cat(psigns, (0,), np.int8),
        clause_children=cat(children, (0, k1), np.int64),
        clause_child_sign=cat(csigns, (0, k1), np.int8),
    )


def sample_gw(p: ModelParams, depth: int, rng=None, node_budget: int = NODE_BUDGET) -> GWTree:
    """A single tree rooted at variable 0."""
    return sample_gw_forest(p, depth, 1, rng, node_budget)


def flatten(tree: GWTree) -> Formula:
    """The tree as a formula over its ``n_vars`` variables (root of tree i is variable i)."""
    if tree.n_clauses == 0:
        return Formula(tree.n_vars, np.zeros((0, tree.k), np.int64), np.zeros((0, tree.k), np.int8), k=tree.k)
    var = np.column_stack([tree.clause_parent, tree.clause_children])
    sign = np.column_stack([tree.clause_parent_sign, tree.clause_child_sign])
    return Formula(tree.n_vars, var, sign, k=tree.k)


def _frontier_values(init, size, rng):
    if init is None:
        return np.full(size, 0.5)
    if np.isscalar(init):
        return np.full(size, float(init))
    samples = np.asarray(getattr(init, "samples", init), dtype=np.float64)
    if samples.size == 0:
        raise InvalidInput("empty leaf-message distribution")
    return samples[rng.integers(0, samples.size, size=size)]


def forest_bp(tree: GWTree, p: ModelParams, init=None, rounds: int | None = None,
              rng=None, leaf_values=None) -> np.ndarray:
    """Root marginals P(root = +1) of every tree in the forest.

    Variables at depth ``h = min(rounds, tree.depth)`` send messages drawn
    i.i.d. from ``init`` (a Population, an array of samples, a constant, or
    ``None`` for 1/2); ``leaf_values`` overrides them with explicit values in
    variable-id order.  Shallower childless variables send 1/2.
    """
    rounds = tree.depth if rounds is None else rounds
    if rounds < 1:
        raise InvalidInput("rounds must be >= 1")
    rng = make_rng(rng)
    h = min(rounds, tree.depth)
    logc = math.log(p.penalty)
    front = np.flatnonzero(tree.var_depth == h)
    vals = (np.asarray(leaf_values, dtype=np.float64) if leaf_values is not None
            else _frontier_values(init, front.size, rng))
    if vals.size != front.size:
        raise InvalidInput(f"expected {front.size} leaf values, got {vals.size}")
    ell = np.zeros(tree.n_vars)
    ell[front] = logit(vals)
    if tree.n_clauses == 0 or h == 0:
        return np.full(tree.roots.size, 0.5)
    cdepth = tree.var_depth[tree.clause_parent]
    J = tree.clause_child_sign.astype(np.float64)
    J0 = tree.clause_parent_sign.astype(np.float64)
    for lev in range(h - 1, -1, -1):
        cl = np.flatnonzero(cdepth == lev)
        if cl.size:
            kids = tree.clause_children[cl]
            logP = log_sigmoid(-J[cl] * ell[kids]).sum(axis=1)
            c2v = -J0[cl] * log1mexp(logc + logP)
            lv = np.flatnonzero(tree.var_depth == lev)
            ell[lv] = 0.0
            np.add.at(ell, tree.clause_parent[cl], c2v)
    return sigmoid(ell[tree.roots])


def tree_bp(tree: GWTree, p: ModelParams, init=None, rounds: int | None = None,
            rng=None, leaf_values=None) -> float:
    """Root marginal of a single tree (first root of a forest)."""
    return float(forest_bp(tree, p, init, rounds, rng, leaf_values)[0])


def root_marginal_samples(p: ModelParams, depth: int, count: int, init=None, rng=None,
                          batch: int = 2000) -> np.ndarray:
    """Root marginals of ``count`` independent trees with ``rounds = depth``."""
    rng = make_rng(rng)
    out = []
    left = count
    while left > 0:
        b = min(batch, left)
        forest = sample_gw_forest(p, depth, b, rng)
        out.append(forest_bp(forest, p, init, depth, rng))
        left -= b
    return np.concatenate(out)
