import math

import numpy as np
import pytest
from helpers import all_assignments, random_tree_formula

from ksatlab.bp import (bethe_free_energy, bp_marginal, bp_marginals, bp_step, clause_update,
                        init_messages, pseudo_message_gap, run_bp)
from ksatlab.errors import ResourceLimit
from ksatlab.exact import exact_logZ, exact_marginals
from ksatlab.model import Formula, ModelParams, factor_graph_diameter, gen_random, hamiltonian


def single_clause(k, n=None, signs=None):
    n = k if n is None else n
    signs = [1] * k if signs is None else signs
    return Formula.from_clauses(n, [(tuple(range(k)), tuple(signs))])


def test_init_messages_all_half(rng):
    f = gen_random(ModelParams(3, 2.0, 1.0), 20, rng)
    m = init_messages(f)
    assert np.all(m.c2v == 0) and np.all(m.v2c == 0) and m.t == 0
    assert np.all(m.c2v_prob() == 0.5) and np.all(m.v2c_prob() == 0.5)
    m2 = init_messages(f)
    assert np.array_equal(m.c2v, m2.c2v) and np.array_equal(m.v2c, m2.v2c)


@pytest.mark.parametrize("k,beta", [(2, 0.5), (3, 1.0), (5, 4.0)])
def test_single_clause_one_step(k, beta):
    f = single_clause(k, signs=[1, -1] * (k // 2) + [1] * (k % 2))
    p = ModelParams(k, 1.0, beta)
    m1 = bp_step(f, p, init_messages(f))
    c = 1 - math.exp(-beta)
    q = c * 2.0 ** (1 - k)
    violate = (1 - q) / (2 - q)
    # direct summation over the 2^(k-1) configurations of the other variables
    others = all_assignments(k - 1)
    w_false = np.mean([1 - c * all(s != f.sign[0, j + 1] for j, s in enumerate(o)) for o in others])
    assert violate == pytest.approx(w_false / (1 + w_false), abs=1e-15)
    for j in range(k):
        # probability of the value that violates slot j's literal
        prob_plus = 1 / (1 + math.exp(-m1.c2v[0, j]))
        pv = prob_plus if f.sign[0, j] < 0 else 1 - prob_plus
        assert pv == pytest.approx(violate, abs=1e-14)
    assert np.all(m1.v2c == 0)
    m2 = bp_step(f, p, m1)
    assert np.array_equal(m1.c2v, m2.c2v) and np.array_equal(m1.v2c, m2.v2c)
    assert m2.t == 2


def test_run_bp_empty_and_single():
    empty = Formula.from_clauses(4, [], k=3)
    _, it, conv = run_bp(empty, ModelParams(3, 1.0, 1.0))
    assert conv and it == 1
    _, it, conv = run_bp(single_clause(3), ModelParams(3, 1.0, 1.0), tol=1e-12)
    assert conv and it <= 3


def test_tree_convergence_within_diameter(rng):
    p = ModelParams(3, 1.0, 1.5)
    for _ in range(20):
        f = random_tree_formula(rng)
        _, it, conv = run_bp(f, p, t_max=factor_graph_diameter(f) + 2, tol=1e-12)
        assert conv


def test_marginals_basic():
    f = Formula.from_literals(3, [[1, 2]])
    p = ModelParams(2, 1.0, 1.3)
    msgs, _, _ = run_bp(f, p)
    assert bp_marginal(f, p, msgs, 2) == 0.5
    brute = 2 / (3 + math.exp(-1.3))
    assert bp_marginal(f, p, msgs, 0) == pytest.approx(brute, abs=1e-14)
    flipped = f.flip_variable(0)
    m2, _, _ = run_bp(flipped, p)
    assert bp_marginal(flipped, p, m2, 0) == pytest.approx(1 - brute, abs=1e-14)


def test_bethe_empty_and_single():
    p = ModelParams(3, 1.0, 2.0)
    empty = Formula.from_clauses(5, [], k=3)
    assert bethe_free_energy(empty, p, init_messages(empty)) == pytest.approx(5 * math.log(2))
    for k in (2, 3, 5):
        for beta in (0.5, 1.0, 4.0):
            f = single_clause(k, n=k + 2)
            q = ModelParams(k, 1.0, beta)
            msgs, _, _ = run_bp(f, q)
            expect = math.log(2**k - 1 + math.exp(-beta)) + 2 * math.log(2)
            assert bethe_free_energy(f, q, msgs) == pytest.approx(expect, abs=1e-9)


def test_tree_exactness(rng):
    p = ModelParams(3, 1.0, 1.7)
    for _ in range(15):
        f = random_tree_formula(rng, max_n=18)
        msgs, _, _ = run_bp(f, p, t_max=factor_graph_diameter(f) + 2, tol=1e-13)
        assert np.max(np.abs(bp_marginals(f, p, msgs) - exact_marginals(f, p))) < 1e-9
        assert abs(bethe_free_energy(f, p, msgs) - exact_logZ(f, p)) < 1e-9


def test_gauge_covariance(rng):
    p = ModelParams(3, 2.0, 1.0)
    f = gen_random(p, 15, rng)
    msgs, _, _ = run_bp(f, p, t_max=200)
    x = int(f.var[0, 0])
    g = f.flip_variable(x)
    m2, _, _ = run_bp(g, p, t_max=200)
    q1 = bp_marginals(f, p, msgs)
    q2 = bp_marginals(g, p, m2)
    assert q2[x] == pytest.approx(1 - q1[x], abs=1e-12)
    assert bethe_free_energy(g, p, m2) == pytest.approx(bethe_free_energy(f, p, msgs), abs=1e-12)


def test_jacobi_dependence(rng):
    """The clause update reads only the previous variable-to-clause messages."""
    p = ModelParams(3, 2.0, 1.0)
    f = gen_random(p, 15, rng)
    m = init_messages(f)
    m.v2c = rng.normal(size=m.v2c.shape)
    m.c2v = rng.normal(size=m.c2v.shape)
    step = bp_step(f, p, m)
    assert np.array_equal(step.c2v, clause_update(f, p, m.v2c))
    other = m.copy()
    other.c2v = rng.normal(size=m.c2v.shape)
    assert np.array_equal(bp_step(f, p, other).c2v, step.c2v)


def test_infinite_beta_runs():
    f = Formula.from_literals(5, [[1, 2, 3], [-1, 4, 5]])
    p = ModelParams(3, 1.0, math.inf)
    msgs, _, conv = run_bp(f, p)
    assert conv
    sat = [a for a in all_assignments(5) if hamiltonian(f, a) == 0]
    for x in range(5):
        expect = np.mean([a[x] == 1 for a in sat])
        assert bp_marginal(f, p, msgs, x) == pytest.approx(expect, abs=1e-12)


def test_pseudo_message_gap():
    p = ModelParams(3, 1.0, 1.0)
    assert pseudo_message_gap(Formula.from_clauses(4, [], k=3), p, 5) == 0.0
    with pytest.raises(ResourceLimit):
        pseudo_message_gap(gen_random(ModelParams(3, 1.0, 1.0), 30, 1), p, 5)


def test_pseudo_message_gap_single_clause():
    """On one clause the cavity messages coincide with the BP messages after one step."""
    f = single_clause(3)
    assert pseudo_message_gap(f, ModelParams(3, 1.0, 2.0), 1) == pytest.approx(0.0, abs=1e-15)


def test_pseudo_message_gap_on_tree_shrinks(rng):
    p = ModelParams(3, 1.0, 1.0)
    f = random_tree_formula(rng, max_n=12)
    late = pseudo_message_gap(f, p, 20)
    early = pseudo_message_gap(f, p, 1)
    assert late <= early + 1e-15
    assert late < 1e-9


def test_pseudo_message_gap_random_instance():
    p = ModelParams(3, 1.0, 1.0)
    f = gen_random(p, 12, np.random.default_rng(11))
    g20 = pseudo_message_gap(f, p, 20)
    g5 = pseudo_message_gap(f, p, 5)
    assert 0.0 <= g20 < 1.0 and 0.0 <= g5 < 1.0
