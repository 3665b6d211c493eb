import math

import numpy as np
import pytest
from helpers import all_assignments, random_tree_formula

from ksatlab.errors import InvalidInput, ResourceLimit
from ksatlab.exact import (assignment_index, boltzmann_vector, eliminate_logZ, eliminate_marginals,
                           exact_logZ, exact_marginals, exact_summary, glauber_kernel, glauber_sample,
                           overlap_statistics, rs_defect)
from ksatlab.model import Formula, ModelParams, gen_random, hamiltonian


def brute(f, p):
    """Independent oracle: plain loop over all assignments."""
    A = all_assignments(f.n)
    w = np.array([math.exp(-p.beta * hamiltonian(f, a)) for a in A])
    Z = w.sum()
    return math.log(Z), ((A > 0) * w[:, None]).sum(axis=0) / Z, A, w / Z


def test_trivial_cases():
    p = ModelParams(3, 1.0, 2.0)
    empty = Formula.from_clauses(6, [], k=3)
    assert exact_logZ(empty, p) == pytest.approx(6 * math.log(2), abs=1e-12)
    f = Formula.from_literals(3, [[1, 2, 3]])
    assert exact_logZ(f, p) == pytest.approx(math.log(7 + math.exp(-2)), abs=1e-13)
    g = gen_random(ModelParams(3, 3.0, 1.0), 10, 5)
    assert exact_logZ(g, ModelParams(3, 1.0, 1e-12)) == pytest.approx(10 * math.log(2), abs=1e-9)


def test_matches_bruteforce(rng):
    for beta in (0.5, 2.0):
        p = ModelParams(3, 4.0, beta)
        f = gen_random(p, 9, rng)
        lz, marg, _, _ = brute(f, p)
        assert exact_logZ(f, p) == pytest.approx(lz, abs=1e-11)
        assert np.allclose(exact_marginals(f, p), marg, atol=1e-12)
        assert eliminate_logZ(f, p) == pytest.approx(lz, abs=1e-11)
        assert np.allclose(eliminate_marginals(f, p), marg, atol=1e-11)


def test_elimination_on_large_tree(rng):
    f = random_tree_formula(rng, max_depth=4, max_n=40, d=1.5)
    p = ModelParams(3, 1.0, 1.0)
    if f.n <= 22:
        assert eliminate_logZ(f, p) == pytest.approx(exact_logZ(f, p), abs=1e-10)
    assert exact_logZ(f, p, method="auto") == pytest.approx(eliminate_logZ(f, p), abs=1e-12)


def test_marginal_hand_sum():
    f = Formula.from_literals(3, [[1, 2]])
    p = ModelParams(2, 1.0, 0.7)
    q = exact_marginals(f, p)
    assert q[0] == pytest.approx(2 / (3 + math.exp(-0.7)), abs=1e-15)
    assert q[2] == pytest.approx(0.5, abs=1e-15)
    q2 = exact_marginals(f.flip_variable(0), p)
    assert q2[0] == pytest.approx(1 - q[0], abs=1e-15)


def test_cap_enforced():
    f = Formula.from_clauses(30, [], k=3)
    with pytest.raises(ResourceLimit):
        exact_logZ(f, ModelParams(3, 1.0, 1.0), cap=24)


def test_logz_decreasing_in_beta(rng):
    for _ in range(5):
        f = gen_random(ModelParams(3, 3.0, 1.0), 10, rng)
        vals = [exact_logZ(f, ModelParams(3, 1.0, b)) for b in (0.5, 1, 2, 4)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_rs_defect():
    p = ModelParams(2, 1.0, 1.0)
    assert rs_defect(Formula.from_clauses(5, [], k=3), p) == 0.0
    f = Formula.from_literals(2, [[1, 2]])
    lz, q, A, mu = brute(f, p)
    pair = np.einsum("s,si,sj->ij", mu, A > 0, A > 0)
    expect = np.abs(pair - np.outer(q, q)).sum() / 4
    d = rs_defect(f, p)
    assert d > 0 and d == pytest.approx(expect, abs=1e-15)
    g = Formula.from_literals(3, [[1, 2], [-2, 3]])
    assert rs_defect(g, p) == pytest.approx(rs_defect(g.permute_clauses([1, 0]), p), abs=1e-15)


def test_overlap_statistics():
    p = ModelParams(3, 1.0, 1.0)
    mean, hist = overlap_statistics(Formula.from_clauses(6, [], k=3), p)
    assert mean == pytest.approx(0.5, abs=1e-14)
    assert hist.sum() == pytest.approx(1.0, abs=1e-12)
    # unique ground state: unit clauses pin every variable
    pin = Formula.from_literals(4, [[1], [-2], [3], [4]])
    mean, hist = overlap_statistics(pin, ModelParams(2, 1.0, 50.0))
    assert mean > 1 - 1e-3


def test_overlap_statistics_bruteforce(rng):
    p = ModelParams(3, 3.0, 1.0)
    f = gen_random(p, 7, rng)
    _, _, A, mu = brute(f, p)
    agree = (A[:, None, :] == A[None, :, :]).sum(axis=2)
    expect = (mu[:, None] * mu[None, :] * agree).sum() / 7
    mean, hist = overlap_statistics(f, p)
    assert mean == pytest.approx(expect, abs=1e-13)
    assert np.allclose(hist, np.bincount(agree.ravel(), weights=np.outer(mu, mu).ravel(), minlength=8))


def test_summary_consistency(rng):
    p = ModelParams(3, 3.0, 1.5)
    f = gen_random(p, 9, rng)
    s = exact_summary(f, p)
    assert s.logZ == pytest.approx(exact_logZ(f, p), abs=1e-12)
    assert s.pair_defect == pytest.approx(rs_defect(f, p), abs=1e-14)
    assert 0 <= s.mean_overlap <= 1


def test_glauber_free_variable():
    f = Formula.from_clauses(1, [], k=1)
    draws = glauber_sample(f, ModelParams(2, 1.0, 1.0), 4000, rng=1)
    frac = (draws[:, 0] > 0).mean()
    assert abs(frac - 0.5) < 3 * math.sqrt(0.25 / draws.shape[0])


def test_glauber_detailed_balance():
    f = Formula.from_literals(2, [[1, 2]])
    p = ModelParams(2, 1.0, 1.3)
    K = glauber_kernel(f, p)
    pi = boltzmann_vector(f, p)
    flow = pi[:, None] * K
    assert np.allclose(flow, flow.T, atol=1e-15)
    assert np.allclose(K.sum(axis=1), 1.0)


def test_glauber_stationary_tv():
    f = Formula.from_literals(4, [[1, -2, 3], [-1, 2, 4]])
    p = ModelParams(3, 1.0, 1.0)
    draws = glauber_sample(f, p, 250_000, rng=2)  # 10^6 single-site updates
    idx = np.array([assignment_index(a) for a in draws])
    emp = np.bincount(idx, minlength=16) / idx.size
    assert 0.5 * np.abs(emp - boltzmann_vector(f, p)).sum() < 0.01


@pytest.mark.slow
def test_glauber_marginals_medium():
    p = ModelParams(3, 1.0, 1.0)
    f = gen_random(p, 10, np.random.default_rng(4))
    draws = glauber_sample(f, p, 100_000, rng=3)
    emp = (draws > 0).mean(axis=0)
    assert np.max(np.abs(emp - exact_marginals(f, p))) < 0.01


def test_glauber_rejects_infinite_beta():
    with pytest.raises(InvalidInput):
        glauber_sample(Formula.from_literals(2, [[1, 2]]), ModelParams(2, 1.0, math.inf), 10)
