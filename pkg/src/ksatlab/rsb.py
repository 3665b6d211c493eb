"""Bethe functional, the 1-RSB interpolation bound and stable-set diagnostics.

Monte Carlo estimates come with a standard error.  Inputs are message
laws given as a Population, reflected by independent fair signs before use
(so E[mu] = 1/2 exactly, which the control variates below rely on).
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp
from scipy.stats import binom, poisson

from ._num import LN2, log1mexp, log_sigmoid, poisson_cutoff
from .density import _as_logodds, compound_sums
from .errors import InvalidInput
from .model import Formula, ModelParams, as_assignment, make_rng

DIRECT_BUDGET = 50_000_000


@dataclass(frozen=True)
class McEstimate:
    value: float
    stderr: float
    samples: int
    corrected: float | None = None

    def as_dict(self) -> dict:
        out = {"estimate": self.value, "stderr": self.stderr, "samples": self.samples}
        if self.corrected is not None:
            out["corrected"] = self.corrected
        return out


def _mean_se(x: np.ndarray):
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        return float(x.mean()), 0.0
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def _log_mu_draws(ell, shape, rng):
    """log of reflected draws: log sigmoid(J * ell) with fair signs J."""
    idx = rng.integers(0, ell.size, size=shape)
    flip = rng.integers(0, 2, size=shape).astype(bool)
    v = ell[idx]
    return log_sigmoid(np.where(flip, -v, v))


# ------------------------------------------------------------ Bethe functional

def bethe_delta_half_oracle(p: ModelParams) -> float:
    """Bethe functional at the point mass 1/2 by a truncated double Poisson sum.

    E[log(q^g+ + q^g-)] - (d(k-1)/k) log(1 - c 2^-k), q = 1 - c 2^(1-k).
    """
    k, d, c = p.k, p.d, p.penalty
    lq = math.log1p(-c * 2.0 ** (1 - k))
    return double_poisson_log_sum(d / 2.0, lq) - d * (k - 1) / k * math.log1p(-c * 2.0 ** -k)


def double_poisson_log_sum(lam: float, lq: float) -> float:
    """E[log(e^(lq a) + e^(lq b))] for independent a, b ~ Poisson(lam)."""
    lo = max(0, int(lam - 12.0 * math.sqrt(lam) - 40.0))
    hi = poisson_cutoff(lam, 1e-17)
    a = np.arange(lo, hi + 1)
    w = poisson.pmf(a, lam)
    w = w / w.sum()
    # log(q^a + q^b) = lq*min(a,b) + log(1 + q^|a-b|)
    A, B = np.meshgrid(a, a, indexing="ij")
    vals = lq * np.minimum(A, B) + np.log1p(np.exp(lq * np.abs(A - B)))
    return float(w @ vals @ w)


def _clause_term_cv(ell, m, logc, c, count, rng, chunk=1 << 20):
    """E[log(1 - c prod_m mu)] with control variate -c prod mu (known mean -c 2^-m)."""
    vals = []
    for lo in range(0, count, chunk):
        n = min(chunk, count - lo)
        lp = _log_mu_draws(ell, (n, m), rng).sum(axis=1)
        vals.append(log1mexp(logc + lp) + c * np.exp(lp))
    z = np.concatenate(vals)
    mean, se = _mean_se(z)
    return mean - c * 2.0 ** -m, se


def _bethe_direct(ell, p, samples, rng):
    k, d, c = p.k, p.d, p.penalty
    logc = math.log(c)
    g = rng.poisson(d / 2.0, size=2 * samples)
    S, _ = compound_sums([ell], g, k - 1, logc, rng, mode="direct", reflect=True)
    S = S[0]
    first = np.logaddexp(S[:samples], S[samples:])
    lp = _log_mu_draws(ell, (samples, k), rng).sum(axis=1)
    second = log1mexp(logc + lp)
    return first - d * (k - 1) / k * second


def bethe_functional(pop, p: ModelParams, samples: int = 100_000, rng=None, method: str = "auto",
                     pool_size=None, clause_samples: int | None = None) -> McEstimate:
    """Monte Carlo estimate of the Bethe functional of the message law ``pop``.

    ``direct`` averages the defining expression sample by sample.  ``split``
    uses log(e^S+ + e^S-) = (S+ + S-)/2 + log 2cosh((S+ - S-)/2): the first
    part has mean (d/2) E[X_(k-1)] by Wald's identity, and the clause means
    E[X_m] = E[log(1 - c prod_m mu)] are estimated with a control variate.
    ``auto`` picks ``direct`` when it needs fewer than about 5e7 draws.
    """
    if not p.finite:
        raise InvalidInput("the Bethe functional needs finite beta")
    if samples < 1:
        raise InvalidInput("samples must be >= 1")
    rng = make_rng(rng)
    ell = _as_logodds(pop)
    k, d, c = p.k, p.d, p.penalty
    if method == "auto":
        method = "direct" if samples * d * (k - 1) <= DIRECT_BUDGET else "split"
    if method == "direct":
        mean, se = _mean_se(_bethe_direct(ell, p, samples, rng))
        return McEstimate(mean, se, samples)
    if method != "split":
        raise InvalidInput(f"unknown method {method!r}")
    logc = math.log(c)
    nc = clause_samples or max(samples, 1_000_000)
    x1, s1 = _clause_term_cv(ell, k - 1, logc, c, nc, rng)
    x2, s2 = _clause_term_cv(ell, k, logc, c, nc, rng)
    g = rng.poisson(d / 2.0, size=2 * samples)
    S, _ = compound_sums([ell], g, k - 1, logc, rng, mode="auto", pool_size=pool_size, reflect=True)
    D = S[0][:samples] - S[0][samples:]
    t, st = _mean_se(np.logaddexp(D / 2.0, -D / 2.0))
    a, b = d / 2.0, d * (k - 1) / k
    value = a * x1 - b * x2 + t
    se = math.sqrt((a * s1) ** 2 + (b * s2) ** 2 + st**2)
    return McEstimate(value, se, samples)


# -------------------------------------------------------- interpolation bound

ATOMIC = "atomic"


def _log_clause_moment_atomic(p: ModelParams, y: float) -> float:
    """log E[(1 - c prod_k mu)^y] for mu fair on {0,1}: log(1 - 2^-k + 2^-k e^(-beta y))."""
    return math.log1p(-(2.0 ** -p.k) * (-math.expm1(-p.beta * y)))


def _atomic_inner(gp, gm, p: ModelParams, y: float):
    """log E[(e^(-beta B+) + e^(-beta B-))^y | gamma], B(+/-) ~ Binomial(gamma(+/-), 2^(1-k))."""
    w = 2.0 ** (1 - p.k)
    out = np.empty(gp.size)
    cache = {}

    def table(g):
        if g not in cache:
            mu = g * w
            hi = min(g, int(mu + 12.0 * math.sqrt(mu) + 40.0))
            a = np.arange(0, hi + 1)
            cache[g] = (a, binom.logpmf(a, g, w))
        return cache[g]

    for i, (a_, b_) in enumerate(zip(gp, gm)):
        a, la = table(int(a_))
        b, lb = table(int(b_))
        A, B = np.meshgrid(a, b, indexing="ij")
        inner = y * np.logaddexp(-p.beta * A, -p.beta * B)
        out[i] = logsumexp(inner + la[:, None] + lb[None, :])
    return out


def _controlled_mean(values, gp, gm, lam):
    """Mean of ``values`` with quadratic Poisson control variates in (gamma+, gamma-)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 12:
        return _mean_se(v)
    a = gp - lam
    b = gm - lam
    X = np.column_stack([a, b, a * a - lam, b * b - lam, a * b])
    X = X / np.maximum(X.std(axis=0), 1e-300)
    Xc = X - 0.0  # every column has known mean zero
    coef, *_ = np.linalg.lstsq(np.column_stack([np.ones(v.size), Xc]), v, rcond=None)
    resid = v - Xc @ coef[1:]
    mean = float(resid.mean())
    se = float(resid.std(ddof=X.shape[1] + 1) / math.sqrt(v.size))
    return mean, se


def interpolation_bound(pi, y: float, p: ModelParams, samples: int = 20_000, rng=None,
                        inner: int = 64, gammas=None) -> McEstimate:
    """Right-hand side of the 1-RSB interpolation bound divided by y.

    ``pi`` is ``"atomic"`` for (delta_0 + delta_1)/2, where the inner
    expectation is an exact conditional binomial double sum and the clause
    term is closed-form; otherwise a Population, in which case the inner
    expectation is estimated from ``inner`` replicas and a jackknife-corrected
    value is reported alongside.  ``gammas`` may supply the outer
    (gamma+, gamma-) draws to share them across several y.
    """
    if not 0.0 < y <= 1.0:
        raise InvalidInput("y must lie in (0, 1]")
    if not p.finite:
        raise InvalidInput("needs finite beta")
    rng = make_rng(rng)
    k, d, c = p.k, p.d, p.penalty
    lam = d / 2.0
    if gammas is None:
        gp = rng.poisson(lam, size=samples)
        gm = rng.poisson(lam, size=samples)
    else:
        gp, gm = (np.asarray(g, dtype=np.int64) for g in gammas)
        samples = gp.size
    coef = d * (k - 1) / k

    if isinstance(pi, str):
        if pi != ATOMIC:
            raise InvalidInput(f"unknown message law {pi!r}")
        vals = _atomic_inner(gp, gm, p, y)
        mean, se = _controlled_mean(vals, gp, gm, lam)
        value = (mean - coef * _log_clause_moment_atomic(p, y)) / y
        return McEstimate(value, se / y, samples)

    ell = _as_logodds(pi)
    logc = math.log(c)
    reps = np.empty((samples, inner))
    for r in range(inner):
        g = np.concatenate([gp, gm])
        S, _ = compound_sums([ell], g, k - 1, logc, rng, mode="direct", reflect=True)
        reps[:, r] = y * np.logaddexp(S[0][:samples], S[0][samples:])
    log_mean = logsumexp(reps, axis=1) - math.log(inner)
    # leave-one-out means for the jackknife
    loo = np.empty_like(reps)
    for r in range(inner):
        loo[:, r] = logsumexp(np.delete(reps, r, axis=1), axis=1) - math.log(inner - 1)
    jack = inner * log_mean - (inner - 1) * loo.mean(axis=1)
    nclause = max(samples * inner, 200_000)
    lp = _log_mu_draws(ell, (nclause, k), rng).sum(axis=1)
    z = np.exp(y * log1mexp(logc + lp))
    cm, _ = _mean_se(z)
    clause = math.log(cm)
    m1, s1 = _controlled_mean(log_mean, gp, gm, lam)
    m2, _ = _controlled_mean(jack, gp, gm, lam)
    return McEstimate((m1 - coef * clause) / y, s1 / y, samples, corrected=(m2 - coef * clause) / y)


def interpolation_gap(y: float, p: ModelParams, samples: int = 20_000, rng=None) -> McEstimate:
    """bound(y) - bound(1) for the atomic law, with shared (gamma+, gamma-) draws."""
    rng = make_rng(rng)
    lam = p.d / 2.0
    gp = rng.poisson(lam, size=samples)
    gm = rng.poisson(lam, size=samples)
    coef = p.d * (p.k - 1) / p.k
    vy = _atomic_inner(gp, gm, p, y) / y
    v1 = _atomic_inner(gp, gm, p, 1.0)
    mean, se = _controlled_mean(vy - v1, gp, gm, lam)
    const = -coef * (_log_clause_moment_atomic(p, y) / y - _log_clause_moment_atomic(p, 1.0))
    return McEstimate(mean + const, se, samples)


def minimize_atomic_bound(p: ModelParams, y_grid=(0.2, 0.4, 0.6, 0.8, 0.9, 0.95), samples: int = 5000,
                          rng=None) -> dict:
    """Scan y for the atomic law with shared outer draws; report the best gap to y = 1."""
    rng = make_rng(rng)
    lam = p.d / 2.0
    gp = rng.poisson(lam, size=samples)
    gm = rng.poisson(lam, size=samples)
    coef = p.d * (p.k - 1) / p.k
    v1 = _atomic_inner(gp, gm, p, 1.0)
    c1 = _log_clause_moment_atomic(p, 1.0)
    rows = []
    for y in y_grid:
        vy = _atomic_inner(gp, gm, p, float(y)) / y
        mean, se = _controlled_mean(vy - v1, gp, gm, lam)
        mean -= coef * (_log_clause_moment_atomic(p, float(y)) / y - c1)
        rows.append({"y": float(y), "gap": mean, "stderr": se})
    best = min(rows, key=lambda r: r["gap"])
    at1 = interpolation_bound(ATOMIC, 1.0, p, gammas=(gp, gm))
    return {"best_y": best["y"], "best_gap": best["gap"], "best_gap_stderr": best["stderr"],
            "bound_at_1": at1.value, "bound_at_1_stderr": at1.stderr, "scan": rows}


# --------------------------------------------------------- scalar gap function

def phi(y, c: float):
    """(c - 1 + 2^(y-1) - ln2/2) / y."""
    y = np.asarray(y, dtype=np.float64)
    out = (c + np.expm1((y - 1.0) * LN2) - LN2 / 2.0) / y
    return float(out) if out.ndim == 0 else out


def phi_prime(y: float, c: float) -> float:
    num = c + math.expm1((y - 1.0) * LN2) - LN2 / 2.0
    return (LN2 * 2.0 ** (y - 1.0) * y - num) / (y * y)


def rsb_scalar_gap(c: float, y_grid=None) -> dict:
    """Minimise phi over (0, 1]: grid search, then golden-section refinement.

    When c - 1/2 - ln2/2 < 0 the numerator stays negative as y -> 0 and phi
    is unbounded below; the grid minimum is reported with ``unbounded_below``.
    """
    if not c > 0:
        raise InvalidInput("c must be positive")
    grid = np.linspace(1e-3, 1.0, 1000) if y_grid is None else np.asarray(y_grid, dtype=np.float64)
    grid = grid[(grid > 0) & (grid <= 1.0)]
    if grid.size == 0 or grid[-1] != 1.0:
        grid = np.append(grid, 1.0)
    at1 = c - LN2 / 2.0
    vals = phi(grid, c)
    i = int(np.argmin(vals))
    unbounded = c - 0.5 - LN2 / 2.0 < 0
    y_best, v_best = float(grid[i]), float(vals[i])
    if not unbounded and 0 < i < grid.size - 1:
        br = (float(grid[i - 1]), float(grid[i]), float(grid[i + 1]))
        res = minimize_scalar(lambda t: phi(t, c), bracket=br, method="golden",
                              options={"xtol": 1e-12})
        if res.fun < v_best and 0 < res.x <= 1:
            y_best, v_best = float(res.x), float(res.fun)
    if at1 <= v_best:
        y_best, v_best = 1.0, at1
    return {"argmin_y": y_best, "phi_min": v_best, "phi_at_1": at1,
            "gap": at1 - v_best, "dphi_at_1": phi_prime(1.0, c), "unbounded_below": unbounded}


# ------------------------------------------------------------- stable sets

def _true_matrix(f: Formula, a: np.ndarray) -> np.ndarray:
    return f.sign == a[f.var]


def support_counts(f: Formula, a) -> np.ndarray:
    """For every variable, the number of clauses in which it holds the only true literal."""
    a = as_assignment(a, f.n)
    if f.m == 0:
        return np.zeros(f.n, np.int64)
    t = _true_matrix(f, a)
    single = t.sum(axis=1) == 1
    who = f.var[single][t[single]]
    return np.bincount(who, minlength=f.n)


def support_count(f: Formula, a, x: int) -> int:
    if not 0 <= x < f.n:
        raise InvalidInput(f"variable {x} out of range")
    return int(support_counts(f, a)[x])


@dataclass(frozen=True)
class StableSet:
    members: frozenset

    def __len__(self):
        return len(self.members)


def _thresholds(k: int, st1: float | None, st2: float | None):
    return (1e-5 * k if st1 is None else st1), (1e-6 * k if st2 is None else st2)


def stable_set(f: Formula, a, st1: float | None = None, st2: float | None = None,
               order: str = "lowest") -> StableSet:
    """Largest set S with every member supporting >= st1 clauses inside S (ST1)
    and lying in <= st2 clauses without a true literal from S (ST2).

    Peels from the full set; removals only make both conditions harder, so
    any removal order ends at the same greatest fixed point.  ``order`` is
    ``"lowest"`` (lowest id first) or ``"highest"``.
    """
    a = as_assignment(a, f.n)
    k = f.k if f.m else 1
    t1, t2 = _thresholds(k, st1, st2)
    n = f.n
    if f.m == 0:
        members = [] if t1 > 0 else list(range(n))
        return StableSet(frozenset(members))
    t = _true_matrix(f, a)
    ntrue = t.sum(axis=1)
    sole = np.where(ntrue == 1, f.var[np.arange(f.m), np.argmax(t, axis=1)], -1)
    ptr, occ_clause, occ_slot = f.occurrences()
    in_set = np.ones(n, bool)
    n_out = np.zeros(f.m, np.int64)
    true_in = ntrue.copy()
    support = np.bincount(sole[sole >= 0], minlength=n).astype(np.int64)
    bad = np.zeros(n, np.int64)
    for cl in np.flatnonzero(true_in == 0):
        for x in f.var[cl]:
            bad[x] += 1

    def violates(x):
        return support[x] < t1 or bad[x] > t2

    sgn = -1 if order == "highest" else 1
    heap = [sgn * x for x in range(n) if violates(x)]
    heapq.heapify(heap)
    while heap:
        x = sgn * heapq.heappop(heap)
        if not in_set[x] or not violates(x):
            continue
        in_set[x] = False
        for o in range(ptr[x], ptr[x + 1]):
            cl = occ_clause[o]
            if n_out[cl] == 0 and sole[cl] >= 0:
                z = sole[cl]
                support[z] -= 1
                if in_set[z] and violates(z):
                    heapq.heappush(heap, sgn * z)
            n_out[cl] += 1
            if t[cl, occ_slot[o]]:
                true_in[cl] -= 1
                if true_in[cl] == 0:
                    for z in f.var[cl]:
                        bad[z] += 1
                        if in_set[z] and violates(z):
                            heapq.heappush(heap, sgn * z)
    return StableSet(frozenset(int(x) for x in np.flatnonzero(in_set)))


def verify_stable_set(f: Formula, a, members, st1: float | None = None, st2: float | None = None) -> bool:
    """Check ST1 and ST2 for every member by direct recount."""
    a = as_assignment(a, f.n)
    k = f.k if f.m else 1
    t1, t2 = _thresholds(k, st1, st2)
    S = np.zeros(f.n, bool)
    S[list(members)] = True
    if f.m == 0:
        return not S.any() or t1 <= 0
    t = _true_matrix(f, a)
    inside = S[f.var].all(axis=1)
    single = t.sum(axis=1) == 1
    has_true_in_S = (t & S[f.var]).any(axis=1)
    for x in np.flatnonzero(S):
        rows = (f.var == x).any(axis=1)
        slot_true = (t & (f.var == x)).any(axis=1)
        sup = int((rows & inside & single & slot_true).sum())
        bad = int((rows & ~has_true_in_S).sum())
        if sup < t1 or bad > t2:
            return False
    return True


def polarization_check(marginals, k: int, beta: float) -> dict:
    """Fraction of marginals in (0, e^-beta) or (1 - e^-beta, 1) against 1 - 2^(-0.98k)."""
    if not math.isfinite(beta) or beta <= 0:
        raise InvalidInput("needs finite positive beta")
    m = np.asarray(marginals, dtype=np.float64)
    if m.size == 0:
        raise InvalidInput("empty marginal vector")
    e = math.exp(-beta)
    pol = ((m > 0) & (m < e)) | ((m > 1 - e) & (m < 1))
    frac = float(pol.mean())
    return {"fraction_polarized": frac, "passes_A": frac >= 1.0 - 2.0 ** (-0.98 * k),
            "threshold": 1.0 - 2.0 ** (-0.98 * k)}
