"""Random k-CNF formulas, the planted ensemble, and assignment bookkeeping.

A formula is stored as two ``(m, k)`` arrays: ``var`` holds 0-based variable
indices and ``sign`` holds +1/-1.  Literal ``(x, s)`` is true under an
assignment ``a`` iff ``a[x] == s``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput

INF = math.inf
K_MAX = 30


def make_rng(seed=None) -> np.random.Generator:
    """Return a Generator; pass-through if one is given."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class ModelParams:
    """Clause length ``k``, mean variable degree ``d`` and inverse temperature ``beta``.

    ``beta`` may be ``math.inf``; then ``penalty`` is 1 and ``weight`` is 0.
    """

    k: int
    d: float
    beta: float

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 2 or self.k > K_MAX:
            raise InvalidInput(f"k must be an integer in [2, {K_MAX}], got {self.k}")
        if not self.d > 0:
            raise InvalidInput(f"d must be positive, got {self.d}")
        if not self.beta > 0:
            raise InvalidInput(f"beta must be positive or INF, got {self.beta}")
        object.__setattr__(self, "k", int(self.k))
        object.__setattr__(self, "d", float(self.d))
        object.__setattr__(self, "beta", float(self.beta))

    @property
    def finite(self) -> bool:
        return math.isfinite(self.beta)

    @property
    def penalty(self) -> float:
        """1 - exp(-beta): the weight lost by a violated clause."""
        return -math.expm1(-self.beta) if self.finite else 1.0

    @property
    def weight(self) -> float:
        """exp(-beta), the Boltzmann weight of one violated clause."""
        return math.exp(-self.beta) if self.finite else 0.0

    @property
    def c_offset(self) -> float:
        """c with d/k = 2^k ln2 - c."""
        return 2.0**self.k * math.log(2.0) - self.d / self.k

    @classmethod
    def from_offset(cls, k: int, c: float, beta: float) -> "ModelParams":
        """Parameters with d = k (2^k ln2 - c)."""
        return cls(k, k * (2.0**k * math.log(2.0) - c), beta)

    def with_d(self, d: float) -> "ModelParams":
        return ModelParams(self.k, d, self.beta)

    def as_dict(self) -> dict:
        return {"k": self.k, "d": self.d, "beta": "INF" if not self.finite else self.beta}


def _frozen(arr):
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Formula:
    """An immutable k-CNF formula over variables ``0..n-1``."""

    n: int
    var: np.ndarray
    sign: np.ndarray
    k: int = field(default=0)

    def __post_init__(self):
        var = np.array(self.var, dtype=np.int64, copy=True)
        sign = np.array(self.sign, dtype=np.int8, copy=True)
        if var.ndim == 1 and var.size == 0:
            var = var.reshape(0, max(self.k, 0))
            sign = sign.reshape(0, max(self.k, 0))
        if var.ndim != 2 or var.shape != sign.shape:
            raise InvalidInput("var and sign must be equal-shaped (m, k) arrays")
        k = var.shape[1] if var.shape[0] else (self.k or var.shape[1])
        if var.shape[0] and self.k and self.k != var.shape[1]:
            raise InvalidInput("declared k disagrees with clause width")
        if self.n < 0:
            raise InvalidInput("n must be non-negative")
        if var.size:
            if var.min() < 0 or var.max() >= self.n:
                raise InvalidInput("variable index out of range")
            if not np.all(np.abs(sign) == 1):
                raise InvalidInput("signs must be +1 or -1")
            srt = np.sort(var, axis=1)
            if np.any(srt[:, 1:] == srt[:, :-1]):
                raise InvalidInput("a clause repeats a variable")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "k", int(k))
        object.__setattr__(self, "var", _frozen(var))
        object.__setattr__(self, "sign", _frozen(sign))

    @property
    def m(self) -> int:
        return int(self.var.shape[0])

    @classmethod
    def from_clauses(cls, n: int, clauses, k: int = 0) -> "Formula":
        """Build from ``[(var_ids, signs), ...]``."""
        clauses = list(clauses)
        if not clauses:
            return cls(n, np.zeros((0, k), np.int64), np.zeros((0, k), np.int8), k=k)
        var = np.array([c[0] for c in clauses], dtype=np.int64)
        sign = np.array([c[1] for c in clauses], dtype=np.int8)
        return cls(n, var, sign)

    @classmethod
    def from_literals(cls, n: int, clauses, k: int = 0) -> "Formula":
        """Build from DIMACS-style signed 1-based literals, e.g. ``[[1, -2, 3]]``."""
        parsed = [([abs(l) - 1 for l in c], [1 if l > 0 else -1 for l in c]) for c in clauses]
        return cls.from_clauses(n, parsed, k=k)

    def clauses(self):
        return [(tuple(int(v) for v in vs), tuple(int(s) for s in ss)) for vs, ss in zip(self.var, self.sign)]

    def remove_clauses(self, drop) -> "Formula":
        keep = np.ones(self.m, dtype=bool)
        keep[np.asarray(list(drop), dtype=np.int64)] = False
        return Formula(self.n, self.var[keep], self.sign[keep], k=self.k)

    def flip_variable(self, x: int) -> "Formula":
        """Negate every occurrence of variable ``x``."""
        sign = self.sign.copy()
        sign[self.var == x] *= -1
        return Formula(self.n, self.var, sign, k=self.k)

    def permute_clauses(self, order) -> "Formula":
        order = np.asarray(order)
        return Formula(self.n, self.var[order], self.sign[order], k=self.k)

    def occurrences(self):
        """CSR occurrence lists: ``(ptr, clause, slot)`` sorted by variable."""
        flat = self.var.ravel()
        order = np.argsort(flat, kind="stable")
        ptr = np.zeros(self.n + 1, dtype=np.int64)
        np.cumsum(np.bincount(flat, minlength=self.n), out=ptr[1:])
        kk = max(self.k, 1)
        return ptr, (order // kk).astype(np.int64), (order % kk).astype(np.int64)


def as_assignment(values, n: int | None = None) -> np.ndarray:
    """Validate a +/-1 vector and return it as int8."""
    a = np.asarray(values)
    if a.ndim != 1 or (a.size and not np.all(np.abs(a) == 1)):
        raise InvalidInput("assignment entries must be +1 or -1")
    if n is not None and a.size != n:
        raise InvalidInput(f"assignment length {a.size} != n = {n}")
    return a.astype(np.int8)


# ---------------------------------------------------------------- generation

def _distinct_rows(rng: np.random.Generator, m: int, n: int, k: int) -> np.ndarray:
    """m ordered k-tuples drawn uniformly without replacement from range(n)."""
    out = np.empty((m, k), dtype=np.int64)
    for j in range(k):
        r = rng.integers(0, n - j, size=m)
        prev = np.sort(out[:, :j], axis=1)
        # shift r past the already used indices so it names the r-th unused one
        for t in range(j):
            r += prev[:, t] <= r
        out[:, j] = r
    return out


def _fair_signs(rng, shape) -> np.ndarray:
    return (2 * rng.integers(0, 2, size=shape) - 1).astype(np.int8)


def gen_random(params: ModelParams, n: int, rng=None, m: int | None = None) -> Formula:
    """Random formula with Poisson(dn/k) clauses (or exactly ``m`` if given)."""
    rng = make_rng(rng)
    k = params.k
    if n < k:
        raise InvalidInput(f"need n >= k, got n={n}, k={k}")
    if m is None:
        m = int(rng.poisson(params.d * n / k))
    var = _distinct_rows(rng, m, n, k)
    return Formula(n, var, _fair_signs(rng, (m, k)), k=k)


def planted_violation_prob(params: ModelParams) -> float:
    """exp(-beta) / (2^k - 1 + exp(-beta))."""
    w = params.weight
    return w / (2.0**params.k - 1.0 + w)


def gen_planted(params: ModelParams, n: int, rng=None, m: int | None = None):
    """Planted formula and its hidden assignment.

    Each clause is violated by the planted assignment with probability
    ``planted_violation_prob``; given that outcome the sign pattern is uniform
    over the matching patterns.
    """
    if not params.finite:
        raise InvalidInput("gen_planted needs finite beta")
    rng = make_rng(rng)
    k = params.k
    if n < k:
        raise InvalidInput(f"need n >= k, got n={n}, k={k}")
    sigma = _fair_signs(rng, n)
    if m is None:
        m = int(rng.poisson(params.d * n / k))
    var = _distinct_rows(rng, m, n, k)
    violated = rng.random(m) < planted_violation_prob(params)
    # truth pattern as a k-bit integer; 0 means every literal false
    pattern = rng.integers(1, 2**k, size=m, dtype=np.int64)
    pattern[violated] = 0
    bits = (pattern[:, None] >> np.arange(k, dtype=np.int64)) & 1
    sv = sigma[var]
    sign = np.where(bits == 1, sv, -sv).astype(np.int8)
    return Formula(n, var, sign, k=k), sigma


# ----------------------------------------------------------- evaluation

def _true_literals(f: Formula, a: np.ndarray) -> np.ndarray:
    return f.sign == a[f.var]


def hamiltonian(f: Formula, a) -> int:
    """Number of clauses with no true literal under ``a``."""
    a = as_assignment(a, f.n)
    if f.m == 0:
        return 0
    return int(np.count_nonzero(~_true_literals(f, a).any(axis=1)))


def overlap(a, b) -> float:
    """Fraction of coordinates on which ``a`` and ``b`` agree."""
    a = as_assignment(a)
    b = as_assignment(b)
    if a.size != b.size:
        raise InvalidInput("assignments differ in length")
    if a.size == 0:
        raise InvalidInput("overlap of empty assignments is undefined")
    return float(np.mean(a == b))


def literal_degrees(f: Formula):
    """Per-variable counts of positive and negative occurrences."""
    flat_v = f.var.ravel()
    flat_s = f.sign.ravel()
    d_plus = np.bincount(flat_v[flat_s > 0], minlength=f.n)
    d_minus = np.bincount(flat_v[flat_s < 0], minlength=f.n)
    return d_plus, d_minus


def weighted_overlap(f: Formula, a, b) -> float:
    """Fraction of literal occurrences true under both ``a`` and ``b``."""
    if f.m == 0:
        raise InvalidInput("weighted overlap needs at least one clause")
    a = as_assignment(a, f.n)
    b = as_assignment(b, f.n)
    dp, dm = literal_degrees(f)
    both_true = (a == 1) & (b == 1)
    both_false = (a == -1) & (b == -1)
    return float((dp[both_true].sum() + dm[both_false].sum()) / (f.k * f.m))


def balance_check(f: Formula, a):
    """(balanced, strongly_balanced) for assignment ``a``."""
    a = as_assignment(a, f.n).astype(np.int64)
    dp, dm = literal_degrees(f)
    total = int(np.dot(a, dp - dm))
    balanced = total == (f.k * f.m) % 2
    if not balanced:
        return False, False
    bound = math.sqrt(f.n)
    pairs = dp * (int(dm.max(initial=0)) + 1) + dm
    sums = np.bincount(pairs, weights=a, minlength=1)
    return True, bool(np.all(np.abs(sums) <= bound))


# ------------------------------------------------------------ graph structure

def _factor_graph(f: Formula):
    from scipy.sparse import coo_matrix

    rows = f.var.ravel()
    cols = f.n + np.repeat(np.arange(f.m), f.k)
    size = f.n + f.m
    data = np.ones(rows.size)
    adj = coo_matrix((data, (rows, cols)), shape=(size, size))
    return (adj + adj.T).tocsr()


def is_acyclic(f: Formula) -> bool:
    """True when the variable-clause factor graph is a forest."""
    from scipy.sparse.csgraph import connected_components

    ncomp, _ = connected_components(_factor_graph(f), directed=False)
    return f.m * f.k == f.n + f.m - ncomp


def factor_graph_diameter(f: Formula) -> int:
    """Longest shortest path (in edges) within any component of the factor graph."""
    from scipy.sparse.csgraph import shortest_path

    if f.m == 0:
        return 0
    dist = shortest_path(_factor_graph(f), unweighted=True, directed=False)
    return int(dist[np.isfinite(dist)].max())
