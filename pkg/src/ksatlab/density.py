"""Population dynamics for the distributional recursion of tree BP.

A population is an empirical measure on [0,1], stored as log-odds so that
values extremely close to 0 or 1 keep their precision.  One application of
the operator draws, for every output, two Poisson(d/2) clause counts and
k-1 source values per clause, and returns

    sigmoid(S+ - S-),   S(+/-) = sum over clauses of log(1 - c * prod eta).

When the number of draws is moderate every clause is sampled afresh
("direct").  For large d the clause sums are assembled from a pool of
partial sums built by binary aggregation ("pooled"): level j holds sums of
2^j clause terms, and an output with gamma clauses adds one level-j element
per set bit of gamma.  Outputs stay conditionally i.i.d. given the pool.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._num import log1mexp, log_sigmoid, logit, sigmoid
from .errors import InvalidInput
from .model import ModelParams, make_rng

DIRECT_BUDGET = 50_000_000
CHUNK_ROWS = 1 << 20


@dataclass(frozen=True)
class Population:
    """Empirical message law; ``logodds`` holds log(x / (1 - x)) per sample."""

    logodds: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.logodds, dtype=np.float64).ravel()
        if a.size < 1:
            raise InvalidInput("a population needs at least one sample")
        if np.isnan(a).any():
            raise InvalidInput("population contains NaN")
        object.__setattr__(self, "logodds", a)

    @classmethod
    def from_samples(cls, samples) -> "Population":
        x = np.asarray(samples, dtype=np.float64).ravel()
        if x.size and (np.isnan(x).any() or x.min() < 0.0 or x.max() > 1.0):
            raise InvalidInput("population samples must lie in [0, 1]")
        return cls(logit(x))

    @classmethod
    def delta(cls, value: float, N: int) -> "Population":
        return cls.from_samples(np.full(int(N), float(value)))

    @property
    def samples(self) -> np.ndarray:
        return sigmoid(self.logodds)

    @property
    def N(self) -> int:
        return int(self.logodds.size)

    def mean(self) -> float:
        return float(self.samples.mean())

    def stderr(self) -> float:
        x = self.samples
        return float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0


def _as_logodds(pop) -> np.ndarray:
    if isinstance(pop, Population):
        return pop.logodds
    return Population.from_samples(pop).logodds


# ------------------------------------------------------------- clause terms

def _clause_terms(sources, idx, logc, flip=None):
    """log(1 - c prod eta) for each row of source indices, per source array."""
    out = []
    for src in sources:
        ell = src[idx]
        if flip is not None:
            ell = np.where(flip, -ell, ell)
        out.append(log1mexp(logc + log_sigmoid(ell).sum(axis=1)))
    return out


def fresh_clause_terms(sources, count, width, logc, rng, reflect=False):
    """``count`` clause terms with ``width`` source draws each (coupled across sources)."""
    N = sources[0].size
    res = [np.empty(count) for _ in sources]
    for lo in range(0, count, CHUNK_ROWS):
        hi = min(count, lo + CHUNK_ROWS)
        idx = rng.integers(0, N, size=(hi - lo, width))
        flip = rng.integers(0, 2, size=idx.shape, dtype=np.int8).astype(bool) if reflect else None
        for r, x in zip(res, _clause_terms(sources, idx, logc, flip)):
            r[lo:hi] = x
    return res


def default_pool_size(gamma_max: int, n_out: int = 0) -> int:
    return int(min(1 << 22, max(1 << 18, 64 * max(gamma_max, 1), 4 * n_out)))


def compound_sums(sources, gammas, width, logc, rng, mode="auto", pool_size=None,
                  budget=DIRECT_BUDGET, reflect=False):
    """Sums of ``gammas[i]`` clause terms for every i, coupled across ``sources``.

    Returns ``(sums, mode_used)`` where ``sums`` is a list with one array per source.
    """
    gammas = np.asarray(gammas, dtype=np.int64)
    total = int(gammas.sum())
    if mode == "auto":
        mode = "direct" if total * width <= budget else "pooled"
    S = [np.zeros(gammas.size) for _ in sources]
    if total == 0:
        return S, mode
    if mode == "direct":
        # walk the outputs in chunks whose clause count stays bounded
        ends = np.cumsum(gammas)
        start = 0
        while start < gammas.size:
            base = ends[start - 1] if start else 0
            stop = int(np.searchsorted(ends, base + CHUNK_ROWS, side="right"))
            stop = max(stop, start + 1)
            g = gammas[start:stop]
            terms = fresh_clause_terms(sources, int(g.sum()), width, logc, rng, reflect)
            seg = np.repeat(np.arange(g.size), g)
            for s, x in zip(S, terms):
                s[start:stop] = np.bincount(seg, weights=x, minlength=g.size)
            start = stop
        return S, mode
    if mode != "pooled":
        raise InvalidInput(f"unknown mode {mode!r}")
    P = int(pool_size or default_pool_size(int(gammas.max()), gammas.size))
    pools = fresh_clause_terms(sources, P, width, logc, rng, reflect)
    levels = int(gammas.max()).bit_length()
    for b in range(levels):
        sel = np.flatnonzero((gammas >> b) & 1)
        u = rng.integers(0, P, size=sel.size)
        for s, pool in zip(S, pools):
            s[sel] += pool[u]
        if b < levels - 1:
            r1 = rng.integers(0, P, size=P)
            r2 = rng.integers(0, P, size=P)
            pools = [pool[r1] + pool[r2] for pool in pools]
    return S, mode


# ------------------------------------------------------------------ operator

def apply_R_coupled(pops, p: ModelParams, rng=None, n_out: int | None = None, mode="auto",
                    pool_size=None, budget=DIRECT_BUDGET, reflect=False):
    """Apply the operator to several populations with shared randomness.

    All inputs must have the same size; the clause counts, source indices
    and (when ``reflect``) reflection signs are identical across them.
    """
    if not p.finite:
        raise InvalidInput("population dynamics needs finite beta")
    sources = [_as_logodds(q) for q in pops]
    N = sources[0].size
    if any(s.size != N for s in sources):
        raise InvalidInput("coupled populations must have equal size")
    n_out = N if n_out is None else int(n_out)
    if n_out < 1:
        raise InvalidInput("n_out must be >= 1")
    rng = make_rng(rng)
    g = rng.poisson(p.d / 2.0, size=2 * n_out)
    S, _ = compound_sums(sources, g, p.k - 1, math.log(p.penalty), rng, mode, pool_size, budget, reflect)
    return [Population(s[:n_out] - s[n_out:]) for s in S]


def apply_R(pop, p: ModelParams, rng=None, n_out: int | None = None, mode="auto",
            pool_size=None, budget=DIRECT_BUDGET, reflect=False) -> Population:
    """One application of the operator to the empirical measure ``pop``."""
    return apply_R_coupled([pop], p, rng, n_out, mode, pool_size, budget, reflect)[0]


def symmetrize(pop, rng=None) -> Population:
    """Reflect each sample x -> 1 - x independently with probability 1/2."""
    rng = make_rng(rng)
    ell = _as_logodds(pop)
    flip = rng.integers(0, 2, size=ell.size).astype(bool)
    return Population(np.where(flip, -ell, ell))


def truncate(pop, eps: float) -> Population:
    """Replace samples outside [eps, 1 - eps] by 1/2."""
    if not 0.0 <= eps < 0.5:
        raise InvalidInput("eps must lie in [0, 1/2)")
    ell = _as_logodds(pop)
    if eps == 0.0:
        return Population(ell.copy())
    x = sigmoid(ell)
    return Population(np.where((x < eps) | (x > 1.0 - eps), 0.0, ell))


# --------------------------------------------------------------- diagnostics

def _quantiles(x: np.ndarray, size: int) -> np.ndarray:
    x = np.sort(x)
    if x.size == size:
        return x
    pos = (np.arange(size) + 0.5) / size
    return x[np.minimum((pos * x.size).astype(np.int64), x.size - 1)]


def wasserstein(a, b, r: float = 1.0) -> float:
    """Empirical W_r on [0,1] under the monotone coupling.

    Populations of different sizes are compared through their quantile
    functions on a common grid.  The largest gap is factored out before
    raising to the power r so large r does not underflow.
    """
    if r < 1:
        raise InvalidInput("r must be >= 1")
    xa = a.samples if isinstance(a, Population) else np.asarray(a, dtype=np.float64)
    xb = b.samples if isinstance(b, Population) else np.asarray(b, dtype=np.float64)
    size = max(xa.size, xb.size)
    diff = np.abs(_quantiles(xa, size) - _quantiles(xb, size))
    top = diff.max()
    if top == 0.0:
        return 0.0
    return float(top * np.mean((diff / top) ** r) ** (1.0 / r))


@dataclass(frozen=True)
class TailReport:
    p_dagger_pass: bool
    slim: bool
    very_slim: bool
    worst_margin: float
    slim_mass: float
    grid: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"p_dagger_pass": self.p_dagger_pass, "slim": self.slim,
                "very_slim": self.very_slim, "worst_margin": self.worst_margin,
                "slim_mass": self.slim_mass}


def tail_report(pop, k: int, beta_max: float | None = None) -> TailReport:
    """Tail-class checks on a population.

    The exponential tail class is tested on the log-odds scale at the
    geometric grid s = 2^(-k/4) 2^j up to s = beta_max, on both tails.
    ``beta_max`` defaults to the largest finite |log-odds| (at least 1).
    Slim tails: mass outside (1/2 - t, 1/2 + t) is at most t with t = 2^(-k/10);
    very slim tails keep the same band but require mass at most 2^(-k/9).
    """
    ell = _as_logodds(pop)
    finite = ell[np.isfinite(ell)]
    if beta_max is None:
        beta_max = max(1.0, float(np.abs(finite).max()) if finite.size else 1.0)
    s0 = 2.0 ** (-k / 4.0)
    jmax = max(0, math.ceil(k / 4.0 + math.log2(beta_max)))
    s = s0 * 2.0 ** np.arange(jmax + 1)
    srt = np.sort(ell)
    n = srt.size
    upper = (n - np.searchsorted(srt, s, side="left")) / n
    lower = np.searchsorted(srt, -s, side="right") / n
    bound = np.exp(-s * 2.0 ** (k / 4.0))
    margins = bound - np.maximum(upper, lower)
    t = 2.0 ** (-k / 10.0)
    x = sigmoid(ell)
    mass = float(np.mean((x <= 0.5 - t) | (x >= 0.5 + t)))
    return TailReport(
        p_dagger_pass=bool(np.all(margins >= 0)),
        slim=mass <= t,
        very_slim=mass <= 2.0 ** (-k / 9.0),
        worst_margin=float(margins.min()),
        slim_mass=mass,
        grid=[float(v) for v in s],
    )


@dataclass
class FixedPointResult:
    population: Population
    trace: list
    converged: bool
    iterations: int


def fixed_point(p: ModelParams, N: int = 100_000, max_iters: int = 60, tol: float | None = None,
                rng=None, mode="auto", pool_size=None, callback=None) -> FixedPointResult:
    """Iterate the operator from the point mass at 1/2 until the W_1 step falls below ``tol``.

    ``tol`` defaults to 5/sqrt(N), the Monte Carlo noise floor.
    """
    if N < 1 or max_iters < 1:
        raise InvalidInput("need N >= 1 and max_iters >= 1")
    tol = 5.0 / math.sqrt(N) if tol is None else tol
    rng = make_rng(rng)
    cur = Population(np.zeros(N))
    trace = []
    for it in range(1, max_iters + 1):
        new = apply_R(cur, p, rng, N, mode, pool_size)
        step = wasserstein(cur, new, 1.0)
        trace.append(step)
        cur = new
        if callback is not None:
            callback(it, step, cur)
        if step < tol:
            return FixedPointResult(cur, trace, True, it)
    return FixedPointResult(cur, trace, False, max_iters)


@dataclass
class ContractionReport:
    ratios: list
    stderrs: list
    max_ratio: float
    max_ratio_stderr: float
    skipped: int
    r: float

    def as_dict(self) -> dict:
        return {"ratios": self.ratios, "stderrs": self.stderrs, "max_ratio": self.max_ratio,
                "max_ratio_stderr": self.max_ratio_stderr, "skipped": self.skipped, "r": self.r}


def slim_perturbation(k: int, N: int, rng, scale: float | None = None) -> Population:
    """Symmetrised population 1/2 + s U with U uniform on [-t, t], t = 2^(-k/10).

    The scale s is drawn from (0.05, 1) unless given.
    """
    t = 2.0 ** (-k / 10.0)
    scale = rng.uniform(0.05, 1.0) if scale is None else scale
    return symmetrize(Population.from_samples(0.5 + scale * t * rng.uniform(-1.0, 1.0, size=N)), rng)


def contraction_ratio(a, b, p: ModelParams, r: float = 1.0, rng=None, replicas: int = 4,
                      mode="auto", pool_size=None):
    """Mean and standard error of W_r(Ra, Rb) / W_r(a, b) over coupled replicas.

    Returns ``None`` when the inputs coincide in W_r.
    """
    rng = make_rng(rng)
    base = wasserstein(a, b, r)
    if base == 0.0:
        return None
    vals = []
    for _ in range(replicas):
        ra, rb = apply_R_coupled([a, b], p, rng, None, mode, pool_size)
        vals.append(wasserstein(ra, rb, r) / base)
    vals = np.array(vals)
    se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
    return float(vals.mean()), se


def contraction_probe(p: ModelParams, N: int = 20_000, r: float = 1.0, pairs: int = 20, rng=None,
                      replicas: int = 3, mode="auto", pool_size=None,
                      include_delta_pair: bool = False) -> ContractionReport:
    """Coupled contraction ratios on random pairs of symmetric slim-tailed populations.

    With ``include_delta_pair`` the first pair is instead the point mass at
    1/2 against the point mass at 1/2 + 2^(-k/10 - 1), which is slim-tailed
    but not symmetric.
    """
    rng = make_rng(rng)
    ratios, ses, skipped = [], [], 0
    for i in range(pairs):
        if i == 0 and include_delta_pair:
            a = Population.delta(0.5, N)
            b = Population.delta(0.5 + 2.0 ** (-p.k / 10.0 - 1.0), N)
        else:
            a = slim_perturbation(p.k, N, rng)
            b = slim_perturbation(p.k, N, rng)
        res = contraction_ratio(a, b, p, r, rng, replicas, mode, pool_size)
        if res is None:
            skipped += 1
            continue
        ratios.append(res[0])
        ses.append(res[1])
    if not ratios:
        return ContractionReport([], [], float("nan"), float("nan"), skipped, r)
    j = int(np.argmax(ratios))
    return ContractionReport(ratios, ses, ratios[j], ses[j], skipped, r)
