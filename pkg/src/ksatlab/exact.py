"""Exact oracles for small formulas plus a heat-bath sampler.

Full enumeration walks the 2^n assignments in Gray-code order, so each step
flips one variable and only its clauses need updating.  The walk records how
many assignments have each energy (number of violated clauses), optionally
split by variable value, which yields log Z and marginals for any beta with
integer-exact counts.  Bucket elimination is available as a second exact
method for larger formulas of small treewidth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.special import logsumexp

from .errors import InvalidInput, ResourceLimit
from .model import Formula, ModelParams, as_assignment, make_rng

DEFAULT_CAP = 24
PAIR_CAP = 20
OVERLAP_CAP = 20


@dataclass(frozen=True)
class ExactSummary:
    logZ: float
    marginals: np.ndarray
    pair_defect: float
    mean_overlap: float


# ------------------------------------------------------------------ kernels

@njit(cache=True)
def _initial_state(n, var, sign):
    m, k = var.shape
    ntrue = np.zeros(m, np.int64)
    for c in range(m):
        for j in range(k):
            if sign[c, j] < 0:  # all variables start at -1
                ntrue[c] += 1
    H = 0
    for c in range(m):
        if ntrue[c] == 0:
            H += 1
    return ntrue, H


@njit(cache=True)
def _flip(x, newval, sign, occ_ptr, occ_clause, occ_slot, ntrue, H):
    for o in range(occ_ptr[x], occ_ptr[x + 1]):
        c = occ_clause[o]
        if (sign[c, occ_slot[o]] > 0) == newval:
            ntrue[c] += 1
            if ntrue[c] == 1:
                H -= 1
        else:
            ntrue[c] -= 1
            if ntrue[c] == 0:
                H += 1
    return H


@njit(cache=True)
def _gray_counts(n, var, sign, occ_ptr, occ_clause, occ_slot, level):
    """Energy histograms: level 0 totals, 1 adds per-variable, 2 adds per-pair."""
    m = var.shape[0]
    ntrue, H = _initial_state(n, var, sign)
    state = np.zeros(n, np.bool_)
    count = np.zeros(m + 1, np.int64)
    nm = n if level >= 1 else 1
    npair = n if level >= 2 else 1
    marg = np.zeros((nm, m + 1), np.int64)
    pair = np.zeros((npair, npair, m + 1), np.int64)
    ones = np.empty(n, np.int64)
    total = 1 << n
    for g in range(total):
        if g > 0:
            x = 0
            while (g >> x) & 1 == 0:
                x += 1
            state[x] = not state[x]
            H = _flip(x, state[x], sign, occ_ptr, occ_clause, occ_slot, ntrue, H)
        count[H] += 1
        if level >= 1:
            nones = 0
            for i in range(n):
                if state[i]:
                    ones[nones] = i
                    nones += 1
                    marg[i, H] += 1
            if level >= 2:
                for a in range(nones):
                    ia = ones[a]
                    for b in range(nones):
                        pair[ia, ones[b], H] += 1
    return count, marg, pair


@njit(cache=True)
def _gray_energies(n, var, sign, occ_ptr, occ_clause, occ_slot):
    """Energy of every assignment, indexed by the bit pattern (bit x set = +1)."""
    ntrue, H = _initial_state(n, var, sign)
    state = np.zeros(n, np.bool_)
    out = np.empty(1 << n, np.int32)
    idx = 0
    out[0] = H
    for g in range(1, 1 << n):
        x = 0
        while (g >> x) & 1 == 0:
            x += 1
        state[x] = not state[x]
        idx ^= 1 << x
        H = _flip(x, state[x], sign, occ_ptr, occ_clause, occ_slot, ntrue, H)
        out[idx] = H
    return out


def _kernel_args(f: Formula):
    ptr, occ_clause, occ_slot = f.occurrences()
    var = np.ascontiguousarray(f.var, dtype=np.int64).reshape(f.m, max(f.k, 1)) if f.m else np.zeros((0, 1), np.int64)
    sign = np.ascontiguousarray(f.sign, dtype=np.int8).reshape(var.shape) if f.m else np.zeros((0, 1), np.int8)
    return var, sign, ptr, occ_clause, occ_slot


def _check_cap(f: Formula, cap: int):
    if f.n > cap:
        raise ResourceLimit(f"n = {f.n} exceeds enumeration cap {cap}")


def energy_counts(f: Formula, cap: int = DEFAULT_CAP, level: int = 0):
    """Histograms of the energy over all 2^n assignments (see ``_gray_counts``)."""
    _check_cap(f, cap)
    var, sign, ptr, oc, os_ = _kernel_args(f)
    return _gray_counts(f.n, var, sign, ptr, oc, os_, level)


def energies(f: Formula, cap: int = DEFAULT_CAP) -> np.ndarray:
    """Vector of energies indexed by assignment bit pattern (bit x set means +1)."""
    _check_cap(f, cap)
    var, sign, ptr, oc, os_ = _kernel_args(f)
    return _gray_energies(f.n, var, sign, ptr, oc, os_)


def _log_weights(count: np.ndarray, p: ModelParams):
    """log of per-energy total weight, normalised so its max is 0, and log Z."""
    h = np.arange(count.size, dtype=np.float64)
    with np.errstate(divide="ignore"):
        logc = np.log(count.astype(np.float64))
    if p.finite:
        lw = logc - p.beta * h
    else:
        lw = np.where(h == 0, logc, -np.inf)
    logZ = float(logsumexp(lw))
    return lw, logZ


def _energy_weights(count: np.ndarray, p: ModelParams) -> np.ndarray:
    """Per-energy Boltzmann factors rescaled to be at most 1."""
    h = np.arange(count.size, dtype=np.float64)
    present = count > 0
    if not p.finite:
        if count[0] == 0:
            raise InvalidInput("no satisfying assignment: the hard-constraint measure is empty")
        return (h == 0).astype(np.float64)
    h0 = h[present].min()
    return np.where(present, np.exp(-p.beta * (h - h0)), 0.0)


# ------------------------------------------------------------- public oracles

def exact_logZ(f: Formula, p: ModelParams, cap: int = DEFAULT_CAP, method: str = "enumerate") -> float:
    """log Z by enumeration (default) or bucket elimination."""
    if method == "eliminate" or (method == "auto" and f.n > cap):
        return eliminate_logZ(f, p)
    if method not in ("enumerate", "auto"):
        raise InvalidInput(f"unknown method {method!r}")
    count, _, _ = energy_counts(f, cap, 0)
    return _log_weights(count, p)[1]


def exact_marginals(f: Formula, p: ModelParams, cap: int = DEFAULT_CAP, method: str = "enumerate") -> np.ndarray:
    """P(sigma_x = +1) for every x."""
    if method == "eliminate" or (method == "auto" and f.n > cap):
        return eliminate_marginals(f, p)
    if method not in ("enumerate", "auto"):
        raise InvalidInput(f"unknown method {method!r}")
    count, marg, _ = energy_counts(f, cap, 1)
    w = _energy_weights(count, p)
    return (marg @ w) / (count @ w)


def _pair_table(f: Formula, p: ModelParams, cap: int):
    count, marg, pair = energy_counts(f, cap, 2)
    w = _energy_weights(count, p)
    z = count @ w
    return marg @ w / z, pair @ w / z


def rs_defect(f: Formula, p: ModelParams, cap: int = PAIR_CAP) -> float:
    """(1/n^2) sum_{i,j} |P(x_i = x_j = +1) - P(x_i = +1) P(x_j = +1)|, diagonal included."""
    if f.n == 0:
        return 0.0
    if f.m == 0:
        return 0.0
    q, qq = _pair_table(f, p, cap)
    return float(np.abs(qq - np.outer(q, q)).sum() / f.n**2)


def boltzmann_vector(f: Formula, p: ModelParams, cap: int = OVERLAP_CAP) -> np.ndarray:
    """Probability of every assignment, indexed by bit pattern."""
    H = energies(f, cap).astype(np.float64)
    if p.finite:
        lw = -p.beta * (H - H.min())
        w = np.exp(lw)
    else:
        w = (H == 0).astype(np.float64)
        if not w.any():
            raise InvalidInput("no satisfying assignment")
    return w / w.sum()


def _fwht(a: np.ndarray) -> np.ndarray:
    a = a.copy()
    size = a.size
    h = 1
    while h < size:
        v = a.reshape(-1, 2, h)
        x = v[:, 0, :].copy()
        v[:, 0, :] += v[:, 1, :]
        v[:, 1, :] = x - v[:, 1, :]
        h *= 2
    return a


def _popcount(size: int, n: int) -> np.ndarray:
    idx = np.arange(size, dtype=np.int64)
    pc = np.zeros(size, dtype=np.int64)
    for b in range(n):
        pc += (idx >> b) & 1
    return pc


def overlap_statistics(f: Formula, p: ModelParams, cap: int = OVERLAP_CAP):
    """Mean overlap of two independent samples and the overlap histogram.

    ``histogram[j]`` is the probability that the samples agree on exactly ``j``
    coordinates (overlap ``j/n``).  The XOR autocorrelation of the Boltzmann
    vector is obtained with two Walsh-Hadamard transforms.
    """
    if f.n == 0:
        raise InvalidInput("overlap needs n >= 1")
    mu = boltzmann_vector(f, p, cap)
    spec = _fwht(mu)
    auto = _fwht(spec * spec) / mu.size  # P(sigma xor tau = z)
    auto = np.where(np.abs(auto) < 1e-300, 0.0, auto)
    agree = f.n - _popcount(mu.size, f.n)
    hist = np.bincount(agree, weights=auto, minlength=f.n + 1)
    hist = np.clip(hist, 0.0, None)
    mean = float(np.dot(np.arange(f.n + 1), hist) / f.n)
    return mean, hist


def exact_summary(f: Formula, p: ModelParams, cap: int = PAIR_CAP) -> ExactSummary:
    count, marg, pair = energy_counts(f, cap, 2)
    lw, logZ = _log_weights(count, p)
    w = _energy_weights(count, p)
    z = count @ w
    q = marg @ w / z
    qq = pair @ w / z
    defect = float(np.abs(qq - np.outer(q, q)).sum() / f.n**2) if f.n and f.m else 0.0
    mean_overlap = float(np.mean(q * q + (1 - q) * (1 - q))) if f.n else float("nan")
    return ExactSummary(logZ, q, defect, mean_overlap)


# --------------------------------------------------------- bucket elimination

def _clause_log_table(signs, beta_weight_log):
    k = len(signs)
    table = np.zeros((2,) * k)
    # bit 1 means +1; the literal is false when the value is -sign
    viol = tuple(0 if s > 0 else 1 for s in signs)
    table[viol] = beta_weight_log
    return table


def _expand(vars_, table, union):
    shape = [2 if u in vars_ else 1 for u in union]
    return table.reshape(shape)


def eliminate_logZ(f: Formula, p: ModelParams, clamp: dict | None = None, max_width: int = 22) -> float:
    """log Z by min-degree bucket elimination (exact; cost exponential in width)."""
    logw = -p.beta if p.finite else -np.inf
    factors = []
    for vs, ss in zip(f.var, f.sign):
        order = np.argsort(vs)
        factors.append((tuple(int(v) for v in vs[order]), _clause_log_table(ss[order], logw)))
    for x, val in (clamp or {}).items():
        factors.append(((int(x),), np.array([-np.inf, 0.0]) if val > 0 else np.array([0.0, -np.inf])))
    touched = {v for vs, _ in factors for v in vs}
    const = (f.n - len(touched)) * math.log(2.0)

    remaining = set(touched)
    with np.errstate(invalid="ignore", divide="ignore"):
        while remaining:
            # neighbourhood size of each candidate in the current interaction graph
            def width(v):
                return len({u for vs, _ in factors if v in vs for u in vs})
            v = min(sorted(remaining), key=width)
            bucket = [fc for fc in factors if v in fc[0]]
            factors = [fc for fc in factors if v not in fc[0]]
            union = tuple(sorted({u for vs, _ in bucket for u in vs}))
            if len(union) > max_width:
                raise ResourceLimit(f"elimination width {len(union)} exceeds {max_width}")
            joint = sum(_expand(vs, t, union) for vs, t in bucket)
            joint = np.broadcast_to(joint, (2,) * len(union))
            axis = union.index(v)
            reduced = logsumexp(joint, axis=axis)
            rest = union[:axis] + union[axis + 1:]
            factors.append((rest, np.asarray(reduced)))
            remaining.discard(v)
    return float(const + sum(float(t) for _, t in factors))


def eliminate_marginals(f: Formula, p: ModelParams, max_width: int = 22) -> np.ndarray:
    logZ = eliminate_logZ(f, p, max_width=max_width)
    return np.array([math.exp(eliminate_logZ(f, p, {x: 1}, max_width) - logZ) for x in range(f.n)])


# ------------------------------------------------------------------ Glauber

@njit(cache=True)
def _glauber_run(state, ntrue, sign, occ_ptr, occ_clause, occ_slot, beta, order, unif, thin, out, out_pos):
    sweeps, n = order.shape
    for s in range(sweeps):
        for t in range(n):
            x = order[s, t]
            cur = state[x] > 0
            dE = 0  # H(+1) - H(-1)
            for o in range(occ_ptr[x], occ_ptr[x + 1]):
                c = occ_clause[o]
                lit_pos = sign[c, occ_slot[o]] > 0
                others = ntrue[c] - (1 if lit_pos == cur else 0)
                if others == 0:
                    dE += -1 if lit_pos else 1
            p_plus = 1.0 / (1.0 + math.exp(beta * dE))
            new = unif[s, t] < p_plus
            if new != cur:
                state[x] = 1 if new else -1
                for o in range(occ_ptr[x], occ_ptr[x + 1]):
                    c = occ_clause[o]
                    if (sign[c, occ_slot[o]] > 0) == new:
                        ntrue[c] += 1
                    else:
                        ntrue[c] -= 1
        out_pos_now = out_pos[0]
        if thin > 0 and (out_pos[1] + 1) % thin == 0 and out_pos_now < out.shape[0]:
            out[out_pos_now, :] = state
            out_pos[0] += 1
        out_pos[1] += 1


def glauber_sample(f: Formula, p: ModelParams, sweeps: int, rng=None, init=None,
                   thin: int = 1, chunk: int = 4096) -> np.ndarray:
    """Heat-bath chain; returns the state after every ``thin``-th sweep.

    One sweep updates all n sites once in a fresh uniformly random order.
    The result has shape ``(sweeps // thin, n)`` with entries +/-1.
    """
    if not p.finite:
        raise InvalidInput("Glauber dynamics needs finite beta")
    rng = make_rng(rng)
    n = f.n
    state = (as_assignment(init, n) if init is not None else
             (2 * rng.integers(0, 2, size=n) - 1).astype(np.int8)).copy()
    var, sign, ptr, oc, os_ = _kernel_args(f)
    ntrue = (sign == state[var]).sum(axis=1).astype(np.int64) if f.m else np.zeros(0, np.int64)
    out = np.empty((sweeps // thin, n), dtype=np.int8)
    pos = np.zeros(2, dtype=np.int64)
    done = 0
    base = np.arange(n, dtype=np.int64)
    while done < sweeps:
        s = min(chunk, sweeps - done)
        order = rng.permuted(np.broadcast_to(base, (s, n)), axis=1)
        unif = rng.random((s, n))
        _glauber_run(state, ntrue, sign, ptr, oc, os_, float(p.beta), order, unif, thin, out, pos)
        done += s
    return out


def glauber_kernel(f: Formula, p: ModelParams) -> np.ndarray:
    """Transition matrix of one random-site heat-bath update, on bit-pattern indices."""
    if not p.finite:
        raise InvalidInput("needs finite beta")
    n = f.n
    H = energies(f, cap=12).astype(np.float64)
    size = 1 << n
    K = np.zeros((size, size))
    for s in range(size):
        for x in range(n):
            up, dn = s | (1 << x), s & ~(1 << x)
            p_up = 1.0 / (1.0 + math.exp(p.beta * (H[up] - H[dn])))
            K[s, up] += p_up / n
            K[s, dn] += (1.0 - p_up) / n
    return K


def assignment_index(a) -> int:
    """Bit-pattern index of a +/-1 assignment (bit x set when a[x] = +1)."""
    a = np.asarray(a)
    return int(np.dot((a > 0).astype(np.int64), 1 << np.arange(a.size, dtype=np.int64)))
