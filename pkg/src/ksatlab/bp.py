"""Belief Propagation on the clause/variable factor graph.

Messages live on directed edges indexed by (clause, slot) and are stored as
log-odds ``log(mu(+1) / mu(-1))``, so every stored pair is normalised by
construction.  Updates are synchronous: clause-to-variable messages at time
t+1 come from variable-to-clause messages at time t, and variable-to-clause
messages at t+1 from clause-to-variable messages at t+1.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from ._num import log1mexp, log_sigmoid, sigmoid, softplus
from .errors import InvalidInput, ResourceLimit
from .model import Formula, ModelParams

#: floor on 1 - P used for hard constraints (beta = INF)
EPS_FLOOR = 1e-300
_LOG_FLOOR = math.log(EPS_FLOOR)


@dataclass
class MessageSet:
    """Log-odds of both message directions on every (clause, slot) edge."""

    c2v: np.ndarray
    v2c: np.ndarray
    t: int = 0

    def copy(self) -> "MessageSet":
        return MessageSet(self.c2v.copy(), self.v2c.copy(), self.t)

    def c2v_prob(self) -> np.ndarray:
        return sigmoid(self.c2v)

    def v2c_prob(self) -> np.ndarray:
        return sigmoid(self.v2c)


def init_messages(f: Formula) -> MessageSet:
    """All messages 1/2."""
    shape = (f.m, f.k)
    return MessageSet(np.zeros(shape), np.zeros(shape), 0)


def _log_penalty(p: ModelParams) -> float:
    return math.log(p.penalty)


def _clause_log_factor(logc: float, logprod, hard: bool):
    out = log1mexp(logc + logprod)
    if hard:
        low = out < _LOG_FLOOR
        if np.any(low):
            warnings.warn("hard clause with all other literals certainly false; "
                          f"factor floored at {EPS_FLOOR:g}", RuntimeWarning, stacklevel=3)
            out = np.maximum(out, _LOG_FLOOR)
    return out


def _leave_one_out_sum(x: np.ndarray) -> np.ndarray:
    """Row-wise sums of all entries except the own one (prefix + suffix, no subtraction)."""
    m, k = x.shape
    pre = np.zeros((m, k + 1))
    np.cumsum(x, axis=1, out=pre[:, 1:])
    suf = np.zeros((m, k + 1))
    np.cumsum(x[:, ::-1], axis=1, out=suf[:, 1:])
    return pre[:, :k] + suf[:, k - 1::-1]


def _variable_totals(f: Formula, c2v: np.ndarray) -> np.ndarray:
    return np.bincount(f.var.ravel(), weights=c2v.ravel(), minlength=f.n)


def clause_update(f: Formula, p: ModelParams, v2c: np.ndarray) -> np.ndarray:
    """New clause-to-variable log-odds from variable-to-clause log-odds."""
    if f.m == 0:
        return np.zeros((0, f.k))
    J = f.sign.astype(np.float64)
    # log mu_{x->a}(value making the literal false)
    log_false = log_sigmoid(-J * v2c)
    logP = _leave_one_out_sum(log_false)
    L = _clause_log_factor(_log_penalty(p), logP, not p.finite)
    # satisfying value weight 1, violating value weight 1 - c P
    return -J * L


def variable_update(f: Formula, c2v: np.ndarray) -> np.ndarray:
    """New variable-to-clause log-odds: sum of the other incoming clause messages."""
    if f.m == 0:
        return np.zeros((0, f.k))
    tot = _variable_totals(f, c2v)
    return tot[f.var] - c2v


def bp_step(f: Formula, p: ModelParams, msgs: MessageSet, damping: float = 0.0) -> MessageSet:
    """One synchronous update; the input is not modified."""
    if not 0.0 <= damping < 1.0:
        raise InvalidInput("damping must lie in [0, 1)")
    c2v = clause_update(f, p, msgs.v2c)
    if damping:
        c2v = (1.0 - damping) * c2v + damping * msgs.c2v
    v2c = variable_update(f, c2v)
    if damping:
        v2c = (1.0 - damping) * v2c + damping * msgs.v2c
    return MessageSet(c2v, v2c, msgs.t + 1)


def max_change(a: MessageSet, b: MessageSet) -> float:
    if a.c2v.size == 0:
        return 0.0
    return float(max(np.max(np.abs(a.c2v - b.c2v)), np.max(np.abs(a.v2c - b.v2c))))


def run_bp(f: Formula, p: ModelParams, t_max: int = 1000, tol: float = 1e-10,
           msgs: MessageSet | None = None, damping: float = 0.0, callback=None):
    """Iterate ``bp_step`` until the max log-odds change drops below ``tol``.

    Returns ``(messages, iterations, converged)``.  ``callback(t, delta, msgs)``
    is invoked after every step when given.
    """
    if t_max < 1 or not tol > 0:
        raise InvalidInput("need t_max >= 1 and tol > 0")
    cur = init_messages(f) if msgs is None else msgs
    for it in range(1, t_max + 1):
        new = bp_step(f, p, cur, damping)
        delta = max_change(cur, new)
        cur = new
        if callback is not None:
            callback(it, delta, cur)
        if delta < tol:
            return cur, it, True
    return cur, t_max, False


def bp_marginals(f: Formula, p: ModelParams, msgs: MessageSet) -> np.ndarray:
    """P(sigma_x = +1) for every variable; isolated variables get 1/2."""
    return sigmoid(_variable_totals(f, msgs.c2v))


def bp_marginal(f: Formula, p: ModelParams, msgs: MessageSet, x: int) -> float:
    if not 0 <= x < f.n:
        raise InvalidInput(f"variable {x} out of range")
    return float(bp_marginals(f, p, msgs)[x])


def bethe_free_energy(f: Formula, p: ModelParams, msgs: MessageSet) -> float:
    """Variable terms + clause terms - edge terms of the Bethe free entropy."""
    if f.m == 0:
        return f.n * math.log(2.0)
    c2v, v2c = msgs.c2v, msgs.v2c
    flat = f.var.ravel()
    log_up = np.bincount(flat, weights=log_sigmoid(c2v).ravel(), minlength=f.n)
    log_dn = np.bincount(flat, weights=log_sigmoid(-c2v).ravel(), minlength=f.n)
    var_term = np.logaddexp(log_up, log_dn).sum()

    J = f.sign.astype(np.float64)
    log_false = log_sigmoid(-J * v2c).sum(axis=1)
    clause_term = _clause_log_factor(_log_penalty(p), log_false, not p.finite).sum()

    # log sum_s mu_{a->x}(s) mu_{x->a}(s)
    edge = softplus(c2v + v2c) - softplus(c2v) - softplus(v2c)
    return float(var_term + clause_term - edge.sum())


def pseudo_message_gap(f: Formula, p: ModelParams, t: int, cap_n: int = 20) -> float:
    """Mean over edges of |exact cavity marginal - BP message| in both directions.

    The variable-to-clause reference for edge (a, x) is the marginal of x in the
    formula without clause a; the clause-to-variable reference is the marginal
    of x when every clause of x except a is removed.
    """
    from .exact import exact_marginals

    if f.n > cap_n:
        raise ResourceLimit(f"n = {f.n} exceeds cap {cap_n} for cavity enumeration")
    if f.m == 0:
        return 0.0
    msgs = init_messages(f)
    for _ in range(t):
        msgs = bp_step(f, p, msgs)
    bp_v2c = msgs.v2c_prob()
    bp_c2v = msgs.c2v_prob()

    ptr, occ_clause, _ = f.occurrences()
    full = exact_marginals(f, p, cap=cap_n)
    total = 0.0
    for a in range(f.m):
        without_a = exact_marginals(f.remove_clauses([a]), p, cap=cap_n)
        for j in range(f.k):
            x = int(f.var[a, j])
            others = [int(b) for b in occ_clause[ptr[x]:ptr[x + 1]] if b != a]
            cav_c2v = exact_marginals(f.remove_clauses(others), p, cap=cap_n)[x] if others else full[x]
            total += abs(without_a[x] - bp_v2c[a, j]) + abs(cav_c2v - bp_c2v[a, j])
    return total / (f.m * f.k)
