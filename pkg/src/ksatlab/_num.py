"""Small numerically careful helpers used across modules."""

from __future__ import annotations

import math

import numpy as np

LN2 = math.log(2.0)


def softplus(x):
    """log(1 + e^x) without overflow."""
    return np.logaddexp(0.0, x)


def log_sigmoid(x):
    """log(e^x / (1 + e^x))."""
    return -np.logaddexp(0.0, -x)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return np.log(p) - np.log1p(-p)


def log1mexp(x):
    """log(1 - e^x) for x <= 0, accurate on both sides of -ln 2."""
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        near = x > -LN2
        out = np.where(near, np.log(-np.expm1(np.where(near, x, -1.0))),
                       np.log1p(-np.exp(np.where(near, -1.0, x))))
    return out if out.ndim else float(out)


def log_clause_factor(log_penalty, log_prod):
    """log(1 - penalty * prod) given log(penalty) and log(prod)."""
    return log1mexp(log_penalty + log_prod)


def poisson_cutoff(lam: float, tail: float = 1e-17) -> int:
    """An upper index K with P[Poisson(lam) > K] < tail."""
    from scipy.stats import poisson

    if lam <= 0:
        return 0
    k = poisson.isf(tail, lam)
    if not math.isfinite(k):
        # isf loses precision far in the tail; fall back to a generous bound
        k = lam + 12.0 * math.sqrt(lam) + 40.0
    return int(k) + 2
