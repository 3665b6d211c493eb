"""Closed-form scalar functions of (k, d, beta).

Conventions: logs are natural, ``c = 1 - exp(-beta)`` is the clause penalty
(1 at beta = INF) and ``delta = 1 - 2p``.  The overlap functional and its
solver accept an optional ``dps`` to run in mpmath at that many digits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath
import numpy as np
from scipy.optimize import brentq, root
from scipy.special import xlogy
from scipy.stats import poisson

from ._num import LN2
from .errors import InvalidInput, SolverFailure
from .model import ModelParams


def _penalty(beta: float) -> float:
    if not beta > 0:
        raise InvalidInput("beta must be positive")
    return 1.0 if math.isinf(beta) else -math.expm1(-beta)


# ------------------------------------------------------------------- p and u

def solve_delta(k: int, beta: float) -> float:
    """delta = 1 - 2p, the root of delta = c ((1 + delta)/2)^k nearest to 0."""
    if k < 2:
        raise InvalidInput("k must be >= 2")
    c = _penalty(beta)
    if c == 0.0:
        return 0.0

    def g(x):
        return x - c * math.exp(k * (math.log1p(x) - LN2))

    # g is concave, negative at 0; bracket up to its maximiser
    top = (2.0 / (c * k)) ** (1.0 / (k - 1)) * 2.0 - 1.0
    hi = min(1.0, max(top, 0.0))
    if hi == 0.0 or g(hi) < 0.0:
        if g(1.0) >= 0.0 and c < 1.0:
            hi = 1.0
        else:
            raise InvalidInput(f"no root with p > 0 for k={k}, beta={beta}")
    if g(hi) == 0.0 and hi == 1.0 and c == 1.0 and top >= 1.0:
        raise InvalidInput(f"only the trivial root p = 0 exists for k={k} at beta=INF")
    x = brentq(g, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    for _ in range(3):  # Newton polish
        gp = 1.0 - c * k / 2.0 * math.exp((k - 1) * (math.log1p(x) - LN2))
        if gp == 0.0:
            break
        step = g(x) / gp
        if not math.isfinite(step) or abs(step) > abs(x) + 1e-300:
            break
        x -= step
    return x


def solve_p(k: int, beta: float) -> float:
    """Root p in (0, 1/2] of 1 - 2p - (1 - e^-beta)(1 - p)^k = 0."""
    return 0.5 * (1.0 - solve_delta(k, beta))


def p_residual(k: int, beta: float, p: float) -> float:
    c = _penalty(beta)
    return (1.0 - c) - c * math.expm1(k * math.log1p(-p)) - 2.0 * p


def compute_u(k: int, beta: float, limit: bool = False) -> float:
    """u = (1 - 2p) / (2p (e^beta - 1)), evaluated as e^-beta (1-p)^k / (2p)."""
    if math.isinf(beta):
        if limit:
            return 0.0
        raise InvalidInput("u is undefined at beta = INF (its limit 0 needs limit=True)")
    p = solve_p(k, beta)
    return math.exp(-beta + k * math.log1p(-p)) / (2.0 * p)


@dataclass(frozen=True)
class RateParams:
    p: float
    u: float
    c: float


def rate_params(params: ModelParams) -> RateParams:
    u = compute_u(params.k, params.beta, limit=True)
    return RateParams(solve_p(params.k, params.beta), u, params.c_offset)


# ------------------------------------------------------- moment rates, f(alpha)

def first_moment_rate(params: ModelParams) -> float:
    """ln 2 + (d/k) ln(1 - 2^-k (1 - e^-beta))."""
    return LN2 + params.d / params.k * math.log1p(-(2.0 ** -params.k) * params.penalty)


def balanced_lower_bound(params: ModelParams) -> float:
    """(1 - (k-1)d/k) ln2 - (d/2) ln(p(1-p)) + (d/k) ln p, in a cancellation-free form."""
    k, d = params.k, params.d
    delta = solve_delta(k, params.beta)
    return LN2 - d / 2.0 * math.log1p(-delta * delta) + d / k * math.log1p(-delta)


def _f_parts(a, b, params: ModelParams):
    """Value and two derivatives of f at alpha = a, with b = 1 - a given separately."""
    k, d, c = params.k, params.d, params.penalty
    ak1 = np.power(a, k - 1)
    ak2 = np.power(a, k - 2)
    A1 = -(2.0 ** (1 - k)) * c + 2.0 ** (-k) * c * c * a * ak1  # A - 1
    A = 1.0 + A1
    ent = -xlogy(a, a) - xlogy(b, b)
    val = LN2 + ent + d / k * np.log1p(A1)
    g1 = d * c * c * ak1 / (2.0**k * A)
    with np.errstate(divide="ignore"):
        d1 = np.log(b) - np.log(a) + g1
        d2 = (-1.0 / a - 1.0 / b + (k - 1) * d * c * c * ak2 / (2.0**k * A)
              - k * d * c**4 * ak1 * ak1 / (4.0**k * A * A))
    return val, d1, d2


def f_alpha(alpha, params: ModelParams):
    """``(f, f', f'')`` of the second-moment exponent at overlap ``alpha``."""
    a = np.asarray(alpha, dtype=np.float64)
    if np.any((a < 0) | (a > 1)):
        raise InvalidInput("alpha must lie in [0, 1]")
    v, d1, d2 = _f_parts(a, 1.0 - a, params)
    if a.ndim == 0:
        return float(v), float(d1), float(d2)
    return v, d1, d2


def _f_logit(t, params):
    t = np.asarray(t, dtype=np.float64)
    a = 1.0 / (1.0 + np.exp(-t))
    b = 1.0 / (1.0 + np.exp(t))
    return _f_parts(a, b, params)


@dataclass(frozen=True)
class Landscape:
    alpha_star: float
    alpha_low_star: float
    local_min: float
    global_max_location: float
    maxima: list
    minima: list

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("alpha_star", "alpha_low_star", "local_min", "global_max_location", "maxima", "minima")}


def scan_f(params: ModelParams, grid_resolution: int = 4000) -> Landscape:
    """Stationary points of f on (0, 1).

    The grid is uniform in logit(alpha) so overlaps within 2^-2k of 1 are
    resolved; sign changes of f' are refined with Brent's method.
    ``alpha_star`` is the local maximum closest to 1/2, ``alpha_low_star``
    the local maximum closest to 1, ``local_min`` the local minimum between
    them (NaN when absent).
    """
    T = 2 * params.k * LN2 + 10.0
    t = np.linspace(-T, T, int(grid_resolution) | 1)
    t = np.union1d(t, [0.0])
    _, d1, _ = _f_logit(t, params)
    roots = []
    for i in np.flatnonzero(np.sign(d1[:-1]) * np.sign(d1[1:]) <= 0):
        if d1[i] == 0.0:
            roots.append(t[i])
            continue
        if d1[i + 1] == 0.0:
            continue
        roots.append(brentq(lambda x: float(_f_logit(x, params)[1]), t[i], t[i + 1], xtol=1e-14, rtol=1e-15))
    maxima, minima = [], []
    for r in roots:
        v, _, d2 = _f_logit(r, params)
        alpha = float(1.0 / (1.0 + math.exp(-r)))
        (maxima if d2 < 0 else minima).append((alpha, float(v), float(r)))
    upper = [m for m in maxima if m[0] >= 0.5]
    if not upper:
        nan = float("nan")
        return Landscape(nan, nan, nan, nan, maxima, minima)
    near = min(upper, key=lambda m: abs(m[0] - 0.5))
    far = max(upper, key=lambda m: m[2])
    between = [m for m in minima if near[2] < m[2] < far[2]]
    best = max(maxima, key=lambda m: m[1])
    return Landscape(
        alpha_star=near[0],
        alpha_low_star=far[0],
        local_min=between[0][0] if between else float("nan"),
        global_max_location=best[0],
        maxima=[m[0] for m in maxima],
        minima=[m[0] for m in minima],
    )


def one_minus_alpha_low_star(params: ModelParams, grid_resolution: int = 4000) -> float:
    """1 - alpha_low_star computed in logit space (no cancellation)."""
    land = scan_f(params, grid_resolution)
    a = land.alpha_low_star
    t = math.log(a) - math.log1p(-a) if a < 1.0 else float("inf")
    # refine the far root again to get 1 - alpha directly
    far = [m for m in land.maxima if m >= 0.5]
    if not far or not math.isfinite(t):
        return float("nan")
    return 1.0 / (1.0 + math.exp(t))


# --------------------------------------------------------- overlap functional

def _prec(dps):
    """Working digits: never below the caller's context (keeps mpmath.diff usable)."""
    return max(dps or 15, mpmath.mp.dps)


def _ctx(dps):
    if dps is None:
        return math.log, float, math.exp
    return mpmath.log, mpmath.mpf, mpmath.exp


def _kl(mu, nu, log):
    total = 0
    for m, n in zip(mu, nu):
        if m < 0 or n <= 0:
            raise InvalidInput("KL arguments must be a distribution against a positive one")
        if m > 0:
            total += m * log(m / n)
    return total


def _cell_probs(p11, p1m1, k):
    q = 1 - p11 - p1m1  # P(value -1) of one coordinate
    r = 1 - 2 * p1m1 - p11  # P(both -1)
    qk, rk = q**k, r**k
    return q, r, qk, rk


def frak_F(omega, s, p11, p1m1, params: ModelParams, u=None, dps=None):
    """The two four-point KL terms: -D(clause law | induced) + k D(overlap law | pair law)."""
    log, mpf, _ = _ctx(dps)
    with mpmath.workdps(_prec(dps)):
        k = params.k
        omega, s, p11, p1m1 = mpf(omega), mpf(s), mpf(p11), mpf(p1m1)
        u = mpf(compute_u(k, params.beta) if u is None else u)
        q, r, qk, rk = _cell_probs(p11, p1m1, k)
        half = mpf(1) / 2
        first = _kl((s, u - s, u - s, 1 - 2 * u + s), (rk, qk - rk, qk - rk, 1 - 2 * qk + rk), log)
        second = _kl((omega, half - omega, half - omega, omega), (p11, p1m1, p1m1, r), log)
        return -first + k * second


@dataclass(frozen=True)
class OverlapSolution:
    p11: float
    p1m1: float
    pm11: float
    pm1m1: float
    residual: float

    def as_tuple(self):
        return (self.p11, self.p1m1, self.pm11, self.pm1m1)


def frakp_equations(x, omega, s, u, k):
    """Residuals of the two overlap equations in the free unknowns (p11, p1m1)."""
    p11, p1m1 = x
    q, r, qk, rk = _cell_probs(p11, p1m1, k)
    den_a = 1 - 2 * qk + rk
    den_b = qk - rk
    g1 = (1 - 2 * u + s) * p11 / den_a - omega
    g2 = ((u - s) * p1m1 * q ** (k - 1) / den_b
          + (1 - 2 * u + s) * p1m1 * (1 - q ** (k - 1)) / den_a - (1 - 2 * omega) / 2)
    return g1, g2


def _newton(fun, x, tol, max_iter=60, trace=None):
    x = np.asarray(x, dtype=np.float64)
    for _ in range(max_iter):
        g = np.array(fun(x))
        res = float(np.max(np.abs(g)))
        if trace is not None:
            trace.append(res)
        if res < tol:
            return x, res
        h = 1e-7
        J = np.empty((2, 2))
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            J[:, j] = (np.array(fun(x + e)) - np.array(fun(x - e))) / (2 * h)
        try:
            step = np.linalg.solve(J, -g)
        except np.linalg.LinAlgError:
            return x, res
        t = 1.0
        while t > 1e-4:
            cand = x + t * step
            if np.all(cand > 0) and np.all(np.isfinite(fun(cand))) and \
                    np.max(np.abs(fun(cand))) < res:
                break
            t /= 2
        x = x + t * step
    g = np.array(fun(x))
    return x, float(np.max(np.abs(g)))


def solve_frakp(omega, s, params: ModelParams, dps=None, tol=1e-13) -> OverlapSolution:
    """Solve the overlap system for (p11, p1-1) with p-11 = p1-1 and the total equal to 1.

    Newton from (omega, 1/2 - omega) with a Powell-hybrid fallback; with
    ``dps`` the float solution is refined by mpmath's multidimensional root
    finder at that precision.
    """
    k = params.k
    u = compute_u(k, params.beta)
    if not 0.0 <= float(s) <= u:
        raise InvalidInput("s must lie in [0, u]")
    if not 0.0 < float(omega) < 0.5:
        raise InvalidInput("omega must lie in (0, 1/2)")
    w, sf = float(omega), float(s)

    def fun(x):
        return frakp_equations(x, w, sf, u, k)

    trace = []
    x, res = _newton(fun, (w, 0.5 - w), tol, trace=trace)
    if not res < tol:
        sol = root(lambda x: np.array(fun(x)), x0=np.array([w, 0.5 - w]), method="hybr",
                   options={"xtol": 1e-15})
        x = sol.x
        res = float(np.max(np.abs(fun(x))))
        trace.append(res)
    if not res < max(tol, 1e-12):
        raise SolverFailure(f"overlap system did not converge (residual {res:.3g})", trace)
    if dps is None:
        p11, p1m1 = float(x[0]), float(x[1])
        return OverlapSolution(p11, p1m1, p1m1, 1.0 - p11 - 2.0 * p1m1, res)
    with mpmath.workdps(_prec(dps)):
        mw, ms, mu = mpmath.mpf(omega), mpmath.mpf(s), mpmath.mpf(u)
        mu = _u_mp(k, params.beta, dps)
        f1 = lambda a, b: frakp_equations((a, b), mw, ms, mu, k)[0]
        f2 = lambda a, b: frakp_equations((a, b), mw, ms, mu, k)[1]
        a, b = mpmath.findroot([f1, f2], (mpmath.mpf(x[0]), mpmath.mpf(x[1])))
        resid = max(abs(f1(a, b)), abs(f2(a, b)))
        return OverlapSolution(a, b, b, 1 - a - 2 * b, resid)


def _p_mp(k, beta, dps):
    with mpmath.workdps(_prec(dps)):
        c = 1 - mpmath.exp(-mpmath.mpf(beta))
        g = lambda x: x - c * ((1 + x) / 2) ** k
        x = mpmath.findroot(g, mpmath.mpf(solve_delta(k, beta)))
        return (1 - x) / 2


def _u_mp(k, beta, dps):
    with mpmath.workdps(_prec(dps)):
        p = _p_mp(k, beta, dps)
        return mpmath.exp(-mpmath.mpf(beta)) * (1 - p) ** k / (2 * p)


def solve_p_mp(k: int, beta: float, dps: int = 50):
    """p at ``dps`` digits (independent high-precision evaluation)."""
    return _p_mp(k, beta, dps)


def compute_u_mp(k: int, beta: float, dps: int = 50):
    return _u_mp(k, beta, dps)


def F_of(omega, s, params: ModelParams, dps=None):
    """F(omega, s): the overlap functional at the solved (p11, p1-1)."""
    sol = solve_frakp(omega, s, params, dps=dps)
    u = None if dps is None else _u_mp(params.k, params.beta, dps)
    return frak_F(omega, s, sol.p11, sol.p1m1, params, u=u, dps=dps)


def F_stationary_value(params: ModelParams) -> float:
    """Closed form of F(1/4, u^2): -k ln(1 - delta^2) + 2 ln(1 - delta) + 2 beta u."""
    k, beta = params.k, params.beta
    delta = solve_delta(k, beta)
    return -k * math.log1p(-delta * delta) + 2.0 * math.log1p(-delta) + 2.0 * beta * compute_u(k, beta)


# ------------------------------------------------------ Lagrangian overlap

@dataclass(frozen=True)
class LagrangeResult:
    lam: float
    alpha11: np.ndarray
    m_value: float
    omega: float
    constraint: float


def _poisson_table(d: float, trunc: int):
    P = poisson.pmf(np.arange(trunc + 1), d / 2.0)
    tot = np.add.outer(np.arange(trunc + 1), np.arange(trunc + 1)).astype(np.float64)
    return np.outer(P, P), tot


def lagrange_trunc(d: float) -> int:
    return max(50, math.ceil(d + 12.0 * math.sqrt(d)))


def lagrange_omega(lam: float, d: float, trunc: int | None = None) -> float:
    """omega(lambda) = (1/d) sum P P (a+b) alpha11, alpha11 = (1 - tanh(lambda (a+b)/2)) / 4."""
    trunc = lagrange_trunc(d) if trunc is None else trunc
    W, tot = _poisson_table(d, trunc)
    a11 = (1.0 - np.tanh(lam * tot / 2.0)) / 4.0
    return float((W * tot * a11).sum() / d)


def lagrange_overlap(omega_target: float, d: float, trunc: int | None = None) -> LagrangeResult:
    """Maximise the degree-profile entropy subject to weighted overlap ``omega_target``.

    omega(lambda) decreases from 1/2 (lambda -> -inf) through 1/4 (lambda = 0)
    to 0 (lambda -> +inf), so the multiplier is found by bracketing and Brent.
    """
    if not d > 0:
        raise InvalidInput("d must be positive")
    trunc = lagrange_trunc(d) if trunc is None else int(trunc)
    W, tot = _poisson_table(d, trunc)
    S = W * tot

    def constraint(lam):
        return float((S * (1.0 - np.tanh(lam * tot / 2.0)) / 4.0).sum()) - d * omega_target

    lo, hi = -1.0, 1.0
    while constraint(hi) > 0:
        hi *= 2
        if hi > 1e8:
            raise InvalidInput(f"omega {omega_target} is outside the achievable range")
    while constraint(lo) < 0:
        lo *= 2
        if lo < -1e8:
            raise InvalidInput(f"omega {omega_target} is outside the achievable range")
    lam = 0.0 if constraint(0.0) == 0.0 else brentq(constraint, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=400)
    a11 = (1.0 - np.tanh(lam * tot / 2.0)) / 4.0
    m_val = float(-2.0 * (W * (xlogy(a11, a11) + xlogy(0.5 - a11, 0.5 - a11))).sum())
    achieved = float((S * a11).sum())
    return LagrangeResult(lam, a11, m_val, achieved / d, achieved)


# -------------------------------------------------------- reference values

def reference_thresholds(k: int) -> dict:
    """Asymptotic reference degrees (vanishing corrections dropped)."""
    if k < 3:
        raise InvalidInput("k must be >= 3")
    base = 2.0**k * k * LN2
    return {
        "d_sat_asym": base - (1.0 + LN2) / 2.0 * k,
        "d_star": base - 10.0 * k * k,
        "rsb_low": base - k * 3.0 * LN2 / 2.0,
    }
