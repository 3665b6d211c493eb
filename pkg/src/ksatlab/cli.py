"""Command-line experiment runner.

Every subcommand prints one JSON record (or CSV for ``moments``) to stdout
or ``--out``.  Records carry the command, the parameters and the seed so a
run can be repeated exactly; they hold no wall-clock data unless
``--timing`` is given, which keeps repeated runs byte-identical.
"""

from __future__ import annotations

import argparse
import io
import json
import math
import os
import sys
import time

import numpy as np
from scipy.stats import ks_2samp

from . import __version__
from . import bp as bp_mod
from . import density, exact, rsb, scalars, tree
from .errors import InvalidInput, KsatError, ResourceLimit
from .io import read_dimacs, read_population, write_dimacs, write_population
from .model import Formula, ModelParams, gen_planted, gen_random, hamiltonian, planted_violation_prob

SCHEMA_VERSION = 1


# ----------------------------------------------------------------- helpers

def _beta(text: str) -> float:
    if text.strip().lower() in ("inf", "infinity", "∞"):
        return math.inf
    try:
        v = float(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad beta {text!r}") from exc
    return v


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "NaN"
        if math.isinf(x):
            return "INF" if x > 0 else "-INF"
        return x
    return x


def _emit_file(text: str, path: str):
    with open(path, "w") as fh:
        fh.write(text)


def _emit(text: str, out):
    if out:
        _emit_file(text, out)
    else:
        sys.stdout.write(text)


def _record(args, params: dict, results: dict, started: float) -> dict:
    rec = {"command": args.command, "params": params, "seed": args.seed,
           "version": __version__, "schema": SCHEMA_VERSION, "results": results}
    if args.timing:
        rec["wall_time"] = time.perf_counter() - started
        rec["threads"] = args.threads
    return rec


def _params(args) -> ModelParams:
    if getattr(args, "offset", None) is not None:
        return ModelParams.from_offset(args.k, args.offset, args.beta)
    if args.d is None and getattr(args, "m", None) and getattr(args, "n", None):
        return ModelParams(args.k, args.k * args.m / args.n, args.beta)
    if args.d is None:
        raise InvalidInput("--d (or --offset) is required")
    return ModelParams(args.k, args.d, args.beta)


def _formula(args, p: ModelParams | None, rng) -> Formula:
    if args.clauses:
        f, _ = read_dimacs(args.clauses)
        n = max(f.n, args.n or 0)
        return Formula(n, f.var, f.sign, k=f.k)
    if p is None or args.n is None:
        raise InvalidInput("give --clauses, or --n with --k/--d to draw a random formula")
    return gen_random(p, args.n, rng)


# ------------------------------------------------------------- subcommands

def cmd_gen(args, rng):
    p = _params(args)
    if args.planted:
        f, sigma = gen_planted(p, args.n, rng, m=args.m)
    else:
        f, sigma = gen_random(p, args.n, rng, m=args.m), None
    res = {"n": f.n, "m": f.m, "k": f.k}
    meta = {"k": p.k, "d": p.d, "n": f.n, "seed": args.seed, "planted": bool(args.planted)}
    if sigma is not None:
        meta["planted_assignment"] = sigma.tolist()
        res["violated_by_planted"] = hamiltonian(f, sigma)
    if args.write:
        write_dimacs(f, args.write, meta)
        res["file"] = args.write
    else:
        res["clauses"] = [[int(s) * (int(v) + 1) for v, s in zip(vs, ss)] for vs, ss in zip(f.var, f.sign)]
    return p.as_dict() | {"n": args.n, "m": args.m, "planted": bool(args.planted)}, res


def cmd_bp(args, rng):
    p = ModelParams(args.k, args.d or 1.0, args.beta) if args.clauses else _params(args)
    f = _formula(args, p, rng)
    p = ModelParams(f.k or args.k, p.d, p.beta)
    rows = []
    cb = None
    if args.trace:
        cb = lambda t, delta, m: rows.append(f"{t},{delta!r},{bp_mod.bethe_free_energy(f, p, m)!r}\n")
    msgs, iters, conv = bp_mod.run_bp(f, p, args.iters, args.tol, damping=args.damping, callback=cb)
    if args.trace:
        _emit_file("iteration,max_delta,bethe_value\n" + "".join(rows), args.trace)
    res = {"n": f.n, "m": f.m, "iterations": iters, "converged": conv,
           "bethe_free_entropy": bp_mod.bethe_free_energy(f, p, msgs)}
    if args.marginals:
        res["marginals"] = bp_mod.bp_marginals(f, p, msgs)
    return p.as_dict() | {"n": f.n, "clauses": args.clauses}, res


def cmd_exact(args, rng):
    p = ModelParams(args.k, args.d or 1.0, args.beta) if args.clauses else _params(args)
    f = _formula(args, p, rng)
    p = ModelParams(f.k or args.k, p.d, p.beta)
    res = {"n": f.n, "m": f.m, "method": args.method,
           "logZ": exact.exact_logZ(f, p, method=args.method),
           "marginals": exact.exact_marginals(f, p, method=args.method)}
    if args.summary:
        s = exact.exact_summary(f, p)
        res |= {"rs_defect": s.pair_defect, "mean_overlap": s.mean_overlap}
    return {"k": p.k, "beta": p.as_dict()["beta"], "n": f.n, "clauses": args.clauses}, res


def _quantiles(x):
    q = np.quantile(x, [0.01, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99])
    return dict(zip(["q01", "q10", "q25", "q50", "q75", "q90", "q99"], q.tolist()))


def cmd_tree(args, rng):
    p = _params(args)
    roots = tree.root_marginal_samples(p, args.depth, args.count, None, rng)
    res = {"count": roots.size, "mean": float(roots.mean()), "std": float(roots.std()),
           "quantiles": _quantiles(roots)}
    if args.compare:
        pop = density.Population(np.zeros(args.count))
        for _ in range(args.depth):
            pop = density.apply_R(pop, p, rng, args.count)
        ks = ks_2samp(roots, pop.samples)
        res["ks_vs_density"] = {"statistic": float(ks.statistic), "pvalue": float(ks.pvalue)}
    return p.as_dict() | {"depth": args.depth, "count": args.count}, res


def cmd_popdyn(args, rng):
    p = _params(args)
    fp = density.fixed_point(p, args.pop, args.iters, args.tol, rng, args.mode, args.pool)
    pop = fp.population
    tails = density.tail_report(pop, p.k)
    res = {"converged": fp.converged, "iterations": fp.iterations, "trace": fp.trace,
           "mean": pop.mean(), "stderr": pop.stderr(), "tails": tails.as_dict(),
           "quantiles": _quantiles(pop.samples)}
    if args.contraction:
        rep = density.contraction_probe(p, min(args.pop, 20_000), pairs=args.contraction, rng=rng,
                                        pool_size=args.pool)
        res["contraction"] = rep.as_dict()
    if args.save:
        write_population(args.save, pop.samples, p.as_dict() | {"seed": args.seed})
        res["saved"] = args.save
    return p.as_dict() | {"pop": args.pop, "iters": args.iters, "mode": args.mode}, res


def _moments_csv(args):
    if args.table == "thresholds":
        buf = io.StringIO()
        buf.write("k,d_sat_asym,d_star,rsb_low\n")
        for k in range(max(3, args.k_min), args.k_max + 1):
            t = scalars.reference_thresholds(k)
            buf.write(f"{k},{t['d_sat_asym']!r},{t['d_star']!r},{t['rsb_low']!r}\n")
        return buf.getvalue()
    d = args.d if args.d is not None else scalars.reference_thresholds(args.k)["d_star"]
    p = ModelParams(args.k, d, args.beta)
    buf = io.StringIO()
    if args.table == "f":
        alpha = np.arange(1, args.grid + 1) / (args.grid + 1.0)
        v, d1, d2 = scalars.f_alpha(alpha, p)
        half = 2.0 * scalars.first_moment_rate(p)
        buf.write("alpha,f,d1,d2,f_half\n")
        for row in zip(alpha, v, d1, d2):
            buf.write(",".join(repr(float(x)) for x in row) + f",{half!r}\n")
    else:
        u2 = scalars.compute_u(p.k, p.beta) ** 2
        buf.write("omega,s,F\n")
        for i in range(1, args.grid + 1):
            om = 0.5 * i / (args.grid + 1.0)
            buf.write(f"{om!r},{u2!r},{scalars.F_of(om, u2, p)!r}\n")
    return buf.getvalue()


def cmd_rsb(args, rng):
    if args.mode == "scalar":
        return {"c": args.c}, rsb.rsb_scalar_gap(args.c)
    p = _params(args)
    if args.mode == "bethe":
        if args.pop_file:
            samples, _ = read_population(args.pop_file)
            pop = density.Population.from_samples(samples)
        elif args.delta_half:
            pop = density.Population(np.zeros(1))
        else:
            pop = density.fixed_point(p, args.pop, rng=rng).population
        est = rsb.bethe_functional(pop, p, args.samples, rng)
        res = est.as_dict()
        if args.delta_half:
            res["closed_form"] = rsb.bethe_delta_half_oracle(p)
        res["rs_reference"] = 2.0 ** -p.k * (p.c_offset - math.log(2) / 2)
        return p.as_dict() | {"samples": args.samples}, res
    if args.mode == "bound":
        est = rsb.interpolation_bound(rsb.ATOMIC, args.y, p, args.samples, rng)
        return p.as_dict() | {"y": args.y, "samples": args.samples}, est.as_dict()
    out = rsb.minimize_atomic_bound(p, samples=args.samples, rng=rng)
    return p.as_dict() | {"samples": args.samples}, out


def cmd_planted(args, rng):
    p = _params(args)
    f, sigma = gen_planted(p, args.n, rng, m=args.m)
    viol = hamiltonian(f, sigma)
    q = planted_violation_prob(p)
    sigma_ = math.sqrt(q * (1 - q) / max(f.m, 1))
    rate = viol / max(f.m, 1)
    return p.as_dict() | {"n": args.n, "m": args.m}, {
        "m": f.m, "violated": viol, "rate": rate, "expected": q, "sigma": sigma_,
        "z": (rate - q) / sigma_ if sigma_ > 0 else 0.0}


def cmd_diag(args, rng):
    p = ModelParams(args.k, args.d or 1.0, args.beta) if args.clauses else _params(args)
    f = _formula(args, p, rng)
    p = ModelParams(f.k or args.k, p.d, p.beta)
    res = {"n": f.n, "m": f.m}
    msgs, iters, conv = bp_mod.run_bp(f, p, args.iters)
    marg = bp_mod.bp_marginals(f, p, msgs)
    res["bp"] = {"iterations": iters, "converged": conv,
                 "bethe_free_entropy": bp_mod.bethe_free_energy(f, p, msgs)}
    if f.n <= 20:
        s = exact.exact_summary(f, p)
        res["exact"] = {"logZ": s.logZ, "rs_defect": s.pair_defect, "mean_overlap": s.mean_overlap,
                        "max_bp_error": float(np.abs(s.marginals - marg).max())}
        if p.finite:
            res["pseudo_message_gap"] = bp_mod.pseudo_message_gap(f, p, args.iters)
    if p.finite:
        res["polarization"] = rsb.polarization_check(marg, p.k, p.beta)
    a = np.where(marg >= 0.5, 1, -1).astype(np.int8)
    st = rsb.stable_set(f, a)
    res["stable_set_size"] = len(st)
    res["support_total"] = int(rsb.support_counts(f, a).sum())
    return p.as_dict() | {"n": f.n, "clauses": args.clauses}, res


# ------------------------------------------------------------------ parser

def _common(sp, model=True):
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--threads", type=int, default=int(os.environ.get("KSAT_THREADS", "1")),
                    help="worker count (default from KSAT_THREADS); results do not depend on it")
    sp.add_argument("--out", help="write the record here instead of stdout")
    sp.add_argument("--timing", action="store_true", help="add wall_time and threads to the record")
    if model:
        sp.add_argument("--k", type=int, default=3)
        sp.add_argument("--d", type=float)
        sp.add_argument("--offset", type=float, help="set d = k (2^k ln2 - offset)")
        sp.add_argument("--beta", type=_beta, default=1.0, help="inverse temperature or 'inf'")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ksatlab", description="Random k-SAT experiments at finite temperature.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("gen", help="draw a random or planted formula")
    _common(sp)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--m", type=int)
    sp.add_argument("--planted", action="store_true")
    sp.add_argument("--write", help="DIMACS output path (a JSON sidecar is written next to it)")

    for name, helptext in (("bp", "belief propagation on a formula"),
                           ("exact", "exact partition function and marginals"),
                           ("diag", "BP, exact and stable-set diagnostics")):
        sp = sub.add_parser(name, help=helptext)
        _common(sp)
        sp.add_argument("--n", type=int)
        sp.add_argument("--clauses", help="DIMACS file")
        sp.add_argument("--iters", type=int, default=1000)
        if name == "bp":
            sp.add_argument("--tol", type=float, default=1e-10)
            sp.add_argument("--damping", type=float, default=0.0)
            sp.add_argument("--trace", help="per-iteration CSV trace path")
            sp.add_argument("--marginals", action="store_true", help="include marginals in the record")
        if name == "exact":
            sp.add_argument("--method", choices=["enumerate", "eliminate", "auto"], default="auto")
            sp.add_argument("--summary", action="store_true", help="add RS defect and mean overlap")

    sp = sub.add_parser("tree", help="root marginals of Galton-Watson trees")
    _common(sp)
    sp.add_argument("--depth", type=int, default=3)
    sp.add_argument("--count", type=int, default=10_000)
    sp.add_argument("--compare", action="store_true", help="KS test against population dynamics")

    sp = sub.add_parser("popdyn", help="population dynamics fixed point")
    _common(sp)
    sp.add_argument("--pop", type=int, default=100_000)
    sp.add_argument("--iters", type=int, default=60)
    sp.add_argument("--tol", type=float)
    sp.add_argument("--mode", choices=["auto", "direct", "pooled"], default="auto")
    sp.add_argument("--pool", type=int, help="pool size for pooled compound sums")
    sp.add_argument("--contraction", type=int, default=0, help="number of contraction pairs to probe")
    sp.add_argument("--save", help="write the population snapshot here")

    sp = sub.add_parser("moments", help="CSV tables of the moment functions")
    _common(sp)
    sp.add_argument("--table", choices=["f", "F", "thresholds"], default="f")
    sp.add_argument("--grid", type=int, default=1000)
    sp.add_argument("--k-min", type=int, default=3)
    sp.add_argument("--k-max", type=int, default=30)

    sp = sub.add_parser("rsb", help="Bethe functional, interpolation bound and scalar gap")
    _common(sp)
    sp.add_argument("--mode", choices=["bethe", "bound", "scan", "scalar"], default="bethe")
    sp.add_argument("--samples", type=int, default=100_000)
    sp.add_argument("--pop", type=int, default=100_000)
    sp.add_argument("--pop-file")
    sp.add_argument("--delta-half", action="store_true", help="use the point mass at 1/2")
    sp.add_argument("--y", type=float, default=1.0)
    sp.add_argument("--c", type=float, default=1.0, help="offset for --mode scalar")

    sp = sub.add_parser("planted", help="planted formula violation statistics")
    _common(sp)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--m", type=int)
    return ap


COMMANDS = {"gen": cmd_gen, "bp": cmd_bp, "exact": cmd_exact, "tree": cmd_tree, "popdyn": cmd_popdyn,
            "rsb": cmd_rsb, "planted": cmd_planted, "diag": cmd_diag}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    started = time.perf_counter()
    try:
        if args.command == "moments":
            _emit(_moments_csv(args), args.out)
            return 0
        rng = np.random.default_rng(args.seed)
        params, results = COMMANDS[args.command](args, rng)
        rec = _record(args, params, results, started)
        _emit(json.dumps(_jsonable(rec), sort_keys=True, indent=2) + "\n", args.out)
        return 0
    except ResourceLimit as exc:
        print(f"ksatlab: resource limit: {exc}", file=sys.stderr)
        return 3
    except InvalidInput as exc:
        parser.print_usage(sys.stderr)
        print(f"ksatlab: invalid input: {exc}", file=sys.stderr)
        return 2
    except (KsatError, OSError, ValueError) as exc:
        print(f"ksatlab: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
