"""Command-line experiment runner.

Exit status: 0 when everything checked passes, 1 on a failed assertion or
non-convergence, 2 on a configuration error.  CSV and JSON artefacts go to
``--out`` if given, else into ``$CONDEXP_OUT`` under a default name, else to
stdout (the one-line summary then goes to stderr).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import acceptance, compat, gaussian, kernels, sampler
from .atomic_ext import SplitSpace, extend_rv, norm_transfer, uplus, verify_transfer
from .loader import (
    SCHEMA, ConfigError, load_space, parse_schedule, read_json, require, space_to_doc,
)
from .operators import InvariantError, ScheduleError, iterate, limit_predict
from .prob_space import (
    SpaceError, completion, max_deviation, sigma_join, sigma_meet,
)

OUT_ENV = "CONDEXP_OUT"
DEFAULT_TOL = 1e-10
EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


# --------------------------------------------------------------------------
# output helpers
# --------------------------------------------------------------------------

def _target(args, default_name):
    if getattr(args, "out", None):
        return Path(args.out)
    d = os.environ.get(OUT_ENV)
    if d:
        Path(d).mkdir(parents=True, exist_ok=True)
        return Path(d) / default_name
    return None


def _emit(args, text: str, default_name: str):
    """Write an artefact; return the stream that should carry the summary."""
    path = _target(args, default_name)
    if path is None:
        sys.stdout.write(text)
        sys.stdout.flush()
        return sys.stderr
    Path(path).write_text(text)
    return sys.stdout


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.floating, float)):
        f = float(o)
        return f if math.isfinite(f) else str(f)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.bool_):
        return bool(o)
    return o


def _dump(obj) -> str:
    return json.dumps(_jsonable({"schema": SCHEMA, **obj}), indent=2, sort_keys=True) + "\n"


def _tol(args):
    return DEFAULT_TOL if args.tol is None else args.tol


def _load(args, **kw):
    return load_space(read_json(args.space), digits=args.quantize, **kw)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_iterate(args) -> int:
    sd = _load(args)
    # run parameters live in --config or, failing that, in the space file itself
    doc = read_json(args.config) if args.config else sd.raw
    names = doc.get("fields")
    if not isinstance(names, list):
        names = list(sd.fields)
    fields = [sd.field(n) for n in names]
    if not fields:
        raise ConfigError("no fields to iterate over")
    X0 = sd.rv(require(doc, "x0", str))
    steps = require(doc, "steps", int)
    if steps < 0:
        raise ConfigError("steps must be >= 0")
    sched = parse_schedule(require(doc, "schedule", dict), len(fields))
    pred = limit_predict(X0, fields) if sched.infinite_repeat else None
    eps = float(doc.get("eps", args.eps))
    window = doc.get("window", args.window)
    try:
        tr = iterate(X0, fields, sched, steps, pred, eps=eps, window=window,
                     stop_on_convergence=bool(doc.get("stop_on_convergence", False)))
    except ScheduleError as e:
        raise ConfigError(str(e)) from None
    out = _emit(args, tr.write_csv(), "iterate.csv")
    tol = _tol(args)
    final_dist = None if pred is None else max_deviation(tr.final, pred)
    matched = final_dist is None or final_dist <= tol
    print(f"iterate: steps={tr.steps} converged={tr.converged} at={tr.converged_at} "
          f"dist_to_limit={'n/a' if final_dist is None else f'{final_dist:.3e}'} "
          f"limit_matched={matched if final_dist is not None else 'n/a'}", file=out)
    return EXIT_OK if tr.converged and matched else EXIT_FAIL


def _table(rep: compat.CompatReport) -> str:
    rows = [("a", rep.a), ("b", rep.b), ("c", rep.c), ("d", rep.d), ("ab", rep.ab),
            ("rho", rep.rho), ("rho^2", rep.rho ** 2),
            ("residual Y|X", rep.residual_Y_on_X), ("residual X|Y", rep.residual_X_on_Y)]
    lines = [f"{k:>14}  {v: .12g}" for k, v in rows]
    lines.append(f"{'compatible':>14}  {rep.compatible}")
    for k, v in rep.checks.items():
        lines.append(f"{'clause ' + k:>14}  {'n/a' if v is None else ('ok' if v else 'FAILED')}")
    return "\n".join(lines) + "\n"


def cmd_compat(args) -> int:
    tol = _tol(args)
    if args.counterexample:
        if args.counterexample == "indicator":
            ex = compat.indicator_counterexample()
            X, Y = ex.X, ex.Y
        else:
            X, Y = compat.disc_grid(args.N)
        doc = space_to_doc(X.space, {}, {"X": X, "Y": Y})
        out = _emit(args, json.dumps(doc) + "\n", f"{args.counterexample}.json")
        deep = compat.deep_uncorrelation_defect(X, Y)
        print(f"compat: counterexample={args.counterexample} atoms={len(X)} rho={X.cov(Y):.3g} "
              f"deep_defect={deep:.3e} independence_defect={compat.independence_defect(X, Y):.3g}",
              file=out)
        return EXIT_OK
    if not args.space:
        raise ConfigError("compat needs a space file or --counterexample")
    sd = _load(args)
    if args.family:
        fam = [sd.rv(n) for n in args.family]
        fit = compat.family_compat(fam[0], fam[1:], tol)
        body = {"kind": "family", "target": args.family[0], "family": args.family[1:],
                "coefficients": fit.coefficients, "residual": fit.residual, "rank": fit.rank,
                "rank_deficient": fit.rank_deficient, "holds": fit.holds}
        out = _emit(args, _dump(body), "compat.json")
        print(f"compat: family residual={fit.residual:.3e} holds={fit.holds} "
              f"rank_deficient={fit.rank_deficient}", file=out)
        return EXIT_OK
    if not (args.x and args.y):
        raise ConfigError("compat needs --x and --y, or --family")
    X, Y = sd.rv(args.x), sd.rv(args.y)
    try:
        rep = compat.compat_report(X, Y, tol, clause_tol=args.clause_tol, strict=False)
    except compat.DegenerateError as e:
        raise ConfigError(str(e)) from None
    body = {"kind": "pair", "x": args.x, "y": args.y, **rep.as_dict(),
            "deeply_uncorrelated": compat.is_deeply_uncorrelated(X, Y, tol)}
    out = _emit(args, _dump(body), "compat.json")
    sys.stderr.write(_table(rep))
    failed = [k for k, v in rep.checks.items() if v is False]
    print(f"compat: compatible={rep.compatible} failed_clauses={failed or 'none'}", file=out)
    return EXIT_FAIL if failed else EXIT_OK


def _gauss_doc(args):
    doc = read_json(args.config)
    try:
        gs = gaussian.GaussianSpace(require(doc, "cov", list))
    except gaussian.GaussianError as e:
        raise ConfigError(f"cov: {e}") from None
    subs_raw = doc.get("subspaces", {})
    vecs_raw = doc.get("vectors", {})
    if not isinstance(subs_raw, dict) or not isinstance(vecs_raw, dict):
        raise ConfigError("'subspaces' and 'vectors' must be objects")
    subs, vecs = {}, {}
    for k, v in subs_raw.items():
        try:
            subs[k] = gaussian.Subspace(gs, v)
        except (gaussian.GaussianError, ValueError) as e:
            raise ConfigError(f"subspaces.{k}: {e}") from None
    for k, v in vecs_raw.items():
        try:
            vecs[k] = gs.check_vector(v)
        except (gaussian.GaussianError, ValueError) as e:
            raise ConfigError(f"vectors.{k}: {e}") from None
    return doc, gs, subs, vecs


def _pick(d, name, what):
    if name not in d:
        raise ConfigError(f"unknown {what} {name!r} (known: {', '.join(d) or 'none'})")
    return d[name]


def cmd_gaussian(args) -> int:
    if args.verb == "slowdown":
        res = [gaussian.slowdown_family(d) for d in range(2, args.d_max + 1)]
        counts = [r.iterations for r in res]
        angles = [r.angle for r in res]
        nondec = all(b >= a for a, b in zip(counts, counts[1:]))
        dec = all(b < a for a, b in zip(angles, angles[1:]))
        body = {"kind": "slowdown", "d": list(range(2, args.d_max + 1)), "iterations": counts,
                "cosine": [r.cosine for r in res], "angle": angles,
                "counts_non_decreasing": nondec, "angles_decreasing": dec}
        out = _emit(args, _dump(body), "slowdown.json")
        print(f"gaussian slowdown: counts {counts[0]}..{counts[-1]} non_decreasing={nondec} "
              f"angles_decreasing={dec}", file=out)
        return EXIT_OK if nondec and dec else EXIT_FAIL
    if not args.config:
        raise ConfigError(f"gaussian {args.verb} needs a config file")
    doc, gs, subs, vecs = _gauss_doc(args)
    if args.verb == "project":
        u = _pick(vecs, args.u or doc.get("u"), "vector")
        V = _pick(subs, args.V or doc.get("V"), "subspace")
        pr = gaussian.project_coefficients(u, V)
        body = {"kind": "project", "projection": pr.vector, "coefficients": pr.coefficients,
                "rank": pr.rank, "rank_deficient": pr.rank_deficient,
                "norm_u": gs.norm(u), "norm_projection": gs.norm(pr.vector)}
        out = _emit(args, _dump(body), "project.json")
        print(f"gaussian project: rank={pr.rank} |Pu|={gs.norm(pr.vector):.6g}", file=out)
        return EXIT_OK
    if args.verb == "angle":
        V = _pick(subs, args.V or doc.get("V"), "subspace")
        W = _pick(subs, args.W or doc.get("W"), "subspace")
        c = gaussian.friedrichs_angle(V, W)
        body = {"kind": "angle", "cosine": c, "angle": float(np.arccos(c)),
                "principal_cosines": gaussian.principal_cosines(V, W)}
        out = _emit(args, _dump(body), "angle.json")
        print(f"gaussian angle: cosine={c:.12g}", file=out)
        return EXIT_OK
    # iterate
    order = require(doc, "order", list)
    S = [_pick(subs, n, "subspace") for n in order]
    x0 = _pick(vecs, require(doc, "x0", str), "vector")
    steps = require(doc, "steps", int)
    sched = parse_schedule(require(doc, "schedule", dict), len(S))
    limit = gaussian.project(x0, gaussian.intersect_all(S)) if sched.infinite_repeat else None
    try:
        tr = gaussian.iterate_projections(x0, S, sched, steps, limit,
                                          eps=float(doc.get("eps", args.eps)))
    except ScheduleError as e:
        raise ConfigError(str(e)) from None
    out = _emit(args, tr.write_csv(), "gaussian_iterate.csv")
    dist = None if limit is None else gs.norm(tr.final - limit)
    matched = dist is None or dist <= _tol(args)
    print(f"gaussian iterate: steps={tr.steps} converged={tr.converged} at={tr.converged_at} "
          f"dist_to_limit={'n/a' if dist is None else f'{dist:.3e}'}", file=out)
    return EXIT_OK if tr.converged and matched else EXIT_FAIL


def cmd_sampler(args) -> int:
    if args.enumerate is not None:
        e = sampler.enumerate_joint(args.enumerate)
        body = {"kind": "enumerate", "B": e.B, "channels": e.channels, "bits": e.bits,
                "expected": e.expected, "discrepancy": e.discrepancy,
                "cells": int(e.counts.size)}
        out = _emit(args, _dump(body), "enumerate.json")
        print(f"sampler enumerate: B={e.B} discrepancy={e.discrepancy}", file=out)
        return EXIT_OK if e.discrepancy == 0 else EXIT_FAIL
    if args.seed is None:
        raise ConfigError("--seed is required for statistical tests")
    runners = {
        "ks": lambda: sampler.ks_channels(args.n, args.channels, args.seed)
        + sampler.ks_channels(args.n, args.channels, args.seed, gaussian=True),
        "chi2": lambda: sampler.chi2_pairs(args.n, args.channels, args.seed),
        "corr": lambda: sampler.corr_pairs(args.n, args.channels, args.seed),
    }
    tests = [t for name in args.test for t in runners[name]()]
    ok = all(t.passed for t in tests)
    body = {"kind": "sampler", "channels": args.channels, "n": args.n, "seed": args.seed,
            "alpha": sampler.ALPHA, "tests": [t.as_dict() for t in tests], "passed": ok}
    out = _emit(args, _dump(body), "sampler.json")
    print(f"sampler: {sum(t.passed for t in tests)}/{len(tests)} tests passed", file=out)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_extend(args) -> int:
    doc = read_json(args.space)
    C = args.C
    base = load_space({"weights": doc.get("weights")}).space
    try:
        split = SplitSpace(base, C)
    except SpaceError as e:
        raise ConfigError(f"C: {e}") from None
    sd = load_space(doc, local_atoms=len(split.C), digits=args.quantize)
    fields = {k: uplus(g, split) for k, g in sd.fields.items()}
    try:
        rvs = {k: extend_rv(sd.rv(k, split.restricted), split) for k in sd.rvs}
    except SpaceError as e:
        raise ConfigError(str(e)) from None
    new_doc = space_to_doc(base, fields, rvs)
    tol = _tol(args) if args.tol is not None else 1e-12
    if not args.verify:
        out = _emit(args, json.dumps(new_doc) + "\n", "extended.json")
        print(f"extend: |C|={len(split.C)} |D|={len(split.D)} fields={len(fields)} rvs={len(rvs)}",
              file=out)
        return EXIT_OK
    checks = []
    names = list(sd.rvs)
    for xn in names:
        X = sd.rv(xn, split.restricted)
        for gn, G in sd.fields.items():
            checks.append({"check": "transfer", "rv": xn, "field": gn,
                           "deviation": verify_transfer(X, G, split)})
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            try:
                full, restr = norm_transfer(sd.rv(a, split.restricted), sd.rv(b, split.restricted),
                                            split, tol)
                checks.append({"check": "norm", "rvs": [a, b], "full": full, "restricted": restr,
                               "deviation": abs(full - restr)})
            except InvariantError as e:
                checks.append({"check": "norm", "rvs": [a, b], "deviation": math.inf,
                               "error": str(e)})
    ok = all(c["deviation"] <= tol * (max(1.0, c.get("full", 1.0)) if c["check"] == "norm" else 1.0)
             for c in checks)
    body = {"kind": "extend", "C": list(split.C), "D": list(split.D), "checks": checks,
            "passed": ok, "extended": new_doc}
    out = _emit(args, _dump(body), "extend.json")
    print(f"extend: {len(checks)} checks passed={ok}", file=out)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_meet(args) -> int:
    sd = _load(args)
    names = args.fields or list(sd.fields)
    if not names:
        raise ConfigError("no fields given")
    fields = [sd.field(n) for n in names]
    comp = [completion(g, sd.space) for g in fields] if not args.no_complete else fields
    m = sigma_meet(comp)
    j = sigma_join(fields)
    body = {"kind": "meet", "fields": names, "completed": not args.no_complete,
            "meet": [list(b) for b in m.blocks], "join": [list(b) for b in j.blocks]}
    if args.x0:
        body["limit"] = limit_predict(sd.rv(args.x0), fields).values
    out = _emit(args, _dump(body), "meet.json")
    print(f"meet: {m.n_blocks} blocks; join: {j.n_blocks} blocks", file=out)
    return EXIT_OK


def cmd_selftest(args) -> int:
    only = None
    if args.only:
        try:
            only = [int(x) for x in args.only.split(",")]
        except ValueError:
            raise ConfigError(f"--only expects comma-separated criterion numbers, got {args.only!r}")
        bad = [k for k in only if k not in acceptance.CRITERIA]
        if bad:
            raise ConfigError(f"unknown criterion {bad[0]}")
    print(f"backend: {kernels.BACKEND}")
    results = acceptance.run_all(only)
    for r in results:
        print(f"{r.line()}  ({r.seconds:.2f}s)")
    npass = sum(r.passed for r in results)
    print(f"selftest: {npass}/{len(results)} criteria passed")
    return EXIT_OK if npass == len(results) else EXIT_FAIL


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="condexp", description=__doc__.splitlines()[0])
    p.add_argument("--tol", type=float, default=None, help="override the default tolerance")
    p.add_argument("--quantize", type=int, default=None, metavar="DIGITS",
                   help="round random-variable values to DIGITS decimals before use")
    sub = p.add_subparsers(dest="command", required=True)

    def out_opt(q):
        q.add_argument("--out", help=f"output file (default: ${OUT_ENV}/<name> or stdout)")

    q = sub.add_parser("iterate", help="run X_n = E(X_{n-1} | G_{k_n}) and write a CSV trajectory")
    q.add_argument("space")
    q.add_argument("--config", help="JSON with schedule/steps/x0/fields (default: read them from the space file)")
    q.add_argument("--eps", type=float, default=1e-12)
    q.add_argument("--window", type=int, default=None)
    out_opt(q)
    q.set_defaults(func=cmd_iterate)

    q = sub.add_parser("compat", help="linear compatibility report")
    q.add_argument("space", nargs="?")
    q.add_argument("--x")
    q.add_argument("--y")
    q.add_argument("--family", nargs="+", metavar="NAME", help="target followed by regressors")
    q.add_argument("--clause-tol", type=float, default=None)
    q.add_argument("--counterexample", choices=("disc", "indicator"))
    q.add_argument("--N", type=int, default=400, help="disc grid resolution")
    out_opt(q)
    q.set_defaults(func=cmd_compat)

    q = sub.add_parser("gaussian", help="Gaussian Hilbert-space experiments")
    q.add_argument("verb", choices=("project", "iterate", "angle", "slowdown"))
    q.add_argument("config", nargs="?")
    q.add_argument("--u")
    q.add_argument("--V")
    q.add_argument("--W")
    q.add_argument("--eps", type=float, default=1e-12)
    q.add_argument("--d-max", type=int, default=20)
    out_opt(q)
    q.set_defaults(func=cmd_gaussian)

    q = sub.add_parser("sampler", help="digit-splitting tests")
    q.add_argument("--channels", type=int, default=3)
    q.add_argument("--n", type=int, default=100_000)
    q.add_argument("--seed", type=int, default=None)
    q.add_argument("--test", nargs="+", choices=("ks", "chi2", "corr"), default=["ks", "chi2", "corr"])
    q.add_argument("--enumerate", type=int, default=None, metavar="B")
    out_opt(q)
    q.set_defaults(func=cmd_sampler)

    q = sub.add_parser("extend", help="extend fields and variables declared over C")
    q.add_argument("space")
    q.add_argument("--C", type=int, nargs="+", required=True)
    q.add_argument("--verify", action="store_true")
    out_opt(q)
    q.set_defaults(func=cmd_extend)

    q = sub.add_parser("meet", help="meet (of completions) and join of fields")
    q.add_argument("space")
    q.add_argument("--fields", nargs="+")
    q.add_argument("--x0", help="also print the predicted limit for this variable")
    q.add_argument("--no-complete", action="store_true")
    out_opt(q)
    q.set_defaults(func=cmd_meet)

    q = sub.add_parser("selftest", help="run the acceptance suite")
    q.add_argument("--only", help="comma-separated criterion numbers")
    q.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    p = build_parser()
    try:
        args = p.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, SpaceError, ScheduleError, gaussian.GaussianError,
            sampler.PrecisionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (InvariantError, compat.DegenerateError) as e:
        print(f"assertion failed: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
