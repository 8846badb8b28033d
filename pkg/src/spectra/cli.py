"""Command-line front end; every run prints one JSON record to stdout."""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from typing import Optional

import numpy as np

from . import __version__
from .deflate import block_krylov_topk, build_preconditioner
from .histogram import (
    BucketCapError,
    HistogramConfig,
    approximate_histogram,
    envelope_holds,
    exact_bucket_counts,
)
from .linops import DegenerateMatrixError, DenseMatrix, DimensionError, MatrixFormatError, load_matrix_market, \
    oriented, spectral_norm_estimate
from .oracle import OracleSizeError, dense_svd
from .reductions import (
    PrecisionError,
    ReductionSpec,
    determinant_triangle_detect,
    load_edge_list,
    triangle_count_exact,
    triangle_detect,
)
from .solvers import METHODS, RidgeProblem, SolverConfig, SolverError, ridge_solve
from .sums import (
    BudgetExceeded,
    HypothesisError,
    SumSpec,
    kyfan,
    orlicz_sum,
    schatten_histogram,
    schatten_poly,
    svd_entropy,
)

DEFAULT_EPS = 0.1
DEFAULT_ALPHA = 0.25
DEFAULT_LAM = 1e-3          # histogram truncation, in units of M^2
DEFAULT_RIDGE_LAM_REL = 1e-2  # solve: lambda = this times the squared norm estimate
DEFAULT_P = 1.0
DEFAULT_W = 1
DEFAULT_SEED = 0
DEFAULT_METHOD = "precond_cg"
DEFAULT_MODE = "additive"

ORLICZ_FUNCTIONS = {
    # name: (g, p1, p2)
    "xlog1p": (lambda x: x * np.log1p(x), 2.0, 1.0),
    "huber": (lambda x: np.where(x <= 1.0, 0.5 * x * x, x - 0.5), 2.0, 1.0),
}

TRIANGLE_PATHS = ("schatten3", "log_det", "trace_inverse", "trace_exp", "entropy", "determinant")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common(p: argparse.ArgumentParser, *, matrix=True):
    if matrix:
        p.add_argument("--input", required=True, help="Matrix Market file")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help=f"default {DEFAULT_SEED}")
    p.add_argument("--budget-sec", type=float, default=None, help="wall-clock budget (default none)")
    p.add_argument("--json-indent", type=int, default=None, help="pretty-print JSON (default compact)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="spectra", description=__doc__)
    ap.add_argument("--version", action="version", version=f"spectra {__version__}")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("histogram", help="approximate singular value histogram")
    _common(p)
    p.add_argument("--eps", type=float, default=DEFAULT_EPS, help=f"eps1 = eps2 (default {DEFAULT_EPS})")
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA, help=f"default {DEFAULT_ALPHA}")
    p.add_argument("--lam", type=float, default=DEFAULT_LAM, help=f"default {DEFAULT_LAM}")
    p.add_argument("--k", type=int, default=0, help="deflation rank (default 0)")

    p = sub.add_parser("schatten", help="Schatten p-norm to the p")
    _common(p)
    p.add_argument("--p", type=float, default=DEFAULT_P, help=f"default {DEFAULT_P}")
    p.add_argument("--eps", type=float, default=DEFAULT_EPS, help=f"default {DEFAULT_EPS}")
    p.add_argument("--k", type=int, default=None, help="deflation rank (default: balancing rule)")
    p.add_argument("--path", choices=("histogram", "poly"), default="histogram")

    p = sub.add_parser("orlicz", help="sum of g(sigma_i)")
    _common(p)
    p.add_argument("--g", choices=sorted(ORLICZ_FUNCTIONS), default="xlog1p")
    p.add_argument("--eps", type=float, default=DEFAULT_EPS, help=f"default {DEFAULT_EPS}")
    p.add_argument("--k", type=int, default=0, help="deflation rank (default 0)")

    p = sub.add_parser("kyfan", help="sum of the top w singular values")
    _common(p)
    p.add_argument("--w", type=int, default=DEFAULT_W, help=f"default {DEFAULT_W}")
    p.add_argument("--eps", type=float, default=DEFAULT_EPS, help=f"default {DEFAULT_EPS}")
    p.add_argument("--k", type=int, default=None, help="deflation rank (default ceil(sqrt(w)))")

    p = sub.add_parser("entropy", help="SVD entropy")
    _common(p)
    p.add_argument("--eps", type=float, default=DEFAULT_EPS, help=f"default {DEFAULT_EPS}")
    p.add_argument("--mode", choices=("additive", "multiplicative"), default=DEFAULT_MODE)

    p = sub.add_parser("solve", help="ridge regression (A^T A + lam I) x = b")
    _common(p)
    p.add_argument("--lam", type=float, default=None,
                   help=f"default {DEFAULT_RIDGE_LAM_REL} times the squared norm estimate")
    p.add_argument("--rhs", default=None, help="text file with b (default: seeded +-1 vector)")
    p.add_argument("--method", choices=METHODS, default=DEFAULT_METHOD)
    p.add_argument("--k", type=int, default=0, help="deflation rank for the preconditioner")
    p.add_argument("--eps", type=float, default=1e-6, help="target relative error (default 1e-6)")

    p = sub.add_parser("triangle", help="triangle detection through a spectral sum")
    _common(p, matrix=False)
    p.add_argument("--graph", required=True, help="edge list, one 'u v' per line, 0-indexed")
    p.add_argument("--path", choices=TRIANGLE_PATHS, default="schatten3")
    p.add_argument("--oracle-estimator", action="store_true",
                   help="use the dense oracle as the spectral-sum estimator")

    p = sub.add_parser("compare", help="estimator against the dense oracle")
    _common(p)
    p.add_argument("--task", choices=("schatten", "orlicz", "kyfan", "entropy", "histogram"),
                   required=True)
    p.add_argument("--p", type=float, default=DEFAULT_P, help=f"default {DEFAULT_P}")
    p.add_argument("--w", type=int, default=DEFAULT_W, help=f"default {DEFAULT_W}")
    p.add_argument("--eps", type=float, default=DEFAULT_EPS, help=f"default {DEFAULT_EPS}")
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA, help=f"default {DEFAULT_ALPHA}")
    p.add_argument("--lam", type=float, default=DEFAULT_LAM, help=f"default {DEFAULT_LAM}")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--mode", choices=("additive", "multiplicative"), default=DEFAULT_MODE)
    p.add_argument("--g", choices=sorted(ORLICZ_FUNCTIONS), default="xlog1p")
    p.add_argument("--path", choices=("histogram", "poly"), default="histogram")

    p = sub.add_parser("bench", help="compiled kernels against the numpy fallback")
    _common(p, matrix=False)
    p.add_argument("--n", type=int, default=2000, help="matrix size (default 2000)")
    p.add_argument("--repeats", type=int, default=5, help="default 5")
    return ap


# --------------------------------------------------------------------------
# commands; each returns (result, probe_count, solver_stats)


def _matrix(args):
    return oriented(load_matrix_market(args.input))


def _sum_record(r):
    return r.estimate, r.probe_count, r.counters, r.parameters


def cmd_histogram(args):
    a = _matrix(args)
    cfg = HistogramConfig(eps1=args.eps, eps2=args.eps, alpha=args.alpha, lam=args.lam, k=args.k,
                          seed=args.seed)
    res = approximate_histogram(a, cfg)
    return res.to_dict(), res.info["probe_count"], res.info["counters"], {}


def _schatten(a, args, k):
    fn = schatten_poly if args.path == "poly" else schatten_histogram
    return fn(a, args.p, args.eps, seed=args.seed, k=k, budget_sec=args.budget_sec,
              return_record=True)


def cmd_schatten(args):
    a = _matrix(args)
    return _sum_record(_schatten(a, args, args.k))


def cmd_orlicz(args):
    a = _matrix(args)
    g, p1, p2 = ORLICZ_FUNCTIONS[args.g]
    return _sum_record(orlicz_sum(a, g, p1, p2, args.eps, seed=args.seed, k=args.k,
                                  return_record=True))


def cmd_kyfan(args):
    a = _matrix(args)
    return _sum_record(kyfan(a, args.w, args.eps, seed=args.seed, k=args.k,
                             budget_sec=args.budget_sec, return_record=True))


def cmd_entropy(args):
    a = _matrix(args)
    return _sum_record(svd_entropy(a, args.eps, args.mode, seed=args.seed,
                                   budget_sec=args.budget_sec, return_record=True))


def _rhs(args, d):
    if args.rhs:
        b = np.loadtxt(args.rhs, dtype=np.float64).ravel()
        if b.shape[0] != d:
            raise UsageError(f"rhs has length {b.shape[0]}, expected {d}")
        return b
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([args.seed, 0x5B])))
    return rng.choice([-1.0, 1.0], size=d)


def cmd_solve(args):
    a = _matrix(args)
    M = spectral_norm_estimate(a, seed=args.seed)
    lam = args.lam if args.lam is not None else DEFAULT_RIDGE_LAM_REL * M * M
    P = None
    if args.k > 0:
        P = build_preconditioner(block_krylov_topk(a, args.k, 0.1, args.seed, norm_sq=M * M), lam)
    prob = RidgeProblem(a, lam, preconditioner=P, norm_sq=M * M)
    cfg = SolverConfig(target_rel_error=args.eps, seed=args.seed, method=args.method)
    rep = ridge_solve(prob, _rhs(args, a.n_cols), cfg)
    result = {"solution": [float(x) for x in np.ravel(rep.solution)], "lambda": lam,
              "method": rep.method, "residual_bound": float(rep.final_residual_Mnorm_rel)}
    stats = {"epochs": rep.epochs_run, "matvecs": rep.matvec_count,
             "row_samples": rep.row_sample_count, "iterations": rep.iterations,
             "rounds": rep.rounds}
    return result, 0, stats, {"lambda": lam}


def _pipeline_cubic(target, args):
    def est(B):
        return schatten_poly(DenseMatrix.from_array(B), 3.0, target, seed=args.seed,
                             budget_sec=args.budget_sec)
    return est


def cmd_triangle(args):
    g = load_edge_list(args.graph)
    if args.path == "determinant":
        if not args.oracle_estimator:
            raise UsageError("the determinant path needs --oracle-estimator")
        v = determinant_triangle_detect(g, return_verdict=True)
    else:
        spec = ReductionSpec.schatten(3, g.n) if args.path == "schatten3" else ReductionSpec(args.path, g.n)
        pipeline = None
        if not args.oracle_estimator:
            if args.path != "schatten3":
                raise UsageError("only the schatten3 path has a pipeline estimator")
            pipeline = _pipeline_cubic(spec.eps1 / 9.0, args)
        v = triangle_detect(g, spec, pipeline, return_verdict=True)
    result = v.to_dict()
    return result, 0, {}, {"n": g.n, "m": g.m, "exact_triangles": triangle_count_exact(g)}


def cmd_compare(args):
    a = _matrix(args)
    sv = dense_svd(a).singular_values
    if args.task == "histogram":
        cfg = HistogramConfig(eps1=args.eps, eps2=args.eps, alpha=args.alpha, lam=args.lam,
                              k=args.k or 0, seed=args.seed)
        res = approximate_histogram(a, cfg)
        exact = exact_bucket_counts(a, res)
        ok = envelope_holds(res.counts, exact, args.eps, args.eps, res.T)
        result = {"estimate": [float(x) for x in res.counts], "oracle": [float(x) for x in exact],
                  "envelope_holds": bool(np.all(ok))}
        return result, res.info["probe_count"], res.info["counters"], {}
    if args.task == "schatten":
        r = _schatten(a, args, args.k)
        exact = SumSpec.schatten(args.p).exact(sv)
    elif args.task == "orlicz":
        g, p1, p2 = ORLICZ_FUNCTIONS[args.g]
        r = orlicz_sum(a, g, p1, p2, args.eps, seed=args.seed, k=args.k or 0, return_record=True)
        exact = float(math.fsum(g(sv)))
    elif args.task == "kyfan":
        r = kyfan(a, args.w, args.eps, seed=args.seed, k=args.k, budget_sec=args.budget_sec,
                  return_record=True)
        exact = SumSpec.kyfan(args.w).exact(sv)
    else:
        r = svd_entropy(a, args.eps, args.mode, seed=args.seed, budget_sec=args.budget_sec,
                        return_record=True)
        exact = SumSpec.entropy().exact(sv)
    est = float(r.estimate)
    result = {"estimate": est, "oracle": float(exact),
              "abs_error": abs(est - exact),
              "rel_error": abs(est - exact) / abs(exact) if exact else float("inf")}
    return result, r.probe_count, r.counters, r.parameters


def cmd_bench(args):
    from .bench import run_benchmark

    return run_benchmark(n=args.n, repeats=args.repeats, seed=args.seed), 0, {}, {}


COMMANDS = {
    "histogram": cmd_histogram, "schatten": cmd_schatten, "orlicz": cmd_orlicz,
    "kyfan": cmd_kyfan, "entropy": cmd_entropy, "solve": cmd_solve, "triangle": cmd_triangle,
    "compare": cmd_compare, "bench": cmd_bench,
}

NUMERICAL_ERRORS = (BudgetExceeded, SolverError, PrecisionError, BucketCapError, HypothesisError,
                    DegenerateMatrixError, OracleSizeError, FloatingPointError,
                    np.linalg.LinAlgError)
INPUT_ERRORS = (UsageError, MatrixFormatError, DimensionError, FileNotFoundError, IsADirectoryError)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"spectra: error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # --help and --version
        return int(e.code or 0)
    if args.command is None:
        parser.print_help(sys.stderr)
        return 1
    t0 = time.perf_counter()
    try:
        result, probes, stats, extra = COMMANDS[args.command](args)
    except INPUT_ERRORS as e:
        print(f"spectra: error: {e}", file=sys.stderr)
        return 1
    except NUMERICAL_ERRORS as e:
        print(f"spectra: numerical failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"spectra: error: {e}", file=sys.stderr)
        return 1
    params = {k: v for k, v in vars(args).items() if k not in ("command", "seed", "json_indent")}
    params.update(extra)
    record = {
        "command": args.command,
        "parameters": _jsonable(params),
        "seed": args.seed,
        "result": _jsonable(result),
        "wall_time_ms": int(round((time.perf_counter() - t0) * 1e3)),
        "probe_count": int(probes),
        "solver_stats": _jsonable(stats),
    }
    print(json.dumps(record, indent=args.json_indent, allow_nan=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
