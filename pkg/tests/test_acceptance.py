"""Acceptance suite: one PASS/FAIL line per criterion.

The Schatten grid (criterion 1) and the Ky Fan / entropy seed sweeps
(criterion 7) take many hours single-threaded; by default a fixed subset is
run and the criterion is reported incomplete. ACCEPTANCE_FULL=1 runs all of it.
"""

import json
import math
import os
import time

import numpy as np
import pytest

from corpus import (
    histogram_planted,
    planted_block_sparse,
    planted_dense,
    planted_schatten,
    random_sparse,
    well_conditioned,
)
from spectra import cli
from spectra.deflate import block_krylov_topk, build_preconditioner
from spectra.histogram import HistogramConfig, approximate_histogram, envelope_holds, exact_bucket_counts
from spectra.oracle import dense_svd, exact_ridge_solve
from spectra.reductions import (
    ReductionSpec,
    determinant_triangle_detect,
    nonisomorphic_graphs,
    random_graph,
    trace_inverse_via_effres,
    triangle_count_exact,
    triangle_detect,
    truncation_holds,
)
from spectra.solvers import RidgeProblem, SolverConfig, m_norm, precond_cg, ridge_solve
from spectra.sums import (
    BudgetExceeded,
    build_power_polynomial,
    entropy_of,
    kyfan,
    schatten_histogram,
    schatten_poly,
    svd_entropy,
    taylor_partial,
)
from spectra.window import SpectralContext

FULL = os.environ.get("ACCEPTANCE_FULL", "") not in ("", "0")
P_GRID = (0.5, 1.0, 1.5, 2.0, 3.0, 4.7)
CALL_CAP = 60.0
pytestmark = pytest.mark.acceptance


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}", flush=True)
        return ok
    return emit


def _timed(fn, *args, **kw):
    t = time.perf_counter()
    try:
        v = fn(*args, **kw)
    except BudgetExceeded as e:
        v = e.estimate if e.estimate is not None else float("nan")
    return v, time.perf_counter() - t


def _schatten_corpus():
    inst = [(f"sparse{s}", lambda s=s: random_sparse(300, 300, 10, s)) for s in range(30)]
    inst += [(f"planted{k}", lambda k=k: planted_schatten(k)) for k in range(10)]
    return inst


def test_c1_schatten_accuracy(report):
    corpus = _schatten_corpus()
    if FULL:
        chosen, seeds = corpus, range(10)
    else:
        chosen, seeds = [corpus[0], corpus[30]], range(1)
    total = len(corpus) * len(P_GRID) * 2 * 10
    bad, slow, calls = [], 0, 0
    for name, make in chosen:
        a = make()
        s = dense_svd(a).singular_values
        for p in P_GRID:
            ref = float(np.sum(s ** p))
            for fn, path in ((schatten_histogram, "hist"), (schatten_poly, "poly")):
                hits = 0
                for seed in seeds:
                    v, dt = _timed(fn, a, p, 0.1, seed=seed, budget_sec=CALL_CAP)
                    calls += 1
                    slow += dt > CALL_CAP
                    hits += abs(v / ref - 1) <= 0.1 and dt <= CALL_CAP
                if hits < math.ceil(0.9 * len(seeds)):
                    bad.append(f"{name}/p={p}/{path}")
    complete = calls == total
    ok = complete and not bad
    detail = (f"calls={calls}/{total} over_cap={slow} failing={len(bad)} "
              f"{'' if complete else '(incomplete: ACCEPTANCE_FULL=1 for the full grid) '}"
              f"{' '.join(bad[:12])}")
    assert report(1, ok, detail)


def test_c2_histogram_envelope(report):
    good = 0
    for r in range(100):
        a = histogram_planted(r)
        cfg = HistogramConfig(eps1=0.1, eps2=0.1, alpha=0.25, lam=0.01, seed=r)
        res = approximate_histogram(a, cfg)
        exact = exact_bucket_counts(a, res)
        good += bool(np.all(envelope_holds(res.counts, exact, 0.1, 0.1, res.T)))
    assert report(2, good >= 95, f"{good}/100 runs inside the envelope")


def test_c3_solvers(report):
    worst = 0.0
    fails = []
    exps = np.linspace(1.0, 4.0, 20)
    rng = np.random.default_rng(0)
    for i in range(20):
        a = random_sparse(300, 300, 10, 100 + i)
        s1 = dense_svd(a).singular_values[0]
        lam = s1 ** 2 / 10 ** exps[i]
        b = rng.standard_normal(300)
        xs = exact_ridge_solve(a, b, lam)
        P = build_preconditioner(block_krylov_topk(a, 10, 0.1, i), lam)
        for m in ("svrg", "precond_svrg", "accel_precond_svrg", "precond_cg"):
            prob = RidgeProblem(a, lam, None if m == "svrg" else P)
            x = ridge_solve(prob, b, SolverConfig(method=m, seed=i)).solution
            e = m_norm(prob, x - xs) / m_norm(prob, xs)
            worst = max(worst, e)
            if not e <= 1e-6:
                fails.append(f"{i}/{m}:{e:.2e}")
    # deflated against undeflated CG on spectra with a 10x gap after k
    ratios = []
    k = 10
    for i in range(5):
        sv = np.concatenate([np.geomspace(100.0, 10.0, k), np.geomspace(1.0, 1e-2, 300 - k)])
        a = planted_dense(sv, 200 + i)
        lam = sv[0] ** 2 / 10 ** (1 + 3 * i / 4)
        b = rng.standard_normal(300)
        cfg = SolverConfig(target_rel_error=1e-6)
        plain = precond_cg(RidgeProblem(a, lam), b, cfg).iterations
        P = build_preconditioner(block_krylov_topk(a, k, 0.1, i), lam)
        defl = precond_cg(RidgeProblem(a, lam, P), b, cfg).iterations
        ratios.append(defl / plain)
    ok = not fails and max(ratios) <= 0.5
    assert report(3, ok, f"worst M-norm error {worst:.2e}, failures {fails[:6]}, "
                         f"deflated/undeflated CG iterations max {max(ratios):.3f}")


def test_c4_deflation(report):
    bad = []
    k, eps = 10, 0.1
    for i in range(20):
        a = random_sparse(300, 300, 10, 300 + i)
        x = a.to_dense()
        s = dense_svd(a).singular_values
        d = block_krylov_topk(a, k, eps, i)
        r = np.linalg.norm(x - x @ d.Z @ d.Z.T, 2) ** 2
        ok1 = r <= 2 * s[k] ** 2
        ok2 = bool(np.all(np.abs(d.sigma_tilde_sq - s[:k] ** 2) <= 2 * s[k] ** 2))
        tail = np.linalg.svd(x - x @ d.Z @ d.Z.T, compute_uv=False)[: s.size - k]
        ok3 = bool(np.all(tail <= (1 + 3 * eps) * s[k:] + eps / x.shape[0] * s[0]))
        if not (ok1 and ok2 and ok3):
            bad.append(f"{i}:{int(ok1)}{int(ok2)}{int(ok3)}")
    assert report(4, not bad, f"{20 - len(bad)}/20 instances satisfy all three bounds {bad}")


def test_c5_step_and_power_polynomials(report):
    lam, gamma, eps = 0.3, 0.1, 1e-3
    worst = 0.0
    for i in range(20):
        a = random_sparse(100, 100, 10, 500 + i)
        x = a.to_dense()
        M = 1.05 * dense_svd(a).singular_values[0]
        w, V = np.linalg.eigh(x.T @ x / M ** 2)
        ctx = SpectralContext(a, M, seed=i, engine="vector")
        S = ctx.step_apply(lam, gamma, eps, np.eye(100))
        q = np.diag(V.T @ S @ V)
        clear = (w >= lam) | (w <= (1 - gamma) * lam)
        err = np.abs(q[clear] - (w[clear] >= lam))
        band = q[~clear]
        worst = max(worst, float(err.max(initial=0.0)),
                    float(np.max(np.maximum(-band, band - 1), initial=0.0)))
    rng = np.random.default_rng(5)
    certified = 0
    for _ in range(50):
        p = rng.uniform(0.1, 3.0)
        lo = rng.uniform(0.01, 0.5)
        hi = rng.uniform(1.5 * lo, 1.0)
        e = rng.uniform(0.01, 0.2)
        poly = build_power_polynomial(p, e, lo, hi)
        g = np.linspace(lo, hi, 1000)
        z = np.linspace(0.0, hi, 1000)
        vz = poly(z)
        certified += bool(np.all(np.abs(poly(g) - g ** p) <= e * g ** p) and vz[0] == 0.0
                          and np.all(np.diff(vz) > 0))
    ok = worst <= 2 * eps and certified == 50
    assert report(5, ok, f"worst step deviation {worst:.2e} (limit {2 * eps}), "
                         f"power polynomials certified {certified}/50")


def test_c6_taylor_tail(report):
    x = np.linspace(1e-3, 1.0, 1000)
    violations = 0
    for pp in (-1.0, -0.5, -0.1):
        exact = x ** pp
        # a few ulps of x^{p'}: the difference of two nearly equal doubles
        ulp = 8 * np.finfo(float).eps * exact
        for k in (5, 10, 20, 50):
            gap = exact - taylor_partial(x, pp, k)
            violations += int(np.sum(gap < -ulp) + np.sum(gap > np.exp(-k * x) / x + ulp))
    assert report(6, violations == 0, f"{violations} violations on the 1000-point grid")


def test_c7_kyfan_and_entropy(report):
    corpus = _schatten_corpus()
    if FULL:
        chosen, seeds = corpus, range(10)
    else:
        chosen, seeds = [corpus[0]], range(1)
    total_kf = len(corpus) * 4 * 10
    kf_calls, kf_bad = 0, []
    for name, make in chosen:
        a = make()
        s = dense_svd(a).singular_values
        for w in (1, 5, 20, s.size):
            hits = 0
            for seed in seeds:
                v = kyfan(a, w, 0.1, seed=seed)
                kf_calls += 1
                hits += abs(v / s[:w].sum() - 1) <= 0.1
            if hits < math.ceil(0.9 * len(seeds)):
                kf_bad.append(f"{name}/w={w}")
    ent_seeds = range(10) if FULL else range(1)
    add_bad, mul_bad, ent_calls = [], [], 0
    for i in range(20):
        a = well_conditioned(i, n=100)
        H = entropy_of(dense_svd(a).singular_values)
        ha = sum(abs(svd_entropy(a, 0.1, seed=t) - H) <= 0.1 for t in ent_seeds)
        ok_mul = H >= 0.5
        hm = sum(abs(svd_entropy(a, 0.1, mode="multiplicative", seed=t) / H - 1) <= 0.15
                 for t in ent_seeds) if ok_mul else len(ent_seeds)
        ent_calls += 2 * len(ent_seeds)
        need = math.ceil(0.9 * len(ent_seeds))
        if ha < need:
            add_bad.append(i)
        if hm < need:
            mul_bad.append(i)
    complete = kf_calls == total_kf and ent_calls == 20 * 2 * 10
    ok = complete and not (kf_bad or add_bad or mul_bad)
    detail = (f"kyfan calls={kf_calls}/{total_kf} failing={kf_bad[:8]}; entropy calls={ent_calls}/400 "
              f"additive failing={add_bad} multiplicative failing={mul_bad}"
              f"{'' if complete else ' (incomplete: ACCEPTANCE_FULL=1 for every seed)'}")
    assert report(7, ok, detail)


def _random_sdd(n, seed):
    rng = np.random.default_rng(seed)
    W = -np.triu(rng.random((n, n)) * (rng.random((n, n)) < 0.6), 1)
    W = W + W.T
    return W + np.diag(-W.sum(axis=1) + rng.uniform(0.1, 1.0, n))


def test_c8_reductions(report):
    issues = []
    graphs = [random_graph(20, 0.2, s) for s in range(50)] + nonisomorphic_graphs(4)
    for j, g in enumerate(graphs):
        if triangle_detect(g) != (triangle_count_exact(g) > 0):
            issues.append(f"schatten3:{j}")
    for j, g in enumerate(nonisomorphic_graphs(4)):
        truth = triangle_count_exact(g) > 0
        if triangle_detect(g, ReductionSpec("trace_inverse", 4)) != truth:
            issues.append(f"trace_inverse:{j}")
        if determinant_triangle_detect(g) != truth:
            issues.append(f"determinant:{j}")
    worst = 0.0
    for s in range(20):
        M = _random_sdd(6, s)
        ref = np.trace(np.linalg.inv(M))
        worst = max(worst, abs(trace_inverse_via_effres(M) - ref))
    if worst > 1e-10:
        issues.append(f"effres:{worst:.1e}")
    kinds = [("schatten", 3.0), ("schatten", 2.5), ("schatten", 0.5), ("log_det", None),
             ("trace_inverse", None), ("trace_exp", None), ("entropy", None)]
    checked = 0
    for kind, p in kinds:
        for n in range(3, 9):
            spec = ReductionSpec(kind, n, p)
            # tr(A^k) counts closed walks, so K_n majorizes every graph on n vertices
            c = spec.series_coeffs
            walks = [(n - 1) ** k + (n - 1) * (-1) ** k for k in range(4, 80)]
            major = math.fsum(abs(c(k)) * spec.delta ** k * w for k, w in zip(range(4, 80), walks))
            if not major <= abs(spec.c3) * spec.delta ** 3 / 9:
                issues.append(f"majorant:{kind}:{n}")
            gs = nonisomorphic_graphs(n) if n <= 5 else [random_graph(n, q, s) for q in
                                                      (0.2, 0.5, 0.8) for s in range(10)]
            for g in gs:
                checked += 1
                if not truncation_holds(spec, g):
                    issues.append(f"trunc:{kind}:{n}")
                    break
    assert report(8, not issues, f"effres max abs error {worst:.1e}, truncation checks {checked}, "
                                 f"issues {issues[:8]}")


def test_c9_svrg_scaling(report):
    d, lam = 300, 1e-3
    i = np.arange(1, d + 1)
    kap, rows, kbar = [], [], []
    for K in np.geomspace(500, 5000, 7):
        s2 = K * lam / i
        a = planted_block_sparse(np.sqrt(s2), 0)
        b = np.random.default_rng(1).standard_normal(d)
        P = build_preconditioner(block_krylov_topk(a, 10, 0.1, 0), lam)
        r = ridge_solve(RidgeProblem(a, lam, P), b, SolverConfig(method="precond_svrg"))
        kap.append((s2[0] + lam) / lam)
        kbar.append((s2.sum() + d * lam) / (d * lam))
        rows.append(r.row_sample_count)
    slope = float(np.polyfit(np.log(kap), np.log(rows), 1)[0])
    assert report(9, slope <= 0.7, f"log-log slope {slope:.3f} over kappa {kap[0]:.0f}..{kap[-1]:.0f} "
                                   f"(kappa_bar {kbar[0]:.1f}..{kbar[-1]:.1f})")


def _cli_result(argv, capsys):
    capsys.readouterr()
    code = cli.main(argv)
    out = capsys.readouterr().out
    return code, json.dumps(json.loads(out)["result"], sort_keys=True).encode()


def test_c10_cli_determinism(tmp_path, capsys, report):
    from spectra.linops import save_matrix_market
    from spectra.reductions import save_edge_list

    mtx = tmp_path / "a.mtx"
    save_matrix_market(mtx, random_sparse(40, 30, 5, 0))
    edges = tmp_path / "g.edges"
    save_edge_list(edges, random_graph(10, 0.3, 1))
    m = ["--input", str(mtx), "--seed", "11"]
    runs = [
        ["histogram", *m, "--lam", "0.05"],
        ["schatten", *m, "--p", "1.5", "--path", "histogram"],
        ["schatten", *m, "--p", "1.5", "--path", "poly"],
        ["orlicz", *m, "--eps", "0.2"],
        ["kyfan", *m, "--w", "3", "--eps", "0.2"],
        ["entropy", *m, "--eps", "0.2"],
        ["entropy", *m, "--eps", "0.2", "--mode", "multiplicative"],
        *[["solve", *m, "--method", meth, "--lam", "0.5"] for meth in
          ("svrg", "precond_svrg", "accel_precond_svrg", "precond_cg")],
        ["triangle", "--graph", str(edges), "--oracle-estimator"],
        ["compare", *m, "--task", "schatten", "--p", "2"],
    ]
    diff = []
    for argv in runs:
        c1, r1 = _cli_result(argv, capsys)
        c2, r2 = _cli_result(argv, capsys)
        if c1 != 0 or c1 != c2 or r1 != r2:
            diff.append(argv[0])
    assert report(10, not diff, f"{len(runs) - len(diff)}/{len(runs)} commands byte-identical {diff}")
