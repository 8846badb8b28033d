"""Spectral sums from approximate histograms and from windowed power polynomials.

Estimators: generic smooth sums from a histogram, Schatten p-norms (histogram
and polynomial paths), Orlicz norms, Ky Fan norms and SVD entropy.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .histogram import (
    HistogramResult,
    bucket_count,
    boundaries_for,
    draw_shift,
    round_counts,
)
from .linops import DenseMatrix, as_matrix, oriented, apply
from .solvers import SolverConfig
from .trace import hutchinson_dense, hutchinson_trace
from .window import SpectralContext

# Defaults for the "sufficiently small" constants of each estimator. See the
# README for how they were chosen; every public estimator accepts overrides.
HIST_C = 1.0        # alpha = c eps / max(1, p); eps1 = eps2 = c eps
HIST_C1 = 0.2       # gamma = c1 eps2 alpha
HIST_C2 = 1.0       # probes S = log n / (c2 eps1^2)
HIST_C3 = 0.1       # window accuracy c3 eps1^2 / n
TAIL_C = 0.2        # truncation: tail mass at most TAIL_C * eps of the estimate
POLY_C1 = 0.1       # truncation constant of the polynomial path
POLY_C2 = 0.05      # gamma = c2 eps on the polynomial path
POLY_C3 = 0.1       # power polynomial accuracy c3 eps
POLY_PROBE_C = 0.05  # probes per window = POLY_PROBE_C * (min(1, delta_t) log(1/lambda) / eps)^2
KYFAN_C = 1.0       # alpha = eps1 = c eps for Ky Fan
KYFAN_INFLATE_C = 0.1  # count inflation (1 + 2 c eps) in the t(i) rule
KYFAN_C2 = 100.0    # eps2 = c2 eps^2 / log(1/lambda)
BUDGET_FACTOR = 8.0
LEAK_FLOOR = 1e-10   # window accuracy floor of the polynomial path (double precision)
LAMBDA_START = 0.25  # the search halves down from here; buckets already computed are reused


class BudgetExceeded(RuntimeError):
    """Work budget exhausted before the truncation level stabilized."""

    def __init__(self, msg, best_lambda=None, estimate=None):
        super().__init__(msg)
        self.best_lambda = best_lambda
        self.estimate = estimate


class HypothesisError(ValueError):
    """Histogram parameters do not satisfy the requirements for a spectral sum."""


# --------------------------------------------------------------------------
# sum descriptors


def _as_vec(f: Callable) -> Callable:
    def g(x):
        x = np.asarray(x, dtype=np.float64)
        return np.asarray(np.vectorize(f, otypes=[float])(x) if not hasattr(f, "__array_ufunc__")
                          else f(x), dtype=np.float64)
    try:
        f(np.ones(2))
        return lambda x: np.asarray(f(np.asarray(x, dtype=np.float64)), dtype=np.float64)
    except Exception:
        return g


@dataclass(frozen=True, eq=False)
class SumSpec:
    kind: str
    p: Optional[float] = None
    g: Optional[Callable] = None
    p1: Optional[float] = None
    p2: Optional[float] = None
    w: Optional[int] = None
    f: Optional[Callable] = None
    delta_f: Optional[float] = None
    lambda_f: Optional[Callable] = None

    @classmethod
    def schatten(cls, p: float) -> "SumSpec":
        if not p > 0:
            raise ValueError("Schatten p must be positive")
        return cls("schatten", p=float(p))

    @classmethod
    def orlicz(cls, g: Callable, p1: float, p2: float, grid=None) -> "SumSpec":
        if not (p1 >= p2 > 0):
            raise ValueError("Orlicz exponents need p1 >= p2 > 0")
        spec = cls("orlicz", g=_as_vec(g), p1=float(p1), p2=float(p2))
        check_envelope(spec, grid)
        return spec

    @classmethod
    def kyfan(cls, w: int) -> "SumSpec":
        if int(w) < 1:
            raise ValueError("Ky Fan w must be at least 1")
        return cls("kyfan", w=int(w))

    @classmethod
    def entropy(cls) -> "SumSpec":
        return cls("entropy")

    @classmethod
    def custom(cls, f: Callable, delta_f: float, lambda_f: Callable, grid=None) -> "SumSpec":
        spec = cls("custom", f=_as_vec(f), delta_f=float(delta_f), lambda_f=lambda_f)
        check_smoothness(spec, grid)
        return spec

    @property
    def smoothness(self) -> float:
        if self.kind == "schatten":
            return self.p
        if self.kind == "orlicz":
            return self.p1
        if self.kind == "custom":
            return self.delta_f
        return 1.0

    def value(self, sigma) -> np.ndarray:
        """f(sigma) for the additive kinds."""
        s = np.asarray(sigma, dtype=np.float64)
        if self.kind == "schatten":
            return np.where(s > 0, np.abs(s) ** self.p, 0.0)
        if self.kind == "orlicz":
            return self.g(s)
        if self.kind == "custom":
            return self.f(s)
        raise ValueError(f"{self.kind} is not an additive spectral sum")

    def exact(self, singular_values) -> float:
        s = np.sort(np.asarray(singular_values, dtype=np.float64))[::-1]
        if self.kind == "kyfan":
            return float(math.fsum(s[: self.w]))
        if self.kind == "entropy":
            return entropy_of(s)
        return float(math.fsum(self.value(s)))


def entropy_of(singular_values) -> float:
    s = np.asarray(singular_values, dtype=np.float64)
    s = s[s > 0]
    if s.size == 0:
        return 0.0
    q = s / s.sum()
    return float(-math.fsum(q * np.log(q)))


def check_envelope(spec: SumSpec, grid=None) -> None:
    """(b/a)^{p2} <= g(b)/g(a) <= (b/a)^{p1} for grid pairs a <= b."""
    x = np.geomspace(1e-3, 1e3, 61) if grid is None else np.asarray(grid, dtype=np.float64)
    gx = spec.g(x)
    if np.any(gx <= 0):
        raise HypothesisError("Orlicz g must be positive on the grid")
    a, b = np.meshgrid(x, x, indexing="ij")
    ga, gb = np.meshgrid(gx, gx, indexing="ij")
    m = b >= a
    r = (b / a)[m]
    q = (gb / ga)[m]
    tol = 1e-9
    if np.any(q < r ** spec.p2 * (1 - tol)) or np.any(q > r ** spec.p1 * (1 + tol)):
        raise HypothesisError(f"g violates the envelope with p1={spec.p1}, p2={spec.p2}")


def check_smoothness(spec: SumSpec, grid=None) -> None:
    """|f'(x)| <= delta_f f(x) / x and the smoothness-transfer bound on a grid."""
    x = np.geomspace(1e-3, 1e3, 200) if grid is None else np.asarray(grid, dtype=np.float64)
    h = 1e-6 * x
    fx = spec.f(x)
    df = (spec.f(x + h) - spec.f(x - h)) / (2 * h)
    if np.any(np.abs(df) > spec.delta_f * np.abs(fx) / x * (1 + 1e-4) + 1e-12):
        raise HypothesisError("f is not delta_f-multiplicatively smooth on the grid")
    c = 0.9 / (3 * spec.delta_f)
    for y in ((1 - c) * x, (1 + c) * x):
        fy = spec.f(y)
        lo = (1 - 3 * spec.delta_f * c) * fx
        hi = (1 + 3 * spec.delta_f * c) * fx
        if np.any(fy < np.minimum(lo, hi) - 1e-12) or np.any(fy > np.maximum(lo, hi) + 1e-12):
            raise HypothesisError("smoothness transfer bound fails on the grid")


# --------------------------------------------------------------------------
# results


@dataclass
class SumResult:
    estimate: float
    parameters: dict = field(default_factory=dict)
    probe_count: int = 0
    lambda_trace: list = field(default_factory=list)
    counters: dict = field(default_factory=dict)
    histogram: Optional[HistogramResult] = None

    def to_dict(self) -> dict:
        out = {"estimate": float(self.estimate), "parameters": self.parameters,
               "probe_count": int(self.probe_count),
               "lambda_trace": [float(x) for x in self.lambda_trace],
               "counters": {k: int(v) for k, v in self.counters.items()}}
        if self.histogram is not None:
            out["histogram"] = self.histogram.to_dict()
        return out


# --------------------------------------------------------------------------
# histogram path


def sum_from_histogram(hist: HistogramResult, spec: SumSpec, eps: Optional[float] = None,
                       c: float = HIST_C) -> float:
    """sum_t g(M^2 a1 (1 - alpha)^t) b~_t with g(x) = f(sqrt(x))."""
    if spec.kind not in ("schatten", "orlicz", "custom"):
        raise HypothesisError(f"{spec.kind} sums are not additive over the histogram")
    if eps is not None and "alpha" in hist.info:
        need = c * eps / max(1.0, spec.smoothness)
        if hist.info["alpha"] > need * (1 + 1e-9):
            raise HypothesisError(f"alpha = {hist.info['alpha']} exceeds c eps / delta_f = {need}")
    counts = np.asarray(hist.counts, dtype=np.float64)
    if not np.any(counts):
        return 0.0
    lower = hist.boundaries[1:]  # a_{t+1} = a1 (1 - alpha)^t
    vals = spec.value(np.sqrt(hist.M ** 2 * lower))
    return float(math.fsum(vals * counts))


class IncrementalHistogram:
    """Histogram whose buckets are computed on demand; lowering lambda only adds buckets."""

    def __init__(self, ctx: SpectralContext, alpha: float, gamma: float, eps1: float, *,
                 c2: float, c3: float, seed: int, shift_low: Optional[float] = None):
        self.ctx = ctx
        self.alpha = alpha
        self.gamma = gamma
        self.seed = seed
        lo = 1.0 - alpha / 4.0 if shift_low is None else shift_low
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0xA1])))
        self.a1 = float(1.0 - (1.0 - lo) * rng.random()) if shift_low is not None else draw_shift(alpha, seed)
        n = ctx.n
        self.S = int(math.ceil(math.log(max(n, 2)) / (c2 * eps1 ** 2)))
        self.eps_w = c3 * eps1 ** 2 / n
        self.raw: dict[int, float] = {}
        self.deadline: Optional[float] = None

    def bucket(self, t: int) -> float:
        if t not in self.raw:
            if self.deadline is not None and time.perf_counter() > self.deadline:
                raise BudgetExceeded("time budget exhausted inside a level")
            bnd_hi = 1.0 if t == 0 else self.a1 * (1.0 - self.alpha) ** (t - 1)
            bnd_lo = self.a1 * (1.0 - self.alpha) ** t
            tag = t << 8
            ctx = self.ctx
            if ctx.engine == "dense":
                H = ctx.window_matrix(bnd_lo, bnd_hi, self.gamma, self.eps_w)
                est = hutchinson_dense(H, self.S, self.seed, tag=tag)
            else:
                est = hutchinson_trace(
                    lambda Y: ctx.window_apply(bnd_lo, bnd_hi, self.gamma, self.eps_w, Y),
                    ctx.d, self.S, self.seed, tag=tag)
            self.raw[t] = est.mean
        return self.raw[t]

    def result(self, lam: float) -> HistogramResult:
        T = bucket_count(lam, self.alpha)
        raw = np.array([self.bucket(t) for t in range(T + 1)])
        info = {"alpha": self.alpha, "gamma": self.gamma, "lam": lam, "raw_counts": raw,
                "probes_per_bucket": self.S, "window_eps": self.eps_w,
                "probe_count": self.S * len(self.raw)}
        return HistogramResult(self.a1, boundaries_for(self.a1, self.alpha, T), round_counts(raw),
                               self.ctx.M, T, info)

    @property
    def probe_count(self) -> int:
        return self.S * len(self.raw)


def _lambda_formula(Xp: float, p: float, n: int, c: float, eps: float, M: float) -> float:
    """(c eps X / n)^{2/p} / M^2 in squared rescaled units."""
    return (c * eps * Xp / n) ** (2.0 / p) / M ** 2


def _power_lower_bound(ctx: SpectralContext, p: float) -> float:
    """Lower bound on |A|_p^p: k sigma~_k^p from the deflation, else (M / 2)^p."""
    lb = (ctx.M / 2.0) ** p
    if ctx.k > 0:
        sk = ctx.deflation.sigma_tilde_sq
        if sk.size and sk[-1] > 0:
            lb = max(lb, sk.size * (math.sqrt(sk[-1]) * ctx.M) ** p)
    return lb


def _zero(A) -> bool:
    return A.nnz == 0 or not A.frob_sq > 0


def _zero_result(return_record: bool, kind: str):
    # every spectral sum of the zero matrix is 0; no norm estimate exists
    return SumResult(0.0, {"kind": kind, "zero_matrix": True}) if return_record else 0.0


def _make_context(A, k, seed, engine, M=None) -> SpectralContext:
    return SpectralContext(A, M, k=k, seed=seed, engine=engine,
                           solver_config=SolverConfig(method="precond_cg"))


def default_k(n: int, p: float) -> int:
    """Deflation balancing: n^{(1/p - 1/2)/(1/p + 1/2)} for p < 2, else 0."""
    if p >= 2:
        return 0
    e = (1.0 / p - 0.5) / (1.0 / p + 0.5)
    return max(0, min(n, int(round(n ** e))))


def _search(hist: IncrementalHistogram, value_of: Callable, tail_of: Callable, lam_start: float,
            lam_floor: float, nominal_of: Callable, budget_factor: float, budget_sec: Optional[float],
            t0: float):
    """Halve lambda from lam_start until the tail bound holds or lam_floor is reached."""
    lam = max(min(lam_start, 0.5), lam_floor)
    trace = []
    if budget_sec is not None:
        hist.deadline = t0 + budget_sec
    while True:
        res = hist.result(lam)
        X = value_of(res)
        trace.append(lam)
        if tail_of(res, lam, X) or lam <= lam_floor:
            return res, X, trace
        nominal = bucket_count(max(nominal_of(X), 1e-300), hist.alpha) + 1
        if len(hist.raw) > budget_factor * nominal:
            raise BudgetExceeded(f"bucket budget {budget_factor}x{nominal} exhausted", lam, X)
        if budget_sec is not None and time.perf_counter() - t0 > budget_sec:
            raise BudgetExceeded(f"time budget {budget_sec}s exhausted", lam, X)
        lam = max(lam / 2.0, lam_floor)


def schatten_histogram(A, p: float, eps: float, seed: int = 0, *, k: Optional[int] = None,
                       c: float = HIST_C, c1: float = HIST_C1, c2: float = HIST_C2,
                       c3: float = HIST_C3, tail_c: float = TAIL_C, engine: str = "auto",
                       budget_factor: float = BUDGET_FACTOR, budget_sec: Optional[float] = None,
                       return_record: bool = False, ctx: Optional[SpectralContext] = None):
    """(1 +- eps) |A|_p^p from an approximate histogram with a searched truncation level."""
    if not p > 0:
        raise ValueError("p must be positive")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    t0 = time.perf_counter()
    a = oriented(as_matrix(A))
    n = a.n_rows
    if _zero(a):
        return _zero_result(return_record, "schatten")
    if k is None:
        k = default_k(min(a.shape), p)
    ctx = ctx or _make_context(a, k, seed, engine)
    M = ctx.M
    alpha = c * eps / max(1.0, p)
    e1 = c * eps
    hist = IncrementalHistogram(ctx, alpha, c1 * e1 * alpha, e1, c2=c2, c3=c3, seed=seed)
    spec = SumSpec.schatten(p)

    def value_of(res):
        return sum_from_histogram(res, spec)

    def tail_of(res, lam, X):
        rest = max(ctx.d - float(np.sum(res.counts)), 0.0)
        return rest * (lam * M * M) ** (p / 2.0) <= tail_c * eps * X

    lam_floor = _lambda_formula(_power_lower_bound(ctx, p), p, n, tail_c, eps, M)
    res, X, trace = _search(hist, value_of, tail_of, LAMBDA_START, lam_floor,
                            lambda X: _lambda_formula(X, p, n, tail_c, eps, M),
                            budget_factor, budget_sec, t0)
    if not return_record:
        return X
    params = {"p": p, "eps": eps, "alpha": alpha, "gamma": hist.gamma, "eps1": e1, "eps2": e1,
              "k": k, "lambda": trace[-1], "M": M, "T": res.T, "probes_per_bucket": hist.S,
              "window_eps": hist.eps_w, "engine": ctx.engine}
    return SumResult(X, params, hist.probe_count, trace, dict(ctx.counters), res)


# --------------------------------------------------------------------------
# power polynomials


def power_taylor(p_prime: float, degree: int) -> np.ndarray:
    """a_j = prod_{i <= j} (1 - (p' + 1) / i): Taylor coefficients of y^{p'} in (1 - y)."""
    if not -1.0 <= p_prime < 0.0:
        raise ValueError("p_prime must lie in [-1, 0)")
    return _taylor(p_prime, degree)


def _taylor(p_prime: float, degree: int) -> np.ndarray:
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    i = np.arange(1, degree + 1, dtype=np.float64)
    return np.concatenate([[1.0], np.cumprod(1.0 - (p_prime + 1.0) / i)])


def taylor_partial(x, p_prime: float, k: int) -> np.ndarray:
    """q_k(x) = sum_{j <= k} a_j (1 - x)^j."""
    a = _taylor(p_prime, k)
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    for aj in a[::-1]:
        out = out * (1.0 - x) + aj
    return out


@dataclass(frozen=True, eq=False)
class PowerPolynomial:
    """q(x) = b^p (x/b)^{ceil p} q_i(x/b), approximating x^p on [a, b]."""

    p: float
    taylor_coeffs: np.ndarray
    degree: int
    scale: float
    eps: float
    lower: float = 0.0

    @property
    def int_power(self) -> int:
        return int(math.ceil(self.p - 1e-15)) if self.p > 0 else 0

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        y = x / self.scale
        acc = np.zeros_like(y)
        for aj in self.taylor_coeffs[::-1]:
            acc = acc * (1.0 - y) + aj
        return self.scale ** self.p * y ** self.int_power * acc

    def matrix(self, K: np.ndarray) -> np.ndarray:
        """q(K) for a symmetric PSD matrix K with spectrum in [0, scale]."""
        d = K.shape[0]
        Y = K / self.scale
        I = np.eye(d)
        E = I - Y
        acc = self.taylor_coeffs[-1] * I
        for aj in self.taylor_coeffs[-2::-1]:
            acc = acc @ E
            acc[np.diag_indices(d)] += aj
        P = I
        for _ in range(self.int_power):
            P = P @ Y
        out = self.scale ** self.p * (P @ acc)
        return 0.5 * (out + out.T)


def _certify(q: PowerPolynomial, a: float, b: float, points: int = 1000) -> bool:
    x = np.linspace(a, b, points)
    v = q(x)
    target = x ** q.p
    if np.any(np.abs(v - target) > q.eps * target):
        return False
    z = np.linspace(0.0, b, points)
    vz = q(z)
    return bool(vz[0] == 0.0 and np.all(np.diff(vz) > 0))


def build_power_polynomial(p: float, eps: float, a: float, b: float, c1: float = 1.0) -> PowerPolynomial:
    """Certified power polynomial on [a, b]; c1 doubles until the grid check passes."""
    if not (0 < a < b <= 1):
        raise ValueError("need 0 < a < b <= 1")
    if not (p > 0 and eps > 0):
        raise ValueError("p and eps must be positive")
    m = int(math.ceil(p - 1e-15))
    p_prime = p - m
    c = c1
    while c <= 2 ** 10:
        i = max(1, int(math.ceil(c * math.log(b / (a * eps)) * (b / a))))
        q = PowerPolynomial(p, _taylor(p_prime, i), i + m, b, eps, a)
        if _certify(q, a, b):
            return q
        c *= 2.0
    raise ValueError(f"power polynomial certification failed for p={p}, [a,b]=[{a},{b}], eps={eps}")


# --------------------------------------------------------------------------
# polynomial path


def schatten_poly(A, p: float, eps: float, k: Optional[int] = None, seed: int = 0, *,
                  c1: float = POLY_C1, c2: float = POLY_C2, c3: float = POLY_C3,
                  probe_c: float = POLY_PROBE_C, min_probes: int = 32, engine: str = "auto",
                  budget_factor: float = BUDGET_FACTOR, budget_sec: Optional[float] = None,
                  return_record: bool = False, ctx: Optional[SpectralContext] = None):
    """(1 +- eps) |A|_p^p via constant-width windows and per-window power polynomials."""
    if not p > 0:
        raise ValueError("p must be positive")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    t0 = time.perf_counter()
    a_mat = oriented(as_matrix(A))
    n, d = a_mat.shape
    if _zero(a_mat):
        return _zero_result(return_record, "schatten")
    if k is None:
        k = default_k(d, p)
    ctx = ctx or _make_context(a_mat, k, seed, engine)
    M = ctx.M
    alpha = 0.5
    gamma = c2 * eps
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0xB07])))
    a1 = float(1.0 - alpha * rng.random())
    X_lb = _power_lower_bound(ctx, p)
    lam_floor = _lambda_formula(X_lb, p, d, c1, eps, M)
    # window leakage eps_w at an eigenvalue outside the window enters q as
    # ~ eps_w^{p/2} per value; keep d of them across all windows below c3 eps X
    n_win = bucket_count(lam_floor, alpha) + 1
    leak = (c3 * eps * X_lb / (d * M ** p * n_win)) ** (2.0 / p)
    eps_w = max(min(c3 * eps / 4.0, leak), LEAK_FLOOR)
    lam_start = _lambda_formula(d * M ** p, p, d, c1, eps, M)
    lam = max(min(lam_start, LAMBDA_START), lam_floor)
    log_term = max(1.0, math.log(1.0 / lam_floor))
    windows: dict[int, tuple[float, float, int]] = {}
    trace = []

    def window(t):
        if t not in windows:
            if budget_sec is not None and time.perf_counter() - t0 > budget_sec:
                raise BudgetExceeded(f"time budget {budget_sec}s exhausted", lam, None)
            hi = 1.0 if t == 0 else a1 * (1.0 - alpha) ** (t - 1)
            lo = a1 * (1.0 - alpha) ** t
            # delta_t: share of the truncated sum a window can carry, from the lower bound
            delta_t = d * (min(hi, 1.0) * M * M) ** (p / 2.0) / X_lb
            S = max(min_probes, int(math.ceil(probe_c * (min(1.0, delta_t) * log_term / eps) ** 2)))
            top = min(1.0, (1.0 + gamma) * hi)
            q = build_power_polynomial(p / 2.0, c3 * eps, (1.0 - gamma) * lo, top)
            tag = (t << 8) | 0x55
            if ctx.engine == "dense":
                H = ctx.window_matrix(lo, hi, gamma, eps_w)
                K = H @ ctx.gram
                K = 0.5 * (K + K.T)
                Q = q.matrix(np.clip(K, None, None))
                est_v = hutchinson_dense(Q, S, seed, tag=tag)
                est_c = hutchinson_dense(H, S, seed, tag=tag)
            else:
                def op_v(Y):
                    # q(h(G) G) applied through repeated products with h(G) G
                    return _poly_apply_vector(ctx, q, lo, hi, gamma, eps_w, Y)
                est_v = hutchinson_trace(op_v, ctx.d, S, seed, tag=tag)
                est_c = hutchinson_trace(lambda Y: ctx.window_apply(lo, hi, gamma, eps_w, Y),
                                         ctx.d, S, seed, tag=tag)
            windows[t] = (est_v.mean, est_c.mean, S)
        return windows[t]

    while True:
        T = bucket_count(lam, alpha)
        vals = [window(t) for t in range(T + 1)]
        X = M ** p * math.fsum(v[0] for v in vals)
        counted = math.fsum(max(v[1], 0.0) for v in vals)
        trace.append(lam)
        rest = max(d - counted, 0.0)
        if rest * (lam * M * M) ** (p / 2.0) <= c1 * eps * max(X, 0.0) or lam <= lam_floor:
            break
        nominal = bucket_count(max(_lambda_formula(max(X, X_lb), p, d, c1, eps, M), 1e-300), alpha) + 1
        if len(windows) > budget_factor * nominal:
            raise BudgetExceeded("window budget exhausted", lam, X)
        if budget_sec is not None and time.perf_counter() - t0 > budget_sec:
            raise BudgetExceeded(f"time budget {budget_sec}s exhausted", lam, X)
        lam = max(lam / 2.0, lam_floor)
    if not return_record:
        return X
    probes = sum(v[2] for v in windows.values())
    params = {"p": p, "eps": eps, "alpha": alpha, "gamma": gamma, "k": k, "lambda": lam,
              "M": M, "T": bucket_count(lam, alpha), "a1": a1, "engine": ctx.engine}
    return SumResult(X, params, 2 * probes, trace, dict(ctx.counters))


def _poly_apply_vector(ctx: SpectralContext, q: PowerPolynomial, lo, hi, gamma, eps_w, Y):
    """q(h(G) G) Y with the Taylor form evaluated by Horner on K = h(G) G."""
    from .linops import gram_apply

    def K(V):
        return ctx.window_apply(lo, hi, gamma, eps_w, gram_apply(ctx.As, V))

    b = q.scale
    acc = q.taylor_coeffs[-1] * Y
    for aj in q.taylor_coeffs[-2::-1]:
        acc = acc - K(acc) / b + aj * Y
    for _ in range(q.int_power):
        acc = K(acc) / b
    return b ** q.p * acc


# --------------------------------------------------------------------------
# Orlicz and Ky Fan


def orlicz_sum(A, g: Callable, p1: float, p2: float, eps: float, seed: int = 0, *,
               k: int = 0, c: float = HIST_C, c1: float = HIST_C1, c2: float = HIST_C2,
               c3: float = HIST_C3, norm_eps: Optional[float] = None, engine: str = "auto",
               return_record: bool = False):
    """(1 +- eps) sum_i g(sigma_i) for g with the power envelope (p1, p2)."""
    spec = SumSpec.orlicz(g, p1, p2)
    a = oriented(as_matrix(A))
    if _zero(a):
        return _zero_result(return_record, "orlicz")
    n = a.n_rows
    ctx = _make_context(a, k, seed, engine)
    ne = eps / 4.0 if norm_eps is None else norm_eps
    Xp2 = schatten_histogram(a, p2, ne, seed, k=k, c=c, c1=c1, c2=c2, c3=c3, ctx=ctx)
    M = ctx.M
    lam = max(((c * eps / 2.0) * Xp2 / n) ** (2.0 / p2) / M ** 2, 1e-300)
    alpha = c * eps / max(1.0, p1)
    e1 = c * eps
    hist = IncrementalHistogram(ctx, alpha, c1 * e1 * alpha, e1, c2=c2, c3=c3, seed=seed + 1)
    res = hist.result(min(lam, 0.5))
    X = sum_from_histogram(res, spec)
    if not return_record:
        return X
    params = {"p1": p1, "p2": p2, "eps": eps, "alpha": alpha, "lambda": lam, "M": M,
              "norm_estimate": Xp2, "T": res.T}
    return SumResult(X, params, hist.probe_count, [lam], dict(ctx.counters), res)


def kyfan_from_histogram(hist: HistogramResult, w: int, c_eps: float) -> float:
    """sum_{i <= w} M a1^{1/2} (1 - alpha)^{t(i)/2}, t(i) the first t with inflated cumsum >= i."""
    counts = np.asarray(hist.counts, dtype=np.float64)
    cum = np.cumsum((1.0 + 2.0 * c_eps) * counts)
    alpha = hist.alpha if hist.T >= 1 else 0.0
    total = 0.0
    for i in range(1, w + 1):
        idx = np.nonzero(cum >= i - 1e-12)[0]
        if idx.size == 0:
            break
        t = int(idx[0])
        total += hist.M * math.sqrt(hist.a1) * (1.0 - alpha) ** (t / 2.0)
    return total


def kyfan(A, w: int, eps: float, seed: int = 0, *, k: Optional[int] = None, c: float = KYFAN_C,
          inflate_c: float = KYFAN_INFLATE_C, c1: float = HIST_C1, c2: float = KYFAN_C2, c3: float = HIST_C3, tail_c: float = TAIL_C,
          engine: str = "auto", budget_factor: float = BUDGET_FACTOR,
          budget_sec: Optional[float] = None, return_record: bool = False):
    """(1 +- eps) sum of the top w singular values."""
    a = oriented(as_matrix(A))
    d = a.n_cols
    if not 1 <= w <= d:
        raise ValueError(f"w must lie in [1, {d}]")
    if _zero(a):
        return _zero_result(return_record, "kyfan")
    if k is None:
        k = int(math.ceil(math.sqrt(w)))
    t0 = time.perf_counter()
    ctx = _make_context(a, k, seed, engine)
    M = ctx.M
    alpha = c * eps
    e1 = c * eps
    lb = M / 2.0
    if ctx.k > 0 and ctx.deflation.sigma_tilde_sq.size:
        s = np.sqrt(ctx.deflation.sigma_tilde_sq) * M
        lb = max(lb, float(s[: min(w, s.size)].sum()))

    def lam_of(kf):
        return (tail_c * eps * kf / (M * w)) ** 2

    lam_floor = lam_of(lb)
    # eps2 depends on lambda; fix it at the deepest level the search may reach
    e2 = c2 * eps * eps / max(1.0, math.log(1.0 / lam_floor))
    gamma = min(c1 * e2 * alpha, 0.5 * alpha)
    hist = IncrementalHistogram(ctx, alpha, gamma, e1, c2=1.0, c3=c3, seed=seed)

    def value_of(res):
        return kyfan_from_histogram(res, w, inflate_c * eps)

    def tail_of(res, lam, X):
        # enough counted mass above threshold to fill w slots, and the
        # threshold value is below tail_c eps of the running estimate per slot
        return float(np.sum(res.counts)) >= w and math.sqrt(lam) * M * w <= tail_c * eps * X

    res, X, trace = _search(hist, value_of, tail_of, 0.25, lam_floor, lam_of, budget_factor,
                            budget_sec, t0)
    if not return_record:
        return X
    params = {"w": w, "eps": eps, "alpha": alpha, "eps2": e2, "gamma": gamma, "k": k,
              "lambda": trace[-1], "M": M, "T": res.T}
    return SumResult(X, params, hist.probe_count, trace, dict(ctx.counters), res)


# --------------------------------------------------------------------------
# SVD entropy


@dataclass(frozen=True)
class EntropyConfig:
    eps: float
    n: int
    mode: str = "additive"
    c1: float = 1.0

    def __post_init__(self):
        if not 0 < self.eps < 1:
            raise ValueError("eps must lie in (0, 1)")
        if self.mode not in ("additive", "multiplicative"):
            raise ValueError("mode must be additive or multiplicative")

    @property
    def logn(self) -> float:
        return math.log(max(self.n, 3))

    @property
    def k1(self) -> int:
        c = max(self.c1, 1.0)
        return max(5, int(math.ceil(math.log(1.0 / self.eps))) + int(math.ceil(math.log(c)))
                   + int(math.ceil(math.log(self.logn))))

    @property
    def ell(self) -> float:
        return 1.0 / (2.0 * self.c1 * (self.k1 + 1) * self.logn)

    @property
    def alphas(self) -> np.ndarray:
        k1 = self.k1
        y = np.cos(np.arange(k1 + 1) * np.pi / k1)
        return (k1 * k1 * self.ell * y - self.ell * (k1 * k1 + 1)) / (2 * k1 * k1 + 1)

    @property
    def eps_tilde(self) -> float:
        return self.eps / (12.0 * self.c1 * (self.k1 + 1) ** 3 * self.logn)


def barycentric_weights(k1: int) -> np.ndarray:
    """Weights for the Chebyshev-Lobatto nodes cos(i pi / k1), invariant under affine maps."""
    w = (-1.0) ** np.arange(k1 + 1)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def interpolate_at_zero(nodes, values, weights, lebesgue_cap: float = 1e8) -> float:
    nodes = np.asarray(nodes, dtype=np.float64)
    if np.any(nodes == 0):
        return float(np.asarray(values)[nodes == 0][0])
    r = weights / (0.0 - nodes)
    leb = float(np.abs(r).sum() / abs(r.sum()))
    if not np.isfinite(leb) or leb > lebesgue_cap:
        raise ValueError(f"interpolation is ill conditioned (Lebesgue factor {leb:.3g})")
    return float(np.dot(r, values) / r.sum())


def tsallis_values(sig, counts, alphas) -> np.ndarray:
    """(1 - Z_{1+a} / Z^{1+a}) / a for a spectrum given as values with multiplicities."""
    sig = np.asarray(sig, dtype=np.float64)
    counts = np.asarray(counts, dtype=np.float64)
    m = (counts > 0) & (sig > 0)
    sig, counts = sig[m], counts[m]
    Z = math.fsum(counts * sig)
    q = sig / Z
    # 1 - sum c q^{1+a} = -sum c q (q^a - 1); expm1 keeps the small-a difference exact
    return np.array([-math.fsum(counts * q * np.expm1(a * np.log(q))) / a for a in alphas])


def entropy_from_histogram(hist: HistogramResult, cfg: EntropyConfig, top=None) -> float:
    """Interpolated entropy; ``top`` = (sigma_1, True) adds an exactly known heavy value."""
    lower = np.sqrt(hist.M ** 2 * hist.boundaries[1:])
    sig = lower
    counts = np.asarray(hist.counts, dtype=np.float64)
    if top is not None:
        sig = np.concatenate([[top], sig])
        counts = np.concatenate([[1.0], counts])
    if not np.any(counts * sig > 0):
        return 0.0
    vals = tsallis_values(sig, counts, cfg.alphas)
    return interpolate_at_zero(cfg.alphas, vals, barycentric_weights(cfg.k1))


def _deflate_top(a, seed: int):
    """A (I - z z^T) with the top right singular vector z; returns (matrix, sigma_1)."""
    from .deflate import block_krylov_topk

    defl = block_krylov_topk(a, 1, 0.1, seed)
    z = defl.Z[:, 0]
    az = apply(a, z)
    x = a.to_dense() - np.outer(az, z)
    return DenseMatrix.from_array(x), math.sqrt(float(defl.sigma_tilde_sq[0]))


def svd_entropy(A, eps: float, mode: str = "additive", seed: int = 0, *, c1: float = 1.0,
                c: float = HIST_C, hc1: float = HIST_C1, c2: float = HIST_C2, c3: float = HIST_C3,
                tail_c: float = TAIL_C, engine: str = "auto", budget_factor: float = BUDGET_FACTOR,
                budget_sec: Optional[float] = None, return_record: bool = False):
    """Entropy of sigma / sum(sigma) by Tsallis interpolation at the points 1 + alpha_i.

    All Tsallis values are taken from one histogram, so their errors are
    correlated; in multiplicative mode the top singular value is deflated and
    handled exactly.
    """
    a = oriented(as_matrix(A))
    n, d = a.shape
    cfg = EntropyConfig(eps, n, mode, c1)
    if _zero(a):
        return _zero_result(return_record, "entropy")
    t0 = time.perf_counter()
    top = None
    base = a
    if mode == "multiplicative":
        base, top = _deflate_top(a, seed)
    ctx = _make_context(base, 0, seed, engine)
    M = ctx.M
    alpha = c * eps
    e1 = c * eps
    hist = IncrementalHistogram(ctx, alpha, hc1 * e1 * alpha, e1, c2=c2, c3=c3, seed=seed)
    # truncation: dropped values below sqrt(lam) M carry at most tail_c eps / log n of the mass
    scale = tail_c * eps / cfg.logn
    lb = (M / 2.0) + (top or 0.0)

    def value_of(res):
        return sum_from_histogram(res, SumSpec.schatten(1.0)) + (top or 0.0)

    def tail_of(res, lam, X):
        rest = max(d - float(np.sum(res.counts)), 0.0)
        return rest * math.sqrt(lam) * M <= scale * X

    def lam_of(X):
        return (scale * X / d) ** 2 / M ** 2

    res, X, trace = _search(hist, value_of, tail_of, 0.25, lam_of(lb), lam_of, budget_factor,
                            budget_sec, t0)
    H = entropy_from_histogram(res, cfg, top)
    if not return_record:
        return H
    params = {"eps": eps, "mode": mode, "k1": cfg.k1, "alphas": [float(x) for x in cfg.alphas],
              "alpha": alpha, "lambda": trace[-1], "M": M, "T": res.T}
    return SumResult(H, params, hist.probe_count, trace, dict(ctx.counters), res)
