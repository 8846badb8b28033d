"""Soft step and soft window functions of the Gram spectrum via the ridge map.

A step at lambda is q(r_lambda(A^T A)) with r_lambda(x) = x / (x + lambda) and
q a Chebyshev series on [0, 1] approximating the unit step at 1/2. Two
evaluation engines are offered:

* ``vector``: Clenshaw recurrence on a block of vectors, one ridge regression
  solve (A^T A + lambda I)^{-1} A^T A z per polynomial degree.
* ``dense``: the ridge map is formed once per level as an explicit d x d
  matrix through a Cholesky factorization, and the polynomial is applied by
  Chebyshev Paterson-Stockmeyer evaluation (about 2 sqrt(D) matrix products).

Both engines evaluate the same polynomial of the same ridge map; ``auto``
picks ``dense`` for d up to ``dense_limit``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
import scipy.linalg as sla
from scipy.fft import dct
from scipy.special import erfc, erfcinv

from .deflate import Deflation, block_krylov_topk, build_preconditioner, empty_deflation
from .linops import (
    DenseMatrix,
    Matrix,
    SparseMatrix,
    as_matrix,
    gram_apply,
    gram_dense,
    oriented,
    spectral_norm_estimate,
)
from .solvers import RidgeProblem, SolverConfig, ridge_solve

# floor on per-solve relative accuracy; double precision cannot certify less
SOLVE_TOL_FLOOR = 1e-11


@dataclass(frozen=True)
class StepSpec:
    lam: float
    gamma: float
    eps: float
    solver_config: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        for name in ("lam", "gamma", "eps"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")


@dataclass(frozen=True, eq=False)
class StepPolynomial:
    """q(r) = sum_k coefficients[k] T_k(2 r - 1)."""

    coefficients: np.ndarray
    degree: int
    gamma: float
    eps: float

    @property
    def coeff_l1(self) -> float:
        return float(np.abs(self.coefficients).sum())

    def __call__(self, r) -> np.ndarray:
        return np.polynomial.chebyshev.chebval(2.0 * np.asarray(r, dtype=np.float64) - 1.0,
                                               self.coefficients)


def step_degree_cap(gamma: float, eps: float) -> int:
    return int(math.ceil(40.0 / gamma * math.log(1.0 / (eps * gamma))))


@lru_cache(maxsize=512)
def _step_coefficients(gamma: float, eps: float) -> np.ndarray:
    # erf-smoothed step centred at 1/2 - gamma/8; within eps/2 of 0 or 1 beyond gamma/8
    center = 0.5 - gamma / 8.0
    sigma = (gamma / 8.0) / float(erfcinv(eps))
    cap = step_degree_cap(gamma, eps)
    n = 256
    while True:
        x = np.cos(np.pi * (np.arange(n) + 0.5) / n)
        vals = 0.5 * erfc(-((x + 1.0) / 2.0 - center) / sigma)
        c = dct(vals, type=2) / n
        c[0] /= 2.0
        # the upper half must be negligible so aliasing cannot hide part of the tail
        if np.abs(c[n // 2:]).sum() <= 1e-3 * eps or n > 8 * cap:
            break
        n *= 2
    tail = np.cumsum(np.abs(c[::-1]))[::-1]
    # smallest D with sum_{k > D} |c_k| <= eps / 2
    ok = np.nonzero(np.append(tail[1:], 0.0) <= eps / 2.0)[0]
    deg = int(ok[0])
    if deg > cap:
        raise ValueError(f"step degree {deg} exceeds cap {cap} for gamma={gamma}, eps={eps}")
    return c[: deg + 1].copy()


def build_step_polynomial(gamma: float, eps: float) -> StepPolynomial:
    """Polynomial q on [0, 1]: q >= 1 - eps on [1/2, 1], q <= eps on [0, 1/2 - gamma/4]."""
    if not (0 < gamma < 1 and 0 < eps < 1):
        raise ValueError("gamma and eps must lie in (0, 1)")
    c = _step_coefficients(float(gamma), float(eps))
    c.setflags(write=False)
    return StepPolynomial(c, c.shape[0] - 1, float(gamma), float(eps))


def check_step_envelope(q: StepPolynomial, points: int = 10_000) -> bool:
    r = np.linspace(0.0, 1.0, points)
    v = q(r)
    e = q.eps
    lo = r <= 0.5 - q.gamma / 4.0
    hi = r >= 0.5
    return bool(np.all(v >= -e) and np.all(v <= 1 + e) and np.all(v[hi] >= 1 - e)
                and np.all(v[lo] <= e))


# --------------------------------------------------------------------------
# dense Chebyshev evaluation


def _ps_blocks(c: np.ndarray, s: int) -> list[np.ndarray]:
    """Rewrite sum c_k T_k(x) as sum_j T_j(T_s(x)) Q_j(x), deg Q_j < s."""
    deg = c.shape[0] - 1
    nblk = deg // s + 1
    # pad so every block is full; block j only writes into block j - 1
    c = np.concatenate([np.asarray(c, dtype=np.float64), np.zeros(nblk * s - deg - 1)])
    Q = np.zeros((nblk, s))
    for j in range(nblk - 1, 0, -1):
        # T_{js+i} = 2 T_{js} T_i - T_{js-i}
        seg = c[j * s + 1:(j + 1) * s]
        Q[j, 0] += c[j * s]
        Q[j, 1:] += 2.0 * seg
        c[j * s - 1:(j - 1) * s:-1] -= seg
    Q[0] += c[:s]
    return list(Q)


def chebyshev_matrix_poly(c: np.ndarray, B: np.ndarray, counter: Optional[dict] = None) -> np.ndarray:
    """sum_k c_k T_k(B) for symmetric B with spectrum in [-1, 1]."""
    deg = c.shape[0] - 1
    d = B.shape[0]
    eye = np.eye(d)
    if deg == 0:
        return c[0] * eye
    s = max(2, int(math.ceil(math.sqrt(deg + 1))))
    T = [eye, B]
    for _ in range(2, s + 1):
        T.append(2.0 * (B @ T[-1]) - T[-2])
    Y = T[s]
    Q = _ps_blocks(c, s)
    baby = np.stack(T[:s]).reshape(s, d * d)
    Q = np.asarray(Q)

    cache: dict[int, np.ndarray] = {}
    group = 16

    def block(j):
        # blocks are consumed in descending order; form them in batches via one product
        if j not in cache:
            cache.clear()
            lo = max(0, j - group + 1)
            for jj, m in zip(range(lo, j + 1), (Q[lo:j + 1] @ baby).reshape(-1, d, d)):
                cache[jj] = m
        return cache[j]

    mults = s - 1
    if Q.shape[0] == 1:
        out = block(0)
    else:
        # Clenshaw in Y = T_s(B) with matrix coefficients Q_j(B)
        b1 = np.zeros((d, d))
        b2 = np.zeros((d, d))
        for j in range(Q.shape[0] - 1, 0, -1):
            b1, b2 = block(j) + 2.0 * (Y @ b1) - b2, b1
            mults += 1
        out = block(0) + Y @ b1 - b2
        mults += 1
    if counter is not None:
        counter["matmuls"] = counter.get("matmuls", 0) + mults
    return 0.5 * (out + out.T)


# --------------------------------------------------------------------------
# evaluation context


def _scaled(a: Matrix, factor: float) -> Matrix:
    if isinstance(a, DenseMatrix):
        return DenseMatrix.from_array(a.array * factor)
    return SparseMatrix.from_csr(a.row_offsets, a.col_indices, a.values * factor, a.shape)


class SpectralContext:
    """Rescaled matrix A/M plus cached ridge maps, deflation and work counters."""

    def __init__(self, A, M: Optional[float] = None, *, k: int = 0, seed: int = 0,
                 engine: str = "auto", solver_config: Optional[SolverConfig] = None,
                 dense_limit: int = 512, deflation_eps: float = 0.1):
        a = oriented(as_matrix(A))
        self.A = a
        self.M = float(M) if M is not None else spectral_norm_estimate(a, seed=seed)
        if not self.M > 0:
            raise ValueError("scale M must be positive")
        self.As = _scaled(a, 1.0 / self.M)
        self.d = a.n_cols
        self.n = a.n_rows
        self.k = int(k)
        self.seed = int(seed)
        if engine not in ("auto", "dense", "vector"):
            raise ValueError(f"unknown engine {engine!r}")
        self.engine = ("dense" if self.d <= dense_limit else "vector") if engine == "auto" else engine
        self.solver_config = solver_config or SolverConfig(method="precond_cg")
        self.deflation_eps = deflation_eps
        self._deflation: Optional[Deflation] = None
        self._gram: Optional[np.ndarray] = None
        self._ridge: dict[float, np.ndarray] = {}
        self.counters = {"ridge_solves": 0, "solver_matvecs": 0, "row_samples": 0,
                         "matmuls": 0, "step_evals": 0, "window_calls": 0}
        self.window_seconds: list[tuple[float, float, float]] = []
        # (a, b, solver matvecs) per window call on the vector engine
        self.window_work: list[tuple[float, float, int]] = []

    # -- shared precomputation

    @property
    def deflation(self) -> Deflation:
        if self._deflation is None:
            if self.k > 0:
                self._deflation = block_krylov_topk(self.As, min(self.k, self.d, self.n),
                                                    self.deflation_eps, self.seed,
                                                    norm_sq=1.0)
            else:
                self._deflation = empty_deflation(self.d, 1.0, self.n)
        return self._deflation

    @property
    def gram(self) -> np.ndarray:
        if self._gram is None:
            self._gram = gram_dense(self.As)
        return self._gram

    def ridge_matrix(self, lam: float) -> np.ndarray:
        """(G + lam I)^{-1} G for G the rescaled Gram matrix."""
        R = self._ridge.get(lam)
        if R is None:
            G = self.gram
            cf = sla.cho_factor(G + lam * np.eye(self.d), lower=False, check_finite=False)
            R = sla.cho_solve(cf, G, check_finite=False)
            R = 0.5 * (R + R.T)
            if len(self._ridge) > 4:
                self._ridge.pop(next(iter(self._ridge)))
            self._ridge[lam] = R
            self.counters["ridge_solves"] += 1
        return R

    def ridge_apply(self, lam: float, Y, tol: float) -> np.ndarray:
        """r_lam(A^T A) Y: compute z = A^T A Y first, then solve."""
        Z = gram_apply(self.As, Y)
        problem = RidgeProblem(self.As, lam, build_preconditioner(self.deflation, lam), norm_sq=1.0)
        cfg = SolverConfig(target_rel_error=max(tol, SOLVE_TOL_FLOOR),
                           max_epochs=self.solver_config.max_epochs,
                           epoch_length_factor=self.solver_config.epoch_length_factor,
                           step_size_factor=self.solver_config.step_size_factor,
                           seed=self.seed + self.counters["ridge_solves"],
                           method=self.solver_config.method)
        rep = ridge_solve(problem, Z, cfg)
        self.counters["ridge_solves"] += 1 if np.ndim(Y) == 1 else np.shape(Y)[1]
        self.counters["solver_matvecs"] += rep.matvec_count + 1
        self.counters["row_samples"] += rep.row_sample_count
        return rep.solution

    # -- steps

    def step_matrix(self, lam: float, gamma: float, eps: float) -> np.ndarray:
        q = build_step_polynomial(gamma, eps)
        B = 2.0 * self.ridge_matrix(lam) - np.eye(self.d)
        self.counters["step_evals"] += 1
        return chebyshev_matrix_poly(np.asarray(q.coefficients), B, self.counters)

    def step_apply(self, lam: float, gamma: float, eps: float, Y) -> np.ndarray:
        if self.engine == "dense":
            return self.step_matrix(lam, gamma, eps) @ Y
        q = build_step_polynomial(gamma, eps)
        c = q.coefficients
        tol = eps / (4.0 * max(q.degree, 1) * q.coeff_l1)
        tol = min(tol, (gamma * eps / 16.0) ** 3)
        Y = np.asarray(Y, dtype=np.float64)
        self.counters["step_evals"] += 1

        def bmap(V):
            return 2.0 * self.ridge_apply(lam, V, tol) - V

        if q.degree == 0:
            return c[0] * Y
        b1 = np.zeros_like(Y)
        b2 = np.zeros_like(Y)
        for j in range(q.degree, 0, -1):
            t = c[j] * Y - b2
            if j < q.degree:
                t = t + 2.0 * bmap(b1)
            b1, b2 = t, b1
        return c[0] * Y + bmap(b1) - b2

    # -- windows

    @staticmethod
    def _window_parts(a: float, b: float, gamma: float):
        if not 0 < a < b:
            raise ValueError(f"window needs 0 < a < b, got a={a}, b={b}")
        if b >= 1.0 / (1.0 + gamma):
            return None
        return (1.0 + gamma) * b

    def window_matrix(self, a: float, b: float, gamma: float, eps: float) -> np.ndarray:
        """Dense h(G) = s_a^gamma(G) (I - s_{(1+gamma) b}^{gamma/2}(G))."""
        t0 = time.perf_counter()
        top = self._window_parts(a, b, gamma)
        e = eps / 3.0
        S1 = self.step_matrix(a, gamma, e)
        if top is None:
            H = S1
        else:
            S2 = self.step_matrix(top, gamma / 2.0, e)
            H = S1 - S1 @ S2
            H = 0.5 * (H + H.T)
            self.counters["matmuls"] += 1
        self.counters["window_calls"] += 1
        self.window_seconds.append((a, b, time.perf_counter() - t0))
        return H

    def window_apply(self, a: float, b: float, gamma: float, eps: float, Y) -> np.ndarray:
        if self.engine == "dense":
            return self.window_matrix(a, b, gamma, eps) @ Y
        t0 = time.perf_counter()
        mv0 = self.counters["solver_matvecs"]
        top = self._window_parts(a, b, gamma)
        e = eps / 3.0
        X = self.step_apply(a, gamma, e, Y)
        if top is not None:
            X = X - self.step_apply(top, gamma / 2.0, e, X)
        self.counters["window_calls"] += 1
        self.window_seconds.append((a, b, time.perf_counter() - t0))
        self.window_work.append((a, b, self.counters["solver_matvecs"] - mv0))
        return X


def apply_soft_step(A, y, spec: StepSpec, M: float = 1.0, *, k: int = 0, seed: int = 0,
                    engine: str = "auto") -> np.ndarray:
    """Approximately s_lambda^gamma((A/M)^T (A/M)) y."""
    ctx = SpectralContext(A, M, k=k, seed=seed, engine=engine, solver_config=spec.solver_config)
    return ctx.step_apply(spec.lam, spec.gamma, spec.eps, np.asarray(y, dtype=np.float64))


def apply_soft_window(A, y, a: float, b: float, gamma: float, eps: float, k: int = 0,
                      M: float = 1.0, *, seed: int = 0, engine: str = "auto") -> np.ndarray:
    """Approximately h^gamma_{[a,b]}((A/M)^T (A/M)) y."""
    if not a < b:
        raise ValueError(f"window needs a < b, got a={a}, b={b}")
    ctx = SpectralContext(A, M, k=k, seed=seed, engine=engine)
    return ctx.window_apply(a, b, gamma, eps, np.asarray(y, dtype=np.float64))
