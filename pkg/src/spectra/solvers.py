"""Ridge regression solvers for M_lambda = A^T A + lambda I.

Methods: plain SVRG, deflation-preconditioned SVRG, accelerated preconditioned
SVRG (approximate proximal point outer loop), preconditioned conjugate
gradient, and a dense Cholesky solve for small problems.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import kernels
from .deflate import (
    Preconditioner,
    apply_preconditioner,
    build_preconditioner,
    empty_deflation,
)
from .linops import (
    DimensionError,
    Matrix,
    RowDistribution,
    SparseMatrix,
    apply,
    apply_transpose,
    distribution_from_weights,
    gram_apply,
    gram_dense,
    row_distribution,
    spectral_norm_estimate,
)

ACCEL_MIN_R = 4.0
METHODS = ("svrg", "precond_svrg", "accel_precond_svrg", "precond_cg", "direct", "auto")


class SolverError(RuntimeError):
    """Non-convergence; carries the last iterate and its residual bound."""

    def __init__(self, msg, last_iterate=None, residual=None):
        super().__init__(msg)
        self.last_iterate = last_iterate
        self.residual = residual


@dataclass(eq=False)
class RidgeProblem:
    A: Matrix
    lam: float
    preconditioner: Optional[Preconditioner] = None
    norm_sq: Optional[float] = None
    _gram: Optional[np.ndarray] = field(default=None, repr=False)
    _chol: Optional[tuple] = field(default=None, repr=False)

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.preconditioner is not None and self.preconditioner.lam != self.lam:
            raise ValueError("preconditioner was built for a different lambda")

    @property
    def d(self) -> int:
        return self.A.n_cols

    def squared_norm_bound(self) -> float:
        """Upper bound on sigma_1^2, from a factor-two norm estimate."""
        if self.norm_sq is None:
            if self.preconditioner is not None and self.preconditioner.deflation.norm_sq:
                self.norm_sq = float(self.preconditioner.deflation.norm_sq)
            else:
                try:
                    self.norm_sq = spectral_norm_estimate(self.A, seed=0) ** 2
                except ValueError:
                    self.norm_sq = 0.0
        return self.norm_sq

    def matvec(self, x) -> np.ndarray:
        return gram_apply(self.A, x) + self.lam * x


@dataclass
class SolverConfig:
    target_rel_error: float = 1e-6
    max_epochs: int = 500
    epoch_length_factor: float = 2.0
    step_size_factor: float = 0.125
    seed: int = 0
    method: str = "precond_cg"
    # outer-loop regularization override for the accelerated method (None = automatic)
    accel_gamma: Optional[float] = None

    def __post_init__(self):
        if not 0 < self.target_rel_error < 1:
            raise ValueError("target_rel_error must lie in (0, 1)")
        if self.epoch_length_factor <= 0 or self.step_size_factor <= 0:
            raise ValueError("factors must be positive")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")


@dataclass
class SolverReport:
    solution: np.ndarray
    epochs_run: int = 0
    matvec_count: int = 0
    row_sample_count: int = 0
    final_residual_Mnorm_rel: float = float("nan")
    method: str = ""
    iterations: int = 0
    rounds: int = 0


# --------------------------------------------------------------------------
# objective helpers


def objective(problem: RidgeProblem, x, b) -> float:
    """f(x) = x^T M x / 2 - b^T x."""
    return float(0.5 * x @ problem.matvec(x) - b @ x)


def m_norm(problem: RidgeProblem, x) -> float:
    return math.sqrt(max(float(x @ problem.matvec(x)), 0.0))


def residual_bound(problem: RidgeProblem, r, b) -> np.ndarray:
    """Upper bound on |x - x*|_M / |x*|_M from the residual r = b - M x.

    Uses |r|_{M^-1} <= |r| / sqrt(lambda) and |b|_{M^-1} >= |b| / sqrt(sigma_1^2 + lambda).
    """
    kappa = (problem.squared_norm_bound() + problem.lam) / problem.lam
    rn = np.linalg.norm(r, axis=0)
    bn = np.linalg.norm(b, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(bn > 0, rn / np.where(bn > 0, bn, 1.0) * math.sqrt(kappa), 0.0)
    return out


# --------------------------------------------------------------------------
# stochastic component systems


@dataclass(eq=False)
class _Components:
    """Rows b_i = delta r_i + Z (dm * W_i) of a quadratic sum, plus ridge rho."""

    R: SparseMatrix
    Z: np.ndarray
    W: np.ndarray
    dm: np.ndarray
    delta: float
    rho: float
    dist: RowDistribution
    fro_sq: float
    mu: float
    P: Optional[Preconditioner]


def _stacked_rows(A: Matrix, lam: float) -> SparseMatrix:
    """[A; sqrt(lambda) I] as one CSR matrix."""
    a = A.to_scipy() if isinstance(A, SparseMatrix) else sp.csr_matrix(A.array)
    s = sp.vstack([a, math.sqrt(lam) * sp.identity(A.n_cols, format="csr")], format="csr")
    return SparseMatrix.from_scipy(s)


def _as_sparse(A: Matrix) -> SparseMatrix:
    return A if isinstance(A, SparseMatrix) else SparseMatrix.from_dense(A.array)


def _plain_components(problem: RidgeProblem) -> _Components:
    A = _as_sparse(problem.A)
    dist = row_distribution(A)
    return _Components(A, np.zeros((A.n_cols, 0)), np.zeros((A.n_rows, 0)), np.zeros(0), 1.0,
                       problem.lam, dist, A.frob_sq, problem.lam, None)


def _precond_components(problem: RidgeProblem, P: Preconditioner) -> _Components:
    A = problem.A
    lam = problem.lam
    R = _stacked_rows(A, lam)
    defl = P.deflation
    Z = defl.Z
    if defl.k:
        AZ = defl.AZ if defl.AZ is not None and defl.AZ.shape[0] == A.n_rows else apply(A, Z)
        W = np.vstack([AZ, math.sqrt(lam) * Z])
    else:
        W = np.zeros((R.n_rows, 0))
    t = P.tail_scale
    ds = P.diag_scales
    wsq = np.einsum("ij,ij->i", W, W) if defl.k else np.zeros(R.n_rows)
    row_sq = (W * W) @ (ds * ds) + t * t * np.maximum(R.row_sq_norms - wsq, 0.0)
    dist = distribution_from_weights(row_sq)
    top = defl.sigma_tilde_sq[-1] if defl.k else (defl.norm_sq or problem.squared_norm_bound())
    mu = min(lam / (top + lam), 0.5)
    return _Components(R, Z, np.ascontiguousarray(W), ds - t, t, 0.0, dist,
                       float(row_sq.sum()), mu, P)


def _comp_B(c: _Components, x):
    """B x with B having rows b_i."""
    w = x if c.P is None else apply_preconditioner(c.P, x)
    return apply(c.R, w)


def _comp_Bt(c: _Components, y):
    w = apply_transpose(c.R, y)
    return w if c.P is None else apply_preconditioner(c.P, w)


_CHUNK = 1 << 18


def _run_epoch(c: _Components, x0, lin, rho_extra, K, eta, rng, counters):
    """One SVRG epoch on sum_i psi_i with linear term ``lin``; returns x_K and g0.

    Row draws are generated in fixed-size chunks from ``rng`` so long epochs
    do not allocate O(K) memory; the draw sequence does not depend on backend.
    """
    rho = c.rho + rho_extra
    Bx = _comp_B(c, x0)
    g0 = _comp_Bt(c, Bx) + rho * x0 - lin
    bg0 = _comp_B(c, g0)
    counters["matvec"] += 3
    counters["rows"] += int(K)
    d = x0.shape[0]
    k = c.Z.shape[1]
    v = np.zeros(d)
    ztv = np.zeros(k)
    u = np.zeros(k)
    s, cc = 1.0, 0.0
    done = 0
    while done < K:
        step = min(_CHUNK, K - done)
        rows = c.dist.sample(rng.random(step)).astype(np.int64)
        s, cc = kernels.svrg_steps(c.R.row_offsets, c.R.col_indices, c.R.values, c.W, c.dm,
                                   c.delta, rho, c.dist.probabilities, rows, eta, bg0, v, ztv, u,
                                   s, cc)
        done += step
    x = x0 + s * (v + (c.Z @ u if k else 0.0)) + cc * g0
    return x, g0


def _epoch_rng(seed: int, epoch: int, tag: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(epoch), tag])))


def svrg_epoch(problem: RidgeProblem, x0, b, dist: Optional[RowDistribution], m: int, eta: float,
               rng: np.random.Generator) -> np.ndarray:
    """One plain SVRG epoch; returns x_K with K uniform in [1, m] (x0 if m = 0)."""
    x0 = np.asarray(x0, dtype=np.float64)
    if m <= 0:
        return x0.copy()
    comps = _plain_components(problem)
    if dist is not None:
        comps.dist = dist
    K = int(rng.integers(1, m + 1))
    x, _ = _run_epoch(comps, x0, np.asarray(b, dtype=np.float64), 0.0, K, eta, rng,
                      {"matvec": 0, "rows": 0})
    return x


def _svrg_solve(problem: RidgeProblem, b, config: SolverConfig, comps: _Components,
                x_init=None, prox=None, max_epochs=None, check=True):
    """Run SVRG epochs until the residual bound reaches the target.

    ``prox = (gamma, y)`` adds gamma/2 |x - y|^2 (used by the outer loop).
    Iterates live in the component coordinates (preconditioned if comps.P).
    """
    counters = {"matvec": 0, "rows": 0}
    lin = b if comps.P is None else apply_preconditioner(comps.P, b)
    gamma, y = (0.0, None) if prox is None else prox
    if gamma:
        lin = lin + gamma * y
    sbar = comps.fro_sq + 2.0 * (comps.rho + gamma)
    mu = comps.mu + gamma
    m = max(1, int(math.ceil(config.epoch_length_factor * sbar / mu)))
    eta = config.step_size_factor / sbar
    x = np.zeros(problem.d) if x_init is None else np.array(x_init, dtype=np.float64)
    epochs = max_epochs if max_epochs is not None else config.max_epochs
    err = float("inf")
    for e in range(epochs):
        rng = _epoch_rng(config.seed, e, 0x5F6)
        K = int(rng.integers(1, m + 1))
        x_new, g0 = _run_epoch(comps, x, lin, gamma, K, eta, rng, counters)
        if check:
            # residual of the current epoch start, mapped to original coordinates
            r_hat = -(g0 - gamma * (x - y)) if gamma else -g0
            r = r_hat if comps.P is None else apply_preconditioner(comps.P, r_hat, power=-1.0)
            err = float(residual_bound(problem, r, b))
            if err <= config.target_rel_error:
                return x, e, counters, err
        x = x_new
    return x, epochs, counters, err


def _final_error(problem, comps, x_hat, b):
    x = x_hat if comps.P is None else apply_preconditioner(comps.P, x_hat)
    r = b - problem.matvec(x)
    return x, float(residual_bound(problem, r, b))


def _ensure_preconditioner(problem: RidgeProblem) -> Preconditioner:
    if problem.preconditioner is None:
        defl = empty_deflation(problem.d, problem.squared_norm_bound(), problem.A.n_rows)
        problem.preconditioner = build_preconditioner(defl, problem.lam)
    return problem.preconditioner


def _solve_svrg_family(problem, b, config, precond):
    comps = _precond_components(problem, _ensure_preconditioner(problem)) if precond \
        else _plain_components(problem)
    x_hat, epochs, counters, err = _svrg_solve(problem, b, config, comps)
    x, err = _final_error(problem, comps, x_hat, b)
    counters["matvec"] += 2
    report = SolverReport(x, epochs, counters["matvec"], counters["rows"], err,
                          "precond_svrg" if precond else "svrg")
    if err > config.target_rel_error:
        raise SolverError(f"{report.method} did not converge in {config.max_epochs} epochs",
                          x, err)
    return report


def accelerated_outer_loop(problem: RidgeProblem, b, inner=None,
                           config: Optional[SolverConfig] = None) -> SolverReport:
    """Approximate proximal point acceleration around preconditioned SVRG.

    Each round approximately minimizes f(x) + gamma/2 |x - y|^2 to relative
    accuracy 1/c', c' = 4 ((2 gamma + mu) / mu)^{3/2}, then extrapolates y.
    gamma = r mu with r balancing stochastic step cost against one full pass.
    """
    config = config or SolverConfig(method="accel_precond_svrg")
    b = np.asarray(b, dtype=np.float64)
    P = _ensure_preconditioner(problem)
    comps = _precond_components(problem, P)
    mu = comps.mu
    sbar = comps.fro_sq
    A = problem.A
    k = P.deflation.k
    nnz = max(A.nnz, 1)
    if config.accel_gamma is not None:
        gamma = float(config.accel_gamma)
        r = gamma / mu
    else:
        m_nominal = sbar / mu
        r = max(1.0, m_nominal * (A.max_row_nnz + k) / nnz)
        # below ACCEL_MIN_R the sqrt(r) gain cannot pay for the extra rounds
        gamma = r * mu if r > ACCEL_MIN_R else 0.0
        r = r if gamma else 1.0
    if gamma <= 0.0:
        # no regularization: pass straight through to the inner solver
        x_hat, epochs, counters, _ = _svrg_solve(problem, b, config, comps)
        x, err = _final_error(problem, comps, x_hat, b)
        if err > config.target_rel_error:
            raise SolverError("accelerated pass-through did not converge", x, err)
        return SolverReport(x, epochs, counters["matvec"] + 2, counters["rows"], err,
                            "accel_precond_svrg", rounds=1)
    q = mu / (mu + gamma)
    beta = (1.0 - math.sqrt(q)) / (1.0 + math.sqrt(q))
    c_inner = 4.0 * ((2.0 * gamma + mu) / mu) ** 1.5
    inner_epochs = max(1, int(math.ceil(math.log2(c_inner))))
    x_prev = np.zeros(problem.d)
    y = x_prev.copy()
    total = {"matvec": 0, "rows": 0}
    epochs_total = 0
    err = float("inf")
    # theory needs O(sqrt(r) log(1/eps)) rounds; cap generously above that
    kappa = (problem.squared_norm_bound() + problem.lam) / problem.lam
    max_rounds = max(config.max_epochs,
                     int(math.ceil(4.0 * math.sqrt(r) * math.log(math.sqrt(kappa) / config.target_rel_error))))
    for rnd in range(max_rounds):
        sub = replace(config, seed=int(np.random.SeedSequence([config.seed, rnd]).generate_state(1)[0]))
        x_new, e, counters, _ = _svrg_solve(problem, b, sub, comps, x_init=y,
                                            prox=(gamma, y), max_epochs=inner_epochs, check=False)
        epochs_total += e
        total["matvec"] += counters["matvec"] + 2
        total["rows"] += counters["rows"]
        x_orig, err = _final_error(problem, comps, x_new, b)
        if err <= config.target_rel_error:
            return SolverReport(x_orig, epochs_total, total["matvec"], total["rows"], err,
                                "accel_precond_svrg", rounds=rnd + 1)
        y = x_new + beta * (x_new - x_prev)
        x_prev = x_new
    raise SolverError("accelerated solver did not converge", x_orig, err)


def precond_cg(problem: RidgeProblem, b, config: Optional[SolverConfig] = None) -> SolverReport:
    """Conjugate gradient on P^{-1/2} M P^{-1/2}; accepts a vector or a block of columns."""
    config = config or SolverConfig()
    P = _ensure_preconditioner(problem)
    b = np.asarray(b, dtype=np.float64)
    vec = b.ndim == 1
    B = b[:, None] if vec else b
    tol = config.target_rel_error
    bhat = apply_preconditioner(P, B)

    def op(X):
        return apply_preconditioner(P, gram_apply(problem.A, apply_preconditioner(P, X))
                                    + problem.lam * apply_preconditioner(P, X))

    X = np.zeros_like(bhat)
    R = bhat.copy()
    D = R.copy()
    rr = np.einsum("ij,ij->j", R, R)
    matvecs = 0
    restarts = 0
    max_it = max(10, 20 * problem.d + 100)
    it = 0
    err = residual_bound(problem, apply_preconditioner(P, R, power=-1.0), B)
    active = err > tol
    while np.any(active) and it < max_it:
        it += 1
        Q = op(D)
        matvecs += 1
        dq = np.einsum("ij,ij->j", D, Q)
        bad = active & ~(dq > 1e-300 * np.maximum(rr, 1e-300))
        if np.any(bad):
            if restarts >= 1:
                x = apply_preconditioner(P, X)
                raise SolverError("conjugate gradient breakdown", x[:, 0] if vec else x,
                                  float(err.max()))
            restarts += 1
            R = bhat - op(X)
            D = R.copy()
            rr = np.einsum("ij,ij->j", R, R)
            continue
        alpha = np.where(active, rr / np.where(active, dq, 1.0), 0.0)
        X += D * alpha
        R -= Q * alpha
        rr_new = np.einsum("ij,ij->j", R, R)
        if it % 50 == 0:
            # refresh the recursive residual to limit drift
            R = np.where(active, bhat - op(X), R)
            rr_new = np.einsum("ij,ij->j", R, R)
            matvecs += 1
        beta = np.where(active, rr_new / np.where(rr > 0, rr, 1.0), 0.0)
        D = R + D * beta
        rr = rr_new
        err = residual_bound(problem, apply_preconditioner(P, R, power=-1.0), B)
        active = err > tol
    x = apply_preconditioner(P, X)
    x_out = x[:, 0] if vec else x
    final = float(err.max()) if err.size else 0.0
    if np.any(active):
        raise SolverError("conjugate gradient did not reach the target", x_out, final)
    return SolverReport(x_out, 0, 2 * matvecs, 0, final, "precond_cg", iterations=it)


def direct_solve(problem: RidgeProblem, b, config: Optional[SolverConfig] = None) -> SolverReport:
    """Cholesky solve with the explicit Gram matrix (small d only)."""
    if problem._chol is None:
        if problem._gram is None:
            problem._gram = gram_dense(problem.A)
        m = problem._gram + problem.lam * np.eye(problem.d)
        problem._chol = sla.cho_factor(m, lower=False, check_finite=False)
    b = np.asarray(b, dtype=np.float64)
    x = sla.cho_solve(problem._chol, b, check_finite=False)
    return SolverReport(x, 0, 0, 0, 0.0, "direct")


def _auto_method(problem: RidgeProblem) -> str:
    A = problem.A
    if problem.d <= 1024:
        return "direct"
    P = _ensure_preconditioner(problem)
    comps = _precond_components(problem, P)
    kbar = comps.fro_sq / comps.mu / problem.d
    ds = A.max_row_nnz
    if ds > 0.5 * A.nnz / max(A.n_rows, 1) * 4:
        return "precond_cg"
    if A.nnz >= (problem.d * ds + problem.d * P.deflation.k) * kbar:
        return "precond_svrg"
    return "accel_precond_svrg"


def A_is_zero(A) -> bool:
    return A.nnz == 0 or not A.frob_sq > 0


def ridge_solve(problem: RidgeProblem, b, config: Optional[SolverConfig] = None) -> SolverReport:
    """Solve (A^T A + lambda I) x = b with the configured method."""
    config = config or SolverConfig()
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != problem.d:
        raise DimensionError(f"right-hand side has length {b.shape[0]}, expected {problem.d}")
    method = config.method
    if method == "auto":
        method = _auto_method(problem)
    if method == "direct":
        return direct_solve(problem, b, config)
    if method == "precond_cg":
        return precond_cg(problem, b, config)
    if A_is_zero(problem.A):
        # M_lambda = lambda I: no rows to sample, the solve is a scaling
        return SolverReport(b / problem.lam, 0, 0, 0, 0.0, method)
    if b.ndim == 2:
        cols = [ridge_solve(problem, b[:, j], replace(config, method=method)) for j in range(b.shape[1])]
        rep = SolverReport(np.column_stack([c.solution for c in cols]), method=method)
        rep.epochs_run = sum(c.epochs_run for c in cols)
        rep.matvec_count = sum(c.matvec_count for c in cols)
        rep.row_sample_count = sum(c.row_sample_count for c in cols)
        rep.final_residual_Mnorm_rel = max(c.final_residual_Mnorm_rel for c in cols)
        return rep
    if method == "svrg":
        return _solve_svrg_family(problem, b, config, precond=False)
    if method == "precond_svrg":
        return _solve_svrg_family(problem, b, config, precond=True)
    if method == "accel_precond_svrg":
        return accelerated_outer_loop(problem, b, None, config)
    raise ValueError(f"unknown method {method!r}")
