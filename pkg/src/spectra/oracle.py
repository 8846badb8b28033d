"""Dense ground truth: full SVD, exact sums, direct ridge solves, effective resistances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .linops import as_matrix, to_dense

SVD_CAP = 2000


class OracleSizeError(ValueError):
    """Matrix too large for dense ground truth."""


@dataclass(frozen=True, eq=False)
class SpectrumOracle:
    singular_values: np.ndarray
    source_dims: tuple[int, int]

    @property
    def squared(self) -> np.ndarray:
        return self.singular_values ** 2


def _dense(A) -> np.ndarray:
    m = as_matrix(A)
    if min(m.n_rows, m.n_cols) > SVD_CAP:
        raise OracleSizeError(f"oracle cap is min(n, d) <= {SVD_CAP}, got {m.shape}")
    return to_dense(m)


def dense_svd(A) -> SpectrumOracle:
    """All singular values, nonincreasing, from a LAPACK dense SVD."""
    x = _dense(A)
    if x.size == 0:
        return SpectrumOracle(np.zeros(0), x.shape)
    s = sla.svdvals(x, check_finite=False)
    s = np.maximum(np.sort(s)[::-1], 0.0)
    return SpectrumOracle(s, x.shape)


def exact_sum(oracle: SpectrumOracle, spec) -> float:
    """sum_i f(sigma_i) for a SumSpec from the sums module."""
    return float(spec.exact(oracle.singular_values))


def exact_ridge_solve(A, b, lam: float) -> np.ndarray:
    x = _dense(A)
    d = x.shape[1]
    m = x.T @ x + lam * np.eye(d)
    return sla.solve(m, np.asarray(b, dtype=np.float64), assume_a="pos")


def pinv_quadratic(L, u) -> float:
    """u^T L^+ u through a dense pseudoinverse."""
    Lp = np.linalg.pinv(np.asarray(L, dtype=np.float64), hermitian=True)
    u = np.asarray(u, dtype=np.float64)
    return float(u @ Lp @ u)


def exact_effres(L, i: int, j: int) -> float:
    """Effective resistance between vertices i and j (0-indexed)."""
    L = np.asarray(L, dtype=np.float64)
    u = np.zeros(L.shape[0])
    u[i] += 1.0
    u[j] -= 1.0
    return pinv_quadratic(L, u)
