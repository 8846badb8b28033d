"""Seeded test matrices shared by the unit and acceptance tests."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.stats import ortho_group

from spectra.linops import DenseMatrix, SparseMatrix


def random_sparse(n: int, d: int, nnz_row: float, seed: int) -> SparseMatrix:
    rng = np.random.default_rng(seed)
    m = sp.random(n, d, density=min(1.0, nnz_row / d), random_state=rng, format="csr",
                  data_rvs=rng.standard_normal)
    return SparseMatrix.from_scipy(m)


def planted_dense(singular_values, seed: int, n: int | None = None) -> DenseMatrix:
    """U diag(s) V^T with Haar-random orthogonal factors."""
    s = np.asarray(singular_values, dtype=np.float64)
    d = s.shape[0]
    n = n or d
    U = ortho_group.rvs(n, random_state=seed)[:, :d]
    V = ortho_group.rvs(d, random_state=seed + 7919) if d > 1 else np.ones((1, 1))
    return DenseMatrix.from_array((U * s) @ V.T)


def planted_block_sparse(singular_values, seed: int, block: int = 10) -> SparseMatrix:
    """Block-diagonal matrix with prescribed singular values and block x block dense blocks."""
    s = np.asarray(singular_values, dtype=np.float64)
    d = s.shape[0]
    if d % block:
        raise ValueError("size must be a multiple of the block size")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(d)
    blocks = []
    for j in range(d // block):
        sv = s[perm[j * block:(j + 1) * block]]
        U = ortho_group.rvs(block, random_state=rng)
        V = ortho_group.rvs(block, random_state=rng)
        blocks.append((U * sv) @ V.T)
    return SparseMatrix.from_scipy(sp.block_diag(blocks, format="csr"))


def histogram_planted(seed: int, n: int = 200) -> DenseMatrix:
    """20 singular values at 0.9, 30 at 0.2, the rest zero, rotated."""
    s = np.zeros(n)
    s[:20] = 0.9
    s[20:50] = 0.2
    return planted_dense(s, seed)


def planted_spectrum(kind: int, n: int = 300) -> np.ndarray:
    """Ten spectrum shapes used for the planted part of the Schatten corpus."""
    i = np.arange(1, n + 1, dtype=np.float64)
    shapes = [
        1.0 / i,                                   # harmonic decay
        1.0 / np.sqrt(i),                          # slow decay
        np.exp(-i / 30.0),                         # exponential decay
        np.linspace(1.0, 0.01, n),                 # linear
        np.where(i <= 17, 17.0, 1.0),              # sqrt(n) heavy values over a flat bulk
        np.geomspace(1.0, 1e-3, n),                # geometric
        np.concatenate([np.full(10, 5.0), np.full(n - 10, 0.5)]),  # two plateaus
        1.0 + 0.5 * np.sin(i),                     # well conditioned, oscillating
        i ** -2.0,                                 # fast polynomial decay
        np.concatenate([np.full(n // 2, 1.0), np.full(n - n // 2, 1e-2)]),  # gap
    ]
    return np.sort(shapes[kind])[::-1]


def planted_schatten(kind: int, n: int = 300) -> DenseMatrix:
    return planted_dense(planted_spectrum(kind, n), 1000 + kind)


def well_conditioned(seed: int, n: int = 150) -> DenseMatrix:
    rng = np.random.default_rng(seed)
    return planted_dense(rng.uniform(1.0, 10.0, n), 500 + seed)
