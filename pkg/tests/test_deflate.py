import numpy as np
import pytest

from corpus import planted_dense, random_sparse
from spectra.deflate import (
    apply_preconditioner,
    block_krylov_topk,
    build_preconditioner,
    empty_deflation,
    preconditioned_gram_apply,
)
from spectra.linops import DenseMatrix, DimensionError
from spectra.oracle import dense_svd


def test_diag_top1():
    a = DenseMatrix.from_array(np.diag([4.0, 2.0, 1.0]))
    d = block_krylov_topk(a, 1, 0.1, 0)
    assert 8 <= d.sigma_tilde_sq[0] <= 24
    assert abs(d.sigma_tilde_sq[0] - 16) < 1e-6


def test_exact_rank():
    a = DenseMatrix.from_array(np.diag([3.0, 2.0, 0.0, 0.0]))
    d = block_krylov_topk(a, 2, 0.1, 0)
    x = a.array
    resid = x - x @ d.Z @ d.Z.T
    assert np.linalg.norm(resid, 2) <= 1e-8


@pytest.mark.parametrize("krylov", [False, True])
def test_lemma_bounds(krylov):
    for seed in range(5):
        a = random_sparse(200, 150, 8, seed)
        s = dense_svd(a).singular_values
        d = block_krylov_topk(a, 10, 0.1, seed, krylov=krylov)
        x = a.to_dense()
        assert np.allclose(d.Z.T @ d.Z, np.eye(10), atol=1e-10)
        assert np.all(np.diff(d.sigma_tilde_sq) <= 0) and np.all(d.sigma_tilde_sq >= 0)
        # ||A - A Z Z^T||_2^2 in the row-space orientation used throughout
        r = np.linalg.norm(x - x @ d.Z @ d.Z.T, 2) ** 2
        assert r <= 2 * s[10] ** 2
        assert np.all(np.abs(d.sigma_tilde_sq - s[:10] ** 2) <= 2 * s[10] ** 2)


def test_deterministic():
    a = random_sparse(60, 50, 5, 1)
    z1 = block_krylov_topk(a, 4, 0.1, 3).Z
    z2 = block_krylov_topk(a, 4, 0.1, 3).Z
    assert np.array_equal(z1, z2)


def test_bad_k():
    with pytest.raises(DimensionError):
        block_krylov_topk(DenseMatrix.from_array(np.eye(3)), 4)


def test_k0_preconditioner_scalar():
    P = build_preconditioner(empty_deflation(5, 1.0), 1.0)
    v = np.arange(5.0)
    assert np.allclose(apply_preconditioner(P, v), v / np.sqrt(2))
    assert np.allclose(P.dense(), np.eye(5) / np.sqrt(2))


def test_exact_deflation_diagonalizes():
    a = DenseMatrix.from_array(np.diag([2.0, 1.0]))
    d = block_krylov_topk(a, 2, 0.1, 0)
    P = build_preconditioner(d, 1.0)
    Ph = P.dense()
    m = Ph @ (a.array.T @ a.array + np.eye(2)) @ Ph
    assert np.allclose(m, np.eye(2), atol=1e-10)


def test_preconditioned_condition_number():
    a = random_sparse(100, 100, 8, 2)
    s = dense_svd(a).singular_values
    lam = s[0] ** 2 / 100
    d = block_krylov_topk(a, 5, 0.1, 0)
    P = build_preconditioner(d, lam)
    Ph = P.dense()
    x = a.to_dense()
    ev = np.linalg.eigvalsh(Ph @ (x.T @ x + lam * np.eye(100)) @ Ph)
    assert ev[-1] / ev[0] <= 10 * max(1.0, s[5] ** 2 / lam)


def test_apply_preconditioner_forms():
    a = random_sparse(50, 40, 5, 3)
    d = block_krylov_topk(a, 4, 0.1, 0)
    lam = 0.3
    P = build_preconditioner(d, lam)
    rng = np.random.default_rng(0)
    v = rng.standard_normal(40)
    assert np.allclose(apply_preconditioner(P, v), P.dense() @ v, rtol=1e-10, atol=1e-12)
    # orthogonal to span(Z): pure tail scaling
    w = v - d.Z @ (d.Z.T @ v)
    assert np.allclose(apply_preconditioner(P, w), P.tail_scale * w, atol=1e-12)
    z = d.Z[:, 1]
    assert np.allclose(apply_preconditioner(P, z), z / np.sqrt(d.sigma_tilde_sq[1] + lam), atol=1e-12)
    twice = apply_preconditioner(P, apply_preconditioner(P, v))
    assert np.allclose(twice, apply_preconditioner(P, v, power=2.0), rtol=1e-10, atol=1e-12)


def test_exact_rank_flat_preconditioned_gram():
    # rank 2 with k = 3: the padded sigma_tilde_3^2 is zero, so the tail scale is 1/sqrt(lambda)
    a = planted_dense([3.0, 1.0, 0.0, 0.0, 0.0, 0.0], 4)
    d = block_krylov_topk(a, 3, 0.1, 0)
    assert d.sigma_tilde_sq[2] <= 1e-20
    for lam in (1e-3, 1.0):
        P = build_preconditioner(d, lam)
        op = np.column_stack([preconditioned_gram_apply(a, P, e) for e in np.eye(6)])
        ev = np.linalg.eigvalsh(0.5 * (op + op.T))
        assert ev[-1] / ev[0] <= 1 + 1e-6


def test_tail_preservation():
    eps = 0.1
    for seed in range(5):
        a = random_sparse(150, 120, 6, 10 + seed)
        x = a.to_dense()
        s = dense_svd(a).singular_values
        k = 8
        d = block_krylov_topk(a, k, eps, seed)
        tail = np.linalg.svd(x - x @ d.Z @ d.Z.T, compute_uv=False)
        bound = (1 + 3 * eps) * s[k:] + eps / x.shape[0] * s[0]
        assert np.all(tail[: s.size - k] <= bound + 1e-12)
