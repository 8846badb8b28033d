import numpy as np
import pytest
import scipy.sparse as sp

from corpus import planted_dense
from spectra.linops import DenseMatrix, SparseMatrix
from spectra.oracle import OracleSizeError, dense_svd, exact_effres, exact_ridge_solve, exact_sum
from spectra.sums import SumSpec


def test_svd_sorted_and_exact():
    s = [5.0, 3.0, 1.0, 0.5]
    o = dense_svd(planted_dense(s, 0))
    assert np.allclose(o.singular_values, s, rtol=1e-12)
    assert np.allclose(o.squared, np.square(s))


def test_exact_sum_schatten():
    o = dense_svd(DenseMatrix.from_array(np.diag([3.0, 4.0])))
    assert exact_sum(o, SumSpec.schatten(2)) == pytest.approx(25.0)
    assert exact_sum(o, SumSpec.schatten(1)) == pytest.approx(7.0)


def test_ridge_solve_trivial():
    x = exact_ridge_solve(DenseMatrix.from_array(np.eye(2)), np.array([2.0, 2.0]), 1.0)
    assert np.allclose(x, [1.0, 1.0])


def test_effres_path():
    # path 0 - 1 - 2 with unit weights
    L = np.array([[1.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]])
    assert exact_effres(L, 0, 1) == pytest.approx(1.0)
    assert exact_effres(L, 0, 2) == pytest.approx(2.0)


def test_size_cap():
    with pytest.raises(OracleSizeError):
        dense_svd(SparseMatrix.from_scipy(sp.identity(2001, format="csr")))
