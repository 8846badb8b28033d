"""Hot loops with numba-compiled and pure-numpy implementations.

The compiled variants are used unless the environment variable
``SPECTRA_DISABLE_NUMBA`` is set to a truthy value. Both variants take the
same arguments and return the same results up to floating point rounding,
so callers never need to know which one is active.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False


def numba_enabled() -> bool:
    flag = os.environ.get("SPECTRA_DISABLE_NUMBA", "").strip().lower()
    return _HAVE_NUMBA and flag not in ("1", "true", "yes", "on")


# --------------------------------------------------------------------------
# CSR products


def _csr_matvec(indptr, indices, data, x):
    n = indptr.shape[0] - 1
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            acc += data[p] * x[indices[p]]
        out[i] = acc
    return out


def _csr_rmatvec(indptr, indices, data, x, n_cols):
    n = indptr.shape[0] - 1
    out = np.zeros(n_cols)
    for i in range(n):
        xi = x[i]
        if xi == 0.0:
            continue
        for p in range(indptr[i], indptr[i + 1]):
            out[indices[p]] += data[p] * xi
    return out


def _csr_matmat(indptr, indices, data, X):
    n = indptr.shape[0] - 1
    s = X.shape[1]
    out = np.zeros((n, s))
    for i in range(n):
        for p in range(indptr[i], indptr[i + 1]):
            v = data[p]
            j = indices[p]
            for c in range(s):
                out[i, c] += v * X[j, c]
    return out


def _csr_rmatmat(indptr, indices, data, X, n_cols):
    n = indptr.shape[0] - 1
    s = X.shape[1]
    out = np.zeros((n_cols, s))
    for i in range(n):
        for p in range(indptr[i], indptr[i + 1]):
            v = data[p]
            j = indices[p]
            for c in range(s):
                out[j, c] += v * X[i, c]
    return out


def _np_row_ids(indptr):
    return np.repeat(np.arange(indptr.shape[0] - 1), np.diff(indptr))


def _np_csr_matvec(indptr, indices, data, x):
    rows = _np_row_ids(indptr)
    return np.bincount(rows, weights=data * x[indices], minlength=indptr.shape[0] - 1)


def _np_csr_rmatvec(indptr, indices, data, x, n_cols):
    rows = _np_row_ids(indptr)
    return np.bincount(indices, weights=data * x[rows], minlength=n_cols)


def _np_scatter_rows(target, weights, n_out):
    # one flat bincount over (target row, column) pairs
    b = weights.shape[1]
    flat = (target[:, None] * b + np.arange(b)).ravel()
    return np.bincount(flat, weights=weights.ravel(), minlength=n_out * b).reshape(n_out, b)


def _np_csr_matmat(indptr, indices, data, X):
    rows = _np_row_ids(indptr)
    return _np_scatter_rows(rows, data[:, None] * X[indices], indptr.shape[0] - 1)


def _np_csr_rmatmat(indptr, indices, data, X, n_cols):
    rows = _np_row_ids(indptr)
    return _np_scatter_rows(indices, data[:, None] * X[rows], n_cols)


# --------------------------------------------------------------------------
# SVRG inner loop
#
# Components are psi_i(x) = 0.5 (b_i^T x)^2 + 0.5 rho p_i |x|^2 - c^T x / N with
# b_i = delta * r_i + Z (dm * W[i]), where r_i is row i of a CSR matrix and
# W = R Z. The iterate offset w = x - x0 is stored as
#     w = s (v + Z u) + c g0
# so that one step costs O(nnz(r_i) + k).


def _svrg_steps(indptr, indices, data, W, dm, delta, rho, probs, rows, eta, bg0, v, ztv, u, s, c):
    k = u.shape[0]
    decay = 1.0 - eta * rho
    for t in range(rows.shape[0]):
        i = rows[t]
        lo = indptr[i]
        hi = indptr[i + 1]
        rv = 0.0
        for p in range(lo, hi):
            rv += data[p] * v[indices[p]]
        bv = delta * rv
        bzu = 0.0
        for j in range(k):
            ci = dm[j] * W[i, j]
            bv += ci * ztv[j]
            bzu += (delta * W[i, j] + ci) * u[j]
        beta = s * (bv + bzu) + c * bg0[i]
        s = s * decay
        c = c * decay - eta
        coef = -eta * beta / (probs[i] * s)
        cd = coef * delta
        for p in range(lo, hi):
            v[indices[p]] += cd * data[p]
        for j in range(k):
            u[j] += coef * dm[j] * W[i, j]
            ztv[j] += cd * W[i, j]
        if s < 1e-150:
            for q in range(v.shape[0]):
                v[q] *= s
            for j in range(k):
                u[j] *= s
                ztv[j] *= s
            s = 1.0
    return s, c


if _HAVE_NUMBA:
    _csr_matvec_nb = numba.njit(cache=True)(_csr_matvec)
    _csr_rmatvec_nb = numba.njit(cache=True)(_csr_rmatvec)
    _csr_matmat_nb = numba.njit(cache=True)(_csr_matmat)
    _csr_rmatmat_nb = numba.njit(cache=True)(_csr_rmatmat)
    _svrg_steps_nb = numba.njit(cache=True)(_svrg_steps)


def csr_matvec(indptr, indices, data, x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if numba_enabled():
        return _csr_matvec_nb(indptr, indices, data, x)
    return _np_csr_matvec(indptr, indices, data, x)


def csr_rmatvec(indptr, indices, data, x, n_cols):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if numba_enabled():
        return _csr_rmatvec_nb(indptr, indices, data, x, n_cols)
    return _np_csr_rmatvec(indptr, indices, data, x, n_cols)


def csr_matmat(indptr, indices, data, X):
    X = np.ascontiguousarray(X, dtype=np.float64)
    if numba_enabled():
        return _csr_matmat_nb(indptr, indices, data, X)
    return _np_csr_matmat(indptr, indices, data, X)


def csr_rmatmat(indptr, indices, data, X, n_cols):
    X = np.ascontiguousarray(X, dtype=np.float64)
    if numba_enabled():
        return _csr_rmatmat_nb(indptr, indices, data, X, n_cols)
    return _np_csr_rmatmat(indptr, indices, data, X, n_cols)


def svrg_steps(indptr, indices, data, W, dm, delta, rho, probs, rows, eta, bg0, v, ztv, u,
               s=1.0, c=0.0):
    """Run stochastic steps in place starting from offset state (s, c); returns (s, c)."""
    fn = _svrg_steps_nb if numba_enabled() else _svrg_steps
    return fn(indptr, indices, data, W, dm, float(delta), float(rho), probs, rows, float(eta),
              bg0, v, ztv, u, float(s), float(c))
