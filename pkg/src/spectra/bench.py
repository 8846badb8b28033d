"""Timing of the compiled kernels against their pure-numpy fallbacks."""

from __future__ import annotations

import contextlib
import os
import time

import numpy as np
import scipy.sparse as sp

from . import kernels
from .linops import SparseMatrix, row_distribution


@contextlib.contextmanager
def numba_disabled(disabled: bool):
    old = os.environ.get("SPECTRA_DISABLE_NUMBA")
    os.environ["SPECTRA_DISABLE_NUMBA"] = "1" if disabled else "0"
    try:
        yield
    finally:
        if old is None:
            os.environ.pop("SPECTRA_DISABLE_NUMBA", None)
        else:
            os.environ["SPECTRA_DISABLE_NUMBA"] = old


def _best_of(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best * 1e3


def _cases(n: int, nnz_row: int, block: int, steps: int, seed: int):
    rng = np.random.default_rng(seed)
    a = SparseMatrix.from_scipy(sp.random(n, n, density=min(1.0, nnz_row / n), random_state=rng,
                                          format="csr"))
    ip, ix, dv = a.row_offsets, a.col_indices, a.values
    x = rng.standard_normal(n)
    X = rng.standard_normal((n, block))
    dist = row_distribution(a)
    rows = dist.sample(rng.random(steps)).astype(np.int64)
    k = 4
    W = np.ascontiguousarray(rng.standard_normal((n, k)) * 0.1)
    dm = np.full(k, 0.5)
    probs = dist.probabilities
    bg0 = rng.standard_normal(n) * 1e-3

    def svrg():
        v = np.zeros(n)
        kernels.svrg_steps(ip, ix, dv, W, dm, 1.0, 1e-2, probs, rows, 1e-3, bg0, v,
                           np.zeros(k), np.zeros(k))

    return {
        "csr_matvec": lambda: kernels.csr_matvec(ip, ix, dv, x),
        "csr_rmatvec": lambda: kernels.csr_rmatvec(ip, ix, dv, x, n),
        "csr_matmat": lambda: kernels.csr_matmat(ip, ix, dv, X),
        "csr_rmatmat": lambda: kernels.csr_rmatmat(ip, ix, dv, X, n),
        "svrg_steps": svrg,
    }


def run_benchmark(n: int = 2000, nnz_row: int = 10, block: int = 32, steps: int = 20000,
                  repeats: int = 5, seed: int = 0) -> dict:
    """Best-of-``repeats`` milliseconds per kernel for both variants."""
    out = {}
    cases = _cases(n, nnz_row, block, steps, seed)
    for name, fn in cases.items():
        with numba_disabled(False):
            fn()  # compile outside the timed region
            t_nb = _best_of(fn, repeats)
        with numba_disabled(True):
            t_np = _best_of(fn, max(1, repeats if name != "svrg_steps" else 1))
        out[name] = {"numba_ms": t_nb, "numpy_ms": t_np,
                     "speedup": t_np / t_nb if t_nb > 0 else float("inf")}
    return {"n": n, "nnz_per_row": nnz_row, "block": block, "svrg_steps": steps,
            "numba_available": kernels._HAVE_NUMBA, "kernels": out}


if __name__ == "__main__":
    import json

    print(json.dumps(run_benchmark(), indent=2))
