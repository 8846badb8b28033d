"""Approximate top-k singular subspaces and the factored deflation preconditioner."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .linops import DimensionError, Matrix, apply, gram_apply


@dataclass(frozen=True, eq=False)
class Deflation:
    """Orthonormal Z (d x k) with Rayleigh quotients sigma_tilde_sq, nonincreasing."""

    Z: np.ndarray
    sigma_tilde_sq: np.ndarray
    k: int
    iterations_used: int
    # A Z, kept because preconditioned SVRG needs it for every row
    AZ: Optional[np.ndarray] = None
    # squared spectral norm estimate, used by the k = 0 preconditioner
    norm_sq: Optional[float] = None


def empty_deflation(d: int, norm_sq: float, n_rows: int = 0) -> Deflation:
    return Deflation(np.zeros((d, 0)), np.zeros(0), 0, 0, np.zeros((n_rows, 0)), float(norm_sq))


def _orth(x: np.ndarray) -> np.ndarray:
    q, _ = np.linalg.qr(x)
    return q


def block_krylov_topk(a: Matrix, k: int, eps: float = 0.1, seed: int = 0, *,
                      krylov: bool = False, C: float = 1.0, oversample: int = 5,
                      norm_sq: Optional[float] = None) -> Deflation:
    """Top-k right singular subspace by subspace iteration (or block Krylov).

    Subspace iteration runs ceil(C log d / eps) iterations with a QR after
    every multiplication; the Krylov variant runs ceil(C log d / sqrt(eps))
    block steps and keeps the whole block Krylov basis. A Rayleigh-Ritz step
    extracts Z and sigma_tilde_sq_i = z_i^T A^T A z_i.
    """
    n, d = a.n_rows, a.n_cols
    if k < 0 or k > min(n, d):
        raise DimensionError(f"k={k} must lie in [0, min(n, d)] = [0, {min(n, d)}]")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if k == 0:
        return empty_deflation(d, norm_sq if norm_sq is not None else 0.0, n)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0xDEF1])))
    b = min(d, k + oversample)
    logd = math.log(max(d, 2))
    q = _orth(rng.standard_normal((d, b)))
    if krylov:
        iters = int(math.ceil(C * logd / math.sqrt(eps)))
        blocks = [q]
        for _ in range(iters):
            q = _orth(gram_apply(a, q))
            # reorthogonalize against the basis so far to keep the span well conditioned
            basis = np.hstack(blocks)
            q = _orth(q - basis @ (basis.T @ q))
            blocks.append(q)
            if sum(x.shape[1] for x in blocks) >= d:
                break
        basis = _orth(np.hstack(blocks))[:, :d]
    else:
        iters = int(math.ceil(C * logd / eps))
        for _ in range(iters):
            q = _orth(gram_apply(a, q))
        basis = q
    # Rayleigh-Ritz on A^T A restricted to the basis
    aq = apply(a, basis)
    h = aq.T @ aq
    h = 0.5 * (h + h.T)
    w, v = np.linalg.eigh(h)
    order = np.argsort(w)[::-1][:k]
    Z = _orth(basis @ v[:, order])
    # fix sign so that results are reproducible across LAPACK sign choices
    signs = np.sign(Z[np.argmax(np.abs(Z), axis=0), np.arange(k)])
    signs[signs == 0] = 1.0
    Z = np.ascontiguousarray(Z * signs)
    AZ = apply(a, Z)
    sig = np.maximum(np.einsum("ij,ij->j", AZ, AZ), 0.0)
    # Ritz values come out sorted; enforce the invariant against rounding
    sig = np.minimum.accumulate(sig)
    return Deflation(Z, sig, k, iters, AZ, norm_sq)


@dataclass(frozen=True, eq=False)
class Preconditioner:
    """P^{-1/2} = Z diag(diag_scales) Z^T + tail_scale (I - Z Z^T)."""

    deflation: Deflation
    lam: float
    tail_scale: float
    diag_scales: np.ndarray

    @property
    def d(self) -> int:
        return self.deflation.Z.shape[0]

    def dense(self) -> np.ndarray:
        Z = self.deflation.Z
        return Z @ np.diag(self.diag_scales) @ Z.T + self.tail_scale * (np.eye(self.d) - Z @ Z.T)


def build_preconditioner(defl: Deflation, lam: float) -> Preconditioner:
    if not lam > 0:
        raise ValueError("lambda must be positive")
    sig = defl.sigma_tilde_sq
    if defl.k == 0:
        if defl.norm_sq is None:
            raise ValueError("k = 0 preconditioner needs the squared norm estimate")
        tail = 1.0 / math.sqrt(defl.norm_sq + lam)
    else:
        tail = 1.0 / math.sqrt(sig[-1] + lam)
    return Preconditioner(defl, float(lam), float(tail), 1.0 / np.sqrt(sig + lam))


def apply_preconditioner(P: Preconditioner, v, power: float = 1.0) -> np.ndarray:
    """P^{-power/2} v: one k-dimensional projection plus vector arithmetic."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[0] != P.d:
        raise DimensionError(f"expected length {P.d}, got {v.shape[0]}")
    Z = P.deflation.Z
    t = P.tail_scale ** power
    if P.deflation.k == 0:
        return t * v
    c = Z.T @ v
    scales = P.diag_scales ** power
    if v.ndim == 1:
        return Z @ ((scales - t) * c) + t * v
    return Z @ ((scales - t)[:, None] * c) + t * v


def preconditioned_gram_apply(a: Matrix, P: Preconditioner, v) -> np.ndarray:
    """P^{-1/2} (A^T A + lambda I) P^{-1/2} v."""
    w = apply_preconditioner(P, v)
    return apply_preconditioner(P, gram_apply(a, w) + P.lam * w)
