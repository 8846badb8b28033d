"""Hardness reductions at desk scale: triangle detection through spectral sums,
trace of an SDD inverse through effective resistances, incidence matrices and
leverage scores, and determinant-based triangle detection.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .linops import DenseMatrix, SparseMatrix
from .oracle import dense_svd, exact_effres

PRECISION_FLOOR = 1e-14
DET_MAX_N = 5


class PrecisionError(ValueError):
    """The required estimator accuracy is not representable in double precision."""


# --------------------------------------------------------------------------
# graphs


@dataclass(frozen=True, eq=False)
class Graph:
    n: int
    adjacency: SparseMatrix
    edge_list: tuple

    @classmethod
    def from_edges(cls, n: int, edges) -> "Graph":
        n = int(n)
        seen = set()
        for u, v in edges:
            u, v = int(u), int(v)
            if not (0 <= u < n and 0 <= v < n):
                raise ValueError(f"edge ({u}, {v}) out of range for n = {n}")
            if u == v:
                raise ValueError(f"self loop at vertex {u}")
            seen.add((min(u, v), max(u, v)))
        el = tuple(sorted(seen))
        rows = [u for u, v in el] + [v for u, v in el]
        cols = [v for u, v in el] + [u for u, v in el]
        m = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        return cls(n, SparseMatrix.from_scipy(m), el)

    @classmethod
    def from_dense(cls, a) -> "Graph":
        a = np.asarray(a)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("adjacency must be square")
        if not np.array_equal(a, a.T) or np.any(np.diag(a) != 0) or not np.all(np.isin(a, (0, 1))):
            raise ValueError("adjacency must be symmetric 0/1 with zero diagonal")
        iu = np.argwhere(np.triu(a, 1))
        return cls.from_edges(a.shape[0], [tuple(e) for e in iu])

    @property
    def m(self) -> int:
        return len(self.edge_list)

    def dense(self) -> np.ndarray:
        return self.adjacency.to_dense()


def load_edge_list(path, n: Optional[int] = None) -> Graph:
    """One "u v" pair per line, 0-indexed; '#' starts a comment."""
    edges = []
    top = -1
    for ln, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"line {ln}: expected 'u v', got {line!r}")
        u, v = int(parts[0]), int(parts[1])
        edges.append((u, v))
        top = max(top, u, v)
    return Graph.from_edges(top + 1 if n is None else n, edges)


def save_edge_list(path, g: Graph) -> None:
    Path(path).write_text("".join(f"{u} {v}\n" for u, v in g.edge_list))


def random_graph(n: int, p: float, seed: int) -> Graph:
    """Erdos-Renyi G(n, p)."""
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(n, 1)
    keep = rng.random(iu[0].size) < p
    return Graph.from_edges(n, list(zip(iu[0][keep], iu[1][keep])))


def nonisomorphic_graphs(n: int) -> list[Graph]:
    """One representative per isomorphism class of simple graphs on n <= 6 vertices."""
    if n > 6:
        raise ValueError("exhaustive enumeration is limited to n <= 6")
    pairs = list(itertools.combinations(range(n), 2))
    perms = list(itertools.permutations(range(n)))
    seen = set()
    out = []
    for mask in range(1 << len(pairs)):
        edges = [pairs[i] for i in range(len(pairs)) if mask >> i & 1]
        canon = min(tuple(sorted(tuple(sorted((p[u], p[v]))) for u, v in edges)) for p in perms)
        if canon not in seen:
            seen.add(canon)
            out.append(Graph.from_edges(n, list(canon)))
    return out


def triangle_count_exact(g: Graph) -> int:
    """Triangles by enumeration of adjacent pairs and common neighbours."""
    if g.n > 1000:
        raise ValueError("enumeration is limited to n <= 1000")
    nbr = [set() for _ in range(g.n)]
    for u, v in g.edge_list:
        nbr[u].add(v)
        nbr[v].add(u)
    count = 0
    for u, v in g.edge_list:
        count += sum(1 for w in nbr[u] & nbr[v] if w > v)
    return count


# --------------------------------------------------------------------------
# series coefficients of f about 1, written as f(1 - x) = sum_k c_k x^k so that
# sum_i f(sigma_i(I - delta A)) = sum_k c_k delta^k tr(A^k)

F_KINDS = ("schatten", "log_det", "trace_inverse", "trace_exp", "entropy", "determinant")


def _schatten_coeff(p: float) -> Callable[[int], float]:
    def c(k: int) -> float:
        out = 1.0
        for i in range(k):
            out *= (p - i) / (i + 1)
        return (-1.0) ** k * out
    return c


def series_coefficients(f_kind: str, p: Optional[float] = None) -> Callable[[int], float]:
    if f_kind == "schatten":
        if p is None:
            raise ValueError("schatten needs p")
        return _schatten_coeff(float(p))
    if f_kind == "log_det":
        return lambda k: 0.0 if k == 0 else -1.0 / k
    if f_kind == "trace_inverse":
        return lambda k: 1.0
    if f_kind == "trace_exp":
        return lambda k: math.e * (-1.0) ** k / math.factorial(k)
    if f_kind == "entropy":
        # (1 - x) log(1 - x) = -x + sum_{k >= 2} x^k / (k (k - 1))
        return lambda k: 0.0 if k == 0 else (-1.0 if k == 1 else 1.0 / (k * (k - 1)))
    if f_kind == "determinant":
        # det(I + delta A): handled by determinant_triangle_detect
        raise ValueError("determinant detection has its own routine")
    raise ValueError(f"unknown f_kind {f_kind!r}")


def scalar_function(f_kind: str, p: Optional[float] = None) -> Callable:
    if f_kind == "schatten":
        return lambda x: np.abs(x) ** p
    if f_kind == "log_det":
        return np.log
    if f_kind == "trace_inverse":
        return lambda x: 1.0 / x
    if f_kind == "trace_exp":
        return np.exp
    if f_kind == "entropy":
        return lambda x: x * np.log(x)
    raise ValueError(f"no scalar function for {f_kind!r}")


def growth_bound(f_kind: str, p: Optional[float] = None) -> float:
    """h with |c_k / c_3| <= h^{k - 3} for k >= 3; 0 when the series stops at k = 3."""
    if f_kind == "schatten":
        if float(p).is_integer() and p <= 3:
            return 0.0
        return max(1.0, float(p))
    if f_kind in ("log_det", "trace_inverse", "trace_exp", "entropy"):
        return 1.0
    raise ValueError(f"no growth bound for {f_kind!r}")


@dataclass(frozen=True, eq=False)
class ReductionSpec:
    f_kind: str
    n: int
    p: Optional[float] = None
    series_coeffs: Callable = field(init=False, repr=False)
    h: float = field(init=False)
    delta: float = field(init=False)
    eps1: float = field(init=False)

    def __post_init__(self):
        if self.f_kind not in F_KINDS or self.f_kind == "determinant":
            raise ValueError(f"f_kind must be one of {F_KINDS[:-1]}")
        if self.n < 1:
            raise ValueError("n must be positive")
        c = series_coefficients(self.f_kind, self.p)
        h = growth_bound(self.f_kind, self.p)
        n = self.n
        delta = 1.0 / n if h == 0 else min(1.0 / n, 1.0 / (10.0 * n ** 4 * h))
        c0, c2, c3 = c(0), c(2), c(3)
        if c3 == 0:
            raise ValueError("the cubic coefficient vanishes; f cannot detect triangles")
        terms = [1.0]
        if c0 != 0:
            terms.append(abs(c3 * delta ** 3 / (c0 * n)))
        if c2 != 0:
            terms.append(abs(c3 * delta / (c2 * n * n)))
        object.__setattr__(self, "series_coeffs", c)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "eps1", min(terms))

    @classmethod
    def schatten(cls, p: float, n: int) -> "ReductionSpec":
        return cls("schatten", n, float(p))

    @property
    def c3(self) -> float:
        return self.series_coeffs(3)

    @property
    def threshold(self) -> float:
        """Half the smallest nonzero cubic signal c3 delta^3 tr(A^3) >= 6 c3 delta^3."""
        return 3.0 * self.c3 * self.delta ** 3

    def function(self) -> Callable:
        return scalar_function(self.f_kind, self.p)


def shifted_matrix(g: Graph, delta: float) -> np.ndarray:
    """B = I - delta A; strictly diagonally dominant with spectrum in (0, 2) when delta < 1 / n."""
    return np.eye(g.n) - delta * g.dense()


def gershgorin_ok(B: np.ndarray) -> bool:
    d = np.diag(B)
    r = np.abs(B).sum(axis=1) - np.abs(d)
    return bool(np.all(d - r > 0) and np.all(d + r < 2))


def oracle_sum_estimator(spec: ReductionSpec) -> Callable:
    """Exact sum_i f(sigma_i(B)) from the dense SVD."""
    f = spec.function()

    def est(B):
        s = dense_svd(DenseMatrix.from_array(B)).singular_values
        return math.fsum(f(s))
    return est


def series_tail(spec: ReductionSpec, g: Graph, start: int = 4, terms: int = 200) -> float:
    """sum_{k >= start} c_k delta^k tr(A^k) from the eigenvalues of A."""
    lam = np.linalg.eigvalsh(g.dense()) if g.n else np.zeros(0)
    x = spec.delta * lam
    out = 0.0
    for k in range(start, start + terms):
        ck = spec.series_coeffs(k)
        if ck:
            term = ck * math.fsum(x ** k)
            out += term
            if abs(term) < 1e-30 * max(1.0, abs(out)) and k > start + 5:
                break
    return out


def truncation_holds(spec: ReductionSpec, g: Graph) -> bool:
    """|sum_{k >= 4} c_k delta^k tr(A^k)| <= |c3| delta^3 / 9."""
    return abs(series_tail(spec, g)) <= abs(spec.c3) * spec.delta ** 3 / 9.0


@dataclass
class Verdict:
    triangle: bool
    statistic: float
    threshold: float

    def to_dict(self) -> dict:
        return {"triangle": bool(self.triangle), "statistic": float(self.statistic),
                "threshold": float(self.threshold)}

    def to_json(self, indent=None) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def triangle_detect(g: Graph, spec: Optional[ReductionSpec] = None,
                    sum_estimator: Optional[Callable] = None, return_verdict: bool = False):
    """Triangle test from X ~ sum f(sigma_i(I - delta A)).

    The statistic X - c0 n - c2 delta^2 tr(A^2) isolates c3 delta^3 tr(A^3) up
    to the estimator error and the series tail, each below |c3| delta^3 / 9.
    """
    spec = spec or ReductionSpec.schatten(3, g.n)
    if spec.n != g.n:
        raise ValueError(f"spec built for n = {spec.n}, graph has n = {g.n}")
    if spec.eps1 < PRECISION_FLOOR:
        raise PrecisionError(f"precision infeasible at this n: eps1 = {spec.eps1:.3g}")
    est = sum_estimator or oracle_sum_estimator(spec)
    B = shifted_matrix(g, spec.delta)
    X = float(est(B))
    c = spec.series_coeffs
    trA2 = 2.0 * g.m  # ||A||_F^2 for a 0/1 symmetric adjacency
    stat = X - c(0) * g.n - c(2) * spec.delta ** 2 * trA2
    thr = spec.threshold
    # compare on the sign of c3: tr(A^3) >= 0 always
    tri = stat / spec.c3 >= thr / spec.c3
    v = Verdict(bool(tri), stat, thr)
    return v if return_verdict else v.triangle


# --------------------------------------------------------------------------
# effective resistance and trace of an SDD inverse


def _check_strict_sdd(M: np.ndarray) -> None:
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    if not np.allclose(M, M.T, rtol=0, atol=1e-12 * max(1.0, np.abs(M).max())):
        raise ValueError("matrix must be symmetric")
    off = M - np.diag(np.diag(M))
    if np.any(off > 0):
        raise ValueError("off-diagonal entries must be non-positive")
    if np.any(np.diag(M) <= np.abs(off).sum(axis=1)):
        raise ValueError("matrix is not strictly diagonally dominant")


def sdd_to_laplacian(M) -> tuple[np.ndarray, str]:
    """L = [[M, -v], [-v^T, a]] with v = M 1 and a = 1^T M 1; vertex n is the added one."""
    M = np.asarray(M, dtype=np.float64)
    _check_strict_sdd(M)
    n = M.shape[0]
    v = M @ np.ones(n)
    a = float(v.sum())
    L = np.zeros((n + 1, n + 1))
    L[:n, :n] = M
    L[:n, n] = -v
    L[n, :n] = -v
    L[n, n] = a
    return L, f"vertices 0..{n - 1} are the rows of M; vertex {n} absorbs the row excess"


def trace_inverse_via_effres(M, effres: Optional[Callable] = None) -> float:
    """tr(M^{-1}) = sum_i R_eff(i, n) on the Laplacian embedding of M."""
    L, _ = sdd_to_laplacian(M)
    n = L.shape[0] - 1
    eff = effres or exact_effres
    return math.fsum(float(eff(L, i, n)) for i in range(n))


def _check_laplacian(L: np.ndarray) -> None:
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise ValueError("Laplacian must be square")
    scale = max(1.0, np.abs(L).max())
    if not np.allclose(L, L.T, rtol=0, atol=1e-12 * scale):
        raise ValueError("Laplacian must be symmetric")
    off = L - np.diag(np.diag(L))
    if np.any(off > 1e-12 * scale):
        raise ValueError("Laplacian off-diagonals must be non-positive")
    if np.any(np.abs(L.sum(axis=1)) > 1e-10 * scale):
        raise ValueError("Laplacian rows must sum to zero")


class LeverageScores:
    """Leverage of incidence row e: w_e (1_i - 1_j)^T L^+ (1_i - 1_j)."""

    def __init__(self, L: np.ndarray, edges, weights):
        self.edges = list(edges)
        self.weights = np.asarray(weights, dtype=np.float64)
        self._Lp = np.linalg.pinv(L, hermitian=True)

    def __call__(self, e: int) -> float:
        i, j = self.edges[e]
        r = self._Lp[i, i] + self._Lp[j, j] - 2.0 * self._Lp[i, j]
        return float(self.weights[e] * r)

    def all(self) -> np.ndarray:
        return np.array([self(e) for e in range(len(self.edges))])


def incidence_and_leverage(L) -> tuple[np.ndarray, LeverageScores]:
    """Weighted incidence B (one row per edge, entries +-sqrt(w)) with B^T B = L."""
    L = np.asarray(L, dtype=np.float64)
    _check_laplacian(L)
    n = L.shape[0]
    edges, weights = [], []
    for i in range(n):
        for j in range(i + 1, n):
            if L[i, j] < 0:
                edges.append((i, j))
                weights.append(-L[i, j])
    B = np.zeros((len(edges), n))
    for e, ((i, j), w) in enumerate(zip(edges, weights)):
        s = math.sqrt(w)
        B[e, i] = s
        B[e, j] = -s
    return B, LeverageScores(L, edges, weights)


# --------------------------------------------------------------------------
# determinant


def determinant_delta(n: int) -> float:
    return 1.0 / (10.0 * n ** 4)


def oracle_det_estimator(B) -> float:
    sign, logdet = np.linalg.slogdet(np.asarray(B, dtype=np.float64))
    return float(sign * math.exp(logdet))


def determinant_triangle_detect(g: Graph, det_estimator: Optional[Callable] = None,
                                return_verdict: bool = False):
    """Triangle test from X ~ det(I + delta A) = 1 - delta^2 |A|_F^2 / 2 + delta^3 tr(A^3) / 3 + ...

    The threshold sits at delta^3, half the smallest nonzero cubic term 2 delta^3.
    """
    n = g.n
    if n < 1:
        raise ValueError("empty vertex set")
    delta = determinant_delta(n)
    if n > DET_MAX_N:
        # the estimator must be accurate to c / n^12 relative to det ~ 1
        raise PrecisionError(f"precision infeasible at n = {n}: determinant detection needs "
                             f"n <= {DET_MAX_N}")
    est = det_estimator or oracle_det_estimator
    X = float(est(np.eye(n) + delta * g.dense()))
    stat = X - (1.0 - delta ** 2 * (2.0 * g.m) / 2.0)
    thr = delta ** 3
    v = Verdict(bool(stat >= thr), stat, thr)
    return v if return_verdict else v.triangle
