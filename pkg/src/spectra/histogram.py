"""Approximate spectral histogram: random shift, soft windows, per-bucket trace estimates."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .linops import as_matrix, oriented
from .oracle import dense_svd
from .solvers import SolverConfig
from .trace import hutchinson_dense, hutchinson_trace
from .window import SpectralContext

DEFAULT_BUCKET_CAP = 100_000


class BucketCapError(ValueError):
    """Too many buckets; raise lambda or alpha."""


@dataclass(frozen=True)
class HistogramConfig:
    eps1: float
    eps2: float
    alpha: float
    lam: float
    c1: float = 0.1
    c2: float = 0.1
    c3: float = 0.1
    k: int = 0
    seed: int = 0
    max_buckets: int = DEFAULT_BUCKET_CAP
    repetitions: int = 1
    engine: str = "auto"
    solver_method: str = "precond_cg"

    def __post_init__(self):
        for name in ("eps1", "eps2", "alpha", "lam"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if min(self.c1, self.c2, self.c3) <= 0:
            raise ValueError("constants c1, c2, c3 must be positive")
        if not self.gamma < self.alpha:
            raise ValueError("gamma = c1 * eps2 * alpha must be below alpha")
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")

    @property
    def gamma(self) -> float:
        return self.c1 * self.eps2 * self.alpha

    @property
    def T(self) -> int:
        return bucket_count(self.lam, self.alpha)

    def probes(self, n: int) -> int:
        return int(math.ceil(math.log(max(n, 2)) / (self.c2 * self.eps1 ** 2)))

    def window_eps(self, n: int) -> float:
        return self.c3 * self.eps1 ** 2 / n


def bucket_count(lam: float, alpha: float) -> int:
    """T = ceil(log_{1 - alpha} lambda)."""
    return int(math.ceil(math.log(lam) / math.log1p(-alpha) - 1e-12))


def boundaries_for(a1: float, alpha: float, T: int) -> np.ndarray:
    """a_0 = 1 and a_t = a1 (1 - alpha)^{t-1} for 1 <= t <= T + 1."""
    return np.concatenate([[1.0], a1 * (1.0 - alpha) ** np.arange(T + 1)])


def draw_shift(alpha: float, seed: int) -> float:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0xA1])))
    return float(1.0 - (alpha / 4.0) * rng.random())


@dataclass(eq=False)
class HistogramResult:
    a1: float
    boundaries: np.ndarray
    counts: np.ndarray
    M: float
    T: int
    info: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def alpha(self) -> float:
        if "alpha" in self.info:
            return float(self.info["alpha"])
        if self.T >= 1:
            return float(1.0 - self.boundaries[2] / self.boundaries[1])
        raise ValueError("alpha is not recoverable from a single-bucket result")

    def to_json(self, indent: Optional[int] = None) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    def to_dict(self) -> dict:
        return {"a1": float(self.a1), "boundaries": [float(x) for x in self.boundaries],
                "counts": [float(x) for x in self.counts], "M": float(self.M), "T": int(self.T)}

    @classmethod
    def from_json(cls, text: str) -> "HistogramResult":
        d = json.loads(text)
        return cls(float(d["a1"]), np.asarray(d["boundaries"], dtype=np.float64),
                   np.asarray(d["counts"], dtype=np.float64), float(d["M"]), int(d["T"]))


def estimate_buckets(ctx: SpectralContext, boundaries: np.ndarray, gamma: float, eps_w: float,
                     num_probes: int, seed: int, buckets=None, rep: int = 0) -> dict[int, float]:
    """Raw Hutchinson estimates of tr h_t(G) for the requested bucket indices."""
    T = boundaries.shape[0] - 2
    out = {}
    for t in (range(T + 1) if buckets is None else buckets):
        lo, hi = float(boundaries[t + 1]), float(boundaries[t])
        # fresh probes per bucket: the stream tag encodes (bucket, repetition)
        tag = (t << 8) | rep
        if ctx.engine == "dense":
            H = ctx.window_matrix(lo, hi, gamma, eps_w)
            est = hutchinson_dense(H, num_probes, seed, tag=tag)
        else:
            est = hutchinson_trace(lambda Y: ctx.window_apply(lo, hi, gamma, eps_w, Y),
                                   ctx.d, num_probes, seed, tag=tag)
        out[t] = est.mean
    return out


def round_counts(raw) -> np.ndarray:
    c = np.asarray(raw, dtype=np.float64).copy()
    c[c <= 0.5] = 0.0
    return c


def approximate_histogram(A, config: HistogramConfig, ctx: Optional[SpectralContext] = None,
                          M: Optional[float] = None) -> HistogramResult:
    """Approximate counts of squared singular values of A/M in the shifted buckets."""
    T = config.T
    if T > config.max_buckets:
        raise BucketCapError(f"T = {T} buckets exceeds the cap {config.max_buckets}; "
                             "use a larger lambda or alpha")
    if ctx is None:
        ctx = SpectralContext(A, M, k=config.k, seed=config.seed, engine=config.engine,
                              solver_config=SolverConfig(method=config.solver_method))
    n = ctx.n
    a1 = draw_shift(config.alpha, config.seed)
    bnd = boundaries_for(a1, config.alpha, T)
    S = config.probes(n)
    eps_w = config.window_eps(n)
    reps = []
    for r in range(config.repetitions):
        raw = estimate_buckets(ctx, bnd, config.gamma, eps_w, S, config.seed, rep=r)
        reps.append([raw[t] for t in range(T + 1)])
    raw = np.median(np.asarray(reps), axis=0)
    counts = round_counts(raw)
    info = {"alpha": config.alpha, "gamma": config.gamma, "lam": config.lam,
            "probes_per_bucket": S, "window_eps": eps_w, "raw_counts": raw,
            "probe_count": S * (T + 1) * config.repetitions, "counters": dict(ctx.counters)}
    return HistogramResult(a1, bnd, counts, ctx.M, T, info)


def bucket_index(x: np.ndarray, boundaries: np.ndarray) -> np.ndarray:
    """Bucket t with a_{t+1} < x <= a_t; the last bucket is closed below; -1 if outside."""
    x = np.asarray(x, dtype=np.float64)
    T = boundaries.shape[0] - 2
    asc = boundaries[::-1]  # a_{T+1} < ... < a_0
    # position p with asc[p-1] < x <= asc[p]
    p = np.searchsorted(asc, x, side="left")
    t = (T + 1) - p
    t = np.where(x > 1.0, 0, t)
    t = np.where(x == boundaries[-1], T, t)
    t = np.where((x < boundaries[-1]) | (t < 0) | (t > T), -1, t)
    return t.astype(np.int64)


def exact_bucket_counts(A, result: HistogramResult) -> np.ndarray:
    """Oracle counts of squared singular values of A/M in each bucket."""
    a = oriented(as_matrix(A))
    sq = dense_svd(a).squared / result.M ** 2
    # include the d - rank zeros: they only fall into a bucket when a_{T+1} <= 0
    idx = bucket_index(sq, result.boundaries)
    counts = np.zeros(result.T + 1)
    np.add.at(counts, idx[idx >= 0], 1.0)
    return counts


def envelope_holds(est, exact, eps1: float, eps2: float, T: int) -> np.ndarray:
    """Per-bucket check of (1-e1) b_t <= b~_t <= (1+e1) b_t + T e2 (b_{t-1} + b_t + b_{t+1})."""
    est = np.asarray(est, dtype=np.float64)
    b = np.asarray(exact, dtype=np.float64)
    pad = np.concatenate([[0.0], b, [0.0]])
    nb = pad[:-2] + pad[1:-1] + pad[2:]
    lo = (1 - eps1) * b <= est + 1e-9
    hi = est <= (1 + eps1) * b + T * eps2 * nb + 1e-9
    return lo & hi
