"""Hutchinson trace estimation with deterministic Rademacher probes."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

PROBE_CHUNK = 256


@dataclass(frozen=True, eq=False)
class TraceEstimate:
    mean: float
    num_probes: int
    probe_values: np.ndarray
    seed: int

    @property
    def std_error(self) -> float:
        if self.num_probes < 2:
            return float("inf")
        return float(np.std(self.probe_values, ddof=1) / math.sqrt(self.num_probes))


def thread_count() -> int:
    """Worker cap from SPECTRA_THREADS, defaulting to the available cores."""
    raw = os.environ.get("SPECTRA_THREADS", "").strip()
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1)


def probe_chunk(dim: int, seed: int, tag: int, chunk: int, count: int = PROBE_CHUNK) -> np.ndarray:
    """Rademacher probes for indices chunk*PROBE_CHUNK ... as a dim x count block.

    Probe j of a stream is fixed by (seed, tag, j // PROBE_CHUNK), so any
    partition of the probe range gives the same vectors.
    """
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(tag) & 0xFFFFFFFF, int(chunk)])
    rng = np.random.Generator(np.random.Philox(ss))
    bits = rng.integers(0, 2, size=(PROBE_CHUNK, dim), dtype=np.int8)
    return (2.0 * bits[:count].T - 1.0)


def probe_block(dim: int, num_probes: int, seed: int, tag: int = 0):
    """Yield (start, Y) blocks covering probes 0 .. num_probes - 1 in order."""
    for chunk in range(int(math.ceil(num_probes / PROBE_CHUNK))):
        start = chunk * PROBE_CHUNK
        yield start, probe_chunk(dim, seed, tag, chunk, min(PROBE_CHUNK, num_probes - start))


def hutchinson_trace(op: Callable, dim: int, num_probes: int, seed: int, *, tag: int = 0,
                     threads: int | None = None) -> TraceEstimate:
    """Mean of y^T op(y) over Rademacher probes; ``op`` maps a dim x b block to dim x b."""
    if num_probes < 1:
        raise ValueError("num_probes must be at least 1")
    blocks = list(probe_block(dim, num_probes, seed, tag))

    def run(item):
        _, Y = item
        return np.einsum("ij,ij->j", Y, np.asarray(op(Y)).reshape(dim, -1))

    workers = min(threads or thread_count(), len(blocks))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(run, blocks))
    else:
        parts = [run(b) for b in blocks]
    vals = np.concatenate(parts)
    # fixed-order exact summation keeps the mean independent of scheduling
    return TraceEstimate(math.fsum(vals) / num_probes, num_probes, vals, int(seed))


def hutchinson_dense(H: np.ndarray, num_probes: int, seed: int, *, tag: int = 0) -> TraceEstimate:
    """Hutchinson estimate for an explicit symmetric matrix (same probes as the operator form)."""
    return hutchinson_trace(lambda Y: H @ Y, H.shape[0], num_probes, seed, tag=tag, threads=1)
