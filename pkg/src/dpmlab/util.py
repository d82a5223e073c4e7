"""Small shared helpers: seeding, chunked evaluation, MC summaries."""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, NamedTuple

import numpy as np

# Fixed chunk size so that partial results (and therefore the FP reduction
# order) do not depend on the worker count.
CHUNK = 16384


def substream(seed: int, *names) -> np.random.Generator:
    """Deterministic child generator for a named pipeline stage.

    Names (strings or ints) are hashed into the seed sequence so that each
    stage draws from an independent stream regardless of call order.
    """
    keys = [zlib.crc32(str(n).encode()) if not isinstance(n, (int, np.integer)) else int(n) for n in names]
    return np.random.default_rng(np.random.SeedSequence([int(seed), *keys]))


def chunked_apply(fn: Callable[..., np.ndarray], *arrays: np.ndarray, workers: int = 1) -> np.ndarray:
    """Apply ``fn`` over fixed-size row chunks and concatenate in order.

    The chunking is independent of ``workers``, so results are byte-identical
    for any worker count; threads only decide where chunks execute.
    """
    n = arrays[0].shape[0]
    bounds = [(i, min(i + CHUNK, n)) for i in range(0, n, CHUNK)]
    if len(bounds) <= 1 or workers <= 1:
        if len(bounds) == 1:
            return fn(*arrays)
        return np.concatenate([fn(*(a[lo:hi] for a in arrays)) for lo, hi in bounds], axis=0)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, *(a[lo:hi] for a in arrays)) for lo, hi in bounds]
        return np.concatenate([f.result() for f in futures], axis=0)


class MeanSE(NamedTuple):
    """A Monte Carlo estimate together with its standard error."""

    value: float
    se: float


class VecMeanSE(NamedTuple):
    """Vector MC mean; ``se`` is the norm of the per-coordinate SEs."""

    value: np.ndarray
    se: float


def mc_mean(samples: np.ndarray) -> MeanSE:
    """Mean and standard error of scalar MC samples."""
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    se = float(samples.std(ddof=1) / np.sqrt(n)) if n > 1 else float("inf")
    return MeanSE(float(samples.mean()), se)


def mc_mean_vec(samples: np.ndarray) -> VecMeanSE:
    """Row-mean of (n, k) samples with the aggregated norm-SE."""
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[0]
    mean = samples.mean(axis=0)
    if n > 1:
        se = float(np.sqrt(np.sum(samples.var(axis=0, ddof=1) / n)))
    else:
        se = float("inf")
    return VecMeanSE(mean, se)


def logsumexp(a: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(a - m), axis=axis)) + np.squeeze(m, axis=axis)
    return out


def rel_err(a: float, b: float) -> float:
    """|a - b| relative to the larger magnitude (0 when both are 0)."""
    denom = max(abs(a), abs(b))
    return 0.0 if denom == 0.0 else abs(a - b) / denom
