"""Probabilists' Hermite polynomials, Fourier-Hermite products and Monte Carlo projection.

The Gaussian coordinates are sampled directly as i.i.d. standard normals; under
this convention ``E[H_alpha H_beta] = alpha! * delta_{alpha beta}``.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .multiindex import MultiIndex

CHUNK = 1 << 16

SampleFn = Callable[[np.ndarray], np.ndarray]


class CoordinateOutOfRange(IndexError):
    pass


@dataclass(frozen=True)
class RngConfig:
    seed: int = 20220330
    generator: str = "philox"

    def chunk_generator(self, chunk: int) -> np.random.Generator:
        """Independent deterministic substream for one chunk of samples."""
        ss = np.random.SeedSequence(self.seed, spawn_key=(chunk,))
        bitgen = {"philox": np.random.Philox, "pcg64": np.random.PCG64}[self.generator]
        return np.random.Generator(bitgen(ss))


def hermite_poly(k: int, x):
    """``h_k(x)`` via ``h_{k+1} = x h_k - k h_{k-1}``; vectorized over ``x``."""
    x = np.asarray(x, dtype=float)
    prev = np.ones_like(x)
    if k == 0:
        return prev
    cur = x.copy()
    for j in range(1, k):
        prev, cur = cur, x * cur - j * prev
    return cur


def eval_H(gamma: MultiIndex, sample) -> np.ndarray:
    """``H_gamma`` at samples of shape ``(..., m)``: product of ``h_{gamma_k}`` over the support."""
    sample = np.asarray(sample, dtype=float)
    m = sample.shape[-1]
    if gamma.max_coord > m:
        raise CoordinateOutOfRange(f"{gamma} needs coordinate {gamma.max_coord}, sample has {m}")
    out = np.ones(sample.shape[:-1])
    for c, e in gamma.pairs:
        out = out * hermite_poly(e, sample[..., c - 1])
    return out


def _chunk_sums(fg: SampleFn, m: int, count: int, rng: RngConfig, chunk: int):
    x = rng.chunk_generator(chunk).standard_normal((count, m))
    v = np.asarray(fg(x), dtype=float)
    v = np.broadcast_to(v, (count,))
    return float(v.sum()), float(np.dot(v, v))


def mc_mean(fg: SampleFn, n: int, rng: RngConfig, m: int, threads: int = 1):
    """Sample mean and standard error of ``fg`` over ``n`` Gaussian samples in ``R^m``.

    Samples are drawn in fixed-size chunks, each from its own substream, and
    reduced in chunk order, so the result does not depend on ``threads``.
    """
    if n < 2:
        raise ValueError("need at least two samples")
    sizes = [CHUNK] * (n // CHUNK) + ([n % CHUNK] if n % CHUNK else [])
    jobs = [(fg, m, s, rng, i) for i, s in enumerate(sizes)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda a: _chunk_sums(*a), jobs))
    else:
        parts = [_chunk_sums(*a) for a in jobs]
    total = sum(p[0] for p in parts)
    total_sq = sum(p[1] for p in parts)
    mean = total / n
    var = max(total_sq / n - mean * mean, 0.0) * n / (n - 1)
    return mean, float(np.sqrt(var / n))


def mc_inner(f: SampleFn, g: SampleFn, n: int, rng: Optional[RngConfig] = None, m: int = 1,
             threads: int = 1):
    """Estimate ``E[f g]``; returns ``(estimate, stderr)``."""
    rng = rng or RngConfig()
    return mc_mean(lambda x: np.asarray(f(x)) * np.asarray(g(x)), n, rng, m, threads)


def mc_project(f: SampleFn, gamma: MultiIndex, n: int, rng: Optional[RngConfig] = None,
               m: Optional[int] = None, threads: int = 1) -> float:
    """Chaos coefficient ``E[f H_gamma] / gamma!``."""
    m = max(gamma.max_coord, 1) if m is None else m
    est, _ = mc_inner(f, lambda x: eval_H(gamma, x), n, rng, m, threads)
    return est / gamma.factorial()


def orthogonality_table(indices, n: int, rng: Optional[RngConfig] = None, m: int = 2):
    """Empirical Gram matrix of ``H_alpha`` for the given indices, with standard errors.

    All pairs share one sample stream; returns ``(gram, stderr)`` arrays.
    """
    rng = rng or RngConfig()
    indices = list(indices)
    d = len(indices)
    sums = np.zeros((d, d))
    sq = np.zeros((d, d))
    done = 0
    chunk = 0
    while done < n:
        count = min(CHUNK, n - done)
        x = rng.chunk_generator(chunk).standard_normal((count, m))
        H = np.stack([eval_H(a, x) for a in indices], axis=1)
        sums += H.T @ H
        sq += (H * H).T @ (H * H)
        done += count
        chunk += 1
    mean = sums / n
    var = np.maximum(sq / n - mean ** 2, 0.0) * n / (n - 1)
    return mean, np.sqrt(var / n)
