"""Seeding helpers used everywhere determinism matters."""

from __future__ import annotations

import numpy as np


def rng(seed: int, *tags: int) -> np.random.Generator:
    """Deterministic generator for ``seed`` within the stream named by ``tags``.

    Distinct tag tuples give statistically independent streams; the mapping
    is stable across platforms and numpy versions (SeedSequence contract).
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=tags)))


def frob_norm(a: np.ndarray) -> float:
    # np.linalg.norm may route through threaded BLAS dot; this stays in
    # numpy's deterministic pairwise reduction.
    return float(np.sqrt(np.sum(a.astype(np.float64) ** 2)))


def spearman(x, y) -> float:
    """Spearman rank correlation (average ranks for ties)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size != y.size or x.size < 2:
        raise ValueError("spearman needs two equal-length sequences of size >= 2")
    rx = _avg_ranks(x)
    ry = _avg_ranks(y)
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    denom = np.sqrt(np.sum(rx * rx) * np.sum(ry * ry))
    if denom == 0.0:
        return 0.0
    return float(np.sum(rx * ry) / denom)


def _avg_ranks(v: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    order = np.argsort(v, kind="stable")
    ranks = np.empty(v.size, dtype=np.float64)
    sv = v[order]
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks
