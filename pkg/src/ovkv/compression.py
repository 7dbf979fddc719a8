"""Hybrid scoring, per-layer budget allocation and top-k retention."""
from __future__ import annotations

import collections
from dataclasses import dataclass

import numpy as np

from .core import UNPROTECTED, LayerCache


class BudgetError(ValueError):
    """A budget cannot hold the tokens it is required to keep."""

    def __init__(self, message, deficit=0):
        super().__init__(message)
        self.deficit = deficit


def diversity_scores(keys, diagnostics: collections.Counter | None = None) -> np.ndarray:
    """One minus the cosine similarity of each key to the mean key.

    Zero-norm keys, or every key when the centroid itself is zero, score 0 and are counted
    under ``diagnostics["zero_norm"]``.
    """
    keys = np.asarray(keys, dtype=np.float64)
    if keys.ndim != 2 or len(keys) == 0:
        raise ValueError("need a non-empty (n, dim) array of keys")
    centroid = keys.mean(axis=0)
    c_norm = np.linalg.norm(centroid)
    k_norm = np.linalg.norm(keys, axis=1)
    degenerate = k_norm == 0.0 if c_norm > 0.0 else np.ones(len(keys), dtype=bool)
    out = np.zeros(len(keys))
    ok = ~degenerate
    if ok.any():
        cos = keys[ok] @ centroid / (k_norm[ok] * c_norm)
        out[ok] = 1.0 - np.clip(cos, -1.0, 1.0)
    if diagnostics is not None and degenerate.any():
        diagnostics["zero_norm"] += int(degenerate.sum())
    return out


def minmax(x) -> tuple[np.ndarray, tuple[float, float]]:
    """Min-max normalize to [0, 1]; a constant input maps to 0.5 everywhere."""
    x = np.asarray(x, dtype=np.float64)
    if len(x) == 0:
        return x.copy(), (np.nan, np.nan)
    if not np.isfinite(x).all():
        raise ValueError("scores must be finite")
    lo, hi = float(x.min()), float(x.max())
    if hi == lo:
        return np.full(len(x), 0.5), (lo, hi)
    return (x - lo) / (hi - lo), (lo, hi)


@dataclass(frozen=True)
class HybridScores:
    scores: np.ndarray  # evictable order: historical first, then current frame
    is_new: np.ndarray
    hist_range: tuple[float, float]
    new_range: tuple[float, float]

    def __len__(self):
        return len(self.scores)


def hybrid_scores(hist_diversity, new_activation, beta: float) -> HybridScores:
    """Weight normalized historical diversity by 1-beta and normalized activation by beta."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    d_hat, hist_range = minmax(hist_diversity)
    s_hat, new_range = minmax(new_activation)
    scores = np.concatenate([(1.0 - beta) * d_hat, beta * s_hat])
    is_new = np.concatenate([np.zeros(len(d_hat), bool), np.ones(len(s_hat), bool)])
    return HybridScores(scores, is_new, hist_range, new_range)


def largest_remainder(quotas, total: int) -> np.ndarray:
    """Round non-negative quotas to integers summing to ``total``.

    Remaining units go to the largest fractional parts; equal fractions favor lower index.
    """
    quotas = np.asarray(quotas, dtype=np.float64)
    base = np.floor(quotas).astype(np.int64)
    short = total - int(base.sum())
    frac = quotas - base
    order = sorted(range(len(quotas)), key=lambda i: (-frac[i], i))
    for i in order[:short]:
        base[i] += 1
    return base


def allocate_budgets(total: int, per_layer_diversity, per_layer_floor) -> np.ndarray:
    """Split ``total`` across layers: each gets its floor, the rest goes by diversity share."""
    diversity = np.asarray(per_layer_diversity, dtype=np.float64)
    floors = np.asarray(per_layer_floor, dtype=np.int64)
    if diversity.shape != floors.shape:
        raise ValueError("diversity and floor vectors differ in length")
    if (diversity < 0).any() or not np.isfinite(diversity).all():
        raise ValueError("layer diversities must be finite and non-negative")
    spare = int(total) - int(floors.sum())
    if spare < 0:
        raise BudgetError(f"budget {total} is {-spare} tokens short of the per-layer floors", deficit=-spare)
    weight = diversity.sum()
    if weight > 0:
        quotas = spare * diversity / weight
    else:
        quotas = np.full(len(floors), spare / len(floors))
    return floors + largest_remainder(quotas, spare)


def retention_order(scores, frames, slots) -> np.ndarray:
    """Indices sorted best-first: score desc, then newer frame, then lower slot."""
    return np.lexsort((np.asarray(slots), -np.asarray(frames), -np.asarray(scores)))


def compress_layer(cache: LayerCache, scores: HybridScores | np.ndarray, budget: int) -> LayerCache:
    """Keep every protected entry plus the best-scoring evictable entries up to ``budget``.

    ``scores`` is aligned with the evictable entries in storage order.
    """
    protected = cache.protected_mask
    n_protected = int(protected.sum())
    if budget < n_protected:
        raise BudgetError(
            f"layer {cache.layer_index}: budget {budget} below {n_protected} protected tokens",
            deficit=n_protected - budget,
        )
    r = np.asarray(getattr(scores, "scores", scores), dtype=np.float64)
    evictable = np.flatnonzero(~protected)
    if len(r) != len(evictable):
        raise ValueError(f"{len(r)} scores for {len(evictable)} evictable entries")
    if len(cache) <= budget:
        return cache
    order = retention_order(r, cache.frames[evictable], cache.slots[evictable])
    keep = protected.copy()
    keep[evictable[order[: budget - n_protected]]] = True
    return cache.select(keep)


def evictable_split(cache: LayerCache) -> tuple[np.ndarray, np.ndarray]:
    """Storage indices of unprotected historical and unprotected current-frame entries."""
    free = cache.protection == UNPROTECTED
    new = cache.new_mask
    return np.flatnonzero(free & ~new), np.flatnonzero(free & new)
