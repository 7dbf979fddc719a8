"""Alternative eviction criteria used to probe how much FFN residual scoring buys.

All four scorers plug into the same hybrid framework and differ only in how current-frame
tokens are rated. Random additionally replaces historical diversity, giving pure random
eviction.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from ..core import EngineConfig, LayerCache
from ..engine import FrameInput
from ..rating import activation_score
from .model import softmax


class ProbeKind(str, enum.Enum):
    FFN_RESIDUAL = "ffn_residual"
    ATTENTION_WEIGHT = "attention_weight"
    QK_DOT = "qk_dot"
    RANDOM = "random"


class AttentionAllocations:
    """Counts attention matrices materialized by scorers."""

    def __init__(self):
        self.count = 0
        self.elements = 0

    def record(self, shape):
        self.count += 1
        self.elements += int(np.prod(shape))

    def reset(self):
        self.count = 0
        self.elements = 0


attention_allocations = AttentionAllocations()


def attention_matrix(queries, keys, num_heads: int, counter: AttentionAllocations | None = None) -> np.ndarray:
    """Softmax attention of every query over every key, shape (heads, n_q, n_k)."""
    q = np.asarray(queries, dtype=np.float64)
    k = np.asarray(keys, dtype=np.float64)
    d = q.shape[1] // num_heads
    qh = q.reshape(len(q), num_heads, d).transpose(1, 0, 2)
    kh = k.reshape(len(k), num_heads, d).transpose(1, 0, 2)
    a = softmax(qh @ kh.transpose(0, 2, 1) / np.sqrt(d))
    (counter or attention_allocations).record(a.shape)
    return a


@dataclass
class ProbeScorer:
    kind: ProbeKind = ProbeKind.FFN_RESIDUAL
    seed: int = 0

    def __post_init__(self):
        self.kind = ProbeKind(self.kind)

    @property
    def name(self) -> str:
        return self.kind.value

    def _rng(self, frame_index: int, layer: int, salt: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, frame_index, layer, salt])

    def score_new(self, frame: FrameInput, layer: int, history: LayerCache, cfg: EngineConfig) -> np.ndarray:
        hist_keys = history.keys if history is not None else None
        return probe_score(self, frame, layer, hist_keys, cfg)

    def score_hist(self, frame: FrameInput, layer: int, cache: LayerCache, hist_idx: np.ndarray):
        if self.kind is ProbeKind.RANDOM:
            return self._rng(frame.frame_index, layer, 1).uniform(size=len(hist_idx))
        return None


def probe_score(scorer: ProbeScorer, frame: FrameInput, layer: int, history_keys, cfg: EngineConfig) -> np.ndarray:
    """Scores for the frame's M tokens, read against the cached history where relevant.

    ``history_keys`` is the layer's cache content before the frame was appended.
    """
    dims = cfg.dims
    kind = scorer.kind
    if kind is ProbeKind.FFN_RESIDUAL:
        return activation_score(frame.residuals[layer], dims, frame.frame_index).flat()
    if kind is ProbeKind.RANDOM:
        return scorer._rng(frame.frame_index, layer, 0).uniform(size=dims.tokens_per_frame)
    if frame.queries is None:
        raise ValueError(f"{kind.value} scoring needs the frame's queries")
    q = np.asarray(frame.queries[layer], dtype=np.float64)
    k_new = np.asarray(frame.keys[layer], dtype=np.float64)
    if kind is ProbeKind.QK_DOT:
        return (q @ k_new.T).mean(axis=0)
    if history_keys is None or len(history_keys) == 0:
        keys = k_new
    else:
        keys = np.concatenate([np.asarray(history_keys, dtype=np.float64), k_new])
    a = attention_matrix(q, keys, dims.num_heads)
    column_mass = a.sum(axis=(0, 1))
    return column_mass[-len(k_new):]
