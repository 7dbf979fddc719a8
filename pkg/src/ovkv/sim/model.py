"""A small seeded Pre-LN transformer that produces real FFN residuals per frame."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import ModelDims

TOY_DIMS = ModelDims(num_layers=4, num_heads=2, head_dim=16, patch_rows=8, patch_cols=8, num_aux=5)


def layer_norm(x, gain, bias, eps=1e-6):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gain + bias


def gelu(x):
    return 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * x**3)))


def softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


@dataclass
class BlockWeights:
    ln1_gain: np.ndarray
    ln1_bias: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    ln2_gain: np.ndarray
    ln2_bias: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    layer_scale: np.ndarray  # lambda_2, per channel

    def ffn_residual(self, h):
        """lambda_2 * FFN(LN(h))."""
        z = layer_norm(h, self.ln2_gain, self.ln2_bias)
        return self.layer_scale * (gelu(z @ self.w1 + self.b1) @ self.w2 + self.b2)


@dataclass
class ForwardTrace:
    """Per-layer captures of one frame. Arrays have shape (L, M, ...)."""

    queries: np.ndarray
    keys: np.ndarray
    values: np.ndarray
    h: np.ndarray  # post-attention stream
    x: np.ndarray  # block output
    residuals: np.ndarray  # x - h as computed


class ToyModel:
    """Pre-LN blocks with frame-local attention and LayerScale on the FFN branch.

    Attention inside :meth:`forward` only spans the current frame's tokens. Cross-frame reads
    through the cache are measured separately by the harness so that the frame stream does
    not depend on eviction decisions.
    """

    def __init__(self, dims: ModelDims = TOY_DIMS, width: int = 32, seed: int = 0,
                 expansion: int = 4, zero_ffn: bool = False):
        if dims.kv_dim != width:
            raise ValueError(f"toy model needs num_heads*head_dim == width ({dims.kv_dim} != {width})")
        self.dims = dims
        self.width = width
        self.seed = seed
        rng = np.random.default_rng(seed)
        std = 1.0 / np.sqrt(width)
        hidden = expansion * width
        self.aux_embed = rng.normal(0.0, 1.0, (dims.num_aux, width))
        self.pos_embed = 0.3 * rng.normal(0.0, 1.0, (dims.tokens_per_frame, width))
        self.blocks = []
        for _ in range(dims.num_layers):
            w1 = rng.normal(0.0, std, (width, hidden))
            w2 = rng.normal(0.0, 1.0 / np.sqrt(hidden), (hidden, width))
            b1 = rng.normal(0.0, 0.1, hidden)
            b2 = rng.normal(0.0, 0.1, width)
            if zero_ffn:
                w1, w2, b1, b2 = (np.zeros_like(a) for a in (w1, w2, b1, b2))
            self.blocks.append(BlockWeights(
                ln1_gain=1.0 + 0.1 * rng.normal(size=width),
                ln1_bias=0.1 * rng.normal(size=width),
                wq=rng.normal(0.0, std, (width, width)),
                wk=rng.normal(0.0, std, (width, width)),
                wv=rng.normal(0.0, std, (width, width)),
                wo=rng.normal(0.0, std, (width, width)),
                ln2_gain=1.0 + 0.1 * rng.normal(size=width),
                ln2_bias=0.1 * rng.normal(size=width),
                w1=w1, b1=b1, w2=w2, b2=b2,
                layer_scale=rng.uniform(0.2, 1.0, width),
            ))

    def embed(self, patch_features) -> np.ndarray:
        patch_features = np.asarray(patch_features, dtype=np.float64)
        tokens = np.concatenate([self.aux_embed, patch_features])
        return tokens + self.pos_embed

    def attention(self, q, k, v):
        n_h, d = self.dims.num_heads, self.dims.head_dim
        qh = q.reshape(len(q), n_h, d).transpose(1, 0, 2)
        kh = k.reshape(len(k), n_h, d).transpose(1, 0, 2)
        vh = v.reshape(len(v), n_h, d).transpose(1, 0, 2)
        a = softmax(qh @ kh.transpose(0, 2, 1) / np.sqrt(d))
        return (a @ vh).transpose(1, 0, 2).reshape(len(q), n_h * d)

    def forward(self, patch_features) -> ForwardTrace:
        x = self.embed(patch_features)
        caps = {k: [] for k in ("queries", "keys", "values", "h", "x", "residuals")}
        for blk in self.blocks:
            z = layer_norm(x, blk.ln1_gain, blk.ln1_bias)
            q, k, v = z @ blk.wq, z @ blk.wk, z @ blk.wv
            h = x + self.attention(q, k, v) @ blk.wo
            r = blk.ffn_residual(h)
            x = h + r
            for name, val in zip(caps, (q, k, v, h, x, r)):
                caps[name].append(val)
        return ForwardTrace(**{k: np.stack(v) for k, v in caps.items()})
