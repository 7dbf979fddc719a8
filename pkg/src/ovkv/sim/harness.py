"""Compare budgeted caches against the unbounded cache on the same frame stream."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..core import EngineConfig
from ..engine import EngineState, FrameInput, step
from .frames import generate_frame
from .model import ToyModel, softmax
from .probe import ProbeKind, ProbeScorer, attention_allocations
from .scene import TrajectoryScene


def readout(queries, keys, values, num_heads: int) -> np.ndarray:
    """Multi-head attention output of ``queries`` over a key/value set, shape (n_q, width)."""
    q = np.asarray(queries, dtype=np.float64)
    k = np.asarray(keys, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    d = q.shape[1] // num_heads
    qh = q.reshape(len(q), num_heads, d).transpose(1, 0, 2)
    kh = k.reshape(len(k), num_heads, d).transpose(1, 0, 2)
    vh = v.reshape(len(v), num_heads, d).transpose(1, 0, 2)
    out = softmax(qh @ kh.transpose(0, 2, 1) / np.sqrt(d)) @ vh
    return out.transpose(1, 0, 2).reshape(len(q), -1)


def frame_readouts(state: EngineState, frame: FrameInput, num_heads: int) -> np.ndarray:
    """Readout of each layer's current queries over the cache the frame attends to."""
    outs = []
    for l, cache in enumerate(state.layer_caches):
        keys = np.concatenate([cache.keys, frame.keys[l]])
        values = np.concatenate([cache.values, frame.values[l]])
        outs.append(readout(frame.queries[l], keys, values, num_heads))
    return np.stack(outs)


@dataclass
class StrategyRun:
    strategy: str
    proxy_errors: list[float] = field(default_factory=list)
    survivors: list[list[list[tuple[int, int]]]] = field(default_factory=list)
    step_ms: list[float] = field(default_factory=list)
    peak_bytes: int = 0
    attention_allocations: int = 0
    budget_violations: int = 0

    @property
    def mean_proxy_error(self) -> float:
        return float(np.mean(self.proxy_errors)) if self.proxy_errors else 0.0


def oracle_full_cache_run(
    scene: TrajectoryScene,
    model: ToyModel,
    num_frames: int,
    cfg: EngineConfig,
    strategies=(ProbeKind.FFN_RESIDUAL, ProbeKind.RANDOM),
    seed: int = 0,
    keep_survivors: bool = False,
) -> dict[str, StrategyRun]:
    """Run each strategy on one frame stream and measure readout drift from the full cache.

    The full cache is an engine whose budget never binds. Proxy error at a step is the mean
    L2 distance between per-token readouts under the budgeted and the full cache, averaged
    over layers.
    """
    frames = [generate_frame(scene, t, model) for t in range(num_frames)]
    heads = cfg.dims.num_heads
    full_cfg = _unbounded(cfg, num_frames)
    state = EngineState.empty(full_cfg)
    reference = []
    for f in frames:
        reference.append(frame_readouts(state, f, heads))
        state, _ = step(state, f, full_cfg, scene.intrinsics)

    results = {}
    for kind in strategies:
        scorer = ProbeScorer(kind, seed=seed)
        run = StrategyRun(scorer.name)
        before = attention_allocations.count
        state = EngineState.empty(cfg)
        for f, ref in zip(frames, reference):
            drift = np.linalg.norm(frame_readouts(state, f, heads) - ref, axis=-1)
            run.proxy_errors.append(float(drift.mean()))
            t0 = time.perf_counter()
            state, m = step(state, f, cfg, scene.intrinsics, scorer)
            run.step_ms.append((time.perf_counter() - t0) * 1e3)
            run.peak_bytes = max(run.peak_bytes, m.bytes_resident)
            if m.layer_budgets and any(s > b for s, b in zip(m.layer_sizes, m.layer_budgets)):
                run.budget_violations += 1
            if m.resident_tokens > cfg.total_budget:
                run.budget_violations += 1
            if keep_survivors:
                run.survivors.append([c.token_ids() for c in state.layer_caches])
        run.attention_allocations = attention_allocations.count - before
        results[scorer.name] = run
    return results


def _unbounded(cfg: EngineConfig, num_frames: int) -> EngineConfig:
    from dataclasses import replace

    need = cfg.dims.num_layers * cfg.dims.tokens_per_frame * max(num_frames, 1)
    return replace(cfg, total_budget=max(cfg.total_budget, need))
