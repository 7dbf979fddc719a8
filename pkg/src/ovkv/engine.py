"""Per-frame streaming orchestration over the layer caches and the camera-head cache.

A step appends the incoming frame, updates anchors, then compresses every layer back under
its share of the global budget. The camera head keeps a separate one-token-per-frame cache
whose protection marks follow the layer caches.
"""
from __future__ import annotations

import collections
import hashlib
import time
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from . import anchors as anc
from .compression import (
    BudgetError,
    allocate_budgets,
    compress_layer,
    diversity_scores,
    evictable_split,
    hybrid_scores,
    minmax,
)
from .core import INITIAL_ANCHOR, EngineConfig, LayerCache, cache_footprint_bytes
from .geometry import Intrinsics, PointMap, Pose, coverage_ratio
from .rating import ActivationGrid, activation_score, smooth


@dataclass
class FrameInput:
    """Everything the cache needs from one forward pass.

    ``keys``, ``values``, ``residuals`` and ``queries`` are stacked per layer with shape
    (L, M, width). Queries are only read by the probing scorers and the readout harness.
    """

    frame_index: int
    keys: np.ndarray
    values: np.ndarray
    residuals: np.ndarray
    pose: Pose
    points: PointMap
    queries: np.ndarray | None = None
    camera_key: np.ndarray | None = None
    camera_value: np.ndarray | None = None

    def __post_init__(self):
        if self.camera_key is None:
            self.camera_key = self.keys[-1, 0]
        if self.camera_value is None:
            self.camera_value = self.values[-1, 0]

    def check(self, cfg: EngineConfig):
        d = cfg.dims
        shape = (d.num_layers, d.tokens_per_frame, d.kv_dim)
        if self.keys.shape != shape or self.values.shape != shape:
            raise ValueError(f"frame {self.frame_index}: key/value blocks must have shape {shape}")
        if self.residuals.shape[:2] != shape[:2]:
            raise ValueError(f"frame {self.frame_index}: residuals must cover {shape[:2]} tokens")
        if len(self.points) != d.num_patches:
            raise ValueError(f"frame {self.frame_index}: expected {d.num_patches} points")


class Scorer(Protocol):
    name: str

    def score_new(self, frame: FrameInput, layer: int, history: LayerCache, cfg: EngineConfig) -> np.ndarray:
        """Raw saliency of the frame's M tokens in slot order."""

    def score_hist(self, frame: FrameInput, layer: int, cache: LayerCache, hist_idx: np.ndarray) -> np.ndarray | None:
        """Override for the entries ``cache[hist_idx]``; None keeps key diversity."""


class FfnResidualScorer:
    name = "ffn_residual"

    def score_new(self, frame, layer, history, cfg):
        return activation_score(frame.residuals[layer], cfg.dims, frame.frame_index).flat()

    def score_hist(self, frame, layer, cache, hist_idx):
        return None


@dataclass
class StepMetrics:
    frame_index: int
    layer_sizes: list[int]
    layer_budgets: list[int]
    protected_counts: list[int]
    camera_size: int
    camera_budget: int
    resident_tokens: int
    peak_tokens: int
    bytes_resident: int
    evicted: int
    camera_evicted: int
    rho: float | None
    registered: int | None
    demoted: int | None
    live_anchors: list[int]
    survivor_digest: str
    score_digest: str
    step_ms: float = 0.0

    def to_record(self, include_timing: bool = False) -> dict:
        rec = {k: v for k, v in self.__dict__.items() if k != "step_ms"}
        if include_timing:
            rec["step_ms"] = self.step_ms
        return rec


@dataclass(frozen=True)
class EngineState:
    layer_caches: tuple[LayerCache, ...]
    camera_cache: LayerCache
    registry: anc.AnchorRegistry = field(default_factory=anc.AnchorRegistry)
    step_counter: int = 0
    zero_norm_keys: int = 0

    @classmethod
    def empty(cls, cfg: EngineConfig) -> EngineState:
        d = cfg.dims
        layers = tuple(LayerCache(l, d.kv_dim, d.tokens_per_frame) for l in range(d.num_layers))
        return cls(layers, LayerCache(-1, d.kv_dim, 1))

    @property
    def resident_tokens(self) -> int:
        return sum(len(c) for c in self.layer_caches)


def camera_budget(cfg: EngineConfig) -> int:
    """Frames the aggregator budget can hold, never fewer than the anchor camera tokens."""
    return max(cfg.total_budget // cfg.dims.tokens_per_frame, 1 + cfg.max_anchors)


def _digest(arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()[:16]


def _apply_anchor_events(state_layers, camera, frame_index, record, demoted, num_aux):
    layers = list(state_layers)
    if record is not None:
        slots = num_aux + np.asarray(record.protected_patch_slots, dtype=np.int64)
        layers = [c.protect(frame_index, slots, record.anchor_id) for c in layers]
        camera = camera.protect(frame_index, [0], record.anchor_id)
    if demoted is not None:
        layers = [c.release(demoted) for c in layers]
        camera = camera.release(demoted)
    return layers, camera


def _compress_camera(camera: LayerCache, budget: int) -> LayerCache:
    if len(camera) <= budget:
        return camera
    hist_idx, new_idx = evictable_split(camera)
    d_hat = minmax(diversity_scores(camera.keys[hist_idx]))[0] if len(hist_idx) else np.zeros(0)
    # the incoming camera token outranks every historical one
    scores = np.concatenate([d_hat, np.full(len(new_idx), 2.0)])
    return compress_layer(camera, scores, budget)


def step(
    state: EngineState,
    frame: FrameInput,
    cfg: EngineConfig,
    cam: Intrinsics,
    scorer: Scorer | None = None,
) -> tuple[EngineState, StepMetrics]:
    """Advance the engine by one frame. The input state is never modified."""
    started = time.perf_counter()
    scorer = scorer or FfnResidualScorer()
    dims = cfg.dims
    t = frame.frame_index
    if t != state.step_counter:
        raise ValueError(f"expected frame {state.step_counter}, got {t}")
    frame.check(cfg)

    history = state.layer_caches
    layers = [c.append_block(t, frame.keys[l], frame.values[l]) for l, c in enumerate(history)]
    camera = state.camera_cache.append_block(t, frame.camera_key[None], frame.camera_value[None], slots=[0])
    peak = sum(len(c) for c in layers)

    registry = state.registry
    rho = registered = demoted = None
    if cfg.protect_anchors:
        if registry.initial is None:
            registry = anc.start_registry(t, frame.pose, frame.points)
            layers = [c.protect(t, np.arange(dims.tokens_per_frame), INITIAL_ANCHOR) for c in layers]
            camera = camera.protect(t, [0], INITIAL_ANCHOR)
        else:
            ref = registry.latest
            rho = coverage_ratio(ref.points, ref.pose, frame.pose, cam)
            registry, demoted, did = anc.register_if_needed(registry, t, rho, frame.pose, frame.points, cfg)
            if did:
                registered = registry.historical[-1].anchor_id
            layers, camera = _apply_anchor_events(
                layers, camera, t, registry.historical[-1] if did else None, demoted, dims.num_aux
            )

    budgets: list[int] = []
    scored = []
    counter = collections.Counter()
    if peak > cfg.total_budget:
        splits = [evictable_split(c) for c in layers]
        div = [
            diversity_scores(c.keys[h], counter) if len(h) else np.zeros(0)
            for c, (h, _) in zip(layers, splits)
        ]
        layer_div = [float(d.mean()) if len(d) else 0.0 for d in div]
        floors = [c.num_protected + dims.tokens_per_frame for c in layers]
        try:
            budgets = allocate_budgets(cfg.total_budget, layer_div, floors).tolist()
        except BudgetError as exc:
            raise BudgetError(f"frame {t}: {exc}", deficit=exc.deficit) from None
        for l, (c, (h, n)) in enumerate(zip(layers, splits)):
            if len(c) <= budgets[l]:
                continue
            raw = scorer.score_new(frame, l, history[l], cfg)
            grid = ActivationGrid.from_flat(raw, dims, t)
            grid = smooth(grid, cfg.smoothing_alpha, cfg.gaussian_kernel_size, cfg.gaussian_sigma)
            hist = scorer.score_hist(frame, l, c, h)
            hist = div[l] if hist is None else hist
            hs = hybrid_scores(hist, grid.flat()[c.slots[n]], cfg.hybrid_beta)
            scored.append(hs.scores)
            layers[l] = compress_layer(c, hs, budgets[l])

    b_cam = camera_budget(cfg)
    cam_before = len(camera)
    camera = _compress_camera(camera, b_cam)

    new_state = EngineState(
        layer_caches=tuple(layers),
        camera_cache=camera,
        registry=registry,
        step_counter=t + 1,
        zero_norm_keys=state.zero_norm_keys + counter["zero_norm"],
    )
    resident = new_state.resident_tokens
    metrics = StepMetrics(
        frame_index=t,
        layer_sizes=[len(c) for c in layers],
        layer_budgets=budgets,
        protected_counts=[c.num_protected for c in layers],
        camera_size=len(camera),
        camera_budget=b_cam,
        resident_tokens=resident,
        peak_tokens=peak,
        bytes_resident=(resident + len(camera)) * dims.bytes_per_token(cfg.element_size),
        evicted=peak - resident,
        camera_evicted=cam_before - len(camera),
        rho=rho,
        registered=registered,
        demoted=demoted,
        live_anchors=registry.live_ids,
        survivor_digest=_digest([a for c in layers for a in (c.frames, c.slots)] + [camera.frames]),
        score_digest=_digest(scored),
    )
    metrics.step_ms = (time.perf_counter() - started) * 1e3
    return new_state, metrics


class StreamingEngine:
    """Stateful wrapper that feeds frames through :func:`step` and keeps the metrics log."""

    def __init__(self, cfg: EngineConfig, cam: Intrinsics, scorer: Scorer | None = None):
        self.cfg = cfg
        self.cam = cam
        self.scorer = scorer
        self.state = EngineState.empty(cfg)
        self.metrics_log: list[StepMetrics] = []

    def step(self, frame: FrameInput) -> StepMetrics:
        self.state, m = step(self.state, frame, self.cfg, self.cam, self.scorer)
        self.metrics_log.append(m)
        return m

    def run(self, frames) -> list[StepMetrics]:
        return [self.step(f) for f in frames]

    @property
    def layer_caches(self):
        return self.state.layer_caches

    def full_cache_bytes(self) -> int:
        """Footprint an unbounded cache would have reached by now."""
        return cache_footprint_bytes(self.cfg.dims, self.state.step_counter, self.cfg.element_size)
