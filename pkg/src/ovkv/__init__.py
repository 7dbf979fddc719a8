"""Bounded KV-cache management for streaming causal-attention geometry models."""
from .anchors import AnchorRecord, AnchorRegistry, protection_bound, register_if_needed, select_protected_patches
from .compression import (
    BudgetError,
    HybridScores,
    allocate_budgets,
    compress_layer,
    diversity_scores,
    hybrid_scores,
)
from .core import (
    INITIAL_ANCHOR,
    FULL_SCALE_DIMS,
    UNPROTECTED,
    EngineConfig,
    LayerCache,
    ModelDims,
    TokenEntry,
    TokenKind,
    append_frame,
    cache_footprint_bytes,
)
from .engine import EngineState, FrameInput, StepMetrics, StreamingEngine, camera_budget, step
from .geometry import Intrinsics, PointMap, Pose, compose_relative, coverage_ratio
from .rating import ActivationGrid, activation_score, smooth

__version__ = "0.1.0"
