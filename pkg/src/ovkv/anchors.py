"""Anchor bookkeeping: the permanent first-frame anchor and a FIFO of historical anchors."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import EngineConfig
from .geometry import PointMap, Pose

INITIAL_ANCHOR_ID = 0


@dataclass(frozen=True)
class AnchorRecord:
    anchor_id: int
    frame_index: int
    pose: Pose
    points: PointMap
    protected_patch_slots: tuple[int, ...]  # patch indices in [0, N_p), sorted
    registered_at_step: int


@dataclass(frozen=True)
class AnchorRegistry:
    initial: AnchorRecord | None = None
    historical: tuple[AnchorRecord, ...] = ()
    last_registration_frame: int = 0
    next_id: int = 1

    @property
    def initial_frame_protected(self) -> bool:
        return self.initial is not None

    @property
    def latest(self) -> AnchorRecord | None:
        """The anchor the current view is compared against."""
        return self.historical[-1] if self.historical else self.initial

    @property
    def live_ids(self) -> list[int]:
        return [a.anchor_id for a in self.historical]

    def by_id(self, anchor_id: int) -> AnchorRecord:
        for a in self.historical:
            if a.anchor_id == anchor_id:
                return a
        raise KeyError(anchor_id)


def select_protected_patches(confidence, eta: float) -> tuple[int, ...]:
    """Indices of the ceil(eta * N_p) most confident patches, ties to the lower index."""
    c = np.asarray(confidence, dtype=np.float64)
    if c.ndim != 1 or len(c) == 0:
        raise ValueError("confidence must be a non-empty vector")
    if not np.isfinite(c).all():
        raise ValueError("confidence values must be finite")
    if not 0.0 < eta < 1.0:
        raise ValueError(f"eta must lie in (0, 1), got {eta}")
    k = math.ceil(eta * len(c))
    order = np.lexsort((np.arange(len(c)), -c))
    return tuple(sorted(int(i) for i in order[:k]))


def protection_bound(cfg: EngineConfig) -> int:
    """Upper bound on protected tokens per layer: M + K_max * ceil(eta * N_p)."""
    return cfg.dims.tokens_per_frame + cfg.max_anchors * cfg.anchor_patches


def start_registry(frame_index: int, pose: Pose, points: PointMap) -> AnchorRegistry:
    initial = AnchorRecord(INITIAL_ANCHOR_ID, frame_index, pose, points, (), frame_index)
    return AnchorRegistry(initial=initial, last_registration_frame=frame_index)


def register_if_needed(
    registry: AnchorRegistry,
    frame_index: int,
    rho: float,
    frame_pose: Pose,
    frame_points: PointMap,
    cfg: EngineConfig,
) -> tuple[AnchorRegistry, int | None, bool]:
    """Register the current frame as a historical anchor when coverage has dropped.

    Returns the updated registry, the id of an anchor pushed out of the FIFO (if any) and
    whether a registration happened.
    """
    if rho >= cfg.coverage_tau:
        return registry, None, False
    if frame_index - registry.last_registration_frame < cfg.min_anchor_interval:
        return registry, None, False
    if cfg.max_anchors == 0:
        return registry, None, False
    record = AnchorRecord(
        anchor_id=registry.next_id,
        frame_index=frame_index,
        pose=frame_pose,
        points=frame_points,
        protected_patch_slots=select_protected_patches(frame_points.confidence, cfg.anchor_eta),
        registered_at_step=frame_index,
    )
    live = registry.historical + (record,)
    demoted = None
    if len(live) > cfg.max_anchors:
        demoted = live[0].anchor_id
        live = live[1:]
    out = replace(
        registry, historical=live, last_registration_frame=frame_index, next_id=registry.next_id + 1
    )
    return out, demoted, True
