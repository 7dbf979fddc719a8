"""Turn scene frames into engine inputs by running the toy model."""
from __future__ import annotations

import numpy as np

from ..engine import FrameInput
from .model import ToyModel
from .scene import TrajectoryScene


def generate_frame(scene: TrajectoryScene, t: int, model: ToyModel) -> FrameInput:
    """Forward frame ``t`` through the model and package its per-layer captures.

    Token blocks are stored as float32 so a frame survives a trace round trip unchanged.
    """
    pose, points, features = scene.frame(t)
    trace = model.forward(features)
    f32 = lambda a: np.ascontiguousarray(a, dtype=np.float32)
    return FrameInput(
        frame_index=t,
        keys=f32(trace.keys),
        values=f32(trace.values),
        residuals=f32(trace.residuals),
        pose=pose,
        points=points,
        queries=f32(trace.queries),
    )


def frame_stream(scene: TrajectoryScene, model: ToyModel, num_frames: int | None = None):
    n = scene.num_frames if num_frames is None else num_frames
    for t in range(n):
        yield generate_frame(scene, t, model)
