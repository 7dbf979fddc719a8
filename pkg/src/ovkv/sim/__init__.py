"""Deterministic test bed: toy transformer, synthetic trajectories, probing baselines."""
from .frames import frame_stream, generate_frame
from .harness import StrategyRun, frame_readouts, oracle_full_cache_run, readout
from .model import TOY_DIMS, ToyModel
from .probe import ProbeKind, ProbeScorer, attention_allocations, probe_score
from .scene import SceneKind, TrajectoryScene

__all__ = [
    "TOY_DIMS", "ToyModel", "TrajectoryScene", "SceneKind", "ProbeKind", "ProbeScorer",
    "attention_allocations", "probe_score", "generate_frame", "frame_stream", "readout",
    "frame_readouts", "oracle_full_cache_run", "StrategyRun",
]
