"""
Anchors along a circular trajectory
===================================

The camera circles a cylinder. Frame 0 is kept in full for the whole stream. Whenever
the current view covers too little of the last anchor's point map, the frame becomes a
new historical anchor. Only a few live anchors are allowed; the oldest is demoted and its
tokens become ordinary eviction candidates again.
"""

from ovkv import EngineConfig, StreamingEngine
from ovkv.sim import TOY_DIMS, ToyModel, TrajectoryScene, frame_stream

frames = 1000
cfg = EngineConfig(dims=TOY_DIMS, total_budget=1600, element_size=4)
scene = TrajectoryScene(kind="orbit", seed=0, num_frames=frames)
engine = StreamingEngine(cfg, scene.intrinsics)

for frame in frame_stream(scene, ToyModel(seed=0), frames):
    m = engine.step(frame)
    if m.registered is not None:
        note = f", demoted anchor {m.demoted}" if m.demoted is not None else ""
        print(f"frame {m.frame_index:4d}: coverage {m.rho:.2f}, registered anchor {m.registered}{note}; "
              f"live {m.live_anchors}")

last = engine.metrics_log[-1]
print(f"resident tokens {last.resident_tokens} of budget {cfg.total_budget}")
print(f"per-layer sizes {last.layer_sizes}, protected {last.protected_counts}")
print(f"unbounded cache would hold {engine.full_cache_bytes() / 1e6:.1f} MB, "
      f"bounded holds {last.bytes_resident / 1e6:.2f} MB")
