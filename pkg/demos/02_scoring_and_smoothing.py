"""
Rating tokens by their FFN residual
===================================

Each token gets a score equal to the L2 norm of what the feed-forward sub-layer added
to its residual stream. The patch scores are then blended with a Gaussian-blurred copy
so isolated spikes spread to their neighbours.
"""

import numpy as np

from ovkv.rating import activation_score, smooth
from ovkv.sim import TOY_DIMS, ToyModel, TrajectoryScene, generate_frame

scene = TrajectoryScene(kind="orbit", seed=0, num_frames=10)
model = ToyModel(seed=0)
frame = generate_frame(scene, 0, model)

# residuals have shape (layers, tokens, width); score the last layer
grid = activation_score(frame.residuals[-1], TOY_DIMS, frame.frame_index)
print("aux token scores:", np.round(grid.aux_scores, 3))
print("patch score grid:")
print(np.round(grid.patch_scores, 2))

for alpha in (0.0, 0.5, 1.0):
    s = smooth(grid, alpha).patch_scores
    print(f"alpha={alpha}: std {s.std():.4f}, mean {s.mean():.4f}")

# aux tokens are never smoothed
assert np.array_equal(smooth(grid, 0.9).aux_scores, grid.aux_scores)
