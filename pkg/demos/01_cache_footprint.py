"""
How fast an unbounded cache grows
=================================

Every frame appends M tokens to every layer, each holding one key and one value
vector per head. The footprint is linear in the number of frames.
"""

from ovkv import FULL_SCALE_DIMS, cache_footprint_bytes

dims = FULL_SCALE_DIMS
print(f"layers={dims.num_layers} heads={dims.num_heads} head_dim={dims.head_dim} "
      f"tokens/frame={dims.tokens_per_frame}")

# fp16 storage, two bytes per element
for frames in (1, 10, 100, 500, 1000):
    gb = cache_footprint_bytes(dims, frames, 2) / 1e9
    print(f"{frames:5d} frames -> {gb:8.2f} GB")

# a bounded cache holds a fixed number of tokens no matter how long the stream runs
budget = 200_000
bytes_per_token = dims.bytes_per_token(2)
print(f"budget of {budget} tokens -> {budget * bytes_per_token / 1e9:.2f} GB, forever")
