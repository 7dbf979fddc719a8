"""Token saliency from FFN residual magnitudes, with Gaussian smoothing over the patch grid.

Scoring consumes only the per-token FFN residuals of the current frame. Nothing here takes
attention weights, queries or keys, so it works unchanged behind fused attention kernels.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import ModelDims


@dataclass(frozen=True)
class ActivationGrid:
    patch_scores: np.ndarray  # (H_p, W_p)
    aux_scores: np.ndarray  # (num_aux,)
    frame_index: int = 0

    def flat(self) -> np.ndarray:
        """Scores in slot order: aux tokens first, then patches row-major."""
        return np.concatenate([self.aux_scores, self.patch_scores.ravel()])

    @classmethod
    def from_flat(cls, scores, dims: ModelDims, frame_index: int = 0) -> ActivationGrid:
        scores = np.asarray(scores, dtype=np.float64)
        if scores.shape != (dims.tokens_per_frame,):
            raise ValueError(f"expected {dims.tokens_per_frame} scores, got shape {scores.shape}")
        return cls(
            patch_scores=scores[dims.num_aux:].reshape(dims.patch_rows, dims.patch_cols),
            aux_scores=scores[: dims.num_aux].copy(),
            frame_index=frame_index,
        )


def activation_score(residuals, dims: ModelDims, frame_index: int = 0) -> ActivationGrid:
    """L2 norm of each token's FFN residual, laid out on the patch grid.

    Parameters
    ----------
    residuals : array_like, shape (M, width)
        One residual vector per token slot of a single layer.
    dims : ModelDims
        Supplies the aux/patch split and grid shape.
    """
    residuals = np.asarray(residuals, dtype=np.float64)
    if residuals.ndim != 2 or residuals.shape[0] != dims.tokens_per_frame:
        raise ValueError(f"expected {dims.tokens_per_frame} residual rows, got shape {residuals.shape}")
    finite = np.isfinite(residuals).all(axis=1)
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        raise ValueError(f"non-finite residual at slot {bad}")
    norms = np.sqrt(np.einsum("ij,ij->i", residuals, residuals))
    return ActivationGrid.from_flat(norms, dims, frame_index)


def gaussian_kernel_1d(size: int, sigma: float) -> np.ndarray:
    if size <= 0 or size % 2 == 0:
        raise ValueError(f"kernel size must be a positive odd integer, got {size}")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    x = np.arange(size, dtype=np.float64) - size // 2
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_kernel_2d(size: int, sigma: float) -> np.ndarray:
    k = gaussian_kernel_1d(size, sigma)
    return np.outer(k, k)


def _reflect_pad(n: int, radius: int) -> np.ndarray:
    """Index map for reflect padding (mirror without repeating the edge), valid for any radius."""
    idx = np.arange(-radius, n + radius)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


def _convolve_axis(s: np.ndarray, k: np.ndarray, axis: int) -> np.ndarray:
    r = len(k) // 2
    n = s.shape[axis]
    padded = np.take(s, _reflect_pad(n, r), axis=axis)
    out = np.zeros_like(s)
    for j, w in enumerate(k):
        out += w * np.take(padded, np.arange(j, j + n), axis=axis)
    return out


def gaussian_blur(s: np.ndarray, size: int, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with reflect padding."""
    k = gaussian_kernel_1d(size, sigma)
    return _convolve_axis(_convolve_axis(np.asarray(s, dtype=np.float64), k, 0), k, 1)


def smooth(grid: ActivationGrid, alpha: float, kernel_size: int = 5, sigma: float = 1.0) -> ActivationGrid:
    """Blend the patch map with its blurred copy: alpha*(G*S) + (1-alpha)*S.

    Aux scores are passed through untouched.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    blurred = gaussian_blur(grid.patch_scores, kernel_size, sigma)
    mixed = alpha * blurred + (1.0 - alpha) * grid.patch_scores
    return replace(grid, patch_scores=mixed)
