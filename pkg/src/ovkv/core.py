"""Domain types and the layered token store shared by the rest of the package."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

# protection codes stored per entry; positive values are historical anchor ids
UNPROTECTED = 0
INITIAL_ANCHOR = -1

_INT64_MAX = np.iinfo(np.int64).max


class TokenKind(enum.Enum):
    CAMERA = "camera"
    REGISTER = "register"
    PATCH = "patch"


@dataclass(frozen=True)
class ModelDims:
    """Token layout and attention shape of the backbone.

    Slot order inside a frame is (camera, registers..., patches row-major).
    """

    num_layers: int
    num_heads: int
    head_dim: int
    patch_rows: int
    patch_cols: int
    num_aux: int = 5

    def __post_init__(self):
        for name in ("num_layers", "num_heads", "head_dim", "patch_rows", "patch_cols"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value <= 0:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.num_aux < 0:
            raise ValueError(f"num_aux must be non-negative, got {self.num_aux!r}")

    @property
    def num_patches(self) -> int:
        return self.patch_rows * self.patch_cols

    @property
    def tokens_per_frame(self) -> int:
        return self.num_aux + self.num_patches

    @property
    def kv_dim(self) -> int:
        return self.num_heads * self.head_dim

    def bytes_per_token(self, element_size: int = 2) -> int:
        return 2 * self.kv_dim * element_size

    def slot_kind(self, slot: int) -> tuple[TokenKind, tuple[int, int] | None]:
        if not 0 <= slot < self.tokens_per_frame:
            raise ValueError(f"slot {slot} outside [0, {self.tokens_per_frame})")
        if slot == 0 and self.num_aux > 0:
            return TokenKind.CAMERA, None
        if slot < self.num_aux:
            return TokenKind.REGISTER, None
        return TokenKind.PATCH, divmod(slot - self.num_aux, self.patch_cols)


# 518x392 input with 14px patches, one camera and four register tokens
FULL_SCALE_DIMS = ModelDims(num_layers=24, num_heads=16, head_dim=64, patch_rows=37, patch_cols=28, num_aux=5)


@dataclass(frozen=True)
class TokenEntry:
    frame_index: int
    slot_index: int
    key: np.ndarray
    value: np.ndarray
    protection: int = UNPROTECTED

    def __post_init__(self):
        if self.protection == INITIAL_ANCHOR and self.frame_index != 0:
            raise ValueError("only frame 0 tokens can carry the initial-anchor mark")

    @property
    def is_protected(self) -> bool:
        return self.protection != UNPROTECTED


@dataclass
class EngineConfig:
    """Tunables of the cache engine. Defaults follow the reference operating point."""

    dims: ModelDims = FULL_SCALE_DIMS
    total_budget: int = 200_000
    smoothing_alpha: float = 0.5
    hybrid_beta: float = 0.5
    coverage_tau: float = 0.2
    anchor_eta: float = 0.05
    max_anchors: int = 3
    min_anchor_interval: int = 100
    gaussian_kernel_size: int = 5
    gaussian_sigma: float = 1.0
    element_size: int = 2
    protect_anchors: bool = True

    def __post_init__(self):
        self.validate()

    @property
    def anchor_patches(self) -> int:
        """Protected patch tokens per historical anchor."""
        return math.ceil(self.anchor_eta * self.dims.num_patches)

    def validate(self):
        d = self.dims
        checks = [
            ("total_budget", self.total_budget > 0),
            ("smoothing_alpha", 0.0 <= self.smoothing_alpha <= 1.0),
            ("hybrid_beta", 0.0 <= self.hybrid_beta <= 1.0),
            ("coverage_tau", 0.0 < self.coverage_tau < 1.0),
            ("anchor_eta", 0.0 < self.anchor_eta < 1.0),
            ("max_anchors", self.max_anchors >= 0),
            ("min_anchor_interval", self.min_anchor_interval > 0),
            ("gaussian_kernel_size", self.gaussian_kernel_size > 0 and self.gaussian_kernel_size % 2 == 1),
            ("gaussian_sigma", self.gaussian_sigma > 0),
            ("element_size", self.element_size > 0),
        ]
        for name, ok in checks:
            if not ok:
                raise ValueError(f"invalid {name}: {getattr(self, name)!r}")
        overhead = (self.anchor_patches + d.num_aux) * self.max_anchors
        minimum = d.num_layers * (d.tokens_per_frame + overhead)
        if self.total_budget < minimum:
            raise ValueError(
                f"invalid total_budget: {self.total_budget} < {minimum}, deficit "
                f"{minimum - self.total_budget} (needs room for the protected set plus one frame per layer)"
            )


def _checked_product(*factors: int) -> int:
    result = 1
    for f in factors:
        f = int(f)
        if f < 0:
            raise ValueError(f"negative factor {f}")
        result *= f
        if result > _INT64_MAX:
            raise OverflowError("cache footprint exceeds the 64-bit integer range")
    return result


def cache_footprint_bytes(dims: ModelDims, num_frames: int, element_size: int = 2) -> int:
    """Bytes held by an unbounded cache after ``num_frames`` frames: 2*L*T*M*N_h*d*elem."""
    if element_size <= 0:
        raise ValueError("element_size must be positive")
    return _checked_product(
        2, dims.num_layers, num_frames, dims.tokens_per_frame, dims.num_heads, dims.head_dim, element_size
    )


@dataclass
class LayerCache:
    """Ordered key/value store for one layer.

    Entries are kept as parallel arrays in arrival order. Every operation returns a new
    cache; arrays are never mutated in place once a cache is built.
    """

    layer_index: int
    kv_dim: int
    frame_size: int
    keys: np.ndarray = None
    values: np.ndarray = None
    frames: np.ndarray = None
    slots: np.ndarray = None
    protection: np.ndarray = None
    new_start: int = field(default=0)

    def __post_init__(self):
        if self.keys is None:
            self.keys = np.zeros((0, self.kv_dim), dtype=np.float32)
            self.values = np.zeros((0, self.kv_dim), dtype=np.float32)
            self.frames = np.zeros(0, dtype=np.int64)
            self.slots = np.zeros(0, dtype=np.int64)
            self.protection = np.zeros(0, dtype=np.int64)

    def __len__(self):
        return len(self.frames)

    @property
    def last_frame(self) -> int:
        return int(self.frames[-1]) if len(self.frames) else -1

    @property
    def protected_mask(self) -> np.ndarray:
        return self.protection != UNPROTECTED

    @property
    def num_protected(self) -> int:
        return int(np.count_nonzero(self.protection))

    @property
    def new_mask(self) -> np.ndarray:
        """Entries belonging to the most recently appended frame (U_new before protection)."""
        mask = np.zeros(len(self), dtype=bool)
        mask[self.new_start:] = True
        return mask

    @property
    def entries(self) -> list[TokenEntry]:
        return [
            TokenEntry(int(f), int(s), self.keys[i], self.values[i], int(p))
            for i, (f, s, p) in enumerate(zip(self.frames, self.slots, self.protection))
        ]

    def token_ids(self) -> list[tuple[int, int]]:
        return list(zip(self.frames.tolist(), self.slots.tolist()))

    def _replace(self, **changes) -> LayerCache:
        fields = dict(
            layer_index=self.layer_index,
            kv_dim=self.kv_dim,
            frame_size=self.frame_size,
            keys=self.keys,
            values=self.values,
            frames=self.frames,
            slots=self.slots,
            protection=self.protection,
            new_start=self.new_start,
        )
        fields.update(changes)
        return LayerCache(**fields)

    def append_block(self, frame_index: int, keys, values, slots=None) -> LayerCache:
        keys = np.asarray(keys)
        values = np.asarray(values)
        n = self.frame_size
        if slots is None:
            slots = np.arange(n, dtype=np.int64)
        slots = np.asarray(slots, dtype=np.int64)
        if keys.shape != (n, self.kv_dim) or values.shape != (n, self.kv_dim) or slots.shape != (n,):
            raise ValueError(
                f"frame block must hold {n} tokens of width {self.kv_dim}, got keys {keys.shape}"
            )
        if frame_index <= self.last_frame:
            raise ValueError(f"frame {frame_index} does not follow cached frame {self.last_frame}")
        return self._replace(
            keys=np.concatenate([self.keys, keys.astype(self.keys.dtype, copy=False)]),
            values=np.concatenate([self.values, values.astype(self.values.dtype, copy=False)]),
            frames=np.concatenate([self.frames, np.full(n, frame_index, dtype=np.int64)]),
            slots=np.concatenate([self.slots, slots]),
            protection=np.concatenate([self.protection, np.zeros(n, dtype=np.int64)]),
            new_start=len(self),
        )

    def select(self, mask: np.ndarray) -> LayerCache:
        """Keep the entries where ``mask`` is true, preserving arrival order."""
        mask = np.asarray(mask, dtype=bool)
        new_start = int(np.count_nonzero(mask[: self.new_start]))
        return self._replace(
            keys=self.keys[mask],
            values=self.values[mask],
            frames=self.frames[mask],
            slots=self.slots[mask],
            protection=self.protection[mask],
            new_start=new_start,
        )

    def with_protection(self, protection: np.ndarray) -> LayerCache:
        return self._replace(protection=np.asarray(protection, dtype=np.int64))

    def protect(self, frame_index: int, slots, code: int) -> LayerCache:
        target = (self.frames == frame_index) & np.isin(self.slots, np.asarray(slots))
        protection = self.protection.copy()
        protection[target] = code
        return self.with_protection(protection)

    def release(self, code: int) -> LayerCache:
        protection = self.protection.copy()
        protection[protection == code] = UNPROTECTED
        return self.with_protection(protection)


def append_frame(cache: LayerCache, tokens: Sequence[TokenEntry]) -> LayerCache:
    """Append one frame of entries. All tokens must share a frame index newer than the cache."""
    if len(tokens) != cache.frame_size:
        raise ValueError(f"expected {cache.frame_size} tokens, got {len(tokens)}")
    frame_ids = {t.frame_index for t in tokens}
    if len(frame_ids) != 1:
        raise ValueError(f"tokens span several frames: {sorted(frame_ids)}")
    ordered = sorted(tokens, key=lambda t: t.slot_index)
    out = cache.append_block(
        frame_ids.pop(),
        np.stack([t.key for t in ordered]),
        np.stack([t.value for t in ordered]),
        slots=[t.slot_index for t in ordered],
    )
    protection = out.protection.copy()
    protection[out.new_start:] = [t.protection for t in ordered]
    return out.with_protection(protection)
