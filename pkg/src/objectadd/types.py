"""Shared value types and resolution-conversion utilities.

All types are immutable value objects backed by read-only numpy arrays;
every operation here is a pure function.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from .errors import ConfigError, ResolutionError

FULL = "full"


def _frozen(arr: np.ndarray, dtype=None) -> np.ndarray:
    out = np.array(arr, dtype=dtype)
    out.setflags(write=False)
    return out


def layer_tag(layer_id: int) -> str:
    return f"layer:{layer_id}"


@dataclass(frozen=True)
class Latent:
    """Denoiser state at one diffusion timestep: real grid of shape (H, W, C)."""

    data: np.ndarray
    timestep: int

    def __post_init__(self):
        object.__setattr__(self, "data", _frozen(self.data, dtype=np.float64))
        if self.data.ndim != 3:
            raise ValueError(f"latent must be (H, W, C), got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("latent entries must be finite")
        if self.timestep < 0:
            raise ValueError(f"timestep must be >= 0, got {self.timestep}")

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.data.shape

    @property
    def spatial(self) -> Tuple[int, int]:
        return self.data.shape[:2]

    def with_data(self, data: np.ndarray) -> "Latent":
        return replace(self, data=data)

    def with_timestep(self, t: int) -> "Latent":
        return replace(self, timestep=t)


@dataclass(frozen=True)
class CrossAttentionMap:
    """Per-layer spatial attention scores, one (H, W) grid per token row."""

    layer_id: int
    timestep: int
    scores: np.ndarray  # (N_tokens, H, W), non-negative

    def __post_init__(self):
        object.__setattr__(self, "scores", _frozen(self.scores, dtype=np.float64))
        if self.scores.ndim != 3:
            raise ValueError(f"scores must be (N, H, W), got shape {self.scores.shape}")
        if np.any(self.scores < 0):
            raise ValueError("attention scores must be non-negative")

    @property
    def spatial(self) -> Tuple[int, int]:
        return self.scores.shape[1:]

    def row(self, k: int) -> np.ndarray:
        return self.scores[k]


@dataclass(frozen=True)
class BinaryMask:
    """A {0,1} grid at full or layer resolution."""

    data: np.ndarray
    resolution_tag: str = FULL

    def __post_init__(self):
        object.__setattr__(self, "data", _frozen(self.data, dtype=np.uint8))
        if self.data.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {self.data.shape}")
        if not np.all((self.data == 0) | (self.data == 1)):
            raise ValueError("mask entries must be 0 or 1")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape

    def count(self) -> int:
        return int(self.data.sum())

    def is_empty(self) -> bool:
        return not self.data.any()


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Encoder output: (N, D) rows with an actual-token count (no pad/start/end)."""

    data: np.ndarray
    actual_tokens: int

    def __post_init__(self):
        object.__setattr__(self, "data", _frozen(self.data, dtype=np.float64))
        if self.data.ndim != 2:
            raise ValueError(f"embedding must be (N, D), got shape {self.data.shape}")
        n = self.data.shape[0]
        if not 0 <= self.actual_tokens <= n - 2:
            raise ValueError(
                f"actual_tokens {self.actual_tokens} out of range for N={n}"
            )

    @property
    def window(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class GuidanceConfig:
    """All pipeline tunables; defaults follow the reported working settings."""

    total_steps: int = 50
    latent_inject_frac: float = 0.2
    attn_inject_frac: float = 0.3
    inpaint_step: Optional[int] = 15  # None -> seeded random draw in the open window
    cluster_count: int = 6
    h1_threshold: float = 0.35
    h2_threshold: float = 5.0
    guidance_lr: float = 1e-2
    guidance_iters: int = 5
    guidance_layers: Optional[Tuple[int, ...]] = None  # None -> all backend layers
    inversion_inject_step: int = 39
    stop_energy: float = 0.05
    min_component_size: Optional[int] = None  # None -> 1% of layer grid area
    allow_any_inpaint_step: bool = False
    enhance_softmax_masked_only: bool = False
    split_clusters_into_components: bool = False

    def validate(self) -> "GuidanceConfig":
        t = self.total_steps
        if t <= 0:
            raise ConfigError(f"total_steps must be positive, got {t}")
        for name in ("latent_inject_frac", "attn_inject_frac"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ConfigError(f"{name} must be in (0, 1], got {v}")
        if self.cluster_count < 2:
            raise ConfigError(f"cluster_count must be >= 2, got {self.cluster_count}")
        if not 0 < self.h1_threshold < 1:
            raise ConfigError(f"h1_threshold must be in (0, 1), got {self.h1_threshold}")
        if self.h2_threshold < 0:
            raise ConfigError(f"h2_threshold must be >= 0, got {self.h2_threshold}")
        if self.inpaint_step is not None and not self.allow_any_inpaint_step:
            lo, hi = 0.3 * t, 0.5 * t
            # Lower bound is inclusive so the stock (T=50, step=15) setting is legal.
            if not (lo <= self.inpaint_step < hi):
                raise ConfigError(
                    f"inpaint_step {self.inpaint_step} outside [{lo}, {hi}) for "
                    f"total_steps={t}; set allow_any_inpaint_step to override"
                )
            if self.inpaint_step >= (1 - self.attn_inject_frac) * t:
                raise ConfigError(
                    "inpaint_step overlaps the attention-injection window"
                )
        if not 0 <= self.inversion_inject_step <= t:
            raise ConfigError(
                f"inversion_inject_step {self.inversion_inject_step} outside [0, {t}]"
            )
        return self


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle in full-resolution pixels."""

    top: int
    left: int
    height: int
    width: int

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise ValueError(f"box must have positive size, got {self}")
        if self.top < 0 or self.left < 0:
            raise ValueError(f"box origin must be non-negative, got {self}")

    def fits(self, image_hw: Tuple[int, int]) -> bool:
        h, w = image_hw
        return self.top + self.height <= h and self.left + self.width <= w

    def to_mask(self, image_hw: Tuple[int, int]) -> BinaryMask:
        if not self.fits(image_hw):
            raise ValueError(f"box {self} outside image bounds {image_hw}")
        m = np.zeros(image_hw, dtype=np.uint8)
        m[self.top : self.top + self.height, self.left : self.left + self.width] = 1
        return BinaryMask(m, FULL)


@dataclass(frozen=True)
class EditSpec:
    """One user edit request."""

    base_prompt: str
    object_prompt: str
    box: Box
    seed: int
    config: GuidanceConfig = field(default_factory=GuidanceConfig)
    real_object_image: Optional[np.ndarray] = None  # (H, W, 3) floats in [0, 1]
    object_word_offset: Optional[int] = None  # 0-based index into object tokens

    def __post_init__(self):
        if not self.object_prompt.strip():
            raise ValueError("object_prompt must be non-empty")


_ARTICLES = {"a", "an", "the"}


def default_object_word_offset(object_prompt: str) -> int:
    """Pick the object noun inside a word-level prompt: last non-article token."""
    words = object_prompt.split()
    for i in range(len(words) - 1, -1, -1):
        if words[i].lower() not in _ARTICLES:
            return i
    return len(words) - 1


def _block_bounds(n_src: int, n_dst: int, i: int) -> Tuple[int, int]:
    return (i * n_src) // n_dst, ((i + 1) * n_src) // n_dst


def downsample_mask(mask: BinaryMask, target: Tuple[int, int], tag: str = None) -> BinaryMask:
    """Reduce a mask to a coarser grid by per-block majority vote (ties -> 1)."""
    th, tw = target
    sh, sw = mask.shape
    if th > sh or tw > sw:
        raise ResolutionError(f"target {target} larger than source {mask.shape}")
    if (th, tw) == (sh, sw):
        return BinaryMask(mask.data, tag or mask.resolution_tag)
    out = np.zeros((th, tw), dtype=np.uint8)
    for i in range(th):
        r0, r1 = _block_bounds(sh, th, i)
        for j in range(tw):
            c0, c1 = _block_bounds(sw, tw, j)
            block = mask.data[r0:r1, c0:c1]
            ones = int(block.sum())
            out[i, j] = 1 if 2 * ones >= block.size else 0
    return BinaryMask(out, tag or mask.resolution_tag)


def upsample_mask(mask: BinaryMask, target: Tuple[int, int], tag: str = FULL) -> BinaryMask:
    """Enlarge a mask by nearest-neighbor replication."""
    th, tw = target
    sh, sw = mask.shape
    if th < sh or tw < sw:
        raise ResolutionError(f"target {target} smaller than source {mask.shape}")
    rows = (np.arange(th) * sh) // th
    cols = (np.arange(tw) * sw) // tw
    return BinaryMask(mask.data[np.ix_(rows, cols)], tag)


def resample_mask(mask: BinaryMask, target: Tuple[int, int], tag: str = None) -> BinaryMask:
    """Resize a mask up or down to an arbitrary grid with the same conventions."""
    sh, sw = mask.shape
    th, tw = target
    if th >= sh and tw >= sw:
        return upsample_mask(mask, target, tag or mask.resolution_tag)
    if th <= sh and tw <= sw:
        return downsample_mask(mask, target, tag)
    raise ResolutionError(f"mixed-direction resample {mask.shape} -> {target}")
