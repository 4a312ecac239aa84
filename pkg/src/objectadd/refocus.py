"""Attention refocusing: turn the coarse user box into an object mask.

Clusters the object token's attention map by response level, keeps the
clusters that line up with the box, and cleans the resulting mask with
binary morphology.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Set, Tuple

import numpy as np
from scipy import ndimage

from .errors import ConfigError
from .types import BinaryMask

log = logging.getLogger(__name__)

_KMEANS_MAX_ITERS = 50


@dataclass(frozen=True)
class ClusterLabels:
    """Per-cell cluster assignment; labels partition the grid."""

    labels: np.ndarray  # (H, W) ints in [0, K)
    K: int

    def __post_init__(self):
        lab = np.array(self.labels, dtype=np.int64)
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)
        if lab.ndim != 2:
            raise ValueError(f"labels must be 2-D, got shape {lab.shape}")
        if lab.min() < 0 or lab.max() >= self.K:
            raise ValueError(f"labels outside [0, {self.K})")

    def member_mask(self, g: int) -> np.ndarray:
        return self.labels == g


def cluster_map(attn_row: np.ndarray, K: int, rng_seed: int) -> ClusterLabels:
    """Partition an attention map into K intensity clusters.

    Plain 1-D k-means on per-cell intensity with seeded farthest-point
    initialization; deterministic for a fixed seed.
    """
    grid = np.asarray(attn_row, dtype=np.float64)
    if K < 2:
        raise ConfigError(f"cluster count must be >= 2, got {K}")
    if K > grid.size:
        raise ConfigError(f"cluster count {K} exceeds cell count {grid.size}")
    values = grid.ravel()

    rng = np.random.default_rng(rng_seed)
    centers = [values[rng.integers(values.size)]]
    for _ in range(K - 1):
        dists = np.min(np.abs(values[:, None] - np.array(centers)[None, :]), axis=1)
        centers.append(values[int(np.argmax(dists))])
    centers = np.array(centers)

    labels = np.zeros(values.size, dtype=np.int64)
    for _ in range(_KMEANS_MAX_ITERS):
        labels = np.argmin(np.abs(values[:, None] - centers[None, :]), axis=1)
        new_centers = centers.copy()
        for g in range(K):
            members = values[labels == g]
            if members.size:
                new_centers[g] = members.mean()
        if np.allclose(new_centers, centers):
            break
        centers = new_centers
    return ClusterLabels(labels.reshape(grid.shape), K)


def select_object_area(
    labels: ClusterLabels,
    attn_row: np.ndarray,
    mask_gamma: BinaryMask,
    h1: float,
) -> Set[int]:
    """Pick the clusters that form the object-centralized area.

    Always includes the cluster holding the most in-box attention mass, plus
    every cluster whose in-box cell fraction exceeds h1.
    """
    grid = np.asarray(attn_row, dtype=np.float64)
    if grid.shape != labels.labels.shape or grid.shape != mask_gamma.shape:
        raise ValueError(
            f"shape mismatch: attn {grid.shape}, labels {labels.labels.shape}, "
            f"mask {mask_gamma.shape}"
        )
    if mask_gamma.is_empty():
        log.warning("select_object_area: empty mask, nothing selected")
        return set()
    inbox = mask_gamma.data.astype(bool)
    selected: Set[int] = set()
    masses = np.zeros(labels.K)
    for g in range(labels.K):
        members = labels.member_mask(g)
        size = int(members.sum())
        if size == 0:
            continue
        masses[g] = float(grid[members & inbox].sum())
        if (members & inbox).sum() / size > h1:
            selected.add(g)
    selected.add(int(np.argmax(masses)))
    return selected


def refocus_mask(selected: Set[int], labels: ClusterLabels) -> BinaryMask:
    """Indicator mask of the selected clusters."""
    if not selected <= set(range(labels.K)):
        raise ValueError(f"selection {selected} outside label range [0, {labels.K})")
    out = np.zeros(labels.labels.shape, dtype=np.uint8)
    for g in selected:
        out[labels.member_mask(g)] = 1
    return BinaryMask(out, "layer:refocus")


def morph_cleanup(mask: BinaryMask, min_component_size: int) -> BinaryMask:
    """Erase small 4-connected foreground specks, then fill interior holes."""
    data = mask.data.astype(bool)
    structure = ndimage.generate_binary_structure(2, 1)  # 4-connectivity
    labeled, n = ndimage.label(data, structure=structure)
    if n:
        sizes = ndimage.sum_labels(data, labeled, index=np.arange(1, n + 1))
        for idx, size in enumerate(sizes, start=1):
            if size < min_component_size:
                data[labeled == idx] = False
    data = ndimage.binary_fill_holes(data, structure=structure)
    return BinaryMask(data.astype(np.uint8), mask.resolution_tag)


def default_min_component_size(grid_shape: Tuple[int, int]) -> int:
    """1% of the grid area, at least one cell."""
    return max(1, (grid_shape[0] * grid_shape[1]) // 100)
