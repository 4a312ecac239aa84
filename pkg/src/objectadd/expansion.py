"""Object expansion: region growing in latent space to capture object edges.

Seeds sit on the mask boundary; a 0-neighbor is flipped into the mask when it
is close (channelwise Euclidean) both to the seed and to the mean of the
seed's 3x3 neighborhood. Flips within a round are evaluated against the
round-start mask and applied simultaneously, so iteration order is moot.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .errors import ConfigError, ContractError, TrajectoryAlignmentError
from .types import BinaryMask, GuidanceConfig, Latent

_NEIGHBORS = [(di, dj) for di in (-1, 0, 1) for dj in (-1, 0, 1) if (di, dj) != (0, 0)]


@dataclass(frozen=True)
class ExpansionTrace:
    """Bookkeeping of one expansion run."""

    rounds: int
    flipped_per_round: Tuple[int, ...]
    final_mask: BinaryMask

    def to_record(self) -> dict:
        return {
            "rounds": self.rounds,
            "flipped_per_round": list(self.flipped_per_round),
            "final_mask_cells": self.final_mask.count(),
        }


def find_seeds(mask: BinaryMask) -> List[Tuple[int, int]]:
    """Foreground cells with at least one 0 in their 8-neighborhood.

    Out-of-grid neighbors count as 0, so a full mask still has a border ring
    of seeds.
    """
    h, w = mask.shape
    data = mask.data
    seeds = []
    for i in range(h):
        for j in range(w):
            if data[i, j] != 1:
                continue
            for di, dj in _NEIGHBORS:
                x, y = i + di, j + dj
                if not (0 <= x < h and 0 <= y < w) or data[x, y] == 0:
                    seeds.append((i, j))
                    break
    return seeds


def _neighborhood_mean(latent_data: np.ndarray, i: int, j: int) -> np.ndarray:
    h, w, _ = latent_data.shape
    window = latent_data[max(0, i - 1) : i + 2, max(0, j - 1) : j + 2]
    return window.reshape(-1, latent_data.shape[2]).mean(axis=0)


def neighbor_distance(
    latent: Latent, seed: Tuple[int, int], neighbor: Tuple[int, int]
) -> float:
    """Seed-anchored edge distance: mean of the neighbor's Euclidean distance
    to the seed vector and to the seed's 3x3 neighborhood mean."""
    i, j = seed
    x, y = neighbor
    if max(abs(x - i), abs(y - j)) != 1:
        raise ContractError(f"{neighbor} is not 8-adjacent to seed {seed}")
    data = latent.data
    d_seed = float(np.linalg.norm(data[x, y] - data[i, j]))
    d_mean = float(np.linalg.norm(data[x, y] - _neighborhood_mean(data, i, j)))
    return 0.5 * (d_seed + d_mean)


def expand(
    mask: BinaryMask, latent: Latent, h2: float
) -> Tuple[BinaryMask, ExpansionTrace]:
    """Grow the mask outward round by round until no cell flips.

    Round 1 seeds come from the boundary of the input mask; every later round
    seeds only from the cells flipped in the previous round. Growth is
    monotone and terminates in at most H*W rounds.
    """
    if mask.shape != latent.spatial:
        raise TrajectoryAlignmentError(
            f"mask {mask.shape} vs latent {latent.spatial}"
        )
    h, w = mask.shape
    data = mask.data.copy()
    seeds = find_seeds(mask)
    flipped_per_round: List[int] = []
    while True:
        flips = set()
        for i, j in seeds:
            for di, dj in _NEIGHBORS:
                x, y = i + di, j + dj
                if not (0 <= x < h and 0 <= y < w) or data[x, y] != 0:
                    continue
                if neighbor_distance(latent, (i, j), (x, y)) < h2:
                    flips.add((x, y))
        flipped_per_round.append(len(flips))
        if not flips:
            break
        for x, y in flips:
            data[x, y] = 1
        seeds = sorted(flips)
    final = BinaryMask(data, mask.resolution_tag)
    trace = ExpansionTrace(len(flipped_per_round), tuple(flipped_per_round), final)
    return final, trace


def swap_latent(edited: Latent, original: Latent, mask: BinaryMask) -> Latent:
    """Keep the masked (object) region of the edited latent, restore the rest
    from the original trajectory."""
    if edited.timestep != original.timestep:
        raise TrajectoryAlignmentError(
            f"timesteps differ: {edited.timestep} vs {original.timestep}"
        )
    if edited.shape != original.shape:
        raise TrajectoryAlignmentError(
            f"shapes differ: {edited.shape} vs {original.shape}"
        )
    if mask.shape != edited.spatial:
        raise TrajectoryAlignmentError(
            f"mask {mask.shape} not at latent resolution {edited.spatial}"
        )
    m = mask.data[..., None].astype(np.float64)
    return edited.with_data((1.0 - m) * original.data + m * edited.data)


def pick_inpaint_step(config: GuidanceConfig, rng_seed: int) -> int:
    """The fixed inpainting step when configured, otherwise a seeded draw from
    the open middle window (0.3*T, 0.5*T)."""
    if config.inpaint_step is not None:
        return config.inpaint_step
    t = config.total_steps
    lo = int(np.floor(0.3 * t)) + 1
    hi = int(np.ceil(0.5 * t)) - 1  # inclusive
    if hi < lo:
        raise ConfigError(f"empty inpainting window for total_steps={t}")
    rng = np.random.default_rng(rng_seed)
    return int(rng.integers(lo, hi + 1))
