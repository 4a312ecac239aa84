"""Box-confinement of the added object.

Backward guidance on the object trajectory (energy + gradient descent on the
latent) and latent / attention injection into the edited trajectory.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .errors import (
    DegenerateAttentionError,
    GuidanceDivergedError,
    TrajectoryAlignmentError,
)
from .types import (
    BinaryMask,
    CrossAttentionMap,
    GuidanceConfig,
    Latent,
    downsample_mask,
    layer_tag,
    resample_mask,
)

log = logging.getLogger(__name__)


@dataclass
class GuidanceState:
    """Mutable carrier for one guidance loop on one trajectory."""

    latent: Latent
    energy_history: List[float] = field(default_factory=list)
    iterations_used: int = 0


def energy(attn: CrossAttentionMap, mask_gamma: BinaryMask, k: int) -> float:
    """Squared fraction of the object token's attention mass outside the mask."""
    row = attn.row(k)
    if row.shape != mask_gamma.shape:
        raise TrajectoryAlignmentError(
            f"attention {row.shape} vs mask {mask_gamma.shape}"
        )
    total = float(row.sum())
    if total <= 0:
        raise DegenerateAttentionError(f"token {k} carries zero attention mass")
    inside = float((row * mask_gamma.data).sum())
    return (1.0 - inside / total) ** 2


def mean_energy(
    maps: Sequence[CrossAttentionMap], mask: BinaryMask, k: int,
    layers: Sequence[int] = None,
) -> float:
    """Average per-layer energy (kept in [0, 1] for the history log)."""
    chosen = [m for m in maps if layers is None or m.layer_id in layers]
    if not chosen:
        raise ValueError("no attention layers selected")
    vals = []
    for m in chosen:
        mg = resample_mask(mask, m.spatial, layer_tag(m.layer_id))
        vals.append(energy(m, mg, k))
    return float(np.mean(vals))


def guidance_update(
    state: GuidanceState,
    backend,
    e_w,
    mask: BinaryMask,
    k: int,
    config: GuidanceConfig,
) -> GuidanceState:
    """Descend the latent along the attention-containment energy gradient.

    Iterates up to config.guidance_iters times, stopping early once the mean
    layer energy drops below config.stop_energy.
    """
    latent = state.latent
    t = latent.timestep
    layers = config.guidance_layers
    for _ in range(config.guidance_iters):
        probe = backend.denoise_step(latent, t, e_w)
        e = mean_energy(probe.attention, mask, k, layers)
        state.energy_history.append(e)
        state.iterations_used += 1
        if e < config.stop_energy:
            break
        grad = backend.energy_gradient(latent, t, e_w, mask, k, layers)
        if not np.all(np.isfinite(grad)):
            raise GuidanceDivergedError(
                f"non-finite guidance gradient at t={t}", state.energy_history
            )
        latent = latent.with_data(latent.data - config.guidance_lr * grad)
    state.latent = latent
    return state


def inject_latent(edited: Latent, object_traj: Latent, mask: BinaryMask) -> Latent:
    """Copy the masked region of the object trajectory into the edited latent."""
    if edited.timestep != object_traj.timestep:
        raise TrajectoryAlignmentError(
            f"timesteps differ: {edited.timestep} vs {object_traj.timestep}"
        )
    if edited.shape != object_traj.shape:
        raise TrajectoryAlignmentError(
            f"shapes differ: {edited.shape} vs {object_traj.shape}"
        )
    if mask.shape != edited.spatial:
        raise TrajectoryAlignmentError(
            f"mask {mask.shape} not at latent resolution {edited.spatial}"
        )
    m = mask.data[..., None].astype(np.float64)
    return edited.with_data((1.0 - m) * edited.data + m * object_traj.data)


def enhance_attention(
    attn: CrossAttentionMap,
    mask_gamma: BinaryMask,
    k: int,
    masked_softmax_only: bool = False,
) -> CrossAttentionMap:
    """Refocus the object token's attention row onto the user box.

    The row is rebuilt as a softmax of max(avg(row), 1) * mask; the floor of 1
    guarantees the pre-softmax value inside the box never drops below the
    implicit 0 outside, so the new argmax sits inside a non-empty mask.
    """
    row = attn.row(k)
    if row.shape != mask_gamma.shape:
        raise TrajectoryAlignmentError(
            f"attention {row.shape} vs mask {mask_gamma.shape}"
        )
    if mask_gamma.is_empty():
        log.warning("enhance_attention: empty mask at layer %s, no-op", attn.layer_id)
        return attn
    value = max(float(row.mean()), 1.0)
    pre = value * mask_gamma.data.astype(np.float64)
    if masked_softmax_only:
        new_row = np.zeros_like(pre)
        sel = mask_gamma.data.astype(bool)
        ex = np.exp(pre[sel] - pre[sel].max())
        new_row[sel] = ex / ex.sum()
    else:
        ex = np.exp(pre - pre.max())
        new_row = ex / ex.sum()
    scores = attn.scores.copy()
    scores[k] = new_row
    return CrossAttentionMap(attn.layer_id, attn.timestep, scores)


def should_inject_latent(t: int, config: GuidanceConfig) -> bool:
    """True while the step sits in the earliest latent-injection fraction."""
    return _in_first_fraction(t, config.total_steps, config.latent_inject_frac)


def should_inject_attention(t: int, config: GuidanceConfig) -> bool:
    """True while the step sits in the earliest attention-injection fraction."""
    return _in_first_fraction(t, config.total_steps, config.attn_inject_frac)


def _in_first_fraction(t: int, total: int, frac: float) -> bool:
    if not 0 <= t <= total:
        raise ValueError(f"timestep {t} outside [0, {total}]")
    return (total - t) < frac * total


def mask_for_layer(mask: BinaryMask, attn: CrossAttentionMap) -> BinaryMask:
    """Resample a full-resolution mask to an attention layer's grid."""
    return resample_mask(mask, attn.spatial, layer_tag(attn.layer_id))


__all__ = [
    "GuidanceState",
    "energy",
    "mean_energy",
    "guidance_update",
    "inject_latent",
    "enhance_attention",
    "should_inject_latent",
    "should_inject_attention",
    "mask_for_layer",
    "downsample_mask",
]
