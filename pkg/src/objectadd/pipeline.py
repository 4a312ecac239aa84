"""End-to-end orchestration: three trajectories, injection schedules,
single-step inpainting, and the real-image variant."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from PIL import Image
from scipy import ndimage

from . import expansion, layout, refocus
from .backend import DenoiserBackend, StepOutput
from .coalesce import coalesce, object_token_index
from .errors import CapabilityError, SegmentationError, StageError
from .types import (
    BinaryMask,
    Box,
    EditSpec,
    EmbeddingMatrix,
    GuidanceConfig,
    Latent,
    default_object_word_offset,
    resample_mask,
)


@dataclass
class EditResult:
    """Everything one edit job produces."""

    base_image: np.ndarray
    edited_image: np.ndarray
    refocused_mask: BinaryMask  # refocus-layer resolution, post morphology
    expanded_mask: BinaryMask  # latent resolution
    traces: Dict
    attention_rows: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict)
    snapshots: Dict[str, np.ndarray] = field(default_factory=dict)

    def output_hashes(self) -> Dict[str, str]:
        def h(a: np.ndarray) -> str:
            return hashlib.sha256(np.ascontiguousarray(a).tobytes()).hexdigest()

        return {
            "base_image": h(self.base_image),
            "edited_image": h(self.edited_image),
            "refocused_mask": h(self.refocused_mask.data),
            "expanded_mask": h(self.expanded_mask.data),
        }


def initial_noise(seed: int, backend: DenoiserBackend, total_steps: int) -> Latent:
    desc = backend.descriptor()
    rng = np.random.default_rng(seed)
    return Latent(desc.noise_scale * rng.standard_normal(desc.latent_shape), total_steps)


def denoise_trajectory(
    start: Latent, embedding: EmbeddingMatrix, backend: DenoiserBackend
) -> List[Latent]:
    """Run the schedule down to t=0; returns latents indexed by timestep."""
    traj = [None] * (start.timestep + 1)
    traj[start.timestep] = start
    current = start
    for t in range(start.timestep, 0, -1):
        try:
            current = backend.denoise_step(current, t, embedding).next_latent
        except Exception as exc:
            raise StageError("denoise", f"backend failed at step {t}: {exc}") from exc
        traj[t - 1] = current
    return traj


def generate_base(
    prompt: str, seed: int, backend: DenoiserBackend, total_steps: int = 50
) -> Tuple[np.ndarray, List[Latent]]:
    """Plain prompt-conditioned generation from seeded noise."""
    embedding = backend.encode_text(prompt)
    traj = denoise_trajectory(initial_noise(seed, backend, total_steps), embedding, backend)
    return backend.decode(traj[0]), traj


def _object_offset(spec: EditSpec) -> int:
    if spec.object_word_offset is not None:
        return spec.object_word_offset
    return default_object_word_offset(spec.object_prompt)


def _refocus_and_swap(
    edited: Latent,
    original_at_t: Latent,
    probe: StepOutput,
    box_mask_full: BinaryMask,
    k: int,
    spec: EditSpec,
    backend: DenoiserBackend,
    traces: Dict,
) -> Tuple[Latent, BinaryMask, BinaryMask]:
    """Attention refocusing + object expansion + latent swap at one step."""
    cfg = spec.config
    desc = backend.descriptor()
    ref_map = next(
        m for m in probe.attention if m.layer_id == desc.refocus_layer
    )
    row = ref_map.row(k)
    labels = refocus.cluster_map(row, cfg.cluster_count, spec.seed)
    mask_gamma = layout.mask_for_layer(box_mask_full, ref_map)
    selected = refocus.select_object_area(labels, row, mask_gamma, cfg.h1_threshold)
    raw = refocus.refocus_mask(selected, labels)
    min_size = cfg.min_component_size
    if min_size is None:
        min_size = refocus.default_min_component_size(raw.shape)
    cleaned = refocus.morph_cleanup(raw, min_size)
    fell_back = False
    if cleaned.is_empty():
        # Refocusing found nothing usable; keep the user's box so the swap
        # still protects the out-of-box area without erasing the object.
        cleaned = resample_mask(box_mask_full, raw.shape, raw.resolution_tag)
        fell_back = True
    latent_res_mask = resample_mask(cleaned, edited.spatial, "latent")
    if latent_res_mask.is_empty():
        # A sparse refocused mask can vanish under majority resampling.
        latent_res_mask = resample_mask(box_mask_full, edited.spatial, "latent")
    expanded, exp_trace = expansion.expand(latent_res_mask, edited, cfg.h2_threshold)
    swapped = expansion.swap_latent(edited, original_at_t, expanded)
    traces["refocus"] = {
        "t": edited.timestep,
        "selected_clusters": sorted(int(g) for g in selected),
        "raw_mask_cells": raw.count(),
        "cleaned_mask_cells": cleaned.count(),
        "box_fallback": fell_back,
    }
    traces["expansion"] = exp_trace.to_record()
    return swapped, cleaned, expanded


def edit_generated(spec: EditSpec, backend: DenoiserBackend) -> EditResult:
    """Full edit of a generated image: original, object and edited
    trajectories from the same seeded noise, with injection schedules and a
    single mid-trajectory inpainting swap."""
    if spec.real_object_image is not None:
        raise ValueError("edit_generated expects no real object image")
    cfg = spec.config.validate()
    desc = backend.descriptor()
    image_hw = desc.image_size
    if not spec.box.fits(image_hw):
        raise StageError("spec", f"box {spec.box} outside image bounds {image_hw}")
    total = cfg.total_steps

    e_p = backend.encode_text(spec.base_prompt)
    e_w = backend.encode_text(spec.object_prompt)
    e_pw = coalesce(e_p, e_w)
    offset = _object_offset(spec)
    k = object_token_index(e_p.actual_tokens, offset, e_pw.window)
    k_object_traj = 1 + offset  # object token row inside the object-only prompt

    box_mask_full = spec.box.to_mask(image_hw)
    latent_hw = desc.latent_shape[:2]
    mask_latent = resample_mask(box_mask_full, latent_hw, "latent")

    noise = initial_noise(spec.seed, backend, total)
    traces: Dict = {"steps": [], "guidance": []}

    original_traj = denoise_trajectory(noise, e_p, backend)

    # Object trajectory with backward guidance at every step.
    object_traj: List[Optional[Latent]] = [None] * (total + 1)
    object_traj[total] = noise
    current = noise
    for t in range(total, 0, -1):
        state = layout.GuidanceState(current)
        state = layout.guidance_update(state, backend, e_w, box_mask_full, k_object_traj, cfg)
        traces["guidance"].append(
            {"t": t, "energies": state.energy_history, "iterations": state.iterations_used}
        )
        current = backend.denoise_step(state.latent, t, e_w).next_latent
        object_traj[t - 1] = current

    inpaint_t = expansion.pick_inpaint_step(cfg, spec.seed)
    result = EditResult(
        base_image=backend.decode(original_traj[0]),
        edited_image=None,
        refocused_mask=None,
        expanded_mask=None,
        traces=traces,
    )

    current = noise
    swaps = 0
    for t in range(total, 0, -1):
        step_trace = {"t": t, "latent_injected": False, "attention_injected": False, "swap": False}
        if layout.should_inject_latent(t, cfg):
            current = layout.inject_latent(current, object_traj[t], mask_latent)
            step_trace["latent_injected"] = True
        if t == inpaint_t:
            probe = backend.denoise_step(current, t, e_pw)
            current, cleaned, expanded = _refocus_and_swap(
                current, original_traj[t], probe, box_mask_full, k, spec, backend, traces
            )
            result.refocused_mask = cleaned
            result.expanded_mask = expanded
            result.snapshots["swap_latent"] = current.data
            result.snapshots["swap_original_latent"] = original_traj[t].data
            step_trace["swap"] = True
            swaps += 1
        editor = None
        if layout.should_inject_attention(t, cfg):
            step_trace["attention_injected"] = True

            def editor(maps, _k=k, _mask=box_mask_full, _cfg=cfg):
                return [
                    layout.enhance_attention(
                        m, layout.mask_for_layer(_mask, m), _k,
                        _cfg.enhance_softmax_masked_only,
                    )
                    for m in maps
                ]

        out = backend.denoise_step(current, t, e_pw, attn_editor=editor)
        for m in out.attention:
            result.attention_rows[(t, m.layer_id)] = m.row(k)
        current = out.next_latent
        traces["steps"].append(step_trace)

    assert swaps == 1, "inpainting swap must happen exactly once"
    result.edited_image = backend.decode(current)
    traces["inpaint_step"] = inpaint_t
    traces["object_token_index"] = k
    return result


def segment_white_background(image: np.ndarray, threshold: float = 0.9) -> BinaryMask:
    """Foreground = pixels darker than the white background in any channel;
    keeps the largest 4-connected component and fills its holes."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) RGB image, got {img.shape}")
    fg = img.min(axis=2) < threshold
    if not fg.any():
        raise SegmentationError("no foreground below the white-background threshold")
    structure = ndimage.generate_binary_structure(2, 1)
    labeled, n = ndimage.label(fg, structure=structure)
    sizes = ndimage.sum_labels(fg, labeled, index=np.arange(1, n + 1))
    keep = 1 + int(np.argmax(sizes))
    fg = labeled == keep
    fg = ndimage.binary_fill_holes(fg, structure=structure)
    return BinaryMask(fg.astype(np.uint8), "full")


def _resize_nearest(mask: np.ndarray, size_hw: Tuple[int, int]) -> np.ndarray:
    im = Image.fromarray((mask * 255).astype(np.uint8))
    im = im.resize((size_hw[1], size_hw[0]), Image.NEAREST)
    return (np.asarray(im) > 127).astype(np.uint8)


def _resize_bilinear(image: np.ndarray, size_hw: Tuple[int, int]) -> np.ndarray:
    im = Image.fromarray((np.clip(image, 0, 1) * 255).astype(np.uint8))
    im = im.resize((size_hw[1], size_hw[0]), Image.BILINEAR)
    return np.asarray(im).astype(np.float64) / 255.0


def place_object_in_box(
    image: np.ndarray,
    seg: BinaryMask,
    box: Box,
    canvas_hw: Tuple[int, int],
) -> Tuple[np.ndarray, BinaryMask]:
    """Crop the segmented object, letterbox it into the box preserving aspect
    ratio, and paste it onto a white canvas. Returns (canvas, precise mask)."""
    ys, xs = np.nonzero(seg.data)
    top, bottom = ys.min(), ys.max() + 1
    left, right = xs.min(), xs.max() + 1
    crop_img = image[top:bottom, left:right]
    crop_mask = seg.data[top:bottom, left:right]
    ch, cw = crop_img.shape[:2]
    scale = min(box.height / ch, box.width / cw)
    nh, nw = max(1, int(round(ch * scale))), max(1, int(round(cw * scale)))
    resized_img = _resize_bilinear(crop_img, (nh, nw))
    resized_mask = _resize_nearest(crop_mask, (nh, nw))
    oy = box.top + (box.height - nh) // 2
    ox = box.left + (box.width - nw) // 2
    canvas = np.ones((*canvas_hw, 3))
    precise = np.zeros(canvas_hw, dtype=np.uint8)
    sel = resized_mask.astype(bool)
    region = canvas[oy : oy + nh, ox : ox + nw]
    region[sel] = resized_img[sel]
    precise[oy : oy + nh, ox : ox + nw] = resized_mask
    if not precise.any():
        raise SegmentationError("object vanished during box placement")
    return canvas, BinaryMask(precise, "full")


def edit_real(spec: EditSpec, backend: DenoiserBackend) -> EditResult:
    """Real-image variant: segment, resize into the box, invert, and inject
    the inverted latent instead of running layout control."""
    if spec.real_object_image is None:
        raise ValueError("edit_real requires a real object image")
    desc = backend.descriptor()
    if not desc.supports_inversion:
        raise CapabilityError("backend does not support inversion")
    cfg = spec.config.validate()
    image_hw = desc.image_size
    if not spec.box.fits(image_hw):
        raise StageError("spec", f"box {spec.box} outside image bounds {image_hw}")
    total = cfg.total_steps
    t_inject = cfg.inversion_inject_step

    e_p = backend.encode_text(spec.base_prompt)
    e_w = backend.encode_text(spec.object_prompt)
    e_pw = coalesce(e_p, e_w)
    k = object_token_index(e_p.actual_tokens, _object_offset(spec), e_pw.window)

    try:
        seg = segment_white_background(spec.real_object_image)
        canvas, mprime_full = place_object_in_box(
            spec.real_object_image, seg, spec.box, image_hw
        )
    except SegmentationError as exc:
        raise StageError("segmentation", str(exc)) from exc

    latent_hw = desc.latent_shape[:2]
    mprime_latent = resample_mask(mprime_full, latent_hw, "latent")
    if mprime_latent.is_empty():
        # A thin object can vanish under majority downsampling; fall back to
        # nearest-cell coverage so the injection target is never empty.
        ys, xs = np.nonzero(mprime_full.data)
        grid = np.zeros(latent_hw, dtype=np.uint8)
        grid[ys * latent_hw[0] // image_hw[0], xs * latent_hw[1] // image_hw[1]] = 1
        mprime_latent = BinaryMask(grid, "latent")

    z0 = backend.encode_image(canvas)
    ztraj = backend.invert(z0, e_w, total)

    noise = initial_noise(spec.seed, backend, total)
    traces: Dict = {"steps": [], "real_image": True}

    original_traj = denoise_trajectory(noise, e_p, backend)
    object_traj = denoise_trajectory(ztraj[total], e_w, backend)

    inpaint_t = expansion.pick_inpaint_step(cfg, spec.seed)
    result = EditResult(
        base_image=backend.decode(original_traj[0]),
        edited_image=None,
        refocused_mask=None,
        expanded_mask=None,
        traces=traces,
    )
    result.snapshots["placed_canvas"] = canvas
    result.snapshots["precise_mask"] = mprime_full.data

    current = noise
    for t in range(total, 0, -1):
        step_trace = {"t": t, "inversion_injected": False, "swap": False}
        if t == t_inject:
            current = layout.inject_latent(current, ztraj[t], mprime_latent)
            step_trace["inversion_injected"] = True
            result.snapshots["inversion_injected_latent"] = current.data
            result.snapshots["inverted_latent"] = ztraj[t].data
            result.snapshots["inversion_mask"] = mprime_latent.data
        if t == inpaint_t:
            probe = backend.denoise_step(current, t, e_pw)
            current, cleaned, expanded = _refocus_and_swap(
                current, original_traj[t], probe, mprime_full, k, spec, backend, traces
            )
            result.refocused_mask = cleaned
            result.expanded_mask = expanded
            step_trace["swap"] = True
        out = backend.denoise_step(current, t, e_pw)
        for m in out.attention:
            result.attention_rows[(t, m.layer_id)] = m.row(k)
        current = out.next_latent
        traces["steps"].append(step_trace)

    result.edited_image = backend.decode(current)
    traces["inpaint_step"] = inpaint_t
    traces["inversion_inject_step"] = t_inject
    traces["object_token_index"] = k
    traces["object_trajectory_from_inversion"] = object_traj is not None
    return result


def run_edit(spec: EditSpec, backend: DenoiserBackend) -> EditResult:
    """Single entry point shared by the CLI and the HTTP service."""
    if spec.real_object_image is not None:
        return edit_real(spec, backend)
    return edit_generated(spec, backend)
