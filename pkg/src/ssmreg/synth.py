"""Synthetic rosette pair generator with exact ground-truth fields.

A pair is built from one latent scene: the moving image renders the scene in
modality A, the fixed image renders the scene *pre-warped by the sampled
field* in modality B. The emitted field is therefore exactly the displacement
a registration should recover, and nearest-neighbor warping the moving labels
by it reproduces the fixed labels bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from scipy.ndimage import gaussian_filter

from .data import PairRecord, save_image, save_labels, write_manifest
from .flow import warp
from .roi import MaskParams, gen_roi_mask, mask_filename, save_mask


@dataclass
class SynthParams:
    size: tuple = (64, 64)
    channels: int = 1
    n_leaves: tuple = (3, 6)
    magnitude: float = 4.0      # max displacement norm, pixels
    smoothing: float = 8.0      # field correlation length, pixels
    noise: float = 0.01


def render_scene(params: SynthParams, rng: np.random.Generator):
    """Latent content image plus instance labels for a leaf rosette.

    Veins, midribs and the soil mottle live here, in the shared scene, so
    every modality rendered from it inherits the same spatial structure."""
    H, W = params.size
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    scale = min(H, W) / 64.0

    def smooth_field(sigma):
        f = gaussian_filter(rng.standard_normal((H, W)), sigma * scale)
        peak = np.abs(f).max()
        return f / peak if peak > 0 else f

    content = 0.10 + 0.04 * smooth_field(6.0)
    labels = np.zeros((H, W), dtype=np.int64)
    n = int(rng.integers(params.n_leaves[0], params.n_leaves[1] + 1))
    base = rng.uniform(0, 2 * np.pi)
    cy, cx = H / 2, W / 2
    for i in range(n):
        ang = base + 2 * np.pi * i / n + rng.uniform(-0.25, 0.25)
        length = scale * rng.uniform(11, 20)
        width = scale * rng.uniform(3.0, 6.0)
        off = scale * rng.uniform(2.0, 5.0)
        ly = cy + off * np.sin(ang)
        lx = cx + off * np.cos(ang)
        # axis coordinate u runs root->tip, v across the blade
        u = (yy - ly) * np.sin(ang) + (xx - lx) * np.cos(ang)
        v = -(yy - ly) * np.cos(ang) + (xx - lx) * np.sin(ang)
        half = length / 2
        inside = ((u - half) / half) ** 2 + (v / width) ** 2 <= 1.0
        shade = rng.uniform(0.42, 0.72)
        tip_fade = np.clip(1.0 - 0.35 * u / length, 0.0, 1.0)
        phase = rng.uniform(0, 2 * np.pi)
        freq = rng.uniform(0.35, 0.6) / scale
        veins = 1.0 + 0.12 * np.sin(freq * u + phase)
        rib = 1.0 + 0.10 * np.exp(-((v / (0.25 * width)) ** 2))
        content = np.where(inside, shade * tip_fade * veins * rib, content)
        labels = np.where(inside, i + 1, labels)
    # broad albedo sweep: a coarse, high-amplitude layer every modality
    # shares, wide enough that alignment gradients stay monotone across the
    # whole deformation range
    content = content * (1.0 + 0.12 * smooth_field(12.0))
    return np.clip(content, 0, 1).astype(np.float32), labels


def sample_flow(params: SynthParams, rng: np.random.Generator) -> np.ndarray:
    """Smooth random displacement field, max norm capped at `magnitude`."""
    H, W = params.size
    raw = rng.standard_normal((2, H, W))
    field = gaussian_filter(raw, (0, params.smoothing, params.smoothing))
    norm = np.sqrt(field[0] ** 2 + field[1] ** 2).max()
    target = params.magnitude * rng.uniform(0.6, 1.0)
    if norm > 0 and target > 0:
        field = field * (target / norm)
    else:
        field = np.zeros_like(field)
    return field.astype(np.float32)


def modality_a(content, labels, params: SynthParams,
               rng: np.random.Generator) -> np.ndarray:
    """Moving-side rendering: per-leaf gains, channel tint, sensor noise."""
    out = content.astype(np.float64).copy()
    gains = {lid: rng.uniform(0.95, 1.05) for lid in np.unique(labels[labels > 0])}
    for lid, g in gains.items():
        out = np.where(labels == lid, out * g, out)
    if params.channels == 3:
        ch_gain = np.array([rng.uniform(0.75, 1.0), 1.0, rng.uniform(0.45, 0.75)])
        out = out[..., None] * ch_gain[None, None, :]
    out = out + params.noise * rng.standard_normal(out.shape)
    return np.clip(out, 0, 1).astype(np.float32)


def modality_b(content, params: SynthParams,
               rng: np.random.Generator) -> np.ndarray:
    """Fixed-side rendering: a brightening power remap (vegetation reads
    bright on this side too) under a mild illumination field, plus noise.
    The remap is pinned at the background and mid-leaf levels so boundary
    contrast matches the moving side; with symmetric overlap costs,
    shrinking or growing structures buys nothing over aligning them."""
    H, W = content.shape
    c = content.astype(np.float64)
    lo, mid = 0.10 ** 0.9, 0.50 ** 0.9
    slope = (0.50 - 0.10) / (mid - lo)
    out = 0.10 + slope * (c ** 0.9 - lo)
    shade = gaussian_filter(rng.standard_normal((H, W)), 12.0)
    peak = np.abs(shade).max()
    if peak > 0:
        shade = shade / peak
    out = out * rng.uniform(0.97, 1.03) * (1.0 + 0.05 * shade)
    if params.channels == 3:
        out = np.repeat(out[..., None], 3, axis=2)
        out = out * np.array([1.0, rng.uniform(0.9, 1.0), rng.uniform(0.8, 0.95)])
    out = out + params.noise * rng.standard_normal(out.shape)
    return np.clip(out, 0, 1).astype(np.float32)


def _warp_np(arr: np.ndarray, field: np.ndarray, mode: str) -> np.ndarray:
    t = torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32))
    t = t[None, None] if t.dim() == 2 else t.permute(2, 0, 1)[None]
    phi = torch.from_numpy(field)[None]
    out = warp(t, phi, mode=mode)[0]
    out = out[0] if arr.ndim == 2 else out.permute(1, 2, 0)
    return out.numpy()


def synth_pair(params: SynthParams, rng: np.random.Generator) -> dict:
    """One pair. Keys: moving, fixed, moving_labels, fixed_labels, flow."""
    content, labels = render_scene(params, rng)
    ids = np.unique(labels[labels > 0])
    field = sample_flow(params, rng)
    for _ in range(4):
        warped_labels = np.rint(_warp_np(labels.astype(np.float32), field,
                                         "nearest")).astype(np.int64)
        if np.array_equal(np.unique(warped_labels[warped_labels > 0]), ids):
            break
        field = 0.7 * field       # ids fell off the frame; weaken and retry
    warped_content = _warp_np(content, field, "bilinear")
    return {
        "moving": modality_a(content, labels, params, rng),
        "fixed": modality_b(warped_content, params, rng),
        "moving_labels": labels,
        "fixed_labels": warped_labels,
        "flow": field,
    }


def write_synth_dataset(root, n_pairs: int, params: SynthParams = SynthParams(),
                        seed: int = 0,
                        mask_params: MaskParams | None = None) -> list[PairRecord]:
    """Materialize a synthetic dataset in the standard layout + manifest."""
    from pathlib import Path
    root = Path(root)
    if mask_params is None:
        mask_params = MaskParams(
            min_size=MaskParams.scaled_min_size(*params.size))
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n_pairs):
        pair = synth_pair(params, rng)
        plant = root / f"plant{i:03d}"
        mov = save_image(pair["moving"], plant / "rgb" / "t000.png")
        fix = save_image(pair["fixed"], plant / "ir" / "t001.png")
        lab_m = save_labels(pair["moving_labels"], plant / "labels" / "rgb_t000.png")
        lab_f = save_labels(pair["fixed_labels"], plant / "labels" / "ir_t001.png")
        masks = []
        for img, name in ((pair["moving"], "rgb_t000"), (pair["fixed"], "ir_t001")):
            mask = gen_roi_mask(img, mask_params)
            masks.append(save_mask(mask, plant / "masks" / mask_filename(name)))
        flow_path = plant / "flow" / "t000_t001.npz"
        flow_path.parent.mkdir(parents=True, exist_ok=True)
        np.savez_compressed(flow_path, phi=pair["flow"])
        records.append(PairRecord(
            moving_path=str(mov), fixed_path=str(fix),
            moving_label_path=str(lab_m), fixed_label_path=str(lab_f),
            moving_mask_path=str(masks[0]), fixed_mask_path=str(masks[1]),
            plant_id=plant.name, t_moving="t000", t_fixed="t001",
        ))
    write_manifest(records, root / "pairs.tsv")
    return records
