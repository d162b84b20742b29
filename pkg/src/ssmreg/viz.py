"""Figure emission: hue-coded displacement fields and registration panels."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import torch
from matplotlib.colors import hsv_to_rgb


def flow_to_rgb(phi) -> np.ndarray:
    """(2,H,W) displacement -> H x W x 3 float RGB. Hue encodes direction,
    brightness encodes magnitude (scaled to the field's own max)."""
    if isinstance(phi, torch.Tensor):
        phi = phi.detach().cpu().numpy()
    dy, dx = np.asarray(phi, dtype=np.float64)
    mag = np.sqrt(dy ** 2 + dx ** 2)
    peak = mag.max()
    hsv = np.stack([
        (np.arctan2(dy, dx) + np.pi) / (2 * np.pi),
        np.ones_like(mag),
        mag / peak if peak > 0 else np.zeros_like(mag),
    ], axis=-1)
    return hsv_to_rgb(hsv)


def _to_display(img) -> np.ndarray:
    if isinstance(img, torch.Tensor):
        img = img.detach().cpu()
        img = img.permute(1, 2, 0).numpy() if img.dim() == 3 else img.numpy()
    img = np.asarray(img)
    return img.squeeze(-1) if img.ndim == 3 and img.shape[-1] == 1 else img


def save_panel(path, moving, fixed, warped, phi):
    """Side-by-side panel: moving | fixed | warped | field."""
    panels = [(_to_display(moving), "moving"), (_to_display(fixed), "fixed"),
              (_to_display(warped), "warped"), (flow_to_rgb(phi), "field")]
    fig, axes = plt.subplots(1, 4, figsize=(12, 3.2))
    for ax, (img, title) in zip(axes, panels):
        if img.ndim == 2:
            ax.imshow(img, cmap="gray", vmin=0, vmax=1)
        else:
            ax.imshow(np.clip(img, 0, 1))
        ax.set_title(title)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
