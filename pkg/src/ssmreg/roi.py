"""Unsupervised ROI mask generation.

Pipeline: grayscale -> Otsu threshold -> binarize -> rectangular dilation ->
small-component removal. Masks are plain numpy uint8 arrays with values in
{0, 1}; on disk they are stored as single-channel {0, 255} images named
"<stem>.mask.png" next to (or in a masks/ sibling of) the source image.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import DegenerateImageError


@dataclass
class MaskParams:
    bins: int = 256
    kernel: tuple = (5, 5)
    min_size: int = 16          # calibrated for 64x64; scale quadratically
    bright_foreground: bool = True

    @staticmethod
    def scaled_min_size(h: int, w: int, base: int = 16) -> int:
        return max(1, round(base * (h * w) / (64 * 64)))


def to_gray(img: np.ndarray) -> np.ndarray:
    """Channel mean for H x W x C, pass-through for H x W."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        return img.mean(axis=2)
    return img


def otsu_threshold(img: np.ndarray, bins: int = 256) -> float:
    """Histogram threshold maximizing between-class variance.

    Candidate thresholds are the interior bin boundaries of a histogram over
    [min, max]; ties resolve to the lowest threshold. Constant images carry
    no histogram structure and raise.
    """
    img = np.asarray(img, dtype=np.float64).ravel()
    lo, hi = img.min(), img.max()
    if lo == hi:
        raise DegenerateImageError("constant image has no threshold")
    hist, edges = np.histogram(img, bins=bins, range=(lo, hi))
    n = hist.sum()
    centers = 0.5 * (edges[:-1] + edges[1:])
    w0 = np.cumsum(hist)[:-1]
    w1 = n - w0
    m0 = np.cumsum(hist * centers)[:-1]
    m1 = (hist * centers).sum() - m0
    valid = (w0 > 0) & (w1 > 0)
    var_between = np.zeros(bins - 1)
    var_between[valid] = (w0[valid] * w1[valid]
                          * (m0[valid] / w0[valid] - m1[valid] / w1[valid]) ** 2)
    k = int(np.argmax(var_between))   # first max = lowest threshold on ties
    return float(edges[k + 1])


def binarize(img: np.ndarray, t: float, bright_foreground: bool = True) -> np.ndarray:
    gray = to_gray(img)
    m = gray > t if bright_foreground else gray < t
    return m.astype(np.uint8)


def dilate(m: np.ndarray, kernel=(5, 5)) -> np.ndarray:
    """Window-max with a kh x kw rectangle centered at each pixel; outside = 0.

    Even extents place the extra row/column after the center.
    """
    kh, kw = kernel
    top, left = (kh - 1) // 2, (kw - 1) // 2
    padded = np.zeros((m.shape[0] + kh - 1, m.shape[1] + kw - 1), dtype=m.dtype)
    padded[top:top + m.shape[0], left:left + m.shape[1]] = m
    windows = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw))
    return windows.max(axis=(2, 3)).astype(np.uint8)


def filter_components(m: np.ndarray, min_size: int) -> np.ndarray:
    """Remove 4-connected components with area < min_size."""
    labels, n = ndimage.label(m, structure=[[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    if n == 0:
        return np.zeros_like(m, dtype=np.uint8)
    areas = np.bincount(labels.ravel())
    keep = np.zeros(n + 1, dtype=bool)
    keep[1:] = areas[1:] >= min_size
    return keep[labels].astype(np.uint8)


def gen_roi_mask(img: np.ndarray, params: MaskParams = MaskParams()) -> np.ndarray:
    gray = to_gray(img)
    t = otsu_threshold(gray, params.bins)
    m = binarize(gray, t, params.bright_foreground)
    m = dilate(m, params.kernel)
    return filter_components(m, params.min_size)


def mask_filename(stem: str) -> str:
    return f"{stem}.mask.png"


def save_mask(m: np.ndarray, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray((m.astype(np.uint8) * 255)).save(path)
    return path


def load_mask(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("L"))
    return (arr > 127).astype(np.uint8)
