"""Evaluation metrics: pixel-count-weighted Dice, MSE, NCC, SSIM.

Dice compares instance label maps; each label present in the reference map
contributes its per-label Dice weighted by its share of the reference
foreground. The default convention includes the factor 2 so perfect overlap
scores 1; the "as-printed" convention drops it (scoring 0.5 at perfect
overlap) and exists for comparison against sources using that form.

Image metrics operate on the channel mean of multi-channel inputs. SSIM is
the standard Gaussian-window form (11 x 11, sigma 1.5, K1=0.01, K2=0.03,
unit data range) averaged over fully-interior windows.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import UndefinedMetricError

DICE_CONVENTIONS = ("standard", "as-printed")


def _gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        return img.mean(axis=2)
    return img


def weighted_dice(f: np.ndarray, w: np.ndarray, convention: str = "standard") -> float:
    """Sum_i (|F_i|/sum_j |F_j|) * 2|F_i & W_i| / (|F_i| + |W_i|) over labels i>=1.

    f is the reference map, w the warped prediction; labels absent from w
    contribute zero overlap. Background (0) is excluded.
    """
    if convention not in DICE_CONVENTIONS:
        raise ValueError(f"unknown dice convention {convention!r}")
    f = np.asarray(f)
    w = np.asarray(w)
    if f.shape != w.shape:
        raise ValueError(f"label maps differ in shape: {f.shape} vs {w.shape}")
    labels = np.unique(f)
    labels = labels[labels > 0]
    if labels.size == 0:
        raise UndefinedMetricError("reference label map has no foreground")
    total = int((f > 0).sum())
    num = 2.0 if convention == "standard" else 1.0
    score = 0.0
    for i in labels:
        fi = f == i
        wi = w == i
        nf, nw = int(fi.sum()), int(wi.sum())
        inter = int((fi & wi).sum())
        score += (nf / total) * (num * inter / (nf + nw))
    return float(score)


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a, b = _gray(a), _gray(b)
    return float(np.mean((a - b) ** 2))


def ncc(a: np.ndarray, b: np.ndarray) -> float:
    """Zero-mean normalized cross-correlation over all pixels."""
    a, b = _gray(a).ravel(), _gray(b).ravel()
    a = a - a.mean()
    b = b - b.mean()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise UndefinedMetricError("NCC undefined for constant images")
    return float(np.dot(a, b) / (na * nb))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(a: np.ndarray, b: np.ndarray, window: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0) -> float:
    a, b = _gray(a), _gray(b)
    if a.shape != b.shape:
        raise ValueError("ssim inputs differ in shape")
    if min(a.shape) < window:
        raise ValueError(f"image smaller than the {window}x{window} window")
    win = _gaussian_window(window, sigma)

    def wmean(x):
        views = np.lib.stride_tricks.sliding_window_view(x, (window, window))
        return np.tensordot(views, win, axes=([2, 3], [0, 1]))

    mu_a = wmean(a)
    mu_b = wmean(b)
    va = wmean(a * a) - mu_a ** 2
    vb = wmean(b * b) - mu_b ** 2
    cov = wmean(a * b) - mu_a * mu_b
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (va + vb + c2)
    return float((num / den).mean())


@dataclass
class PairMetrics:
    dice_weighted: float
    mse: float
    ncc: float
    ssim: float


@dataclass
class MetricReport:
    pairs: list = field(default_factory=list)   # list of PairMetrics

    def add(self, pm: PairMetrics):
        self.pairs.append(pm)

    def aggregate(self) -> PairMetrics:
        if not self.pairs:
            raise UndefinedMetricError("empty report has no aggregate")
        return PairMetrics(
            dice_weighted=float(np.mean([p.dice_weighted for p in self.pairs])),
            mse=float(np.mean([p.mse for p in self.pairs])),
            ncc=float(np.mean([p.ncc for p in self.pairs])),
            ssim=float(np.mean([p.ssim for p in self.pairs])),
        )

    def has_nan(self) -> bool:
        vals = [[p.dice_weighted, p.mse, p.ncc, p.ssim] for p in self.pairs]
        return bool(np.isnan(np.asarray(vals)).any())

    def to_tsv(self) -> str:
        lines = ["pair\tdice_weighted\tmse\tncc\tssim"]
        for idx, p in enumerate(self.pairs):
            lines.append(f"{idx}\t{p.dice_weighted:.6f}\t{p.mse:.6f}"
                         f"\t{p.ncc:.6f}\t{p.ssim:.6f}")
        agg = self.aggregate()
        lines.append(f"mean\t{agg.dice_weighted:.6f}\t{agg.mse:.6f}"
                     f"\t{agg.ncc:.6f}\t{agg.ssim:.6f}")
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        agg = self.aggregate()
        return (f"pairs={len(self.pairs)} dice={100 * agg.dice_weighted:.2f} "
                f"mse={agg.mse:.6f} ncc={agg.ncc:.4f} ssim={agg.ssim:.4f}")


def evaluate_pair(record, model, cfg, convention: str = "standard") -> PairMetrics:
    """Register one labeled pair and score it: weighted Dice on the
    nearest-neighbor-warped moving labels vs the fixed labels; MSE/NCC/SSIM
    between the warped moving image and the fixed image."""
    import torch

    from .data import load_image, load_labels
    from .flow import warp
    from .train import _to_tensor, infer_register

    if not record.has_labels:
        raise ValueError(f"pair {record.plant_id} has no labels to score")
    i_x = _to_tensor(load_image(record.moving_path, channels=cfg.channels))
    i_y = _to_tensor(load_image(record.fixed_path, channels=cfg.channels))
    phi, warped = infer_register(i_x, i_y, model)
    lab_m = load_labels(record.moving_label_path)
    lab_f = load_labels(record.fixed_label_path)
    lab_t = torch.from_numpy(lab_m.astype(np.float32))[None, None]
    lab_w = warp(lab_t, phi[None], mode="nearest")[0, 0]
    lab_w = np.rint(lab_w.numpy()).astype(np.int64)
    wm = warped.permute(1, 2, 0).numpy().squeeze()
    fx = i_y.permute(1, 2, 0).numpy().squeeze()
    return PairMetrics(
        dice_weighted=weighted_dice(lab_f, lab_w, convention=convention),
        mse=mse(wm, fx), ncc=ncc(wm, fx), ssim=ssim(wm, fx))


def evaluate_records(records, model, cfg,
                     convention: str = "standard") -> MetricReport:
    report = MetricReport()
    for r in records:
        report.add(evaluate_pair(r, model, cfg, convention=convention))
    return report


def identity_baseline(records, cfg, convention: str = "standard") -> MetricReport:
    """Score the unwarped pairs; the reference the trained model must beat."""
    from .data import load_image, load_labels

    report = MetricReport()
    for r in records:
        if not r.has_labels:
            raise ValueError(f"pair {r.plant_id} has no labels to score")
        mov = load_image(r.moving_path, channels=cfg.channels)
        fix = load_image(r.fixed_path, channels=cfg.channels)
        report.add(PairMetrics(
            dice_weighted=weighted_dice(load_labels(r.fixed_label_path),
                                        load_labels(r.moving_label_path),
                                        convention=convention),
            mse=mse(mov, fix), ncc=ncc(mov, fix), ssim=ssim(mov, fix)))
    return report
