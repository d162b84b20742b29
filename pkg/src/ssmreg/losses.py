"""Training losses.

All reductions are means over every element so values are comparable across
resolutions and batch sizes. Guidance targets are detached inside the loss,
making the frozen-teacher contract hold regardless of the caller.
"""

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ShapeError


@dataclass
class LossWeights:
    alpha: float = 100.0   # similarity
    beta: float = 10.0     # field smoothness
    gamma: float = 25.0    # guidance
    delta: float = 10.0    # reconstruction

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma, self.delta) < 0:
            raise ValueError("loss weights must be nonnegative")


def _check_same(a: torch.Tensor, b: torch.Tensor, what: str):
    if a.shape != b.shape:
        raise ShapeError(f"{what}: {tuple(a.shape)} vs {tuple(b.shape)}")


def sim_loss(x_warp: torch.Tensor, gt: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """0.5*(MSE(x_warp, gt) + MSE(mask*x_warp, mask*gt)), mask binary."""
    _check_same(x_warp, gt, "sim_loss images")
    _check_same(mask, gt, "sim_loss mask")
    plain = F.mse_loss(x_warp, gt)
    masked = F.mse_loss(mask * x_warp, mask * gt)
    return 0.5 * (plain + masked)


def smooth_loss(phi: torch.Tensor) -> torch.Tensor:
    """Mean squared forward difference of the field in y and x.

    phi: (B, 2, H, W). Boundary rows/columns contribute zero gradient; the
    mean runs over batch, both displacement channels, and all pixels.
    """
    gy = torch.zeros_like(phi)
    gx = torch.zeros_like(phi)
    gy[:, :, :-1, :] = phi[:, :, 1:, :] - phi[:, :, :-1, :]
    gx[:, :, :, :-1] = phi[:, :, :, 1:] - phi[:, :, :, :-1]
    return (gy.square() + gx.square()).mean()


def guidance_loss(mi_main, mi_target) -> torch.Tensor:
    """MSE(mi_x, mi_x_g) + MSE(mi_y, mi_y_g); targets treated as constants."""
    mx, my = mi_main
    tx, ty = mi_target
    _check_same(mx, tx, "guidance_loss x")
    _check_same(my, ty, "guidance_loss y")
    return F.mse_loss(mx, tx.detach()) + F.mse_loss(my, ty.detach())


def recon_loss(ix_hat, ix, iy_hat, iy) -> torch.Tensor:
    """MSE(ix_hat, ix) + MSE(iy_hat, iy)."""
    _check_same(ix_hat, ix, "recon_loss x")
    _check_same(iy_hat, iy, "recon_loss y")
    return F.mse_loss(ix_hat, ix) + F.mse_loss(iy_hat, iy)


def guidance_recon_loss(ix_hat, ix, iy_hat, iy) -> torch.Tensor:
    """Stage-1 objective: mean-squared reconstruction of both modalities."""
    return recon_loss(ix_hat, ix, iy_hat, iy)


def total_loss(components, w: LossWeights) -> torch.Tensor:
    """Weighted sum alpha*sim + beta*smooth + gamma*guide + delta*recon."""
    sim, smooth, guide, recon = components
    return w.alpha * sim + w.beta * smooth + w.gamma * guide + w.delta * recon
