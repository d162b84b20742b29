"""Learned convolutional sparse coding blocks.

One coding block = one unrolled ISTA iteration against a learned
convolutional dictionary,

    z+ = soft_threshold(z + encode(x - decode(z)), theta)

followed by an optional bidirectional selective-scan pass over the
raster-flattened code. A stack of such blocks (with an initial convolution +
shrinkage producing z0) forms the encoder shared by the appearance and
content extractors.

All dictionary convolutions are bias-free so an all-zero input yields an
all-zero code; thresholds are stored through a softplus reparameterization to
keep them nonnegative under gradient training.
"""

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError
from .ssm import BiMamba, raster_flatten, raster_unflatten

_THETA_INIT = 1e-2


def _inv_softplus(x: float) -> float:
    t = torch.tensor(float(x))
    return (t + torch.log(-torch.expm1(-t))).item()


def soft_threshold(x: torch.Tensor, theta) -> torch.Tensor:
    """sign(x) * max(|x| - theta, 0), theta broadcast per channel.

    theta may be a scalar or a 1-d tensor matching the channel dimension
    (dim 1 of a 4-d map, the last dim of a 3-d sequence).
    """
    if not torch.is_tensor(theta):
        theta = x.new_tensor(theta)
    if torch.any(theta < 0):
        raise ValueError("soft_threshold: theta must be nonnegative")
    if theta.dim() == 1:
        if x.dim() == 4:
            theta = theta.view(1, -1, 1, 1)
        elif x.dim() == 3:
            theta = theta.view(1, 1, -1)
    return torch.sign(x) * F.relu(x.abs() - theta)


class ConvDictionary(nn.Module):
    """Paired encode/decode convolution banks with per-channel thresholds.

    encode: image space -> code space (Conv2d), decode: code space -> image
    space (ConvTranspose2d). Untied by default; with tied=True the decode
    bank reuses the encode weights, making decode the exact adjoint of
    encode at stride 1 with same-padding.
    """

    def __init__(self, image_channels: int, code_channels: int, k: int = 3,
                 tied: bool = False):
        super().__init__()
        if k % 2 == 0:
            raise ConfigError(f"kernel size must be odd, got {k}")
        self.image_channels = image_channels
        self.code_channels = code_channels
        self.enc = nn.Conv2d(image_channels, code_channels, k,
                             padding=k // 2, bias=False)
        self.dec = nn.ConvTranspose2d(code_channels, image_channels, k,
                                      padding=k // 2, bias=False)
        if tied:
            self.dec.weight = self.enc.weight
        self.theta_raw = nn.Parameter(
            torch.full((code_channels,), _inv_softplus(_THETA_INIT)))

    @property
    def theta(self) -> torch.Tensor:
        return F.softplus(self.theta_raw)

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        return self.enc(x)

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        return self.dec(z)


def lcsc_step(z: torch.Tensor, x: torch.Tensor, d: ConvDictionary) -> torch.Tensor:
    """One ISTA iteration: z+ = ST(z + encode(x - decode(z)), theta)."""
    if z.shape[1] != d.code_channels:
        raise ConfigError(
            f"code has {z.shape[1]} channels, dictionary expects {d.code_channels}")
    if x.shape[1] != d.image_channels:
        raise ConfigError(
            f"input has {x.shape[1]} channels, dictionary expects {d.image_channels}")
    return soft_threshold(z + d.encode(x - d.decode(z)), d.theta)


class SparseCodingBlock(nn.Module):
    """One LCSC iteration followed by a residual Bi-Mamba pass on the code.

    mamba_mode "none" reduces the block to the bare coding step (the ablation
    rows without sequence mixing in this module).
    """

    def __init__(self, image_channels: int, code_channels: int, k: int = 3,
                 mamba_mode: str = "bi", d_state: int = 8, tied: bool = False):
        super().__init__()
        self.dict = ConvDictionary(image_channels, code_channels, k, tied=tied)
        self.mixer = BiMamba(code_channels, d_state, mode=mamba_mode)

    def forward(self, z: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        z = lcsc_step(z, x, self.dict)
        if self.mixer.mode == "none":
            return z
        h, w = z.shape[2], z.shape[3]
        return raster_unflatten(self.mixer(raster_flatten(z)), (h, w))


class SparseEncoder(nn.Module):
    """Initial convolution + shrinkage, then a stack of coding blocks."""

    def __init__(self, image_channels: int, code_channels: int = 32,
                 k: int = 3, n_blocks: int = 4, mamba_mode: str = "bi",
                 d_state: int = 8, tied: bool = False):
        super().__init__()
        if n_blocks < 1:
            raise ConfigError("encoder needs at least one coding block")
        if k % 2 == 0:
            raise ConfigError(f"kernel size must be odd, got {k}")
        self.init_conv = nn.Conv2d(image_channels, code_channels, k,
                                   padding=k // 2, bias=False)
        self.theta0_raw = nn.Parameter(
            torch.full((code_channels,), _inv_softplus(_THETA_INIT)))
        self.blocks = nn.ModuleList([
            SparseCodingBlock(image_channels, code_channels, k,
                              mamba_mode=mamba_mode, d_state=d_state, tied=tied)
            for _ in range(n_blocks)
        ])

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        z = soft_threshold(self.init_conv(x), F.softplus(self.theta0_raw))
        for blk in self.blocks:
            z = blk(z, x)
        return z
