"""Composite networks: the main registration model and its guidance twin.

The main model disentangles each image into appearance + content, predicts
the deformation field from the two content maps, and reconstructs both
images from the shared content rendering plus appearance. The guidance model
is the Stage-1 network trained on aligned pairs: same appearance encoders,
but its content coder consumes both content maps at once and reconstructs
each modality through its own rendering head.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import ConfigError
from .extractors import AppearanceEncoder, ContentCoder, split_content
from .flow import FlowUNet, warp


@dataclass
class ArchConfig:
    channels: int = 1
    code_channels: int = 32
    kernel_size: int = 3
    n_blocks: int = 4
    d_state: int = 8
    unet_depth: int = 3
    unet_base: int = 16
    md_mode: str = "bi"      # appearance encoders
    mi_mode: str = "bi"      # content coder
    flow_mode: str = "bi"    # U-Net bottleneck


class RegistrationModel(nn.Module):
    def __init__(self, cfg: ArchConfig):
        super().__init__()
        self.cfg = cfg
        kw = dict(code_channels=cfg.code_channels, k=cfg.kernel_size,
                  n_blocks=cfg.n_blocks, d_state=cfg.d_state)
        self.app_x = AppearanceEncoder(cfg.channels, mamba_mode=cfg.md_mode, **kw)
        self.app_y = AppearanceEncoder(cfg.channels, mamba_mode=cfg.md_mode, **kw)
        self.content = ContentCoder(cfg.channels, cfg.channels,
                                    mamba_mode=cfg.mi_mode, **kw)
        self.flow_net = FlowUNet(2 * cfg.channels, depth=cfg.unet_depth,
                                 base=cfg.unet_base,
                                 bottleneck_mode=cfg.flow_mode,
                                 d_state=cfg.d_state)

    def appearance_encoder(self, modality: str) -> AppearanceEncoder:
        if modality == "x":
            return self.app_x
        if modality == "y":
            return self.app_y
        raise ConfigError(f"unknown modality {modality!r}")

    def forward(self, i_x: torch.Tensor, i_y: torch.Tensor) -> dict:
        md_x = self.app_x(i_x)
        md_y = self.app_y(i_y)
        mi_x = split_content(i_x, md_x)
        mi_y = split_content(i_y, md_y)
        phi = self.flow_net(mi_x, mi_y)
        r_x, r_y = self.content(mi_x)
        ix_hat = r_x + md_x
        iy_hat = warp(r_x, phi) + md_y
        return {
            "md_x": md_x, "md_y": md_y, "mi_x": mi_x, "mi_y": mi_y,
            "phi": phi, "r_x": r_x, "r_y": r_y,
            "ix_hat": ix_hat, "iy_hat": iy_hat,
            "x_warp": warp(i_x, phi),
        }


class GuidanceNet(nn.Module):
    def __init__(self, cfg: ArchConfig):
        super().__init__()
        self.cfg = cfg
        kw = dict(code_channels=cfg.code_channels, k=cfg.kernel_size,
                  n_blocks=cfg.n_blocks, d_state=cfg.d_state)
        self.app_x = AppearanceEncoder(cfg.channels, mamba_mode=cfg.md_mode, **kw)
        self.app_y = AppearanceEncoder(cfg.channels, mamba_mode=cfg.md_mode, **kw)
        self.content = ContentCoder(2 * cfg.channels, cfg.channels,
                                    mamba_mode=cfg.mi_mode, **kw)

    def content_maps(self, i_x: torch.Tensor, i_y: torch.Tensor):
        """The (mi_x, mi_y) pair used as guidance targets in Stage 2."""
        mi_x = split_content(i_x, self.app_x(i_x))
        mi_y = split_content(i_y, self.app_y(i_y))
        return mi_x, mi_y

    def forward(self, i_x: torch.Tensor, i_y: torch.Tensor) -> dict:
        md_x = self.app_x(i_x)
        md_y = self.app_y(i_y)
        mi_x = split_content(i_x, md_x)
        mi_y = split_content(i_y, md_y)
        r_x, r_y = self.content(torch.cat([mi_x, mi_y], dim=1))
        return {
            "md_x": md_x, "md_y": md_y, "mi_x": mi_x, "mi_y": mi_y,
            "r_x": r_x, "r_y": r_y,
            "ix_hat": r_x + md_x, "iy_hat": r_y + md_y,
        }
