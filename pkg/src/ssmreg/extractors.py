"""Appearance and content feature extractors.

The appearance encoder captures what is specific to one sensor: a sparse
code of the image synthesized back to image space through a learned filter
bank. The content map is what remains after subtracting appearance from the
image, and carries the geometry used for alignment. The content coder
re-encodes a content map into a shared sparse code and renders it through
two modality-specific synthesis heads.

Every instance owns its parameters; the two per-modality appearance encoders
and the content coder share an architecture, never weights.
"""

import torch
import torch.nn as nn

from .errors import ShapeError
from .sparse import SparseEncoder


class AppearanceEncoder(nn.Module):
    """Image -> modality-specific appearance map with the image's shape."""

    def __init__(self, channels: int, code_channels: int = 32, k: int = 3,
                 n_blocks: int = 4, mamba_mode: str = "bi", d_state: int = 8):
        super().__init__()
        self.encoder = SparseEncoder(channels, code_channels, k, n_blocks,
                                     mamba_mode=mamba_mode, d_state=d_state)
        self.synth = nn.Conv2d(code_channels, channels, k,
                               padding=k // 2, bias=False)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        return self.synth(self.encoder(image))


def split_content(image: torch.Tensor, appearance: torch.Tensor) -> torch.Tensor:
    """Content = image - appearance, exactly; shapes must agree."""
    if image.shape != appearance.shape:
        raise ShapeError(
            f"image {tuple(image.shape)} vs appearance {tuple(appearance.shape)}")
    return image - appearance


class ContentCoder(nn.Module):
    """Content map(s) -> shared sparse code -> two modality renderings.

    Both synthesis heads read the identical code tensor, so the renderings
    differ only through the learned filter banks.
    """

    def __init__(self, in_channels: int, out_channels: int,
                 code_channels: int = 32, k: int = 3, n_blocks: int = 4,
                 mamba_mode: str = "bi", d_state: int = 8):
        super().__init__()
        self.encoder = SparseEncoder(in_channels, code_channels, k, n_blocks,
                                     mamba_mode=mamba_mode, d_state=d_state)
        self.synth_x = nn.Conv2d(code_channels, out_channels, k,
                                 padding=k // 2, bias=False)
        self.synth_y = nn.Conv2d(code_channels, out_channels, k,
                                 padding=k // 2, bias=False)

    def forward(self, content: torch.Tensor):
        code = self.encoder(content)
        return self.synth_x(code), self.synth_y(code)
