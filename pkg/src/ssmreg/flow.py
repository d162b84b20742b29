"""Dense warping and the deformation-field predictor.

The field phi holds absolute pixel displacements (dy, dx) added to the
sampling grid: out(p) = img(p + phi(p)). Sampling is bilinear with
clamp-to-edge borders and differentiable in both the image and the field;
a nearest-neighbor mode keeps integer label maps integral.

The predictor is a small U-Net over the channel-concatenated content maps of
the two images, with an optional bidirectional selective-scan pass on the
raster-flattened bottleneck and a zero-initialized 2-channel head so training
starts exactly at the identity transform. The head predicts the field in
units of `flow_scale` pixels; the constant makes optimizer steps in weight
space translate into useful pixel-space motion without touching the
identity-at-init property.

Alongside the two content maps, the U-Net receives classical one-step
displacement estimates at three blur scales (normalized difference times
gradient over squared gradient magnitude), computed by a fixed, parameter-
free block. Learning then starts from "gate and refine these hints" instead
of discovering correspondence from scratch, which matters at desk-scale
training budgets.
"""

import torch
import torch.nn as nn

from .errors import ConfigError, ShapeError
from .ssm import BiMamba, raster_flatten, raster_unflatten


def warp(img: torch.Tensor, phi: torch.Tensor, mode: str = "bilinear") -> torch.Tensor:
    """Resample img at p + phi(p). img: (B, C, H, W), phi: (B, 2, H, W).

    phi channel 0 is the row (dy) displacement, channel 1 the column (dx).
    Out-of-bounds coordinates clamp to the border. With phi = 0 the output
    equals the input bitwise at every grid point.
    """
    if img.dim() != 4 or phi.dim() != 4:
        raise ShapeError("warp expects 4-d img and phi")
    if phi.shape[1] != 2 or img.shape[0] != phi.shape[0] or img.shape[2:] != phi.shape[2:]:
        raise ShapeError(
            f"phi shape {tuple(phi.shape)} does not match img {tuple(img.shape)}")
    if not torch.isfinite(phi).all():
        raise ValueError("warp: phi contains non-finite values")
    B, C, H, W = img.shape
    dev = img.device
    yy = torch.arange(H, dtype=img.dtype, device=dev).view(1, H, 1)
    xx = torch.arange(W, dtype=img.dtype, device=dev).view(1, 1, W)
    sy = (yy + phi[:, 0]).clamp(0, H - 1)
    sx = (xx + phi[:, 1]).clamp(0, W - 1)
    flat = img.reshape(B, C, H * W)

    def take(iy, ix):
        idx = (iy * W + ix).reshape(B, 1, H * W).expand(B, C, H * W)
        return flat.gather(2, idx).reshape(B, C, H, W)

    if mode == "nearest":
        iy = torch.floor(sy + 0.5).long().clamp(0, H - 1)
        ix = torch.floor(sx + 0.5).long().clamp(0, W - 1)
        return take(iy, ix)
    if mode != "bilinear":
        raise ConfigError(f"unknown warp mode {mode!r}")
    y0 = torch.floor(sy)
    x0 = torch.floor(sx)
    wy = (sy - y0).unsqueeze(1)
    wx = (sx - x0).unsqueeze(1)
    y0i = y0.long().clamp(0, H - 1)
    x0i = x0.long().clamp(0, W - 1)
    y1i = (y0i + 1).clamp(max=H - 1)
    x1i = (x0i + 1).clamp(max=W - 1)
    v00 = take(y0i, x0i)
    v01 = take(y0i, x1i)
    v10 = take(y1i, x0i)
    v11 = take(y1i, x1i)
    top = v00 + wx * (v01 - v00)
    bot = v10 + wx * (v11 - v10)
    return top + wy * (bot - top)


class _ConvPair(nn.Module):
    def __init__(self, c_in, c_out):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(c_in, c_out, 3, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(c_out, c_out, 3, padding=1),
            nn.LeakyReLU(0.2),
        )

    def forward(self, x):
        return self.net(x)


def _gauss_kernel(sigma: float, dtype, device) -> torch.Tensor:
    radius = max(int(2.0 * sigma + 0.5), 1)
    t = torch.arange(-radius, radius + 1, dtype=dtype, device=device)
    k = torch.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def _blur(x: torch.Tensor, sigma: float) -> torch.Tensor:
    k = _gauss_kernel(sigma, x.dtype, x.device)
    r = (k.numel() - 1) // 2
    x = nn.functional.conv2d(x, k.view(1, 1, -1, 1), padding=(r, 0))
    return nn.functional.conv2d(x, k.view(1, 1, 1, -1), padding=(0, r))


def flow_hints(mi_x: torch.Tensor, mi_y: torch.Tensor,
               sigmas=(8.0, 4.0, 2.0), cap: float = 8.0) -> torch.Tensor:
    """One-step displacement estimates from two content maps.

    Per scale: standardize the channel-mean of each blurred map, then take
    d = (b - a) * grad(a) / (|grad(a)|^2 + eps), the linearized solution of
    a(p + d) = b(p). Returns (B, 2 * len(sigmas), H, W), clamped to +-cap
    pixels. No parameters; differentiable like any other feature transform.
    """
    a_full = mi_x.mean(dim=1, keepdim=True)
    b_full = mi_y.mean(dim=1, keepdim=True)
    outs = []
    for sigma in sigmas:
        a = _blur(a_full, sigma)
        b = _blur(b_full, sigma)
        a = (a - a.mean(dim=(2, 3), keepdim=True)) / (
            a.std(dim=(2, 3), keepdim=True) + 1e-6)
        b = (b - b.mean(dim=(2, 3), keepdim=True)) / (
            b.std(dim=(2, 3), keepdim=True) + 1e-6)
        gy = torch.zeros_like(a)
        gx = torch.zeros_like(a)
        gy[:, :, 1:-1] = 0.5 * (a[:, :, 2:] - a[:, :, :-2])
        gx[:, :, :, 1:-1] = 0.5 * (a[:, :, :, 2:] - a[:, :, :, :-2])
        diff = b - a
        denom = gy ** 2 + gx ** 2
        scale = diff / (denom + 0.1 * denom.mean(dim=(2, 3), keepdim=True) + 1e-8)
        outs.append((scale * gy).clamp(-cap, cap))
        outs.append((scale * gx).clamp(-cap, cap))
    return torch.cat(outs, dim=1)


class FlowUNet(nn.Module):
    """U-Net over concat(content_x, content_y) predicting a (B, 2, H, W) field.

    depth down/up levels, channel widths base*2^level, selective-scan mixer of
    the configured mode on the flattened bottleneck.
    """

    def __init__(self, in_channels: int, depth: int = 3, base: int = 16,
                 bottleneck_mode: str = "bi", d_state: int = 8,
                 flow_scale: float = 8.0):
        super().__init__()
        if depth < 1:
            raise ConfigError("depth must be >= 1")
        self.depth = depth
        self.flow_scale = float(flow_scale)
        self.hint_sigmas = (8.0, 4.0, 2.0)
        widths = [base * (2 ** i) for i in range(depth)]
        self.enc = nn.ModuleList()
        c_prev = in_channels + 2 * len(self.hint_sigmas)
        for c in widths:
            self.enc.append(_ConvPair(c_prev, c))
            c_prev = c
        self.down = nn.ModuleList([
            nn.Conv2d(c, c, 3, stride=2, padding=1) for c in widths])
        c_bott = base * (2 ** depth)
        self.bottleneck = _ConvPair(widths[-1], c_bott)
        self.mixer = BiMamba(c_bott, d_state, mode=bottleneck_mode)
        self.up = nn.ModuleList()
        self.dec = nn.ModuleList()
        c_prev = c_bott
        for c in reversed(widths):
            self.up.append(nn.ConvTranspose2d(c_prev, c, 2, stride=2))
            self.dec.append(_ConvPair(2 * c, c))
            c_prev = c
        self.head = nn.Conv2d(base, 2, 1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, mi_x: torch.Tensor, mi_y: torch.Tensor) -> torch.Tensor:
        if mi_x.shape != mi_y.shape:
            raise ShapeError("content maps must share a shape")
        H, W = mi_x.shape[2], mi_x.shape[3]
        div = 2 ** self.depth
        if H % div or W % div:
            raise ConfigError(
                f"spatial size {(H, W)} not divisible by 2^depth = {div}")
        x = torch.cat([mi_x, mi_y, flow_hints(mi_x, mi_y, self.hint_sigmas)],
                      dim=1)
        skips = []
        for enc, down in zip(self.enc, self.down):
            x = enc(x)
            skips.append(x)
            x = down(x)
        x = self.bottleneck(x)
        if self.mixer.mode != "none":
            h, w = x.shape[2], x.shape[3]
            x = raster_unflatten(self.mixer(raster_flatten(x)), (h, w))
        for up, dec, skip in zip(self.up, self.dec, reversed(skips)):
            x = up(x)
            x = dec(torch.cat([x, skip], dim=1))
        return self.flow_scale * self.head(x)
