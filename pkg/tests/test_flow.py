import numpy as np
import pytest
import torch

from ssmreg.errors import ConfigError, ShapeError
from ssmreg.flow import FlowUNet, warp


def warp_oracle(img: np.ndarray, phi: np.ndarray, mode: str) -> np.ndarray:
    """Scalar-loop warp with clamp-to-edge sampling. img: C,H,W  phi: 2,H,W."""
    C, H, W = img.shape
    out = np.zeros_like(img)
    for c in range(C):
        for y in range(H):
            for x in range(W):
                sy = min(max(y + phi[0, y, x], 0.0), H - 1.0)
                sx = min(max(x + phi[1, y, x], 0.0), W - 1.0)
                if mode == "nearest":
                    out[c, y, x] = img[c, int(np.floor(sy + 0.5)),
                                       int(np.floor(sx + 0.5))]
                    continue
                y0, x0 = int(np.floor(sy)), int(np.floor(sx))
                y1, x1 = min(y0 + 1, H - 1), min(x0 + 1, W - 1)
                wy, wx = sy - y0, sx - x0
                top = img[c, y0, x0] + wx * (img[c, y0, x1] - img[c, y0, x0])
                bot = img[c, y1, x0] + wx * (img[c, y1, x1] - img[c, y1, x0])
                out[c, y, x] = top + wy * (bot - top)
    return out


def test_zero_field_is_bitwise_identity():
    img = torch.rand(2, 3, 9, 7)
    out = warp(img, torch.zeros(2, 2, 9, 7))
    assert torch.equal(out, img)


def test_integer_shift_samples_neighbor():
    img = torch.arange(12.0).reshape(1, 1, 3, 4)
    phi = torch.zeros(1, 2, 3, 4)
    phi[:, 1] = 1.0      # sample one pixel to the right
    out = warp(img, phi)
    assert torch.equal(out[0, 0, :, :3], img[0, 0, :, 1:])
    assert torch.equal(out[0, 0, :, 3], img[0, 0, :, 3])   # clamped edge


def test_warp_matches_scalar_oracle(rng):
    img = torch.tensor(rng.random((1, 2, 8, 9)))
    phi = torch.tensor(rng.uniform(-3, 3, (1, 2, 8, 9)))
    for mode in ("bilinear", "nearest"):
        got = warp(img, phi, mode=mode).numpy()[0]
        want = warp_oracle(img.numpy()[0], phi.numpy()[0], mode)
        np.testing.assert_allclose(got, want, atol=1e-12)


def test_nearest_mode_preserves_label_values(rng):
    labels = torch.tensor(rng.integers(0, 5, (1, 1, 12, 12)).astype(np.float32))
    phi = torch.tensor(rng.uniform(-2, 2, (1, 2, 12, 12)).astype(np.float32))
    out = warp(labels, phi, mode="nearest")
    assert set(np.unique(out.numpy())) <= set(np.unique(labels.numpy()))


def test_round_trip_on_smooth_field():
    from scipy.ndimage import gaussian_filter
    rng = np.random.default_rng(3)
    img = gaussian_filter(rng.random((32, 32)), 2.0)
    field = gaussian_filter(rng.standard_normal((2, 32, 32)), (0, 6, 6))
    field = field / np.abs(field).max() * 1.5
    timg = torch.tensor(img)[None, None]
    tphi = torch.tensor(field)[None]
    back = warp(warp(timg, tphi), -tphi)
    mae = (back - timg).abs().mean().item()
    assert mae < 0.02, f"round-trip mean abs error {mae}"


def test_warp_gradients_match_finite_differences(rng):
    img = torch.tensor(rng.random((1, 1, 6, 6)), requires_grad=True)
    phi = torch.tensor(0.3 + 0.1 * rng.random((1, 2, 6, 6)),
                       requires_grad=True)
    assert torch.autograd.gradcheck(lambda i, p: warp(i, p), (img, phi),
                                    atol=1e-6)


def test_warp_input_validation():
    img = torch.rand(1, 1, 8, 8)
    with pytest.raises(ShapeError):
        warp(img, torch.zeros(1, 3, 8, 8))
    with pytest.raises(ShapeError):
        warp(img, torch.zeros(1, 2, 4, 8))
    with pytest.raises(ShapeError):
        warp(torch.rand(8, 8), torch.zeros(1, 2, 8, 8))
    bad = torch.zeros(1, 2, 8, 8)
    bad[0, 0, 3, 3] = float("nan")
    with pytest.raises(ValueError):
        warp(img, bad)
    with pytest.raises(ValueError):
        warp(img, torch.full((1, 2, 8, 8), float("inf")))


def test_flow_unet_starts_at_zero_field():
    net = FlowUNet(2, depth=2, base=4, bottleneck_mode="bi", d_state=2)
    phi = net(torch.rand(2, 1, 16, 16), torch.rand(2, 1, 16, 16))
    assert phi.shape == (2, 2, 16, 16)
    assert torch.equal(phi, torch.zeros(2, 2, 16, 16))


def test_flow_unet_shape_checks():
    net = FlowUNet(2, depth=2, base=4, bottleneck_mode="none")
    with pytest.raises(ConfigError):
        net(torch.rand(1, 1, 10, 16), torch.rand(1, 1, 10, 16))  # 10 % 4 != 0
    with pytest.raises(ShapeError):
        net(torch.rand(1, 1, 16, 16), torch.rand(1, 1, 16, 8))


def test_flow_unet_trains_toward_a_known_shift():
    # one pair, constant 1-px shift: a few steps should move phi off zero
    torch.manual_seed(0)
    net = FlowUNet(2, depth=2, base=4, bottleneck_mode="none")
    img = torch.zeros(1, 1, 16, 16)
    img[0, 0, 6:10, 6:10] = 1.0
    shift = torch.zeros(1, 2, 16, 16)
    shift[:, 1] = 1.0
    fixed = warp(img, shift)
    opt = torch.optim.Adam(net.parameters(), lr=1e-2)
    first = None
    for _ in range(30):
        phi = net(img, fixed)
        loss = ((warp(img, phi) - fixed) ** 2).mean() \
            + 0.1 * (phi.diff(dim=-1) ** 2).mean()
        if first is None:
            first = loss.item()
        opt.zero_grad()
        loss.backward()
        opt.step()
    assert loss.item() < first
    assert phi.abs().max() > 0.1
