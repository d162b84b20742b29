import pytest
import torch

from ssmreg.errors import ConfigError, ShapeError
from ssmreg.extractors import AppearanceEncoder, ContentCoder, split_content
from ssmreg.models import ArchConfig, GuidanceNet, RegistrationModel
from ssmreg.ssm import SelectiveScan

SMALL = ArchConfig(channels=1, code_channels=8, n_blocks=2, d_state=2,
                   unet_depth=2, unet_base=4)


def test_appearance_encoder_output_shape():
    enc = AppearanceEncoder(1, code_channels=8, n_blocks=2, mamba_mode="bi",
                            d_state=2)
    out = enc(torch.rand(2, 1, 16, 16))
    assert out.shape == (2, 1, 16, 16)


def test_split_content_is_exact_complement():
    img = torch.rand(2, 1, 12, 12)
    app = torch.rand(2, 1, 12, 12)
    content = split_content(img, app)
    assert torch.equal(content + app, img)


def test_split_content_rejects_mismatched_shapes():
    with pytest.raises(ShapeError):
        split_content(torch.rand(1, 1, 8, 8), torch.rand(1, 1, 8, 9))


def test_content_coder_two_heads_share_one_code():
    coder = ContentCoder(2, 1, code_channels=8, n_blocks=2, mamba_mode="none")
    r_x, r_y = coder(torch.rand(2, 2, 16, 16))
    assert r_x.shape == (2, 1, 16, 16)
    assert r_y.shape == (2, 1, 16, 16)
    assert not torch.equal(r_x, r_y), "heads are independent projections"


def test_registration_model_forward_contract():
    model = RegistrationModel(SMALL)
    i_x, i_y = torch.rand(2, 1, 16, 16), torch.rand(2, 1, 16, 16)
    out = model(i_x, i_y)
    expected = {"md_x", "md_y", "mi_x", "mi_y", "phi", "r_x", "r_y",
                "ix_hat", "iy_hat", "x_warp"}
    assert expected <= set(out)
    assert out["phi"].shape == (2, 2, 16, 16)
    # the appearance split is the exact residual (mi is defined as i - md;
    # re-adding md only matches to float rounding)
    assert torch.equal(out["mi_x"], i_x - out["md_x"])
    assert torch.equal(out["mi_y"], i_y - out["md_y"])
    torch.testing.assert_close(out["mi_x"] + out["md_x"], i_x,
                               atol=1e-6, rtol=0)
    # reconstruction identities
    assert torch.equal(out["ix_hat"], out["r_x"] + out["md_x"])


def test_registration_model_warp_is_identity_at_init():
    # flow head is zero-initialized, so before training phi = 0 and the
    # warped moving image is the moving image, bit for bit
    model = RegistrationModel(SMALL)
    i_x, i_y = torch.rand(1, 1, 16, 16), torch.rand(1, 1, 16, 16)
    out = model(i_x, i_y)
    assert torch.equal(out["phi"], torch.zeros(1, 2, 16, 16))
    assert torch.equal(out["x_warp"], i_x)


def test_appearance_encoder_selector():
    model = RegistrationModel(SMALL)
    assert model.appearance_encoder("x") is model.app_x
    assert model.appearance_encoder("y") is model.app_y
    with pytest.raises(ConfigError):
        model.appearance_encoder("z")


def test_mode_none_builds_no_scan_modules():
    cfg = ArchConfig(channels=1, code_channels=8, n_blocks=2, d_state=2,
                     unet_depth=2, unet_base=4,
                     md_mode="none", mi_mode="none", flow_mode="none")
    model = RegistrationModel(cfg)
    scans = [m for m in model.modules() if isinstance(m, SelectiveScan)]
    assert scans == [], "ablated model must not contain scan layers"
    guidance = GuidanceNet(cfg)
    assert [m for m in guidance.modules()
            if isinstance(m, SelectiveScan)] == []


def test_mode_bi_builds_scan_modules_everywhere():
    model = RegistrationModel(SMALL)
    scans = [m for m in model.modules() if isinstance(m, SelectiveScan)]
    # 2 per bi block: app_x, app_y, content each n_blocks=2, unet bottleneck 1
    assert len(scans) == 2 * (2 + 2 + 2 + 1)


def test_guidance_net_contract():
    net = GuidanceNet(SMALL)
    i_x, i_y = torch.rand(2, 1, 16, 16), torch.rand(2, 1, 16, 16)
    out = net(i_x, i_y)
    assert {"md_x", "md_y", "mi_x", "mi_y", "r_x", "r_y",
            "ix_hat", "iy_hat"} <= set(out)
    assert torch.equal(out["ix_hat"], out["r_x"] + out["md_x"])
    assert torch.equal(out["iy_hat"], out["r_y"] + out["md_y"])
    mx, my = net.content_maps(i_x, i_y)
    assert torch.equal(mx, out["mi_x"])
    assert torch.equal(my, out["mi_y"])
    # the shared coder reads both modality-invariant maps at once
    assert net.content.encoder.init_conv.in_channels == 2


def test_guidance_content_coder_mirrors_ablation_mode():
    cfg = ArchConfig(channels=1, code_channels=8, n_blocks=2, d_state=2,
                     unet_depth=2, unet_base=4, mi_mode="none", md_mode="none")
    net = GuidanceNet(cfg)
    assert [m for m in net.modules() if isinstance(m, SelectiveScan)] == []
