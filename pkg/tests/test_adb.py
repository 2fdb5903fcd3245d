import pytest
import torch

from adunet.adb import ADB0, ADBj, adb0_forward, adbj_forward, branch_layout, upsample2x
from adunet.config import NetworkConfig, expand, tiny_config

from _oracles import bilinear_half_pixel


@pytest.fixture(scope="module")
def base():
    return NetworkConfig()


def test_adb0_shapes(base):
    block = ADB0(base)
    zc, zs = adb0_forward(torch.randn(256, 8, 8), torch.randn(256, 4, 4), block.eval())
    assert zc.shape == zs.shape == (128, 8, 8)


def test_adb0_plus_shapes():
    block = ADB0(expand({"preset": "adu_net_plus"})).eval()
    zc, zs = adb0_forward(torch.randn(512, 8, 8), torch.randn(512, 4, 4), block)
    assert zc.shape == zs.shape == (256, 8, 8)


def test_adb0_identical_inputs_pass_through_fusion(base):
    block = ADB0(base).eval()
    f4 = torch.randn(1, 256, 4, 4)
    f3 = upsample2x(f4)
    trace = {}
    block(f3, f4, trace)
    assert torch.allclose(trace["adb0.c.fused"], f3, atol=1e-6)
    assert torch.allclose(trace["adb0.s.fused"], f3, atol=1e-6)


def test_adb0_width_mismatch(base):
    with pytest.raises(ValueError):
        ADB0(base)(torch.randn(1, 256, 8, 8), torch.randn(1, 128, 4, 4))


def test_adb1_shapes(base):
    block = ADBj(base, 1).eval()
    zc, zs = adbj_forward(torch.randn(128, 8, 8), torch.randn(128, 8, 8), torch.randn(128, 16, 16), block)
    assert zc.shape == zs.shape == (64, 16, 16)


def test_adb3_shapes(base):
    block = ADBj(base, 3).eval()
    zc, zs = adbj_forward(torch.randn(32, 32, 32), torch.randn(32, 32, 32), torch.randn(32, 64, 64), block)
    assert zc.shape == zs.shape == (16, 64, 64)


def test_skip_resolution_mismatch(base):
    with pytest.raises(ValueError):
        adbj_forward(torch.randn(128, 8, 8), torch.randn(128, 8, 8), torch.randn(128, 32, 32), ADBj(base, 1))


def test_upsample_constant_and_shape():
    x = torch.full((3, 4, 4), 0.7)
    y = upsample2x(x)
    assert y.shape == (3, 8, 8)
    assert torch.allclose(y, torch.full_like(y, 0.7))


def test_upsample_ramp():
    ramp = torch.arange(8, dtype=torch.float64) * 0.37 - 1.0
    x = ramp.view(1, 1, 1, 8).expand(1, 1, 4, 8)
    y = upsample2x(x)[0, 0, 0].numpy()
    ref = bilinear_half_pixel(ramp.numpy())
    interior = slice(1, -1)
    assert abs(y[interior] - ref[interior]).max() < 1e-6
    # interior samples of a ramp remain on a line
    d = torch.from_numpy(y[interior]).diff()
    assert torch.allclose(d, torch.full_like(d, 0.37 / 2), atol=1e-6)


def test_streams_differ_for_asymmetric():
    cfg = tiny_config()
    block = ADB0(cfg).eval()
    f3, f4 = torch.randn(1, 64, 8, 8), torch.randn(1, 64, 4, 4)
    zc, zs = block(f3, f4)
    assert (zc - zs).abs().max() > 0


def test_symmetric_streams_with_shared_params_agree():
    cfg = tiny_config(decoder_mode="dual_symmetric")
    block = ADBj(cfg, 1).eval()
    block.branch_s.load_state_dict(block.branch_c.state_dict())
    block.conv_in_s.load_state_dict(block.conv_in_c.state_dict())
    z = torch.randn(1, 32, 4, 4)
    zc, zs = block(z, z.clone(), torch.randn(1, 32, 8, 8))
    assert torch.equal(zc, zs)


@pytest.mark.parametrize("mode,layout_c,layout_s", [
    (dict(), ("cff", "wmsa"), ("gcff", "swmsa")),
    (dict(decoder_mode="dual_symmetric"), ("cff", "wmsa"), ("cff", "wmsa")),
    (dict(fusion_mode="none", attention_mode="none"), ("add", "none"), ("add", "none")),
    (dict(fusion_mode="cff_only", attention_mode="swmsa_only"), ("cff", "none"), ("add", "swmsa")),
    (dict(fusion_mode="gcff_only", attention_mode="wmsa_only"), ("add", "wmsa"), ("gcff", "none")),
])
def test_branch_layouts(mode, layout_c, layout_s):
    cfg = tiny_config(**mode)
    assert branch_layout(cfg, "c") == layout_c
    assert branch_layout(cfg, "s") == layout_s


def test_single_decoder_has_one_stream():
    cfg = tiny_config(decoder_mode="single")
    block = ADBj(cfg, 2).eval()
    assert block.branch_s is None and block.conv_in_s is None
    zc, zs = block(torch.randn(1, 16, 8, 8), None, torch.randn(1, 16, 16, 16))
    assert zs is None and zc.shape == (1, 8, 16, 16)


def test_decoder_convs_are_leaky():
    block = ADBj(NetworkConfig(), 2)
    blocks = [block.conv_in_c, block.conv_in_s, block.branch_c.conv_out, block.branch_s.conv_out]
    assert all(b.activation == "leaky_relu" for b in blocks)
