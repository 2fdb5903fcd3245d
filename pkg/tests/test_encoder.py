import pytest
import torch

from adunet.config import NetworkConfig
from adunet.encoder import ConvBlock, Encoder, conv_block, encode
from adunet.network import init_parameters


def test_conv0_shape():
    block = ConvBlock(3, 32)
    assert conv_block(torch.rand(1, 3, 64, 64), block).shape == (1, 32, 64, 64)


def test_zero_input_gives_zero():
    block = ConvBlock(3, 32)
    init_parameters(block, 0)
    block.eval()
    assert torch.equal(block(torch.zeros(1, 3, 16, 16)), torch.zeros(1, 32, 16, 16))


def test_channel_mismatch():
    with pytest.raises(ValueError):
        conv_block(torch.rand(1, 32, 16, 16), ConvBlock(64, 128))


def test_activation_override_restores():
    block = ConvBlock(4, 4, activation="relu").eval()
    x = torch.randn(1, 4, 8, 8)
    leaky = conv_block(x, block, activation="leaky_relu")
    assert block.activation == "relu"
    assert (leaky < 0).any() and not (block(x) < 0).any()


def test_feature_shapes_64():
    enc = Encoder(NetworkConfig().encoder_channels)
    shapes = [tuple(f.shape) for f in encode(torch.rand(3, 64, 64), enc)]
    assert shapes == [(32, 64, 64), (64, 32, 32), (128, 16, 16), (256, 8, 8), (256, 4, 4)]


def test_f4_at_eval_size():
    enc = Encoder(NetworkConfig().encoder_channels).eval()
    with torch.no_grad():
        feats = enc(torch.rand(1, 3, 512, 256))
    assert feats[4].shape == (1, 256, 32, 16)


def test_indivisible_rejected():
    with pytest.raises(ValueError):
        encode(torch.rand(3, 50, 50), Encoder(NetworkConfig().encoder_channels))


def test_eval_deterministic():
    enc = Encoder([8, 16, 32, 64, 64]).eval()
    x = torch.rand(2, 3, 32, 32)
    with torch.no_grad():
        a, b = enc(x), enc(x)
    assert all(torch.equal(u, v) for u, v in zip(a, b))
