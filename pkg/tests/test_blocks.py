from __future__ import annotations

from unittest import TestCase

import numpy as np
import pytest

from ecfnet.blocks import FDAM
from ecfnet.blocks import SDAM
from ecfnet.blocks import SFAM
from ecfnet.blocks import ConvS
from ecfnet.blocks import MSBlock
from ecfnet.blocks import MSFBlock
from ecfnet.blocks import MSSFBlock
from ecfnet.blocks import SCABlock
from ecfnet.blocks import simple_gate
from ecfnet.exceptions import InvalidConfig
from ecfnet.exceptions import ShapeError
from ecfnet.tensor import Tensor
from ecfnet.tensor import default_dtype
from ecfnet.tensor import sum_all
from tests.oracles import conv_loop
from tests.oracles import filter_bank_loop
from tests.oracles import gradient_errors
from tests.oracles import softmax_direct


def make(block, *args, **kwargs):
    with default_dtype(np.float64):
        return block(*args, **kwargs)


def randomize(module, rng, scale=0.5):
    for _, parameter in module.named_parameters():
        parameter.assign(rng.standard_normal(parameter.shape) * scale)


def conv_of(conv, x):
    return conv_loop(
        x,
        conv.weight.data,
        conv.bias.data,
        stride=conv.stride,
        padding=conv.padding,
        groups=conv.groups,
        padding_mode=conv.padding_mode,
    )


def sdam_oracle(module, f):
    pooled = np.concatenate([f.mean(axis=1, keepdims=True), f.max(axis=1, keepdims=True)], axis=1)
    spatial = conv_of(module.spatial, pooled)
    located = spatial * conv_of(module.depthwise7, conv_of(module.depthwise5, f))
    score = conv_of(module.channel, f.mean(axis=(2, 3), keepdims=True))
    return located + score * f + conv_of(module.shortcut, f)


def layer_norm_oracle(x, norm):
    mean = x.mean(axis=1, keepdims=True)
    variance = x.var(axis=1, keepdims=True)
    return (x - mean) / np.sqrt(variance + norm.eps) * norm.gain.data + norm.bias.data


def fdam_oracle(module, f):
    logits = conv_of(module.filter_conv, f.mean(axis=(2, 3), keepdims=True))
    logits = layer_norm_oracle(logits, module.filter_norm)
    filters = softmax_direct(logits.reshape(f.shape[0], module.groups, -1, 1), 2)
    low = filter_bank_loop(f, filters, module.kernel_size)
    return (f - low) * f + f


def gate(x):
    half = x.shape[1] // 2
    return x[:, :half] * x[:, half:]


def avg_pool_loop(x, r):
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // r, w // r))
    for y in range(h // r):
        for xi in range(w // r):
            out[:, :, y, xi] = x[:, :, y * r : (y + 1) * r, xi * r : (xi + 1) * r].mean(axis=(2, 3))
    return out


def pixel_shuffle_loop(x, r):
    n, channels, h, w = x.shape
    c = channels // (r * r)
    out = np.zeros((n, c, h * r, w * r))
    for ci in range(c):
        for dy in range(r):
            for dx in range(r):
                out[:, ci, dy::r, dx::r] = x[:, ci * r * r + dy * r + dx]
    return out


def scablock_oracle(block, x):
    gated = gate(conv_of(block.depthwise, conv_of(block.expand, layer_norm_oracle(x, block.norm))))
    attention = conv_of(block.attention, gated.mean(axis=(2, 3), keepdims=True))
    return x + block.beta.data * conv_of(block.project, gated * attention)


def msfblock_oracle(block, x, swap_cross=False):
    normed = layer_norm_oracle(x, block.norm)
    top = gate(conv_of(block.depthwise_small, conv_of(block.expand_small, normed)))
    bottom = gate(conv_of(block.depthwise_large, conv_of(block.expand_large, normed)))
    first, second = (bottom, top) if swap_cross else (top, bottom)
    small = gate(conv_of(block.cross_small, np.concatenate([first, second], axis=1)))
    large = gate(conv_of(block.cross_large, np.concatenate([second, first], axis=1)))
    return x + block.gamma.data * conv_of(block.project, np.concatenate([small, large], axis=1))


def msblock_oracle(block, x):
    def branch(sequential, v):
        for layer in sequential.layers[:-1]:
            v = scablock_oracle(layer, v)
        return msfblock_oracle(sequential.layers[-1], v)

    def up(module, v):
        return pixel_shuffle_loop(conv_of(module.expand, v), module.ratio)

    x1 = branch(block.full, x)
    x2 = branch(block.half, avg_pool_loop(x, 2))
    x3 = branch(block.quarter, avg_pool_loop(x, 4) + avg_pool_loop(x2, 2))
    return x1 + up(block.up_half, x2) + up(block.up_quarter, x3)


def convs_oracle(block, image):
    x = conv_of(block.conv, image)
    if block.variant == "gated":
        x = gate(conv_of(block.expand, x))
    return x


class SimpleGateTest(TestCase):
    def test_ones(self):
        out = simple_gate(Tensor(np.ones((1, 4, 2, 2))))
        assert out.shape == (1, 2, 2, 2)
        assert np.all(out.data == 1)

    def test_halves_multiply(self):
        x = np.stack([np.full((2, 2), 2.0), np.full((2, 2), 3.0)])[None]
        assert np.all(simple_gate(Tensor(x)).data == 6)

    def test_matches_split_multiply(self):
        x = np.random.default_rng(0).standard_normal((2, 6, 3, 3))
        assert np.array_equal(simple_gate(Tensor(x)).data, x[:, :3] * x[:, 3:])

    def test_odd_channels(self):
        with pytest.raises(ShapeError, match="even"):
            simple_gate(Tensor(np.zeros((1, 3, 2, 2))))


class SDAMTest(TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(1)
        self.sdam = make(SDAM, 8)
        randomize(self.sdam, self.rng)
        self.f = self.rng.standard_normal((1, 8, 8, 8))

    def test_zero_maps_to_zero(self):
        sdam = make(SDAM, 8)
        sdam.reset_parameters(self.rng)
        assert np.all(sdam(Tensor(np.zeros((1, 8, 4, 4)))).data == 0)

    def test_unit_spatial_gate_without_channel_path(self):
        sdam = self.sdam
        sdam.spatial.weight.assign(np.zeros(sdam.spatial.weight.shape))
        sdam.spatial.bias.assign(np.ones(sdam.spatial.bias.shape))
        sdam.channel.weight.assign(np.zeros(sdam.channel.weight.shape))
        sdam.channel.bias.assign(np.zeros(sdam.channel.bias.shape))
        f = Tensor(self.f)
        expected = sdam.depthwise7(sdam.depthwise5(f)).data + sdam.shortcut(f).data
        assert np.allclose(sdam(f).data, expected, rtol=1e-12, atol=1e-12)

    def test_matches_composition_oracle(self):
        assert np.allclose(self.sdam(Tensor(self.f)).data, sdam_oracle(self.sdam, self.f), rtol=1e-9, atol=1e-9)

    def test_sigmoid_channel_gate(self):
        sdam = make(SDAM, 8, channel_gate="sigmoid")
        randomize(sdam, self.rng)
        score = sdam.channel_score(Tensor(self.f)).data
        assert np.all((score > 0) & (score < 1))

    def test_unknown_channel_gate(self):
        with pytest.raises(InvalidConfig, match="channel_gate"):
            SDAM(8, channel_gate="relu")

    def test_gradients(self):
        f = Tensor(self.rng.standard_normal((1, 4, 6, 6)), requires_grad=True)
        sdam = make(SDAM, 4)
        randomize(sdam, self.rng)
        weights = Tensor(self.rng.standard_normal((1, 4, 6, 6)))
        errors = gradient_errors(lambda: sum_all(sdam(f) * weights), [f, *sdam.parameters()], max_probes=12)
        assert max(errors) < 1e-4


class FDAMTest(TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(2)

    def test_constant_input_is_unchanged(self):
        fdam = make(FDAM, 8, kernel_size=3, groups=4)
        for _ in range(100):
            randomize(fdam, self.rng, scale=2.0)
            f = np.broadcast_to(self.rng.standard_normal((1, 8, 1, 1)), (1, 8, 6, 6)).copy()
            assert np.max(np.abs(fdam(Tensor(f)).data - f)) < 1e-5

    def test_filters_are_normalized(self):
        fdam = make(FDAM, 8, kernel_size=3, groups=2)
        for _ in range(1000):
            randomize(fdam, self.rng, scale=3.0)
            filters = fdam.filter_bank(Tensor(self.rng.standard_normal((1, 8, 4, 4)))).data
            assert filters.shape == (1, 2, 9, 1)
            assert np.all(filters >= 0)
            assert np.all(np.abs(filters.sum(axis=2) - 1) < 1e-6)

    def test_filters_are_per_sample(self):
        fdam = make(FDAM, 4, groups=2)
        randomize(fdam, self.rng)
        filters = fdam.filter_bank(Tensor(self.rng.standard_normal((2, 4, 4, 4)))).data
        assert not np.allclose(filters[0], filters[1])

    def test_impulse_mass_is_conserved(self):
        fdam = make(FDAM, 4, kernel_size=3, groups=2)
        randomize(fdam, self.rng)
        f = np.zeros((1, 4, 9, 9))
        f[:, :, 4, 4] = 1
        low = fdam.decompose(Tensor(f)).low.data
        assert np.allclose(low.sum(axis=(2, 3)), 1)

    def test_decomposition_reconstructs_input(self):
        fdam = make(FDAM, 8, groups=8)
        randomize(fdam, self.rng)
        f = self.rng.standard_normal((1, 8, 8, 8))
        split = fdam.decompose(Tensor(f))
        assert np.max(np.abs(split.low.data + split.high.data - f)) < 1e-6

    def test_matches_patch_oracle(self):
        fdam = make(FDAM, 4, kernel_size=3, groups=2)
        randomize(fdam, self.rng)
        f = self.rng.standard_normal((1, 4, 8, 8))
        assert np.allclose(fdam(Tensor(f)).data, fdam_oracle(fdam, f), rtol=1e-9, atol=1e-9)

    def test_zero_maps_to_zero(self):
        fdam = make(FDAM, 8)
        fdam.reset_parameters(self.rng)
        assert np.all(fdam(Tensor(np.zeros((1, 8, 4, 4)))).data == 0)

    def test_invalid_settings_are_all_reported(self):
        with pytest.raises(InvalidConfig) as info:
            FDAM(6, kernel_size=4, groups=4)
        assert len(info.value.violations) == 2

    def test_gradients(self):
        fdam = make(FDAM, 4, kernel_size=3, groups=2)
        randomize(fdam, self.rng)
        f = Tensor(self.rng.standard_normal((1, 4, 5, 5)), requires_grad=True)
        weights = Tensor(self.rng.standard_normal((1, 4, 5, 5)))
        errors = gradient_errors(lambda: sum_all(fdam(f) * weights), [f, *fdam.parameters()], max_probes=12)
        assert max(errors) < 1e-4


class SFAMTest(TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(3)
        self.sfam = make(SFAM, 8, kernel_size=3, groups=4)
        self.sfam.reset_parameters(self.rng)
        self.f = Tensor(self.rng.standard_normal((1, 8, 6, 6)))

    def test_weight_starts_at_one(self):
        assert np.all(self.sfam.weight.data == 1)

    def test_unit_weight_is_branch_sum(self):
        expected = self.sfam.first_branch(self.f).data + self.sfam.second_branch(self.f).data
        assert np.array_equal(self.sfam(self.f).data, expected)

    def test_weight_only_scales_first_branch(self):
        weight = self.rng.standard_normal((1, 8, 1, 1))
        self.sfam.weight.assign(weight)
        first = self.sfam.first_branch(self.f).data
        second = self.sfam.second_branch(self.f).data
        assert np.allclose(self.sfam(self.f).data - second, weight * first, rtol=1e-12, atol=1e-12)

    def test_zero_weight_keeps_second_branch(self):
        self.sfam.weight.assign(np.zeros((1, 8, 1, 1)))
        assert np.array_equal(self.sfam(self.f).data, self.sfam.second_branch(self.f).data)

    def test_constant_input(self):
        sdam = self.sfam.sdam
        for conv in (sdam.spatial, sdam.depthwise5, sdam.depthwise7, sdam.channel, sdam.shortcut):
            conv.weight.assign(np.zeros(conv.weight.shape))
            conv.bias.assign(self.rng.standard_normal(conv.bias.shape))
        randomize(self.sfam.fdam, self.rng)
        weight = self.rng.standard_normal((1, 8, 1, 1))
        self.sfam.weight.assign(weight)
        f = Tensor(np.broadcast_to(self.rng.standard_normal((1, 8, 1, 1)), (1, 8, 6, 6)).copy())
        assert np.allclose(self.sfam(f).data, (weight + 1) * sdam(f).data, atol=1e-10)

    def test_unshared_branches(self):
        unshared = make(SFAM, 8, groups=4, shared=False)
        assert unshared.parameter_count() == 2 * self.sfam.parameter_count() - 8
        names = {name.split(".")[0] for name, _ in unshared.named_parameters()}
        assert names == {"sdam", "fdam", "sdam_second", "fdam_second", "weight"}

    def test_modes(self):
        for mode, branch in (
            ("sdam", self.sfam.sdam),
            ("fdam", self.sfam.fdam),
            ("fdam_sdam", self.sfam.second_branch),
            ("sdam_fdam", self.sfam.first_branch),
        ):
            self.sfam.mode = mode
            assert np.array_equal(self.sfam(self.f).data, branch(self.f).data)

    def test_unknown_mode(self):
        with pytest.raises(InvalidConfig, match="mode"):
            SFAM(8, groups=4, mode="parallel")

    def test_gradients(self):
        sfam = make(SFAM, 4, kernel_size=3, groups=2)
        randomize(sfam, self.rng)
        f = Tensor(self.rng.standard_normal((1, 4, 4, 4)), requires_grad=True)
        weights = Tensor(self.rng.standard_normal((1, 4, 4, 4)))
        errors = gradient_errors(lambda: sum_all(sfam(f) * weights), [f, *sfam.parameters()], max_probes=8)
        assert max(errors) < 1e-4


class ConvBlockTest(TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(4)
        self.x = Tensor(self.rng.standard_normal((1, 4, 8, 8)))

    def randomized(self, block, *args):
        module = make(block, *args)
        randomize(module, self.rng)
        return module

    def test_zero_maps_to_zero(self):
        zero = Tensor(np.zeros((1, 4, 8, 8)))
        for module in (make(SCABlock, 4), make(MSFBlock, 4), make(MSSFBlock, 4), make(MSBlock, 4, 1)):
            module.reset_parameters(self.rng)
            assert np.all(module(zero).data == 0), module.__class__.__name__
        convs = make(ConvS, 4)
        convs.reset_parameters(self.rng)
        assert np.all(convs(Tensor(np.zeros((1, 3, 8, 8)))).data == 0)

    def test_scablock_residual(self):
        block = self.randomized(SCABlock, 4)
        expected = block.beta.data * block.branch(self.x).data
        assert np.allclose(block(self.x).data - self.x.data, expected, atol=1e-12)

    def test_msfblock_residual(self):
        block = self.randomized(MSFBlock, 4)
        expected = block.gamma.data * block.branch(self.x).data
        assert np.allclose(block(self.x).data - self.x.data, expected, atol=1e-12)

    def test_fresh_residual_blocks_are_identity(self):
        for block in (SCABlock, MSFBlock):
            module = make(block, 4)
            module.reset_parameters(self.rng)
            assert np.array_equal(module(self.x).data, self.x.data), block.__name__
        mssf = make(MSSFBlock, 4)
        mssf.reset_parameters(self.rng)
        assert np.allclose(mssf(self.x).data, 4 * self.x.data, rtol=1e-12, atol=1e-12)

    def test_mssfblock_residual_law(self):
        block = self.randomized(MSSFBlock, 4)
        inner = self.x.data + block.sca(self.x).data
        expected = inner + block.msf(Tensor(inner)).data
        assert np.allclose(block(self.x).data, expected, rtol=1e-12, atol=1e-12)

    def test_scablock_matches_composition_oracle(self):
        block = self.randomized(SCABlock, 4)
        assert np.allclose(block(self.x).data, scablock_oracle(block, self.x.data), rtol=1e-9, atol=1e-9)

    def test_msfblock_matches_composition_oracle(self):
        block = self.randomized(MSFBlock, 4)
        assert np.allclose(block(self.x).data, msfblock_oracle(block, self.x.data), rtol=1e-9, atol=1e-9)

    def test_msfblock_cross_fusion_order(self):
        block = self.randomized(MSFBlock, 4)
        swapped = msfblock_oracle(block, self.x.data, swap_cross=True)
        assert not np.allclose(block(self.x).data, swapped, rtol=1e-6, atol=1e-6)

    def test_mssfblock_matches_composition_oracle(self):
        block = self.randomized(MSSFBlock, 4)
        inner = self.x.data + scablock_oracle(block.sca, self.x.data)
        expected = inner + msfblock_oracle(block.msf, inner)
        assert np.allclose(block(self.x).data, expected, rtol=1e-9, atol=1e-9)

    def test_msblock_matches_composition_oracle(self):
        block = self.randomized(MSBlock, 4, 2)
        x = self.rng.standard_normal((1, 4, 16, 16))
        assert np.allclose(block(Tensor(x)).data, msblock_oracle(block, x), rtol=1e-9, atol=1e-9)

    def test_convs_matches_composition_oracle(self):
        image = self.rng.uniform(0, 1, (1, 3, 16, 16))
        for variant in ConvS.variants:
            block = self.randomized(ConvS, 8, variant)
            assert np.allclose(block(Tensor(image)).data, convs_oracle(block, image), rtol=1e-9, atol=1e-9), variant

    def test_msblock_shapes(self):
        for num_blocks in (1, 4):
            block = self.randomized(MSBlock, 4, num_blocks)
            assert block(Tensor(self.rng.standard_normal((1, 4, 16, 16)))).shape == (1, 4, 16, 16)

    def test_msblock_task_depths(self):
        for num_blocks in (4, 8):
            block = MSBlock(4, num_blocks)
            assert len(block.full) == len(block.half) == len(block.quarter) == num_blocks + 1

    def test_msblock_rejects_bad_sizes(self):
        block = make(MSBlock, 4, 1)
        with pytest.raises(ShapeError) as info:
            block(Tensor(np.zeros((1, 4, 8, 6))))
        assert info.value.axis == "width"
        with pytest.raises(InvalidConfig):
            MSBlock(4, 0)

    def test_convs(self):
        gated = self.randomized(ConvS, 8)
        assert gated(Tensor(self.rng.standard_normal((1, 3, 32, 32)))).shape == (1, 8, 32, 32)
        single = make(ConvS, 8, variant="single")
        assert not hasattr(single, "expand")
        with pytest.raises(InvalidConfig, match="variant"):
            ConvS(8, variant="deep")

    def test_gradients(self):
        x = Tensor(self.rng.standard_normal((1, 4, 4, 4)), requires_grad=True)
        weights = Tensor(self.rng.standard_normal((1, 4, 4, 4)))
        for block in (SCABlock, MSFBlock, MSSFBlock):
            module = self.randomized(block, 4)
            errors = gradient_errors(lambda: sum_all(module(x) * weights), [x, *module.parameters()], max_probes=6)
            assert max(errors) < 1e-4, block.__name__

    @pytest.mark.slow
    def test_msblock_gradients(self):
        module = self.randomized(MSBlock, 4, 1)
        x = Tensor(self.rng.standard_normal((1, 4, 8, 8)), requires_grad=True)
        weights = Tensor(self.rng.standard_normal((1, 4, 8, 8)))
        errors = gradient_errors(lambda: sum_all(module(x) * weights), [x, *module.parameters()], max_probes=4)
        assert max(errors) < 1e-4
