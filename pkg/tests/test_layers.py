"""Masked networks: forward semantics, architectures, initialization, checkpoints."""

import numpy as np
import pytest

from gumbelmask.autodiff import Tensor, backward, softmax_cross_entropy
from gumbelmask.checkpoint import load_checkpoint, save_checkpoint
from gumbelmask.errors import ConfigError, ContractError, FormatError
from gumbelmask.layers import MaskedLayer, Network, sample_topology
from gumbelmask.masks import MaskParameters, SampledTopology
from gumbelmask.models import build_conv_family, build_mlp, init_weights
from gumbelmask.rescale import RescaleState
from gumbelmask.training import MomentumSGD, RunConfig, train
from gumbelmask.verification import (
    brute_force_subnetwork_forward,
    finite_diff_grad,
    relaxed_mask_loss_reference,
)
from gumbelmask.data import make_synthetic_task


def saturated_net(sizes, seed, value=5.0, **opts):
    net = build_mlp(sizes, seed, **opts)
    for m in net.mask_parameters():
        m.m_hat.data[...] = value
    return net


class TestForward:
    def test_all_ones_masks_equal_unmasked_forward_bitwise(self):
        net = saturated_net([4, 8, 3], 0, rescale="smart", sr_init=1.0)
        bare = build_mlp([4, 8, 3], 0, mask_last_layer=True)
        for layer in bare.layers:
            layer.mask = None  # unmasked reference with identical weights
        x = np.random.default_rng(1).normal(size=(5, 4)).astype(np.float32)
        assert net.forward(x).data.tobytes() == bare.forward(x).data.tobytes()

    def test_all_zero_masks_zero_the_logits(self):
        net = saturated_net([4, 8, 3], 0, value=-5.0)
        x = np.random.default_rng(2).normal(size=(5, 4)).astype(np.float32)
        np.testing.assert_array_equal(net.forward(x).data, np.zeros((5, 3)))

    def test_topology_count_mismatch(self):
        net = build_mlp([4, 8, 3], 0)
        topo = SampledTopology((Tensor(np.ones((4, 8))),), (Tensor(np.ones((4, 8))),))
        with pytest.raises(ContractError):
            net.forward(np.zeros((1, 4), np.float32), topo)

    def test_mask_grad_on_two_layer_mlp_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        net = build_mlp([3, 8, 4], 11, rescale="smart")
        x = rng.normal(size=(6, 3)).astype(np.float32)
        y = rng.integers(0, 4, size=6)
        topo = sample_topology(net, 1.0, np.random.default_rng(4))
        backward(softmax_cross_entropy(net.forward(x, topo, relaxed=True), y))
        for li, mask in enumerate(net.mask_parameters()):
            def f(v, li=li):
                m_hats = [m.m_hat.data.astype(np.float64) for m in net.mask_parameters()]
                m_hats[li] = v
                return relaxed_mask_loss_reference(net, x, y, topo.noise, 1.0, m_hats=m_hats)

            fd = finite_diff_grad(f, mask.m_hat.data.astype(np.float64))
            np.testing.assert_allclose(mask.m_hat.grad, fd, rtol=1e-3, atol=1e-5)

    def test_threshold_forward_is_deterministic(self):
        net = build_mlp([4, 8, 3], 5)
        for m in net.mask_parameters():
            m.m_hat.data[...] = np.random.default_rng(6).normal(size=m.shape)
        x = np.random.default_rng(7).normal(size=(3, 4)).astype(np.float32)
        assert net.forward(x).data.tobytes() == net.forward(x).data.tobytes()

    def test_threshold_forward_equals_compacted_subnetwork(self):
        net = build_mlp([5, 9, 4], 13, rescale="smart")
        for m in net.mask_parameters():
            m.m_hat.data[...] = np.random.default_rng(8).normal(size=m.shape)
        x = np.random.default_rng(9).normal(size=(6, 5)).astype(np.float32)
        got = net.forward(x).data
        ref = brute_force_subnetwork_forward(net, x)
        assert np.array_equal(got, ref)

    def test_exempt_last_layer_is_not_masked(self):
        net = build_mlp([4, 8, 3], 0, mask_last_layer=False)
        assert len(net.masked_layers) == 1
        assert net.layers[-1].mask is None


class TestArchitectures:
    def test_conv2_prunable_layer_count_and_parameters(self):
        net = build_conv_family("conv2", 10, 3)
        kinds = [l.kind for l in net.masked_layers]
        assert kinds == ["conv2d", "conv2d", "dense", "dense", "dense"]
        n_params = sum(l.weights.data.size for l in net.layers)
        assert 4.2e6 < n_params < 4.4e6  # the classic conv2 is ~4.3M on 32x32x3

    @pytest.mark.parametrize("variant,n_conv", [("conv2", 2), ("conv4", 4), ("conv6", 6)])
    def test_output_shape_and_conv_depth(self, variant, n_conv):
        net = build_conv_family(variant, 10, 0)
        convs = [l for l in net.layers if l.kind == "conv2d"]
        assert len(convs) == n_conv
        x = np.random.default_rng(0).normal(size=(2, 3, 32, 32)).astype(np.float32)
        assert net.forward(x).shape == (2, 10)

    def test_same_seed_reproduces_frozen_weights(self):
        assert (
            build_conv_family("conv2", 10, 7).weight_hash()
            == build_conv_family("conv2", 10, 7).weight_hash()
        )

    def test_fc_width_follows_input_shape(self):
        small = build_conv_family("conv2", 10, 0, input_shape=(3, 8, 8))
        first_dense = [l for l in small.layers if l.kind == "dense"][0]
        assert first_dense.weights.shape == (4 * 4 * 64, 256)

    def test_unknown_variant(self):
        with pytest.raises(ConfigError):
            build_conv_family("conv8", 10, 0)


class TestInitWeights:
    def test_kaiming_std(self):
        w = init_weights((200, 500), "kaiming", np.random.default_rng(0))
        assert abs(w.std() - 0.1) < 0.002  # sqrt(2/200) = 0.1

    def test_scaled_kaiming_is_sqrt2_larger(self):
        rng = np.random.default_rng(1)
        w = init_weights((200, 500), "kaiming-scaled", rng)
        assert abs(w.std() - 0.1 * np.sqrt(2.0)) < 0.003

    def test_signed_constant_has_one_absolute_value(self):
        w = init_weights((64, 64), "signed-constant", np.random.default_rng(2))
        assert len(np.unique(np.abs(w))) == 1

    def test_conv_fan_in(self):
        w = init_weights((8, 4, 5, 5), "kaiming", np.random.default_rng(3))
        assert abs(w.std() - np.sqrt(2.0 / 100.0)) < 0.005


class TestFreezing:
    def test_weights_identical_after_training(self):
        train_ds, val_ds, _ = make_synthetic_task(128, 3)
        net = build_mlp([2, 8, 2], 3, rescale="smart")
        before = net.weight_hash()
        cfg = RunConfig(max_epochs=5, patience=5, batch_size=64, seed=3, rescale="smart")
        train(net, train_ds, val_ds, cfg)
        assert net.weight_hash() == before

    def test_frozen_weight_grad_never_populated(self):
        net = build_mlp([3, 6, 2], 0)
        topo = sample_topology(net, 1.0, np.random.default_rng(0))
        x = np.random.default_rng(1).normal(size=(4, 3)).astype(np.float32)
        backward(softmax_cross_entropy(net.forward(x, topo), np.array([0, 1, 0, 1])))
        for layer in net.layers:
            assert layer.weights.grad is None

    def test_optimizer_steps_leave_weights_untouched(self):
        net = build_mlp([3, 6, 2], 0)
        before = net.weight_hash()
        opt = MomentumSGD([([m.m_hat for m in net.mask_parameters()], 50.0)], 0.9)
        for _ in range(3):
            topo = sample_topology(net, 1.0, np.random.default_rng(0))
            x = np.random.default_rng(1).normal(size=(4, 3)).astype(np.float32)
            backward(softmax_cross_entropy(net.forward(x, topo), np.array([0, 1, 0, 1])))
            opt.step()
        assert net.weight_hash() == before


class TestCheckpoint:
    def test_roundtrip_preserves_forward_bitwise(self, tmp_path):
        net = build_conv_family("conv2", 10, 3, input_shape=(3, 8, 8), rescale="smart")
        rng = np.random.default_rng(0)
        for m in net.mask_parameters():
            m.m_hat.data[...] = rng.normal(size=m.shape).astype(np.float32)
        path = tmp_path / "ck.bin"
        save_checkpoint(path, net, config={"seed": 9, "arch": "conv2"})
        loaded, config = load_checkpoint(path)
        x = rng.normal(size=(2, 3, 8, 8)).astype(np.float32)
        assert net.forward(x).data.tobytes() == loaded.forward(x).data.tobytes()
        assert config == {"seed": 9, "arch": "conv2"}

    def test_corrupt_file_raises_format_error(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"\x07garbage")
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_layer_without_mask_roundtrips(self, tmp_path):
        net = build_mlp([4, 6, 3], 1, mask_last_layer=False)
        path = tmp_path / "ck.bin"
        save_checkpoint(path, net)
        loaded, _ = load_checkpoint(path)
        assert loaded.layers[-1].mask is None
        assert len(loaded.masked_layers) == 1


class TestMaskedLayerContracts:
    def test_mask_shape_must_match_weights(self):
        with pytest.raises(ContractError):
            MaskedLayer(
                "dense",
                np.ones((3, 4), np.float32),
                mask=MaskParameters.constant((4, 3)),
            )

    def test_bad_kind_rejected(self):
        with pytest.raises(ConfigError):
            MaskedLayer("conv3d", np.ones((2, 2), np.float32))
