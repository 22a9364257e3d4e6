"""
Tests for network graphs, builders and the graph executor
"""

import os
import sys

import numpy as np
import pytest

# Add project root to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from src.engine.gradcheck import numerical_gradient, relative_error
from src.engine.rng import DROPOUT_STREAM, make_rng
from src.models.accounting import count_parameters
from src.models.builders import (
    LOCALIZATION_ARCH,
    SCN_LOCAL_ARCH,
    SCN_SPATIAL_ARCH,
    ArchSpec,
    build_scn,
    build_unet,
    unet_parameter_formula,
)
from src.models.executor import backward, forward
from src.models.network import GraphError, Network, Node, infer_shapes

TINY = ArchSpec(levels=2, filters=2, in_channels=1, out_channels=2, dropout_rate=0.0)


class TestBuilders:
    """Tests for the U-Net and SCN builders."""

    def test_localization_parameter_count(self):
        """Test the localization U-Net size."""
        assert count_parameters(build_unet(LOCALIZATION_ARCH)) == 637_474

    def test_scn_parameter_count(self):
        """Test the SCN size and its distance from the published figure."""
        params = count_parameters(build_scn(SCN_LOCAL_ARCH, SCN_SPATIAL_ARCH))
        assert params == 1_223_914
        assert abs(params - 1_270_090) / 1_270_090 < 0.15

    def test_scn_with_published_spatial_kernel(self):
        """Test the SCN size when the spatial U-Net uses 3x3x3 kernels."""
        spatial = SCN_SPATIAL_ARCH.model_copy(update={"kernel_size": 3})
        assert count_parameters(build_scn(SCN_LOCAL_ARCH, spatial)) == 764_490

    def test_compact_hand_count(self):
        """Test the hand-countable single-level, single-filter U-Net."""
        spec = ArchSpec(levels=1, filters=1, in_channels=1, out_channels=1,
                        final_kernel_size=3, deepest_expanding_block=False)
        net = build_unet(spec)
        assert count_parameters(net) == 84
        assert unet_parameter_formula(spec) == 84

    def test_default_arrangement_single_level(self):
        """Test that the default arrangement adds the deepest expanding block and a 1x1x1 output."""
        spec = ArchSpec(levels=1, filters=1, in_channels=1, out_channels=1)
        assert count_parameters(build_unet(spec)) == 28 + 28 + 2 * 28 + 2
        assert unet_parameter_formula(spec) == 114

    def test_formula_matches_graph(self):
        """Test the closed form against built graphs."""
        for spec in (
            LOCALIZATION_ARCH,
            SCN_SPATIAL_ARCH,
            ArchSpec(levels=3, filters=4, in_channels=2, out_channels=3),
            ArchSpec(levels=2, filters=5, final_kernel_size=3, deepest_expanding_block=False),
        ):
            assert count_parameters(build_unet(spec)) == unet_parameter_formula(spec)

    def test_divisors(self):
        """Test the input divisibility of both networks."""
        assert build_unet(LOCALIZATION_ARCH).divisor == 16
        assert build_scn().divisor == 32

    def test_outputs(self):
        """Test output heads and shapes."""
        unet = build_unet(TINY)
        assert set(unet.outputs) == {"final", "logits"}
        assert infer_shapes(unet, (4, 4, 8))[unet.outputs["final"]] == (2, 4, 4, 8)
        scn = build_scn(TINY, TINY, labels=3, spatial_factor=2)
        assert set(scn.outputs) == {"final", "local", "spatial"}
        shapes = infer_shapes(scn, (8, 8, 8))
        for head in ("final", "local", "spatial"):
            assert shapes[scn.outputs[head]] == (3, 8, 8, 8)

    def test_seeded_initialization(self):
        """Test that weights depend only on the seed."""
        a, b, c = build_unet(TINY, seed=3), build_unet(TINY, seed=3), build_unet(TINY, seed=4)
        assert list(a.weights) == list(b.weights)
        assert all(np.array_equal(a.weights[k], b.weights[k]) for k in a.weights)
        assert not all(np.array_equal(a.weights[k], c.weights[k]) for k in a.weights)


class TestNetwork:
    """Tests for graph validation and shape inference."""

    def _chain(self) -> Network:
        nodes = [
            Node("image", "input", (), {"channels": 1}),
            Node("conv", "conv", ("image",), {"kernel": 1, "in_channels": 1, "out_channels": 1,
                                              "weight": "w", "bias": "b"}),
        ]
        return Network(nodes, {"w": np.ones((1, 1, 1, 1, 1)), "b": np.zeros(1)}, {"final": "conv"})

    def test_valid_chain(self):
        """Test a minimal valid graph."""
        assert self._chain().consumers()["image"] == ["conv"]

    def test_unreferenced_weight(self):
        """Test that extra weights are rejected."""
        net = self._chain()
        with pytest.raises(GraphError):
            Network(net.nodes, dict(net.weights, extra=np.zeros(1)), net.outputs)

    def test_read_before_write(self):
        """Test that nodes must come after their inputs."""
        nodes = [Node("image", "input", (), {"channels": 1}), Node("act", "sigmoid", ("later",))]
        with pytest.raises(GraphError):
            Network(nodes, {}, {"final": "act"})

    def test_indivisible_dims(self):
        """Test that inputs not divisible by the network divisor are rejected."""
        with pytest.raises(GraphError):
            infer_shapes(build_unet(TINY), (4, 4, 5))

    def test_copy_changes_dtype(self):
        """Test float64 copies for verification."""
        net = build_unet(TINY).copy(np.float64)
        assert all(w.dtype == np.float64 for w in net.weights.values())


class TestExecutor:
    """Tests for forward and backward execution."""

    def test_forward_probabilities(self):
        """Test that the softmax head is a distribution and FLOPs are counted."""
        net = build_unet(TINY)
        x = np.random.default_rng(0).normal(size=(1, 4, 4, 4)).astype(np.float32)
        result = forward(net, x)
        assert result.outputs["final"].shape == (2, 4, 4, 4)
        np.testing.assert_allclose(result.outputs["final"].sum(axis=0), 1.0, atol=1e-6)
        assert result.flops > 0
        assert result.values == {}

    def test_wrong_input_channels(self):
        """Test that the input channel count is checked."""
        with pytest.raises(GraphError):
            forward(build_unet(TINY), np.zeros((2, 4, 4, 4), dtype=np.float32))

    def test_training_dropout_is_seeded(self):
        """Test that training forwards with the same stream agree."""
        net = build_unet(ArchSpec(levels=2, filters=2, dropout_rate=0.5))
        x = np.ones((1, 4, 4, 4), dtype=np.float32)
        a = forward(net, x, training=True, rng=make_rng(0, DROPOUT_STREAM, 1))
        b = forward(net, x, training=True, rng=make_rng(0, DROPOUT_STREAM, 1))
        np.testing.assert_array_equal(a.outputs["final"], b.outputs["final"])
        assert a.masks

    def test_backward_needs_training_result(self):
        """Test that inference results cannot be differentiated."""
        net = build_unet(TINY)
        result = forward(net, np.zeros((1, 4, 4, 4), dtype=np.float32))
        with pytest.raises(GraphError):
            backward(net, result, {"final": np.zeros((2, 4, 4, 4))})

    def _loss(self, net, x, heads):
        result = forward(net, x, training=True, rng=make_rng(0, DROPOUT_STREAM))
        return float(sum(np.sum(result.outputs[h] * r) for h, r in heads.items())), result

    def _check_network(self, net: Network, x: np.ndarray, heads, names):
        _, result = self._loss(net, x, heads)
        grads = backward(net, result, heads)

        numeric = numerical_gradient(lambda v: self._loss(net, v, heads)[0], x)
        assert relative_error(grads["input"], numeric) < 1e-5

        for name in names:
            original = net.weights[name].copy()

            def f(w):
                net.weights[name] = w
                return self._loss(net, x, heads)[0]

            numeric = numerical_gradient(f, original)
            net.weights[name] = original
            assert relative_error(grads[name], numeric) < 1e-5

    def test_unet_gradients(self):
        """Test end-to-end U-Net gradients in float64."""
        net = build_unet(TINY, seed=1).copy(np.float64)
        rng = np.random.default_rng(1)
        for name in net.weights:
            if name.endswith("/bias"):
                net.weights[name] = rng.normal(scale=0.1, size=net.weights[name].shape)
        x = rng.normal(size=(1, 4, 4, 4))
        heads = {"final": rng.normal(size=(2, 4, 4, 4)), "logits": rng.normal(size=(2, 4, 4, 4))}
        self._check_network(net, x, heads, ["unet/contracting0/conv0/kernel", "unet/output/kernel", "unet/output/bias"])

    def test_scn_gradients(self):
        """Test end-to-end SCN gradients through all three heads in float64."""
        spec = ArchSpec(levels=1, filters=2, dropout_rate=0.0)
        net = build_scn(spec, spec, labels=3, spatial_factor=2, seed=2).copy(np.float64)
        rng = np.random.default_rng(2)
        x = rng.normal(size=(1, 4, 4, 4))
        heads = {name: rng.normal(size=(3, 4, 4, 4)) for name in ("final", "local", "spatial")}
        self._check_network(net, x, heads, ["local/contracting0/conv0/kernel", "spatial/output/kernel"])

    def test_saturated_spatial_response_keeps_local_argmax(self):
        """Test that a spatial response of 1 everywhere leaves the local label decision unchanged."""
        spec = ArchSpec(levels=1, filters=2, dropout_rate=0.0)
        net = build_scn(spec, spec, labels=3, spatial_factor=2, seed=5).copy(np.float64)
        net.weights["spatial/output/kernel"][...] = 0.0
        net.weights["spatial/output/bias"][...] = 50.0
        x = np.random.default_rng(5).normal(size=(1, 4, 4, 4))

        result = forward(net, x)
        np.testing.assert_array_equal(result.outputs["spatial"], 50.0)
        local = result.outputs["local"]
        np.testing.assert_array_equal(np.argmax(result.outputs["final"], axis=0), np.argmax(local, axis=0))
        expected = np.exp(1.0 / (1.0 + np.exp(-local)))
        np.testing.assert_allclose(result.outputs["final"], expected / expected.sum(axis=0), rtol=1e-12)
