"""
Unit tests for local and global density guidance.
"""
import math

import numpy as np
import pytest

from lgdc.core.exceptions import InvalidHyperparameter, ShapeMismatch
from lgdc.models.backbone import FeatureMap
from lgdc.models.guidance import (
    AttentionParams,
    BranchParams,
    GlobalDensityToken,
    GlobalGuidance,
    LocalGuidance,
    attend,
    encode_global_token,
    global_guide,
    local_guide,
)
from lgdc.models.mldl import LocalDensitySimilarityMatrix, SupportDensityFeature
from lgdc.models.parameters import ParameterStore
from lgdc.ndcore import Tensor, backward


def random_branch(rng, channels: int, dilation: int = 2) -> BranchParams:
    def conv(c_out, c_in):
        return Tensor(rng.normal(scale=0.3, size=(c_out, c_in, 3, 3)), requires_grad=True)

    def bias(c_out):
        return Tensor(rng.normal(scale=0.1, size=(c_out, 1, 1)), requires_grad=True)

    return BranchParams(
        conv(channels, channels + 1),
        bias(channels),
        conv(channels, channels),
        bias(channels),
        conv(channels, channels),
        bias(channels),
        dilation,
    )


def random_attention(rng, channels: int, dim: int, zero_psi: bool = False) -> AttentionParams:
    def mat(rows, cols):
        return Tensor(rng.normal(scale=0.5, size=(rows, cols)), requires_grad=True)

    psi_w = np.zeros((dim, channels)) if zero_psi else rng.normal(scale=0.5, size=(dim, channels))
    psi_b = np.zeros((1, channels)) if zero_psi else rng.normal(scale=0.1, size=(1, channels))
    return AttentionParams(
        mat(channels, dim),
        mat(channels, dim),
        mat(channels, dim),
        Tensor(psi_w, requires_grad=True),
        Tensor(psi_b, requires_grad=True),
    )


def loop_attention(q: np.ndarray, cells: np.ndarray, p: AttentionParams) -> tuple[np.ndarray, np.ndarray]:
    """Explicit per-cell attention for a single 1 x C token."""
    wq, wk, wv = p.wq.data, p.wk.data, p.wv.data
    query = q[0] @ wq
    scores = np.array([query @ (cell @ wk) for cell in cells]) / math.sqrt(wq.shape[1])
    weights = np.exp(scores - scores.max())
    weights /= weights.sum()
    pooled = sum(w * (cell @ wv) for w, cell in zip(weights, cells))
    return q[0] + pooled @ p.psi_weight.data + p.psi_bias.data[0], weights


class TestGlobalToken:
    """Tests for the pooled support token."""

    def test_zero_feature(self):
        """A zero support density feature gives a zero token."""
        token = encode_global_token(SupportDensityFeature(Tensor(np.zeros((5, 3, 3)))))

        assert token.q.shape == (1, 5)
        assert not token.q.data.any()

    def test_single_cell(self, rng):
        """One nonzero cell is copied into the token."""
        data = np.zeros((4, 3, 3))
        data[:, 1, 2] = rng.normal(size=4)

        token = encode_global_token(SupportDensityFeature(Tensor(data)))

        np.testing.assert_array_equal(token.q.data[0], data[:, 1, 2])

    def test_loop_oracle(self, rng):
        """Equals a channel-wise spatial loop sum."""
        data = rng.normal(size=(3, 4, 5))

        token = encode_global_token(SupportDensityFeature(Tensor(data)))

        for c in range(3):
            expected = sum(data[c, y, x] for y in range(4) for x in range(5))
            assert abs(token.q.data[0, c] - expected) < 1e-12


class TestLocalGuide:
    """Tests for one local guidance branch."""

    @pytest.mark.parametrize("dilation", [1, 2, 3])
    def test_shape_preserved(self, rng, dilation):
        """Output spatial dims equal input dims for every dilation."""
        features = FeatureMap(Tensor(rng.normal(size=(4, 6, 5))), "query", 4)
        plane = Tensor(rng.uniform(-1, 1, size=(1, 6, 5)))

        out = local_guide(plane, features, random_branch(rng, 4, dilation))

        assert out.data.shape == (4, 6, 5)
        assert out.downsample_factor == 4

    def test_masked_plane_channel(self, rng):
        """With zero weights on the plane channel the output ignores the similarity."""
        features = FeatureMap(Tensor(rng.normal(size=(3, 5, 5))), "query", 1)
        params = random_branch(rng, 3)
        params.conv1_weight.data[:, 0] = 0.0

        a = local_guide(Tensor(np.zeros((1, 5, 5))), features, params)
        b = local_guide(Tensor(rng.uniform(-1, 1, size=(1, 5, 5))), features, params)

        np.testing.assert_array_equal(a.data.data, b.data.data)

    def test_gradient_wrt_plane(self, rng, finite_difference, rel_err):
        """d sum(output) / d plane matches central differences."""
        features = FeatureMap(Tensor(rng.normal(size=(3, 5, 5))), "query", 1)
        params = random_branch(rng, 3)
        plane = Tensor(rng.uniform(-1, 1, size=(1, 5, 5)), requires_grad=True)

        backward(local_guide(plane, features, params).data.sum())

        def loss():
            return float(local_guide(Tensor(plane.data), features, params).data.data.sum())

        for index in [(0, 0, 0), (0, 2, 3), (0, 4, 4), (0, 1, 2)]:
            numeric = finite_difference(loss, plane, index)
            assert rel_err(plane.grad[index], numeric) < 1e-4

    def test_plane_shape_mismatch(self, rng):
        """The plane must match the feature grid."""
        features = FeatureMap(Tensor(rng.normal(size=(3, 5, 5))), "query", 1)

        with pytest.raises(ShapeMismatch):
            local_guide(Tensor(np.zeros((1, 4, 5))), features, random_branch(rng, 3))


class TestLocalGuidance:
    """Tests for the multi-branch local guidance module."""

    def test_sum_of_branches(self, rng):
        """The module output is the elementwise sum of its branches."""
        store = ParameterStore()
        module = LocalGuidance(3, 2, store, rng)
        features = FeatureMap(Tensor(rng.normal(size=(3, 4, 4))), "query", 1)
        planes = [Tensor(rng.uniform(-1, 1, size=(1, 4, 4))) for _ in range(2)]
        ldsm = LocalDensitySimilarityMatrix(Tensor(np.concatenate([p.data for p in planes])), planes)

        out = module(ldsm, features)

        expected = sum(local_guide(p, features, module.branch(v)).data.data for v, p in enumerate(planes))
        np.testing.assert_allclose(out.data.data, expected, atol=1e-12)

    def test_parameter_layout(self, rng):
        """Separate branches own separate parameters; shared mode owns one set."""
        separate, shared = ParameterStore(), ParameterStore()
        LocalGuidance(3, 3, separate, rng)
        LocalGuidance(3, 3, shared, rng, shared=True)

        assert "guidance.local.2.conv3.weight" in separate
        assert len(separate) == 3 * len(shared)
        assert "guidance.local.shared.conv1.weight" in shared

    def test_plane_count_mismatch(self, rng):
        """The module needs one plane per prototype."""
        module = LocalGuidance(3, 3, ParameterStore(), rng)
        planes = [Tensor(np.zeros((1, 2, 2)))]

        with pytest.raises(ShapeMismatch):
            module(LocalDensitySimilarityMatrix(Tensor(np.zeros((1, 2, 2))), planes), FeatureMap(Tensor(np.zeros((3, 2, 2))), "query", 1))

    def test_invalid_dilation(self, rng):
        """Dilation below one is rejected."""
        with pytest.raises(InvalidHyperparameter):
            LocalGuidance(3, 3, ParameterStore(), rng, dilation=0)


class TestGlobalGuide:
    """Tests for single-token cross-attention."""

    def test_loop_oracle(self, rng):
        """Attention output and weights match an explicit loop."""
        params = random_attention(rng, 5, 4)
        q = rng.normal(size=(1, 5))
        cells = rng.normal(size=(12, 5))

        out, weights = attend(GlobalDensityToken(Tensor(q)), Tensor(cells), params)

        expected_out, expected_weights = loop_attention(q, cells, params)
        assert abs(weights.data.sum() - 1.0) < 1e-12
        np.testing.assert_allclose(weights.data[0], expected_weights, atol=1e-12)
        np.testing.assert_allclose(out.data[0], expected_out, atol=1e-10)

    def test_single_cell(self, rng):
        """One cell gets weight exactly one."""
        params = random_attention(rng, 3, 3)
        q = rng.normal(size=(1, 3))
        cells = rng.normal(size=(1, 3))

        out, weights = attend(GlobalDensityToken(Tensor(q)), Tensor(cells), params)

        assert weights.data[0, 0] == 1.0
        expected = q + (cells @ params.wv.data) @ params.psi_weight.data + params.psi_bias.data
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_identical_cells_uniform(self, rng):
        """Identical cells share the attention evenly."""
        params = random_attention(rng, 4, 4)
        cells = np.repeat(rng.normal(size=(1, 4)), 9, axis=0)

        _, weights = attend(GlobalDensityToken(Tensor(rng.normal(size=(1, 4)))), Tensor(cells), params)

        np.testing.assert_allclose(weights.data, np.full((1, 9), 1 / 9), atol=1e-12)

    def test_residual_identity(self, rng):
        """With psi zeroed the output is the map plus the broadcast token."""
        params = random_attention(rng, 4, 3, zero_psi=True)
        features = FeatureMap(Tensor(rng.normal(size=(4, 3, 5))), "query", 1)
        q = rng.normal(size=(1, 4))

        out = global_guide(GlobalDensityToken(Tensor(q)), features, params)

        np.testing.assert_array_equal(out.data.data, features.data.data + q[0][:, None, None])

    def test_permutation_equivariance(self, rng):
        """Permuting cells permutes the output and leaves the attended vector unchanged."""
        params = random_attention(rng, 4, 4)
        token = GlobalDensityToken(Tensor(rng.normal(size=(1, 4))))
        data = rng.normal(size=(4, 3, 4))
        perm = rng.permutation(12)
        permuted = data.reshape(4, 12)[:, perm].reshape(4, 3, 4)

        a = global_guide(token, FeatureMap(Tensor(data), "query", 1), params).data.data
        b = global_guide(token, FeatureMap(Tensor(permuted), "query", 1), params).data.data
        out_a, _ = attend(token, Tensor(data.reshape(4, 12).T), params)
        out_b, _ = attend(token, Tensor(permuted.reshape(4, 12).T), params)

        np.testing.assert_allclose(b.reshape(4, 12), a.reshape(4, 12)[:, perm], atol=1e-10)
        np.testing.assert_allclose(out_a.data, out_b.data, atol=1e-10)

    def test_tiled_queries(self, rng):
        """The per-cell query variant keeps the map shape and gives rows their own output."""
        params = random_attention(rng, 3, 3)
        features = FeatureMap(Tensor(rng.normal(size=(3, 2, 3))), "query", 1)
        token = GlobalDensityToken(Tensor(rng.normal(size=(1, 3))))

        tiled = global_guide(token, features, params, tile_q=True)
        broadcast = global_guide(token, features, params)

        assert tiled.data.shape == (3, 2, 3)
        assert not np.allclose(tiled.data.data, broadcast.data.data)

    def test_channel_mismatch(self, rng):
        """Attention width must match the feature channels."""
        params = random_attention(rng, 4, 4)

        with pytest.raises(ShapeMismatch):
            global_guide(GlobalDensityToken(Tensor(np.zeros((1, 4)))), FeatureMap(Tensor(np.zeros((3, 2, 2))), "query", 1), params)

    def test_module_parameters(self, rng):
        """The module registers its projections and psi under stable names."""
        store = ParameterStore()
        module = GlobalGuidance(6, store, rng, attention_dim=4)

        assert module.params.dim == 4
        assert module.params.channels == 6
        assert store["guidance.global.psi.bias"].shape == (1, 6)
