import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hiercons.gradcheck import numeric_grad, relative_error
from hiercons.heads import Backbone, BackboneConfig, forward_backbone, forward_heads, init_heads
from hiercons.hierarchy import balanced_hierarchy, parse_hierarchy
from hiercons.model import HierarchicalModel
from hiercons.numerics import autodiff as ad
from hiercons.numerics import kernels
from hiercons.numerics.autodiff import Tensor


class TestBackbone:
    def test_zero_depth_is_identity(self):
        bb = Backbone.init(BackboneConfig(5, 5), np.random.default_rng(0))
        x = np.random.default_rng(1).normal(size=(4, 5))
        np.testing.assert_array_equal(forward_backbone(bb, x).data, x)
        assert bb.parameters() == []

    def test_seeded_output_is_bitwise_stable(self):
        cfg = BackboneConfig(6, 4, (9, 7))
        x = np.random.default_rng(2).normal(size=(3, 6))
        a = forward_backbone(Backbone.init(cfg, np.random.default_rng(11)), x).data
        b = forward_backbone(Backbone.init(cfg, np.random.default_rng(11)), x).data
        assert a.tobytes() == b.tobytes()

    @pytest.mark.parametrize("nonlinearity", ["tanh", "softplus"])
    def test_mean_feature_gradient_matches_fd(self, nonlinearity):
        bb = Backbone.init(BackboneConfig(4, 3, (5,), nonlinearity), np.random.default_rng(3))
        x = Tensor(np.random.default_rng(4).normal(size=(6, 4)))
        params = bb.parameters()
        grads = ad.backward(ad.mean(forward_backbone(bb, x)), params)
        f = lambda: float(np.mean(forward_backbone(bb, x).data))
        for p, g in zip(params, grads):
            assert relative_error(g, numeric_grad(f, p.data)) <= 1e-5, p.name

    def test_width_mismatch(self):
        bb = Backbone.init(BackboneConfig(4, 3), np.random.default_rng(0))
        with pytest.raises(ValueError):
            forward_backbone(bb, np.zeros((2, 3)))

    @pytest.mark.parametrize("kwargs", [dict(input_dim=0, feature_dim=3), dict(input_dim=3, feature_dim=3, hidden=(0,)),
                                        dict(input_dim=3, feature_dim=3, nonlinearity="relu")])
    def test_invalid_config(self, kwargs):
        with pytest.raises(ValueError):
            BackboneConfig(**kwargs)

    def test_init_range(self):
        bb = Backbone.init(BackboneConfig(16, 4), np.random.default_rng(0))
        w, b = bb.parameters()
        assert np.all(np.abs(w.data) <= 0.25)
        np.testing.assert_array_equal(b.data, 0.0)


class TestHeads:
    def test_zero_parameters_give_uniform(self):
        spec = balanced_hierarchy([3, 7, 12])
        heads = init_heads(spec, 5, np.random.default_rng(0))
        for head in heads:
            for p in head.parameters():
                p.data = np.zeros_like(p.data)
        logits = forward_heads(Tensor(np.random.default_rng(1).normal(size=(2, 5))), heads, spec)
        for lg, k in zip(logits, spec.sizes):
            np.testing.assert_allclose(kernels.log_softmax(lg.data), -np.log(k), atol=1e-15)

    def test_shapes_for_three_seven_twelve(self):
        spec = balanced_hierarchy([3, 7, 12])
        heads = init_heads(spec, 8, np.random.default_rng(0))
        assert [g.shape for g in forward_heads(Tensor(np.ones((1, 8))), heads, spec)] == [(1, 3), (1, 7), (1, 12)]

    def test_matches_naive_loop(self):
        spec = balanced_hierarchy([2, 5])
        rng = np.random.default_rng(5)
        heads = init_heads(spec, 4, rng)
        for head in heads:
            head.layers[0].bias.data = rng.normal(size=head.width)
        feats = rng.normal(size=(3, 4))
        for head, lg in zip(heads, forward_heads(Tensor(feats), heads, spec)):
            W, b = head.layers[0].weight.data, head.layers[0].bias.data
            naive = np.zeros((3, head.width))
            for n in range(3):
                for j in range(head.width):
                    naive[n, j] = b[j]
                    for i in range(4):
                        naive[n, j] += feats[n, i] * W[i, j]
            np.testing.assert_allclose(lg.data, naive, atol=1e-14)

    def test_deeper_heads(self):
        spec = balanced_hierarchy([2, 4])
        heads = init_heads(spec, 4, np.random.default_rng(0), hidden=(6,))
        assert [len(h.layers) for h in heads] == [2, 2]
        assert [g.shape for g in forward_heads(Tensor(np.ones((2, 4))), heads, spec)] == [(2, 2), (2, 4)]

    def test_level_mismatch(self):
        spec = balanced_hierarchy([2, 4])
        heads = init_heads(spec, 3, np.random.default_rng(0))
        with pytest.raises(ValueError):
            forward_heads(Tensor(np.ones((1, 3))), heads[:1], spec)
        with pytest.raises(ValueError):
            forward_heads(Tensor(np.ones((1, 3))), heads, balanced_hierarchy([2, 5]))

    def test_backbone_parameter_count_independent_of_levels(self):
        cfg = BackboneConfig(6, 8, (10,))
        flat = HierarchicalModel.create(parse_hierarchy({"levels": [[f"c{i}" for i in range(12)]]}), cfg)
        hier = HierarchicalModel.create(balanced_hierarchy([3, 7, 12]), cfg)
        count = lambda m: sum(p.data.size for p in m.backbone.parameters())
        assert count(flat) == count(hier)
        assert len(hier.heads) == 3

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_softmax_rows_are_distributions(self, seed):
        rng = np.random.default_rng(seed)
        spec = balanced_hierarchy([2, 3, 6])
        model = HierarchicalModel.create(spec, BackboneConfig(4, 5, (3,)), seed % 1000)
        for lg in model.forward(Tensor(rng.normal(scale=5, size=(7, 4)))):
            p = np.exp(kernels.log_softmax(lg.data))
            assert np.all(p >= 0)
            np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
