"""Architecture contracts: edge normalization, node updates, heads."""

import numpy as np
import pytest

from progda import autodiff as ad
from progda.model import GraphAdaptationModel, ModelConfig


def tiny_model(seed=0, depth=1, dropout=0.0, node_width=4):
    cfg = ModelConfig(backbone_dims=(5,), gnn_depth=depth, node_width=node_width,
                      edge_hidden_width=3, disc_hidden_width=3,
                      dropout=dropout).resolved(input_dim=3, num_classes=3)
    return GraphAdaptationModel(cfg, seed=seed)


def zero_edge_net(model, layer=0):
    """Force the affinity network to output 0 for every pair."""
    lin1, lin2 = model.edge_nets[layer]
    for t in (lin1.weight, lin1.bias, lin2.weight, lin2.bias):
        t.data = np.zeros_like(t.data)


class TestBackbone:
    def test_zero_final_layer_annihilates(self):
        model = tiny_model()
        model.backbone[-1].weight.data[:] = 0.0
        model.backbone[-1].bias.data[:] = 0.0
        out = model.backbone_forward(np.random.default_rng(0).standard_normal((6, 3)))
        np.testing.assert_array_equal(out.data, np.zeros((6, 4)))

    def test_row_count_matches_batch(self):
        model = tiny_model()
        out = model.backbone_forward(np.zeros((9, 3)))
        assert out.shape == (9, 4)

    def test_eval_mode_deterministic(self):
        model = tiny_model(dropout=0.5)
        x = np.random.default_rng(1).standard_normal((5, 3))
        a = model.backbone_forward(x, training=False).data
        b = model.backbone_forward(x, training=False).data
        np.testing.assert_array_equal(a, b)

    def test_train_mode_dropout_varies(self):
        model = tiny_model(dropout=0.5)
        x = np.random.default_rng(2).standard_normal((20, 3))
        a = model.backbone_forward(x, training=True).data
        b = model.backbone_forward(x, training=True).data
        assert not np.array_equal(a, b)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ad.ShapeError, match="backbone_forward"):
            tiny_model().backbone_forward(np.zeros((4, 7)))


class TestEdgeUpdate:
    def test_single_node_gives_unit_edge(self):
        model = tiny_model()
        v = ad.Tensor(np.random.default_rng(3).standard_normal((1, 4)))
        _, e = model.edge_update(0, v)
        np.testing.assert_allclose(e.data, [[1.0]], atol=1e-12)

    def test_two_nodes_with_zeroed_net(self):
        # sigmoid(0) = 0.5 affinity everywhere; with self-loops the rows sum
        # to 2, so normalization yields [[0.75, 0.25], [0.25, 0.75]]
        model = tiny_model()
        zero_edge_net(model)
        v = ad.Tensor(np.random.default_rng(4).standard_normal((2, 4)))
        a, e = model.edge_update(0, v)
        np.testing.assert_allclose(a.data, np.full((2, 2), 0.5), atol=1e-15)
        np.testing.assert_allclose(e.data, [[0.75, 0.25], [0.25, 0.75]], atol=1e-12)

    def test_identical_features_give_equal_offdiagonals(self):
        model = tiny_model()
        v = ad.Tensor(np.tile(np.random.default_rng(5).standard_normal(4), (3, 1)))
        a, _ = model.edge_update(0, v)
        off = a.data[~np.eye(3, dtype=bool)]
        np.testing.assert_allclose(off, off[0], atol=1e-15)

    def test_invariants_on_random_node_matrices(self):
        model = tiny_model()
        rng = np.random.default_rng(6)
        for _ in range(100):
            v = ad.Tensor(rng.standard_normal((rng.integers(2, 9), 4)) * 3)
            _, e = model.edge_update(0, v)
            assert np.abs(e.data - e.data.T).max() < 1e-9
            assert e.data.min() >= 0
            radius = np.abs(np.linalg.eigvalsh(e.data)).max()
            assert abs(radius - 1.0) < 1e-6

    def test_non_finite_nodes_rejected(self):
        model = tiny_model()
        v = ad.Tensor(np.array([[np.nan, 0, 0, 0]]))
        with pytest.raises(ValueError, match="non-finite"):
            model.edge_update(0, v)


class TestNodeUpdate:
    def test_identity_on_first_half_is_fixed_point(self):
        model = tiny_model()
        lin1, lin2 = model.node_nets[0]
        lin1.weight.data = np.vstack([np.eye(4), np.zeros((4, 4))])
        lin1.bias.data[:] = 0.0
        lin2.weight.data = np.eye(4)
        lin2.bias.data[:] = 0.0
        v = ad.Tensor(np.abs(np.random.default_rng(7).standard_normal((3, 4))) + 0.1)
        e = ad.Tensor(np.eye(3))
        out = model.node_update(0, v, e)
        np.testing.assert_allclose(out.data, v.data, atol=1e-12)

    def test_single_node_self_aggregation(self):
        model = tiny_model()
        v = ad.Tensor(np.random.default_rng(8).standard_normal((1, 4)))
        _, e = model.edge_update(0, v)
        out = model.node_update(0, v, e)
        assert out.shape == (1, 4)

    def test_permutation_equivariance(self):
        model = tiny_model(seed=9)
        rng = np.random.default_rng(9)
        x = rng.standard_normal((6, 3))
        perm = rng.permutation(6)
        probs = model.classify(model.forward(x).nodes[-1]).data
        probs_perm = model.classify(model.forward(x[perm]).nodes[-1]).data
        np.testing.assert_allclose(probs_perm, probs[perm], atol=1e-9)


class TestClassifierAndDiscriminator:
    def test_probability_rows_sum_to_one(self):
        model = tiny_model()
        state = model.forward(np.random.default_rng(10).standard_normal((5, 3)))
        probs = model.classify(state.nodes[-1])
        np.testing.assert_allclose(probs.data.sum(axis=1), 1.0, atol=1e-12)

    def test_zero_logits_give_uniform(self):
        model = tiny_model()
        model.classifier.weight.data[:] = 0.0
        model.classifier.bias.data[:] = 0.0
        state = model.forward(np.random.default_rng(11).standard_normal((4, 3)))
        np.testing.assert_allclose(model.classify(state.nodes[-1]).data, 1 / 3,
                                   atol=1e-15)

    def test_argmax_invariant_under_logit_shift(self):
        model = tiny_model(seed=12)
        state = model.forward(np.random.default_rng(12).standard_normal((6, 3)))
        base = model.classify(state.nodes[-1]).data.argmax(axis=1)
        model.classifier.bias.data += 5.0
        shifted = model.classify(state.nodes[-1]).data.argmax(axis=1)
        np.testing.assert_array_equal(base, shifted)

    def test_discriminator_output_range(self):
        model = tiny_model()
        v0 = model.forward(np.random.default_rng(13).standard_normal((8, 3))).nodes[0]
        d = model.discriminate(v0).data
        assert ((d > 0) & (d < 1)).all()

    def test_zeroed_discriminator_outputs_half(self):
        model = tiny_model()
        for t in (model.disc[0].weight, model.disc[0].bias,
                  model.disc[1].weight, model.disc[1].bias):
            t.data[:] = 0.0
        v0 = model.forward(np.random.default_rng(14).standard_normal((4, 3))).nodes[0]
        np.testing.assert_allclose(model.discriminate(v0).data, 0.5, atol=1e-15)

    def test_reversal_flips_backbone_gradient_sign(self):
        model = tiny_model(seed=15)
        x = np.random.default_rng(15).standard_normal((5, 3))

        def backbone_grads(reverse):
            for p in model.params.values():
                p.grad = None
            v0 = model.backbone_forward(x)
            loss = ad.mean(ad.log(ad.clip(model.discriminate(v0, reverse=reverse),
                                          1e-7, 1 - 1e-7)))
            loss.backward()
            return {k: v.grad.copy() for k, v in model.backbone_parameters().items()}

        plain = backbone_grads(reverse=False)
        reversed_ = backbone_grads(reverse=True)
        for k in plain:
            np.testing.assert_allclose(reversed_[k], -plain[k], atol=1e-12)


class TestForwardStructure:
    def test_depth_one_runs_single_update_pair(self):
        model = tiny_model(depth=1)
        state = model.forward(np.random.default_rng(16).standard_normal((4, 3)))
        assert len(state.edges) == 1
        assert len(state.affinities) == 1
        assert len(state.nodes) == 2

    def test_depth_zero_skips_graph_layers(self):
        model = tiny_model(depth=1)
        state = model.forward(np.random.default_rng(17).standard_normal((4, 3)),
                              depth=0)
        assert state.edges == [] and len(state.nodes) == 1
        assert len(model.classify_layers(state)) == 1

    def test_state_roundtrip_bit_exact(self):
        model = tiny_model(seed=18)
        x = np.random.default_rng(18).standard_normal((5, 3))
        before = model.classify(model.forward(x).nodes[-1]).data
        arrays = model.state_arrays()
        other = tiny_model(seed=99)
        other.load_state_arrays(arrays)
        after = other.classify(other.forward(x).nodes[-1]).data
        np.testing.assert_array_equal(before, after)
