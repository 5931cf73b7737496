import numpy as np
import pytest

from whnn.autodiff import Tensor, grad_check, ops
from whnn.hypergraph import Hypergraph, add_self_loops, synth_two_community
from whnn.model import (
    ConfigError,
    ModelConfig,
    WhnnLayer,
    WhnnModel,
    init_params,
    prepare_hypergraph,
)
from whnn.swp import SWPAggregator
from whnn.verify import toy_hypergraph


def small(**kw):
    base = dict(MLP_hid=4, Cls_hid=4, num_ref=3, dropout=0.0, in_dropout=0.0)
    base.update(kw)
    return ModelConfig(**base)


def layer(cfg, seed=0):
    m = WhnnLayer(cfg, np.random.default_rng(seed))
    m.eval()
    return m


def propagate(lay, X, h):
    node_neigh = h.nodes
    edge_neigh = h.edges
    z = lay.edge_aggregator(lay.node_encoder(X, edge_neigh), edge_neigh.offsets)
    return lay.node_aggregator(lay.edge_encoder(z, node_neigh), node_neigh.offsets)


class TestModelConfig:
    def test_defaults(self):
        cfg = ModelConfig()
        assert cfg.alpha == 0.5 and cfg.layers == 1
        assert cfg.num_slices == cfg.hidden == cfg.MLP_hid

    @pytest.mark.parametrize("alias,learnable", [("FPSWE", False), ("LPSWE", True),
                                                 ("SWP-fixed", False), ("SWP-learnable", True)])
    def test_aliases(self, alias, learnable):
        cfg = ModelConfig(aggregator=alias)
        assert cfg.aggregator == "SWP" and cfg.learnable_W is learnable

    def test_label(self):
        assert ModelConfig(aggregator="LPSWE").aggregator_label == "LPSWE"
        assert ModelConfig(aggregator="PMA").aggregator_label == "PMA"

    @pytest.mark.parametrize("bad", [dict(encoder="GCN"), dict(num_ref=0), dict(dropout=1.0),
                                     dict(MLP_hid=6, heads=4), dict(alpha=1.5), dict(MLP2_layers=2)])
    def test_rejects(self, bad):
        with pytest.raises(ConfigError):
            ModelConfig(**bad)

    def test_dict_round_trip(self):
        cfg = small(encoder="SAB", aggregator="LPSWE")
        assert ModelConfig(**cfg.to_dict()) == cfg


class TestLayer:
    def setup_method(self):
        self.h = toy_hypergraph()
        self.X = Tensor(np.random.default_rng(0).normal(size=(6, 4)))

    def test_alpha_zero_identity(self):
        lay = layer(small(alpha=0.0))
        np.testing.assert_array_equal(lay(self.X, self.h).data, self.X.data)

    def test_alpha_one_propagated_only(self):
        lay = layer(small(alpha=1.0))
        np.testing.assert_array_equal(lay(self.X, self.h).data, propagate(lay, self.X, self.h).data)

    def test_default_midpoint(self):
        lay = layer(small())
        x = propagate(lay, self.X, self.h).data
        np.testing.assert_allclose(lay(self.X, self.h).data, 0.5 * (x + self.X.data), rtol=0, atol=1e-15)

    def test_stages_have_separate_parameters(self):
        lay = layer(small())
        assert lay.edge_aggregator.theta is not lay.node_aggregator.theta
        assert not np.array_equal(lay.edge_aggregator.theta.data, lay.node_aggregator.theta.data)

    def test_mlp2(self):
        lay = layer(small(MLP2_layers=1))
        assert lay.mlp2 is not None
        assert lay(self.X, self.h).shape == (6, 4)

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigError):
            layer(small())(Tensor(np.ones((6, 5))), self.h)

    @pytest.mark.parametrize("encoder", ["MLP", "SAB", "ISAB"])
    @pytest.mark.parametrize("aggregator", ["FPSWE", "LPSWE", "Mean", "DeepSets", "PMA"])
    def test_all_combinations_run(self, encoder, aggregator):
        lay = layer(small(encoder=encoder, aggregator=aggregator, heads=2))
        assert np.all(np.isfinite(lay(self.X, self.h).data))

    def test_mean_identity_matches_dense_average(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            n, m = int(rng.integers(2, 21)), int(rng.integers(1, 15))
            edges = [sorted(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False).tolist())
                     for _ in range(m)]
            h = add_self_loops(Hypergraph(n, edges, allow_isolated=True))
            H = np.zeros((n, h.num_edges))
            for j, e in enumerate(h.edge_members):
                H[e, j] = 1.0
            X = rng.normal(size=(n, 4))
            Z = (H.T @ X) / H.sum(axis=0)[:, None]
            want = 0.5 * (H @ Z) / H.sum(axis=1)[:, None] + 0.5 * X
            lay = layer(small(aggregator="Mean", MLP_layers=0))
            np.testing.assert_allclose(lay(Tensor(X), h).data, want, atol=1e-9)


class TestModel:
    def test_output_shape(self):
        model = init_params(small(), 3, 5, seed=0)
        model.eval()
        assert model(np.ones((6, 3)), add_self_loops(toy_hypergraph())).shape == (6, 5)

    def test_eval_deterministic(self):
        model = init_params(small(dropout=0.5, in_dropout=0.2), 3, 2, seed=0)
        model.eval()
        X = np.random.default_rng(0).normal(size=(6, 3))
        h = add_self_loops(toy_hypergraph())
        np.testing.assert_array_equal(model(X, h).data, model(X, h).data)

    def test_train_mode_uses_dropout(self):
        model = init_params(small(dropout=0.5, in_dropout=0.2), 3, 2, seed=0)
        X = np.random.default_rng(0).normal(size=(6, 3))
        h = add_self_loops(toy_hypergraph())
        assert not np.array_equal(model(X, h).data, model(X, h).data)

    @pytest.mark.parametrize("aggregator", ["Mean", "DeepSets"])
    def test_zero_input_bias_free_zero_logits(self, aggregator):
        model = init_params(small(aggregator=aggregator, bias=False), 3, 4, seed=0)
        model.eval()
        out = model(np.zeros((6, 3)), add_self_loops(toy_hypergraph())).data
        np.testing.assert_array_equal(out, 0.0)

    def test_zero_input_swp_is_offset_by_reference(self):
        # the reference samples are compared with an all-zero neighbourhood,
        # so SWP pooling is not linear and the logits do not vanish
        model = init_params(small(bias=False), 3, 4, seed=0)
        model.eval()
        assert np.abs(model(np.zeros((6, 3)), add_self_loops(toy_hypergraph())).data).max() > 0

    @pytest.mark.parametrize("encoder", ["MLP", "SAB"])
    @pytest.mark.parametrize("aggregator", ["FPSWE", "LPSWE"])
    def test_full_model_gradient(self, encoder, aggregator):
        cfg = small(encoder=encoder, aggregator=aggregator, heads=2, MLP_layers=2, Cls_layers=2)
        model = init_params(cfg, 3, 2, seed=1)
        model.eval()
        h = add_self_loops(toy_hypergraph())
        X = Tensor(np.random.default_rng(2).normal(size=(6, 3)))
        y = np.array([0, 1, 0, 1, 1, 0])

        def loss():
            return ops.cross_entropy(model(X, h), y, np.arange(6))
        assert grad_check(loss, model.parameters()) < 1e-4

    @pytest.mark.parametrize("encoder", ["MLP", "SAB"])
    @pytest.mark.parametrize("aggregator", ["FPSWE", "Mean", "PMA"])
    def test_node_relabeling_equivariance(self, encoder, aggregator):
        ds = synth_two_community(n_per_class=10, edges_per_class=6, seed=0)
        model = init_params(small(encoder=encoder, aggregator=aggregator, heads=2), ds.features.shape[1], 2, 0)
        model.eval()
        perm = np.random.default_rng(3).permutation(ds.num_nodes)
        Xp = np.empty_like(ds.features)
        Xp[perm] = ds.features
        a = model(ds.features, add_self_loops(ds.hypergraph)).data
        b = model(Xp, add_self_loops(ds.hypergraph.permute_nodes(perm))).data
        np.testing.assert_allclose(b[perm], a, atol=1e-9)

    def test_fixed_and_learnable_reference_same_initial_forward(self):
        X = np.random.default_rng(0).normal(size=(6, 3))
        h = add_self_loops(toy_hypergraph())
        out = []
        for agg in ("FPSWE", "LPSWE"):
            model = init_params(small(aggregator=agg), 3, 2, seed=9)
            model.eval()
            out.append(model(X, h).data)
        np.testing.assert_array_equal(out[0], out[1])

    def test_learnability_flag_only_difference(self):
        a = init_params(small(aggregator="FPSWE"), 3, 2, seed=9)
        b = init_params(small(aggregator="LPSWE"), 3, 2, seed=9)
        ra, rb = a.layers[0].edge_aggregator.reference, b.layers[0].edge_aggregator.reference
        assert not ra.requires_grad and rb.requires_grad
        assert len(b.parameters()) == len(a.parameters()) + 2


class TestInit:
    def test_same_seed_same_parameters(self):
        a = init_params(small(encoder="SAB"), 3, 2, seed=4).state_dict()
        b = init_params(small(encoder="SAB"), 3, 2, seed=4).state_dict()
        assert a.keys() == b.keys()
        for k in a:
            np.testing.assert_array_equal(a[k], b[k])

    def test_different_seed_differs(self):
        a = init_params(small(), 3, 2, seed=4).state_dict()
        b = init_params(small(), 3, 2, seed=5).state_dict()
        assert any(not np.array_equal(a[k], b[k]) for k in a)

    def test_fan_in_one_bound(self):
        model = init_params(small(MLP_hid=64), 1, 2, seed=0)
        w = model.lin_in.weight.data
        assert np.all(np.abs(w) <= 1.0) and np.abs(w).max() > 0.5

    def test_uniform_bound(self):
        model = init_params(small(MLP_hid=16, Cls_hid=16), 9, 2, seed=0)
        assert np.all(np.abs(model.lin_in.weight.data) <= np.sqrt(1 / 9))

    def test_theta_unit_norm(self):
        model = init_params(small(MLP_hid=16), 3, 2, seed=0)
        for m in model.modules():
            if isinstance(m, SWPAggregator):
                np.testing.assert_allclose(np.linalg.norm(m.theta.data, axis=0), 1.0, atol=1e-12)

    def test_reference_sorted(self):
        model = init_params(small(MLP_hid=8, num_ref=10), 3, 2, seed=0)
        q = model.layers[0].edge_aggregator.reference.data
        assert np.all(np.diff(q, axis=0) >= 0)

    def test_is_model(self):
        assert isinstance(init_params(small(), 3, 2, seed=0), WhnnModel)


class TestPrepareHypergraph:
    def test_self_loops_added(self):
        h = prepare_hypergraph(toy_hypergraph(), small(self_loops=True))
        assert h.num_edges == 4 + 6

    def test_isolated_without_loops(self):
        h = Hypergraph(3, [[0, 1]], allow_isolated=True)
        with pytest.raises(ConfigError, match="isolated"):
            prepare_hypergraph(h, small(self_loops=False))
