import numpy as np
import pytest

from whnn.attention import pairs_within
from whnn.autodiff import Tensor, grad_check, ops
from whnn.encoders import IsabEncoder, MlpEncoder, SabEncoder
from whnn.hypergraph import Incidence


def layer_norm_rows(x, eps=1e-5):
    mu = x.mean(axis=1, keepdims=True)
    return (x - mu) / np.sqrt(x.var(axis=1, keepdims=True) + eps)


NEIGH = Incidence.from_lists([[0, 1, 2], [2, 3], [4], [0, 3, 4]])


class TestMlpEncoder:
    def test_zero_layers_identity(self):
        X = np.random.default_rng(0).normal(size=(5, 4))
        enc = MlpEncoder(0, 4, 8, 4, np.random.default_rng(0))
        np.testing.assert_array_equal(enc(Tensor(X), NEIGH).data, X[NEIGH.index])

    def test_duplicate_rows(self):
        x = np.random.default_rng(1).normal(size=(1, 3))
        enc = MlpEncoder(2, 3, 6, 5, np.random.default_rng(1))
        out = enc.encode_rows(Tensor(np.repeat(x, 3, axis=0))).data
        assert np.array_equal(out[0], out[1]) and np.array_equal(out[1], out[2])

    def test_edge_independent(self):
        X = np.random.default_rng(2).normal(size=(5, 4))
        enc = MlpEncoder(2, 4, 8, 4, np.random.default_rng(2))
        out = enc(Tensor(X), NEIGH).data
        # node 0 sits in neighbourhoods 0 and 3
        np.testing.assert_array_equal(out[0], out[6])

    def test_grad(self):
        rng = np.random.default_rng(3)
        enc = MlpEncoder(2, 4, 6, 3, rng)
        X = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
        c = Tensor(rng.normal(size=(NEIGH.nnz, 3)))
        assert grad_check(lambda: ops.sum(enc(X, NEIGH) * c), [X] + enc.parameters()) < 1e-6


def permuted_neighbourhoods(rng):
    perms = [rng.permutation(len(NEIGH[k])) for k in range(len(NEIGH))]
    lists = [NEIGH[k][p].tolist() for k, p in enumerate(perms)]
    flat = np.concatenate([NEIGH.offsets[k] + p for k, p in enumerate(perms)])
    return Incidence.from_lists(lists), flat


class TestSabEncoder:
    def test_zero_value_path_is_layer_norm(self):
        rng = np.random.default_rng(0)
        enc = SabEncoder(4, 2, 1, 8, rng)
        enc.mab.w_v.weight.data[:] = 0.0
        ff = enc.mab.ff.layers[-1]
        ff.weight.data[:] = 0.0
        ff.bias.data[:] = 0.0
        X = rng.normal(size=(5, 4)) * 3 + 1
        out = enc(Tensor(X), NEIGH).data
        # the second norm sees an already normalised row; only eps separates it from the identity
        np.testing.assert_allclose(out, layer_norm_rows(X)[NEIGH.index], atol=1e-4)

    def test_singleton_attends_to_itself(self):
        rng = np.random.default_rng(1)
        enc = SabEncoder(4, 1, 0, 4, rng)
        x = rng.normal(size=(1, 4))
        v = x @ enc.mab.w_v.weight.data
        h = layer_norm_rows(x + v)
        want = layer_norm_rows(h + h)
        np.testing.assert_allclose(enc(Tensor(x), Incidence.from_lists([[0]])).data, want, atol=1e-12)

    def test_equivariance(self):
        rng = np.random.default_rng(2)
        enc = SabEncoder(4, 2, 1, 8, rng)
        X = Tensor(rng.normal(size=(5, 4)))
        neigh_p, flat = permuted_neighbourhoods(rng)
        np.testing.assert_array_equal(enc(X, neigh_p).data, enc(X, NEIGH).data[flat])

    def test_edge_dependent(self):
        rng = np.random.default_rng(3)
        enc = SabEncoder(4, 1, 1, 8, rng)
        out = enc(Tensor(rng.normal(size=(5, 4))), NEIGH).data
        assert not np.allclose(out[0], out[6])

    def test_heads_must_divide(self):
        with pytest.raises(ValueError, match="heads"):
            SabEncoder(6, 4, 1, 8, np.random.default_rng(0))(Tensor(np.ones((5, 6))), NEIGH)

    def test_grad(self):
        rng = np.random.default_rng(4)
        enc = SabEncoder(4, 2, 2, 6, rng)
        X = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
        c = Tensor(rng.normal(size=(NEIGH.nnz, 4)))
        assert grad_check(lambda: ops.sum(enc(X, NEIGH) * c), [X] + enc.parameters()) < 1e-6

    def test_empty_neighbourhood(self):
        neigh = Incidence(np.array([0, 1, 1]), np.array([0]))
        with pytest.raises(ValueError, match="empty"):
            SabEncoder(2, 1, 1, 2, np.random.default_rng(0))(Tensor(np.ones((1, 2))), neigh)


class TestIsabEncoder:
    def test_shape(self):
        rng = np.random.default_rng(0)
        enc = IsabEncoder(4, 2, 3, 1, 8, rng)
        assert enc(Tensor(rng.normal(size=(5, 4))), NEIGH).shape == (NEIGH.nnz, 4)

    def test_equivariance(self):
        rng = np.random.default_rng(1)
        enc = IsabEncoder(4, 2, 3, 1, 8, rng)
        X = Tensor(rng.normal(size=(5, 4)))
        neigh_p, flat = permuted_neighbourhoods(rng)
        np.testing.assert_array_equal(enc(X, neigh_p).data, enc(X, NEIGH).data[flat])

    def test_needs_inducing_point(self):
        with pytest.raises(ValueError):
            IsabEncoder(4, 1, 0, 1, 4, np.random.default_rng(0))

    def test_grad(self):
        rng = np.random.default_rng(2)
        enc = IsabEncoder(4, 2, 2, 1, 6, rng)
        X = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
        c = Tensor(rng.normal(size=(NEIGH.nnz, 4)))
        assert grad_check(lambda: ops.sum(enc(X, NEIGH) * c), [X] + enc.parameters()) < 1e-4


class TestAttentionPairs:
    def test_pairs_within(self):
        q, k, off = pairs_within([0, 2, 3])
        assert q.tolist() == [0, 0, 1, 1, 2]
        assert k.tolist() == [0, 1, 0, 1, 2]
        assert off.tolist() == [0, 2, 4, 5]

    def test_softmax_weights_sum_to_one(self):
        rng = np.random.default_rng(0)
        _, _, off = pairs_within([0, 3, 8, 9])
        scores = Tensor(rng.normal(size=(int(off[-1]), 2)) * 20)
        alpha = ops.segment_softmax(scores, off).data
        sums = np.add.reduceat(alpha, off[:-1], axis=0)
        np.testing.assert_allclose(sums, 1.0, atol=1e-12)
