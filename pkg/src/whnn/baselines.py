"""Sum/attention-based set aggregators used as ablation baselines."""

from __future__ import annotations

import numpy as np

from .attention import MAB
from .autodiff import MLP, Module, Tensor, ops
from .autodiff.module import uniform_param
from .hypergraph import Incidence


class MeanAggregator(Module):
    def forward(self, members: Tensor, offsets) -> Tensor:
        return ops.segment_mean(members, offsets)


class DeepSetsAggregator(Module):
    """``MLP_out(sum_i MLP_in(x_i))`` as in AllDeepSets."""

    def __init__(self, dim: int, mlp_layers: int, mlp_hidden: int, rng: np.random.Generator,
                 dropout: float = 0.0, bias: bool = True, dtype=np.float64):
        self.mlp_in = MLP(mlp_layers, dim, mlp_hidden, dim, rng, dropout=dropout, bias=bias, dtype=dtype)
        self.mlp_out = MLP(mlp_layers, dim, mlp_hidden, dim, rng, dropout=dropout, bias=bias, dtype=dtype)

    def forward(self, members: Tensor, offsets) -> Tensor:
        return self.mlp_out(ops.segment_sum(self.mlp_in(members), offsets))


class PMAAggregator(Module):
    """Pooling by multihead attention: a learnable seed attends over the members.

    Scores ``(seed W_q)(x_i W_k)^T`` are softmax-normalised inside each
    neighbourhood; the attended values pass through residual connections and
    layer normalisation.
    """

    def __init__(self, dim: int, heads: int, ff_layers: int, ff_hidden: int,
                 rng: np.random.Generator, dropout: float = 0.0, bias: bool = True,
                 dtype=np.float64):
        self.seed = uniform_param(rng, (1, dim), dim, dtype)
        self.mab = MAB(dim, heads, ff_layers, ff_hidden, rng, dropout=dropout, bias=bias, dtype=dtype)

    def forward(self, members: Tensor, offsets) -> Tensor:
        offsets = np.asarray(offsets, dtype=np.int64)
        s = len(offsets) - 1
        sizes = np.diff(offsets)
        queries = ops.gather_rows(self.seed, np.zeros(s, dtype=np.int64))
        q_rows = np.repeat(np.arange(s, dtype=np.int64), sizes)
        k_rows = np.arange(offsets[-1], dtype=np.int64)
        return self.mab(queries, members, q_rows, k_rows, offsets)


def _members(X, neigh: Incidence) -> Tensor:
    if np.any(neigh.sizes == 0):
        raise ValueError("empty neighbourhood: enable self-loops for isolated nodes")
    X = X if isinstance(X, Tensor) else Tensor(X)
    return ops.gather_rows(X, neigh.index)


def mean_aggregate(X, neigh: Incidence) -> Tensor:
    return MeanAggregator()(_members(X, neigh), neigh.offsets)


def deepsets_aggregate(X, neigh: Incidence, mlp_in, mlp_out) -> Tensor:
    """``mlp_out(sum(mlp_in(x)))`` for any callables mapping Tensor -> Tensor."""
    return mlp_out(ops.segment_sum(mlp_in(_members(X, neigh)), neigh.offsets))


def pma_aggregate(X, neigh: Incidence, params: PMAAggregator) -> Tensor:
    return params(_members(X, neigh), neigh.offsets)
