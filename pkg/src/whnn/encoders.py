"""Feature encoders applied before each aggregation stage.

Every encoder maps entity features ``X`` and a neighbourhood list to one row
per (member, neighbourhood) incidence, in the order of ``neigh.index``. The
MLP encoder is edge-independent (a member gets the same row in every
neighbourhood); SAB and ISAB are edge-dependent.
"""

from __future__ import annotations

import numpy as np

from .attention import MAB, pairs_within
from .autodiff import MLP, Module, Tensor, ops
from .autodiff.module import uniform_param
from .hypergraph import Incidence


def _check(neigh: Incidence) -> None:
    if np.any(neigh.sizes == 0):
        raise ValueError("empty neighbourhood: enable self-loops for isolated nodes")


class MlpEncoder(Module):
    def __init__(self, num_layers: int, d_in: int, d_hidden: int, d_out: int,
                 rng: np.random.Generator, dropout: float = 0.0, layer_norm: bool = True,
                 bias: bool = True, dtype=np.float64):
        self.mlp = MLP(num_layers, d_in, d_hidden, d_out, rng, dropout=dropout,
                       layer_norm=layer_norm, bias=bias, dtype=dtype)

    def encode_rows(self, X: Tensor) -> Tensor:
        return self.mlp(X)

    def forward(self, X: Tensor, neigh: Incidence) -> Tensor:
        _check(neigh)
        return ops.gather_rows(self.mlp(X), neigh.index)


class SabEncoder(Module):
    """Self-attention among the members of each neighbourhood.

    ``z = LN(x + Att(x, S)); out = LN(z + MLP(z))``, computed independently
    inside every neighbourhood, so a node in ``k`` hyperedges gets ``k`` rows.
    """

    def __init__(self, dim: int, heads: int, ff_layers: int, ff_hidden: int,
                 rng: np.random.Generator, dropout: float = 0.0, bias: bool = True,
                 dtype=np.float64):
        self.mab = MAB(dim, heads, ff_layers, ff_hidden, rng, dropout=dropout, bias=bias, dtype=dtype)

    def forward(self, X: Tensor, neigh: Incidence) -> Tensor:
        _check(neigh)
        members = ops.gather_rows(X, neigh.index)
        q_rows, k_rows, pair_offsets = pairs_within(neigh.offsets)
        return self.mab(members, members, q_rows, k_rows, pair_offsets)


class IsabEncoder(Module):
    """Induced set attention: members -> ``m`` inducing points -> members.

    Cost per neighbourhood is ``O(|S| m)`` instead of ``O(|S|^2)``.
    """

    def __init__(self, dim: int, heads: int, num_inducing: int, ff_layers: int, ff_hidden: int,
                 rng: np.random.Generator, dropout: float = 0.0, bias: bool = True,
                 dtype=np.float64):
        if num_inducing < 1:
            raise ValueError("ISAB needs at least one inducing point")
        self.m = num_inducing
        self.inducing = uniform_param(rng, (num_inducing, dim), dim, dtype)
        self.mab0 = MAB(dim, heads, ff_layers, ff_hidden, rng, dropout=dropout, bias=bias, dtype=dtype)
        self.mab1 = MAB(dim, heads, ff_layers, ff_hidden, rng, dropout=dropout, bias=bias, dtype=dtype)

    def forward(self, X: Tensor, neigh: Incidence) -> Tensor:
        _check(neigh)
        m = self.m
        offsets = np.asarray(neigh.offsets, dtype=np.int64)
        s = len(offsets) - 1
        sizes = np.diff(offsets)
        members = ops.gather_rows(X, neigh.index)

        # inducing point k of segment t attends over the members of t
        ind_q = ops.gather_rows(self.inducing, np.tile(np.arange(m, dtype=np.int64), s))
        per_q = np.repeat(sizes, m)
        q_rows = np.repeat(np.arange(s * m, dtype=np.int64), per_q)
        starts = np.repeat(offsets[:-1], m)
        pair_off = np.zeros(s * m + 1, dtype=np.int64)
        pair_off[1:] = np.cumsum(per_q)
        k_rows = np.repeat(starts, per_q) + (np.arange(pair_off[-1]) - np.repeat(pair_off[:-1], per_q))
        h = self.mab0(ind_q, members, q_rows, k_rows, pair_off)

        # each member attends over its segment's m summaries
        nnz = int(offsets[-1])
        seg_of = np.repeat(np.arange(s, dtype=np.int64), sizes)
        q2 = np.repeat(np.arange(nnz, dtype=np.int64), m)
        k2 = (seg_of[:, None] * m + np.arange(m)[None, :]).ravel()
        off2 = np.arange(0, nnz * m + 1, m, dtype=np.int64)
        return self.mab1(members, h, q2, k2, off2)
