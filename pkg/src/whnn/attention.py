"""Multi-head dot-product attention restricted to segments (sets)."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .autodiff import MLP, LayerNorm, Linear, Module, Tensor, ops


def pairs_within(offsets) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """All ordered (i, j) row pairs inside each segment.

    Returns ``(query_rows, key_rows, pair_offsets)`` with pairs grouped by
    query row, so ``pair_offsets`` delimits the keys each row attends to.
    """
    offsets = np.asarray(offsets, dtype=np.int64)
    sizes = np.diff(offsets)
    rows = np.arange(offsets[-1], dtype=np.int64)
    row_size = np.repeat(sizes, sizes)
    row_start = np.repeat(offsets[:-1], sizes)
    q = np.repeat(rows, row_size)
    pair_offsets = np.zeros(len(rows) + 1, dtype=np.int64)
    pair_offsets[1:] = np.cumsum(row_size)
    within = np.arange(pair_offsets[-1], dtype=np.int64) - np.repeat(pair_offsets[:-1], row_size)
    k = np.repeat(row_start, row_size) + within
    return q, k, pair_offsets


def segment_attention(q: Tensor, k: Tensor, v: Tensor, q_rows, k_rows, pair_offsets,
                      heads: int, dropout: float = 0.0, rng: Optional[np.random.Generator] = None,
                      training: bool = False) -> Tensor:
    """Each query row attends over the key rows paired with it.

    ``q_rows``/``k_rows`` list the pairs, grouped contiguously by query row
    as described by ``pair_offsets``. Scores are scaled by ``1/sqrt(d/heads)``
    and softmax-normalised within each query's group.
    """
    d = q.shape[1]
    if d % heads:
        raise ValueError(f"{heads} heads do not divide dimension {d}")
    dh = d // heads
    p = len(q_rows)
    qg = ops.gather_rows(q, q_rows)
    kg = ops.gather_rows(k, k_rows)
    scores = ops.scale(ops.sum((qg * kg).reshape(p, heads, dh), axis=2), 1.0 / np.sqrt(dh))
    alpha = ops.segment_softmax(scores, pair_offsets)
    alpha = ops.dropout(alpha, dropout, rng, training)
    vg = ops.gather_rows(v, k_rows).reshape(p, heads, dh)
    weighted = (alpha.reshape(p, heads, 1) * vg).reshape(p, d)
    return ops.segment_sum(weighted, pair_offsets)


class MAB(Module):
    """Multihead attention block: ``H = LN(Q + Att(Q, K)); out = LN(H + FF(H))``.

    Keys and values come from ``K`` through ``W_k`` and ``W_v``; there is no
    output projection.
    """

    def __init__(self, dim: int, heads: int, ff_layers: int, ff_hidden: int,
                 rng: np.random.Generator, dropout: float = 0.0, bias: bool = True,
                 dtype=np.float64):
        self.heads = heads
        self.w_q = Linear(dim, dim, rng, bias=False, dtype=dtype)
        self.w_k = Linear(dim, dim, rng, bias=False, dtype=dtype)
        self.w_v = Linear(dim, dim, rng, bias=False, dtype=dtype)
        self.ln0 = LayerNorm(dim, dtype=dtype)
        self.ff = MLP(ff_layers, dim, ff_hidden, dim, rng, dropout=dropout, bias=bias, dtype=dtype)
        self.ln1 = LayerNorm(dim, dtype=dtype)
        self.dropout = dropout
        self.rng: Optional[np.random.Generator] = None

    def forward(self, queries: Tensor, keys: Tensor, q_rows, k_rows, pair_offsets) -> Tensor:
        att = segment_attention(self.w_q(queries), self.w_k(keys), self.w_v(keys), q_rows, k_rows,
                                pair_offsets, self.heads, self.dropout, self.rng, self.training)
        h = self.ln0(queries + att)
        return self.ln1(h + self.ff(h))
