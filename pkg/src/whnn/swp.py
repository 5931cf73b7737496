"""Sliced Wasserstein Pooling over hypergraph neighbourhoods.

Each neighbourhood is treated as an empirical distribution. Members are
projected on ``L`` directions, every 1-D projection is sorted and resampled on
``R`` quantile levels, and the result is compared with ``R`` sorted reference
samples per slice. Stacking the signed differences gives an embedding whose
Euclidean geometry tracks the sliced 2-Wasserstein distance between
neighbourhoods (the reference cancels in pairwise differences).
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .autodiff import Module, Tensor, ops
from .autodiff.module import uniform_param
from .hypergraph import Incidence

VARIANTS = ("flatten", "per_slice")


def sample_reference(r: int, l: int, seed=None, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """``r`` i.i.d. standard normal samples for each of ``l`` slices, columns sorted."""
    if r < 1 or l < 1:
        raise ValueError("reference needs r >= 1 and l >= 1")
    rng = rng if rng is not None else np.random.default_rng(seed)
    return np.sort(rng.standard_normal((r, l)), axis=0)


def sample_slices(d: int, l: int, rng: np.random.Generator) -> np.ndarray:
    """``d x l`` matrix of Gaussian directions normalised to unit columns."""
    theta = rng.standard_normal((d, l))
    return theta / np.linalg.norm(theta, axis=0, keepdims=True)


class SWPAggregator(Module):
    """Sliced Wasserstein Pooling with a fixed (FPSWE) or learnable (LPSWE) reference.

    Parameters
    ----------
    d_in : int
        Dimension of member features.
    num_slices : int
        Number of projection directions ``L``.
    num_ref : int
        Reference sample count ``R``; every neighbourhood is resampled to it.
    d_out : int
        Output dimension of the ``flatten`` variant. The ``per_slice`` variant
        always returns ``L`` values.
    learnable_ref : bool
        Train the reference samples. They are re-sorted on every forward pass.
    learnable_slices : bool
        Train the directions (they are not renormalised after updates).
    variant : {"flatten", "per_slice"}
        ``flatten`` maps the ``R * L`` signed differences linearly to ``d_out``;
        ``per_slice`` reduces each slice to its 1-D Wasserstein distance to the
        reference and scales it by a learnable per-slice weight.
    """

    def __init__(self, d_in: int, num_slices: int, num_ref: int, d_out: int,
                 rng: np.random.Generator, learnable_ref: bool = False,
                 learnable_slices: bool = True, variant: str = "flatten", dtype=np.float64):
        if variant not in VARIANTS:
            raise ValueError(f"unknown SWP variant {variant!r}")
        self.d_in, self.num_slices, self.num_ref, self.variant = d_in, num_slices, num_ref, variant
        self.theta = Tensor(sample_slices(d_in, num_slices, rng).astype(dtype), requires_grad=learnable_slices)
        self.reference = Tensor(sample_reference(num_ref, num_slices, rng=rng).astype(dtype),
                                requires_grad=learnable_ref)
        if variant == "flatten":
            self.weight = uniform_param(rng, (num_ref * num_slices, d_out), num_ref * num_slices, dtype)
            self.d_out = d_out
        else:
            self.weight = Tensor(np.ones(num_slices, dtype=dtype), requires_grad=True)
            self.d_out = num_slices

    @property
    def learnable_ref(self) -> bool:
        return self.reference.requires_grad

    def sorted_reference(self) -> Tensor:
        if self.reference.requires_grad:
            q, _ = ops.sort_with_permutation(self.reference, axis=0)
            return q
        return self.reference

    def member_quantiles(self, members: Tensor, offsets) -> Tensor:
        """Sorted projections of every neighbourhood resampled to ``R`` points: ``(S, R, L)``."""
        proj = ops.matmul(members, self.theta, exact_rows=True)
        srt, _ = ops.segment_sort(proj, offsets)
        return ops.segment_quantiles(srt, offsets, self.num_ref)

    def differences(self, members: Tensor, offsets) -> Tensor:
        """Signed differences ``reference - quantiles``, shape ``(S, R, L)``."""
        return self.sorted_reference() - self.member_quantiles(members, offsets)

    def embed(self, members: Tensor, offsets) -> Tensor:
        """Pre-combination embedding, scaled by ``1/sqrt(R)`` and flattened row-major.

        With this scaling, the Euclidean distance between two embeddings,
        further divided by ``sqrt(L)``, is the Monte Carlo sliced 2-Wasserstein
        distance between the neighbourhoods (exactly, when no resampling is
        needed).
        """
        d = self.differences(members, offsets)
        s = d.shape[0]
        return ops.scale(d, 1.0 / np.sqrt(self.num_ref)).reshape(s, self.num_ref * self.num_slices)

    def forward(self, members: Tensor, offsets) -> Tensor:
        if self.variant == "flatten":
            return ops.matmul(self.embed(members, offsets), self.weight)
        per_slice = ops.rms(self.differences(members, offsets), axis=1)
        return per_slice * self.weight


def wasserstein_aggregate(X: Tensor, neigh: Incidence, params: SWPAggregator) -> Tensor:
    """Pool the rows of ``X`` listed in each neighbourhood of ``neigh``."""
    if np.any(neigh.sizes == 0):
        raise ValueError("empty neighbourhood: enable self-loops for isolated nodes")
    X = X if isinstance(X, Tensor) else Tensor(X)
    return params(ops.gather_rows(X, neigh.index), neigh.offsets)


def swp_embedding(X, neigh: Incidence, params: SWPAggregator) -> Tensor:
    """The ``1/sqrt(R)``-scaled signed-difference embedding before the slice combination."""
    if np.any(neigh.sizes == 0):
        raise ValueError("empty neighbourhood: enable self-loops for isolated nodes")
    X = X if isinstance(X, Tensor) else Tensor(X)
    return params.embed(ops.gather_rows(X, neigh.index), neigh.offsets)
