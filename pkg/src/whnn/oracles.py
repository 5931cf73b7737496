"""Exact optimal-transport references used to check the pooling layer."""

from __future__ import annotations

import itertools
import math
from typing import Sequence

import numpy as np


def w2_1d(a: Sequence[float], b: Sequence[float]) -> float:
    """2-Wasserstein distance between two equal-size uniform empirical measures on R.

    Uses the inverse-CDF identity: match the i-th smallest of ``a`` with the
    i-th smallest of ``b``.
    """
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.size != b.size:
        raise ValueError(f"size mismatch: {a.size} vs {b.size}")
    if a.size == 0:
        raise ValueError("empty measures")
    return math.sqrt(float(np.mean((a - b) ** 2)))


def w2_1d_exhaustive(a: Sequence[float], b: Sequence[float]) -> float:
    """Same distance by brute force over all ``n!`` one-to-one assignments."""
    a = [float(x) for x in np.ravel(a)]
    b = [float(x) for x in np.ravel(b)]
    if len(a) != len(b):
        raise ValueError(f"size mismatch: {len(a)} vs {len(b)}")
    n = len(a)
    if n == 0:
        raise ValueError("empty measures")
    if n > 8:
        raise ValueError("exhaustive matching is limited to n <= 8")
    best = min(sum((a[i] - b[p[i]]) ** 2 for i in range(n)) for p in itertools.permutations(range(n)))
    return math.sqrt(best / n)


def w2_1d_oracle(a, b, exhaustive_up_to: int = 6) -> float:
    """Closed form; additionally cross-checked by enumeration for small inputs."""
    value = w2_1d(a, b)
    if len(np.ravel(a)) <= exhaustive_up_to:
        brute = w2_1d_exhaustive(a, b)
        if not math.isclose(value, brute, rel_tol=1e-9, abs_tol=1e-12):
            raise AssertionError(f"closed form {value} disagrees with enumeration {brute}")
    return value


def random_directions(d: int, l: int, rng: np.random.Generator) -> np.ndarray:
    """``l`` directions uniform on the unit sphere in R^d, as rows."""
    v = rng.standard_normal((l, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def sliced_w2_from_directions(A, B, directions) -> float:
    """sqrt of the mean over the given directions of the squared 1-D W2 of projections."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape != B.shape:
        raise ValueError(f"size mismatch: {A.shape} vs {B.shape}")
    sq = [w2_1d(A @ th, B @ th) ** 2 for th in np.atleast_2d(directions)]
    return math.sqrt(float(np.mean(sq)))


def sliced_w_oracle(A, B, l: int, seed=None) -> float:
    """Monte Carlo sliced 2-Wasserstein distance with ``l`` random directions."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim == 1:
        A = A[:, None]
    B = np.asarray(B, dtype=np.float64)
    if B.ndim == 1:
        B = B[:, None]
    if A.shape != B.shape:
        raise ValueError(f"size mismatch: {A.shape} vs {B.shape}")
    rng = np.random.default_rng(seed)
    return sliced_w2_from_directions(A, B, random_directions(A.shape[1], l, rng))
