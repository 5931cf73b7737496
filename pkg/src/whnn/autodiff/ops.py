"""Differentiable operators.

Every op computes its forward value with numpy and, when recording, registers
a vector-Jacobian product on the active tape. Segment ops take ``offsets``
(length ``S + 1``) describing contiguous, non-empty row blocks.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .tensor import Tensor, as_tensor, make_output


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _lift(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    sa, sb = a.shape, b.shape
    return make_output(
        "add", a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
    )


def sub(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    sa, sb = a.shape, b.shape
    return make_output(
        "sub", a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
    )


def mul(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    ad, bd = a.data, b.data
    return make_output(
        "mul", ad * bd, (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return make_output("scale", x.data * c, (x,), lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_output("relu", np.where(mask, x.data, 0.0).astype(x.dtype), (x,), lambda g: (g * mask,))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return make_output("exp", y, (x,), lambda g: (g * y,))


def square(x: Tensor) -> Tensor:
    xd = x.data
    return make_output("square", xd * xd, (x,), lambda g: (2.0 * g * xd,))


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor, exact_rows: bool = False) -> Tensor:
    """2-D matrix product.

    ``exact_rows=True`` evaluates with a non-blocked kernel so that each output
    row depends only on the matching input row, bit for bit. BLAS does not
    promise that, and set aggregators rely on it for exact permutation
    invariance.
    """
    a = _lift(a)
    b = _lift(b, a)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    out = np.einsum("ij,jk->ik", ad, bd) if exact_rows else ad @ bd
    return make_output("matmul", out, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return make_output("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return make_output("transpose", np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_output("sum", np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), vjp)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(sum(x, axis, keepdims), 1.0 / n)


def rms(x: Tensor, axis: int) -> Tensor:
    """Root mean square along ``axis`` (gradient taken as 0 where the value is 0)."""
    xd = x.data
    n = xd.shape[axis]
    r = np.sqrt(np.mean(xd * xd, axis=axis))

    def vjp(g):
        safe = np.where(r > 0, r, 1.0)
        coef = np.where(r > 0, g / (n * safe), 0.0)
        return (np.expand_dims(coef, axis) * xd,)

    return make_output("rms", r, (x,), vjp)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [_lift(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, cuts, axis=axis))

    return make_output("concat", np.concatenate([x.data for x in xs], axis=axis), tuple(xs), vjp)


# ---------------------------------------------------------------- normalisation


def softmax_rows(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return make_output("softmax", y, (x,), vjp)


def log_softmax_rows(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def vjp(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return make_output("log_softmax", y, (x,), vjp)


def layer_norm(x: Tensor, gain: Optional[Tensor] = None, bias: Optional[Tensor] = None,
               eps: float = 1e-5) -> Tensor:
    """Normalise each row (last axis) to zero mean and unit variance, then scale/shift."""
    xd = x.data
    d = xd.shape[-1]
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gain.data if gain is not None else None
    y = xhat * gd if gd is not None else xhat
    if bias is not None:
        y = y + bias.data
    inputs = [x]
    if gain is not None:
        inputs.append(gain)
    if bias is not None:
        inputs.append(bias)

    def vjp(g):
        dxhat = g * gd if gd is not None else g
        dx = (inv / d) * (d * dxhat - dxhat.sum(-1, keepdims=True)
                          - xhat * (dxhat * xhat).sum(-1, keepdims=True))
        grads = [dx]
        if gain is not None:
            grads.append(_unbroadcast(g * xhat, gain.shape))
        if bias is not None:
            grads.append(_unbroadcast(g, bias.shape))
        return tuple(grads)

    return make_output("layer_norm", y, tuple(inputs), vjp)


def dropout(x: Tensor, p: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    """Inverted dropout; identity when not training or ``p == 0``."""
    if not training or p <= 0.0:
        return x
    if p >= 1.0:
        raise ValueError("dropout rate must be < 1")
    keep = rng.random(x.shape) >= p
    m = keep.astype(x.dtype) / (1.0 - p)
    return make_output("dropout", x.data * m, (x,), lambda g: (g * m,))


# ---------------------------------------------------------------- indexing / segments


def scatter_add_rows(num_rows: int, index: np.ndarray, values: np.ndarray) -> np.ndarray:
    """``out[index[i]] += values[i]`` with a fixed summation order (faster than ``np.add.at``)."""
    out = np.zeros((num_rows,) + values.shape[1:], dtype=values.dtype)
    if index.size == 0:
        return out
    index = np.where(index < 0, index + num_rows, index)
    order = np.argsort(index, kind="stable")
    sidx = index[order]
    starts = np.flatnonzero(np.r_[True, sidx[1:] != sidx[:-1]])
    out[sidx[starts]] = np.add.reduceat(values[order], starts, axis=0)
    return out


def gather_rows(x: Tensor, index) -> Tensor:
    idx = np.asarray(index, dtype=np.int64)
    n = x.shape[0]
    if idx.size and (idx.min() < -n or idx.max() >= n):
        raise IndexError(f"gather index out of range for {n} rows")
    return make_output("gather_rows", x.data[idx], (x,), lambda g: (scatter_add_rows(n, idx, g),))


def segment_ids(offsets) -> np.ndarray:
    offsets = np.asarray(offsets, dtype=np.int64)
    return np.repeat(np.arange(len(offsets) - 1), np.diff(offsets))


def _check_offsets(offsets, n: int) -> np.ndarray:
    offsets = np.asarray(offsets, dtype=np.int64)
    if offsets.ndim != 1 or len(offsets) < 2 or offsets[0] != 0 or offsets[-1] != n:
        raise ValueError(f"offsets must start at 0 and end at {n}")
    if np.any(np.diff(offsets) <= 0):
        raise ValueError("empty segment in offsets")
    return offsets


def size_groups(offsets) -> list[tuple[np.ndarray, np.ndarray]]:
    """Segments bucketed by size: ``[(segment_ids, rows), ...]``, ``rows`` is ``(S_k, k)``."""
    offsets = np.asarray(offsets, dtype=np.int64)
    sizes = np.diff(offsets)
    groups = []
    for k in np.unique(sizes):
        segs = np.flatnonzero(sizes == k)
        groups.append((segs, offsets[segs][:, None] + np.arange(k, dtype=np.int64)))
    return groups


def segment_argsort(values: np.ndarray, offsets) -> np.ndarray:
    """Per-column stable ordering of ``values`` within each segment.

    ``values`` is 2-D (rows x columns); the result holds, for each column,
    row indices ordered by (segment, value, original index).
    """
    values = np.asarray(values)
    perm = np.empty(values.shape, dtype=np.int64)
    for _, rows in size_groups(offsets):
        order = np.argsort(values[rows], axis=1, kind="stable")
        perm[rows] = np.take_along_axis(np.broadcast_to(rows[:, :, None], order.shape), order, axis=1)
    return perm


def _canonical_reduceat(v2: np.ndarray, offsets) -> np.ndarray:
    # summing in sorted-value order makes the result depend only on the multiset
    out = np.empty((len(offsets) - 1, v2.shape[1]), dtype=v2.dtype)
    for segs, rows in size_groups(offsets):
        out[segs] = np.sort(v2[rows], axis=1).sum(axis=1)
    return out


def segment_sum(x: Tensor, offsets) -> Tensor:
    """Sum of each contiguous row block; order-independent to the last bit."""
    offsets = _check_offsets(offsets, x.shape[0])
    ids = segment_ids(offsets)
    v2 = x.data.reshape(x.shape[0], -1)
    out = _canonical_reduceat(v2, offsets).reshape((len(offsets) - 1,) + x.shape[1:])
    return make_output("segment_sum", out, (x,), lambda g: (g[ids],))


def segment_mean(x: Tensor, offsets) -> Tensor:
    offsets = _check_offsets(offsets, x.shape[0])
    sizes = np.diff(offsets).astype(x.dtype).reshape((-1,) + (1,) * (x.ndim - 1))
    ids = segment_ids(offsets)
    v2 = x.data.reshape(x.shape[0], -1)
    out = _canonical_reduceat(v2, offsets).reshape((len(offsets) - 1,) + x.shape[1:]) / sizes
    return make_output("segment_mean", out, (x,), lambda g: ((g / sizes)[ids],))


def segment_softmax(x: Tensor, offsets) -> Tensor:
    """Softmax over the rows of each segment, independently per column."""
    offsets = _check_offsets(offsets, x.shape[0])
    ids = segment_ids(offsets)
    starts = offsets[:-1]
    shape = x.shape
    v2 = x.data.reshape(shape[0], -1)
    m = np.maximum.reduceat(v2, starts, axis=0)
    e = np.exp(v2 - m[ids])
    s = _canonical_reduceat(e, offsets)
    y = e / s[ids]

    def vjp(g):
        g2 = g.reshape(shape[0], -1)
        dot = np.add.reduceat(g2 * y, starts, axis=0)
        return ((y * (g2 - dot[ids])).reshape(shape),)

    return make_output("segment_softmax", y.reshape(shape), (x,), vjp)


def sort_with_permutation(x: Tensor, axis: int = 0):
    """Stable ascending sort; returns ``(sorted, perm)`` with ``sorted = take(x, perm)``.

    The backward pass scatters gradients back through ``perm`` (the permutation
    is treated as constant, which is exact away from ties).
    """
    perm = np.argsort(x.data, axis=axis, kind="stable")
    out = np.take_along_axis(x.data, perm, axis=axis)
    shape = x.shape

    def vjp(g):
        gx = np.zeros(shape, dtype=g.dtype)
        np.put_along_axis(gx, perm, g, axis=axis)
        return (gx,)

    return make_output("sort", out, (x,), vjp), perm


def segment_sort(x: Tensor, offsets):
    """Sort every column of ``x`` (rows x columns) within each row segment."""
    offsets = _check_offsets(offsets, x.shape[0])
    perm = segment_argsort(x.data, offsets)
    out = np.take_along_axis(x.data, perm, axis=0)
    shape = x.shape

    def vjp(g):
        gx = np.zeros(shape, dtype=g.dtype)
        np.put_along_axis(gx, perm, g, axis=0)
        return (gx,)

    return make_output("segment_sort", out, (x,), vjp), perm


def quantile_grid(n, r: int):
    """Interpolation stencil for resampling sorted length-``n`` sequences to ``r`` points.

    Points sit at ``t_k = k / (r - 1)`` (``t = 0.5`` when ``r == 1``) on the
    piecewise-linear quantile function whose knots are at ``i / (n - 1)``.
    Returns ``(lo, hi, w)`` arrays of shape ``n.shape + (r,)`` so that
    ``value_k = (1 - w) * x[lo] + w * x[hi]``. Positions are computed with
    integer arithmetic, so ``n == r`` yields ``w == 0`` exactly.
    """
    n = np.asarray(n, dtype=np.int64)
    if np.any(n < 1):
        raise ValueError("cannot interpolate an empty sequence")
    if r < 1:
        raise ValueError("target length must be >= 1")
    nm1 = (n - 1)[..., None]
    if r == 1:
        num = nm1
        den = 2
    else:
        num = np.arange(r, dtype=np.int64) * nm1
        den = r - 1
    lo = num // den
    w = (num % den) / den
    hi = np.minimum(lo + 1, nm1)
    return lo, hi, w


def quantile_interpolate(x_sorted: Tensor, r: int) -> Tensor:
    """Resample a sorted vector (or each column of a sorted matrix) to length ``r``."""
    n = x_sorted.shape[0]
    if n == 0:
        raise ValueError("cannot interpolate an empty sequence")
    lo, hi, w = quantile_grid(n, r)
    w = w.astype(x_sorted.dtype)
    trail = (1,) * (x_sorted.ndim - 1)
    wl = (1.0 - w).reshape((r,) + trail)
    wh = w.reshape((r,) + trail)
    xd = x_sorted.data
    out = wl * xd[lo] + wh * xd[hi]
    shape = x_sorted.shape

    def vjp(g):
        gx = np.zeros(shape, dtype=g.dtype)
        np.add.at(gx, lo, wl * g)
        np.add.at(gx, hi, wh * g)
        return (gx,)

    return make_output("quantile_interpolate", out, (x_sorted,), vjp)


def segment_quantiles(x_sorted: Tensor, offsets, r: int) -> Tensor:
    """Resample each sorted segment of ``x_sorted`` (rows x L) to ``r`` rows.

    Returns an array of shape ``(S, r, L)``.
    """
    offsets = _check_offsets(offsets, x_sorted.shape[0])
    sizes = np.diff(offsets)
    lo, hi, w = quantile_grid(sizes, r)
    base = offsets[:-1, None]
    glo = (base + lo).ravel()
    ghi = (base + hi).ravel()
    w = w.astype(x_sorted.dtype)
    wl = (1.0 - w)[..., None]
    wh = w[..., None]
    xd = x_sorted.data
    S, L = len(sizes), x_sorted.shape[1]
    out = wl * xd[glo].reshape(S, r, L) + wh * xd[ghi].reshape(S, r, L)
    shape = x_sorted.shape

    def vjp(g):
        vals = np.concatenate([(wl * g).reshape(-1, L), (wh * g).reshape(-1, L)])
        return (scatter_add_rows(shape[0], np.concatenate([glo, ghi]), vals),)

    return make_output("segment_quantiles", out, (x_sorted,), vjp)


# ---------------------------------------------------------------- losses


def cross_entropy(logits: Tensor, labels, index) -> Tensor:
    """Mean negative log-likelihood over the rows selected by ``index``.

    ``index`` is either a boolean mask over rows or an array of row indices.
    """
    idx = np.asarray(index)
    idx = np.flatnonzero(idx) if idx.dtype == bool else idx.astype(np.int64)
    if idx.size == 0:
        raise ValueError("cross entropy over an empty mask")
    y = np.asarray(labels, dtype=np.int64)[idx]
    z = logits.data[idx]
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    k = len(idx)
    loss = -logp[np.arange(k), y].mean()
    shape = logits.shape

    def vjp(g):
        p = np.exp(logp)
        p[np.arange(k), y] -= 1.0
        out = np.zeros(shape, dtype=logits.dtype)
        np.add.at(out, idx, p * (float(g) / k))
        return (out,)

    return make_output("cross_entropy", np.asarray(loss, dtype=logits.dtype), (logits,), vjp)


__all__ = [
    "add", "sub", "mul", "scale", "relu", "exp", "square", "matmul", "reshape", "transpose",
    "sum", "mean", "rms", "concat", "softmax_rows", "log_softmax_rows", "layer_norm",
    "dropout", "gather_rows", "segment_ids", "size_groups", "segment_argsort", "segment_sum", "segment_mean",
    "segment_softmax", "sort_with_permutation", "segment_sort", "quantile_grid",
    "quantile_interpolate", "segment_quantiles", "cross_entropy", "as_tensor",
]
