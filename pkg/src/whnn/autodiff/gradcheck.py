"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, no_grad


def numerical_grad(build: Callable[[], Tensor], param: Tensor, eps: float = 1e-5,
                   coords=None) -> np.ndarray:
    """Central differences of ``build()`` with respect to ``param`` (flat coords)."""
    flat = param.data.reshape(-1)
    coords = range(flat.size) if coords is None else coords
    out = np.zeros(flat.size)
    with no_grad():
        for i in coords:
            old = flat[i]
            flat[i] = old + eps
            fp = float(build().data)
            flat[i] = old - eps
            fm = float(build().data)
            flat[i] = old
            out[i] = (fp - fm) / (2.0 * eps)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1.0) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)`` elementwise.

    The floor keeps coordinates whose true derivative is ~0 from turning
    finite-difference rounding noise into huge relative errors.
    """
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def grad_check(build: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
               max_coords: int = 10_000, seed: int = 0, floor: float = 1.0) -> float:
    """Return the max relative error between tape gradients and central differences.

    ``build`` must be deterministic and return a scalar tensor computed from
    ``params``. Parameters with more than ``max_coords`` entries in total are
    checked on a random subsample of coordinates.
    """
    params = list(params)
    for p in params:
        p.requires_grad = True
        p.grad = None
        if p.data.dtype != np.float64:
            raise TypeError("grad_check needs float64 parameters")
    with Tape() as tape:
        loss = build()
        tape.backward(loss)
    total = sum(p.data.size for p in params)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in params:
        analytic = np.zeros(p.data.size) if p.grad is None else p.grad.reshape(-1)
        if total > max_coords:
            k = max(1, int(round(max_coords * p.data.size / total)))
            coords = rng.choice(p.data.size, size=min(k, p.data.size), replace=False)
        else:
            coords = np.arange(p.data.size)
        numeric = numerical_grad(build, p, eps, coords)
        err = relative_error(analytic[coords], numeric[coords], floor)
        if err.size:
            worst = max(worst, float(err.max()))
        p.grad = None
    return worst
