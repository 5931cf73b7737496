"""Self-check suites: transport oracles, pooling fidelity, invariance and gradients.

Each suite returns a :class:`SuiteResult`; :func:`run_all` runs every suite
and the ``verify`` command prints them as a pass/fail table.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .autodiff import Tensor, grad_check, ops
from .baselines import DeepSetsAggregator, MeanAggregator, PMAAggregator
from .hypergraph import Hypergraph
from .model import ModelConfig, WhnnLayer
from .oracles import w2_1d, w2_1d_exhaustive
from .swp import SWPAggregator


@dataclass
class SuiteResult:
    name: str
    passed: bool
    worst: float
    tol: float
    cases: int
    seconds: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}  {self.name:<18} worst={self.worst:.3e} tol={self.tol:.1e} "
                f"cases={self.cases} time={self.seconds:.2f}s {self.detail}").rstrip()


def _timed(name: str, tol: float, fn: Callable[[], tuple], strict_zero: bool = False) -> SuiteResult:
    t0 = time.perf_counter()
    worst, cases, detail, *verdict = fn()
    if verdict:
        ok = verdict[0]
    else:
        ok = worst == 0.0 if strict_zero else worst <= tol
    return SuiteResult(name, bool(ok), worst, tol, cases, time.perf_counter() - t0, detail)


# ------------------------------------------------------------------ oracle suites


def w2_oracle_suite(trials: int = 1000, tol: float = 1e-12, seed: int = 0) -> SuiteResult:
    """Closed-form 1-D W2 against the minimum over all ``n!`` matchings, ``n <= 6``."""
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(trials):
            n = int(rng.integers(1, 7))
            a, b = rng.normal(size=n) * rng.uniform(0.1, 5), rng.normal(size=n) + rng.normal()
            worst = max(worst, abs(w2_1d(a, b) - w2_1d_exhaustive(a, b)))
        return worst, trials, ""
    return _timed("w2-oracle", tol, run)


def swp_fidelity_errors(trials: int = 200, dtype=np.float64, seed: int = 0) -> np.ndarray:
    """``| ||emb(A) - emb(B)|| / sqrt(L)  -  sliced W2(A, B) |`` on random pairs with ``|A| = |B| = R``.

    The sliced W2 is evaluated by the closed-form oracle on the same
    directions the aggregator uses, in float64 regardless of ``dtype``.
    """
    rng = np.random.default_rng(seed)
    errs = np.empty(trials)
    for t in range(trials):
        d = int(rng.integers(1, 9))
        l = int(rng.integers(1, 17))
        r = int(rng.integers(1, 13))
        agg = SWPAggregator(d, l, r, 4, np.random.default_rng(rng.integers(2**32)), dtype=dtype)
        A = rng.normal(size=(r, d)) * rng.uniform(0.2, 3.0)
        B = rng.normal(size=(r, d)) + rng.normal(size=d)
        X = Tensor(np.concatenate([A, B]).astype(dtype))
        emb = agg.embed(X, [0, r, 2 * r]).data.astype(np.float64)
        dist = np.linalg.norm(emb[0] - emb[1]) / np.sqrt(l)
        theta = agg.theta.data.astype(np.float64)
        Xa, Xb = X.data[:r].astype(np.float64), X.data[r:].astype(np.float64)
        sq = [w2_1d(Xa @ theta[:, k], Xb @ theta[:, k]) ** 2 for k in range(l)]
        errs[t] = abs(dist - np.sqrt(np.mean(sq)))
    return errs


def swp_oracle_suite(trials: int = 200, tol: float = 1e-9, dtype=np.float64, seed: int = 0) -> SuiteResult:
    def run():
        errs = swp_fidelity_errors(trials, dtype, seed)
        return float(errs.max()), trials, f"dtype={np.dtype(dtype).name}"
    return _timed("swp-oracle", tol, run)


# ------------------------------------------------------------------ invariance


def random_aggregator(kind: str, d: int, rng: np.random.Generator):
    if kind == "SWP":
        return SWPAggregator(d, int(rng.integers(1, 9)), int(rng.integers(1, 11)), d, rng,
                             learnable_ref=bool(rng.integers(2)))
    if kind == "Mean":
        return MeanAggregator()
    if kind == "DeepSets":
        return DeepSetsAggregator(d, int(rng.integers(0, 3)), 8, rng)
    heads = [h for h in (1, 2, 4) if d % h == 0]
    return PMAAggregator(d, int(rng.choice(heads)), 1, 8, rng)


def permutation_suite(cases: int = 500, seed: int = 0) -> SuiteResult:
    """Bitwise invariance of every aggregator under within-neighbourhood shuffles."""
    kinds = ("SWP", "Mean", "DeepSets", "PMA")

    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        failing = []
        for c in range(cases):
            kind = kinds[c % len(kinds)]
            d = int(rng.choice([1, 2, 4, 8, 16]))
            sizes = rng.integers(1, 33, size=int(rng.integers(1, 5)))
            offsets = np.concatenate([[0], np.cumsum(sizes)])
            X = rng.normal(size=(int(offsets[-1]), d))
            agg = random_aggregator(kind, d, rng)
            agg.eval()
            perm = np.concatenate([o + rng.permutation(s) for o, s in zip(offsets[:-1], sizes)])
            a = agg(Tensor(X), offsets).data
            b = agg(Tensor(X[perm]), offsets).data
            diff = float(np.max(np.abs(a - b)))
            if not np.array_equal(a, b):
                failing.append(kind)
            worst = max(worst, diff)
        return worst, cases, f"failing={sorted(set(failing))}" if failing else ""
    return _timed("permutation", 0.0, run, strict_zero=True)


# ------------------------------------------------------------------ gradients


def _probe(shape, rng) -> np.ndarray:
    return rng.normal(size=shape)


def catalogue_cases(rng: np.random.Generator) -> list[tuple[str, Callable, list[Tensor]]]:
    """``(name, build, params)`` for every differentiable op, random shapes up to 16 x 32."""
    def T(*shape, scale=1.0):
        return Tensor(rng.normal(size=shape) * scale, requires_grad=True)

    def dot(out: Tensor, c: np.ndarray) -> Tensor:
        return ops.sum(ops.mul(out, Tensor(c)))

    n, m, k = (int(v) for v in rng.integers(2, 17, size=3))
    w = int(rng.integers(2, 33))
    cases = []

    a, b = T(n, k), T(k, w)
    c_nw = _probe((n, w), rng)
    cases.append(("matmul", lambda: dot(ops.matmul(a, b), c_nw), [a, b]))
    a2, b2 = T(n, k), T(k, w)
    cases.append(("matmul_exact", lambda: dot(ops.matmul(a2, b2, exact_rows=True), c_nw), [a2, b2]))
    x, y, bias = T(n, w), T(n, w), T(w)
    cases.append(("add", lambda: dot(ops.add(x, bias), c_nw), [x, bias]))
    cases.append(("sub", lambda: dot(ops.sub(x, y), c_nw), [x, y]))
    cases.append(("mul", lambda: dot(ops.mul(x, y), c_nw), [x, y]))
    cases.append(("scale", lambda: dot(ops.scale(x, -1.7), c_nw), [x]))
    cases.append(("relu", lambda: dot(ops.relu(x), c_nw), [x]))
    cases.append(("exp", lambda: dot(ops.exp(ops.scale(x, 0.3)), c_nw), [x]))
    cases.append(("square", lambda: dot(ops.square(x), c_nw), [x]))
    cases.append(("sum_axis", lambda: ops.sum(ops.mul(ops.sum(x, axis=0), Tensor(c_nw[0]))), [x]))
    cases.append(("mean", lambda: ops.sum(ops.mul(ops.mean(x, axis=1), Tensor(c_nw[:, 0]))), [x]))
    cases.append(("rms", lambda: ops.sum(ops.mul(ops.rms(x, axis=0), Tensor(c_nw[0]))), [x]))
    cases.append(("softmax_rows", lambda: dot(ops.softmax_rows(x), c_nw), [x]))
    cases.append(("log_softmax_rows", lambda: dot(ops.log_softmax_rows(x), c_nw), [x]))
    gain, lb = T(w), T(w)
    cases.append(("layer_norm", lambda: dot(ops.layer_norm(x, gain, lb), c_nw), [x, gain, lb]))

    def drop():
        return dot(ops.dropout(x, 0.4, np.random.default_rng(5), True), c_nw)
    cases.append(("dropout", drop, [x]))
    z = T(n, m)
    c_cat = _probe((n, w + m), rng)
    cases.append(("concat", lambda: dot(ops.concat([x, z], axis=-1), c_cat), [x, z]))
    cases.append(("reshape", lambda: dot(ops.reshape(x, (w, n)), c_nw.reshape(w, n)), [x]))
    cases.append(("transpose", lambda: dot(ops.transpose(x), c_nw.T.copy()), [x]))
    idx = rng.integers(0, n, size=2 * n)
    c_g = _probe((2 * n, w), rng)
    cases.append(("gather_rows", lambda: dot(ops.gather_rows(x, idx), c_g), [x]))

    sizes = rng.integers(1, 6, size=int(rng.integers(1, 5)))
    offs = np.concatenate([[0], np.cumsum(sizes)])
    rows = int(offs[-1])
    s = T(rows, k)
    c_seg = _probe((len(sizes), k), rng)
    cases.append(("segment_sum", lambda: dot(ops.segment_sum(s, offs), c_seg), [s]))
    cases.append(("segment_mean", lambda: dot(ops.segment_mean(s, offs), c_seg), [s]))
    c_rows = _probe((rows, k), rng)
    cases.append(("segment_softmax", lambda: dot(ops.segment_softmax(s, offs), c_rows), [s]))
    cases.append(("segment_sort", lambda: dot(ops.segment_sort(s, offs)[0], c_rows), [s]))
    v = T(n, k)
    c_nk = _probe((n, k), rng)
    cases.append(("sort", lambda: dot(ops.sort_with_permutation(v, axis=0)[0], c_nk), [v]))
    r = int(rng.integers(1, 9))
    c_q = _probe((r, k), rng)
    cases.append(("quantile_interpolate",
                  lambda: dot(ops.quantile_interpolate(ops.sort_with_permutation(v, 0)[0], r), c_q), [v]))
    c_sq = _probe((len(sizes), r, k), rng)
    cases.append(("segment_quantiles",
                  lambda: dot(ops.segment_quantiles(ops.segment_sort(s, offs)[0], offs, r), c_sq), [s]))
    labels = rng.integers(0, w, size=n)
    mask = rng.random(n) < 0.7
    mask[0] = True
    cases.append(("cross_entropy", lambda: ops.cross_entropy(x, labels, mask), [x]))
    return cases


def toy_hypergraph() -> Hypergraph:
    """Six nodes, four hyperedges of mixed sizes; every node is covered."""
    return Hypergraph(6, [[0, 1, 2], [2, 3], [3, 4, 5], [0, 5]])


def layer_cases(rng: np.random.Generator, hidden: int = 4) -> list[tuple[str, Callable, list[Tensor]]]:
    """Scalar losses through a full layer for MLP/SAB encoders and fixed/learnable references."""
    h = toy_hypergraph()
    cases = []
    for enc in ("MLP", "SAB"):
        for learnable in (False, True):
            cfg = ModelConfig(encoder=enc, aggregator="SWP", learnable_W=learnable, MLP_hid=hidden,
                              Cls_hid=hidden, num_ref=3, heads=2, MLP_layers=2, dropout=0.0, in_dropout=0.0)
            layer = WhnnLayer(cfg, np.random.default_rng(int(rng.integers(2**32))))
            layer.eval()
            X = Tensor(rng.normal(size=(6, hidden)), requires_grad=True)
            c = rng.normal(size=(6, hidden))

            def build(layer=layer, X=X, c=c):
                return ops.sum(ops.mul(layer(X, h), Tensor(c)))
            name = f"layer-{enc}-{'LPSWE' if learnable else 'FPSWE'}"
            cases.append((name, build, [X] + layer.parameters()))
    return cases


def grad_suite(op_tol: float = 1e-6, layer_tol: float = 1e-4, seed: int = 0, repeats: int = 3,
               include_layer: bool = True) -> SuiteResult:
    """Every catalogue op under ``op_tol`` and full layers under ``layer_tol``."""
    def run():
        count, bad = 0, []
        worst = layer_worst = 0.0
        for rep in range(repeats):
            rng = np.random.default_rng(seed + rep)
            for name, build, params in catalogue_cases(rng):
                err = grad_check(build, params)
                count += 1
                worst = max(worst, err)
                if err > op_tol:
                    bad.append(f"{name}={err:.1e}")
        if include_layer:
            rng = np.random.default_rng(seed)
            for name, build, params in layer_cases(rng):
                err = grad_check(build, params)
                count += 1
                layer_worst = max(layer_worst, err)
                if err > layer_tol:
                    bad.append(f"{name}={err:.1e}")
        detail = f"layer_worst={layer_worst:.3e} (tol {layer_tol:.0e})"
        if bad:
            detail += f" failing: {', '.join(bad)}"
        return worst, count, detail, not bad
    return _timed("grad", op_tol, run)


def run_all(tol: Optional[float] = None, dtype=np.float64) -> list[SuiteResult]:
    """All suites; ``tol`` overrides the SWP-oracle tolerance (the one sensitive to ``dtype``)."""
    return [
        w2_oracle_suite(),
        swp_oracle_suite(tol=1e-9 if tol is None else tol, dtype=dtype),
        permutation_suite(),
        grad_suite(),
    ]
