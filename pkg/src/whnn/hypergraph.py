"""Hypergraph containers, the canonical JSON dataset format, splits and synthetic data."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .rng import stream

SPLIT_NAMES = ("train", "val", "test")


class DatasetFormatError(ValueError):
    """A dataset or hypergraph record failed validation."""


@dataclass(frozen=True)
class Incidence:
    """A list of index lists stored as ``offsets`` + flat ``index`` arrays.

    Segment ``k`` is ``index[offsets[k]:offsets[k + 1]]``.
    """

    offsets: np.ndarray
    index: np.ndarray

    def __len__(self) -> int:
        return len(self.offsets) - 1

    @property
    def sizes(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def nnz(self) -> int:
        return int(self.offsets[-1])

    def __getitem__(self, k: int) -> np.ndarray:
        return self.index[self.offsets[k]:self.offsets[k + 1]]

    def tolist(self) -> list[list[int]]:
        return [self[k].tolist() for k in range(len(self))]

    @classmethod
    def from_lists(cls, lists: Sequence[Sequence[int]]) -> "Incidence":
        sizes = [len(s) for s in lists]
        offsets = np.zeros(len(lists) + 1, dtype=np.int64)
        offsets[1:] = np.cumsum(sizes)
        index = np.fromiter((i for s in lists for i in s), dtype=np.int64, count=int(offsets[-1]))
        return cls(offsets, index)


def _transpose_incidence(inc: Incidence, num_targets: int) -> Incidence:
    owners = np.repeat(np.arange(len(inc), dtype=np.int64), inc.sizes)
    # stable sort by target keeps owners ascending within each target
    order = np.argsort(inc.index, kind="stable")
    counts = np.bincount(inc.index, minlength=num_targets)
    offsets = np.zeros(num_targets + 1, dtype=np.int64)
    offsets[1:] = np.cumsum(counts)
    return Incidence(offsets, owners[order])


class Hypergraph:
    """``N`` nodes and ``M`` hyperedges with both incidence directions.

    Members of each hyperedge are stored sorted ascending. Duplicate members,
    empty hyperedges and out-of-range node indices are rejected. Nodes that
    belong to no hyperedge are rejected unless ``allow_isolated`` is set
    (they must then be covered by :func:`add_self_loops` before aggregation).
    """

    def __init__(self, num_nodes: int, edges: Sequence[Sequence[int]], allow_isolated: bool = False):
        num_nodes = int(num_nodes)
        if num_nodes < 0:
            raise DatasetFormatError("num_nodes must be non-negative")
        canon = []
        for j, e in enumerate(edges):
            members = [int(i) for i in e]
            if not members:
                raise DatasetFormatError(f"edge {j}: empty hyperedge")
            for i in members:
                if i < 0 or i >= num_nodes:
                    raise DatasetFormatError(f"edge {j}: node index out of range ({i} not in [0, {num_nodes}))")
            members.sort()
            for a, b in zip(members, members[1:]):
                if a == b:
                    raise DatasetFormatError(f"edge {j}: duplicate node {a}")
            canon.append(members)
        self.num_nodes = num_nodes
        self.edges = Incidence.from_lists(canon)
        self.nodes = _transpose_incidence(self.edges, num_nodes)
        if not allow_isolated:
            isolated = np.flatnonzero(self.nodes.sizes == 0)
            if isolated.size:
                raise DatasetFormatError(
                    f"node {int(isolated[0])}: isolated node ({isolated.size} total); enable self-loops")
        self.allow_isolated = allow_isolated

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def edge_members(self) -> list[list[int]]:
        return self.edges.tolist()

    @property
    def node_memberships(self) -> list[list[int]]:
        return self.nodes.tolist()

    @property
    def num_incidences(self) -> int:
        return self.edges.nnz

    def has_isolated(self) -> bool:
        return bool(np.any(self.nodes.sizes == 0))

    def transpose(self) -> "Hypergraph":
        """Dual hypergraph: hyperedges become nodes and vice versa."""
        return Hypergraph(self.num_edges, self.node_memberships, allow_isolated=True)

    def permute_nodes(self, perm: Sequence[int]) -> "Hypergraph":
        """Relabel node ``i`` as ``perm[i]``."""
        perm = np.asarray(perm)
        return Hypergraph(self.num_nodes, [[int(perm[i]) for i in e] for e in self.edge_members],
                          allow_isolated=self.allow_isolated)

    def __eq__(self, other) -> bool:
        return (isinstance(other, Hypergraph) and self.num_nodes == other.num_nodes
                and np.array_equal(self.edges.offsets, other.edges.offsets)
                and np.array_equal(self.edges.index, other.edges.index))

    def __repr__(self) -> str:
        return f"Hypergraph(num_nodes={self.num_nodes}, num_edges={self.num_edges}, nnz={self.num_incidences})"


def add_self_loops(h: Hypergraph) -> Hypergraph:
    """Append one singleton hyperedge ``{i}`` per node after the existing edges."""
    return Hypergraph(h.num_nodes, h.edge_members + [[i] for i in range(h.num_nodes)], allow_isolated=False)


def neighbourhoods(h: Hypergraph) -> tuple[Incidence, Incidence]:
    """``(node_neigh, edge_neigh)``: hyperedges of each node, nodes of each hyperedge."""
    return h.nodes, h.edges


@dataclass
class Dataset:
    hypergraph: Hypergraph
    features: np.ndarray
    labels: np.ndarray
    splits: Optional[dict] = None
    name: str = "dataset"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.hypergraph.num_nodes
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise DatasetFormatError(f"features: expected {n} rows, got shape {self.features.shape}")
        if not np.all(np.isfinite(self.features)):
            raise DatasetFormatError("features: NaN/Inf not permitted")
        if self.labels.shape != (n,):
            raise DatasetFormatError(f"labels: expected {n} entries, got {self.labels.shape}")
        if n and self.labels.min() < 0:
            raise DatasetFormatError(f"labels: negative class id at node {int(np.argmin(self.labels))}")
        if self.splits is not None:
            self.splits = {k: np.asarray(v, dtype=bool) for k, v in self.splits.items()}
            for k in SPLIT_NAMES:
                if k not in self.splits:
                    raise DatasetFormatError(f"splits: missing '{k}'")
                if self.splits[k].shape != (n,):
                    raise DatasetFormatError(f"splits: '{k}' mask has wrong length")
            total = sum(self.splits[k].astype(int) for k in SPLIT_NAMES)
            if np.any(total > 1):
                raise DatasetFormatError(f"splits: node {int(np.argmax(total > 1))} in more than one mask")

    @property
    def num_nodes(self) -> int:
        return self.hypergraph.num_nodes

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def with_splits(self, splits: dict) -> "Dataset":
        return Dataset(self.hypergraph, self.features, self.labels, splits, self.name, dict(self.meta))

    def with_hypergraph(self, h: Hypergraph) -> "Dataset":
        return Dataset(h, self.features, self.labels, self.splits, self.name, dict(self.meta))


# ---------------------------------------------------------------- canonical JSON


def _reject_constant(token):
    raise DatasetFormatError(f"non-finite number {token} not permitted")


def dataset_to_dict(ds: Dataset) -> dict:
    doc = {
        "num_nodes": ds.num_nodes,
        "features": ds.features.tolist(),
        "labels": ds.labels.tolist(),
        "edges": ds.hypergraph.edge_members,
    }
    if ds.splits is not None:
        doc["splits"] = {k: np.flatnonzero(ds.splits[k]).tolist() for k in SPLIT_NAMES}
    return doc


def dataset_from_dict(doc: dict, allow_isolated: bool = False, name: str = "dataset") -> Dataset:
    for key in ("num_nodes", "features", "labels", "edges"):
        if key not in doc:
            raise DatasetFormatError(f"missing key '{key}'")
    n = doc["num_nodes"]
    if not isinstance(n, int) or n < 0:
        raise DatasetFormatError(f"num_nodes: expected a non-negative integer, got {n!r}")
    feats = doc["features"]
    if len(feats) != n:
        raise DatasetFormatError(f"features: expected {n} rows, got {len(feats)}")
    if n:
        d = len(feats[0])
        for i, row in enumerate(feats):
            if len(row) != d:
                raise DatasetFormatError(f"features row {i}: feature-dimension mismatch ({len(row)} != {d})")
    features = np.asarray(feats, dtype=np.float64).reshape(n, -1)
    h = Hypergraph(n, doc["edges"], allow_isolated=allow_isolated)
    splits = None
    if doc.get("splits") is not None:
        splits = {}
        for k in SPLIT_NAMES:
            raw = doc["splits"].get(k)
            if raw is None:
                raise DatasetFormatError(f"splits: missing '{k}'")
            if len(raw) == n and all(isinstance(b, bool) for b in raw):
                mask = np.asarray(raw, dtype=bool)
            else:
                mask = np.zeros(n, dtype=bool)
                for i in raw:
                    if not 0 <= int(i) < n:
                        raise DatasetFormatError(f"splits '{k}': node index out of range ({i})")
                    mask[int(i)] = True
            splits[k] = mask
    return Dataset(h, features, np.asarray(doc["labels"], dtype=np.int64), splits, name=name)


def load_canonical(path: str, allow_isolated: bool = False) -> Dataset:
    """Read and validate a canonical JSON dataset file."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}: parse failure: {exc}") from exc
    if not isinstance(doc, dict):
        raise DatasetFormatError(f"{path}: top level must be a JSON object")
    return dataset_from_dict(doc, allow_isolated=allow_isolated, name=os.path.splitext(os.path.basename(path))[0])


def save_canonical(ds: Dataset, path: str) -> None:
    from .autodiff.checkpoint import atomic_write_text
    atomic_write_text(path, json.dumps(dataset_to_dict(ds), allow_nan=False))


# ---------------------------------------------------------------- splits


def random_split(n: int, ratios=(0.5, 0.25, 0.25), seed: int = 0, candidates=None) -> dict:
    """Disjoint train/val/test masks of sizes floor(r0*k), floor(r1*k), remainder.

    ``k`` is ``n`` or ``len(candidates)`` when only a subset of nodes is labelled.
    """
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {ratios}")
    pool = np.arange(n) if candidates is None else np.asarray(candidates, dtype=np.int64)
    k = len(pool)
    order = stream(seed, "split").permutation(k)
    n_train = int(math.floor(ratios[0] * k))
    n_val = int(math.floor(ratios[1] * k))
    parts = (order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:])
    masks = {}
    for name, part in zip(SPLIT_NAMES, parts):
        m = np.zeros(n, dtype=bool)
        m[pool[part]] = True
        masks[name] = m
    return masks


# ---------------------------------------------------------------- synthetic data


def synth_two_community(n_per_class: int = 30, edges_per_class: int = 10, d: int = 8,
                        noise: float = 0.0, seed: int = 0, mixed_fraction: float = 0.0,
                        edge_size: tuple[int, int] = (3, 6)) -> Dataset:
    """Two Gaussian clusters (means -1 and +1 in every coordinate).

    Class-pure hyperedges sample members within one class; a fraction
    ``mixed_fraction`` of all hyperedges instead samples members uniformly
    from both classes. Every node is covered by at least one hyperedge.
    """
    if n_per_class < 2 or edges_per_class < 2 or d < 1:
        raise ValueError("n_per_class and edges_per_class must be >= 2")
    if not 0.0 <= mixed_fraction <= 1.0:
        raise ValueError("mixed_fraction must lie in [0, 1]")
    rng = stream(seed, "data")
    n = 2 * n_per_class
    labels = np.repeat([0, 1], n_per_class)
    means = np.where(labels[:, None] == 0, -1.0, 1.0) * np.ones((1, d))
    features = means + noise * rng.standard_normal((n, d))
    total = 2 * edges_per_class
    n_mixed = int(round(mixed_fraction * total))
    edge_class = np.repeat([0, 1], edges_per_class)
    mixed = np.zeros(total, dtype=bool)
    mixed[rng.permutation(total)[:n_mixed]] = True
    lo, hi = edge_size
    edges = []
    for j in range(total):
        pool = np.arange(n) if mixed[j] else np.flatnonzero(labels == edge_class[j])
        size = int(rng.integers(lo, hi + 1))
        edges.append(set(rng.choice(pool, size=min(size, len(pool)), replace=False).tolist()))
    covered = set().union(*edges)
    for i in range(n):
        if i not in covered:
            if np.all(mixed):
                cand = np.arange(total)
            else:
                cand = np.flatnonzero(~mixed & (edge_class == labels[i]))
                if cand.size == 0:
                    cand = np.flatnonzero(mixed)
            edges[int(rng.choice(cand))].add(i)
    h = Hypergraph(n, [sorted(e) for e in edges])
    ds = Dataset(h, features, labels, random_split(n, seed=seed), name="two_community")
    ds.meta.update(kind="two_community", noise=noise, mixed_fraction=mixed_fraction, seed=seed)
    return ds


def synth_spread_dataset(n_edges: int = 200, edge_size: int = 16, d: int = 8, seed: int = 0,
                         sigma_small: float = 0.1, sigma_large: float = 1.0) -> Dataset:
    """Hyperedges whose classes differ only in the spread of member features.

    Each hyperedge holds ``edge_size`` member nodes drawn from
    ``N(0, sigma^2 I)`` (``sigma_small`` for class 0, ``sigma_large`` for
    class 1) and re-centred so the per-edge sample mean is exactly zero, plus
    one query node with an all-zero feature vector. Every node carries its
    hyperedge's class, but only query nodes enter the splits: their own
    features say nothing, and the mean of their hyperedge is zero for both
    classes, so the label is recoverable from dispersion alone.
    """
    if edge_size < 4:
        raise ValueError("edge_size must be >= 4")
    if n_edges < 2:
        raise ValueError("n_edges must be >= 2")
    rng = stream(seed, "data")
    edge_class = rng.permutation(np.arange(n_edges) % 2)
    k = edge_size + 1
    n = n_edges * k
    features = np.zeros((n, d))
    labels = np.repeat(edge_class, k)
    edges = []
    queries = []
    for j in range(n_edges):
        sigma = sigma_small if edge_class[j] == 0 else sigma_large
        x = sigma * rng.standard_normal((edge_size, d))
        x -= x.mean(axis=0, keepdims=True)
        base = j * k
        features[base:base + edge_size] = x
        queries.append(base + edge_size)
        edges.append(list(range(base, base + k)))
    h = Hypergraph(n, edges)
    splits = random_split(n, seed=seed, candidates=queries)
    ds = Dataset(h, features, labels, splits, name="spread")
    ds.meta.update(kind="spread", sigma_small=sigma_small, sigma_large=sigma_large,
                   edge_size=edge_size, seed=seed, query_nodes=queries)
    return ds
