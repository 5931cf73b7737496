"""Wasserstein hypergraph layer and node-classification model."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autodiff import MLP, Linear, Module, Tensor, ops
from .baselines import DeepSetsAggregator, MeanAggregator, PMAAggregator
from .encoders import IsabEncoder, MlpEncoder, SabEncoder
from .hypergraph import Hypergraph, add_self_loops, neighbourhoods
from .rng import stream
from .swp import SWPAggregator

ENCODERS = ("MLP", "SAB", "ISAB")
AGGREGATORS = ("SWP", "Mean", "DeepSets", "PMA")
# aliases accepted on input; the SWP flavour is carried by learnable_W
_AGG_ALIASES = {
    "FPSWE": ("SWP", False), "SWP-fixed": ("SWP", False),
    "LPSWE": ("SWP", True), "SWP-learnable": ("SWP", True),
}


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    """Model hyperparameters; names follow the published search-space keys."""

    encoder: str = "MLP"
    aggregator: str = "SWP"
    learnable_W: bool = False
    num_ref: int = 10
    MLP_hid: int = 128
    MLP_layers: int = 1
    MLP2_layers: int = 0
    Cls_layers: int = 1
    Cls_hid: int = 128
    heads: int = 1
    self_loops: bool = True
    dropout: float = 0.5
    in_dropout: float = 0.2
    alpha: float = 0.5
    layers: int = 1
    swp_variant: str = "flatten"
    learnable_slices: bool = True
    num_inducing: int = 4
    bias: bool = True
    dtype: str = "float64"

    def __post_init__(self):
        alias = _AGG_ALIASES.get(self.aggregator)
        if alias is not None:
            self.aggregator, self.learnable_W = alias
        self.validate()

    @property
    def hidden(self) -> int:
        return self.MLP_hid

    @property
    def num_slices(self) -> int:
        return self.MLP_hid

    @property
    def aggregator_label(self) -> str:
        if self.aggregator == "SWP":
            return "LPSWE" if self.learnable_W else "FPSWE"
        return self.aggregator

    def validate(self) -> None:
        if self.encoder not in ENCODERS:
            raise ConfigError(f"encoder must be one of {ENCODERS}, got {self.encoder!r}")
        if self.aggregator not in AGGREGATORS:
            raise ConfigError(f"aggregator must be one of {AGGREGATORS} or an alias, got {self.aggregator!r}")
        for key in ("num_ref", "MLP_hid", "Cls_hid", "heads", "layers", "Cls_layers", "num_inducing"):
            if int(getattr(self, key)) < 1:
                raise ConfigError(f"{key} must be >= 1")
        if self.MLP_layers < 0 or self.MLP2_layers not in (0, 1):
            raise ConfigError("MLP_layers must be >= 0 and MLP2_layers in {0, 1}")
        if self.MLP_hid % self.heads:
            raise ConfigError(f"heads={self.heads} must divide MLP_hid={self.MLP_hid}")
        for key in ("dropout", "in_dropout"):
            if not 0.0 <= float(getattr(self, key)) < 1.0:
                raise ConfigError(f"{key} must lie in [0, 1)")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.swp_variant not in ("flatten", "per_slice"):
            raise ConfigError(f"unknown swp_variant {self.swp_variant!r}")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError("dtype must be float64 or float32")

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def make_encoder(cfg: ModelConfig, rng: np.random.Generator) -> Module:
    d, dt = cfg.hidden, np.dtype(cfg.dtype)
    if cfg.encoder == "MLP":
        return MlpEncoder(cfg.MLP_layers, d, d, d, rng, dropout=cfg.dropout, bias=cfg.bias, dtype=dt)
    if cfg.encoder == "SAB":
        return SabEncoder(d, cfg.heads, cfg.MLP_layers, d, rng, dropout=cfg.dropout, bias=cfg.bias, dtype=dt)
    return IsabEncoder(d, cfg.heads, cfg.num_inducing, cfg.MLP_layers, d, rng, dropout=cfg.dropout,
                       bias=cfg.bias, dtype=dt)


def make_aggregator(cfg: ModelConfig, rng: np.random.Generator) -> Module:
    d, dt = cfg.hidden, np.dtype(cfg.dtype)
    if cfg.aggregator == "SWP":
        return SWPAggregator(d, cfg.num_slices, cfg.num_ref, d, rng, learnable_ref=cfg.learnable_W,
                             learnable_slices=cfg.learnable_slices, variant=cfg.swp_variant, dtype=dt)
    if cfg.aggregator == "Mean":
        return MeanAggregator()
    if cfg.aggregator == "DeepSets":
        return DeepSetsAggregator(d, cfg.MLP_layers, d, rng, dropout=cfg.dropout, bias=cfg.bias, dtype=dt)
    return PMAAggregator(d, cfg.heads, cfg.MLP_layers, d, rng, dropout=cfg.dropout, bias=cfg.bias, dtype=dt)


class WhnnLayer(Module):
    """One node -> hyperedge -> node round with residual mixing.

    Stage 1 encodes node features per hyperedge and pools each hyperedge's
    members; stage 2 encodes the hyperedge features per node and pools each
    node's hyperedges. The output is ``alpha * pooled + (1 - alpha) * input``,
    optionally followed by one extra linear map.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        dt = np.dtype(cfg.dtype)
        self.alpha = float(cfg.alpha)
        self.dim = cfg.hidden
        self.node_encoder = make_encoder(cfg, rng)
        self.edge_aggregator = make_aggregator(cfg, rng)
        self.edge_encoder = make_encoder(cfg, rng)
        self.node_aggregator = make_aggregator(cfg, rng)
        self.mlp2 = Linear(cfg.hidden, cfg.hidden, rng, bias=cfg.bias, dtype=dt) if cfg.MLP2_layers else None
        self.dropout = cfg.dropout
        self.rng: Optional[np.random.Generator] = None

    def forward(self, X: Tensor, h: Hypergraph) -> Tensor:
        if X.shape[1] != self.dim:
            raise ConfigError(f"layer expects {self.dim} features, got {X.shape[1]}")
        node_neigh, edge_neigh = neighbourhoods(h)
        x0 = X
        z = self.edge_aggregator(self.node_encoder(X, edge_neigh), edge_neigh.offsets)
        z = ops.dropout(z, self.dropout, self.rng, self.training)
        x = self.node_aggregator(self.edge_encoder(z, node_neigh), node_neigh.offsets)
        if x.shape[1] != x0.shape[1]:
            raise ConfigError(f"stage output has {x.shape[1]} features, residual has {x0.shape[1]}")
        out = ops.scale(x, self.alpha) + ops.scale(x0, 1.0 - self.alpha)
        if self.mlp2 is not None:
            out = self.mlp2(out)
        return out


class WhnnModel(Module):
    """input dropout -> linear projection -> WHNN layer(s) -> classifier MLP."""

    def __init__(self, cfg: ModelConfig, d_in: int, num_classes: int, rng: np.random.Generator):
        dt = np.dtype(cfg.dtype)
        self.config = cfg
        self.d_in, self.num_classes = d_in, num_classes
        self.lin_in = Linear(d_in, cfg.hidden, rng, bias=cfg.bias, dtype=dt)
        self.layers = [WhnnLayer(cfg, rng) for _ in range(cfg.layers)]
        self.classifier = MLP(cfg.Cls_layers, cfg.hidden, cfg.Cls_hid, num_classes, rng,
                              dropout=cfg.dropout, bias=cfg.bias, dtype=dt)
        self.in_dropout = cfg.in_dropout
        self.dropout = cfg.dropout
        self.rng: Optional[np.random.Generator] = None

    def set_rng(self, rng: np.random.Generator) -> None:
        """Share one dropout stream across every module that samples masks."""
        for m in self.modules():
            if hasattr(m, "rng"):
                m.rng = rng

    def forward(self, features, h: Hypergraph) -> Tensor:
        x = features if isinstance(features, Tensor) else Tensor(np.asarray(features, dtype=self.config.dtype))
        if x.shape[1] != self.d_in:
            raise ConfigError(f"model expects {self.d_in} input features, got {x.shape[1]}")
        x = ops.dropout(x, self.in_dropout, self.rng, self.training)
        x = self.lin_in(x)
        for layer in self.layers:
            x = layer(x, h)
        x = ops.dropout(x, self.dropout, self.rng, self.training)
        return self.classifier(x)


def prepare_hypergraph(h: Hypergraph, cfg: ModelConfig) -> Hypergraph:
    if cfg.self_loops:
        return add_self_loops(h)
    if h.has_isolated():
        raise ConfigError("hypergraph has isolated nodes; enable self_loops")
    return h


def init_params(cfg: ModelConfig, d_in: int, num_classes: int, seed: int) -> WhnnModel:
    """Build a model whose parameters are a pure function of ``(cfg, seed)``."""
    model = WhnnModel(cfg, d_in, num_classes, stream(seed, "init"))
    model.set_rng(stream(seed, "dropout"))
    return model
