"""Hypergraph node classification with Sliced Wasserstein Pooling."""

from .hypergraph import (
    Dataset,
    DatasetFormatError,
    Hypergraph,
    Incidence,
    add_self_loops,
    load_canonical,
    neighbourhoods,
    random_split,
    save_canonical,
    synth_spread_dataset,
    synth_two_community,
)
from .model import ConfigError, ModelConfig, WhnnLayer, WhnnModel, init_params, prepare_hypergraph
from .swp import SWPAggregator, sample_reference, swp_embedding, wasserstein_aggregate

__version__ = "0.1.0"

__all__ = [
    "Dataset", "DatasetFormatError", "Hypergraph", "Incidence", "add_self_loops", "load_canonical",
    "neighbourhoods", "random_split", "save_canonical", "synth_spread_dataset", "synth_two_community",
    "ConfigError", "ModelConfig", "WhnnLayer", "WhnnModel", "init_params", "prepare_hypergraph",
    "SWPAggregator", "sample_reference", "swp_embedding", "wasserstein_aggregate",
]
