"""Tensorized probabilistic circuits with log-domain einsum inference."""

from .compiler import LayeredCircuit, assign_replica, compile_graph, topological_layers
from .engine import (BackwardStats, Parameters, backward, conditional_log_density,
                     conditional_sample, forward, init_parameters,
                     log_einsum_exp, sample)
from .estimator import EinsumNetwork
from .expfam import (BinomialFamily, CategoricalFamily, GaussianFamily,
                     ef_em_update, ef_log_prob, ef_sample, leaf_forward)
from .model import EinetModel, build_model
from .modelio import load_dataset, load_model, save_dataset, save_model
from .structures import (RegionGraph, StructureConfig, poon_domingos,
                         random_binary_tree, validate)
from .trainer import (MixtureModel, TrainerConfig, em_full_step,
                      em_stochastic_step, kmeans, train, train_mixture)

__all__ = [
    "BackwardStats", "BinomialFamily", "CategoricalFamily", "EinetModel",
    "EinsumNetwork", "GaussianFamily", "LayeredCircuit", "MixtureModel",
    "Parameters", "RegionGraph", "StructureConfig", "TrainerConfig",
    "assign_replica", "backward", "build_model", "compile_graph",
    "conditional_log_density", "conditional_sample", "ef_em_update",
    "ef_log_prob", "ef_sample", "em_full_step", "em_stochastic_step",
    "forward", "init_parameters", "kmeans", "leaf_forward", "load_dataset",
    "load_model", "log_einsum_exp", "poon_domingos", "random_binary_tree",
    "sample", "save_dataset", "save_model", "topological_layers", "train",
    "train_mixture", "validate",
]

__version__ = "0.1.0"
