"""Bundles a compiled circuit with its parameters and leaf family."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import engine
from .compiler import LayeredCircuit, compile_graph
from .structures import RegionGraph


@dataclass
class EinetModel:
    circuit: LayeredCircuit
    params: engine.Parameters
    family: object
    provenance: dict = field(default_factory=dict)

    @property
    def d_vars(self) -> int:
        return self.circuit.d_vars

    def forward(self, x, marg_mask=None, tracker=None) -> engine.ForwardTrace:
        return engine.forward(self.circuit, self.params, self.family, x,
                              marg_mask, tracker=tracker)

    def log_likelihood(self, x, marg_mask=None, chunk=4096) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        out = np.empty(len(x))
        for lo in range(0, len(x), chunk):
            out[lo:lo + chunk] = self.forward(
                x[lo:lo + chunk], marg_mask).log_likelihood
        return out

    def mean_log_likelihood(self, x, marg_mask=None) -> float:
        return float(np.mean(self.log_likelihood(x, marg_mask)))

    def conditional_log_density(self, x, query, evidence) -> np.ndarray:
        return engine.conditional_log_density(
            self.circuit, self.params, self.family, x, query, evidence)

    def sample(self, n, seed=0) -> np.ndarray:
        return engine.sample(self.circuit, self.params, self.family, n, seed)

    def conditional_sample(self, x_e, evidence, n, seed=0) -> np.ndarray:
        return engine.conditional_sample(
            self.circuit, self.params, self.family, x_e, evidence, n, seed)


def build_model(rg: RegionGraph, family, k, k_root=1, seed=0, data=None,
                provenance=None) -> EinetModel:
    circuit = compile_graph(rg, k=k, k_root=k_root)
    params = engine.init_parameters(circuit, family, seed=seed, data=data)
    return EinetModel(circuit=circuit, params=params, family=family,
                      provenance=dict(provenance or {}))
