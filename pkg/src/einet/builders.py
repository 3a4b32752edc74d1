"""Shared construction helpers for the CLI and the estimator."""

from __future__ import annotations

import math

from .expfam import BinomialFamily, CategoricalFamily, GaussianFamily
from .structures import StructureConfig, poon_domingos, random_binary_tree


def make_family(family="gaussian", num_states=2, n_trials=255,
                image_mode=False, var_min=1e-6, var_max=None):
    if family == "gaussian":
        if var_max is None:
            var_max = 1e-2 if image_mode else math.inf
        return GaussianFamily(var_min=var_min, var_max=var_max)
    if family == "categorical":
        return CategoricalFamily(num_states)
    if family == "binomial":
        return BinomialFamily(n_trials)
    raise ValueError(f"unknown family {family!r}")


def make_structure(structure, d_vars=None, depth=2, replicas=4, seed=0,
                   height=None, width=None, deltas=(1,), axes="both"):
    if structure == "rat":
        if d_vars is None:
            raise ValueError("rat structure needs the variable count")
        return random_binary_tree(d_vars, StructureConfig(
            depth=depth, replicas=replicas, seed=seed))
    if structure == "pd":
        if height is None or width is None:
            raise ValueError("pd structure needs --height and --width")
        if d_vars is not None and height * width != d_vars:
            raise ValueError(
                f"height*width = {height * width} but data has {d_vars} variables")
        return poon_domingos(height, width, StructureConfig(
            deltas=tuple(deltas), axes=axes))
    raise ValueError(f"unknown structure {structure!r}")
