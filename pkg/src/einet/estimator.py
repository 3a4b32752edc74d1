"""Scikit-learn style estimator facade.

``EinsumNetwork`` wires structure generation, compilation, EM training and
inference into a fit/score/sample interface so the model composes with
sklearn pipelines and model selection utilities.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .builders import make_family, make_structure
from .model import build_model
from .trainer import TrainerConfig, train


class EinsumNetwork(BaseEstimator):
    """Tensorized probabilistic-circuit density estimator trained with EM.

    Parameters mirror the two structure families: randomized binary trees
    (``structure="rat"``: depth, replicas) and image-grid rectangle
    decompositions (``structure="pd"``: height, width, deltas, axes).
    """

    def __init__(self, structure="rat", depth=2, replicas=4, k=8,
                 height=None, width=None, deltas=(1,), axes="both",
                 family="gaussian", num_states=2, n_trials=255,
                 image_mode=False, mode="stochastic", step_size=0.5,
                 batch_size=500, epochs=10, seed=0):
        self.structure = structure
        self.depth = depth
        self.replicas = replicas
        self.k = k
        self.height = height
        self.width = width
        self.deltas = deltas
        self.axes = axes
        self.family = family
        self.num_states = num_states
        self.n_trials = n_trials
        self.image_mode = image_mode
        self.mode = mode
        self.step_size = step_size
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed

    def _build(self, x):
        fam = make_family(self.family, num_states=self.num_states,
                          n_trials=self.n_trials, image_mode=self.image_mode)
        rg = make_structure(self.structure, d_vars=x.shape[1],
                            depth=self.depth, replicas=self.replicas,
                            seed=self.seed, height=self.height,
                            width=self.width, deltas=self.deltas,
                            axes=self.axes)
        return build_model(rg, fam, k=self.k, seed=self.seed, data=x)

    def fit(self, X, y=None):
        x = check_array(X, dtype=np.float64)
        self.model_ = self._build(x)
        cfg = TrainerConfig(mode=self.mode, step_size=self.step_size,
                            batch_size=self.batch_size, epochs=self.epochs,
                            seed=self.seed)
        self.metrics_ = train(self.model_, x, cfg)
        self.n_features_in_ = x.shape[1]
        return self

    def score_samples(self, X):
        check_is_fitted(self, "model_")
        x = check_array(X, dtype=np.float64)
        return self.model_.log_likelihood(x)

    def score(self, X, y=None):
        return float(np.mean(self.score_samples(X)))

    def sample(self, n_samples=1, seed=None):
        check_is_fitted(self, "model_")
        return self.model_.sample(n_samples,
                                  self.seed if seed is None else seed)

    def conditional_sample(self, x_e, evidence, n_samples=1, seed=None):
        check_is_fitted(self, "model_")
        return self.model_.conditional_sample(
            x_e, evidence, n_samples, self.seed if seed is None else seed)
