"""EM training: full-batch, stochastic (gliding-average) and the
cluster-then-mix pipeline.

The E-step accumulates expected statistics through the engine's backward
pass; the M-step renormalizes them per sum and averages sufficient
statistics per leaf. The stochastic variant interpolates between the
current parameters and the minibatch M-step target with step size
``lam`` in [0, 1]; ``lam = 1`` on the full dataset reproduces the
full-batch update exactly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import engine
from .model import EinetModel

EPS_COUNT = 1e-12


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainerConfig:
    mode: str = "stochastic"          # full | stochastic
    step_size: float = 0.5
    batch_size: int = 500
    epochs: int = 10
    seed: int = 0
    eps_w: float = engine.EPS_W
    chunk: int = 4096                 # E-step accumulation chunk

    def __post_init__(self):
        if self.mode not in ("full", "stochastic"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0.0 <= self.step_size <= 1.0:
            raise ValueError("step size must lie in [0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")


@dataclass
class EpochMetrics:
    epoch: int
    train_ll: float
    valid_ll: float
    wall_seconds: float


def _accumulate(model: EinetModel, data, chunk) -> tuple:
    """E-step over a dataset: merged BackwardStats and total log-likelihood."""
    stats = None
    total_ll = 0.0
    for lo in range(0, len(data), chunk):
        trace = model.forward(data[lo:lo + chunk])
        total_ll += float(np.sum(trace.log_likelihood))
        part = engine.backward(model.circuit, model.params, model.family, trace)
        stats = part if stats is None else stats.merge(part)
    return stats, total_ll


def _mstep_targets(model: EinetModel, stats: engine.BackwardStats):
    """Raw M-step targets; sums with no responsibility mass keep their old
    parameters (degenerate rows)."""
    p = model.params
    w_t = {}
    for i, acc in stats.einsum.items():
        denom = acc.sum(axis=(2, 3), keepdims=True)
        w_t[i] = np.where(denom > 0.0, acc / np.where(denom > 0.0, denom, 1.0),
                          p.einsum[i])
    m_t = {}
    for i, acc in stats.mixing.items():
        denom = acc.sum(axis=1, keepdims=True)
        m_t[i] = np.where(denom > 0.0, acc / np.where(denom > 0.0, denom, 1.0),
                          p.mixing[i])
    keep = stats.acc_p <= EPS_COUNT
    denom = np.where(keep, 1.0, stats.acc_p)
    phi_t = np.where(keep[..., None], p.phi, stats.acc_pt / denom[..., None])
    return w_t, m_t, phi_t


def _project(model: EinetModel, eps_w):
    p = model.params
    for i in p.einsum:
        p.einsum[i] = engine.project_einsum_weights(p.einsum[i], eps_w)
    for i in p.mixing:
        p.mixing[i] = engine.project_mixing_weights(
            p.mixing[i], model.circuit.layers[i].mask, eps_w)
    p.phi = model.family.project(p.phi)


def em_stochastic_step(model: EinetModel, batch, lam, eps_w=engine.EPS_W,
                       chunk=4096) -> float:
    """One gliding-average EM update on a minibatch; returns the batch's
    pre-update mean log-likelihood. ``lam = 0`` leaves every parameter
    bitwise unchanged."""
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    stats, total_ll = _accumulate(model, batch, chunk)
    mean_ll = total_ll / len(batch)
    if lam == 0.0:
        return mean_ll
    w_t, m_t, phi_t = _mstep_targets(model, stats)
    p = model.params
    for i in p.einsum:
        p.einsum[i] = (1.0 - lam) * p.einsum[i] + lam * w_t[i]
    for i in p.mixing:
        p.mixing[i] = (1.0 - lam) * p.mixing[i] + lam * m_t[i]
    p.phi = (1.0 - lam) * p.phi + lam * phi_t
    _project(model, eps_w)
    return mean_ll


def em_full_step(model: EinetModel, data, eps_w=engine.EPS_W, chunk=4096) -> float:
    """One full-batch EM update; returns the pre-update mean train
    log-likelihood. Identical (bitwise) to a lam = 1 stochastic step on the
    whole dataset."""
    return em_stochastic_step(model, data, lam=1.0, eps_w=eps_w, chunk=chunk)


def _check_finite(model, epoch, batch_idx):
    p = model.params
    bad = (any(not np.all(np.isfinite(w)) for w in p.einsum.values())
           or any(not np.all(np.isfinite(w)) for w in p.mixing.values())
           or not np.all(np.isfinite(p.phi)))
    if bad:
        raise TrainingDiverged(
            f"non-finite parameters after epoch {epoch}, batch {batch_idx}")


def train(model: EinetModel, data, cfg: TrainerConfig, valid=None) -> list:
    """Epoch loop over seeded shuffled batches; metrics per epoch."""
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if len(data) == 0:
        raise ValueError("training dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    metrics = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        if cfg.mode == "full":
            em_full_step(model, data, eps_w=cfg.eps_w, chunk=cfg.chunk)
            _check_finite(model, epoch, 0)
        else:
            order = rng.permutation(len(data))
            for bi, lo in enumerate(range(0, len(data), cfg.batch_size)):
                em_stochastic_step(model, data[order[lo:lo + cfg.batch_size]],
                                   cfg.step_size, eps_w=cfg.eps_w,
                                   chunk=cfg.chunk)
                _check_finite(model, epoch, bi)
        train_ll = model.mean_log_likelihood(data)
        valid_ll = model.mean_log_likelihood(valid) if valid is not None \
            else float("nan")
        metrics.append(EpochMetrics(epoch=epoch, train_ll=train_ll,
                                    valid_ll=valid_ll,
                                    wall_seconds=time.perf_counter() - t0))
    return metrics


def kmeans(data, k, seed=0, max_iter=50):
    """Lloyd's algorithm; empty clusters are reseeded to the farthest point.

    Returns (labels, centers)."""
    if k < 1:
        raise ValueError("need at least one cluster")
    if k > len(data):
        raise ValueError("more clusters than samples")
    rng = np.random.default_rng(seed)
    centers = data[rng.choice(len(data), size=k, replace=False)].astype(float)
    labels = np.zeros(len(data), dtype=np.int64)
    for _ in range(max_iter):
        d2 = ((data[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = d2.argmin(axis=1)
        for c in range(k):
            sel = new_labels == c
            if sel.any():
                centers[c] = data[sel].mean(axis=0)
            else:
                far = d2.min(axis=1).argmax()
                centers[c] = data[far]
                new_labels[far] = c
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return labels, centers


@dataclass
class MixtureModel:
    """Convex mixture of trained models; itself a valid density."""

    components: list                  # EinetModel
    log_pi: np.ndarray

    @property
    def weights(self):
        return np.exp(self.log_pi)

    def log_likelihood(self, x) -> np.ndarray:
        parts = np.stack([m.log_likelihood(x) for m in self.components])
        return logsumexp(parts + self.log_pi[:, None], axis=0)

    def mean_log_likelihood(self, x) -> float:
        return float(np.mean(self.log_likelihood(x)))


def train_mixture(data, n_clusters, model_factory, cfg: TrainerConfig,
                  seed=0) -> MixtureModel:
    """Cluster the data, train one model per cluster, mix by cluster
    proportion. ``model_factory(cluster_index, cluster_data)`` must return a
    fresh untrained EinetModel."""
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    labels, _ = kmeans(data, n_clusters, seed=seed)
    components, counts = [], []
    for c in range(n_clusters):
        subset = data[labels == c]
        m = model_factory(c, subset)
        train(m, subset, cfg)
        components.append(m)
        counts.append(len(subset))
    pi = np.asarray(counts, dtype=np.float64)
    pi /= pi.sum()
    return MixtureModel(components=components, log_pi=np.log(pi))
