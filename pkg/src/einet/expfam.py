"""Exponential-family leaf densities in expectation parameterization.

Leaves are parameterized by a tensor ``phi`` of shape
``(d_vars, k, replicas, suff_dim)`` holding expected sufficient statistics.
The per-variable log-density tensor ``E`` of shape
``(batch, d_vars, k, replicas)`` feeds leaf regions, which factorize over
their scope by summing the relevant slices of ``E``.
"""

from __future__ import annotations

import math

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


class UnsupportedValueError(ValueError):
    """A data value lies outside the leaf family's support."""


class ExponentialFamily:
    """Interface for a single exponential family; subclasses are stateless
    apart from projection bounds."""

    name = "abstract"
    suff_dim = 0
    discrete = False

    def suff_stat(self, x):
        raise NotImplementedError

    def log_prob(self, phi, x):
        """Log-density. ``phi`` has trailing axis suff_dim; ``x`` broadcasts
        against the leading axes of ``phi``."""
        raise NotImplementedError

    def check_support(self, x, var_index):
        raise NotImplementedError

    def sample(self, phi, rng):
        raise NotImplementedError

    def project(self, phi):
        """Map arbitrary nonnegative statistics onto the family's valid
        expectation-parameter set."""
        raise NotImplementedError

    def theta_from_phi(self, phi):
        raise NotImplementedError

    def phi_from_theta(self, theta):
        raise NotImplementedError

    def log_prob_grad_phi(self, phi, x):
        """d log p(x|phi) / d phi, used by the finite-difference oracle."""
        raise NotImplementedError

    def init_phi(self, shape, rng, data=None):
        raise NotImplementedError

    def support_values(self):
        """All support points for finite-support families, else None."""
        return None

    def to_dict(self):
        raise NotImplementedError

    @staticmethod
    def from_dict(doc):
        kind = doc["family"]
        if kind == "gaussian":
            return GaussianFamily(var_min=doc["var_min"], var_max=doc["var_max"])
        if kind == "categorical":
            return CategoricalFamily(doc["num_states"], p_min=doc["p_min"])
        if kind == "binomial":
            return BinomialFamily(doc["n_trials"], p_min=doc["p_min"])
        raise ValueError(f"unknown family {kind!r}")


class GaussianFamily(ExponentialFamily):
    """Univariate Gaussian with phi = (mean, second moment)."""

    name = "gaussian"
    suff_dim = 2

    def __init__(self, var_min=1e-6, var_max=math.inf):
        self.var_min = float(var_min)
        self.var_max = float(var_max)

    def suff_stat(self, x):
        return np.stack([x, x * x], axis=-1)

    def _mean_var(self, phi):
        mu = phi[..., 0]
        var = phi[..., 1] - mu * mu
        return mu, var

    def log_prob(self, phi, x):
        mu, var = self._mean_var(phi)
        return -0.5 * (LOG_2PI + np.log(var)) - (x - mu) ** 2 / (2.0 * var)

    def check_support(self, x, var_index):
        if not np.all(np.isfinite(x)):
            raise UnsupportedValueError(f"variable {var_index}: non-finite value")

    def sample(self, phi, rng):
        mu, var = self._mean_var(np.asarray(phi))
        return rng.normal(mu, np.sqrt(var))

    def project(self, phi):
        mu = phi[..., 0]
        var = np.clip(phi[..., 1] - mu * mu, self.var_min, self.var_max)
        return np.stack([mu, var + mu * mu], axis=-1)

    def theta_from_phi(self, phi):
        mu, var = self._mean_var(phi)
        return np.stack([mu / var, -0.5 / var], axis=-1)

    def phi_from_theta(self, theta):
        var = -0.5 / theta[..., 1]
        mu = theta[..., 0] * var
        return np.stack([mu, var + mu * mu], axis=-1)

    def log_prob_grad_phi(self, phi, x):
        mu, var = self._mean_var(phi)
        dvar = -0.5 / var + (x - mu) ** 2 / (2.0 * var * var)
        dmu = (x - mu) / var
        # var = phi2 - phi1^2, mu = phi1
        g1 = dmu + dvar * (-2.0 * mu)
        g2 = dvar
        return np.stack([g1, g2], axis=-1)

    def init_phi(self, shape, rng, data=None):
        lo, hi = (0.0, 1.0)
        d = shape[0]
        if data is not None and len(data):
            lo = np.min(data, axis=0)
            hi = np.max(data, axis=0)
        mu = lo + (hi - lo) * rng.random(shape) if np.ndim(lo) == 0 else (
            lo[:, None, None] + (hi - lo)[:, None, None] * rng.random(shape))
        var = np.ones(shape)
        assert mu.shape[0] == d
        return self.project(np.stack([mu, var + mu * mu], axis=-1))

    def to_dict(self):
        return {"family": self.name, "var_min": self.var_min,
                "var_max": self.var_max if math.isfinite(self.var_max) else 1e308}


class CategoricalFamily(ExponentialFamily):
    """Categorical over {0..num_states-1}; phi is the probability vector."""

    name = "categorical"
    discrete = True

    def __init__(self, num_states, p_min=1e-6):
        self.num_states = int(num_states)
        self.suff_dim = self.num_states
        self.p_min = float(p_min)

    def suff_stat(self, x):
        return np.eye(self.num_states)[np.asarray(x, dtype=np.int64)]

    def log_prob(self, phi, x):
        idx = np.asarray(x, dtype=np.int64)
        lp = np.log(phi)
        shape = np.broadcast_shapes(lp.shape[:-1], idx.shape)
        lp = np.broadcast_to(lp, shape + (self.num_states,))
        idx = np.broadcast_to(idx, shape)
        return np.take_along_axis(lp, idx[..., None], axis=-1)[..., 0]

    def check_support(self, x, var_index):
        xi = np.asarray(x)
        if not np.all((xi >= 0) & (xi < self.num_states) & (xi == np.floor(xi))):
            raise UnsupportedValueError(
                f"variable {var_index}: value outside {{0..{self.num_states - 1}}}")

    def sample(self, phi, rng):
        p = np.asarray(phi, dtype=np.float64)
        return int(rng.choice(self.num_states, p=p / p.sum()))

    def project(self, phi):
        p = np.maximum(phi, self.p_min)
        return p / p.sum(axis=-1, keepdims=True)

    def theta_from_phi(self, phi):
        return np.log(phi)

    def phi_from_theta(self, theta):
        return np.exp(theta)

    def log_prob_grad_phi(self, phi, x):
        idx = np.asarray(x, dtype=np.int64)
        shape = np.broadcast_shapes(phi.shape[:-1], idx.shape)
        phi_b = np.broadcast_to(phi, shape + (self.num_states,))
        idx_b = np.broadcast_to(idx, shape)
        g = np.zeros(shape + (self.num_states,))
        np.put_along_axis(
            g, idx_b[..., None],
            1.0 / np.take_along_axis(phi_b, idx_b[..., None], axis=-1),
            axis=-1)
        return g

    def init_phi(self, shape, rng, data=None):
        p = rng.dirichlet(np.ones(self.num_states), size=shape)
        return self.project(p)

    def support_values(self):
        return np.arange(self.num_states)

    def to_dict(self):
        return {"family": self.name, "num_states": self.num_states, "p_min": self.p_min}


class BinomialFamily(ExponentialFamily):
    """Binomial with fixed trial count; phi = n * success probability."""

    name = "binomial"
    suff_dim = 1
    discrete = True

    def __init__(self, n_trials, p_min=1e-6):
        self.n_trials = int(n_trials)
        self.p_min = float(p_min)

    def suff_stat(self, x):
        return np.asarray(x, dtype=np.float64)[..., None]

    def log_prob(self, phi, x):
        from scipy.special import gammaln
        n = self.n_trials
        xv = np.asarray(x, dtype=np.float64)
        p = phi[..., 0] / n
        log_h = gammaln(n + 1) - gammaln(xv + 1) - gammaln(n - xv + 1)
        return log_h + xv * np.log(p) + (n - xv) * np.log1p(-p)

    def check_support(self, x, var_index):
        xi = np.asarray(x)
        if not np.all((xi >= 0) & (xi <= self.n_trials) & (xi == np.floor(xi))):
            raise UnsupportedValueError(
                f"variable {var_index}: value outside {{0..{self.n_trials}}}")

    def sample(self, phi, rng):
        p = float(np.asarray(phi)[..., 0]) / self.n_trials
        return int(rng.binomial(self.n_trials, p))

    def project(self, phi):
        p = np.clip(phi[..., 0] / self.n_trials, self.p_min, 1.0 - self.p_min)
        return (p * self.n_trials)[..., None]

    def theta_from_phi(self, phi):
        p = phi[..., 0] / self.n_trials
        return np.log(p / (1.0 - p))[..., None]

    def phi_from_theta(self, theta):
        p = 1.0 / (1.0 + np.exp(-theta[..., 0]))
        return (p * self.n_trials)[..., None]

    def log_prob_grad_phi(self, phi, x):
        n = self.n_trials
        p = phi[..., 0] / n
        xv = np.asarray(x, dtype=np.float64)
        return ((xv / p - (n - xv) / (1.0 - p)) / n)[..., None]

    def init_phi(self, shape, rng, data=None):
        p = 0.25 + 0.5 * rng.random(shape)
        return self.project((p * self.n_trials)[..., None])

    def support_values(self):
        return np.arange(self.n_trials + 1)

    def to_dict(self):
        return {"family": self.name, "n_trials": self.n_trials, "p_min": self.p_min}


def ef_log_prob(family, phi, x, marg_mask=None):
    """Per-variable log-density tensor E of shape (batch, d, k, replicas).

    Masked variables contribute exactly 0 (they integrate out at the leaf).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    batch, d = x.shape
    _, k, r, _ = phi.shape
    e = np.zeros((batch, d, k, r), dtype=np.float64)
    for di in range(d):
        if marg_mask is not None and marg_mask[di]:
            continue
        family.check_support(x[:, di], di)
        e[:, di] = family.log_prob(phi[di][None], x[:, di, None, None])
    return e


def leaf_forward(circuit, family, phi, x, marg_mask=None, leaf_log_offset=None):
    """Leaf-region log-density rows, shape (batch, num leaf regions, k)."""
    e = ef_log_prob(family, phi, x, marg_mask)
    if leaf_log_offset is not None:
        offset = np.asarray(leaf_log_offset, dtype=np.float64)
        if marg_mask is not None:
            offset = np.where(np.asarray(marg_mask)[:, None, None], 0.0, offset)
        e = e + offset[None]
    leaf = circuit.layers[0]
    out = np.zeros((e.shape[0], len(leaf.region_ids), circuit.k), dtype=np.float64)
    for i, (scope, rep) in enumerate(zip(leaf.scopes, leaf.replica)):
        out[:, i, :] = e[:, :, :, int(rep)][:, scope, :].sum(axis=1)
    return out, e


def ef_sample(family, phi_vec, rng):
    """Draw one value from the family at expectation parameters phi_vec."""
    return family.sample(phi_vec, rng)


def ef_em_update(family, phi, acc_pt, acc_p, eps_count=1e-12):
    """Closed-form M-step for leaves: averaged sufficient statistics,
    falling back to the old parameters where responsibility mass is ~0,
    then projected back onto the valid parameter set."""
    keep = acc_p <= eps_count
    denom = np.where(keep, 1.0, acc_p)
    new = acc_pt / denom[..., None]
    new = np.where(keep[..., None], phi, new)
    return family.project(new)
