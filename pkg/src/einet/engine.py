"""Batched log-domain evaluation of a layered circuit.

Forward passes keep every probabilistic value in the log domain while the
contraction weights stay linear; numerical stability comes from max-shifting
both input operands before exponentiation. The backward pass is an explicit
reverse traversal propagating per-sample responsibilities, which yields the
expected statistics driving EM, and ancestral sampling walks the same plan
top-down.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .compiler import EinsumLayer, LayeredCircuit, LeafLayer, MixingLayer
from .expfam import leaf_forward

EPS_W = 1e-12


class EngineError(RuntimeError):
    pass


class EvidenceError(ValueError):
    """The supplied evidence has probability zero under the model."""


@dataclass
class Parameters:
    """All trainable tensors of one circuit, keyed by layer index."""

    einsum: dict      # layer index -> (L, K_out, K, K)
    mixing: dict      # layer index -> (M, Dmax)
    phi: np.ndarray   # (d_vars, K, R, suff_dim)

    def copy(self):
        return Parameters(
            einsum={i: w.copy() for i, w in self.einsum.items()},
            mixing={i: w.copy() for i, w in self.mixing.items()},
            phi=self.phi.copy())


def project_einsum_weights(w, eps_w=EPS_W):
    """Floor then renormalize each (l, k) slice onto the simplex."""
    w = np.maximum(w, eps_w)
    return w / w.sum(axis=(2, 3), keepdims=True)


def project_mixing_weights(w, mask, eps_w=EPS_W):
    w = np.where(mask, np.maximum(w, eps_w), 0.0)
    return w / w.sum(axis=1, keepdims=True)


def init_parameters(circuit: LayeredCircuit, family, seed=0, data=None,
                    eps_w=EPS_W) -> Parameters:
    """Random initialization: uniform weights per sum (simplex-normalized),
    family-specific leaf parameters."""
    rng = np.random.default_rng(seed)
    einsum, mixing = {}, {}
    for i, layer in enumerate(circuit.layers):
        if isinstance(layer, EinsumLayer):
            l = len(layer.left_src)
            w = rng.random((l, layer.k_out, circuit.k, circuit.k))
            einsum[i] = project_einsum_weights(w, eps_w)
        elif isinstance(layer, MixingLayer):
            w = rng.random(layer.src.shape)
            mixing[i] = project_mixing_weights(w, layer.mask, eps_w)
    phi = family.init_phi(
        (circuit.d_vars, circuit.k, circuit.num_replicas), rng, data=data)
    return Parameters(einsum=einsum, mixing=mixing, phi=phi)


class AllocationTracker:
    """High-water mark of tensor-buffer bytes allocated by the engine."""

    def __init__(self):
        self.current = 0
        self.peak = 0

    def add(self, arr):
        self.current += arr.nbytes
        self.peak = max(self.peak, self.current)

    def reset(self):
        self.current = 0


def log_einsum_exp(log_left, log_right, w):
    """Stable contraction out[..., l, k] = log sum_ij w[l,k,i,j]
    exp(log_left[..., l, i]) exp(log_right[..., l, j]).

    Rows whose left or right operand is entirely -inf yield -inf.
    """
    log_left = np.asarray(log_left, dtype=np.float64)
    log_right = np.asarray(log_right, dtype=np.float64)
    a = np.max(log_left, axis=-1, keepdims=True)
    b = np.max(log_right, axis=-1, keepdims=True)
    ok_a = np.isfinite(a)
    ok_b = np.isfinite(b)
    ea = np.where(ok_a, np.exp(log_left - np.where(ok_a, a, 0.0)), 0.0)
    eb = np.where(ok_b, np.exp(log_right - np.where(ok_b, b, 0.0)), 0.0)
    r = np.einsum("lkij,...li,...lj->...lk", w, ea, eb)
    ok = (r > 0.0) & ok_a & ok_b
    with np.errstate(divide="ignore"):
        out = np.where(ok, a + b + np.log(np.where(ok, r, 1.0)), -np.inf)
    return out


def _mixing_forward(vals, w, mask):
    """vals: (B, M, Dmax, K) source log-densities; returns (B, M, K)."""
    vals = np.where(mask[None, :, :, None], vals, -np.inf)
    m = np.max(vals, axis=2)
    ok = np.isfinite(m)
    shifted = np.where(ok[:, :, None, :],
                       np.exp(vals - np.where(ok, m, 0.0)[:, :, None, :]), 0.0)
    r = np.einsum("mc,bmck->bmk", w, shifted)
    with np.errstate(divide="ignore"):
        return np.where(ok & (r > 0.0), m + np.log(np.where(r > 0.0, r, 1.0)),
                        -np.inf)


@dataclass
class ForwardTrace:
    """All per-layer outputs of one forward pass."""

    buffer: np.ndarray        # (B, num_buffer_rows, K)
    layer_outputs: list       # aligned with circuit.layers
    e: np.ndarray             # (B, D, K, R) leaf log-density tensor
    root: np.ndarray          # (B, K_root)
    x: np.ndarray
    marg_mask: np.ndarray | None

    @property
    def log_likelihood(self):
        if self.root.shape[1] != 1:
            raise EngineError("root vector length != 1 has no scalar density")
        return self.root[:, 0]


def forward(circuit: LayeredCircuit, params: Parameters, family, x,
            marg_mask=None, leaf_log_offset=None, tracker=None) -> ForwardTrace:
    """Evaluate log-densities for a batch; returns the full trace."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != circuit.d_vars:
        raise EngineError(
            f"batch has {x.shape[1]} variables, circuit expects {circuit.d_vars}")
    if params.phi.shape[:3] != (circuit.d_vars, circuit.k, circuit.num_replicas):
        raise EngineError("leaf parameter tensor does not match the circuit")
    batch = x.shape[0]

    buf = np.empty((batch, circuit.num_buffer_rows, circuit.k))
    if tracker:
        tracker.add(buf)

    leaf = circuit.layers[0]
    leaf_rows, e = leaf_forward(circuit, family, params.phi, x, marg_mask,
                                leaf_log_offset)
    if tracker:
        tracker.add(e)
    buf[:, leaf.out_rows, :] = leaf_rows
    layer_outputs = [leaf_rows]

    for i, layer in enumerate(circuit.layers):
        if i == 0:
            continue
        if isinstance(layer, EinsumLayer):
            log_n = buf[:, layer.left_src, :]
            log_np = buf[:, layer.right_src, :]
            if np.isnan(log_n).any() or np.isnan(log_np).any():
                raise EngineError(f"NaN entering einsum layer {i}")
            out = log_einsum_exp(log_n, log_np, params.einsum[i])
        else:
            prev = layer_outputs[i - 1]
            vals = prev[:, layer.src, :]
            out = _mixing_forward(vals, params.mixing[i], layer.mask)
        if tracker:
            tracker.add(out)
        if not layer.is_root:
            buf[:, layer.out_rows, :] = out
        layer_outputs.append(out)

    last = circuit.layers[-1]
    if isinstance(last, MixingLayer):
        root_val = layer_outputs[-1][:, last.region_ids.index(circuit.rg.root), :]
    else:
        root_val = layer_outputs[-1][:, 0, :]
    return ForwardTrace(buffer=buf, layer_outputs=layer_outputs, e=e,
                        root=root_val, x=x,
                        marg_mask=None if marg_mask is None
                        else np.asarray(marg_mask, dtype=bool))


def conditional_log_density(circuit, params, family, x, query, evidence):
    """log p(x_q | x_e) with all remaining variables marginalized.

    ``query`` and ``evidence`` are disjoint iterables of variable indices;
    ``x`` supplies the values for both sets (other entries are ignored).
    """
    query = set(query)
    evidence = set(evidence)
    if query & evidence:
        raise ValueError("query and evidence sets overlap")
    d = circuit.d_vars
    mask_num = np.array([i not in query and i not in evidence for i in range(d)])
    mask_den = np.array([i not in evidence for i in range(d)])
    num = forward(circuit, params, family, x, mask_num).log_likelihood
    den = forward(circuit, params, family, x, mask_den).log_likelihood
    if np.any(np.isneginf(den)):
        raise EvidenceError("evidence has probability zero under the model")
    return num - den


@dataclass
class BackwardStats:
    """Accumulated expected statistics of one or more batches."""

    einsum: dict                 # layer index -> array like the layer's weights
    mixing: dict                 # layer index -> (M, Dmax)
    acc_p: np.ndarray            # (D, K, R) responsibility mass per leaf density
    acc_pt: np.ndarray           # (D, K, R, suff_dim) responsibility-weighted stats
    n_samples: int = 0

    def merge(self, other: "BackwardStats"):
        for i, w in other.einsum.items():
            self.einsum[i] += w
        for i, w in other.mixing.items():
            self.mixing[i] += w
        self.acc_p += other.acc_p
        self.acc_pt += other.acc_pt
        self.n_samples += other.n_samples
        return self


def _zero_stats(circuit, params, family) -> BackwardStats:
    return BackwardStats(
        einsum={i: np.zeros_like(w) for i, w in params.einsum.items()},
        mixing={i: np.zeros_like(w) for i, w in params.mixing.items()},
        acc_p=np.zeros(params.phi.shape[:3]),
        acc_pt=np.zeros(params.phi.shape[:3] + (family.suff_dim,)))


def backward(circuit: LayeredCircuit, params: Parameters, family,
             trace: ForwardTrace, tracker=None) -> BackwardStats:
    """Explicit reverse pass computing expected statistics.

    Per sample, each sum entry's responsibility is split among its children
    in proportion to weight times child likelihood; leaf responsibilities
    and responsibility-weighted sufficient statistics are accumulated over
    the batch.
    """
    stats = _zero_stats(circuit, params, family)
    batch = trace.x.shape[0]
    stats.n_samples = batch
    buf = trace.buffer
    resp = np.zeros((batch, circuit.num_buffer_rows, circuit.k))
    if tracker:
        tracker.add(resp)
    root_resp = {}  # layer index -> responsibility array for root-width rows

    for i in range(len(circuit.layers) - 1, 0, -1):
        layer = circuit.layers[i]
        out = trace.layer_outputs[i]
        if isinstance(layer, MixingLayer):
            if layer.is_root:
                rho = np.zeros((batch,) + out.shape[1:])
                rho[:, layer.region_ids.index(circuit.rg.root), :] = 1.0
            else:
                rho = resp[:, layer.out_rows, :]
            w = params.mixing[i]
            prev = trace.layer_outputs[i - 1]
            log_sc = prev[:, layer.src, :]                      # (B, M, Dmax, K)
            diff = log_sc - out[:, :, None, :]
            ok = np.isfinite(diff) & layer.mask[None, :, :, None]
            ratio = np.where(ok, np.exp(np.where(ok, diff, 0.0)), 0.0)
            contrib = rho[:, :, None, :] * w[None, :, :, None] * ratio
            stats.mixing[i] += contrib.sum(axis=(0, 3))
            # responsibilities of the simple-sum rows in the previous layer
            prev_layer = circuit.layers[i - 1]
            prev_rho = np.zeros((batch,) + prev.shape[1:])
            for mi in range(layer.src.shape[0]):
                for ci in range(layer.src.shape[1]):
                    if layer.mask[mi, ci]:
                        prev_rho[:, layer.src[mi, ci], :] += contrib[:, mi, ci, :]
            if prev_layer.is_root:
                root_resp[i - 1] = prev_rho
            else:
                # simple sums also occupy buffer rows; fold into the buffer
                resp[:, prev_layer.out_rows, :] += prev_rho
        else:
            if layer.is_root:
                if i in root_resp:
                    rho = root_resp[i]
                else:
                    rho = np.ones((batch,) + out.shape[1:])
            else:
                rho = resp[:, layer.out_rows, :]
            w = params.einsum[i]
            log_n = buf[:, layer.left_src, :]
            log_np = buf[:, layer.right_src, :]
            a = np.max(log_n, axis=-1, keepdims=True)
            b = np.max(log_np, axis=-1, keepdims=True)
            ok_a, ok_b = np.isfinite(a), np.isfinite(b)
            ea = np.where(ok_a, np.exp(log_n - np.where(ok_a, a, 0.0)), 0.0)
            eb = np.where(ok_b, np.exp(log_np - np.where(ok_b, b, 0.0)), 0.0)
            r = np.where(np.isfinite(out), np.exp(out - a - b), 0.0)
            rho_t = np.where(r > 0.0, rho / np.where(r > 0.0, r, 1.0), 0.0)
            stats.einsum[i] += np.einsum("blk,bli,blj->lkij", rho_t, ea, eb) * w
            left_c = ea * np.einsum("blk,lkij,blj->bli", rho_t, w, eb)
            right_c = eb * np.einsum("blk,lkij,bli->blj", rho_t, w, ea)
            np.add.at(resp, (slice(None), layer.left_src), left_c)
            np.add.at(resp, (slice(None), layer.right_src), right_c)

    leaf = circuit.layers[0]
    rho_leaf = resp[:, leaf.out_rows, :]                        # (B, nleaf, K)
    t_all = family.suff_stat(trace.x)                           # (B, D, suff_dim)
    mask = trace.marg_mask
    for li, (scope, rep) in enumerate(zip(leaf.scopes, leaf.replica)):
        rho = rho_leaf[:, li, :]
        for d in scope:
            stats.acc_p[d, :, rep] += rho.sum(axis=0)
            if mask is None or not mask[d]:
                stats.acc_pt[d, :, rep, :] += np.einsum("bk,bt->kt", rho, t_all[:, d])
    return stats


def _draw(rng, probs):
    """Index draw from an unnormalized probability vector."""
    c = np.cumsum(probs)
    if c[-1] <= 0.0:
        raise EngineError("cannot sample from an all-zero weight vector")
    return int(np.searchsorted(c, rng.random() * c[-1], side="right"))


def _descend(circuit, params, family, rng, x_e=None, evidence=None, trace=None):
    d = circuit.d_vars
    out = np.empty(d)
    leaf = circuit.layers[0]
    leaf_index = {rid: i for i, rid in enumerate(leaf.region_ids)}
    stack = [(circuit.rg.root, 0)]
    while stack:
        region, k = stack.pop()
        if region in leaf_index:
            li = leaf_index[region]
            rep = leaf.replica[li]
            for dv in leaf.scopes[li]:
                if evidence is not None and dv in evidence:
                    out[dv] = x_e[dv]
                else:
                    out[dv] = family.sample(params.phi[dv, k, rep], rng)
            continue
        sum_rows = circuit.region_sum_rows[region]
        if len(sum_rows) > 1:
            mlayer, mrow = circuit.region_mix_row[region]
            mix = circuit.layers[mlayer]
            w = np.where(mix.mask[mrow], params.mixing[mlayer][mrow], 0.0)
            if trace is not None:
                prev = trace.layer_outputs[mlayer - 1]
                log_s = trace.layer_outputs[mlayer][0, mrow, k]
                log_sc = prev[0, mix.src[mrow], k]
                diff = log_sc - log_s
                ok = mix.mask[mrow] & np.isfinite(diff)
                post = w * np.where(ok, np.exp(np.where(ok, diff, 0.0)), 0.0)
                c = _draw(rng, post)
            else:
                c = _draw(rng, w)
        else:
            c = 0
        pid, lidx, lrow = sum_rows[c]
        part = circuit.rg.partitions[pid]
        w = params.einsum[lidx][lrow, k]                        # (K, K)
        if trace is not None:
            layer = circuit.layers[lidx]
            log_n = trace.buffer[0, layer.left_src[lrow], :]
            log_np = trace.buffer[0, layer.right_src[lrow], :]
            log_s = trace.layer_outputs[lidx][0, lrow, k]
            post = w * np.exp(log_n[:, None] + log_np[None, :] - log_s)
            idx = _draw(rng, post.ravel())
        else:
            idx = _draw(rng, w.ravel())
        i, j = divmod(idx, circuit.k)
        stack.append((part.left, i))
        stack.append((part.right, j))
    return out


def sample(circuit, params, family, n, seed=0):
    """Ancestral sampling: n complete assignments, deterministic in seed."""
    if circuit.k_root != 1:
        raise EngineError("sampling requires a scalar root (k_root = 1)")
    streams = np.random.SeedSequence(seed).spawn(n)
    return np.stack([
        _descend(circuit, params, family, np.random.default_rng(s))
        for s in streams])


def conditional_sample(circuit, params, family, x_e, evidence, n, seed=0):
    """Ancestral sampling from the conditional given evidence values.

    Observed variables are copied from ``x_e``; branch choices follow the
    posterior computed from an evidence-marginalized forward pass. An empty
    evidence set reuses the unconditional path (same per-sample seed policy).
    """
    evidence = set(evidence)
    if not evidence:
        return sample(circuit, params, family, n, seed)
    if circuit.k_root != 1:
        raise EngineError("sampling requires a scalar root (k_root = 1)")
    d = circuit.d_vars
    mask = np.array([i not in evidence for i in range(d)])
    x_e = np.asarray(x_e, dtype=np.float64)
    trace = forward(circuit, params, family, x_e[None, :], mask)
    if not np.isfinite(trace.log_likelihood[0]):
        raise EvidenceError("evidence has probability zero under the model")
    streams = np.random.SeedSequence(seed).spawn(n)
    return np.stack([
        _descend(circuit, params, family, np.random.default_rng(s),
                 x_e=x_e, evidence=evidence, trace=trace)
        for s in streams])
