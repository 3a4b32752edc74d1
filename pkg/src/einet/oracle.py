"""Ground-truth reference implementations used by the test suite.

Expands a compiled circuit into one scalar node per vector entry and
evaluates it node by node, giving an implementation of the density that is
independent of the layered einsum engine. Also provides exhaustive
discrete marginalization and central finite differences for gradient
checks. Everything here is intentionally simple and slow.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import engine
from .compiler import EinsumLayer, LayeredCircuit, MixingLayer, compile_graph
from .expfam import CategoricalFamily, GaussianFamily
from .structures import StructureConfig, random_binary_tree


@dataclass
class ScalarNode:
    kind: str                       # leaf | prod | sum
    children: list = field(default_factory=list)   # node ids
    weights: list = field(default_factory=list)    # sum nodes only
    factors: list = field(default_factory=list)    # leaf nodes: (d, k, r)


@dataclass
class ScalarCircuit:
    nodes: list                     # topological order, children first
    root: int
    family: object
    phi: np.ndarray
    d_vars: int


def expand(circuit: LayeredCircuit, params, family) -> ScalarCircuit:
    """One scalar node per vector entry of the layered circuit."""
    nodes = []

    def add(node):
        nodes.append(node)
        return len(nodes) - 1

    leaf = circuit.layers[0]
    # entry ids per layer: entry[layer_idx][local_row][k] -> node id
    entry = {0: [
        [add(ScalarNode("leaf", factors=[(d, k, int(rep)) for d in scope]))
         for k in range(circuit.k)]
        for scope, rep in zip(leaf.scopes, leaf.replica)]}
    row_entry = {}  # global buffer row -> list of K node ids
    for rid, row in zip(leaf.region_ids, leaf.out_rows):
        row_entry[int(row)] = entry[0][leaf.region_ids.index(rid)]

    root_node = None
    for i, layer in enumerate(circuit.layers):
        if i == 0:
            continue
        rows = []
        if isinstance(layer, EinsumLayer):
            w = params.einsum[i]
            for l in range(len(layer.left_src)):
                lefts = row_entry[int(layer.left_src[l])]
                rights = row_entry[int(layer.right_src[l])]
                prods = [add(ScalarNode("prod", children=[li, rj]))
                         for li in lefts for rj in rights]
                sums = [add(ScalarNode("sum", children=list(prods),
                                       weights=w[l, k].ravel().tolist()))
                        for k in range(layer.k_out)]
                rows.append(sums)
        else:
            w = params.mixing[i]
            prev = entry[i - 1]
            for m in range(layer.src.shape[0]):
                srcs = [int(s) for s, ok in zip(layer.src[m], layer.mask[m]) if ok]
                wts = [float(v) for v, ok in zip(w[m], layer.mask[m]) if ok]
                sums = [add(ScalarNode("sum",
                                       children=[prev[s][k] for s in srcs],
                                       weights=wts))
                        for k in range(layer.k_out)]
                rows.append(sums)
        entry[i] = rows
        for l, row in enumerate(layer.out_rows):
            if row >= 0:
                row_entry[int(row)] = rows[l]
            elif layer.is_root and not _root_has_mixing(circuit, i):
                root_node = rows[l][0]
        if isinstance(layer, MixingLayer) and layer.is_root:
            root_node = rows[layer.region_ids.index(circuit.rg.root)][0]
    if root_node is None:
        raise ValueError("expansion did not reach the root")
    return ScalarCircuit(nodes=nodes, root=root_node, family=family,
                         phi=params.phi, d_vars=circuit.d_vars)


def _root_has_mixing(circuit, layer_idx):
    return (layer_idx + 1 < len(circuit.layers)
            and isinstance(circuit.layers[layer_idx + 1], MixingLayer)
            and circuit.layers[layer_idx + 1].is_root)


def scalar_eval(sc: ScalarCircuit, x, marg_mask=None):
    """Node-by-node log-density of a single assignment."""
    x = np.asarray(x, dtype=np.float64)
    vals = np.empty(len(sc.nodes))
    for nid, node in enumerate(sc.nodes):
        if node.kind == "leaf":
            v = 0.0
            for d, k, r in node.factors:
                if marg_mask is not None and marg_mask[d]:
                    continue
                v += float(sc.family.log_prob(sc.phi[d, k, r], x[d]))
            vals[nid] = v
        elif node.kind == "prod":
            vals[nid] = sum(vals[c] for c in node.children)
        else:
            cv = np.array([vals[c] for c in node.children])
            with np.errstate(divide="ignore"):
                vals[nid] = logsumexp(cv, b=np.asarray(node.weights))
    return vals[sc.root]


def exhaustive_marginal(sc: ScalarCircuit, x, assigned):
    """log integral of the density over all completions of the unassigned
    (finite-support) variables. ``assigned`` is an iterable of variable
    indices whose values in ``x`` are fixed."""
    assigned = set(assigned)
    support = sc.family.support_values()
    if support is None:
        raise ValueError("exhaustive marginalization needs finite support")
    free = [d for d in range(sc.d_vars) if d not in assigned]
    x = np.array(x, dtype=np.float64)
    terms = []
    for combo in itertools.product(support, repeat=len(free)):
        x[free] = combo
        terms.append(scalar_eval(sc, x))
    return float(logsumexp(terms))


def finite_diff_grad(circuit, params, family, x, selector, step=1e-5):
    """Central finite difference of the mean log-likelihood w.r.t. one raw
    parameter entry (perturbed without renormalization).

    ``selector`` is one of
      ("einsum", layer, l, k, i, j), ("mixing", layer, m, c),
      ("phi", d, k, r, t), ("leaf_offset", d, k, r).
    """
    def mean_ll(delta):
        p = params
        offset = None
        if selector[0] == "einsum":
            p = params.copy()
            p.einsum[selector[1]][selector[2:]] += delta
        elif selector[0] == "mixing":
            p = params.copy()
            p.mixing[selector[1]][selector[2:]] += delta
        elif selector[0] == "phi":
            p = params.copy()
            p.phi[selector[1:]] += delta
        elif selector[0] == "leaf_offset":
            offset = np.zeros(params.phi.shape[:3])
            offset[selector[1:]] = delta
        else:
            raise ValueError(f"unknown selector {selector[0]!r}")
        trace = engine.forward(circuit, p, family, x, leaf_log_offset=offset)
        return float(np.mean(trace.log_likelihood))

    return (mean_ll(step) - mean_ll(-step)) / (2.0 * step)


@dataclass
class Fixture:
    circuit: LayeredCircuit
    params: engine.Parameters
    family: object
    data: np.ndarray
    seed: int


def random_fixture(seed, d_vars_max=8, k_max=5, depth_max=3, batch=4,
                   families=("gaussian", "categorical")) -> Fixture:
    """Seeded random (structure, parameters, data) triple for oracle tests."""
    rng = np.random.default_rng(seed)
    d_vars = int(rng.integers(2, d_vars_max + 1))
    depth_cap = min(depth_max, int(np.floor(np.log2(d_vars))))
    depth = int(rng.integers(1, depth_cap + 1))
    replicas = int(rng.integers(1, 4))
    k = int(rng.integers(1, k_max + 1))
    rg = random_binary_tree(d_vars, StructureConfig(
        depth=depth, replicas=replicas, seed=int(rng.integers(1 << 30))))
    circuit = compile_graph(rg, k=k, k_root=1)
    kind = families[int(rng.integers(len(families)))]
    if kind == "gaussian":
        family = GaussianFamily()
        data = rng.normal(size=(batch, d_vars))
    else:
        family = CategoricalFamily(int(rng.integers(2, 5)))
        data = rng.integers(0, family.num_states, size=(batch, d_vars)).astype(float)
    params = engine.init_parameters(circuit, family,
                                    seed=int(rng.integers(1 << 30)), data=data)
    return Fixture(circuit=circuit, params=params, family=family,
                   data=data, seed=seed)


def oracle_check(n_fixtures=100, seed=0, tol=1e-6):
    """Engine-vs-oracle agreement over seeded random fixtures.

    Returns (max_abs_diff, failures) where failures lists fixture seeds
    whose forward pass disagrees with the scalar oracle beyond ``tol``.
    """
    worst = 0.0
    failures = []
    for i in range(n_fixtures):
        fx = random_fixture(seed * 100_000 + i)
        sc = expand(fx.circuit, fx.params, fx.family)
        got = engine.forward(fx.circuit, fx.params, fx.family,
                             fx.data).log_likelihood
        want = np.array([scalar_eval(sc, row) for row in fx.data])
        diff = float(np.max(np.abs(got - want)))
        worst = max(worst, diff)
        if diff > tol:
            failures.append(fx.seed)
    return worst, failures
