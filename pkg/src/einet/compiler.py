"""Flattens a region graph into an executable stack of tensorized layers.

The result is a ``LayeredCircuit``: a leaf layer followed by alternating
contraction ("einsum") layers and, where regions have several child
partitions, element-wise mixing layers. Every vector of log-densities
produced on the way is assigned one row in a single per-pass output buffer,
so each contraction gathers its inputs with one index array per side.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .structures import RegionGraph, validate


@dataclass
class LeafLayer:
    region_ids: list                 # leaf region ids, ascending
    scopes: list                     # list of sorted variable-index lists
    replica: np.ndarray              # replica index per leaf row
    out_rows: np.ndarray             # global buffer row per leaf region


@dataclass
class EinsumLayer:
    left_src: np.ndarray             # (L,) global buffer rows, left children
    right_src: np.ndarray            # (L,) global buffer rows, right children
    out_rows: np.ndarray             # (L,) global buffer row per output (-1 = root row)
    owners: list                     # (region_id, partition_id) per row
    k_out: int
    is_root: bool = False


@dataclass
class MixingLayer:
    region_ids: list                 # aggregated-sum region per mixing row
    src: np.ndarray                  # (M, Dmax) local rows of the preceding einsum layer
    mask: np.ndarray                 # (M, Dmax) bool, True where a real child exists
    out_rows: np.ndarray             # (M,) global buffer row (-1 = root row)
    k_out: int
    is_root: bool = False


@dataclass
class ReplicaAssignment:
    replica_of: dict                 # leaf region id -> replica index
    count: int


@dataclass
class LayeredCircuit:
    rg: RegionGraph
    k: int
    k_root: int
    layers: list                     # LeafLayer then EinsumLayer / MixingLayer objects
    num_buffer_rows: int             # rows of width k in the forward buffer
    region_row: dict                 # region id -> global buffer row (non-root regions)
    replicas: ReplicaAssignment
    # sampling/navigation: region id -> list of (partition, layer_idx, local_row)
    region_sum_rows: dict = field(default_factory=dict)
    # region id -> (layer_idx, local_row) of its mixing row, for C>1 regions
    region_mix_row: dict = field(default_factory=dict)

    @property
    def d_vars(self) -> int:
        return self.rg.d_vars

    @property
    def num_replicas(self) -> int:
        return self.replicas.count

    def plan_json(self) -> str:
        """Debug dump of the layer plan."""
        doc = {"k": self.k, "k_root": self.k_root, "d_vars": self.d_vars,
               "num_buffer_rows": self.num_buffer_rows, "layers": []}
        for layer in self.layers:
            if isinstance(layer, LeafLayer):
                doc["layers"].append({
                    "type": "leaf", "regions": layer.region_ids,
                    "replica": layer.replica.tolist(),
                    "out_rows": layer.out_rows.tolist()})
            elif isinstance(layer, EinsumLayer):
                doc["layers"].append({
                    "type": "einsum", "left": layer.left_src.tolist(),
                    "right": layer.right_src.tolist(),
                    "out_rows": layer.out_rows.tolist(),
                    "owners": layer.owners, "k_out": layer.k_out,
                    "is_root": layer.is_root})
            else:
                doc["layers"].append({
                    "type": "mixing", "regions": layer.region_ids,
                    "src": layer.src.tolist(), "mask": layer.mask.tolist(),
                    "out_rows": layer.out_rows.tolist(), "k_out": layer.k_out,
                    "is_root": layer.is_root})
        return json.dumps(doc)


def topological_layers(rg: RegionGraph) -> list:
    """Top-down breadth-first layering of a region graph.

    Returns a list of node-id sets, leaves first, then alternating
    partition sets and region sets; every node depends only on strictly
    earlier layers. A region enters a layer only once all of its parent
    partitions have been placed in later layers.
    """
    leaf_ids = set(rg.leaf_region_ids())
    sums = set(rg.regions) - leaf_ids
    prods = set(rg.partitions)
    parents_of_region = {}
    for p in rg.partitions.values():
        parents_of_region.setdefault(p.left, set()).add(p.id)
        parents_of_region.setdefault(p.right, set()).add(p.id)

    visited = set()
    layers = []
    guard = 2 * (len(sums) + len(prods)) + 2
    while visited != sums | prods:
        l_s = {s for s in sums
               if s not in visited
               and all(p in visited for p in parents_of_region.get(s, ()))}
        layers.insert(0, l_s)
        visited |= l_s
        l_p = {p for p in prods
               if p not in visited and rg.partitions[p].parent in visited}
        layers.insert(0, l_p)
        visited |= l_p
        guard -= 1
        if guard < 0 or (not l_s and not l_p):
            raise ValueError("region graph is not a DAG: topological layering stalled")
    layers.insert(0, leaf_ids)
    return layers


def assign_replica(rg: RegionGraph) -> ReplicaAssignment:
    """Greedy first-fit coloring of the leaf-region scope-conflict graph.

    Leaves whose scopes intersect must use distinct replica slices of the
    leaf parameter tensor. Order: descending scope size, ties by id.
    """
    leaves = [rg.regions[i] for i in rg.leaf_region_ids()]
    order = sorted(leaves, key=lambda r: (-len(r.scope), r.id))
    color = {}
    for leaf in order:
        taken = {color[o.id] for o in order
                 if o.id in color and (o.scope & leaf.scope)}
        c = 0
        while c in taken:
            c += 1
        color[leaf.id] = c
    count = max(color.values()) + 1 if color else 1
    return ReplicaAssignment(replica_of=color, count=count)


def compile_graph(rg: RegionGraph, k: int, k_root: int = 1) -> LayeredCircuit:
    """Compile a valid region graph into a layered execution plan."""
    if k < 1 or k_root < 1:
        raise ValueError("k and k_root must be >= 1")
    problems = validate(rg)
    if problems:
        raise ValueError("invalid region graph: " + "; ".join(problems))
    if not rg.partitions:
        raise ValueError("region graph has no partitions: the root must be a sum")

    node_layers = topological_layers(rg)
    replicas = assign_replica(rg)

    next_row = 0

    def alloc(n):
        nonlocal next_row
        rows = np.arange(next_row, next_row + n, dtype=np.int64)
        next_row += n
        return rows

    leaf_ids = sorted(node_layers[0])
    leaf = LeafLayer(
        region_ids=leaf_ids,
        scopes=[sorted(rg.regions[i].scope) for i in leaf_ids],
        replica=np.array([replicas.replica_of[i] for i in leaf_ids], dtype=np.int64),
        out_rows=alloc(len(leaf_ids)),
    )
    region_row = {rid: int(row) for rid, row in zip(leaf_ids, leaf.out_rows)}

    layers = [leaf]
    circuit = LayeredCircuit(rg=rg, k=k, k_root=k_root, layers=layers,
                             num_buffer_rows=0, region_row=region_row,
                             replicas=replicas)

    # remaining node layers come in (partition set, region set) pairs
    pairs = [(node_layers[i], node_layers[i + 1]) for i in range(1, len(node_layers), 2)]
    for prod_set, sum_set in pairs:
        regions = sorted(sum_set)
        is_root_layer = regions == [rg.root]
        k_out = k_root if is_root_layer else k
        left, right, owners, out_rows = [], [], [], []
        multi = []  # (region_id, local simple-sum rows)
        for rid in regions:
            parts = rg.child_partitions(rid)
            if not all(p.id in prod_set for p in parts):
                raise ValueError(f"region {rid}: child partitions split across layers")
            local = []
            for p in parts:
                local.append(len(left))
                left.append(region_row[p.left])
                right.append(region_row[p.right])
                owners.append((rid, p.id))
            circuit.region_sum_rows[rid] = [
                (p.id, len(layers), lr) for p, lr in zip(parts, local)]
            if len(parts) == 1:
                row = -1 if rid == rg.root else int(alloc(1)[0])
                out_rows.append(row)
                if rid != rg.root:
                    region_row[rid] = row
            else:
                # simple sums feeding a mixing row; buffered for uniformity
                rows = ([-1] * len(parts) if rid == rg.root
                        else [int(r) for r in alloc(len(parts))])
                out_rows.extend(rows)
                multi.append((rid, local))
        ein = EinsumLayer(
            left_src=np.array(left, dtype=np.int64),
            right_src=np.array(right, dtype=np.int64),
            out_rows=np.array(out_rows, dtype=np.int64),
            owners=owners, k_out=k_out, is_root=is_root_layer)
        layers.append(ein)
        if multi:
            dmax = max(len(local) for _, local in multi)
            m = len(multi)
            src = np.zeros((m, dmax), dtype=np.int64)
            mask = np.zeros((m, dmax), dtype=bool)
            mix_out, mix_regions = [], []
            for mi, (rid, local) in enumerate(multi):
                src[mi, : len(local)] = local
                mask[mi, : len(local)] = True
                mix_regions.append(rid)
                row = -1 if rid == rg.root else int(alloc(1)[0])
                mix_out.append(row)
                if rid != rg.root:
                    region_row[rid] = row
                circuit.region_mix_row[rid] = (len(layers), mi)
            layers.append(MixingLayer(
                region_ids=mix_regions, src=src, mask=mask,
                out_rows=np.array(mix_out, dtype=np.int64),
                k_out=k_out, is_root=(rg.root in mix_regions)))

    circuit.num_buffer_rows = next_row
    return circuit
