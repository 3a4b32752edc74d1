"""Region graphs: the structural blueprint of a tensorized probabilistic circuit.

A region graph is a bipartite DAG alternating between *regions* (scoped
variable sets) and binary *partitions* (splits of a region's scope into two
disjoint halves). Two generators are provided: randomized balanced binary
trees over a shared root, and the axis-aligned rectangle decomposition of an
image grid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

Scope = frozenset  # scope = frozenset of variable indices


@dataclass(frozen=True)
class Region:
    id: int
    scope: Scope


@dataclass(frozen=True)
class Partition:
    id: int
    parent: int
    left: int
    right: int


@dataclass
class RegionGraph:
    d_vars: int
    regions: dict = field(default_factory=dict)      # id -> Region
    partitions: dict = field(default_factory=dict)   # id -> Partition
    root: int = 0

    def child_partitions(self, region_id: int) -> list:
        """Child partitions of a region, ordered by partition id."""
        return sorted(
            (p for p in self.partitions.values() if p.parent == region_id),
            key=lambda p: p.id,
        )

    def leaf_region_ids(self) -> list:
        parents = {p.parent for p in self.partitions.values()}
        return sorted(r for r in self.regions if r not in parents)

    def to_json(self) -> str:
        doc = {
            "d_vars": self.d_vars,
            "regions": [
                {"id": r.id, "scope": sorted(r.scope)}
                for r in sorted(self.regions.values(), key=lambda r: r.id)
            ],
            "partitions": [
                {"id": p.id, "parent": p.parent, "left": p.left, "right": p.right}
                for p in sorted(self.partitions.values(), key=lambda p: p.id)
            ],
            "root": self.root,
        }
        return json.dumps(doc, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "RegionGraph":
        doc = json.loads(text)
        rg = RegionGraph(d_vars=doc["d_vars"], root=doc["root"])
        for r in doc["regions"]:
            rg.regions[r["id"]] = Region(r["id"], Scope(r["scope"]))
        for p in doc["partitions"]:
            rg.partitions[p["id"]] = Partition(p["id"], p["parent"], p["left"], p["right"])
        return rg


@dataclass
class StructureConfig:
    # randomized binary trees
    depth: int = 1
    replicas: int = 1
    seed: int = 0
    # Poon-Domingos grids
    deltas: tuple = (1,)
    axes: str = "both"  # vertical | horizontal | both


class _Builder:
    def __init__(self, d_vars: int):
        self.rg = RegionGraph(d_vars=d_vars)
        self._next = 0

    def fresh_id(self) -> int:
        self._next += 1
        return self._next - 1

    def region(self, scope) -> int:
        rid = self.fresh_id()
        self.rg.regions[rid] = Region(rid, Scope(scope))
        return rid

    def partition(self, parent: int, left: int, right: int) -> int:
        pid = self.fresh_id()
        self.rg.partitions[pid] = Partition(pid, parent, left, right)
        return pid


def random_binary_tree(d_vars: int, cfg: StructureConfig) -> RegionGraph:
    """Randomized balanced binary scope-splitting trees, mixed at one root.

    Builds ``cfg.replicas`` independent trees: each recursively splits a
    seeded random permutation of the full scope into balanced halves (left
    half gets ceil(n/2) variables) down to ``cfg.depth`` levels. All trees
    hang as separate partitions under a single shared root region.
    """
    if cfg.depth < 1:
        raise ValueError("depth must be >= 1")
    if cfg.replicas < 1:
        raise ValueError("replicas must be >= 1")
    if 2 ** cfg.depth > d_vars:
        raise ValueError(
            f"cannot split {d_vars} variables to depth {cfg.depth}: 2^depth > d_vars"
        )

    b = _Builder(d_vars)
    root = b.region(range(d_vars))
    b.rg.root = root
    rng = np.random.default_rng(cfg.seed)

    def split(region_id: int, variables: np.ndarray, level: int):
        if level == cfg.depth:
            return
        half = int(np.ceil(len(variables) / 2))
        lv, rv = variables[:half], variables[half:]
        lid = b.region(lv.tolist())
        rid = b.region(rv.tolist())
        b.partition(region_id, lid, rid)
        split(lid, lv, level + 1)
        split(rid, rv, level + 1)

    for _ in range(cfg.replicas):
        perm = rng.permutation(d_vars)
        split(root, perm, 0)
    return b.rg


def _rect_scope(top, left, h, w, width):
    return [(top + i) * width + (left + j) for i in range(h) for j in range(w)]


def poon_domingos(height: int, width: int, cfg: StructureConfig) -> RegionGraph:
    """Recursive axis-aligned rectangle decomposition of a height x width grid.

    Cut positions are the multiples of every step size in ``cfg.deltas``
    strictly inside the rectangle; recursion stops when no step size can
    split a rectangle. Identical rectangles reached along different split
    orders are deduplicated into one region, making the result a DAG.
    Pixels are indexed row-major.
    """
    if height < 1 or width < 1:
        raise ValueError("image must have positive area")
    if any(d < 1 for d in cfg.deltas):
        raise ValueError("every delta must be >= 1")
    if cfg.axes not in ("vertical", "horizontal", "both"):
        raise ValueError(f"unknown axes setting {cfg.axes!r}")

    b = _Builder(height * width)
    region_of = {}  # (top,left,h,w) -> region id

    def cuts(extent):
        out = set()
        for d in cfg.deltas:
            out.update(range(d, extent, d))
        return sorted(out)

    def rect(top, left, h, w) -> int:
        key = (top, left, h, w)
        if key in region_of:
            return region_of[key]
        rid = b.region(_rect_scope(top, left, h, w, width))
        region_of[key] = rid
        splits = []
        if cfg.axes in ("vertical", "both"):
            splits += [("v", c) for c in cuts(w)]
        if cfg.axes in ("horizontal", "both"):
            splits += [("h", c) for c in cuts(h)]
        for axis, c in splits:
            if axis == "v":
                lid = rect(top, left, h, c)
                rid2 = rect(top, left + c, h, w - c)
            else:
                lid = rect(top, left, c, w)
                rid2 = rect(top + c, left, h - c, w)
            b.partition(rid, lid, rid2)
        return rid

    b.rg.root = rect(0, 0, height, width)
    return b.rg


def validate(rg: RegionGraph) -> list:
    """Check structural invariants; returns a list of violation strings."""
    out = []
    full = Scope(range(rg.d_vars))
    if rg.root not in rg.regions:
        return [f"root region {rg.root} does not exist"]
    if rg.regions[rg.root].scope != full:
        out.append(f"region {rg.root}: root scope is not the full variable set")
    children = {}
    for p in rg.partitions.values():
        if p.parent not in rg.regions:
            out.append(f"partition {p.id}: parent {p.parent} is not a region")
            continue
        if p.left not in rg.regions or p.right not in rg.regions:
            out.append(f"partition {p.id}: child is not a region")
            continue
        ls, rs = rg.regions[p.left].scope, rg.regions[p.right].scope
        ps = rg.regions[p.parent].scope
        if ls & rs:
            out.append(f"partition {p.id}: decomposability violated, child scopes overlap")
        if ls | rs != ps:
            out.append(f"partition {p.id}: completeness violated, child union != parent scope")
        children.setdefault(p.parent, []).append(p.id)
    for r in rg.regions.values():
        if not r.scope:
            out.append(f"region {r.id}: empty scope")
    parent_regions = set()
    for p in rg.partitions.values():
        parent_regions.update((p.left, p.right))
    for r in rg.regions:
        if r != rg.root and r not in parent_regions:
            out.append(f"region {r.id}: unreachable (no parent partition)")
    # acyclicity via DFS over region -> partition -> region edges
    state = {}

    def dfs(region_id):
        state[region_id] = 1
        for p in children.get(region_id, []):
            part = rg.partitions[p]
            for c in (part.left, part.right):
                s = state.get(c, 0)
                if s == 1:
                    out.append(f"region {c}: cycle detected")
                    return
                if s == 0:
                    dfs(c)
        state[region_id] = 2

    dfs(rg.root)
    return out
