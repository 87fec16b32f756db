"""
Node partitioning and the lifted consensus structure.

A ``Partitioning`` maps every node to a partition index ``1..K``. From it,
``build_lifted`` derives per-partition views (owned, extended = closed
neighbourhood, ghost, coupling nodes) and the index maps tying each local copy
``x_k(i)`` to the consensus entry ``z(i)``.

The built-in heuristic is a small multilevel scheme: heavy-edge matching until at
most ``4K`` supernodes remain, greedy region growing from peripheral seeds, then
boundary refinement on the original graph. All ties break by ascending node id.
"""

from __future__ import annotations

import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping

import networkx as nx

from hieropf.errors import ArgumentError, PartitionValidationError

logger = logging.getLogger(__name__)

BALANCE_SLACK = 0.3
REFINE_PASSES = 10
_HEADER_RE = re.compile(r"#\s*K\s*=\s*(\d+)")


@dataclass(frozen=True, eq=False)
class Partitioning:
    assignment: Mapping[int, int]
    num_parts: int

    @property
    def K(self) -> int:
        return self.num_parts

    @cached_property
    def parts(self) -> tuple[tuple[int, ...], ...]:
        buckets: list[list[int]] = [[] for _ in range(self.num_parts)]
        for node, k in self.assignment.items():
            buckets[k - 1].append(node)
        return tuple(tuple(sorted(b)) for b in buckets)

    def members(self, k: int) -> tuple[int, ...]:
        return self.parts[k - 1]

    def owner(self, node: int) -> int:
        return self.assignment[node]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Partitioning):
            return NotImplemented
        return self.num_parts == other.num_parts and dict(self.assignment) == dict(other.assignment)

    def validate(self, nodes: Iterable[int]) -> None:
        nodes = set(nodes)
        missing = sorted(nodes - set(self.assignment))
        if missing:
            raise PartitionValidationError(f"nodes without a partition: {missing}")
        extra = sorted(set(self.assignment) - nodes)
        if extra:
            raise PartitionValidationError(f"unknown nodes in partitioning: {extra}")
        for node, k in sorted(self.assignment.items()):
            if not 1 <= k <= self.num_parts:
                raise PartitionValidationError(
                    f"node {node} assigned to partition {k}, outside 1..{self.num_parts}"
                )
        used = set(self.assignment.values())
        empty = [k for k in range(1, self.num_parts + 1) if k not in used]
        if empty:
            raise PartitionValidationError(f"empty partition(s): {empty}")


@dataclass(frozen=True)
class PartitionView:
    k: int
    owned: tuple[int, ...]
    extended: tuple[int, ...]
    ghosts: tuple[int, ...]
    coupling: tuple[int, ...]

    @cached_property
    def _position(self) -> dict[int, int]:
        return {node: n for n, node in enumerate(self.extended)}

    def position(self, node: int) -> int:
        return self._position[node]


@dataclass(frozen=True, eq=False)
class CouplingSets:
    by_partition: Mapping[int, tuple[int, ...]]
    nodes: tuple[int, ...]


@dataclass(frozen=True, eq=False)
class LiftedStructure:
    partitioning: Partitioning
    views: tuple[PartitionView, ...]
    global_coupling: tuple[int, ...]
    sharers: Mapping[int, tuple[int, ...]]
    # Per partition: (position in the extended node list, position in global_coupling)
    # for each coupling node of that partition, in ascending node order.
    index_maps: tuple[tuple[tuple[int, int], ...], ...] = field(default=())

    @property
    def K(self) -> int:
        return self.partitioning.num_parts

    def view(self, k: int) -> PartitionView:
        return self.views[k - 1]

    @property
    def linking_rows(self) -> int:
        return sum(len(self.sharers[i]) for i in self.global_coupling)


# ============================================================================
# Heuristic partitioner
# ============================================================================


def _working_graph(graph: nx.Graph) -> nx.Graph:
    work = nx.Graph()
    for v in sorted(graph.nodes):
        work.add_node(v, weight=1, members=(v,))
    for u, v in graph.edges:
        if u == v:
            continue
        if work.has_edge(u, v):
            work[u][v]["weight"] += 1
        else:
            work.add_edge(u, v, weight=1)
    return work


def _rotated(nodes: list[int], seed: int) -> list[int]:
    if not nodes:
        return nodes
    start = seed % len(nodes)
    return nodes[start:] + nodes[:start]


def _heavy_edge_match(g: nx.Graph, cap: int, seed: int) -> nx.Graph:
    label: dict[int, int] = {}
    for u in _rotated(sorted(g.nodes), seed):
        if u in label:
            continue
        wu = g.nodes[u]["weight"]
        best = None
        for v in sorted(g.neighbors(u)):
            if v in label or wu + g.nodes[v]["weight"] > cap:
                continue
            key = (-g[u][v]["weight"], g.nodes[v]["weight"], v)
            if best is None or key < best:
                best = key
        if best is None:
            label[u] = u
        else:
            v = best[2]
            label[u] = label[v] = min(u, v)

    coarse = nx.Graph()
    grouped: dict[int, list[int]] = {}
    for u in sorted(g.nodes):
        grouped.setdefault(label[u], []).append(u)
    for lab in sorted(grouped):
        members = tuple(sorted(m for u in grouped[lab] for m in g.nodes[u]["members"]))
        weight = sum(g.nodes[u]["weight"] for u in grouped[lab])
        coarse.add_node(lab, weight=weight, members=members)
    for u, v, data in g.edges(data=True):
        a, b = label[u], label[v]
        if a == b:
            continue
        if coarse.has_edge(a, b):
            coarse[a][b]["weight"] += data["weight"]
        else:
            coarse.add_edge(a, b, weight=data["weight"])
    return coarse


def _peripheral(g: nx.Graph, candidates: set[int], seed: int) -> int:
    root = _rotated(sorted(candidates), seed)[0]
    dist = nx.single_source_shortest_path_length(g.subgraph(candidates), root)
    far = max(dist.values())
    return min(v for v, d in dist.items() if d == far)


def _grow_regions(g: nx.Graph, K: int, seed: int) -> dict[int, int]:
    assign: dict[int, int] = {}
    unassigned = set(g.nodes)
    remaining_weight = sum(g.nodes[v]["weight"] for v in g.nodes)
    for part in range(1, K):
        parts_left = K - part + 1
        target = remaining_weight / parts_left
        start = _peripheral(g, unassigned, seed)
        region = {start}
        weight = g.nodes[start]["weight"]
        while weight < target and len(unassigned) - len(region) > parts_left - 1:
            conn: dict[int, int] = {}
            for u in region:
                for v in g.neighbors(u):
                    if v in unassigned and v not in region:
                        conn[v] = conn.get(v, 0) + g[u][v]["weight"]
            if conn:
                nxt = min(conn, key=lambda v: (-conn[v], v))
            else:
                nxt = min(unassigned - region)
            w = g.nodes[nxt]["weight"]
            if weight + w - target > target - weight:
                break
            region.add(nxt)
            weight += w
        for v in region:
            assign[v] = part
        unassigned -= region
        remaining_weight -= weight
    for v in unassigned:
        assign[v] = K
    return assign


def _refine(graph: nx.Graph, assign: dict[int, int], K: int) -> dict[int, int]:
    assign = dict(assign)
    n = len(assign)
    avg = n / K
    max_size = max(1, math.ceil(avg * (1.0 + BALANCE_SLACK)))
    min_size = max(1, math.floor(avg * (1.0 - BALANCE_SLACK)))
    members: dict[int, set[int]] = {k: set() for k in range(1, K + 1)}
    for v, k in assign.items():
        members[k].add(v)
    connected = {k: nx.is_connected(graph.subgraph(m)) for k, m in members.items() if m}

    for _ in range(REFINE_PASSES):
        moved = False
        for u in sorted(graph.nodes):
            own = assign[u]
            conn = Counter(assign[v] for v in graph.neighbors(u) if v != u)
            if all(k == own for k in conn):
                continue
            internal = conn.get(own, 0)
            best = None
            for k in sorted(conn):
                if k == own:
                    continue
                if len(members[k]) + 1 > max_size or len(members[own]) - 1 < min_size:
                    continue
                gain = conn[k] - internal
                balance_gain = len(members[own]) - len(members[k]) - 1
                if gain > 0 or (gain == 0 and balance_gain > 0):
                    key = (-gain, -balance_gain, k)
                    if best is None or key < best:
                        best = key
            if best is None:
                continue
            rest = members[own] - {u}
            if connected.get(own) and rest and not nx.is_connected(graph.subgraph(rest)):
                continue
            target = best[2]
            members[own].discard(u)
            members[target].add(u)
            assign[u] = target
            moved = True
        if not moved:
            break
    return assign


def _canonical(assign: Mapping[int, int]) -> dict[int, int]:
    """Relabel parts 1..K in order of their smallest node id."""
    first: dict[int, int] = {}
    for v in sorted(assign):
        first.setdefault(assign[v], v)
    order = sorted(first, key=lambda k: first[k])
    relabel = {old: new for new, old in enumerate(order, start=1)}
    return {v: relabel[k] for v, k in assign.items()}


def kway_partition(graph: nx.Graph, K: int, seed: int = 0) -> dict[int, int]:
    """Assignment node -> 1..K; also accepts disconnected graphs (used for subpartitions)."""
    nodes = sorted(graph.nodes)
    if K == 1:
        return {v: 1 for v in nodes}
    if K == len(nodes):
        return {v: n for n, v in enumerate(nodes, start=1)}
    work = _working_graph(graph)
    cap = max(1, math.ceil(len(nodes) / (2 * K)))
    levels = 0
    while work.number_of_nodes() > 4 * K:
        coarser = _heavy_edge_match(work, cap, seed)
        if coarser.number_of_nodes() == work.number_of_nodes():
            break
        work = coarser
        levels += 1
    coarse_assign = _grow_regions(work, K, seed)
    assign = {m: coarse_assign[s] for s in work.nodes for m in work.nodes[s]["members"]}
    assign = _refine(graph, assign, K)
    logger.debug("partitioned %d nodes into %d parts after %d matching levels", len(nodes), K, levels)
    return _canonical(assign)


def partition_graph(graph: nx.Graph, K: int, seed: int = 0) -> Partitioning:
    n = graph.number_of_nodes()
    if n == 0:
        raise ArgumentError("cannot partition an empty graph", module="partitioner")
    if not 1 <= K <= n:
        raise ArgumentError(f"K={K} must lie in 1..{n} (number of nodes)", module="partitioner")
    if not nx.is_connected(graph):
        raise ArgumentError("graph must be connected", module="partitioner")
    part = Partitioning(assignment=kway_partition(graph, K, seed), num_parts=K)
    part.validate(graph.nodes)
    return part


# ============================================================================
# Partition files
# ============================================================================


def load_partition_file(
    path: str | Path, nodes: Iterable[int] | None = None, num_parts: int | None = None
) -> Partitioning:
    """
    Read ``node_id partition_index`` lines. A ``# K=<n>`` header (or ``num_parts``)
    declares the partition count; otherwise the largest index is used.
    """
    assignment: dict[int, int] = {}
    declared = num_parts
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = _HEADER_RE.match(line)
            if m and declared is None:
                declared = int(m.group(1))
            continue
        tokens = line.split()
        if len(tokens) != 2:
            raise PartitionValidationError(f"line {lineno}: expected 'node_id partition_index'")
        try:
            node, k = int(tokens[0]), int(tokens[1])
        except ValueError as e:
            raise PartitionValidationError(f"line {lineno}: non-integer entry") from e
        if node in assignment:
            raise PartitionValidationError(f"line {lineno}: node {node} listed twice")
        assignment[node] = k
    if not assignment:
        raise PartitionValidationError(f"{path}: no assignments")
    part = Partitioning(assignment=assignment, num_parts=declared or max(assignment.values()))
    part.validate(nodes if nodes is not None else assignment)
    return part


def write_partition_file(partitioning: Partitioning, path: str | Path) -> None:
    lines = [f"# K={partitioning.num_parts}"]
    lines += [f"{node} {k}" for node, k in sorted(partitioning.assignment.items())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ============================================================================
# Coupling sets and lifted structure
# ============================================================================


def _closed_neighborhoods(graph: nx.Graph, partitioning: Partitioning) -> dict[int, set[int]]:
    out: dict[int, set[int]] = {}
    for k in range(1, partitioning.num_parts + 1):
        owned = set(partitioning.members(k))
        ext = set(owned)
        for v in owned:
            ext.update(graph.neighbors(v))
        out[k] = ext
    return out


def coupling_sets(graph: nx.Graph, partitioning: Partitioning) -> CouplingSets:
    hoods = _closed_neighborhoods(graph, partitioning)
    by_partition: dict[int, tuple[int, ...]] = {}
    for k, ext in hoods.items():
        shared: set[int] = set()
        for other, other_ext in hoods.items():
            if other != k:
                shared |= ext & other_ext
        by_partition[k] = tuple(sorted(shared))
    union = sorted({i for nodes in by_partition.values() for i in nodes})
    return CouplingSets(by_partition=by_partition, nodes=tuple(union))


def build_lifted(graph: nx.Graph, partitioning: Partitioning) -> LiftedStructure:
    partitioning.validate(graph.nodes)
    hoods = _closed_neighborhoods(graph, partitioning)
    sets = coupling_sets(graph, partitioning)
    coupling_pos = {node: n for n, node in enumerate(sets.nodes)}
    views = []
    index_maps = []
    for k in range(1, partitioning.num_parts + 1):
        owned = partitioning.members(k)
        extended = tuple(sorted(hoods[k]))
        ghosts = tuple(v for v in extended if partitioning.owner(v) != k)
        view = PartitionView(
            k=k, owned=owned, extended=extended, ghosts=ghosts, coupling=sets.by_partition[k]
        )
        views.append(view)
        index_maps.append(tuple((view.position(i), coupling_pos[i]) for i in view.coupling))
    sharers = {
        i: tuple(k for k in range(1, partitioning.num_parts + 1) if i in set(sets.by_partition[k]))
        for i in sets.nodes
    }
    return LiftedStructure(
        partitioning=partitioning,
        views=tuple(views),
        global_coupling=sets.nodes,
        sharers=sharers,
        index_maps=tuple(index_maps),
    )
