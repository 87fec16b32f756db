"""
Coarse supervisory layer.

Every partition is split again into subpartitions; each subpartition becomes one
coarse node. Admittances and loads are summed over the fine nodes and edges a
coarse node or coarse edge stands for, generators move to the coarse node of
their bus, and the resulting OPF is solved once. Its primal-dual solution is then
mapped back to the fine lifted space as the ADMM starting point.
"""

from __future__ import annotations

import json
import logging
import math
import time
from collections import defaultdict
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Any, Mapping

import networkx as nx
import numpy as np

from hieropf import admm
from hieropf.errors import ArgumentError, NumericalFailure
from hieropf.network import AdmittanceMatrix, NetworkCase
from hieropf.nlp import STATUS_MAX_ITER, STATUS_OPTIMAL, PrimalDualSolution
from hieropf.opf import GridData, NodeLayout, OpfModel, grid_from_case, solve_central
from hieropf.partitioner import (
    CouplingSets,
    LiftedStructure,
    Partitioning,
    build_lifted,
    coupling_sets,
    kway_partition,
)

logger = logging.getLogger(__name__)

NODES_PER_SUBPARTITION = 4


@dataclass(frozen=True, eq=False)
class FineCoarseMap:
    phi: Mapping[int, int]

    def __call__(self, fine: int) -> int:
        return self.phi[fine]

    @cached_property
    def members(self) -> dict[int, tuple[int, ...]]:
        grouped: dict[int, list[int]] = defaultdict(list)
        for fine, coarse in self.phi.items():
            grouped[coarse].append(fine)
        return {c: tuple(sorted(v)) for c, v in grouped.items()}

    def is_bijection(self) -> bool:
        return len(set(self.phi.values())) == len(self.phi)

    def to_lines(self) -> str:
        return "".join(f"{fine} {coarse}\n" for fine, coarse in sorted(self.phi.items()))


@dataclass(frozen=True, eq=False)
class SubpartitionStructure:
    groups: tuple[tuple[int, ...], ...]  # coarse node c is groups[c - 1]
    parent: tuple[int, ...]  # partition containing groups[c - 1]

    @property
    def K_c(self) -> int:
        return len(self.groups)

    @cached_property
    def phi(self) -> FineCoarseMap:
        return FineCoarseMap({i: c for c, nodes in enumerate(self.groups, start=1) for i in nodes})

    def validate(self, partitioning: Partitioning) -> None:
        seen: set[int] = set()
        for c, nodes in enumerate(self.groups, start=1):
            if not nodes:
                raise ArgumentError(f"subpartition {c} is empty", module="coarsener")
            if seen & set(nodes):
                raise ArgumentError(f"subpartition {c} overlaps an earlier one", module="coarsener")
            seen.update(nodes)
            k = self.parent[c - 1]
            if any(partitioning.owner(i) != k for i in nodes):
                raise ArgumentError(f"subpartition {c} is not nested in partition {k}", module="coarsener")
        if seen != set(partitioning.assignment):
            raise ArgumentError("subpartitions do not cover the node set", module="coarsener")


@dataclass(frozen=True, eq=False)
class CoarseGraph:
    nodes: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]
    # (a, b) with a <= b -> fine unique pairs (i, j), i < j, running between the two subpartitions
    bundles: Mapping[tuple[int, int], tuple[tuple[int, int], ...]]
    partitioning: Partitioning
    coupling: CouplingSets

    def graph(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(self.nodes)
        g.add_edges_from(self.edges)
        return g

    def internal_bundle(self, c: int) -> tuple[tuple[int, int], ...]:
        return self.bundles.get((c, c), ())


@dataclass(frozen=True, eq=False)
class CoarseCase:
    grid: GridData
    structure: SubpartitionStructure
    name: str = "coarse"
    base_mva: float = 100.0

    @property
    def phi(self) -> FineCoarseMap:
        return self.structure.phi

    @property
    def total_active_load(self) -> float:
        return math.fsum(self.grid.active_load.values())

    @property
    def total_reactive_load(self) -> float:
        return math.fsum(self.grid.reactive_load.values())

    @property
    def variable_count(self) -> int:
        return 2 * len(self.grid.node_ids) + 2 * len(self.grid.generators)


@dataclass
class CoarseSolution:
    """Coarse (x, z, y) in per-node form: ``x[k][c]``, ``z[c]``, ``y[k][c]``."""

    x: dict[int, dict[int, np.ndarray]]
    z: dict[int, np.ndarray]
    y: dict[int, dict[int, np.ndarray]]
    objective: float
    status: str
    lifted: LiftedStructure
    layout: NodeLayout
    seconds: float = 0.0


# ============================================================================
# Structure
# ============================================================================


def default_subparts(partitioning: Partitioning) -> dict[int, int]:
    return {
        k: max(1, round(len(partitioning.members(k)) / NODES_PER_SUBPARTITION))
        for k in range(1, partitioning.num_parts + 1)
    }


def subpartition(
    graph: nx.Graph,
    partitioning: Partitioning,
    per_partition: int | Mapping[int, int] | None = None,
    seed: int = 0,
) -> SubpartitionStructure:
    if per_partition is None:
        counts = default_subparts(partitioning)
    elif isinstance(per_partition, int):
        counts = {k: per_partition for k in range(1, partitioning.num_parts + 1)}
    else:
        counts = dict(per_partition)
    groups: list[tuple[int, ...]] = []
    parent: list[int] = []
    for k in range(1, partitioning.num_parts + 1):
        members = partitioning.members(k)
        count = counts.get(k, 1)
        if count < 1:
            raise ArgumentError(f"partition {k}: subpartition count must be >= 1", module="coarsener")
        if count > len(members):
            raise ArgumentError(
                f"partition {k} has {len(members)} nodes, cannot form {count} subpartitions",
                module="coarsener",
            )
        local = kway_partition(graph.subgraph(members), count, seed)
        for part in range(1, count + 1):
            groups.append(tuple(sorted(i for i, p in local.items() if p == part)))
            parent.append(k)
    structure = SubpartitionStructure(groups=tuple(groups), parent=tuple(parent))
    structure.validate(partitioning)
    return structure


def build_coarse_graph(graph: nx.Graph, structure: SubpartitionStructure) -> CoarseGraph:
    phi = structure.phi
    bundles: dict[tuple[int, int], list[tuple[int, int]]] = defaultdict(list)
    for u, v in sorted((min(e), max(e)) for e in graph.edges):
        a, b = phi(u), phi(v)
        bundles[(min(a, b), max(a, b))].append((u, v))
    nodes = tuple(range(1, structure.K_c + 1))
    edges = tuple(sorted(key for key in bundles if key[0] != key[1]))
    partitioning = Partitioning(
        assignment={c: structure.parent[c - 1] for c in nodes},
        num_parts=max(structure.parent),
    )
    g = nx.Graph()
    g.add_nodes_from(nodes)
    g.add_edges_from(edges)
    return CoarseGraph(
        nodes=nodes,
        edges=edges,
        bundles={key: tuple(pairs) for key, pairs in sorted(bundles.items())},
        partitioning=partitioning,
        coupling=coupling_sets(g, partitioning),
    )


# ============================================================================
# Aggregation
# ============================================================================


def aggregate_data(
    case: NetworkCase | GridData, coarse_graph: CoarseGraph, structure: SubpartitionStructure
) -> CoarseCase:
    grid = case if isinstance(case, GridData) else grid_from_case(case)
    phi = structure.phi
    y_fine = grid.admittance
    entries: dict[tuple[int, int], tuple[float, float]] = {}
    active, reactive = {}, {}
    for c in coarse_graph.nodes:
        group = structure.groups[c - 1]
        g_terms = [y_fine.entry(i, i)[0] for i in group]
        b_terms = [y_fine.entry(i, i)[1] for i in group]
        for i, j in coarse_graph.internal_bundle(c):
            g_ij, b_ij = y_fine.entry(i, j)
            g_ji, b_ji = y_fine.entry(j, i)
            g_terms += [g_ij, g_ji]
            b_terms += [b_ij, b_ji]
        entries[(c, c)] = (math.fsum(g_terms), math.fsum(b_terms))
        active[c] = math.fsum(grid.active_load[i] for i in group)
        reactive[c] = math.fsum(grid.reactive_load[i] for i in group)

    angle_limits: dict[tuple[int, int], tuple[float, float]] = {}
    for a, b in coarse_graph.edges:
        forward_g, forward_b, backward_g, backward_b = [], [], [], []
        lows, highs = [], []
        for i, j in coarse_graph.bundles[(a, b)]:
            lo, hi = grid.angle_limits[(i, j)]
            if phi(i) != a:
                i, j = j, i
                lo, hi = -hi, -lo
            g_ij, b_ij = y_fine.entry(i, j)
            g_ji, b_ji = y_fine.entry(j, i)
            forward_g.append(g_ij)
            forward_b.append(b_ij)
            backward_g.append(g_ji)
            backward_b.append(b_ji)
            lows.append(lo)
            highs.append(hi)
        entries[(a, b)] = (math.fsum(forward_g), math.fsum(forward_b))
        entries[(b, a)] = (math.fsum(backward_g), math.fsum(backward_b))
        angle_limits[(a, b)] = (math.fsum(lows) / len(lows), math.fsum(highs) / len(highs))

    generators = tuple(
        replace(g, bus=phi(g.bus)) for g in sorted(grid.generators, key=lambda g: g.id)
    )
    references = frozenset(phi(i) for i in grid.references)
    coarse_grid = GridData(
        node_ids=coarse_graph.nodes,
        active_load=active,
        reactive_load=reactive,
        generators=generators,
        admittance=AdmittanceMatrix(bus_ids=coarse_graph.nodes, entries=entries),
        angle_limits=angle_limits,
        references=references,
        voltage_limits=grid.voltage_limits,
    )
    name = case.name if isinstance(case, NetworkCase) else "coarse"
    base = case.base_mva if isinstance(case, NetworkCase) else 100.0
    return CoarseCase(grid=coarse_grid, structure=structure, name=f"{name}_coarse", base_mva=base)


# ============================================================================
# Coarse solve
# ============================================================================


def _partition_states(
    lifted: LiftedStructure, states: Mapping[int, np.ndarray]
) -> dict[int, dict[int, np.ndarray]]:
    return {
        k: {c: np.array(states[c]) for c in lifted.view(k).extended} for k in range(1, lifted.K + 1)
    }


def _to_warm_start(
    lifted: LiftedStructure, grid: GridData, x: Mapping[int, Mapping[int, np.ndarray]], z, y
) -> admm.WarmStart:
    xs = {}
    for k in range(1, lifted.K + 1):
        layout = NodeLayout.over(grid, lifted.view(k).extended)
        vec = np.zeros(layout.size)
        for c in layout.nodes:
            vec[layout.slice(c)] = x[k][c]
        xs[k] = vec
    return admm.WarmStart(x=xs, z=z, y=y)


def _states_from_result(result: admm.AdmmResult):
    problem, state = result.problem, result.state
    x = {
        k: problem.bases[k - 1].layout.node_states(state.x[k - 1]) for k in range(1, problem.K + 1)
    }
    y = {
        k: {c: np.array(v) for c, v in problem.split(k, state.y[k - 1]).items()}
        for k in range(1, problem.K + 1)
    }
    return x, problem.z_states(state.z), y


def derive_coarse_duals(
    coarse_case: CoarseCase,
    lifted: LiftedStructure,
    model: OpfModel,
    solution: PrimalDualSolution,
    options: admm.AdmmOptions,
):
    """
    Lifted primal-dual point for a centrally solved coarse problem.

    x and z are the central state. The consensus duals are split off the central
    multipliers, then settled by one lifted ADMM step started at that point.
    """
    states = model.layout.node_states(solution.x)
    x_parts = _partition_states(lifted, states)
    z = {c: np.array(states[c]) for c in lifted.global_coupling}
    if not lifted.global_coupling:
        return x_parts, z, {k: {} for k in range(1, lifted.K + 1)}
    problem = admm.AdmmProblem(lifted, coarse_case.grid)
    duals = admm.consensus_duals(problem, model, solution)
    y0 = {k: problem.split(k, duals[k - 1]) for k in range(1, lifted.K + 1)}
    warm = _to_warm_start(lifted, coarse_case.grid, x_parts, z, y0)
    one_step = replace(options, max_steps=1)
    result = admm.run(lifted, coarse_case.grid, one_step, warm_start=warm)
    _, _, y = _states_from_result(result)
    return x_parts, z, y


def solve_coarse(
    coarse_case: CoarseCase,
    coarse_graph: CoarseGraph,
    options: admm.AdmmOptions | None = None,
    mode: str = "central",
) -> CoarseSolution:
    options = options or admm.AdmmOptions()
    started = time.perf_counter()
    lifted = build_lifted(coarse_graph.graph(), coarse_graph.partitioning)
    grid = coarse_case.grid
    try:
        if mode == "central":
            model, solution = solve_central(grid, options.solver)
            if solution.status not in (STATUS_OPTIMAL, STATUS_MAX_ITER):
                raise NumericalFailure(
                    f"coarse problem: central solve ended with status {solution.status}",
                    module="coarsener",
                )
            if solution.status == STATUS_MAX_ITER:
                logger.warning("coarse problem: central solve hit the iteration limit")
            x, z, y = derive_coarse_duals(coarse_case, lifted, model, solution, options)
            layout, objective, status = model.layout, solution.objective, solution.status
        elif mode == "admm":
            result = admm.run(lifted, grid, options)
            x, z, y = _states_from_result(result)
            layout = NodeLayout.over(grid, grid.node_ids)
            objective = result.state.objective
            status = "converged" if result.converged else "max-steps"
        else:
            raise ArgumentError(f"unknown coarse mode {mode!r}", module="coarsener")
    except NumericalFailure as e:
        if e.module == "coarsener":
            raise
        raise NumericalFailure(f"coarse problem: {e.message}", module="coarsener") from e
    seconds = time.perf_counter() - started
    logger.info(
        "coarse solve (%s): %d nodes, objective=%.6f, %.3fs", mode, len(grid.node_ids), objective, seconds
    )
    return CoarseSolution(
        x=x, z=z, y=y, objective=objective, status=status, lifted=lifted, layout=layout, seconds=seconds
    )


# ============================================================================
# Projection to the fine lifted space
# ============================================================================


def _fine_state(
    grid: GridData, coarse_grid: GridData, node: int, coarse_state: np.ndarray, coarse_node: int
) -> np.ndarray:
    """Fine node state from its coarse node's state: V, θ copied, generators by id."""
    coarse_gens = [g.id for g in coarse_grid.generators_at(coarse_node)]
    p_at = {gid: 2 + n for n, gid in enumerate(coarse_gens)}
    q_at = {gid: 2 + len(coarse_gens) + n for n, gid in enumerate(coarse_gens)}
    gens = [g.id for g in grid.generators_at(node)]
    out = np.zeros(2 + 2 * len(gens))
    out[0], out[1] = coarse_state[0], coarse_state[1]
    for n, gid in enumerate(gens):
        out[2 + n] = coarse_state[p_at[gid]]
        out[2 + len(gens) + n] = coarse_state[q_at[gid]]
    return out


def project_solution(
    coarse: CoarseSolution,
    coarse_case: CoarseCase,
    lifted: LiftedStructure,
    grid: GridData,
) -> admm.WarmStart:
    phi = coarse_case.phi
    cgrid = coarse_case.grid
    owner_of = coarse.lifted.partitioning.owner
    x: dict[int, np.ndarray] = {}
    y: dict[int, dict[int, np.ndarray]] = {}
    orphans = 0
    for k in range(1, lifted.K + 1):
        view = lifted.view(k)
        layout = NodeLayout.over(grid, view.extended)
        vec = np.zeros(layout.size)
        for i in view.extended:
            c = phi(i)
            source = coarse.x[k].get(c)
            if source is None:
                source = coarse.x[owner_of(c)][c]
            vec[layout.slice(i)] = _fine_state(grid, cgrid, i, source, c)
        x[k] = vec
        duals = {}
        for i in view.coupling:
            c = phi(i)
            coarse_dual = coarse.y.get(k, {}).get(c)
            if coarse_dual is None:
                orphans += 1
                duals[i] = np.zeros(layout.dim(i))
            else:
                duals[i] = _fine_state(grid, cgrid, i, coarse_dual, c)
        y[k] = duals
    z = {}
    for i in lifted.global_coupling:
        c = phi(i)
        source = coarse.z.get(c)
        if source is None:
            source = coarse.x[owner_of(c)][c]
        z[i] = _fine_state(grid, cgrid, i, source, c)
    if orphans:
        logger.warning(
            "%d fine coupling slot(s) have no coarse dual; starting them at y = 0", orphans
        )
    return admm.WarmStart(x=x, z=z, y=y)


# ============================================================================
# Export
# ============================================================================


def coarse_case_to_dict(coarse_case: CoarseCase) -> dict[str, Any]:
    grid = coarse_case.grid
    return {
        "name": coarse_case.name,
        "base_mva": coarse_case.base_mva,
        "voltage_limits": list(grid.voltage_limits),
        "buses": [
            {
                "id": c,
                "active_load": grid.active_load[c],
                "reactive_load": grid.reactive_load[c],
                "is_reference": c in grid.references,
            }
            for c in grid.node_ids
        ],
        "generators": [
            {
                "id": g.id,
                "bus": g.bus,
                "unit_cost": g.unit_cost,
                "p_min": g.p_min,
                "p_max": g.p_max,
                "q_min": g.q_min,
                "q_max": g.q_max,
                "is_artificial_slack": g.is_artificial_slack,
            }
            for g in grid.generators
        ],
        "admittance": [[i, j, g, b] for i, j, g, b in grid.admittance.sorted_entries()],
        "edge_angle_limits": [[a, b, lo, hi] for (a, b), (lo, hi) in sorted(grid.angle_limits.items())],
        "fine_to_coarse": {str(i): c for i, c in sorted(coarse_case.phi.phi.items())},
    }


def write_coarse_case_json(coarse_case: CoarseCase, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(coarse_case_to_dict(coarse_case), f, indent=2)


def write_fine_to_coarse(coarse_case: CoarseCase, path: str | Path) -> None:
    Path(path).write_text(coarse_case.phi.to_lines(), encoding="utf-8")
