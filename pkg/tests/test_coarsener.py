"""
Tests for subpartitioning, coarse aggregation, the coarse solve and projection.
"""
import json
import math
import os
import sys

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings as hsettings, strategies as st

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from conftest import fixture_path
from hieropf import admm
from hieropf.coarsener import (
    SubpartitionStructure,
    aggregate_data,
    build_coarse_graph,
    project_solution,
    solve_coarse,
    subpartition,
    write_coarse_case_json,
    write_fine_to_coarse,
)
from hieropf.errors import ArgumentError
from hieropf.matpower import load_case
from hieropf.network import Branch, Bus, NetworkCase, add_slack_generators
from hieropf.opf import NodeLayout, grid_from_case, solve_central
from hieropf.partitioner import Partitioning, build_lifted, partition_graph


def _three_bus():
    return NetworkCase(
        buses=(
            Bus(1, 0.3, 0.1, is_reference=True, shunt_conductance=1.5),
            Bus(2, 0.7, 0.2, shunt_conductance=2.5),
            Bus(3, 0.0, 0.0),
        ),
        branches=(Branch(1, 2, 0.0, 0.05), Branch(2, 3, 0.0, 0.1)),
        generators=(),
    )


def _merged_three_bus():
    case = _three_bus()
    structure = SubpartitionStructure(groups=((1, 2), (3,)), parent=(1, 2))
    cg = build_coarse_graph(case.graph(), structure)
    return case, structure, cg, aggregate_data(case, cg, structure)


def _case(name):
    return add_slack_generators(load_case(fixture_path(name)))


def test_triangle_collapses_to_one_node():
    """One subpartition over a triangle: a single coarse node, all three edges internal."""
    graph = nx.cycle_graph([1, 2, 3])
    structure = subpartition(graph, partition_graph(graph, 1), 1)
    cg = build_coarse_graph(graph, structure)
    assert cg.nodes == (1,)
    assert cg.edges == ()
    assert cg.internal_bundle(1) == ((1, 2), (1, 3), (2, 3))


def test_merge_sums_conductance_and_load():
    """Shunts 1.5 + 2.5 merge to G = 4.0; the reactive internal branch cancels."""
    _, _, cg, coarse = _merged_three_bus()
    y = coarse.grid.admittance
    assert y.entry(1, 1) == pytest.approx((4.0, -10.0))
    assert y.entry(1, 2) == pytest.approx((0.0, 10.0))
    assert y.entry(2, 1) == pytest.approx((0.0, 10.0))
    assert y.entry(2, 2) == pytest.approx((0.0, -10.0))
    assert coarse.grid.active_load[1] == pytest.approx(1.0)
    assert coarse.grid.reactive_load[1] == pytest.approx(0.3)
    assert cg.edges == ((1, 2),)
    assert coarse.grid.references == frozenset({1})


def test_coarse_pattern_matches_coarse_graph():
    _, _, cg, coarse = _merged_three_bus()
    expected = {(c, c) for c in cg.nodes} | {(a, b) for a, b in cg.edges} | {(b, a) for a, b in cg.edges}
    assert coarse.grid.admittance.pattern() == expected


def test_admittance_equals_block_sums():
    """Every coarse entry is the sum of the fine Y-bus block between two subpartitions."""
    case = _case("case4_path.m")
    graph = case.graph()
    partitioning = partition_graph(graph, 2)
    structure = subpartition(graph, partitioning, {1: 2, 2: 1})
    cg = build_coarse_graph(graph, structure)
    coarse = aggregate_data(case, cg, structure)
    fine = grid_from_case(case).admittance
    for a in cg.nodes:
        for b in cg.nodes:
            g_sum = math.fsum(
                fine.entry(i, j)[0] for i in structure.groups[a - 1] for j in structure.groups[b - 1]
            )
            b_sum = math.fsum(
                fine.entry(i, j)[1] for i in structure.groups[a - 1] for j in structure.groups[b - 1]
            )
            got = coarse.grid.admittance.entry(a, b)
            assert got == pytest.approx((g_sum, b_sum), abs=1e-12)


@hsettings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(1, 2), st.integers(0, 1000))
def test_loads_and_generators_conserved(K, per_partition, seed):
    case = _case("case14.m")
    graph = case.graph()
    structure = subpartition(graph, partition_graph(graph, K, seed), per_partition, seed)
    coarse = aggregate_data(case, build_coarse_graph(graph, structure), structure)
    assert coarse.total_active_load == pytest.approx(case.total_active_load, abs=1e-12)
    assert coarse.total_reactive_load == pytest.approx(case.total_reactive_load, abs=1e-12)
    assert sorted(g.id for g in coarse.grid.generators) == sorted(g.id for g in case.generators)
    assert structure.K_c == K * per_partition


def test_subpartitions_nest_in_partitions():
    case = _case("case14.m")
    graph = case.graph()
    partitioning = partition_graph(graph, 2)
    structure = subpartition(graph, partitioning, 3)
    for group, k in zip(structure.groups, structure.parent):
        assert {partitioning.owner(i) for i in group} == {k}
    assert sorted(i for g in structure.groups for i in g) == list(range(1, 15))


def test_too_many_subpartitions_rejected():
    graph = nx.path_graph([1, 2, 3, 4])
    with pytest.raises(ArgumentError, match="cannot form"):
        subpartition(graph, partition_graph(graph, 2), 3)


def test_structure_must_cover_nodes():
    partitioning = Partitioning(assignment={1: 1, 2: 1, 3: 2}, num_parts=2)
    with pytest.raises(ArgumentError, match="cover"):
        SubpartitionStructure(groups=((1, 2),), parent=(1,)).validate(partitioning)
    with pytest.raises(ArgumentError, match="nested"):
        SubpartitionStructure(groups=((1, 3), (2,)), parent=(1, 1)).validate(partitioning)


def test_identity_coarsening_reproduces_central_objective():
    """Singleton subpartitions give a relabelled copy of the fine problem."""
    case = _case("case14.m")
    graph = case.graph()
    partitioning = partition_graph(graph, 2)
    counts = {k: len(partitioning.members(k)) for k in range(1, 3)}
    structure = subpartition(graph, partitioning, counts)
    assert structure.phi.is_bijection()
    coarse = aggregate_data(case, build_coarse_graph(graph, structure), structure)
    _, fine_solution = solve_central(case)
    _, coarse_solution = solve_central(coarse.grid)
    assert fine_solution.optimal
    assert coarse_solution.optimal
    assert coarse_solution.objective == pytest.approx(fine_solution.objective, rel=1e-6)


def _coarse_setup(K=2, per_partition=None):
    case = _case("case14.m")
    graph = case.graph()
    partitioning = partition_graph(graph, K)
    structure = subpartition(graph, partitioning, per_partition)
    cg = build_coarse_graph(graph, structure)
    coarse_case = aggregate_data(case, cg, structure)
    return case, graph, partitioning, structure, cg, coarse_case


def test_coarse_solution_duals_sum_to_zero():
    *_, cg, coarse_case = _coarse_setup()
    solution = solve_coarse(coarse_case, cg)
    assert solution.status == "optimal"
    assert solution.seconds > 0
    for c in solution.lifted.global_coupling:
        duals = [solution.y[k][c] for k in solution.lifted.sharers[c]]
        scale = max(1.0, max(float(np.max(np.abs(d))) for d in duals))
        np.testing.assert_allclose(np.sum(duals, axis=0), 0.0, atol=1e-9 * scale)


def test_coarse_objective_close_to_central():
    """Three subpartitions per partition stay within a quarter of the fine optimum."""
    case, *_, cg, coarse_case = _coarse_setup(per_partition=3)
    solution = solve_coarse(coarse_case, cg)
    _, central = solve_central(case)
    assert solution.status == "optimal"
    assert central.optimal
    assert abs(solution.objective - central.objective) <= 0.25 * central.objective


def test_singleton_coarsening_start_converges_in_one_step():
    """With one fine node per coarse node the projected start is already a fixed point."""
    case = _case("case14.m")
    graph = case.graph()
    partitioning = partition_graph(graph, 2)
    counts = {k: len(partitioning.members(k)) for k in range(1, 3)}
    structure = subpartition(graph, partitioning, counts)
    cg = build_coarse_graph(graph, structure)
    coarse_case = aggregate_data(case, cg, structure)
    solution = solve_coarse(coarse_case, cg)
    assert solution.status == "optimal"
    lifted = build_lifted(graph, partitioning)
    grid = grid_from_case(case)
    warm = project_solution(solution, coarse_case, lifted, grid)
    result = admm.run(lifted, grid, admm.AdmmOptions(max_steps=5), warm_start=warm)
    assert result.converged
    assert result.state.step == 1
    assert result.state.objective == pytest.approx(solution.objective, rel=1e-4)


def test_unknown_coarse_mode():
    *_, cg, coarse_case = _coarse_setup()
    with pytest.raises(ArgumentError, match="coarse mode"):
        solve_coarse(coarse_case, cg, mode="exact")


def test_projection_shares_voltage_within_subpartition():
    case, graph, partitioning, structure, cg, coarse_case = _coarse_setup()
    solution = solve_coarse(coarse_case, cg)
    lifted = build_lifted(graph, partitioning)
    grid = grid_from_case(case)
    warm = project_solution(solution, coarse_case, lifted, grid)
    phi = structure.phi
    for k in range(1, lifted.K + 1):
        layout = NodeLayout.over(grid, lifted.view(k).extended)
        states = layout.node_states(warm.x[k])
        for i in layout.nodes:
            for j in layout.nodes:
                if phi(i) == phi(j):
                    assert states[i][0] == states[j][0]
                    assert states[i][1] == states[j][1]
        assert set(warm.y[k]) == set(lifted.view(k).coupling)
    assert set(warm.z) == set(lifted.global_coupling)


def test_projected_start_runs_fine_admm():
    case, graph, partitioning, _, cg, coarse_case = _coarse_setup()
    solution = solve_coarse(coarse_case, cg)
    lifted = build_lifted(graph, partitioning)
    grid = grid_from_case(case)
    warm = project_solution(solution, coarse_case, lifted, grid)
    result = admm.run(lifted, grid, admm.AdmmOptions(max_steps=2), warm_start=warm)
    assert 1 <= result.state.step <= 2


def test_coarse_exports(tmp_path):
    *_, coarse_case = _coarse_setup()
    write_coarse_case_json(coarse_case, tmp_path / "coarse_case.json")
    write_fine_to_coarse(coarse_case, tmp_path / "fine_to_coarse.txt")
    data = json.loads((tmp_path / "coarse_case.json").read_text(encoding="utf-8"))
    assert len(data["buses"]) == coarse_case.structure.K_c
    assert len(data["fine_to_coarse"]) == 14
    lines = (tmp_path / "fine_to_coarse.txt").read_text(encoding="utf-8").splitlines()
    assert len(lines) == 14
    assert lines[0].split()[0] == "1"


@pytest.mark.slow
def test_warm_start_needs_no_more_steps_than_cold():
    case, graph, partitioning, _, cg, coarse_case = _coarse_setup()
    lifted = build_lifted(graph, partitioning)
    grid = grid_from_case(case)
    warm = project_solution(solve_coarse(coarse_case, cg), coarse_case, lifted, grid)
    warm_run = admm.run(lifted, grid, admm.AdmmOptions(), warm_start=warm)
    cold_run = admm.run(lifted, grid, admm.AdmmOptions())
    assert warm_run.state.step <= cold_run.state.step


@st.composite
def _small_cases(draw):
    """Connected cases on up to 8 buses: a random spanning path plus random chords."""
    n = draw(st.integers(2, 8))
    order = draw(st.permutations(list(range(1, n + 1))))
    pairs = {tuple(sorted(p)) for p in zip(order, order[1:])}
    extra = draw(st.lists(st.tuples(st.integers(1, n), st.integers(1, n)), max_size=6))
    pairs |= {tuple(sorted(p)) for p in extra if p[0] != p[1]}
    impedance = st.tuples(st.floats(0.0, 0.1), st.floats(0.05, 0.5))
    branches = []
    for i, j in sorted(pairs):
        r, x = draw(impedance)
        branches.append(Branch(i, j, r, x, draw(st.floats(0.0, 0.05))))
    buses = tuple(
        Bus(i, draw(st.floats(-1.0, 0.0)), draw(st.floats(-0.5, 0.0)), is_reference=(i == 1),
            shunt_susceptance=draw(st.floats(0.0, 0.2)))
        for i in range(1, n + 1)
    )
    return NetworkCase(buses=buses, branches=tuple(branches), generators=())


@hsettings(max_examples=60, deadline=None)
@given(_small_cases(), st.data())
def test_admittance_block_sums_on_small_graphs(case, data):
    """Coarse entries equal brute-force sums of the fine Y-bus over subpartition blocks."""
    graph = case.graph()
    n = graph.number_of_nodes()
    K = data.draw(st.integers(1, min(3, n)))
    partitioning = partition_graph(graph, K, data.draw(st.integers(0, 99)))
    counts = {
        k: data.draw(st.integers(1, len(partitioning.members(k)))) for k in range(1, K + 1)
    }
    structure = subpartition(graph, partitioning, counts)
    cg = build_coarse_graph(graph, structure)
    coarse = aggregate_data(case, cg, structure)
    fine = grid_from_case(case).admittance
    for a in cg.nodes:
        for b in cg.nodes:
            block = [fine.entry(i, j) for i in structure.groups[a - 1] for j in structure.groups[b - 1]]
            expected = (math.fsum(g for g, _ in block), math.fsum(b_ for _, b_ in block))
            assert coarse.grid.admittance.entry(a, b) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize(
    "name", ["case30.m", pytest.param("case118.m", marks=pytest.mark.slow)]
)
@pytest.mark.parametrize("seed", range(5))
def test_loads_conserved_on_larger_cases(name, seed):
    case = _case(name)
    graph = case.graph()
    structure = subpartition(graph, partition_graph(graph, 4, seed), None, seed)
    coarse = aggregate_data(case, build_coarse_graph(graph, structure), structure)
    assert coarse.total_active_load == pytest.approx(case.total_active_load, rel=1e-12)
    assert coarse.total_reactive_load == pytest.approx(case.total_reactive_load, rel=1e-12)
