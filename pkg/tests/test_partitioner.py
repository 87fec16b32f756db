"""
Tests for partitioning, coupling sets and the lifted structure.
"""
import os
import sys

import networkx as nx
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from conftest import fixture_path
from hieropf.errors import ArgumentError, PartitionValidationError
from hieropf.matpower import load_case
from hieropf.partitioner import (
    Partitioning,
    build_lifted,
    coupling_sets,
    kway_partition,
    load_partition_file,
    partition_graph,
    write_partition_file,
)


def _path4():
    return nx.path_graph([1, 2, 3, 4])


def _split(groups):
    return Partitioning(
        assignment={v: k for k, nodes in enumerate(groups, start=1) for v in nodes},
        num_parts=len(groups),
    )


def _set_partitions(nodes, max_parts):
    """All partitions of ``nodes`` into 1..max_parts blocks (restricted growth strings)."""
    nodes = list(nodes)

    def grow(i, labels, used):
        if i == len(nodes):
            yield dict(zip(nodes, labels)), used
            return
        for k in range(1, min(used + 1, max_parts) + 1):
            yield from grow(i + 1, labels + [k], max(used, k))

    yield from grow(0, [], 0)


def test_path_two_halves():
    """Path 1-2-3-4 with K = 2 splits into {1,2} and {3,4}."""
    part = partition_graph(_path4(), 2, seed=0)
    assert part.parts == ((1, 2), (3, 4))


def test_k_one_and_k_n():
    g = nx.cycle_graph([1, 2, 3, 4, 5])
    assert partition_graph(g, 1).parts == ((1, 2, 3, 4, 5),)
    assert partition_graph(g, 5).parts == ((1,), (2,), (3,), (4,), (5,))


def test_k_out_of_range():
    with pytest.raises(ArgumentError):
        partition_graph(_path4(), 5)
    with pytest.raises(ArgumentError):
        partition_graph(_path4(), 0)


def test_disconnected_graph_rejected():
    g = nx.Graph()
    g.add_edges_from([(1, 2), (3, 4)])
    with pytest.raises(ArgumentError, match="connected"):
        partition_graph(g, 2)


def test_partition_is_seed_deterministic():
    """Same seed gives the same partitioning."""
    g = load_case(fixture_path("case30.m")).graph()
    assert partition_graph(g, 3, seed=4) == partition_graph(g, 3, seed=4)


def test_case118_partition_is_balanced_and_valid():
    g = load_case(fixture_path("case118.m")).graph()
    part = partition_graph(g, 4, seed=0)
    sizes = [len(p) for p in part.parts]
    assert sum(sizes) == 118
    assert min(sizes) >= 1
    part.validate(g.nodes)


def test_kway_partition_accepts_disconnected_subgraph():
    """Subpartitioning may see a disconnected induced subgraph."""
    g = nx.Graph()
    g.add_edges_from([(1, 2), (3, 4), (4, 5)])
    assign = kway_partition(g, 2)
    assert set(assign) == {1, 2, 3, 4, 5}
    assert set(assign.values()) == {1, 2}


def test_coupling_sets_path():
    """{1,2}/{3,4} on the path: both partitions couple through nodes 2 and 3."""
    sets = coupling_sets(_path4(), _split([(1, 2), (3, 4)]))
    assert sets.by_partition == {1: (2, 3), 2: (2, 3)}
    assert sets.nodes == (2, 3)


def test_coupling_sets_single_partition_empty():
    sets = coupling_sets(_path4(), _split([(1, 2, 3, 4)]))
    assert sets.nodes == ()


def test_coupling_sets_star():
    """Star centre 1 with leaves 4, 5 across the cut: centre and those leaves couple."""
    g = nx.star_graph([1, 2, 3, 4, 5])
    sets = coupling_sets(g, _split([(1, 2, 3), (4, 5)]))
    assert sets.nodes == (1, 4, 5)


def test_lifted_path_counts():
    """Two coupling nodes, each shared by both partitions: four linking rows."""
    lifted = build_lifted(_path4(), _split([(1, 2), (3, 4)]))
    assert lifted.global_coupling == (2, 3)
    assert lifted.sharers == {2: (1, 2), 3: (1, 2)}
    assert lifted.linking_rows == 4
    view = lifted.view(1)
    assert view.owned == (1, 2)
    assert view.extended == (1, 2, 3)
    assert view.ghosts == (3,)
    assert lifted.index_maps[0] == ((1, 0), (2, 1))


def test_lifted_single_partition_no_linking():
    lifted = build_lifted(_path4(), _split([(1, 2, 3, 4)]))
    assert lifted.linking_rows == 0
    assert lifted.view(1).ghosts == ()


def test_lifted_triangle_singletons():
    """Singleton partitions on a triangle: every node is shared by all three."""
    g = nx.cycle_graph([1, 2, 3])
    lifted = build_lifted(g, _split([(1,), (2,), (3,)]))
    assert lifted.global_coupling == (1, 2, 3)
    assert all(lifted.sharers[i] == (1, 2, 3) for i in (1, 2, 3))
    assert lifted.linking_rows == 9


def test_coupling_sets_match_definition_on_small_graphs():
    """Every connected graph with at most 6 nodes, every partitioning into at most 3 parts."""
    checked = 0
    for g in nx.graph_atlas_g()[1:]:
        n = g.number_of_nodes()
        if n > 6:
            break
        if not nx.is_connected(g):
            continue
        g = nx.relabel_nodes(g, {v: v + 1 for v in g.nodes})
        for assignment, used in _set_partitions(sorted(g.nodes), 3):
            part = Partitioning(assignment=assignment, num_parts=used)
            hoods = {
                k: {v for u in g.nodes if assignment[u] == k for v in list(g.neighbors(u)) + [u]}
                for k in range(1, used + 1)
            }
            expected = {
                k: tuple(sorted({i for i in hoods[k] if any(i in hoods[o] for o in hoods if o != k)}))
                for k in hoods
            }
            sets = coupling_sets(g, part)
            assert sets.by_partition == expected
            assert sets.nodes == tuple(sorted(set().union(*map(set, expected.values()))))
            checked += 1
    assert checked > 1000


def test_partition_file_round_trip(tmp_path):
    part = _split([(1, 2), (3, 4)])
    path = tmp_path / "part.txt"
    write_partition_file(part, path)
    assert path.read_text(encoding="utf-8").startswith("# K=2\n")
    assert load_partition_file(path, nodes=[1, 2, 3, 4]) == part


def test_partition_file_plain_lines(tmp_path):
    path = tmp_path / "part.txt"
    path.write_text("1 1\n2 1\n3 2\n4 2", encoding="utf-8")
    part = load_partition_file(path, nodes=[1, 2, 3, 4])
    assert part.num_parts == 2
    assert part.parts == ((1, 2), (3, 4))


def test_partition_file_missing_node(tmp_path):
    path = tmp_path / "part.txt"
    path.write_text("1 1\n2 1\n3 2\n", encoding="utf-8")
    with pytest.raises(PartitionValidationError, match="4"):
        load_partition_file(path, nodes=[1, 2, 3, 4])


def test_partition_file_empty_partition(tmp_path):
    """All nodes in k = 2 with K declared 2 leaves partition 1 empty."""
    path = tmp_path / "part.txt"
    path.write_text("# K=2\n1 2\n2 2\n3 2\n4 2\n", encoding="utf-8")
    with pytest.raises(PartitionValidationError, match="empty"):
        load_partition_file(path, nodes=[1, 2, 3, 4])


def test_partition_file_out_of_range(tmp_path):
    path = tmp_path / "part.txt"
    path.write_text("# K=2\n1 1\n2 1\n3 2\n4 3\n", encoding="utf-8")
    with pytest.raises(PartitionValidationError, match="outside"):
        load_partition_file(path, nodes=[1, 2, 3, 4])


def test_partition_file_malformed_line(tmp_path):
    path = tmp_path / "part.txt"
    path.write_text("1 1\n2 x\n", encoding="utf-8")
    with pytest.raises(PartitionValidationError, match="line 2"):
        load_partition_file(path)
