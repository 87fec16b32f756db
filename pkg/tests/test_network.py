"""
Tests for the network data model: admittance assembly, slack devices, JSON form.
"""
import math
import os
import sys
import tempfile

import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from hieropf.errors import ArgumentError, CaseIntegrityError, SingularBranchError
from hieropf.network import (
    SLACK_P_BOUNDS,
    SLACK_Q_BOUNDS,
    Branch,
    Bus,
    Generator,
    NetworkCase,
    add_slack_generators,
    build_admittance,
    edge_angle_limits,
    read_case_json,
    write_case_json,
)


def _two_bus(branches, generators=()):
    return NetworkCase(
        buses=(Bus(1, 0.0, 0.0, is_reference=True), Bus(2, -0.5, -0.1)),
        branches=tuple(branches),
        generators=tuple(generators),
        name="two_bus",
    )


def test_admittance_single_lossless_branch():
    """x = 0.1 line gives B_12 = 10 and B_11 = B_22 = -10."""
    y = build_admittance(_two_bus([Branch(1, 2, 0.0, 0.1)]))
    assert y.entry(1, 2) == pytest.approx((0.0, 10.0))
    assert y.entry(2, 1) == pytest.approx((0.0, 10.0))
    assert y.entry(1, 1) == pytest.approx((0.0, -10.0))
    assert y.entry(2, 2) == pytest.approx((0.0, -10.0))


def test_admittance_without_branches():
    """No branches: no off-diagonal entries, zero diagonal."""
    y = build_admittance(_two_bus([]))
    assert not y.has_entry(1, 2)
    assert y.entry(1, 1) == (0.0, 0.0)
    assert y.neighbors(1) == ()


def test_admittance_parallel_branches_add():
    """Two x = 0.2 branches in parallel sum to B_12 = 10."""
    y = build_admittance(_two_bus([Branch(1, 2, 0.0, 0.2), Branch(2, 1, 0.0, 0.2)]))
    assert y.entry(1, 2)[1] == pytest.approx(10.0)
    assert y.closed_neighborhood(1) == (1, 2)


def test_admittance_shunt_and_charging_on_diagonal():
    """Bus shunts and half the line charging land on the diagonal."""
    case = NetworkCase(
        buses=(Bus(1, 0.0, 0.0, is_reference=True, shunt_susceptance=0.19), Bus(2, 0.0, 0.0)),
        branches=(Branch(1, 2, 0.0, 0.1, charging_susceptance=0.04),),
        generators=(),
    )
    y = build_admittance(case)
    assert y.entry(1, 1)[1] == pytest.approx(-10.0 + 0.02 + 0.19)
    assert y.entry(2, 2)[1] == pytest.approx(-10.0 + 0.02)


def test_singular_branch_rejected():
    """r = x = 0 raises SingularBranchError."""
    with pytest.raises(SingularBranchError):
        build_admittance(_two_bus([Branch(1, 2, 0.0, 0.0)]))


def test_add_slack_generators_two_bus():
    """One flagged slack device per bus, ids after the real ones."""
    case = _two_bus([Branch(1, 2, 0.0, 0.1)], [Generator(1, 1, 2000.0, 0.0, 2.0, -1.0, 1.0)])
    out = add_slack_generators(case, 1.0e4)
    assert len(out.generators) == 3
    slacks = [g for g in out.generators if g.is_artificial_slack]
    assert [g.bus for g in slacks] == [1, 2]
    assert [g.id for g in slacks] == [2, 3]
    assert all((g.p_min, g.p_max) == SLACK_P_BOUNDS for g in slacks)
    assert all((g.q_min, g.q_max) == SLACK_Q_BOUNDS for g in slacks)
    assert all(g.unit_cost == 1.0e4 for g in slacks)
    assert out.generators[0] == case.generators[0]


def test_slack_cost_must_exceed_generator_cost():
    """A slack cost below a real generator's cost is an argument error."""
    case = _two_bus([Branch(1, 2, 0.0, 0.1)], [Generator(1, 1, 2000.0, 0.0, 2.0, -1.0, 1.0)])
    with pytest.raises(ArgumentError):
        add_slack_generators(case, 1000.0)


def test_validate_rejects_unknown_bus():
    """Generator on a missing bus is an integrity error naming the bus."""
    case = _two_bus([Branch(1, 2, 0.0, 0.1)], [Generator(1, 99, 10.0, 0.0, 1.0, -1.0, 1.0)])
    with pytest.raises(CaseIntegrityError, match="99"):
        case.validate()


def test_validate_rejects_disconnected_graph():
    """Two buses without a branch form a disconnected network."""
    with pytest.raises(CaseIntegrityError, match="disconnected"):
        _two_bus([]).validate()


def test_validate_requires_reference_bus():
    case = NetworkCase(
        buses=(Bus(1, 0.0, 0.0), Bus(2, 0.0, 0.0)),
        branches=(Branch(1, 2, 0.0, 0.1),),
        generators=(),
    )
    with pytest.raises(CaseIntegrityError, match="reference"):
        case.validate()


def test_edge_angle_limits_orientation_and_defaults():
    """Limits are stored for θ(i) - θ(j) with i < j; missing limits use the case default."""
    case = NetworkCase(
        buses=(Bus(1, 0.0, 0.0, is_reference=True), Bus(2, 0.0, 0.0), Bus(3, 0.0, 0.0)),
        branches=(Branch(2, 1, 0.0, 0.1, angle_min=-0.1, angle_max=0.3), Branch(2, 3, 0.0, 0.1)),
        generators=(),
    )
    limits = edge_angle_limits(case)
    assert limits[(1, 2)] == pytest.approx((-0.3, 0.1))
    assert limits[(2, 3)] == pytest.approx((-math.pi / 4, math.pi / 4))


def test_parallel_branch_limits_intersect():
    case = _two_bus(
        [Branch(1, 2, 0.0, 0.1, angle_min=-0.5, angle_max=0.2), Branch(1, 2, 0.0, 0.1, angle_min=-0.1, angle_max=0.6)]
    )
    assert edge_angle_limits(case)[(1, 2)] == pytest.approx((-0.1, 0.2))


def test_case_json_round_trip():
    """Canonical JSON reproduces the case."""
    case = add_slack_generators(
        _two_bus([Branch(1, 2, 0.01, 0.1, 0.02, tap_ratio=0.98)], [Generator(1, 1, 2000.0, 0.0, 2.0, -1.0, 1.0)])
    )
    td = tempfile.mkdtemp(prefix="hieropf_case_")
    path = os.path.join(td, "case.json")
    write_case_json(case, path)
    back = read_case_json(path)
    assert back == case


def test_total_loads():
    case = _two_bus([Branch(1, 2, 0.0, 0.1)])
    assert case.total_active_load == pytest.approx(-0.5)
    assert case.total_reactive_load == pytest.approx(-0.1)
