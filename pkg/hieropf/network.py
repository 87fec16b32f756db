"""
Power-network data model.

Buses, branches and generators are immutable dataclasses collected in a
``NetworkCase``. Everything is per unit on ``base_mva``. ``active_load`` and
``reactive_load`` enter the nodal balance next to generation:

    P_L(i) + sum(P(j) for j at i) = sum_j V_i V_j (G_ij cos θ_ij + B_ij sin θ_ij)

so a consuming bus has a negative load value (the MATPOWER reader stores ``-PD``).
"""

from __future__ import annotations

import json
import logging
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Any, Mapping

import networkx as nx
import numpy as np

from hieropf.errors import ArgumentError, CaseIntegrityError, SingularBranchError

logger = logging.getLogger(__name__)

DEFAULT_ANGLE_LIMITS = (-math.pi / 4.0, math.pi / 4.0)
DEFAULT_VOLTAGE_LIMITS = (0.9, 1.1)

# Artificial slack device: output only upward in P, both ways in Q.
SLACK_P_BOUNDS = (0.0, 10.0)
SLACK_Q_BOUNDS = (-10.0, 10.0)
DEFAULT_SLACK_COST = 1.0e4


@dataclass(frozen=True)
class Bus:
    id: int
    active_load: float
    reactive_load: float
    is_reference: bool = False
    shunt_conductance: float = 0.0
    shunt_susceptance: float = 0.0


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    resistance: float
    reactance: float
    charging_susceptance: float = 0.0
    tap_ratio: float = 1.0
    # Limits on θ(from) − θ(to); None falls back to the case-wide limits.
    angle_min: float | None = None
    angle_max: float | None = None

    @property
    def pair(self) -> tuple[int, int]:
        return (min(self.from_bus, self.to_bus), max(self.from_bus, self.to_bus))

    def series_admittance(self) -> complex:
        if self.resistance == 0.0 and self.reactance == 0.0:
            raise SingularBranchError(
                f"branch {self.from_bus}-{self.to_bus} has zero series impedance (r = x = 0)"
            )
        return 1.0 / complex(self.resistance, self.reactance)


@dataclass(frozen=True)
class Generator:
    id: int
    bus: int
    unit_cost: float
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    is_artificial_slack: bool = False

    def __post_init__(self) -> None:
        if self.p_min > self.p_max:
            raise CaseIntegrityError(f"generator {self.id}: P_min {self.p_min} > P_max {self.p_max}")
        if self.q_min > self.q_max:
            raise CaseIntegrityError(f"generator {self.id}: Q_min {self.q_min} > Q_max {self.q_max}")


@dataclass(frozen=True)
class NetworkCase:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    angle_limits: tuple[float, float] = DEFAULT_ANGLE_LIMITS
    voltage_limits: tuple[float, float] = DEFAULT_VOLTAGE_LIMITS
    base_mva: float = 100.0
    name: str = "case"

    def __post_init__(self) -> None:
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "generators", tuple(self.generators))
        object.__setattr__(self, "angle_limits", tuple(float(v) for v in self.angle_limits))
        object.__setattr__(self, "voltage_limits", tuple(float(v) for v in self.voltage_limits))

    @cached_property
    def _bus_by_id(self) -> dict[int, Bus]:
        return {b.id: b for b in self.buses}

    @cached_property
    def bus_ids(self) -> tuple[int, ...]:
        return tuple(sorted(self._bus_by_id))

    def bus(self, bus_id: int) -> Bus:
        return self._bus_by_id[bus_id]

    def has_bus(self, bus_id: int) -> bool:
        return bus_id in self._bus_by_id

    @cached_property
    def reference_buses(self) -> tuple[int, ...]:
        return tuple(sorted(b.id for b in self.buses if b.is_reference))

    @cached_property
    def _generators_by_bus(self) -> dict[int, tuple[Generator, ...]]:
        grouped: dict[int, list[Generator]] = defaultdict(list)
        for g in self.generators:
            grouped[g.bus].append(g)
        return {bus: tuple(sorted(gens, key=lambda g: g.id)) for bus, gens in grouped.items()}

    def generators_at(self, bus_id: int) -> tuple[Generator, ...]:
        return self._generators_by_bus.get(bus_id, ())

    @cached_property
    def edges(self) -> tuple[tuple[int, int], ...]:
        """Unique undirected bus pairs (i < j), parallel branches collapsed."""
        return tuple(sorted({br.pair for br in self.branches}))

    def graph(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(self.bus_ids)
        g.add_edges_from(self.edges)
        return g

    @property
    def total_active_load(self) -> float:
        return math.fsum(b.active_load for b in self.buses)

    @property
    def total_reactive_load(self) -> float:
        return math.fsum(b.reactive_load for b in self.buses)

    def validate(self) -> None:
        """Check the structural invariants; raises ``CaseIntegrityError``."""
        if len(self._bus_by_id) != len(self.buses):
            seen: set[int] = set()
            for b in self.buses:
                if b.id in seen:
                    raise CaseIntegrityError(f"duplicate bus id {b.id}")
                seen.add(b.id)
        if not self.buses:
            raise CaseIntegrityError("case has no buses")
        for b in self.buses:
            if not (math.isfinite(b.active_load) and math.isfinite(b.reactive_load)):
                raise CaseIntegrityError(f"bus {b.id} has a non-finite load")
        for n, br in enumerate(self.branches, start=1):
            for end in (br.from_bus, br.to_bus):
                if end not in self._bus_by_id:
                    raise CaseIntegrityError(f"branch {n} references unknown bus {end}")
            if br.from_bus == br.to_bus:
                raise CaseIntegrityError(f"branch {n} connects bus {br.from_bus} to itself")
        gen_ids: set[int] = set()
        for g in self.generators:
            if g.bus not in self._bus_by_id:
                raise CaseIntegrityError(f"generator {g.id} references unknown bus {g.bus}")
            if g.id in gen_ids:
                raise CaseIntegrityError(f"duplicate generator id {g.id}")
            gen_ids.add(g.id)
        if not self.reference_buses:
            raise CaseIntegrityError("case has no reference bus")
        lo, hi = self.voltage_limits
        if lo > hi:
            raise CaseIntegrityError(f"voltage limits inverted: {lo} > {hi}")
        if not nx.is_connected(self.graph()):
            parts = nx.number_connected_components(self.graph())
            raise CaseIntegrityError(f"network graph is disconnected ({parts} components)")


@dataclass(frozen=True, eq=False)
class AdmittanceMatrix:
    """Y-bus entries ``(i, j) -> (G_ij, B_ij)`` over the closed-neighbourhood pattern."""

    bus_ids: tuple[int, ...]
    entries: Mapping[tuple[int, int], tuple[float, float]] = field(default_factory=dict)

    def entry(self, i: int, j: int) -> tuple[float, float]:
        return self.entries.get((i, j), (0.0, 0.0))

    def has_entry(self, i: int, j: int) -> bool:
        return (i, j) in self.entries

    @cached_property
    def _neighbors(self) -> dict[int, tuple[int, ...]]:
        nb: dict[int, list[int]] = {i: [] for i in self.bus_ids}
        for i, j in self.entries:
            if i != j:
                nb[i].append(j)
        return {i: tuple(sorted(js)) for i, js in nb.items()}

    def neighbors(self, i: int) -> tuple[int, ...]:
        return self._neighbors[i]

    def closed_neighborhood(self, i: int) -> tuple[int, ...]:
        return tuple(sorted((i,) + self._neighbors[i]))

    def pattern(self) -> set[tuple[int, int]]:
        return set(self.entries)

    def sorted_entries(self) -> list[tuple[int, int, float, float]]:
        return [(i, j, g, b) for (i, j), (g, b) in sorted(self.entries.items())]


def build_admittance(case: NetworkCase) -> AdmittanceMatrix:
    """
    Standard Y-bus: series ``y = 1/(r + jx)``, half line charging on each end,
    off-nominal taps on the from side, bus shunts on the diagonal.
    """
    acc: dict[tuple[int, int], complex] = {}
    for b in case.buses:
        acc[(b.id, b.id)] = complex(b.shunt_conductance, b.shunt_susceptance)
    for br in case.branches:
        ys = br.series_admittance()
        tau = br.tap_ratio if br.tap_ratio else 1.0
        half_charge = 0.5j * br.charging_susceptance
        f, t = br.from_bus, br.to_bus
        acc[(f, f)] = acc.get((f, f), 0j) + (ys + half_charge) / (tau * tau)
        acc[(t, t)] = acc.get((t, t), 0j) + ys + half_charge
        acc[(f, t)] = acc.get((f, t), 0j) - ys / tau
        acc[(t, f)] = acc.get((t, f), 0j) - ys / tau
    entries = {key: (float(v.real), float(v.imag)) for key, v in acc.items()}
    return AdmittanceMatrix(bus_ids=case.bus_ids, entries=entries)


def edge_angle_limits(case: NetworkCase) -> dict[tuple[int, int], tuple[float, float]]:
    """
    Limits on θ(i) − θ(j) per unique pair (i < j); parallel branches intersect,
    branches without their own limits use ``case.angle_limits``.
    """
    out: dict[tuple[int, int], tuple[float, float]] = {}
    default_lo, default_hi = case.angle_limits
    for br in case.branches:
        lo = default_lo if br.angle_min is None else br.angle_min
        hi = default_hi if br.angle_max is None else br.angle_max
        if br.from_bus > br.to_bus:
            lo, hi = -hi, -lo
        key = br.pair
        if key in out:
            old_lo, old_hi = out[key]
            lo, hi = max(lo, old_lo), min(hi, old_hi)
        if lo > hi:
            raise CaseIntegrityError(f"angle limits for buses {key[0]}-{key[1]} are empty")
        out[key] = (lo, hi)
    return out


def add_slack_generators(case: NetworkCase, slack_cost: float = DEFAULT_SLACK_COST) -> NetworkCase:
    """Append one artificial slack generator per bus; original generators are untouched."""
    real_costs = [g.unit_cost for g in case.generators if not g.is_artificial_slack]
    if real_costs and slack_cost <= max(real_costs):
        raise ArgumentError(
            f"slack cost {slack_cost:g} must exceed the largest generator cost {max(real_costs):g}",
            module="network-model",
        )
    next_id = max((g.id for g in case.generators), default=0) + 1
    slacks = []
    for offset, bus_id in enumerate(case.bus_ids):
        slacks.append(
            Generator(
                id=next_id + offset,
                bus=bus_id,
                unit_cost=float(slack_cost),
                p_min=SLACK_P_BOUNDS[0],
                p_max=SLACK_P_BOUNDS[1],
                q_min=SLACK_Q_BOUNDS[0],
                q_max=SLACK_Q_BOUNDS[1],
                is_artificial_slack=True,
            )
        )
    logger.debug("attached %d slack generators at cost %g", len(slacks), slack_cost)
    return replace(case, generators=case.generators + tuple(slacks))


# ============================================================================
# JSON: canonical serialization (all per unit)
# ============================================================================


def case_to_dict(case: NetworkCase) -> dict[str, Any]:
    return {
        "name": case.name,
        "base_mva": case.base_mva,
        "angle_limits": list(case.angle_limits),
        "voltage_limits": list(case.voltage_limits),
        "buses": [asdict(b) for b in case.buses],
        "branches": [asdict(br) for br in case.branches],
        "generators": [asdict(g) for g in case.generators],
    }


def case_from_dict(data: Mapping[str, Any]) -> NetworkCase:
    try:
        case = NetworkCase(
            buses=tuple(Bus(**b) for b in data["buses"]),
            branches=tuple(Branch(**br) for br in data.get("branches", [])),
            generators=tuple(Generator(**g) for g in data.get("generators", [])),
            angle_limits=tuple(data.get("angle_limits", DEFAULT_ANGLE_LIMITS)),
            voltage_limits=tuple(data.get("voltage_limits", DEFAULT_VOLTAGE_LIMITS)),
            base_mva=float(data.get("base_mva", 100.0)),
            name=str(data.get("name", "case")),
        )
    except (KeyError, TypeError) as e:
        raise CaseIntegrityError(f"malformed case JSON: {e}") from e
    case.validate()
    return case


def write_case_json(case: NetworkCase, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(case_to_dict(case), f, indent=2)


def read_case_json(path: str | Path) -> NetworkCase:
    with open(path, encoding="utf-8") as f:
        return case_from_dict(json.load(f))
