"""
AC optimal power flow in polar form.

Per node ``i`` the state is ``(V(i), θ(i), P(gens at i), Q(gens at i))`` with
generators in id order. The nodal balance

    g_P(i) = P_L(i) + ΣP(j) - Σ_k V_i V_k (G_ik cos θ_ik + B_ik sin θ_ik)
    g_Q(i) = Q_L(i) + ΣQ(j) - Σ_k V_i V_k (G_ik sin θ_ik - B_ik cos θ_ik)

is stacked as ``[g_P over owned nodes, g_Q over owned nodes]``. Voltage, generator
and reference-angle limits are box bounds; angle differences across each unique
edge are the only general inequalities, stacked as ``(θ_i - θ_j - hi, lo - θ_i + θ_j)``.

The same model class serves the central problem (every node owned) and the
partition subproblems (owned nodes plus ghost copies of their neighbours). The
coarse problem is a central model over aggregated ``GridData``.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping

import numpy as np
import scipy.sparse as sp

from hieropf.errors import ArgumentError
from hieropf.network import (
    AdmittanceMatrix,
    Generator,
    NetworkCase,
    build_admittance,
    edge_angle_limits,
)
from hieropf.nlp import NlpProblem, SolverOptions, solve

logger = logging.getLogger(__name__)

_INDEX = np.intp


@dataclass(frozen=True, eq=False)
class GridData:
    """Everything the OPF needs about a network, fine or aggregated."""

    node_ids: tuple[int, ...]
    active_load: Mapping[int, float]
    reactive_load: Mapping[int, float]
    generators: tuple[Generator, ...]
    admittance: AdmittanceMatrix
    angle_limits: Mapping[tuple[int, int], tuple[float, float]]
    references: frozenset[int]
    voltage_limits: tuple[float, float]

    @cached_property
    def _gens_by_node(self) -> dict[int, tuple[Generator, ...]]:
        grouped: dict[int, list[Generator]] = defaultdict(list)
        for g in self.generators:
            grouped[g.bus].append(g)
        return {node: tuple(sorted(gens, key=lambda g: g.id)) for node, gens in grouped.items()}

    def generators_at(self, node: int) -> tuple[Generator, ...]:
        return self._gens_by_node.get(node, ())

    @cached_property
    def generator_by_id(self) -> dict[int, Generator]:
        return {g.id: g for g in self.generators}

    @property
    def edges(self) -> tuple[tuple[int, int], ...]:
        return tuple(sorted(self.angle_limits))

    def state_dim(self, node: int) -> int:
        return 2 + 2 * len(self.generators_at(node))


def grid_from_case(case: NetworkCase) -> GridData:
    return GridData(
        node_ids=case.bus_ids,
        active_load={b.id: b.active_load for b in case.buses},
        reactive_load={b.id: b.reactive_load for b in case.buses},
        generators=case.generators,
        admittance=build_admittance(case),
        angle_limits=edge_angle_limits(case),
        references=frozenset(case.reference_buses),
        voltage_limits=case.voltage_limits,
    )


def _as_grid(source: NetworkCase | GridData) -> GridData:
    return source if isinstance(source, GridData) else grid_from_case(source)


@dataclass(frozen=True, eq=False)
class NodeLayout:
    nodes: tuple[int, ...]
    offsets: Mapping[int, int]
    gen_ids: Mapping[int, tuple[int, ...]]
    size: int

    @classmethod
    def over(cls, grid: GridData, nodes: Iterable[int]) -> "NodeLayout":
        nodes = tuple(sorted(nodes))
        offsets: dict[int, int] = {}
        gen_ids: dict[int, tuple[int, ...]] = {}
        pos = 0
        for node in nodes:
            offsets[node] = pos
            gen_ids[node] = tuple(g.id for g in grid.generators_at(node))
            pos += 2 + 2 * len(gen_ids[node])
        return cls(nodes=nodes, offsets=offsets, gen_ids=gen_ids, size=pos)

    def dim(self, node: int) -> int:
        return 2 + 2 * len(self.gen_ids[node])

    def slice(self, node: int) -> slice:
        start = self.offsets[node]
        return slice(start, start + self.dim(node))

    def indices(self, node: int) -> np.ndarray:
        s = self.slice(node)
        return np.arange(s.start, s.stop, dtype=_INDEX)

    def v(self, node: int) -> int:
        return self.offsets[node]

    def theta(self, node: int) -> int:
        return self.offsets[node] + 1

    @cached_property
    def gen_p(self) -> dict[int, int]:
        return {
            gid: self.offsets[node] + 2 + n
            for node in self.nodes
            for n, gid in enumerate(self.gen_ids[node])
        }

    @cached_property
    def gen_q(self) -> dict[int, int]:
        return {
            gid: self.offsets[node] + 2 + len(self.gen_ids[node]) + n
            for node in self.nodes
            for n, gid in enumerate(self.gen_ids[node])
        }

    def node_states(self, x: np.ndarray) -> dict[int, np.ndarray]:
        return {node: np.array(x[self.slice(node)]) for node in self.nodes}


def _ints(values: list[int]) -> np.ndarray:
    return np.asarray(values, dtype=_INDEX)


def _floats(values: list[float]) -> np.ndarray:
    return np.asarray(values, dtype=float)


class _ModelInterface:
    """Shared evaluation helpers over the callback surface of a model."""

    n: int
    lb: np.ndarray
    ub: np.ndarray
    m_eq: int
    m_in: int

    @cached_property
    def bound_masks(self) -> tuple[np.ndarray, np.ndarray]:
        free = self.lb != self.ub
        return free & np.isfinite(self.lb), free & np.isfinite(self.ub)

    @property
    def m_h(self) -> int:
        lower, upper = self.bound_masks
        return self.m_in + int(lower.sum()) + int(upper.sum())

    def h_full(self, x: np.ndarray) -> np.ndarray:
        lower, upper = self.bound_masks
        return np.concatenate(
            [self.inequalities(x), (self.lb - x)[lower], (x - self.ub)[upper]]
        )

    def h_jacobian(self, x: np.ndarray) -> sp.csr_matrix:
        lower, upper = self.bound_masks
        eye = sp.identity(self.n, format="csr")
        return sp.vstack(
            [self.ineq_jacobian(x), -eye[np.flatnonzero(lower)], eye[np.flatnonzero(upper)]],
            format="csr",
        )

    def to_nlp(self, x0: np.ndarray) -> NlpProblem:
        return NlpProblem(
            n=self.n,
            objective=self.objective,
            gradient=self.gradient,
            hessian=lambda x, lam, nu, obj_scale: self.hessian(x, lam, obj_scale),
            lb=self.lb,
            ub=self.ub,
            x0=x0,
            m_eq=self.m_eq,
            m_in=self.m_in,
            constraints=self.constraints,
            jacobian=self.jacobian,
            inequalities=self.inequalities,
            ineq_jacobian=self.ineq_jacobian,
        )


class OpfModel(_ModelInterface):
    """Linear-cost AC OPF over ``layout.nodes`` with balance rows for ``owned`` nodes."""

    def __init__(
        self,
        grid: GridData,
        nodes: Iterable[int],
        owned: Iterable[int],
        edges: Iterable[tuple[int, int]],
    ) -> None:
        self.grid = grid
        self.layout = NodeLayout.over(grid, nodes)
        self.owned = tuple(sorted(owned))
        self.edges = tuple(sorted(edges))
        layout = self.layout
        n = self.n = layout.size
        n_own = len(self.owned)
        self.m_eq = 2 * n_own
        self.m_in = 2 * len(self.edges)

        missing = [i for i in self.owned if i not in layout.offsets]
        if missing:
            raise ArgumentError(f"owned nodes outside the layout: {missing}", module="opf-core")

        lb = np.full(n, -np.inf)
        ub = np.full(n, np.inf)
        cost = np.zeros(n)
        vmin, vmax = grid.voltage_limits
        row_of = {node: r for r, node in enumerate(self.owned)}
        e_row, e_vi, e_vj, e_ti, e_tj, e_g, e_b = [], [], [], [], [], [], []
        gen_row, gen_p, gen_q = [], [], []
        for node in self.owned:
            r = row_of[node]
            lb[layout.v(node)], ub[layout.v(node)] = vmin, vmax
            if node in grid.references:
                lb[layout.theta(node)] = ub[layout.theta(node)] = 0.0
            for g in grid.generators_at(node):
                p, q = layout.gen_p[g.id], layout.gen_q[g.id]
                lb[p], ub[p] = g.p_min, g.p_max
                lb[q], ub[q] = g.q_min, g.q_max
                cost[p] = g.unit_cost
                gen_row.append(r)
                gen_p.append(p)
                gen_q.append(q)
            for j in grid.admittance.closed_neighborhood(node):
                if j not in layout.offsets:
                    raise ArgumentError(
                        f"neighbour {j} of owned node {node} missing from the layout", module="opf-core"
                    )
                G, B = grid.admittance.entry(node, j)
                e_row.append(r)
                e_vi.append(layout.v(node))
                e_vj.append(layout.v(j))
                e_ti.append(layout.theta(node))
                e_tj.append(layout.theta(j))
                e_g.append(G)
                e_b.append(B)
        self.lb, self.ub, self.cost = lb, ub, cost
        self._pl = _floats([grid.active_load[i] for i in self.owned])
        self._ql = _floats([grid.reactive_load[i] for i in self.owned])
        self._e_row, self._e_vi, self._e_vj = _ints(e_row), _ints(e_vi), _ints(e_vj)
        self._e_ti, self._e_tj = _ints(e_ti), _ints(e_tj)
        self._e_g, self._e_b = _floats(e_g), _floats(e_b)
        self._gen_row, self._gen_p, self._gen_q = _ints(gen_row), _ints(gen_p), _ints(gen_q)

        a_i = [layout.theta(i) for i, _ in self.edges]
        a_j = [layout.theta(j) for _, j in self.edges]
        self._a_i, self._a_j = _ints(a_i), _ints(a_j)
        self._a_lo = _floats([grid.angle_limits[e][0] for e in self.edges])
        self._a_hi = _floats([grid.angle_limits[e][1] for e in self.edges])
        rows = np.repeat(np.arange(self.m_in, dtype=_INDEX), 2)
        cols = np.empty(2 * self.m_in, dtype=_INDEX)
        vals = np.empty(2 * self.m_in)
        # row 2e: θi − θj − hi; row 2e+1: lo − θi + θj
        cols[0::4], cols[1::4], cols[2::4], cols[3::4] = a_i, a_j, a_i, a_j
        vals[0::4], vals[1::4], vals[2::4], vals[3::4] = 1.0, -1.0, -1.0, 1.0
        self._d_jac = sp.csr_matrix((vals, (rows, cols)), shape=(self.m_in, n))

    # -- callbacks --------------------------------------------------------

    def objective(self, x: np.ndarray) -> float:
        return float(self.cost @ x)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self.cost.copy()

    def _kernels(self, x: np.ndarray):
        vi = x[self._e_vi]
        vj = x[self._e_vj]
        th = x[self._e_ti] - x[self._e_tj]
        cos, sin = np.cos(th), np.sin(th)
        kp = self._e_g * cos + self._e_b * sin
        kq = self._e_g * sin - self._e_b * cos
        return vi, vj, kp, kq

    def constraints(self, x: np.ndarray) -> np.ndarray:
        n_own = len(self.owned)
        vi, vj, kp, kq = self._kernels(x)
        vv = vi * vj
        gp = (
            self._pl
            + np.bincount(self._gen_row, weights=x[self._gen_p], minlength=n_own)
            - np.bincount(self._e_row, weights=vv * kp, minlength=n_own)
        )
        gq = (
            self._ql
            + np.bincount(self._gen_row, weights=x[self._gen_q], minlength=n_own)
            - np.bincount(self._e_row, weights=vv * kq, minlength=n_own)
        )
        return np.concatenate([gp, gq])

    def jacobian(self, x: np.ndarray) -> sp.csr_matrix:
        n_own = len(self.owned)
        vi, vj, kp, kq = self._kernels(x)
        vv = vi * vj
        rp, rq = self._e_row, self._e_row + n_own
        ones = np.ones(self._gen_row.size)
        rows = np.concatenate([rp, rp, rp, rp, rq, rq, rq, rq, self._gen_row, self._gen_row + n_own])
        cols = np.concatenate(
            [
                self._e_vi, self._e_vj, self._e_ti, self._e_tj,
                self._e_vi, self._e_vj, self._e_ti, self._e_tj,
                self._gen_p, self._gen_q,
            ]
        )
        vals = np.concatenate(
            [-vj * kp, -vi * kp, vv * kq, -vv * kq, -vj * kq, -vi * kq, -vv * kp, vv * kp, ones, ones]
        )
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.m_eq, self.n))

    def inequalities(self, x: np.ndarray) -> np.ndarray:
        diff = x[self._a_i] - x[self._a_j]
        out = np.empty(self.m_in)
        out[0::2] = diff - self._a_hi
        out[1::2] = self._a_lo - diff
        return out

    def ineq_jacobian(self, x: np.ndarray) -> sp.csr_matrix:
        return self._d_jac

    def hessian(self, x: np.ndarray, lam: np.ndarray, obj_scale: float = 1.0) -> sp.csr_matrix:
        lam = np.asarray(lam, dtype=float)
        if lam.shape != (self.m_eq,):
            raise ArgumentError(
                f"multiplier length {lam.shape[0]} != {self.m_eq} equality rows", module="opf-core"
            )
        n_own = len(self.owned)
        vi, vj, kp, kq = self._kernels(x)
        vv = vi * vj
        # g = ... − flows, so each flow term enters with weight −λ.
        wp = -lam[self._e_row]
        wq = -lam[self._e_row + n_own]
        u = wp * kp + wq * kq
        u1 = -wp * kq + wq * kp
        u2 = -u
        Vi, Vj, Ti, Tj = self._e_vi, self._e_vj, self._e_ti, self._e_tj
        rows = np.concatenate([Vi, Vj, Vi, Ti, Vi, Tj, Vj, Ti, Vj, Tj, Ti, Tj, Ti, Tj])
        cols = np.concatenate([Vj, Vi, Ti, Vi, Tj, Vi, Ti, Vj, Tj, Vj, Ti, Tj, Tj, Ti])
        vals = np.concatenate(
            [
                u, u,
                vj * u1, vj * u1,
                -vj * u1, -vj * u1,
                vi * u1, vi * u1,
                -vi * u1, -vi * u1,
                vv * u2, vv * u2,
                -vv * u2, -vv * u2,
            ]
        )
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n, self.n))


@dataclass(frozen=True, eq=False)
class SubproblemModel(_ModelInterface):
    """
    Partition subproblem: local cost plus ``yᵀr + ρ/2 ‖r‖²`` with
    ``r = x[slots] - z_target`` over the coupling-node coordinates.
    """

    k: int
    base: OpfModel
    coupling_nodes: tuple[int, ...]
    slots: np.ndarray
    z_target: np.ndarray
    y: np.ndarray
    rho: float

    @property
    def n(self) -> int:  # type: ignore[override]
        return self.base.n

    @property
    def lb(self) -> np.ndarray:  # type: ignore[override]
        return self.base.lb

    @property
    def ub(self) -> np.ndarray:  # type: ignore[override]
        return self.base.ub

    @property
    def m_eq(self) -> int:  # type: ignore[override]
        return self.base.m_eq

    @property
    def m_in(self) -> int:  # type: ignore[override]
        return self.base.m_in

    @property
    def layout(self) -> NodeLayout:
        return self.base.layout

    def residual(self, x: np.ndarray) -> np.ndarray:
        return x[self.slots] - self.z_target

    def augmentation(self, x: np.ndarray) -> float:
        r = self.residual(x)
        return float(self.y @ r + 0.5 * self.rho * (r @ r))

    def local_objective(self, x: np.ndarray) -> float:
        return self.base.objective(x)

    def objective(self, x: np.ndarray) -> float:
        return self.base.objective(x) + self.augmentation(x)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        grad = self.base.gradient(x)
        grad[self.slots] += self.y + self.rho * self.residual(x)
        return grad

    def constraints(self, x: np.ndarray) -> np.ndarray:
        return self.base.constraints(x)

    def jacobian(self, x: np.ndarray) -> sp.csr_matrix:
        return self.base.jacobian(x)

    def inequalities(self, x: np.ndarray) -> np.ndarray:
        return self.base.inequalities(x)

    def ineq_jacobian(self, x: np.ndarray) -> sp.csr_matrix:
        return self.base.ineq_jacobian(x)

    def hessian(self, x: np.ndarray, lam: np.ndarray, obj_scale: float = 1.0) -> sp.csr_matrix:
        diag = np.zeros(self.n)
        diag[self.slots] = obj_scale * self.rho
        return (self.base.hessian(x, lam, obj_scale) + sp.diags(diag)).tocsr()


# ============================================================================
# Builders and evaluation entry points
# ============================================================================


def build_central(case: NetworkCase | GridData) -> OpfModel:
    grid = _as_grid(case)
    return OpfModel(grid, grid.node_ids, grid.node_ids, grid.edges)


def build_partition_base(lifted, grid: GridData, k: int) -> OpfModel:
    """Subproblem constraints for partition ``k``: balances of owned nodes, edges whose lower end it owns."""
    view = lifted.view(k)
    owned = set(view.owned)
    edges = [e for e in grid.edges if e[0] in owned]
    return OpfModel(grid, view.extended, view.owned, edges)


def coupling_slots(layout: NodeLayout, coupling: Iterable[int]) -> np.ndarray:
    parts = [layout.indices(i) for i in coupling]
    return np.concatenate(parts) if parts else np.zeros(0, dtype=_INDEX)


def build_subproblem(
    lifted,
    case: NetworkCase | GridData,
    k: int,
    z: Mapping[int, np.ndarray],
    y_k: Mapping[int, np.ndarray] | None,
    rho: float,
    base: OpfModel | None = None,
) -> SubproblemModel:
    if rho < 0:
        raise ArgumentError(f"rho must be >= 0, got {rho}", module="opf-core")
    grid = base.grid if base is not None else _as_grid(case)
    base = base or build_partition_base(lifted, grid, k)
    coupling = lifted.view(k).coupling
    layout = base.layout
    targets, duals = [], []
    for i in coupling:
        dim = layout.dim(i)
        if i not in z:
            raise ArgumentError(f"no consensus target for coupling node {i} (partition {k})", module="opf-core")
        zi = np.asarray(z[i], dtype=float)
        if zi.shape != (dim,):
            raise ArgumentError(f"target for node {i} has shape {zi.shape}, expected ({dim},)", module="opf-core")
        targets.append(zi)
        if y_k is None:
            duals.append(np.zeros(dim))
            continue
        if i not in y_k:
            raise ArgumentError(f"no dual for coupling node {i} (partition {k})", module="opf-core")
        yi = np.asarray(y_k[i], dtype=float)
        if yi.shape != (dim,):
            raise ArgumentError(f"dual for node {i} has shape {yi.shape}, expected ({dim},)", module="opf-core")
        duals.append(yi)
    return SubproblemModel(
        k=k,
        base=base,
        coupling_nodes=tuple(coupling),
        slots=coupling_slots(layout, coupling),
        z_target=np.concatenate(targets) if targets else np.zeros(0),
        y=np.concatenate(duals) if duals else np.zeros(0),
        rho=float(rho),
    )


def _check_dim(model: _ModelInterface, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (model.n,):
        raise ArgumentError(f"x has shape {x.shape}, model expects ({model.n},)", module="opf-core")
    return x


def eval_constraints(model: _ModelInterface, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(g, h)`` with ``h`` stacked as [angle rows, lower bounds, upper bounds], feasible iff h <= 0."""
    x = _check_dim(model, x)
    return model.constraints(x), model.h_full(x)


def eval_objective_gradient_jacobian(model: _ModelInterface, x: np.ndarray):
    x = _check_dim(model, x)
    return model.objective(x), model.gradient(x), model.jacobian(x), model.h_jacobian(x)


def lagrangian_hessian(
    model: _ModelInterface, x: np.ndarray, lam: np.ndarray, nu: np.ndarray, obj_scale: float = 1.0
) -> sp.csr_matrix:
    x = _check_dim(model, x)
    nu = np.asarray(nu, dtype=float)
    if nu.shape != (model.m_h,):
        raise ArgumentError(f"nu has shape {nu.shape}, expected ({model.m_h},)", module="opf-core")
    return model.hessian(x, lam, obj_scale)


def flat_start(model: _ModelInterface) -> np.ndarray:
    """
    V = 1 (clipped into its box), θ = 0, generator outputs at the middle of their
    boxes. Artificial slack devices start idle at their lower P bound.
    """
    layout = model.layout
    grid = model.base.grid if isinstance(model, SubproblemModel) else model.grid
    x = np.zeros(model.n)
    for node in layout.nodes:
        v = layout.v(node)
        lo, hi = model.lb[v], model.ub[v]
        x[v] = 1.0 if lo <= 1.0 <= hi else 0.5 * (lo + hi)
        for gid in layout.gen_ids[node]:
            g = grid.generator_by_id[gid]
            x[layout.gen_p[gid]] = g.p_min if g.is_artificial_slack else 0.5 * (g.p_min + g.p_max)
            x[layout.gen_q[gid]] = 0.5 * (g.q_min + g.q_max)
    return x


def solve_central(case: NetworkCase | GridData, options: SolverOptions | None = None):
    """Build and solve the central OPF from a flat start; returns ``(model, solution)``."""
    model = build_central(case)
    solution = solve(model.to_nlp(flat_start(model)), options)
    logger.info(
        "central OPF: status=%s objective=%.6f iterations=%d",
        solution.status, solution.objective, solution.iterations,
    )
    return model, solution
