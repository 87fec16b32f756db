"""
Consensus ADMM over a partitioned OPF.

Each step solves the partition subproblems (in parallel), averages the coupling
states into ``z``, and takes a dual ascent step on the linking constraints
``x_k(i) = z(i)``. All reductions run in ascending (partition, node) order so
results do not depend on the number of worker threads.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from hieropf.errors import ArgumentError, NumericalFailure
from hieropf.network import NetworkCase
from hieropf.nlp import (
    STATUS_INFEASIBLE_STEP,
    STATUS_MAX_ITER,
    STATUS_NUMERICAL_FAILURE,
    PrimalDualSolution,
    SolverOptions,
    solve,
)
from hieropf.opf import (
    GridData,
    OpfModel,
    SubproblemModel,
    build_partition_base,
    build_subproblem,
    coupling_slots,
    eval_constraints,
    flat_start,
    grid_from_case,
)
from hieropf.partitioner import LiftedStructure

logger = logging.getLogger(__name__)

TRACE_HEADER = ("step", "r_norm", "s_norm", "objective", "aug_lagrangian", "step_seconds")


@dataclass(frozen=True)
class AdmmOptions:
    rho: float = 1.0e6
    eps_abs: float = 5.0e-4
    eps_rel: float = 5.0e-4
    max_steps: int = 500
    workers: int = 1
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self) -> None:
        if not self.rho > 0:
            raise ArgumentError(f"rho must be positive, got {self.rho}", module="admm")
        if not (self.eps_abs > 0 and self.eps_rel > 0):
            raise ArgumentError("stopping tolerances must be positive", module="admm")
        if self.max_steps < 1:
            raise ArgumentError("max_steps must be >= 1", module="admm")
        if self.workers < 1:
            raise ArgumentError("workers must be >= 1", module="admm")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TraceRow:
    step: int
    r_norm: float
    s_norm: float
    objective: float
    aug_lagrangian: float
    step_seconds: float

    def as_tuple(self) -> tuple:
        return (self.step, self.r_norm, self.s_norm, self.objective, self.aug_lagrangian, self.step_seconds)


@dataclass
class AdmmState:
    step: int
    x: list[np.ndarray]
    z: np.ndarray
    y: list[np.ndarray]
    r: list[np.ndarray] = field(default_factory=list)
    s: list[np.ndarray] = field(default_factory=list)
    r_norm: float = math.inf
    s_norm: float = math.inf
    ax_norm: float = 0.0
    bz_norm: float = 0.0
    aty_norm: float = 0.0
    eps_pr: float = 0.0
    eps_du: float = 0.0
    objective: float = math.nan
    aug_lagrangian: float = math.nan
    solutions: list[PrimalDualSolution | None] = field(default_factory=list)


@dataclass(frozen=True)
class WarmStart:
    """Initial iterate: ``x`` per partition, ``z`` per coupling node, ``y`` per (partition, node)."""

    x: Mapping[int, np.ndarray]
    z: Mapping[int, np.ndarray]
    y: Mapping[int, Mapping[int, np.ndarray]]


@dataclass
class AdmmResult:
    state: AdmmState
    trace: list[TraceRow]
    converged: bool
    certificate: dict[str, float]
    problem: "AdmmProblem"


class AdmmProblem:
    """Static structure of one ADMM run: subproblem bases and the consensus index maps."""

    def __init__(self, lifted: LiftedStructure, grid: GridData) -> None:
        self.lifted = lifted
        self.grid = grid
        self.K = lifted.K
        self.bases: list[OpfModel] = [build_partition_base(lifted, grid, k) for k in range(1, self.K + 1)]
        self.z_offsets: dict[int, int] = {}
        pos = 0
        for i in lifted.global_coupling:
            self.z_offsets[i] = pos
            pos += grid.state_dim(i)
        self.z_size = pos
        self.slots: list[np.ndarray] = []
        self.zidx: list[np.ndarray] = []
        for k, base in enumerate(self.bases, start=1):
            coupling = lifted.view(k).coupling
            self.slots.append(coupling_slots(base.layout, coupling))
            parts = [self.z_indices(i) for i in coupling]
            self.zidx.append(np.concatenate(parts) if parts else np.zeros(0, dtype=np.intp))
        self.multiplicity = np.zeros(self.z_size)
        for idx in self.zidx:
            self.multiplicity[idx] += 1.0
        self.n_x = sum(base.n for base in self.bases)
        self.n_y = sum(idx.size for idx in self.zidx)

    def z_indices(self, node: int) -> np.ndarray:
        start = self.z_offsets[node]
        return np.arange(start, start + self.grid.state_dim(node), dtype=np.intp)

    def subproblem(self, k: int, z: np.ndarray, y_k: np.ndarray, rho: float) -> SubproblemModel:
        return build_subproblem(
            self.lifted, self.grid, k, self.z_states(z), self.split(k, y_k), rho, base=self.bases[k - 1]
        )

    def split(self, k: int, values: np.ndarray) -> dict[int, np.ndarray]:
        """Per-coupling-node pieces of a vector laid out like partition ``k``'s slots."""
        out = {}
        pos = 0
        for i in self.lifted.view(k).coupling:
            dim = self.grid.state_dim(i)
            out[i] = values[pos : pos + dim]
            pos += dim
        return out

    def z_states(self, z: np.ndarray) -> dict[int, np.ndarray]:
        return {i: z[self.z_indices(i)] for i in self.lifted.global_coupling}


# ============================================================================
# Updates
# ============================================================================


def _solve_partition(
    problem: AdmmProblem,
    k: int,
    state: AdmmState,
    options: AdmmOptions,
) -> tuple[np.ndarray, PrimalDualSolution]:
    sub = problem.subproblem(k, state.z, state.y[k - 1], options.rho)
    previous = state.solutions[k - 1] if state.solutions else None
    solution = solve(sub.to_nlp(state.x[k - 1]), options.solver, warm_start=previous)
    return solution.x, solution


def x_update(
    problem: AdmmProblem, state: AdmmState, options: AdmmOptions
) -> tuple[list[np.ndarray], list[PrimalDualSolution]]:
    ks = range(1, problem.K + 1)
    if options.workers > 1 and problem.K > 1:
        with ThreadPoolExecutor(max_workers=options.workers) as pool:
            results = list(pool.map(lambda k: _solve_partition(problem, k, state, options), ks))
    else:
        results = [_solve_partition(problem, k, state, options) for k in ks]
    step = state.step + 1
    for k, (_, solution) in zip(ks, results):
        if solution.status in (STATUS_NUMERICAL_FAILURE, STATUS_INFEASIBLE_STEP):
            raise NumericalFailure(
                f"subproblem solve ended with status {solution.status}",
                partition=k,
                step=step,
                module="admm",
            )
        if solution.status == STATUS_MAX_ITER:
            logger.warning(
                "subproblem %d hit the interior-point iteration limit at step %d", k, step
            )
    return [x for x, _ in results], [sol for _, sol in results]


def z_update(
    problem: AdmmProblem, x: Sequence[np.ndarray], y: Sequence[np.ndarray], rho: float
) -> np.ndarray:
    """z(i) = mean over sharing partitions of x_k(i) + y_k(i)/ρ."""
    acc = np.zeros(problem.z_size)
    for k in range(problem.K):
        acc[problem.zidx[k]] += x[k][problem.slots[k]] + y[k] / rho
    out = np.zeros(problem.z_size)
    shared = problem.multiplicity > 0
    out[shared] = acc[shared] / problem.multiplicity[shared]
    return out


def y_update(
    problem: AdmmProblem,
    x: Sequence[np.ndarray],
    z: np.ndarray,
    y: Sequence[np.ndarray],
    rho: float,
) -> list[np.ndarray]:
    return [y[k] + rho * (x[k][problem.slots[k]] - z[problem.zidx[k]]) for k in range(problem.K)]


def _norm(blocks: Sequence[np.ndarray]) -> float:
    total = 0.0
    for block in blocks:
        total += float(block @ block)
    return math.sqrt(total)


def residuals(
    problem: AdmmProblem, z_prev: np.ndarray, state: AdmmState, rho: float
) -> tuple[list[np.ndarray], list[np.ndarray], float, float]:
    r = [state.x[k][problem.slots[k]] - state.z[problem.zidx[k]] for k in range(problem.K)]
    dz = z_prev - state.z
    s = [rho * dz[problem.zidx[k]] for k in range(problem.K)]
    return r, s, _norm(r), _norm(s)


def stopping_thresholds(state: AdmmState, options: AdmmOptions, n_x: int, n_y: int) -> tuple[float, float]:
    eps_pr = math.sqrt(n_x) * options.eps_abs + options.eps_rel * max(state.ax_norm, state.bz_norm)
    eps_du = math.sqrt(n_y) * options.eps_abs + options.eps_rel * state.aty_norm
    return eps_pr, eps_du


def check_stop(state: AdmmState, options: AdmmOptions, n_x: int, n_y: int) -> tuple[bool, float, float]:
    eps_pr, eps_du = stopping_thresholds(state, options, n_x, n_y)
    # A residual that is exactly zero passes even against a zero threshold (no linking rows).
    primal_ok = state.r_norm < eps_pr or state.r_norm == 0.0
    dual_ok = state.s_norm < eps_du or state.s_norm == 0.0
    return (primal_ok and dual_ok), eps_pr, eps_du


def augmented_lagrangian(problem: AdmmProblem, state: AdmmState, rho: float) -> tuple[float, float]:
    """(Σ_k f_k(x_k), f + yᵀ(Ax + Bz) + ρ/2 ‖Ax + Bz‖²)."""
    objective = 0.0
    penalty = 0.0
    for k in range(problem.K):
        objective += problem.bases[k].objective(state.x[k])
        r = state.x[k][problem.slots[k]] - state.z[problem.zidx[k]]
        penalty += float(state.y[k] @ r) + 0.5 * rho * float(r @ r)
    return objective, objective + penalty


def kkt_certificate(problem: AdmmProblem, state: AdmmState) -> dict[str, float]:
    """Block norms of the lifted problem's first-order conditions at the current iterate."""
    stat_x = 0.0
    g_sq = 0.0
    h_viol = 0.0
    nu_neg = 0.0
    comp = 0.0
    for k, base in enumerate(problem.bases):
        sol = state.solutions[k]
        if sol is None:
            raise ArgumentError("certificate needs multipliers from an x update", module="admm")
        x = state.x[k]
        rd = base.gradient(x) + base.jacobian(x).T @ sol.lam + base.ineq_jacobian(x).T @ sol.nu_ineq
        lower, upper = base.bound_masks
        rd[lower] -= sol.z_lower
        rd[upper] += sol.z_upper
        rd[problem.slots[k]] += state.y[k]
        free = base.lb != base.ub
        stat_x += float(rd[free] @ rd[free])
        g, h = eval_constraints(base, x)
        nu = sol.nu
        g_sq += float(g @ g)
        h_viol += float(np.sum(np.maximum(h, 0.0) ** 2))
        nu_neg += float(np.sum(np.minimum(nu, 0.0) ** 2))
        comp += float(np.sum((nu * h) ** 2))
    consensus = np.zeros(problem.z_size)
    for k in range(problem.K):
        consensus[problem.zidx[k]] += state.y[k]
    r = [state.x[k][problem.slots[k]] - state.z[problem.zidx[k]] for k in range(problem.K)]
    return {
        "stationarity_x": math.sqrt(stat_x),
        "stationarity_z": float(np.linalg.norm(consensus)),
        "primal": _norm(r),
        "equality": math.sqrt(g_sq),
        "inequality": math.sqrt(h_viol),
        "dual_sign": math.sqrt(nu_neg),
        "complementarity": math.sqrt(comp),
    }


def consensus_duals(
    problem: AdmmProblem, central: OpfModel, solution: PrimalDualSolution
) -> list[np.ndarray]:
    """
    Linking-row duals implied by a central KKT point over ``problem.grid``.

    Partition k takes the central multipliers of the rows it owns, and y_k is
    minus its stationarity residual on the coupling slots. Each z coordinate's
    duals are then shifted to sum to zero: onto the partition holding that
    coordinate fixed if there is one, else evenly.
    """
    row = {node: r for r, node in enumerate(central.owned)}
    n_own = len(central.owned)
    edge_row = {edge: n for n, edge in enumerate(central.edges)}
    lower, upper = central.bound_masks
    zl = np.zeros(central.n)
    zu = np.zeros(central.n)
    zl[lower] = solution.z_lower
    zu[upper] = solution.z_upper

    y: list[np.ndarray] = []
    holder = np.full(problem.z_size, -1, dtype=np.intp)
    for k, base in enumerate(problem.bases):
        layout = base.layout
        x = np.zeros(base.n)
        for node in layout.nodes:
            x[layout.slice(node)] = solution.x[central.layout.slice(node)]
        rows = np.array([row[i] for i in base.owned], dtype=np.intp)
        lam = np.concatenate([solution.lam[rows], solution.lam[n_own + rows]])
        edges = np.array([edge_row[e] for e in base.edges], dtype=np.intp)
        nu = np.empty(2 * edges.size)
        nu[0::2] = solution.nu_ineq[2 * edges]
        nu[1::2] = solution.nu_ineq[2 * edges + 1]
        bound = np.zeros(base.n)
        for node in base.owned:
            bound[layout.slice(node)] = zu[central.layout.slice(node)] - zl[central.layout.slice(node)]
        rd = base.gradient(x) + base.jacobian(x).T @ lam + base.ineq_jacobian(x).T @ nu + bound
        y.append(-rd[problem.slots[k]])
        fixed = (base.lb == base.ub)[problem.slots[k]]
        holder[problem.zidx[k][fixed]] = k

    total = np.zeros(problem.z_size)
    for k in range(problem.K):
        total[problem.zidx[k]] += y[k]
    for k in range(problem.K):
        idx = problem.zidx[k]
        even = total[idx] / np.maximum(problem.multiplicity[idx], 1.0)
        shift = np.where(holder[idx] == k, total[idx], np.where(holder[idx] < 0, even, 0.0))
        y[k] = y[k] - shift
    return y


# ============================================================================
# Driver
# ============================================================================


def initial_state(problem: AdmmProblem, rho: float, warm_start: WarmStart | None = None) -> AdmmState:
    if warm_start is None:
        x = [flat_start(base) for base in problem.bases]
        y = [np.zeros(idx.size) for idx in problem.zidx]
        z = z_update(problem, x, y, rho)
        return AdmmState(step=0, x=x, z=z, y=y, solutions=[None] * problem.K)

    x = []
    y = []
    for k, base in enumerate(problem.bases, start=1):
        xk = np.asarray(warm_start.x.get(k, flat_start(base)), dtype=float)
        if xk.shape != (base.n,):
            raise ArgumentError(f"warm-start x for partition {k} has the wrong size", module="admm")
        x.append(xk)
        duals = warm_start.y.get(k, {})
        parts = [
            np.asarray(duals[i], dtype=float) if i in duals else np.zeros(problem.grid.state_dim(i))
            for i in problem.lifted.view(k).coupling
        ]
        y.append(np.concatenate(parts) if parts else np.zeros(0))
    z = np.zeros(problem.z_size)
    for i in problem.lifted.global_coupling:
        if i not in warm_start.z:
            raise ArgumentError(f"warm start lacks z for coupling node {i}", module="admm")
        z[problem.z_indices(i)] = warm_start.z[i]
    return AdmmState(step=0, x=x, z=z, y=y, solutions=[None] * problem.K)


def run(
    lifted: LiftedStructure,
    case: NetworkCase | GridData,
    options: AdmmOptions | None = None,
    warm_start: WarmStart | None = None,
    on_step: Callable[[TraceRow], None] | None = None,
) -> AdmmResult:
    options = options or AdmmOptions()
    grid = case if isinstance(case, GridData) else grid_from_case(case)
    problem = AdmmProblem(lifted, grid)
    state = initial_state(problem, options.rho, warm_start)
    trace: list[TraceRow] = []
    converged = False
    logger.info(
        "admm: K=%d coupling nodes=%d linking rows=%d rho=%g",
        problem.K, len(lifted.global_coupling), problem.n_y, options.rho,
    )
    for step in range(1, options.max_steps + 1):
        started = time.perf_counter()
        z_prev = state.z
        x, solutions = x_update(problem, state, options)
        z = z_update(problem, x, state.y, options.rho)
        y = y_update(problem, x, z, state.y, options.rho)
        state = AdmmState(step=step, x=x, z=z, y=y, solutions=solutions)
        state.r, state.s, state.r_norm, state.s_norm = residuals(problem, z_prev, state, options.rho)
        state.ax_norm = _norm([x[k][problem.slots[k]] for k in range(problem.K)])
        state.bz_norm = _norm([z[problem.zidx[k]] for k in range(problem.K)])
        state.aty_norm = _norm(y)
        state.objective, state.aug_lagrangian = augmented_lagrangian(problem, state, options.rho)
        stop, state.eps_pr, state.eps_du = check_stop(state, options, problem.n_x, problem.n_y)
        row = TraceRow(
            step=step,
            r_norm=state.r_norm,
            s_norm=state.s_norm,
            objective=state.objective,
            aug_lagrangian=state.aug_lagrangian,
            step_seconds=time.perf_counter() - started,
        )
        trace.append(row)
        if on_step is not None:
            on_step(row)
        logger.info(
            "step %d: r=%.3e (eps %.3e) s=%.3e (eps %.3e) objective=%.6f",
            step, state.r_norm, state.eps_pr, state.s_norm, state.eps_du, state.objective,
        )
        if stop:
            converged = True
            break
    if not converged:
        logger.warning("admm stopped after %d steps without meeting the tolerances", state.step)
    return AdmmResult(
        state=state,
        trace=trace,
        converged=converged,
        certificate=kkt_certificate(problem, state),
        problem=problem,
    )
