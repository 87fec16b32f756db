"""
Primal-dual interior-point solver for smooth NLPs

    min f(x)  s.t.  c(x) = 0,  d(x) <= 0,  lb <= x <= ub.

General inequalities get slacks ``d(x) + s = 0, s >= 0``; box bounds are handled
directly with lower/upper bound multipliers. Variables with ``lb == ub`` are fixed
and removed from the Newton system. Each iteration factors the reduced KKT matrix

    [ W + Σx + Jdᵀ Σs Jd + δw I    Jcᵀ   ]
    [ Jc                          -δc I ]

with a dense Bunch-Kaufman LDLᵀ, corrects its inertia by increasing δw, and runs a
backtracking line search on an ℓ1 merit function. The barrier parameter decreases
monotonically (μ <- μ/5).

Lagrangian sign convention (shared with the OPF models and the ADMM certificate):

    L = f + λᵀc + νᵀd - z_lᵀ(x - lb) - z_uᵀ(ub - x)
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgError, eigh_tridiagonal, ldl, solve_banded, solve_triangular

from hieropf.errors import ArgumentError

logger = logging.getLogger(__name__)

STATUS_OPTIMAL = "optimal"
STATUS_MAX_ITER = "max-iter"
STATUS_INFEASIBLE_STEP = "infeasible-step"
STATUS_NUMERICAL_FAILURE = "numerical-failure"

_SCALE_MAX = 100.0
_KAPPA_EPS = 10.0
_KAPPA_SIGMA = 1.0e10
_ARMIJO = 1.0e-4
_MAX_BACKTRACKS = 40
_MAX_LINE_SEARCH_FAILURES = 10
_DELTA_W_FIRST = 1.0e-4
_DELTA_W_GROWTH = 8.0
_DELTA_W_MAX = 1.0e40
# Absolute: pivots of D with |d| <= this are zero. D spans many orders of magnitude.
_ZERO_PIVOT = 1.0e-300

Vector = np.ndarray


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1.0e-8
    max_iter: int = 200
    mu_init: float = 0.1
    tau_min: float = 0.99
    bound_push: float = 1.0e-2
    warm_start_mu: float = 1.0e-4
    warm_start_push: float = 1.0e-6

    def __post_init__(self) -> None:
        if not self.tol > 0:
            raise ArgumentError("solver tolerance must be positive", module="nlp-solver")
        if self.max_iter < 0:
            raise ArgumentError("max_iter must be >= 0", module="nlp-solver")
        if not 0.0 < self.tau_min < 1.0:
            raise ArgumentError("fraction-to-boundary factor must lie in (0, 1)", module="nlp-solver")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class NlpProblem:
    """
    Callback bundle. ``hessian(x, lam, nu, obj_scale)`` returns the Hessian of
    ``obj_scale * f + lamᵀc + nuᵀd``. Missing constraint callbacks mean "none".
    """

    n: int
    objective: Callable[[Vector], float]
    gradient: Callable[[Vector], Vector]
    hessian: Callable[[Vector, Vector, Vector, float], object]
    lb: Vector
    ub: Vector
    x0: Vector
    m_eq: int = 0
    m_in: int = 0
    constraints: Callable[[Vector], Vector] | None = None
    jacobian: Callable[[Vector], object] | None = None
    inequalities: Callable[[Vector], Vector] | None = None
    ineq_jacobian: Callable[[Vector], object] | None = None

    def __post_init__(self) -> None:
        for name in ("lb", "ub", "x0"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (self.n,):
                raise ArgumentError(
                    f"{name} has shape {arr.shape}, expected ({self.n},)", module="nlp-solver"
                )
            object.__setattr__(self, name, arr)
        if self.m_eq and (self.constraints is None or self.jacobian is None):
            raise ArgumentError("equality callbacks missing", module="nlp-solver")
        if self.m_in and (self.inequalities is None or self.ineq_jacobian is None):
            raise ArgumentError("inequality callbacks missing", module="nlp-solver")
        if np.any(self.lb > self.ub):
            raise ArgumentError("lower bound exceeds upper bound", module="nlp-solver")

    def eval_c(self, x: Vector) -> Vector:
        if not self.m_eq:
            return np.zeros(0)
        return np.asarray(self.constraints(x), dtype=float)

    def eval_d(self, x: Vector) -> Vector:
        if not self.m_in:
            return np.zeros(0)
        return np.asarray(self.inequalities(x), dtype=float)

    def eval_jc(self, x: Vector) -> np.ndarray:
        if not self.m_eq:
            return np.zeros((0, self.n))
        return _dense(self.jacobian(x), self.m_eq, self.n)

    def eval_jd(self, x: Vector) -> np.ndarray:
        if not self.m_in:
            return np.zeros((0, self.n))
        return _dense(self.ineq_jacobian(x), self.m_in, self.n)

    @property
    def fixed(self) -> np.ndarray:
        return self.lb == self.ub

    @property
    def lower_mask(self) -> np.ndarray:
        return ~self.fixed & np.isfinite(self.lb)

    @property
    def upper_mask(self) -> np.ndarray:
        return ~self.fixed & np.isfinite(self.ub)


@dataclass(frozen=True, eq=False)
class PrimalDualSolution:
    x: Vector
    lam: Vector
    nu_ineq: Vector
    z_lower: Vector  # one entry per finite lower bound of a free variable
    z_upper: Vector
    slack: Vector
    status: str
    iterations: int
    objective: float
    stationarity: float
    feasibility: float
    complementarity: float
    mu: float = 0.0

    @property
    def nu(self) -> Vector:
        """Inequality multipliers folded as [general rows, lower bounds, upper bounds]."""
        return np.concatenate([self.nu_ineq, self.z_lower, self.z_upper])

    @property
    def optimal(self) -> bool:
        return self.status == STATUS_OPTIMAL


def _dense(mat: object, rows: int, cols: int) -> np.ndarray:
    if sp.issparse(mat):
        out = mat.toarray()
    else:
        out = np.asarray(mat, dtype=float)
    return out.reshape(rows, cols)


def _inf_norm(v: Vector) -> float:
    return float(np.max(np.abs(v))) if v.size else 0.0


def _max_step(value: Vector, step: Vector, tau: float) -> float:
    mask = step < 0.0
    if not np.any(mask):
        return 1.0
    return float(min(1.0, np.min(-tau * value[mask] / step[mask])))


def kkt_residual(problem: NlpProblem, solution: PrimalDualSolution) -> tuple[float, float, float]:
    """Unscaled Euclidean norms of (stationarity, primal feasibility, complementarity)."""
    x = np.asarray(solution.x, dtype=float)
    if x.shape != (problem.n,) or solution.lam.shape != (problem.m_eq,):
        raise ArgumentError("solution dimensions do not match the problem", module="nlp-solver")
    if solution.nu_ineq.shape != (problem.m_in,):
        raise ArgumentError("inequality multiplier dimension mismatch", module="nlp-solver")
    if np.any(solution.nu < 0.0):
        raise ArgumentError("negative inequality multiplier", module="nlp-solver")
    lower, upper = problem.lower_mask, problem.upper_mask
    free = ~problem.fixed
    grad = np.asarray(problem.gradient(x), dtype=float)
    c = problem.eval_c(x)
    d = problem.eval_d(x)
    rd = grad + problem.eval_jc(x).T @ solution.lam + problem.eval_jd(x).T @ solution.nu_ineq
    rd[lower] -= solution.z_lower
    rd[upper] += solution.z_upper
    feas = np.concatenate(
        [
            c,
            np.maximum(d, 0.0),
            np.maximum(problem.lb - x, 0.0)[np.isfinite(problem.lb)],
            np.maximum(x - problem.ub, 0.0)[np.isfinite(problem.ub)],
        ]
    )
    comp = np.concatenate(
        [
            solution.nu_ineq * d,
            solution.z_lower * (x[lower] - problem.lb[lower]),
            solution.z_upper * (problem.ub[upper] - x[upper]),
        ]
    )
    return (
        float(np.linalg.norm(rd[free])),
        float(np.linalg.norm(feas)),
        float(np.linalg.norm(comp)),
    )


@dataclass
class _Iterate:
    x: Vector
    s: Vector
    lam: Vector
    nu: Vector
    zl: Vector
    zu: Vector


@dataclass
class _Evaluation:
    f: float
    grad: Vector
    c: Vector
    jc: np.ndarray
    d: Vector
    jd: np.ndarray


class _InteriorPoint:
    def __init__(self, problem: NlpProblem, options: SolverOptions) -> None:
        self.p = problem
        self.o = options
        self.free = np.flatnonzero(~problem.fixed)
        self.lo = np.flatnonzero(problem.lower_mask)
        self.up = np.flatnonzero(problem.upper_mask)
        self.mu_min = options.tol / 10.0
        self.delta_w_last = 0.0

    # -- evaluation -------------------------------------------------------

    def _evaluate(self, x: Vector) -> _Evaluation:
        p = self.p
        return _Evaluation(
            f=float(p.objective(x)),
            grad=np.asarray(p.gradient(x), dtype=float),
            c=p.eval_c(x),
            jc=p.eval_jc(x),
            d=p.eval_d(x),
            jd=p.eval_jd(x),
        )

    def _gaps(self, x: Vector) -> tuple[Vector, Vector]:
        return x[self.lo] - self.p.lb[self.lo], self.p.ub[self.up] - x[self.up]

    def _dual_residual(self, ev: _Evaluation, it: _Iterate) -> Vector:
        rd = ev.grad + ev.jc.T @ it.lam + ev.jd.T @ it.nu
        rd[self.lo] -= it.zl
        rd[self.up] += it.zu
        return rd

    def _error(self, ev: _Evaluation, it: _Iterate, mu: float) -> float:
        dl, du = self._gaps(it.x)
        n_mult = it.lam.size + it.nu.size + it.zl.size + it.zu.size
        n_bound = it.nu.size + it.zl.size + it.zu.size
        bound_sum = float(np.sum(np.abs(it.nu)) + np.sum(np.abs(it.zl)) + np.sum(np.abs(it.zu)))
        s_d = max(_SCALE_MAX, (float(np.sum(np.abs(it.lam))) + bound_sum) / max(1, n_mult)) / _SCALE_MAX
        s_c = max(_SCALE_MAX, bound_sum / max(1, n_bound)) / _SCALE_MAX
        rd = self._dual_residual(ev, it)[self.free]
        primal = max(_inf_norm(ev.c), _inf_norm(ev.d + it.s))
        comp = np.concatenate([it.s * it.nu - mu, dl * it.zl - mu, du * it.zu - mu])
        return max(_inf_norm(rd) / s_d, primal, _inf_norm(comp) / s_c)

    # -- initialization ---------------------------------------------------

    def _push_inside(self, x: Vector, push: float) -> Vector:
        p = self.p
        x = np.array(x, dtype=float)
        x[p.fixed] = p.lb[p.fixed]
        width = p.ub - p.lb
        with np.errstate(invalid="ignore"):
            pl = np.minimum(push * np.maximum(1.0, np.abs(p.lb)), 0.49 * width)
            pu = np.minimum(push * np.maximum(1.0, np.abs(p.ub)), 0.49 * width)
        lo, up = self.lo, self.up
        x[lo] = np.maximum(x[lo], p.lb[lo] + pl[lo])
        x[up] = np.minimum(x[up], p.ub[up] - pu[up])
        return x

    def _cold_start(self) -> tuple[_Iterate, float]:
        mu = self.o.mu_init
        x = self._push_inside(self.p.x0, self.o.bound_push)
        d = self.p.eval_d(x)
        s = np.maximum(-d, self.o.bound_push)
        dl, du = self._gaps(x)
        it = _Iterate(
            x=x, s=s, lam=np.zeros(self.p.m_eq), nu=mu / s, zl=mu / dl, zu=mu / du
        )
        return it, mu

    def _warm_iterate(self, ws: PrimalDualSolution) -> _Iterate:
        p = self.p
        if (
            ws.x.shape != (p.n,)
            or ws.lam.shape != (p.m_eq,)
            or ws.nu_ineq.shape != (p.m_in,)
            or ws.slack.shape != (p.m_in,)
            or ws.z_lower.shape != self.lo.shape
            or ws.z_upper.shape != self.up.shape
        ):
            raise ArgumentError("warm start does not match the problem dimensions", module="nlp-solver")
        return _Iterate(
            x=np.array(ws.x, dtype=float),
            s=np.array(ws.slack, dtype=float),
            lam=np.array(ws.lam, dtype=float),
            nu=np.array(ws.nu_ineq, dtype=float),
            zl=np.array(ws.z_lower, dtype=float),
            zu=np.array(ws.z_upper, dtype=float),
        )

    def _interior(self, it: _Iterate) -> bool:
        dl, du = self._gaps(it.x)
        return bool(
            np.all(dl > 0) and np.all(du > 0) and np.all(it.s > 0)
            and np.all(it.nu >= 0) and np.all(it.zl >= 0) and np.all(it.zu >= 0)
        )

    def _warm_start(self, it: _Iterate) -> tuple[_Iterate, float]:
        mu = self.o.warm_start_mu
        push = self.o.warm_start_push
        x = self._push_inside(it.x, push)
        s = np.maximum(it.s, push)
        floor = mu * push
        return (
            _Iterate(
                x=x,
                s=s,
                lam=it.lam,
                nu=np.maximum(it.nu, floor),
                zl=np.maximum(it.zl, floor),
                zu=np.maximum(it.zu, floor),
            ),
            mu,
        )

    # -- linear algebra ---------------------------------------------------

    @staticmethod
    def _inertia(d: np.ndarray) -> tuple[int, int, int]:
        n = d.shape[0]
        if n == 0:
            return 0, 0, 0
        eig = eigh_tridiagonal(np.diag(d).copy(), np.diag(d, -1).copy(), eigvals_only=True)
        pos = int(np.sum(eig > _ZERO_PIVOT))
        neg = int(np.sum(eig < -_ZERO_PIVOT))
        return pos, neg, n - pos - neg

    @staticmethod
    def _ldl_solve(factors: tuple[np.ndarray, np.ndarray, np.ndarray], rhs: Vector) -> Vector:
        lu, d, perm = factors
        lt = lu[perm]
        u = solve_triangular(lt, rhs[perm], lower=True, unit_diagonal=True, check_finite=False)
        n = d.shape[0]
        banded = np.zeros((3, n))
        banded[0, 1:] = np.diag(d, 1)
        banded[1] = np.diag(d)
        banded[2, :-1] = np.diag(d, -1)
        v = solve_banded((1, 1), banded, u, check_finite=False)
        w = solve_triangular(lt.T, v, lower=False, unit_diagonal=True, check_finite=False)
        out = np.empty_like(w)
        out[perm] = w
        return out

    def _solve_kkt(
        self, wbar: np.ndarray, jc: np.ndarray, rhs: Vector, mu: float
    ) -> Vector | None:
        nf, m = wbar.shape[0], jc.shape[0]
        delta_w = 0.0
        delta_c = 0.0
        while True:
            kkt = np.zeros((nf + m, nf + m))
            kkt[:nf, :nf] = wbar + delta_w * np.eye(nf)
            kkt[nf:, :nf] = jc
            kkt[:nf, nf:] = jc.T
            kkt[nf:, nf:] = -delta_c * np.eye(m)
            try:
                factors = ldl(kkt, lower=True, hermitian=True, check_finite=False)
                pos, neg, zero = self._inertia(factors[1])
                if (pos, neg, zero) == (nf, m, 0):
                    sol = self._ldl_solve(factors, rhs)
                    if np.all(np.isfinite(sol)):
                        if delta_w > 0.0:
                            self.delta_w_last = delta_w
                        return sol
            except (LinAlgError, ValueError):
                zero = 1
                neg = 0
            if (zero > 0 or neg < m) and delta_c == 0.0 and m > 0:
                delta_c = 1.0e-8 * mu**0.25
                continue
            if delta_w == 0.0:
                delta_w = max(_DELTA_W_FIRST, self.delta_w_last / 3.0) if self.delta_w_last else _DELTA_W_FIRST
            else:
                delta_w *= _DELTA_W_GROWTH
            if delta_w > _DELTA_W_MAX:
                return None

    # -- main loop --------------------------------------------------------

    def _merit(self, x: Vector, s: Vector, mu: float, eta: float) -> float:
        dl, du = self._gaps(x)
        if np.any(dl <= 0) or np.any(du <= 0) or np.any(s <= 0):
            return math.inf
        c = self.p.eval_c(x)
        d = self.p.eval_d(x)
        barrier = -mu * (np.sum(np.log(s)) + np.sum(np.log(dl)) + np.sum(np.log(du)))
        value = float(self.p.objective(x)) + float(barrier)
        value += eta * float(np.sum(np.abs(c)) + np.sum(np.abs(d + s)))
        return value if math.isfinite(value) else math.inf

    def _finish(self, it: _Iterate, status: str, iterations: int, mu: float) -> PrimalDualSolution:
        sol = PrimalDualSolution(
            x=it.x,
            lam=it.lam,
            nu_ineq=it.nu,
            z_lower=it.zl,
            z_upper=it.zu,
            slack=it.s,
            status=status,
            iterations=iterations,
            objective=float(self.p.objective(it.x)),
            stationarity=0.0,
            feasibility=0.0,
            complementarity=0.0,
            mu=mu,
        )
        stat, feas, comp = kkt_residual(self.p, sol)
        logger.debug(
            "ipm %s after %d iterations: stat=%.3e feas=%.3e comp=%.3e",
            status, iterations, stat, feas, comp,
        )
        return replace(sol, stationarity=stat, feasibility=feas, complementarity=comp)

    def run(self, warm_start: PrimalDualSolution | None) -> PrimalDualSolution:
        p, o = self.p, self.o
        if warm_start is not None:
            raw = self._warm_iterate(warm_start)
            if self._interior(raw) and self._error(self._evaluate(raw.x), raw, 0.0) <= o.tol:
                return self._finish(raw, STATUS_OPTIMAL, 0, 0.0)
            it, mu = self._warm_start(raw)
        else:
            it, mu = self._cold_start()

        nf = self.free.size
        eta = 0.0
        failures = 0
        for iteration in range(o.max_iter):
            ev = self._evaluate(it.x)
            if self._error(ev, it, 0.0) <= o.tol:
                return self._finish(it, STATUS_OPTIMAL, iteration, mu)
            while mu > self.mu_min and self._error(ev, it, mu) <= _KAPPA_EPS * mu:
                mu = max(self.mu_min, mu / 5.0)
            if nf == 0:
                return self._finish(it, STATUS_INFEASIBLE_STEP, iteration, mu)

            dl, du = self._gaps(it.x)
            sigma_x = np.zeros(p.n)
            sigma_x[self.lo] += it.zl / dl
            sigma_x[self.up] += it.zu / du
            sigma_s = it.nu / it.s
            r_d = self._dual_residual(ev, it)
            r_i = ev.d + it.s
            r_s = it.s * it.nu - mu
            r_l = dl * it.zl - mu
            r_u = du * it.zu - mu

            hess = _dense(p.hessian(it.x, it.lam, it.nu, 1.0), p.n, p.n)
            jc_f = ev.jc[:, self.free]
            jd_f = ev.jd[:, self.free]
            wbar = hess[np.ix_(self.free, self.free)] + np.diag(sigma_x[self.free])
            if p.m_in:
                wbar = wbar + jd_f.T @ (sigma_s[:, None] * jd_f)
            rhs_x = -r_d - ev.jd.T @ (sigma_s * r_i - r_s / it.s)
            rhs_x[self.lo] -= r_l / dl
            rhs_x[self.up] += r_u / du
            rhs = np.concatenate([rhs_x[self.free], -ev.c])

            sol = self._solve_kkt(wbar, jc_f, rhs, mu)
            if sol is None:
                logger.debug("ipm: KKT matrix could not be regularized at iteration %d", iteration)
                return self._finish(it, STATUS_NUMERICAL_FAILURE, iteration, mu)
            dx = np.zeros(p.n)
            dx[self.free] = sol[:nf]
            dlam = sol[nf:]
            ds = -r_i - ev.jd @ dx
            dnu = -r_s / it.s - sigma_s * ds
            dzl = -r_l / dl - (it.zl / dl) * dx[self.lo]
            dzu = -r_u / du + (it.zu / du) * dx[self.up]

            tau = max(o.tau_min, 1.0 - mu)
            alpha_pr = min(
                _max_step(it.s, ds, tau),
                _max_step(dl, dx[self.lo], tau),
                _max_step(du, -dx[self.up], tau),
            )
            alpha_du = min(
                _max_step(it.nu, dnu, tau),
                _max_step(it.zl, dzl, tau),
                _max_step(it.zu, dzu, tau),
            )

            grad_phi = float(ev.grad[self.free] @ dx[self.free])
            grad_phi -= mu * float(np.sum(ds / it.s) + np.sum(dx[self.lo] / dl) - np.sum(dx[self.up] / du))
            viol = float(np.sum(np.abs(ev.c)) + np.sum(np.abs(r_i)))
            if viol > 1.0e-14:
                curvature = max(0.0, float(dx[self.free] @ wbar @ dx[self.free]))
                eta = max(eta, (grad_phi + 0.5 * curvature) / (0.9 * viol))
            slope = grad_phi - eta * viol

            phi0 = self._merit(it.x, it.s, mu, eta)
            alpha = alpha_pr
            accepted = slope >= 0.0
            if not accepted:
                noise = 1.0e-14 * max(1.0, abs(phi0))
                for _ in range(_MAX_BACKTRACKS):
                    trial = self._merit(it.x + alpha * dx, it.s + alpha * ds, mu, eta)
                    if trial <= phi0 + _ARMIJO * alpha * slope + noise:
                        accepted = True
                        break
                    alpha *= 0.5
            if accepted:
                failures = 0
            else:
                failures += 1
                alpha = alpha_pr
                if failures >= _MAX_LINE_SEARCH_FAILURES:
                    logger.debug("ipm: %d consecutive line-search failures", failures)
                    return self._finish(it, STATUS_INFEASIBLE_STEP, iteration, mu)

            x_new = it.x + alpha * dx
            s_new = it.s + alpha * ds
            dl_new, du_new = self._gaps(x_new)
            if np.any(dl_new <= 0) or np.any(du_new <= 0) or np.any(s_new <= 0):
                return self._finish(it, STATUS_INFEASIBLE_STEP, iteration, mu)
            nu_new = it.nu + alpha_du * dnu
            zl_new = it.zl + alpha_du * dzl
            zu_new = it.zu + alpha_du * dzu
            nu_new = np.clip(nu_new, mu / (_KAPPA_SIGMA * s_new), _KAPPA_SIGMA * mu / s_new)
            zl_new = np.clip(zl_new, mu / (_KAPPA_SIGMA * dl_new), _KAPPA_SIGMA * mu / dl_new)
            zu_new = np.clip(zu_new, mu / (_KAPPA_SIGMA * du_new), _KAPPA_SIGMA * mu / du_new)
            it = _Iterate(
                x=x_new, s=s_new, lam=it.lam + alpha * dlam, nu=nu_new, zl=zl_new, zu=zu_new
            )
            logger.debug(
                "ipm iter %d: f=%.6e mu=%.1e alpha=%.3e/%.3e", iteration, ev.f, mu, alpha, alpha_du
            )

        ev = self._evaluate(it.x)
        if self._error(ev, it, 0.0) <= o.tol:
            return self._finish(it, STATUS_OPTIMAL, o.max_iter, mu)
        return self._finish(it, STATUS_MAX_ITER, o.max_iter, mu)


def solve(
    problem: NlpProblem,
    options: SolverOptions | None = None,
    warm_start: PrimalDualSolution | None = None,
) -> PrimalDualSolution:
    """Solve ``problem``; a non-optimal outcome is reported through ``status``, never raised."""
    return _InteriorPoint(problem, options or SolverOptions()).run(warm_start)
