"""
Tests for the interior-point NLP solver on problems with known solutions.
"""
import math
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from hieropf.errors import ArgumentError
from hieropf.nlp import (
    STATUS_OPTIMAL,
    NlpProblem,
    PrimalDualSolution,
    SolverOptions,
    kkt_residual,
    solve,
)

INF = np.inf


def _bounded_square():
    """min (x - 1)² with x >= 0."""
    return NlpProblem(
        n=1,
        objective=lambda x: float((x[0] - 1.0) ** 2),
        gradient=lambda x: np.array([2.0 * (x[0] - 1.0)]),
        hessian=lambda x, lam, nu, s: np.array([[2.0 * s]]),
        lb=np.array([0.0]),
        ub=np.array([INF]),
        x0=np.array([5.0]),
    )


def _linear_with_inequality():
    """min x subject to 2 - x <= 0."""
    return NlpProblem(
        n=1,
        objective=lambda x: float(x[0]),
        gradient=lambda x: np.array([1.0]),
        hessian=lambda x, lam, nu, s: np.zeros((1, 1)),
        lb=np.array([-INF]),
        ub=np.array([INF]),
        x0=np.array([0.0]),
        m_in=1,
        inequalities=lambda x: np.array([2.0 - x[0]]),
        ineq_jacobian=lambda x: np.array([[-1.0]]),
    )


def _equality_qp(Q, q, A, b, x0=None):
    """min ½xᵀQx + qᵀx subject to Ax = b, no bounds."""
    n = Q.shape[0]
    return NlpProblem(
        n=n,
        objective=lambda x: float(0.5 * x @ Q @ x + q @ x),
        gradient=lambda x: Q @ x + q,
        hessian=lambda x, lam, nu, s: s * Q,
        lb=np.full(n, -INF),
        ub=np.full(n, INF),
        x0=np.zeros(n) if x0 is None else x0,
        m_eq=A.shape[0],
        constraints=lambda x: A @ x - b,
        jacobian=lambda x: A,
    )


def _half_norm_qp():
    return _equality_qp(np.eye(2), np.zeros(2), np.array([[1.0, 1.0]]), np.array([1.0]))


def _solution(x, lam, nu_ineq=(), z_lower=(), z_upper=(), slack=()):
    return PrimalDualSolution(
        x=np.asarray(x, dtype=float),
        lam=np.asarray(lam, dtype=float),
        nu_ineq=np.asarray(nu_ineq, dtype=float),
        z_lower=np.asarray(z_lower, dtype=float),
        z_upper=np.asarray(z_upper, dtype=float),
        slack=np.asarray(slack, dtype=float),
        status=STATUS_OPTIMAL,
        iterations=0,
        objective=0.0,
        stationarity=0.0,
        feasibility=0.0,
        complementarity=0.0,
    )


def test_bounded_square_inactive_bound():
    """Optimum x = 1 lies inside the bound; its multiplier vanishes."""
    sol = solve(_bounded_square())
    assert sol.status == STATUS_OPTIMAL
    assert sol.x[0] == pytest.approx(1.0, abs=1e-6)
    assert sol.z_lower[0] == pytest.approx(0.0, abs=1e-6)
    assert sol.objective == pytest.approx(0.0, abs=1e-10)


def test_active_inequality_multiplier():
    """min x with x >= 2 through a general row: x = 2, ν = 1."""
    sol = solve(_linear_with_inequality())
    assert sol.status == STATUS_OPTIMAL
    assert sol.x[0] == pytest.approx(2.0, abs=1e-6)
    assert sol.nu_ineq[0] == pytest.approx(1.0, abs=1e-6)
    assert sol.nu.shape == (1,)


def test_equality_qp_known_solution():
    """min ½‖x‖² with x1 + x2 = 1: x = (½, ½), λ = -½."""
    sol = solve(_half_norm_qp())
    assert sol.status == STATUS_OPTIMAL
    np.testing.assert_allclose(sol.x, [0.5, 0.5], atol=1e-8)
    assert sol.lam[0] == pytest.approx(-0.5, abs=1e-8)


def test_random_equality_qps_match_kkt_solve():
    """Ten random convex equality QPs agree with a direct solve of the KKT system."""
    rng = np.random.default_rng(3)
    for _ in range(10):
        n, m = 5, 2
        M = rng.normal(size=(n, n))
        Q = M @ M.T + n * np.eye(n)
        q = rng.normal(size=n)
        A = rng.normal(size=(m, n))
        b = rng.normal(size=m)
        kkt = np.block([[Q, A.T], [A, np.zeros((m, m))]])
        exact = np.linalg.solve(kkt, np.concatenate([-q, b]))
        sol = solve(_equality_qp(Q, q, A, b))
        assert sol.status == STATUS_OPTIMAL
        np.testing.assert_allclose(sol.x, exact[:n], atol=1e-6)
        np.testing.assert_allclose(sol.lam, exact[n:], atol=1e-6)


def test_warm_start_from_optimum_returns_immediately():
    problem = _bounded_square()
    first = solve(problem)
    again = solve(problem, warm_start=first)
    assert again.iterations == 0
    assert again.status == STATUS_OPTIMAL
    np.testing.assert_allclose(again.x, first.x)


def test_warm_start_dimension_mismatch():
    with pytest.raises(ArgumentError, match="warm start"):
        solve(_bounded_square(), warm_start=_solution([1.0, 2.0], []))


def test_max_iter_reported_not_raised():
    sol = solve(_linear_with_inequality(), SolverOptions(max_iter=1))
    assert sol.status == "max-iter"
    assert sol.iterations == 1


def test_kkt_residual_exact_solution():
    stat, feas, comp = kkt_residual(_half_norm_qp(), _solution([0.5, 0.5], [-0.5]))
    assert stat <= 1e-12 and feas <= 1e-12 and comp <= 1e-12


def test_kkt_residual_perturbation():
    """Moving x by δ(1, -1) along the constraint leaves feasibility, costs δ√2 in stationarity."""
    delta = 1e-3
    stat, feas, _ = kkt_residual(
        _half_norm_qp(), _solution([0.5 + delta, 0.5 - delta], [-0.5])
    )
    assert stat == pytest.approx(delta * math.sqrt(2.0), rel=1e-9)
    assert feas == pytest.approx(0.0, abs=1e-15)


def test_kkt_residual_rejects_negative_multiplier():
    with pytest.raises(ArgumentError, match="negative"):
        kkt_residual(_linear_with_inequality(), _solution([2.0], [], nu_ineq=[-1.0], slack=[0.0]))


def test_inverted_bounds_rejected():
    with pytest.raises(ArgumentError, match="lower bound exceeds upper bound"):
        NlpProblem(
            n=1,
            objective=lambda x: 0.0,
            gradient=lambda x: np.zeros(1),
            hessian=lambda x, lam, nu, s: np.zeros((1, 1)),
            lb=np.array([1.0]),
            ub=np.array([0.0]),
            x0=np.array([0.5]),
        )


def test_missing_callbacks_rejected():
    with pytest.raises(ArgumentError, match="equality callbacks"):
        NlpProblem(
            n=1,
            objective=lambda x: 0.0,
            gradient=lambda x: np.zeros(1),
            hessian=lambda x, lam, nu, s: np.zeros((1, 1)),
            lb=np.array([-INF]),
            ub=np.array([INF]),
            x0=np.zeros(1),
            m_eq=1,
        )


def test_fixed_variable_kept_at_bound():
    """A variable with lb == ub is held there while the rest is optimized."""
    problem = NlpProblem(
        n=2,
        objective=lambda x: float((x[0] - 3.0) ** 2 + (x[1] + 1.0) ** 2),
        gradient=lambda x: np.array([2.0 * (x[0] - 3.0), 2.0 * (x[1] + 1.0)]),
        hessian=lambda x, lam, nu, s: 2.0 * s * np.eye(2),
        lb=np.array([1.0, -INF]),
        ub=np.array([1.0, INF]),
        x0=np.zeros(2),
    )
    sol = solve(problem)
    assert sol.status == STATUS_OPTIMAL
    assert sol.x[0] == 1.0
    assert sol.x[1] == pytest.approx(-1.0, abs=1e-6)


@pytest.mark.parametrize("kwargs", [{"tol": 0.0}, {"max_iter": -1}, {"tau_min": 1.0}])
def test_solver_options_validated(kwargs):
    with pytest.raises(ArgumentError):
        SolverOptions(**kwargs)
