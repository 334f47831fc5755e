from __future__ import annotations

import math

import numpy as np
import pytest

from losnet.certificates import ConstraintRow
from losnet.qp import QpProblem, norm_ball_rows, prune_rows, solve


def _row(coeffs: dict, rhs: float, tag: str = "Safety") -> ConstraintRow:
    return ConstraintRow(coeffs, rhs, tag)


def test_unconstrained_returns_nominal() -> None:
    sol = solve(QpProblem({0: [1.0, -2.0]}, []))
    assert sol.status == "optimal"
    assert np.array_equal(sol.controls[0], np.array([1.0, -2.0]))
    assert sol.objective == 0.0
    assert sol.kkt_residual == 0.0


def test_single_halfspace_projection() -> None:
    # projection of (2, 0) onto x + y <= 1
    sol = solve(QpProblem({0: [2.0, 0.0]}, [_row({0: [1.0, 1.0]}, 1.0)]))
    assert sol.status == "optimal"
    assert np.allclose(sol.controls[0], [1.5, -0.5], atol=1e-10)
    # multiplier: 2 * (a.unom - b) / ||a||^2
    assert sol.multipliers[0] == pytest.approx(1.0, abs=1e-9)
    assert sol.kkt_residual < 1e-8


def test_weighted_projection_analytic() -> None:
    # the heavier robot moves less: u = unom - t * W^-1 a with
    # t = (a.unom - b) / (a^T W^-1 a)
    a0, a1 = np.array([1.0, 0.0]), np.array([1.0, 0.0])
    unom = {0: np.array([1.0, 0.0]), 1: np.array([1.0, 0.0])}
    w = {0: 4.0, 1: 1.0}
    # u0x + u1x <= 1
    sol = solve(QpProblem(unom, [_row({0: a0, 1: a1}, 1.0)], quad_weights=w))
    t = (2.0 - 1.0) / (1.0 / 4.0 + 1.0)
    assert np.allclose(sol.controls[0], [1.0 - t / 4.0, 0.0], atol=1e-10)
    assert np.allclose(sol.controls[1], [1.0 - t, 0.0], atol=1e-10)
    assert sol.multipliers[0] == pytest.approx(2.0 * t, abs=1e-9)


def test_inactive_row_leaves_nominal() -> None:
    sol = solve(QpProblem({0: [0.0, 0.0]}, [_row({0: [1.0, 0.0]}, 5.0)]))
    assert sol.status == "optimal"
    assert np.allclose(sol.controls[0], [0.0, 0.0])
    assert sol.multipliers[0] == 0.0


def test_coupled_pair_projection() -> None:
    # -(u0x - u1x) <= -1: require u0x - u1x >= 1; symmetric split
    rows = [_row({0: [-1.0, 0.0], 1: [1.0, 0.0]}, -1.0)]
    sol = solve(QpProblem({0: [0.0, 0.0], 1: [0.0, 0.0]}, rows))
    assert sol.status == "optimal"
    assert np.allclose(sol.controls[0], [0.5, 0.0], atol=1e-10)
    assert np.allclose(sol.controls[1], [-0.5, 0.0], atol=1e-10)


def test_contradictory_rows_detected() -> None:
    rows = [_row({0: [1.0, 0.0]}, -1.0), _row({0: [-1.0, 0.0]}, -1.0)]
    sol = solve(QpProblem({0: [0.0, 0.0]}, rows))
    assert sol.status == "infeasible"


def test_row_conflicting_with_bound_detected() -> None:
    rows = [_row({0: [1.0, 0.0]}, -1.0)]
    sol = solve(QpProblem({0: [0.0, 0.0]}, rows, norm_bounds={0: 0.5}))
    assert sol.status == "infeasible"


def test_zero_coefficient_rows() -> None:
    vacuous = _row({0: [0.0, 0.0]}, 1.0)
    sol = solve(QpProblem({0: [3.0, 0.0]}, [vacuous]))
    assert sol.status == "optimal"
    assert np.allclose(sol.controls[0], [3.0, 0.0])
    poisoned = _row({0: [0.0, 0.0]}, -1.0)
    assert solve(QpProblem({0: [3.0, 0.0]}, [poisoned])).status == "infeasible"


def test_norm_bound_clamps_nominal() -> None:
    sol = solve(QpProblem({0: [5.0, 0.0]}, [], norm_bounds={0: 1.0}))
    assert sol.status == "optimal"
    assert np.allclose(sol.controls[0], [1.0, 0.0], atol=1e-9)
    assert sol.kkt_residual < 1e-8


def test_norm_ball_rows_polygon_geometry() -> None:
    rows = norm_ball_rows(3, 1.0, 2, 16)
    assert len(rows) == 16
    assert all(r.tag == "ControlBound" and r.members == [3] for r in rows)

    def feasible(u: np.ndarray) -> bool:
        return all(r.violation({3: u}) <= 0.0 for r in rows)

    vertex = np.array([math.cos(math.pi / 16), math.sin(math.pi / 16)])
    assert feasible(1.018 * vertex)  # inside the circumscribed radius 1.0196
    assert not feasible(1.02 * vertex)
    assert feasible(np.array([1.0, 0.0]))  # tangent point is on the boundary


def test_norm_ball_rows_validation_and_box() -> None:
    with pytest.raises(ValueError):
        norm_ball_rows(0, 0.0)
    with pytest.raises(ValueError):
        norm_ball_rows(0, 1.0, 2, 2)
    with pytest.raises(ValueError):
        norm_ball_rows(0, 1.0, 3, 16)
    box = norm_ball_rows(0, 2.0, 3)
    assert len(box) == 6
    assert all(r.rhs == 2.0 for r in box)


def test_prune_rows() -> None:
    slack = _row({0: [1.0, 0.0]}, 10.0)
    tight = _row({0: [1.0, 0.0]}, 1.0)
    unbounded = _row({0: [1.0, 0.0], 1: [1.0, 0.0]}, 100.0)
    bound = norm_ball_rows(0, 1.0)[0]
    kept = prune_rows([slack, tight, unbounded, bound], {0: 1.0})
    assert slack not in kept
    assert tight in kept
    assert unbounded in kept  # robot 1 has no bound
    assert bound in kept
    # boundary case: reach exactly equals rhs stays
    edge = _row({0: [1.0, 0.0]}, 1.0 / math.cos(math.pi / 16.0))
    assert edge in prune_rows([edge], {0: 1.0})


def test_problem_validation() -> None:
    with pytest.raises(ValueError):
        QpProblem({}, [])
    with pytest.raises(ValueError):
        QpProblem({0: [1.0, 0.0], 1: [1.0]}, [])
    with pytest.raises(ValueError):
        QpProblem({0: [1.0, 0.0]}, [_row({1: [1.0, 0.0]}, 0.0)])
    with pytest.raises(ValueError):
        QpProblem({0: [1.0, 0.0]}, [_row({0: [1.0, 0.0, 0.0]}, 0.0)])
    with pytest.raises(ValueError):
        QpProblem({0: [1.0, 0.0]}, [], quad_weights={0: -1.0})
    with pytest.raises(ValueError):
        QpProblem({0: [1.0, 0.0]}, [], norm_bounds={0: 0.0})
    with pytest.raises(ValueError):
        QpProblem({0: [1.0, 0.0]}, [], norm_bounds={5: 1.0})


def test_solver_is_deterministic() -> None:
    rows = [
        _row({0: [1.0, 1.0], 1: [-0.5, 0.3]}, 0.2),
        _row({0: [-1.0, 0.4]}, -0.1),
    ]
    prob_a = QpProblem({0: [1.0, -1.0], 1: [0.3, 0.8]}, rows, norm_bounds={0: 2.0, 1: 2.0})
    prob_b = QpProblem({0: [1.0, -1.0], 1: [0.3, 0.8]}, rows, norm_bounds={0: 2.0, 1: 2.0})
    sa, sb = solve(prob_a), solve(prob_b)
    assert sa.status == sb.status == "optimal"
    for rid in (0, 1):
        assert np.array_equal(sa.controls[rid], sb.controls[rid])
    assert np.array_equal(sa.multipliers, sb.multipliers)


def _oracle_controls(problem: QpProblem, iters: int = 250_000) -> dict[int, np.ndarray]:
    """Dual projected-gradient solve, independent of the production path."""
    robots = problem.robots
    q = problem.control_dim
    offsets = {rid: k * q for k, rid in enumerate(robots)}
    n = len(robots) * q
    unom = np.concatenate([problem.nominal[r] for r in robots])
    winv = np.ones(n)
    for rid, wk in problem.quad_weights.items():
        winv[offsets[rid] : offsets[rid] + q] = 1.0 / wk
    rows = list(problem.rows)
    for rid, alpha in sorted(problem.norm_bounds.items()):
        rows.extend(norm_ball_rows(rid, alpha, 2, problem.sides))
    a = np.zeros((len(rows), n))
    b = np.empty(len(rows))
    for r, row in enumerate(rows):
        for rid, vec in row.coeffs.items():
            a[r, offsets[rid] : offsets[rid] + q] = vec
        b[r] = row.rhs
    quad = a * winv @ a.T
    c = a @ unom - b
    step = 1.0 / (0.5 * float(np.linalg.eigvalsh(quad)[-1]) + 1e-9)
    mu = np.zeros(len(rows))
    for _ in range(iters):
        mu = np.maximum(0.0, mu + step * (c - 0.5 * (quad @ mu)))
    u = unom - 0.5 * winv * (a.T @ mu)
    return {rid: u[offsets[rid] : offsets[rid] + q] for rid in robots}


def test_matches_dual_ascent_oracle_on_random_problems() -> None:
    rng = np.random.default_rng(424242)
    for case in range(12):
        n_rob = int(rng.integers(1, 5))
        robots = list(range(n_rob))
        u_feas = {r: rng.uniform(-1.0, 1.0, 2) for r in robots}
        rows = []
        for _ in range(int(rng.integers(2, 13))):
            members = rng.choice(robots, size=min(n_rob, int(rng.integers(1, 3))), replace=False)
            coeffs = {int(r): rng.normal(0.0, 1.0, 2) for r in members}
            lhs = sum(float(coeffs[r] @ u_feas[r]) for r in coeffs)
            slack = float(rng.uniform(0.0, 0.4)) if rng.random() < 0.5 else float(
                rng.uniform(0.0, 0.05)
            )
            rows.append(_row(coeffs, lhs + slack))
        nominal = {r: u_feas[r] + rng.normal(0.0, 1.0, 2) for r in robots}
        weights = {r: float(rng.uniform(0.5, 3.0)) for r in robots}
        bounds = {r: float(np.linalg.norm(u_feas[r])) + float(rng.uniform(0.5, 1.5)) for r in robots}
        problem = QpProblem(nominal, rows, quad_weights=weights, norm_bounds=bounds)
        sol = solve(problem)
        assert sol.status == "optimal", f"case {case}: {sol.status}"
        assert sol.kkt_residual < 1e-6
        oracle = _oracle_controls(problem)
        for r in robots:
            assert np.allclose(sol.controls[r], oracle[r], atol=1e-5), f"case {case}"
