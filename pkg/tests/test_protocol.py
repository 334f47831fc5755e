from __future__ import annotations

import numpy as np
import pytest

from losnet.certificates import CertificateParams, prcbc_distance_rows, prsbc_pair_rows
from losnet.geometry import GaussianBelief, SphereObstacle
from losnet.graph import LosGraph, WeightedLosGraph, centralized_ulos_lct
from losnet.protocol import (
    AdmmParams,
    ProtocolError,
    assemble_local_rows,
    build_tree_decentralized,
    elect_leader,
    run_decentralized_period,
    select_mwoe,
)
from losnet.qp import QpProblem, solve

PARAMS = CertificateParams(r_s=0.2, r_obs=0.2, r_c=0.8)


def _beliefs(points: list[tuple[float, float]], var: float = 0.0) -> list[GaussianBelief]:
    return [GaussianBelief(np.array(p), var * np.eye(2)) for p in points]


def _random_weighted_graph(rng: np.random.Generator) -> WeightedLosGraph:
    n = int(rng.integers(2, 16))
    order = rng.permutation(n)
    edges = {tuple(sorted((int(order[k]), int(order[k + 1])))) for k in range(n - 1)}
    for _ in range(int(rng.integers(0, 2 * n))):
        i, j = rng.choice(n, 2, replace=False)
        edges.add(tuple(sorted((int(i), int(j)))))
    weights = {e: float(rng.normal(0.0, 10.0)) for e in sorted(edges)}
    return WeightedLosGraph(LosGraph(n, tuple(sorted(edges))), weights, 1.0)


def test_elect_leader() -> None:
    assert elect_leader({3, 5, 9}) == 3
    assert elect_leader([7]) == 7
    with pytest.raises(ValueError):
        elect_leader([])


def test_select_mwoe_against_brute_force() -> None:
    rng = np.random.default_rng(31337)
    for _ in range(60):
        wg = _random_weighted_graph(rng)
        n = wg.graph.n
        size = int(rng.integers(1, n))
        fragment = set(map(int, rng.choice(n, size=size, replace=False)))
        best = None
        for (i, j), w in wg.weights.items():
            if (i in fragment) != (j in fragment):
                if best is None or (w, i, j) < best:
                    best = (w, i, j)
        expect = None if best is None else (best[1], best[2])
        assert select_mwoe(fragment, wg.weights) == expect


def test_select_mwoe_none_when_no_outgoing() -> None:
    weights = {(0, 1): 1.0}
    assert select_mwoe({0, 1}, weights) is None
    assert select_mwoe({2}, weights) is None


def test_decentralized_tree_matches_kruskal() -> None:
    rng = np.random.default_rng(777)
    for _ in range(100):
        wg = _random_weighted_graph(rng)
        assert build_tree_decentralized(wg).edges == centralized_ulos_lct(wg).edges


def test_decentralized_tree_with_tied_weights() -> None:
    g = LosGraph(4, ((0, 1), (0, 2), (0, 3), (1, 2), (2, 3)))
    wg = WeightedLosGraph(g, dict.fromkeys(g.edges, -5.0), 1.0)
    assert build_tree_decentralized(wg).edges == centralized_ulos_lct(wg).edges


def test_decentralized_tree_reports_fragments() -> None:
    g = LosGraph(4, ((0, 1), (2, 3)))
    wg = WeightedLosGraph(g, {(0, 1): 1.0, (2, 3): 1.0}, 1.0)
    with pytest.raises(ProtocolError, match=r"\[0, 1\].*\[2, 3\]"):
        build_tree_decentralized(wg)


def test_assemble_local_rows_accounting() -> None:
    beliefs = {
        0: GaussianBelief(np.array([0.0, 0.0]), np.zeros((2, 2))),
        1: GaussianBelief(np.array([0.5, 0.0]), np.zeros((2, 2))),
        2: GaussianBelief(np.array([0.0, 0.5]), np.zeros((2, 2))),
    }
    obstacles = [
        SphereObstacle(np.array([3.0, 3.0]), 0.2),
        SphereObstacle(np.array([-3.0, 3.0]), 0.2),
    ]
    rows = assemble_local_rows(0, beliefs, [1, 2], [1], obstacles, PARAMS)
    tags = [r.tag for r in rows]
    assert tags.count("Safety") == 2
    assert tags.count("ObstacleSafety") == 2
    assert tags.count("CommDistance") == 4
    assert tags.count("LosOcclusion") == 2
    joint = [r for r in rows if r.tag == "Safety" and r.members == [0, 1]]
    half = [r for r in rows if r.tag == "Safety" and r.members == [0]]
    assert len(joint) == 1 and len(half) == 1
    full = prsbc_pair_rows(0, beliefs[0], 2, beliefs[2], PARAMS)[0]
    assert half[0].rhs == pytest.approx(0.5 * full.rhs)
    assert np.allclose(half[0].coeffs[0], full.coeffs[0])


def test_period_single_robot_with_obstacle() -> None:
    beliefs = _beliefs([(0.0, 0.0)])
    obstacles = [SphereObstacle(np.array([0.25, 0.0]), 0.2)]
    res = run_decentralized_period(
        beliefs, obstacles, PARAMS, [np.array([1.0, 0.0])], alphas={0: 1.0}
    )
    assert res.tree.edges == ()
    assert res.max_residual == 0.0
    # the obstacle row caps approach speed: -2 e (u) <= gamma*(|e|^2 - r^2)
    e = np.array([-0.25, 0.0])
    rhs = float(e @ e) - 0.04
    assert -2.0 * float(e @ res.controls[0]) <= rhs + 1e-9


def test_period_separable_returns_nominal() -> None:
    beliefs = _beliefs([(0.0, 0.0), (0.5, 0.0)])
    u_nom = [np.array([0.01, 0.0]), np.array([0.0, -0.01])]
    res = run_decentralized_period(beliefs, [], PARAMS, u_nom, alphas={0: 1.0, 1: 1.0})
    assert res.tree.edges == ((0, 1),)
    assert np.allclose(res.controls[0], u_nom[0], atol=1e-9)
    assert np.allclose(res.controls[1], u_nom[1], atol=1e-9)
    assert res.max_residual <= 1e-4
    assert res.row_counts["CommDistance"] == 8  # both endpoints hold the 4 rows


def test_period_matches_centralized_on_pair() -> None:
    beliefs = _beliefs([(0.0, 0.0), (0.6, 0.0)])
    u_nom = [np.array([-1.5, 0.0]), np.array([1.5, 0.0])]
    admm = AdmmParams(tol=1e-6, max_inner=3000)
    res = run_decentralized_period(
        beliefs, [], PARAMS, u_nom, alphas={0: 2.0, 1: 2.0}, admm=admm
    )
    rows = prsbc_pair_rows(0, beliefs[0], 1, beliefs[1], PARAMS)
    rows += prcbc_distance_rows(0, beliefs[0], 1, beliefs[1], PARAMS)
    ref = solve(QpProblem({0: u_nom[0], 1: u_nom[1]}, rows, norm_bounds={0: 2.0, 1: 2.0}))
    assert ref.status == "optimal"
    for i in (0, 1):
        assert np.allclose(res.controls[i], ref.controls[i], atol=1e-3)
    # the proximity rows really bound the separation rate
    diff = res.controls[1] - res.controls[0]
    assert diff[0] <= (0.64 - 0.36) / 1.2 + 1e-6


def test_objective_weighting_normalized_vs_literal() -> None:
    # path 0-1-2 with unequal degrees: normalized weighting reproduces the
    # single-program optimum, literal weighting biases it
    beliefs = _beliefs([(0.0, 0.0), (0.6, 0.0), (1.2, 0.0)])
    u_nom = [np.array([-1.0, 0.0]), np.array([0.0, 0.0]), np.array([0.5, 0.0])]
    c = (0.64 - 0.36) / 1.2
    centralized = np.array([-1.0 / 6.0 - c, -1.0 / 6.0, -1.0 / 6.0 + c])
    res_n = run_decentralized_period(
        beliefs, [], PARAMS, u_nom, admm=AdmmParams(tol=1e-6, max_inner=5000)
    )
    got_n = np.array([res_n.controls[i][0] for i in range(3)])
    assert np.allclose(got_n, centralized, atol=2e-3)
    res_l = run_decentralized_period(
        beliefs,
        [],
        PARAMS,
        u_nom,
        admm=AdmmParams(tol=1e-6, max_inner=5000, objective_weighting="literal"),
    )
    got_l = np.array([res_l.controls[i][0] for i in range(3)])
    literal = np.array([-1.0 / 7.0 - c, -1.0 / 7.0, -1.0 / 7.0 + c])
    assert np.allclose(got_l, literal, atol=2e-3)
    assert np.max(np.abs(got_l - centralized)) > 5e-3


def test_period_messages_respect_line_of_sight() -> None:
    # 0-1-2 chain: 0 and 2 are out of range of each other
    beliefs = _beliefs([(0.0, 0.0), (0.6, 0.0), (1.2, 0.0)])
    res = run_decentralized_period(beliefs, [], PARAMS, [np.zeros(2)] * 3)
    assert res.trace  # messages flowed
    for line in res.trace:
        assert "00->02" not in line
        assert "02->00" not in line


def test_period_is_deterministic() -> None:
    beliefs = _beliefs([(0.0, 0.0), (0.5, 0.1), (0.9, 0.4)], var=1e-6)
    u_nom = [np.array([0.4, -0.2]), np.array([-0.3, 0.3]), np.array([0.2, 0.2])]
    a = run_decentralized_period(beliefs, [], PARAMS, u_nom, alphas={i: 1.0 for i in range(3)})
    b = run_decentralized_period(beliefs, [], PARAMS, u_nom, alphas={i: 1.0 for i in range(3)})
    assert a.trace == b.trace
    assert a.tree.edges == b.tree.edges
    for i in range(3):
        assert np.array_equal(a.controls[i], b.controls[i])


def test_period_fails_on_disconnected_graph() -> None:
    beliefs = _beliefs([(0.0, 0.0), (5.0, 0.0)])
    with pytest.raises(ProtocolError, match="spanned"):
        run_decentralized_period(beliefs, [], PARAMS, [np.zeros(2)] * 2)


def test_period_fails_when_only_edge_is_uncertifiable() -> None:
    cov = 0.002 * np.eye(2)
    beliefs = [
        GaussianBelief(np.array([0.0, 0.0]), cov),
        GaussianBelief(np.array([0.7, 0.0]), cov),
    ]
    # does not cross the segment between the estimates, but sits inside the
    # pair's covering ellipsoid
    obstacles = [SphereObstacle(np.array([0.35, 0.05]), 0.01)]
    with pytest.raises(ProtocolError):
        run_decentralized_period(beliefs, obstacles, PARAMS, [np.zeros(2)] * 2)


def test_admm_params_validation() -> None:
    with pytest.raises(ValueError):
        AdmmParams(rho=0.0)
    with pytest.raises(ValueError):
        AdmmParams(tol=-1.0)
    with pytest.raises(ValueError):
        AdmmParams(max_inner=0)
    with pytest.raises(ValueError):
        AdmmParams(objective_weighting="mean")
