"""Command-line entry point.

Subcommands:

- ``run``        simulate a scenario config and write trajectory/metrics/tree
                 files plus a summary
- ``validate``   run a built-in check suite (mst / chance / consensus /
                 invariance) and print a JSON report
- ``graph``      dump the initial weighted LOS graph of a scenario
- ``weights``    print per-edge weight components for the first observation

Exit codes: 0 success, 1 runtime failure (``error:`` prefix), 2 usage or
configuration problem (``config-error:`` prefix).
"""

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .certificates import (
    CertificateError,
    CertificateParams,
    pair_los_ellipsoid,
    prcbc_distance_rows,
    prlos_cbc_rows,
    prsbc_obstacle_rows,
    prsbc_pair_rows,
)
from .geometry import (
    GaussianBelief,
    PolyObstacle,
    SphereObstacle,
    discretize_obstacles,
    point_segment_distance,
)
from .graph import (
    GraphError,
    LosGraph,
    WeightedLosGraph,
    build_los_graph,
    build_weighted_graph,
    centralized_ulos_lct,
    edge_weight,
)
from .protocol import ProtocolError, build_tree_decentralized, run_decentralized_period
from .qp import QpProblem, prune_rows, solve
from .sim import (
    RobotState,
    Scenario,
    SimulationError,
    observe,
    run_simulation,
    write_metrics_csv,
    write_trajectory_csv,
    write_trees_jsonl,
)

__all__ = ["ConfigError", "load_scenario", "main"]


class ConfigError(ValueError):
    """The configuration file is missing, unparsable, or invalid."""


def _require(cfg, key, where="config"):
    if key not in cfg:
        raise ConfigError(f"{where} is missing required key {key!r}")
    return cfg[key]


def _parse_obstacles(raw):
    out = []
    for k, ob in enumerate(raw):
        kind = _require(ob, "type", f"obstacle {k}")
        try:
            if kind == "sphere":
                out.append(SphereObstacle(np.array(_require(ob, "center", f"obstacle {k}"), dtype=float),
                                          float(_require(ob, "radius", f"obstacle {k}"))))
            elif kind == "polygon":
                out.append(PolyObstacle(np.array(_require(ob, "vertices", f"obstacle {k}"), dtype=float)))
            else:
                raise ConfigError(f"obstacle {k} has unknown type {kind!r}")
        except ValueError as exc:
            raise ConfigError(f"obstacle {k}: {exc}") from exc
    return tuple(out)


def _parse_robots(raw_groups):
    robots = []
    for sid, group in enumerate(raw_groups):
        task = _require(group, "task", f"subgroup {sid}")
        members = _require(group, "robots", f"subgroup {sid}")
        if task == "rendezvous":
            goal = np.array(_require(group, "goal", f"subgroup {sid}"), dtype=float)
            slots = [None] * len(members)
        elif task == "circle":
            goal = np.array(_require(group, "center", f"subgroup {sid}"), dtype=float)
            radius = float(_require(group, "radius", f"subgroup {sid}"))
            slots = [
                (2.0 * math.pi * k / len(members), radius)
                for k in range(len(members))
            ]
        else:
            raise ConfigError(f"subgroup {sid} has unknown task {task!r}")
        for pos, slot in zip(members, slots):
            entry = dict(pos=pos) if not isinstance(pos, dict) else dict(pos)
            heading = float(entry.get("heading", 0.0)) if isinstance(pos, dict) else 0.0
            xy = entry["pos"] if isinstance(pos, dict) else pos
            try:
                robots.append(
                    RobotState(np.array(xy, dtype=float), sid, goal,
                               formation_slot=slot, heading=heading)
                )
            except ValueError as exc:
                raise ConfigError(f"subgroup {sid} robot: {exc}") from exc
    return tuple(robots)


def _parse_noise(raw, n):
    arr = np.asarray(raw, dtype=float)
    if arr.shape == (2,):
        return (np.diag(arr),) * n
    if arr.ndim == 3 and arr.shape == (n, 2, 2):
        return tuple(arr[k] for k in range(n))
    raise ConfigError(
        "noise must be [var_x, var_y] shared by all robots or one 2x2 "
        f"covariance per robot; got shape {arr.shape} for {n} robots"
    )


def load_scenario(path, seed=None, steps=None, mode=None):
    """Read a scenario config; returns (Scenario, requested_mode).

    ``requested_mode`` may be ``both`` — the Scenario itself then carries
    ``decentralized`` and the caller runs each mode separately.
    """
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")

    try:
        params = CertificateParams(**cfg.get("params", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"params: {exc}") from exc
    robots = _parse_robots(_require(cfg, "subgroups"))
    obstacles = _parse_obstacles(cfg.get("obstacles", []))
    noise = _parse_noise(_require(cfg, "noise"), len(robots))
    gains = cfg.get("gains", {})

    requested = mode if mode is not None else cfg.get("mode", "decentralized")
    if requested not in ("decentralized", "centralized", "both"):
        raise ConfigError(f"mode must be decentralized, centralized or both, got {requested!r}")
    try:
        scenario = Scenario(
            robots=robots,
            obstacles=obstacles,
            params=params,
            noise_cov=noise,
            dt=float(cfg.get("dt", 0.02)),
            steps=int(steps if steps is not None else cfg.get("steps", 100)),
            seed=int(seed if seed is not None else cfg.get("seed", 0)),
            mode="decentralized" if requested == "both" else requested,
            beta=float(cfg.get("beta", 1000.0)),
            rho=float(cfg.get("rho", 1.0)),
            alpha=float(cfg.get("alpha", 1.0)),
            admm_tol=float(cfg.get("admm_tol", 1e-4)),
            admm_max_inner=int(cfg.get("admm_max_inner", 500)),
            dynamics=cfg.get("dynamics", "single_integrator"),
            k_r=float(gains.get("k_r", 0.5)),
            k_g=float(gains.get("k_g", 1.0)),
            k=float(gains.get("k", 1.0)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return scenario, requested


# --- run --------------------------------------------------------------------


def _fraction(values, predicate):
    hits = sum(1 for v in values if predicate(v))
    return hits / len(values) if values else 0.0


def _summarize(scenario, requested_mode, result):
    lam = [m.lambda2 for m in result.metrics]
    finite = [v for v in lam if math.isfinite(v)]
    n = len(scenario.robots)
    return {
        "mode": requested_mode,
        "seed": scenario.seed,
        "steps": scenario.steps,
        "robots": n,
        "lambda2_positive_fraction": _fraction(lam, lambda v: v > 0.0),
        "lambda2_min": min(finite) if finite else None,
        "lambda2_final": lam[-1] if math.isfinite(lam[-1]) else None,
        "safety_fraction": _fraction(
            [m.min_robot_dist for m in result.metrics],
            lambda v: v >= scenario.params.r_s,
        ),
        "obstacle_fraction": _fraction(
            [m.min_obs_dist for m in result.metrics],
            lambda v: v >= scenario.params.r_obs,
        ),
        "final_avg_dist_to_target": result.metrics[-1].avg_dist_to_target,
        "mean_step_ms": float(np.mean([m.step_ms for m in result.metrics])),
        "events": [[step, msg] for step, msg in result.events],
        "implied_sigma_graph": 1.0 - (n - 1) * (1.0 - scenario.params.sigma_los),
        "safety_horizon_lower_bound": scenario.params.sigma_s**scenario.steps,
    }


def cmd_run(args):
    scenario, requested = load_scenario(args.config, args.seed, args.steps, args.mode)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    result = run_simulation(scenario)
    summary = _summarize(scenario, requested, result)

    if requested == "both":
        other = run_simulation(replace(scenario, mode="centralized"))
        diffs = []
        n = len(scenario.robots)
        for step in range(scenario.steps):
            recs_a = result.trajectory[step * n : (step + 1) * n]
            recs_b = other.trajectory[step * n : (step + 1) * n]
            diffs.append(max(float(np.linalg.norm(a.u - b.u)) for a, b in zip(recs_a, recs_b)))
        with open(out / "diff.csv", "w") as fh:
            fh.write("step,max_control_diff\n")
            for step, d in enumerate(diffs):
                fh.write(f"{step},{d!r}\n")
        summary["max_control_diff"] = max(diffs)

    write_trajectory_csv(out / "trajectory.csv", result.trajectory)
    write_metrics_csv(out / "metrics.csv", result.metrics)
    write_trees_jsonl(out / "trees.jsonl", result.trees)
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return 0


# --- validate suites ---------------------------------------------------------


def _random_weighted_graph(rng):
    n = int(rng.integers(4, 21))
    order = rng.permutation(n)
    edges = {tuple(sorted((int(order[k]), int(order[k + 1])))) for k in range(n - 1)}
    for _ in range(int(rng.integers(0, 2 * n))):
        i, j = rng.choice(n, 2, replace=False)
        edges.add(tuple(sorted((int(i), int(j)))))
    groups = int(rng.integers(2, 4))
    subgroup = tuple(int(g) for g in rng.integers(0, groups, size=n))
    graph = LosGraph(n, tuple(sorted(edges)), subgroup)
    weights = {}
    for e in sorted(edges):
        w = float(rng.normal(0.0, 5.0))
        weights[e] = -1000.0 * w if graph.is_intra(*e) else -w
    return WeightedLosGraph(graph, weights, 1000.0)


def _suite_mst():
    rng = np.random.default_rng(20240901)
    failures = []
    for case in range(100):
        wg = _random_weighted_graph(rng)
        dec = build_tree_decentralized(wg).edges
        cen = centralized_ulos_lct(wg).edges
        if dec != cen:
            failures.append({"case": case, "reason": "edge sets differ"})
    return 100, failures


def _mc_pair_family(rng, draws, params, kind):
    """Empirical next-step satisfaction probability for one pair geometry.

    Boundary-tight controls: scale a stressing direction until the row set
    is tight, then integrate one Euler step on noisy truths.
    """
    cov = np.diag([0.03, 0.04])
    dt = 0.02
    if kind == "pair":
        sep = float(rng.uniform(0.9, 1.3))
        mean_i, mean_j = np.array([0.0, 0.0]), np.array([sep, 0.0])
        rows = prsbc_pair_rows(0, GaussianBelief(mean_i, cov), 1, GaussianBelief(mean_j, cov), params)
        stress = {0: np.array([1.0, 0.0]), 1: np.array([-1.0, 0.0])}
        radius = params.r_s
    elif kind == "obstacle":
        center = np.array([0.9, 0.1])
        mean_i = np.zeros(2)
        rows = prsbc_obstacle_rows(0, GaussianBelief(mean_i, cov), [SphereObstacle(center, params.r_obs)], params)
        stress = {0: center / np.linalg.norm(center)}
        radius = params.r_obs
    else:  # comm
        sep = float(rng.uniform(0.1, 0.3))
        mean_i, mean_j = np.array([0.0, 0.0]), np.array([sep, 0.05])
        rows = prcbc_distance_rows(0, GaussianBelief(mean_i, cov), 1, GaussianBelief(mean_j, cov), params)
        stress = {0: np.array([-1.0, 0.0]), 1: np.array([1.0, 0.0])}
        radius = params.r_c

    # largest scale of the stressing direction that stays row-feasible
    lo, hi = 0.0, 50.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        controls = {k: mid * v for k, v in stress.items()}
        if all(r.violation(controls) <= 0.0 for r in rows):
            lo = mid
        else:
            hi = mid
    controls = {k: lo * v for k, v in stress.items()}

    root = np.linalg.cholesky(cov + 1e-15 * np.eye(2))
    ok = 0
    for _ in range(draws):
        xi = mean_i - root @ rng.standard_normal(2)
        if kind == "pair":
            xj = mean_j - root @ rng.standard_normal(2)
            xi = xi + dt * controls[0]
            xj = xj + dt * controls[1]
            ok += float(np.linalg.norm(xi - xj)) >= radius
        elif kind == "obstacle":
            xi = xi + dt * controls[0]
            ok += float(np.linalg.norm(xi - center)) >= radius
        else:
            xj = mean_j - root @ rng.standard_normal(2)
            xi = xi + dt * controls[0]
            xj = xj + dt * controls[1]
            ok += float(np.linalg.norm(xi - xj)) <= radius
    return ok / draws


def _mc_los_case(rng, draws, params):
    cov = np.diag([0.03, 0.04])
    dt = 0.02
    mean_i, mean_j = np.array([0.0, 0.0]), np.array([0.9, 0.0])
    bi, bj = GaussianBelief(mean_i, cov), GaussianBelief(mean_j, cov)
    mvce = pair_los_ellipsoid(bi, bj, params)
    # obstacle just beyond the covering ellipsoid boundary, off to the side
    direction = np.array([0.0, 1.0])
    scale = 1.0 / math.sqrt(float(direction @ mvce.shape @ direction))
    center = mvce.center + (scale + 0.2) * direction
    obstacle = SphereObstacle(center, 0.05)
    rows = prlos_cbc_rows(0, bi, 1, bj, [obstacle], params, mvce=mvce)
    stress = {0: direction.copy(), 1: direction.copy()}
    lo, hi = 0.0, 50.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        controls = {k: mid * v for k, v in stress.items()}
        if all(r.violation(controls) <= 0.0 for r in rows):
            lo = mid
        else:
            hi = mid
    controls = {k: lo * v for k, v in stress.items()}
    root = np.linalg.cholesky(cov + 1e-15 * np.eye(2))
    ok = 0
    for _ in range(draws):
        xi = mean_i - root @ rng.standard_normal(2) + dt * controls[0]
        xj = mean_j - root @ rng.standard_normal(2) + dt * controls[1]
        ok += point_segment_distance(center, xi, xj) >= obstacle.radius
    return ok / draws


def _suite_chance(draws=20000):
    params = CertificateParams()
    rng = np.random.default_rng(77001)
    failures = []
    cases = 0
    for kind, sigma in (
        ("pair", params.sigma_s),
        ("obstacle", params.sigma_obs),
        ("comm", params.sigma_c),
    ):
        for rep in range(2):
            cases += 1
            p = _mc_pair_family(rng, draws, params, kind)
            se = math.sqrt(sigma * (1.0 - sigma) / draws)
            if p < sigma - 3.0 * se:
                failures.append({"case": f"{kind}-{rep}", "probability": p, "needed": sigma - 3.0 * se})
    for rep in range(2):
        cases += 1
        p = _mc_los_case(rng, draws, params)
        se = math.sqrt(params.sigma_los * (1.0 - params.sigma_los) / draws)
        if p < params.sigma_los - 3.0 * se:
            failures.append({"case": f"los-{rep}", "probability": p, "needed": params.sigma_los - 3.0 * se})
    return cases, failures


def _centralized_reference(beliefs, obstacles, params, u_nom, alphas, tree, mvces):
    graph_rows = []
    n = len(beliefs)
    for i in range(n):
        for j in range(i + 1, n):
            if float(np.linalg.norm(beliefs[i].mean - beliefs[j].mean)) <= params.r_c:
                graph_rows.extend(prsbc_pair_rows(i, beliefs[i], j, beliefs[j], params))
        graph_rows.extend(prsbc_obstacle_rows(i, beliefs[i], obstacles, params))
    for i, j in tree:
        graph_rows.extend(prcbc_distance_rows(i, beliefs[i], j, beliefs[j], params))
        graph_rows.extend(
            prlos_cbc_rows(i, beliefs[i], j, beliefs[j], obstacles, params, mvce=mvces.get((i, j)))
        )
    nominal = {i: u_nom[i] for i in range(n)}
    return solve(QpProblem(nominal, tuple(prune_rows(tuple(graph_rows), alphas)), norm_bounds=alphas))


def _suite_consensus():
    params = CertificateParams()
    rng = np.random.default_rng(55002)
    failures = []
    cases = 0
    for case in range(5):
        n = int(rng.integers(3, 7))
        base = np.cumsum(rng.uniform(0.45, 0.6, size=n))
        pts = np.stack([base, rng.uniform(-0.05, 0.05, size=n)], axis=1)
        cov = 1e-6 * np.eye(2)
        beliefs = [GaussianBelief(p, cov) for p in pts]
        u_nom = [rng.uniform(-1.0, 1.0, size=2) for _ in range(n)]
        alphas = {i: 2.0 for i in range(n)}
        cases += 1
        try:
            res = run_decentralized_period(beliefs, [], params, u_nom, alphas=alphas)
        except ProtocolError as exc:
            failures.append({"case": case, "reason": str(exc)})
            continue
        ref = _centralized_reference(beliefs, [], params, u_nom, alphas, res.tree.edges, {})
        if ref.status != "optimal":
            failures.append({"case": case, "reason": f"reference {ref.status}"})
            continue
        for i in range(n):
            tol = 1e-2 * (1.0 + float(np.linalg.norm(u_nom[i])))
            if float(np.linalg.norm(res.controls[i] - ref.controls[i])) > tol:
                failures.append({"case": case, "robot": i, "reason": "controls differ"})
                break
    return cases, failures


def _suite_invariance():
    params = CertificateParams()
    failures = []
    zero = np.zeros((2, 2))
    pos = [np.array([0.0, 0.0]), np.array([0.6, 0.0])]
    obstacle = SphereObstacle(np.array([0.3, 0.45]), 0.15)
    nominals = [
        (np.array([1.5, 0.0]), np.array([-1.5, 0.0])),  # head-on crush
        (np.array([-2.0, 0.0]), np.array([2.0, 0.0])),  # stretch apart
        (np.array([0.0, 1.2]), np.array([0.0, -1.2])),  # shear / rotate
    ]
    dt_hold, substeps = 0.02, 20
    alphas = {0: 2.0, 1: 2.0}
    for case, (na, nb) in enumerate(nominals):
        x = [pos[0].copy(), pos[1].copy()]
        worst_dist = math.inf
        worst_h = math.inf
        for _ in range(250):  # 5 s of piecewise-held controls
            beliefs = [GaussianBelief(x[0], zero), GaussianBelief(x[1], zero)]
            rows = prsbc_pair_rows(0, beliefs[0], 1, beliefs[1], params)
            rows += prsbc_obstacle_rows(0, beliefs[0], [obstacle], params)
            rows += prsbc_obstacle_rows(1, beliefs[1], [obstacle], params)
            rows += prcbc_distance_rows(0, beliefs[0], 1, beliefs[1], params)
            rows += prlos_cbc_rows(0, beliefs[0], 1, beliefs[1], [obstacle], params)
            sol = solve(QpProblem({0: na, 1: nb}, tuple(rows), norm_bounds=alphas))
            if sol.status != "optimal":
                failures.append({"case": case, "reason": f"filter {sol.status}"})
                break
            for _ in range(substeps):
                x[0] = x[0] + (dt_hold / substeps) * sol.controls[0]
                x[1] = x[1] + (dt_hold / substeps) * sol.controls[1]
                worst_dist = min(worst_dist, float(np.linalg.norm(x[0] - x[1])))
                ell = pair_los_ellipsoid(
                    GaussianBelief(x[0], zero), GaussianBelief(x[1], zero), params
                )
                v = obstacle.center - ell.center
                worst_h = min(worst_h, float(v @ ell.shape @ v) - 1.0)
        else:
            if worst_dist < params.r_s - 1e-3:
                failures.append({"case": case, "reason": f"distance dipped to {worst_dist:.6f}"})
            if worst_h < -1e-3:
                failures.append({"case": case, "reason": f"clearance dipped to {worst_h:.6f}"})
    return len(nominals), failures


def cmd_validate(args):
    suites = {
        "mst": _suite_mst,
        "chance": _suite_chance,
        "consensus": _suite_consensus,
        "invariance": _suite_invariance,
    }
    cases, failures = suites[args.suite]()
    report = {"suite": args.suite, "cases": cases, "failures": failures}
    print(json.dumps(report, indent=2))
    return 0 if not failures else 1


# --- graph / weights ----------------------------------------------------------


def _first_observation(scenario):
    rng = np.random.SeedSequence(entropy=scenario.seed, spawn_key=(0,))
    return observe(list(scenario.robots), scenario.noise_cov, rng)


def _loaded_weighted_graph(scenario):
    from .sim import _nominal_controls  # same nominal controls as the simulator

    beliefs = _first_observation(scenario)
    polys = [ob for ob in scenario.obstacles if not isinstance(ob, SphereObstacle)]
    obstacles = [ob for ob in scenario.obstacles if isinstance(ob, SphereObstacle)]
    obstacles += discretize_obstacles(polys, scenario.params.r_obs, 0.6 * scenario.params.r_obs)
    sub = [r.subgroup for r in scenario.robots]
    graph = build_los_graph(beliefs, obstacles, scenario.params.r_c, subgroup=sub)
    groups = {}
    for i, r in enumerate(scenario.robots):
        groups.setdefault(r.subgroup, []).append(i)
    u_nom = _nominal_controls(scenario, beliefs, groups)
    weighted = build_weighted_graph(
        graph, beliefs, obstacles, scenario.params, u_nom, beta=scenario.beta,
        norm_bounds={i: scenario.alpha for i in range(graph.n)},
    )
    return beliefs, graph, weighted, u_nom, obstacles


def cmd_graph(args):
    scenario, _ = load_scenario(args.config, args.seed)
    beliefs, graph, weighted, _, _ = _loaded_weighted_graph(scenario)
    payload = {
        "robots": graph.n,
        "subgroup": list(graph.subgroup) if graph.subgroup is not None else None,
        "edges": [
            {"i": i, "j": j, "weight": weighted.weights[(i, j)], "intra": graph.is_intra(i, j)}
            for i, j in graph.edges
            if (i, j) in weighted.weights
        ],
        "dropped": [list(e) for e in weighted.dropped],
    }
    text = json.dumps(payload, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


def cmd_weights(args):
    scenario, _ = load_scenario(args.config, args.seed)
    beliefs, graph, weighted, u_nom, _ = _loaded_weighted_graph(scenario)
    lines = ["i,j,intra,w_d,w_los,w_prime"]
    for i, j in graph.edges:
        if (i, j) not in weighted.weights:
            continue
        intra = graph.is_intra(i, j)
        w_prime = weighted.weights[(i, j)]
        # recompute the drift part without obstacles to split the sum
        bare = edge_weight(
            i, beliefs[i], j, beliefs[j], [], scenario.params,
            u_nom[i], u_nom[j], intra=False, beta=scenario.beta,
        )
        w_d = -bare
        w_total = -w_prime / scenario.beta if intra else -w_prime
        lines.append(
            f"{i},{j},{int(intra)},{w_d!r},{(w_total - w_d)!r},{w_prime!r}"
        )
    text = "\n".join(lines)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


# --- entry point ---------------------------------------------------------------


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="losnet",
        description="Connectivity-maintaining control under positional noise",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="simulate a scenario config")
    run_p.add_argument("--config", required=True)
    run_p.add_argument("--out", required=True)
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument("--steps", type=int, default=None)
    run_p.add_argument("--mode", choices=["decentralized", "centralized", "both"], default=None)
    run_p.set_defaults(func=cmd_run)

    val_p = sub.add_parser("validate", help="run a built-in check suite")
    val_p.add_argument("suite", choices=["mst", "chance", "consensus", "invariance"])
    val_p.set_defaults(func=cmd_validate)

    graph_p = sub.add_parser("graph", help="dump the initial weighted LOS graph")
    graph_p.add_argument("--config", required=True)
    graph_p.add_argument("--out", default=None)
    graph_p.add_argument("--seed", type=int, default=None)
    graph_p.set_defaults(func=cmd_graph)

    weights_p = sub.add_parser("weights", help="per-edge weight components")
    weights_p.add_argument("--config", required=True)
    weights_p.add_argument("--out", default=None)
    weights_p.add_argument("--seed", type=int, default=None)
    weights_p.set_defaults(func=cmd_weights)
    return parser


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config-error: {exc}", file=sys.stderr)
        return 2
    except (SimulationError, ProtocolError, GraphError, CertificateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
