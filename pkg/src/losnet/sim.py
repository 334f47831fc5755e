"""Time-stepped multi-robot simulation.

Drives the full pipeline once per step: observe noisy positions, compute
nominal task controls per subgroup, filter them through the certificate
program (decentralized message-passing or the centralized reference path),
integrate the true states, and record ground-truth metrics.

The simulator is the only component with access to true positions; agents
see only the Gaussian estimates produced by :func:`observe`.
"""

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .certificates import (
    CertificateError,
    CertificateParams,
    prcbc_distance_rows,
    prlos_cbc_rows,
    prsbc_obstacle_rows,
    prsbc_pair_rows,
)
from .geometry import (
    GaussianBelief,
    SphereObstacle,
    discretize_obstacles,
    point_segment_distance,
)
from .graph import (
    GraphError,
    algebraic_los_connectivity,
    build_los_graph,
    build_weighted_graph,
    centralized_ulos_lct,
    check_subgroup_connected,
)
from .protocol import AdmmParams, ProtocolError, run_decentralized_period
from .qp import QpProblem, prune_rows, solve

__all__ = [
    "SimulationError",
    "RobotState",
    "Scenario",
    "MetricsRecord",
    "TrajectoryRecord",
    "SimulationResult",
    "nominal_rendezvous",
    "nominal_circle_formation",
    "observe",
    "integrate",
    "unicycle_command",
    "run_simulation",
    "write_trajectory_csv",
    "write_metrics_csv",
    "write_trees_jsonl",
]

SINGLE_INTEGRATOR_MODE = "single_integrator"
UNICYCLE_MODE = "unicycle"
UNICYCLE_OFFSET = 0.05


class SimulationError(RuntimeError):
    """A scenario cannot be run (or a step cannot produce controls)."""


def _point(p, name):
    v = np.asarray(p, dtype=float)
    if v.shape != (2,) or not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must be a finite 2-vector, got {p!r}")
    return v


@dataclass(frozen=True)
class RobotState:
    """One robot of a scenario.

    ``goal`` is the task site: the rendezvous target, or the circle center
    when ``formation_slot`` is set.  ``formation_slot`` is ``(angle,
    radius)`` on that circle.  ``heading`` only matters under unicycle
    dynamics, where ``true_pos`` is the controlled offset point.
    """

    true_pos: np.ndarray
    subgroup: int
    goal: np.ndarray
    formation_slot: tuple = None
    heading: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "true_pos", _point(self.true_pos, "true_pos"))
        object.__setattr__(self, "goal", _point(self.goal, "goal"))
        object.__setattr__(self, "subgroup", int(self.subgroup))
        if not math.isfinite(float(self.heading)):
            raise ValueError("heading must be finite")
        object.__setattr__(self, "heading", float(self.heading))
        if self.formation_slot is not None:
            angle, radius = self.formation_slot
            if not (math.isfinite(float(angle)) and float(radius) > 0.0):
                raise ValueError(f"formation_slot must be (finite angle, radius > 0), got {self.formation_slot!r}")
            object.__setattr__(self, "formation_slot", (float(angle), float(radius)))

    @property
    def target(self):
        """Point the robot's task steers it toward."""
        if self.formation_slot is None:
            return self.goal
        angle, radius = self.formation_slot
        return self.goal + radius * np.array([math.cos(angle), math.sin(angle)])


@dataclass(frozen=True)
class Scenario:
    """Complete, validated description of one simulation run."""

    robots: tuple
    obstacles: tuple
    params: CertificateParams
    noise_cov: tuple
    dt: float = 0.02
    steps: int = 100
    seed: int = 0
    mode: str = "decentralized"
    beta: float = 1000.0
    rho: float = 1.0
    alpha: float = 1.0
    admm_tol: float = 1e-4
    admm_max_inner: int = 500
    dynamics: str = SINGLE_INTEGRATOR_MODE
    k_r: float = 0.5
    k_g: float = 1.0
    k: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "robots", tuple(self.robots))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        if not self.robots:
            raise ValueError("scenario needs at least one robot")
        covs = []
        for c in self.noise_cov:
            m = np.asarray(c, dtype=float)
            if m.shape != (2, 2) or not np.allclose(m, m.T):
                raise ValueError("noise covariances must be symmetric 2x2 matrices")
            if np.linalg.eigvalsh(m)[0] < -1e-12:
                raise ValueError("noise covariances must be positive semidefinite")
            covs.append(m)
        if len(covs) != len(self.robots):
            raise ValueError(
                f"need one noise covariance per robot, got {len(covs)} for {len(self.robots)} robots"
            )
        object.__setattr__(self, "noise_cov", tuple(covs))
        if not (math.isfinite(self.dt) and self.dt > 0.0):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if int(self.steps) < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        object.__setattr__(self, "steps", int(self.steps))
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must fit in 64 bits, got {self.seed}")
        object.__setattr__(self, "seed", int(self.seed))
        if self.mode not in ("decentralized", "centralized"):
            raise ValueError(f"mode must be decentralized or centralized, got {self.mode!r}")
        if self.dynamics not in (SINGLE_INTEGRATOR_MODE, UNICYCLE_MODE):
            raise ValueError(f"unknown dynamics {self.dynamics!r}")
        for name in ("beta", "rho", "alpha", "admm_tol", "k_r", "k_g", "k", "dt"):
            v = float(getattr(self, name))
            if not (math.isfinite(v) and v > 0.0):
                raise ValueError(f"{name} must be positive, got {v}")
        if int(self.admm_max_inner) < 1:
            raise ValueError("admm_max_inner must be >= 1")
        # each subgroup runs a single task: one shared goal, and either every
        # member has a formation slot or none does
        groups = {}
        for r in self.robots:
            groups.setdefault(r.subgroup, []).append(r)
        for sid, members in groups.items():
            slotted = [r.formation_slot is not None for r in members]
            if any(slotted) and not all(slotted):
                raise ValueError(f"subgroup {sid} mixes formation and rendezvous robots")
            for r in members[1:]:
                if not np.allclose(r.goal, members[0].goal):
                    raise ValueError(f"subgroup {sid} robots disagree on the goal")


@dataclass(frozen=True)
class TrajectoryRecord:
    """State and controls of one robot at one step (pre-integration pose)."""

    step: int
    robot: int
    true_pos: np.ndarray
    obs_pos: np.ndarray
    u: np.ndarray
    u_nom: np.ndarray


@dataclass(frozen=True)
class MetricsRecord:
    """Ground-truth metrics recorded after integrating one step."""

    step: int
    min_robot_dist: float
    min_obs_dist: float
    lambda2: float
    avg_dist_to_target: float
    avg_perturbation: float
    admm_iters: int
    step_ms: float


@dataclass(frozen=True)
class SimulationResult:
    trajectory: tuple
    metrics: tuple
    trees: tuple
    events: tuple


def _clip_norm(u, alpha):
    if alpha is None:
        return u
    nrm = float(np.linalg.norm(u))
    if nrm <= alpha:
        return u
    return u * (alpha / nrm)


def nominal_rendezvous(positions, goal, k_r=0.5, k_g=1.0, alpha=None):
    """Gather the subgroup while biasing it toward the task site.

    Parameters
    ----------
    positions : sequence of position estimates for the subgroup's robots.
    goal : shared task site.
    k_r, k_g : gathering and goal gains (positive).
    alpha : optional norm bound the outputs are clipped to.

    Returns
    -------
    list of control vectors, one per input position.
    """
    if k_r <= 0.0 or k_g <= 0.0:
        raise ValueError("gains must be positive")
    pts = np.asarray(positions, dtype=float)
    goal = np.asarray(goal, dtype=float)
    centroid = pts.mean(axis=0)
    return [
        _clip_norm(-k_r * (p - centroid) - k_g * (p - goal), alpha) for p in pts
    ]


def nominal_circle_formation(positions, center, radius, k=1.0, alpha=None, angles=None):
    """Steer each robot onto its slot of a circle.

    Slots default to angles equally spaced by position index; explicit
    ``angles`` override the spacing (one per robot).
    """
    if k <= 0.0:
        raise ValueError("gain must be positive")
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    pts = np.asarray(positions, dtype=float)
    center = np.asarray(center, dtype=float)
    m = pts.shape[0]
    if angles is None:
        angles = [2.0 * math.pi * idx / m for idx in range(m)]
    if len(angles) != m:
        raise ValueError(f"need one slot angle per robot, got {len(angles)} for {m}")
    out = []
    for p, ang in zip(pts, angles):
        slot = center + radius * np.array([math.cos(ang), math.sin(ang)])
        out.append(_clip_norm(-k * (p - slot), alpha))
    return out


def observe(states, noise_cov, rng):
    """Draw one noisy position estimate per robot.

    ``rng`` is a :class:`numpy.random.SeedSequence`; each robot samples from
    an independent child keyed by its index, so per-robot evaluation order
    (or parallelism) cannot change the draws.
    """
    beliefs = []
    for idx, st in enumerate(states):
        child = np.random.SeedSequence(
            entropy=rng.entropy, spawn_key=tuple(rng.spawn_key) + (idx,)
        )
        gen = np.random.default_rng(child)
        cov = np.asarray(noise_cov[idx], dtype=float)
        w, vecs = np.linalg.eigh(cov)
        root = vecs * np.sqrt(np.clip(w, 0.0, None))
        pos = st.true_pos if isinstance(st, RobotState) else np.asarray(st, dtype=float)
        beliefs.append(GaussianBelief(pos + root @ gen.standard_normal(2), cov))
    return beliefs


def unicycle_command(heading, u, offset=UNICYCLE_OFFSET):
    """Forward/angular speeds that make the offset point track ``u``.

    The point sitting ``offset`` ahead of the wheel axis moves with velocity
    R(heading) @ (v, offset*omega); inverting that rotation gives commands
    under which the offset point follows the planar velocity ``u`` exactly.
    """
    c, s = math.cos(heading), math.sin(heading)
    v = c * u[0] + s * u[1]
    omega = (-s * u[0] + c * u[1]) / offset
    return v, omega


def integrate(state, u, dt, dynamics=SINGLE_INTEGRATOR_MODE):
    """Advance one true state by explicit Euler.

    Single-integrator states are plain positions.  Unicycle states are
    ``(x, y, heading)`` where ``(x, y)`` is the controlled offset point;
    the update converts ``u`` to wheel commands, steps the wheel pose, and
    reports the new offset point.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    state = np.asarray(state, dtype=float)
    u = np.asarray(u, dtype=float)
    if dynamics == SINGLE_INTEGRATOR_MODE:
        if state.shape != (2,):
            raise ValueError("single-integrator state is a 2-vector")
        return state + dt * u
    if dynamics == UNICYCLE_MODE:
        if state.shape != (3,):
            raise ValueError("unicycle state is (x, y, heading)")
        theta = state[2]
        v, omega = unicycle_command(theta, u)
        head = np.array([math.cos(theta), math.sin(theta)])
        wheel = state[:2] - UNICYCLE_OFFSET * head
        wheel = wheel + dt * v * head
        theta2 = theta + dt * omega
        point = wheel + UNICYCLE_OFFSET * np.array([math.cos(theta2), math.sin(theta2)])
        return np.array([point[0], point[1], theta2])
    raise ValueError(f"unknown dynamics {dynamics!r}")


def _point_in_poly(p, vertices):
    # even-odd ray cast along +x
    inside = False
    n = vertices.shape[0]
    for k in range(n):
        a, b = vertices[k], vertices[(k + 1) % n]
        if (a[1] > p[1]) != (b[1] > p[1]):
            t = (p[1] - a[1]) / (b[1] - a[1])
            if p[0] < a[0] + t * (b[0] - a[0]):
                inside = not inside
    return inside


def _obstacle_distance(p, obstacle):
    """Signed distance: negative inside the obstacle."""
    if isinstance(obstacle, SphereObstacle):
        return float(np.linalg.norm(p - obstacle.center)) - obstacle.radius
    verts = obstacle.vertices
    d = min(
        point_segment_distance(p, verts[k], verts[(k + 1) % verts.shape[0]])
        for k in range(verts.shape[0])
    )
    return -d if _point_in_poly(p, verts) else d


def _min_pair_distance(positions):
    n = len(positions)
    if n < 2:
        return math.inf
    return min(
        float(np.linalg.norm(positions[i] - positions[j]))
        for i in range(n)
        for j in range(i + 1, n)
    )


def _nominal_controls(scenario, beliefs, groups):
    alpha = scenario.alpha
    u_nom = [None] * len(scenario.robots)
    for members in groups.values():
        positions = [beliefs[i].mean for i in members]
        first = scenario.robots[members[0]]
        if first.formation_slot is None:
            controls = nominal_rendezvous(
                positions, first.goal, scenario.k_r, scenario.k_g, alpha
            )
        else:
            angles = [scenario.robots[i].formation_slot[0] for i in members]
            controls = nominal_circle_formation(
                positions,
                first.goal,
                first.formation_slot[1],
                scenario.k,
                alpha,
                angles=angles,
            )
        for i, u in zip(members, controls):
            u_nom[i] = u
    return u_nom


def _centralized_period(beliefs, obstacles, params, u_nom, alphas, sub_ids, beta):
    """Reference path: global graph, Kruskal tree, one joint program."""
    graph = build_los_graph(beliefs, obstacles, params.r_c, subgroup=sub_ids)
    try:
        weighted = build_weighted_graph(
            graph, beliefs, obstacles, params, u_nom, beta=beta, norm_bounds=alphas
        )
        tree = centralized_ulos_lct(weighted)
    except GraphError as exc:
        raise SimulationError(str(exc)) from exc
    rows = []
    for i, j in graph.edges:
        rows.extend(prsbc_pair_rows(i, beliefs[i], j, beliefs[j], params))
    for i in range(len(beliefs)):
        rows.extend(prsbc_obstacle_rows(i, beliefs[i], obstacles, params))
    for i, j in tree.edges:
        rows.extend(prcbc_distance_rows(i, beliefs[i], j, beliefs[j], params))
        rows.extend(
            prlos_cbc_rows(
                i, beliefs[i], j, beliefs[j], obstacles, params,
                mvce=weighted.mvce.get((i, j)),
            )
        )
    rows = prune_rows(tuple(rows), alphas)
    nominal = {i: u_nom[i] for i in range(len(beliefs))}
    sol = solve(QpProblem(nominal, tuple(rows), norm_bounds=alphas))
    if sol.status != "optimal":
        raise SimulationError(f"joint control program is {sol.status}")
    return sol.controls, tree.edges, 0


def run_simulation(scenario):
    """Run a scenario to completion.

    Returns a :class:`SimulationResult`; per-step certificate or protocol
    failures do not abort the run — the step applies zero control and the
    failure is recorded in ``events`` with its step index.

    Raises
    ------
    SimulationError
        If the initial true-position LOS graph is not globally and
        per-subgroup connected.
    """
    n = len(scenario.robots)
    params = scenario.params
    # the certificate and graph layers reason about sphere obstacles only;
    # polygons keep their exact shape for the ground-truth distance metric
    # and are covered by boundary spheres for everything else
    polys = [ob for ob in scenario.obstacles if not isinstance(ob, SphereObstacle)]
    obstacles = [ob for ob in scenario.obstacles if isinstance(ob, SphereObstacle)]
    obstacles += discretize_obstacles(polys, params.r_obs, 0.6 * params.r_obs)
    sub_ids = [r.subgroup for r in scenario.robots]
    groups = {}
    for i, r in enumerate(scenario.robots):
        groups.setdefault(r.subgroup, []).append(i)

    start = [GaussianBelief(r.true_pos, np.zeros((2, 2))) for r in scenario.robots]
    graph0 = build_los_graph(start, obstacles, params.r_c, subgroup=sub_ids)
    per_group, whole = check_subgroup_connected(graph0)
    if not whole:
        raise SimulationError("initial LOS graph is not globally connected")
    bad = sorted(sid for sid, ok in per_group.items() if not ok)
    if bad:
        raise SimulationError(f"initial LOS graph leaves subgroups disconnected: {bad}")

    admm = AdmmParams(
        rho=scenario.rho, tol=scenario.admm_tol, max_inner=scenario.admm_max_inner
    )
    alphas = {i: scenario.alpha for i in range(n)}
    targets = [r.target for r in scenario.robots]
    robots = list(scenario.robots)

    trajectory = []
    metrics = []
    trees = []
    events = []
    for step in range(scenario.steps):
        t0 = time.perf_counter()
        rng = np.random.SeedSequence(entropy=scenario.seed, spawn_key=(step,))
        beliefs = observe(robots, scenario.noise_cov, rng)
        u_nom = _nominal_controls(scenario, beliefs, groups)

        try:
            if scenario.mode == "decentralized":
                res = run_decentralized_period(
                    beliefs,
                    obstacles,
                    params,
                    u_nom,
                    alphas=alphas,
                    subgroup=sub_ids,
                    beta=scenario.beta,
                    admm=admm,
                )
                controls = [res.controls[i] for i in range(n)]
                tree_edges, iters = res.tree.edges, res.admm_iterations
            else:
                ctrl, tree_edges, iters = _centralized_period(
                    beliefs, obstacles, params, u_nom, alphas, sub_ids, scenario.beta
                )
                controls = [ctrl[i] for i in range(n)]
        except (ProtocolError, CertificateError, GraphError, SimulationError) as exc:
            events.append((step, f"{type(exc).__name__}: {exc}"))
            controls = [np.zeros(2) for _ in range(n)]
            tree_edges, iters = (), 0

        for i in range(n):
            trajectory.append(
                TrajectoryRecord(
                    step, i, robots[i].true_pos.copy(), beliefs[i].mean.copy(),
                    np.asarray(controls[i], dtype=float), u_nom[i].copy(),
                )
            )
        trees.append(tuple(tree_edges))

        for i in range(n):
            if scenario.dynamics == UNICYCLE_MODE:
                state = np.array([*robots[i].true_pos, robots[i].heading])
                state = integrate(state, controls[i], scenario.dt, UNICYCLE_MODE)
                robots[i] = replace(robots[i], true_pos=state[:2], heading=state[2])
            else:
                pos = integrate(robots[i].true_pos, controls[i], scenario.dt)
                robots[i] = replace(robots[i], true_pos=pos)

        positions = [r.true_pos for r in robots]
        true_graph = build_los_graph(
            [GaussianBelief(p, np.zeros((2, 2))) for p in positions],
            obstacles,
            params.r_c,
        )
        min_obs = min(
            (_obstacle_distance(p, ob) for p in positions for ob in scenario.obstacles),
            default=math.inf,
        )
        perturbation = float(
            np.mean([np.sum((np.asarray(controls[i]) - u_nom[i]) ** 2) for i in range(n)])
        )
        metrics.append(
            MetricsRecord(
                step,
                _min_pair_distance(positions),
                min_obs,
                algebraic_los_connectivity(true_graph),
                float(np.mean([np.linalg.norm(positions[i] - targets[i]) for i in range(n)])),
                perturbation,
                int(iters),
                (time.perf_counter() - t0) * 1000.0,
            )
        )

    return SimulationResult(tuple(trajectory), tuple(metrics), tuple(trees), tuple(events))


def write_trajectory_csv(path, trajectory):
    with open(path, "w") as fh:
        fh.write("step,robot,true_x,true_y,obs_x,obs_y,u_x,u_y,unom_x,unom_y\n")
        for r in trajectory:
            cells = [str(r.step), str(r.robot)] + [
                repr(float(v))
                for v in (*r.true_pos, *r.obs_pos, *r.u, *r.u_nom)
            ]
            fh.write(",".join(cells) + "\n")


def write_metrics_csv(path, metrics):
    with open(path, "w") as fh:
        fh.write(
            "step,min_robot_dist,min_obs_dist,lambda2,avg_dist_to_target,"
            "avg_perturbation,admm_iters,step_ms\n"
        )
        for m in metrics:
            fh.write(
                ",".join(
                    [
                        str(m.step),
                        repr(float(m.min_robot_dist)),
                        repr(float(m.min_obs_dist)),
                        repr(float(m.lambda2)),
                        repr(float(m.avg_dist_to_target)),
                        repr(float(m.avg_perturbation)),
                        str(m.admm_iters),
                        repr(float(m.step_ms)),
                    ]
                )
                + "\n"
            )


def write_trees_jsonl(path, trees):
    import json

    with open(path, "w") as fh:
        for step, edges in enumerate(trees):
            fh.write(json.dumps({"step": step, "edges": [list(e) for e in edges]}) + "\n")
