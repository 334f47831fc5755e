"""Decentralized tree construction interleaved with consensus control.

Robots exchange messages only along current line-of-sight links.  Each
control period they

1. share position estimates and nominal controls with their neighbors,
2. grow a spanning tree by fragment merging: every fragment floods the
   minimum-weight outgoing edge among its members, the chosen endpoints
   link up, and the enlarged edge set is flooded back out, and
3. after each merge wave run a consensus pass in which tree neighbors hold
   copies of each other's controls, solve small local control corrections,
   and exchange copies/averages with scaled dual updates until the copies
   agree.

The pass on the completed tree yields each robot's control.  The engine is
round-synchronous and fully deterministic: messages are delivered sorted by
(sender, recipient) and every send is checked against the line-of-sight
neighborhood, so the trace doubles as a locality proof.
"""

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .certificates import (
    SINGLE_INTEGRATOR,
    CertificateError,
    ConstraintRow,
    pair_los_ellipsoid,
    prcbc_distance_rows,
    prlos_cbc_rows,
    prsbc_obstacle_rows,
    prsbc_pair_rows,
)
from .graph import (
    LosGraph,
    SpanningTree,
    WeightedLosGraph,
    build_los_graph,
    edge_weight,
    pair_rows_feasible,
)
from .qp import QpProblem, solve

__all__ = [
    "ProtocolError",
    "AdmmParams",
    "PeriodResult",
    "elect_leader",
    "select_mwoe",
    "assemble_local_rows",
    "build_tree_decentralized",
    "run_decentralized_period",
]


class ProtocolError(RuntimeError):
    """The decentralized period could not be completed."""


@dataclass(frozen=True)
class AdmmParams:
    """Consensus-iteration knobs.

    ``objective_weighting="normalized"`` divides each robot's deviation term
    by the number of local problems holding a copy of it, so the consensus
    optimum matches the single-program optimum; "literal" keeps unit weights.
    ``average_includes_self=False`` averages only the neighbors' copies of a
    control; that variant leaves a leaf's single copy-holder without any
    dual pressure, so the including form is the default.
    """

    rho: float = 1.0
    tol: float = 1e-4
    max_inner: int = 500
    objective_weighting: str = "normalized"
    average_includes_self: bool = True
    sides: int = 16

    def __post_init__(self):
        if not (math.isfinite(self.rho) and self.rho > 0.0):
            raise ValueError("rho must be positive")
        if not (math.isfinite(self.tol) and self.tol > 0.0):
            raise ValueError("tol must be positive")
        if self.max_inner < 1:
            raise ValueError("max_inner must be at least 1")
        if self.objective_weighting not in ("normalized", "literal"):
            raise ValueError(f"unknown objective weighting {self.objective_weighting!r}")


@dataclass
class PeriodResult:
    """Outcome of one decentralized control period."""

    controls: dict
    tree: SpanningTree
    graph: LosGraph
    weighted: WeightedLosGraph
    admm_iterations: int
    max_residual: float
    row_counts: dict
    trace: tuple


def elect_leader(members):
    """Deterministic leader of a fragment: its smallest robot id."""
    members = list(members)
    if not members:
        raise ValueError("cannot elect a leader from no members")
    return min(int(m) for m in members)


def select_mwoe(fragment, weights):
    """Minimum-weight edge leaving ``fragment``, by (weight, i, j) order.

    Returns None when no usable edge leaves the fragment.
    """
    fragment = set(fragment)
    best = None
    for (i, j), w in weights.items():
        if (i in fragment) == (j in fragment):
            continue
        key = (w, i, j)
        if best is None or key < best:
            best = key
    return None if best is None else (best[1], best[2])


def assemble_local_rows(
    i,
    beliefs,
    los_neighbors,
    tree_neighbors,
    obstacles,
    params,
    dyn=SINGLE_INTEGRATOR,
    mvce=None,
):
    """Certificate rows robot ``i`` enforces in its local problem.

    Separation rows against tree neighbors stay joint (both controls are
    local consensus variables); against other visible robots the row's
    right-hand side is split in half and only this robot's block is kept, so
    the two endpoints jointly imply the pair condition without sharing
    variables.  Proximity and line-of-sight rows are built for tree edges
    only.  ``mvce`` optionally maps ascending edge tuples to precomputed
    covering ellipsoids.
    """
    tree_neighbors = set(tree_neighbors)
    mvce = mvce or {}
    rows = []
    for j in sorted(los_neighbors):
        pair = prsbc_pair_rows(i, beliefs[i], j, beliefs[j], params, dyn)[0]
        if j in tree_neighbors:
            rows.append(pair)
        else:
            rows.append(ConstraintRow({i: pair.coeffs[i]}, 0.5 * pair.rhs, pair.tag))
    rows.extend(prsbc_obstacle_rows(i, beliefs[i], obstacles, params, dyn))
    for j in sorted(tree_neighbors):
        rows.extend(prcbc_distance_rows(i, beliefs[i], j, beliefs[j], params, dyn))
        edge = (min(i, j), max(i, j))
        rows.extend(
            prlos_cbc_rows(
                i, beliefs[i], j, beliefs[j], obstacles, params, dyn, mvce=mvce.get(edge)
            )
        )
    return rows


class _Net:
    """Synchronous message rounds with locality checking and tracing."""

    def __init__(self, neighbors):
        self.neighbors = neighbors
        self.round_no = 0
        self.trace = []

    def exchange(self, kind, outbox):
        """Deliver {sender: [(recipient, payload), ...]}; returns
        {recipient: [(sender, payload), ...]} sorted by sender."""
        self.round_no += 1
        flat = []
        for sender in sorted(outbox):
            for recipient, payload in outbox[sender]:
                if recipient not in self.neighbors[sender]:
                    raise ProtocolError(
                        f"robot {sender} cannot reach {recipient} without line of sight"
                    )
                flat.append((sender, recipient, payload))
        flat.sort(key=lambda m: (m[0], m[1]))
        inbox = {}
        for sender, recipient, payload in flat:
            digest = hashlib.md5(repr(payload).encode()).hexdigest()[:10]
            self.trace.append(f"{self.round_no:04d} {kind} {sender:02d}->{recipient:02d} {digest}")
            inbox.setdefault(recipient, []).append((sender, payload))
        return inbox


def _fragment_of(i, n, edges):
    """Members of i's component in (n, edges)."""
    adj = {v: [] for v in range(n)}
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    seen = {i}
    stack = [i]
    while stack:
        for w in adj[stack.pop()]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return seen


class _TreeState:
    """Per-robot view of the growing tree."""

    def __init__(self, i, n):
        self.i = i
        self.n = n
        self.ad = set()
        self.leader = i

    def fragment(self):
        return _fragment_of(self.i, self.n, self.ad)

    def tree_neighbors(self):
        return sorted(j if i == self.i else i for i, j in self.ad if self.i in (i, j))

    def spanning(self):
        return len(self.fragment()) == self.n


def _mwoe_phase(net, states, neighbors, weights):
    """Each fragment agrees on its minimum-weight outgoing edge."""
    n = len(states)
    best = {}
    frag = {i: states[i].fragment() for i in range(n)}
    for i in range(n):
        cand = None
        for j in neighbors[i]:
            e = (min(i, j), max(i, j))
            w = weights.get(e)
            if w is None or j in frag[i]:
                continue
            key = (w, e[0], e[1])
            if cand is None or key < cand:
                cand = key
        best[i] = cand
    for _ in range(n):
        outbox = {}
        for i in range(n):
            payload = ("none",) if best[i] is None else best[i]
            outbox[i] = [(j, payload) for j in states[i].tree_neighbors()]
        inbox = net.exchange("mwoe", outbox)
        for i, received in inbox.items():
            for _, payload in received:
                if payload == ("none",):
                    continue
                if best[i] is None or payload < best[i]:
                    best[i] = payload
    return {i: (None if best[i] is None else (best[i][1], best[i][2])) for i in range(n)}


def _connect_phase(net, states, mwoe):
    """Endpoints of each fragment's chosen edge link up; everyone adds the
    edges they learn about."""
    n = len(states)
    outbox = {i: [] for i in range(n)}
    for i in range(n):
        e = mwoe[i]
        if e is not None and i in e:
            other = e[0] if e[1] == i else e[1]
            outbox[i].append((other, e))
    inbox = net.exchange("connect", outbox)
    for i in range(n):
        new = set()
        if mwoe[i] is not None:
            new.add(mwoe[i])
        for _, payload in inbox.get(i, []):
            new.add((int(payload[0]), int(payload[1])))
        states[i].ad |= new


def _ad_flood_phase(net, states, neighbors):
    """Flood known tree edges (with the local leader) to every neighbor."""
    n = len(states)
    for _ in range(n):
        outbox = {}
        for i in range(n):
            edges = tuple(sorted(states[i].ad))
            payload = (states[i].leader, edges)
            outbox[i] = [(j, payload) for j in neighbors[i]]
        inbox = net.exchange("ad", outbox)
        for i in range(n):
            for _, (_, edges) in inbox.get(i, []):
                states[i].ad |= {(int(a), int(b)) for a, b in edges}
            states[i].leader = elect_leader(states[i].fragment())


class _Consensus:
    """Per-robot consensus state: own control plus copies of tree
    neighbors' controls, with scaled duals and running averages."""

    def __init__(self, i, u_nom):
        self.i = i
        self.u_nom = u_nom
        self.copies = {i: u_nom[i].copy()}
        self.eta = {i: np.zeros_like(u_nom[i])}
        self.ubar = {i: u_nom[i].copy()}
        self.rows = []
        self.residual = math.inf

    def ensure_vars(self, tree_neighbors):
        for j in tree_neighbors:
            if j not in self.copies:
                self.copies[j] = self.u_nom[j].copy()
                self.eta[j] = np.zeros_like(self.u_nom[j])
                self.ubar[j] = self.u_nom[j].copy()


def _admm_phase(net, agents, states, alphas, admm, tol, cap, degree):
    """Run consensus iterations until copies agree to ``tol``.

    The stopping test uses the maximum residual across robots, which the
    synchronous harness can read off directly; a deployment would flood the
    local residuals the same way the tree edges are flooded.
    """
    n = len(agents)
    rho = admm.rho
    iters = 0
    worst = math.inf
    for _ in range(cap):
        iters += 1
        for i in range(n):
            ag = agents[i]
            nominal = {}
            quad = {}
            for v in sorted(ag.copies):
                w = 1.0 if admm.objective_weighting == "literal" else 1.0 / (1.0 + degree[v])
                nominal[v] = (2.0 * w * ag.u_nom[v] + rho * ag.ubar[v] - ag.eta[v]) / (
                    2.0 * w + rho
                )
                quad[v] = w + 0.5 * rho
            bounds = {v: alphas[v] for v in nominal if alphas.get(v) is not None}
            problem = QpProblem(nominal, ag.rows, quad_weights=quad, norm_bounds=bounds,
                                sides=admm.sides)
            sol = solve(problem)
            if sol.status != "optimal":
                raise ProtocolError(
                    f"robot {i} local correction ended {sol.status} "
                    f"(iteration {iters})"
                )
            for v in sol.controls:
                ag.copies[v] = sol.controls[v]
        # copies travel to their owners
        outbox = {}
        for i in range(n):
            outbox[i] = [
                (j, (j, *map(float, agents[i].copies[j])))
                for j in states[i].tree_neighbors()
            ]
        inbox = net.exchange("admm_copy", outbox)
        # owners average and broadcast
        averages = {}
        for i in range(n):
            got = [np.array(p[1:]) for _, p in inbox.get(i, []) if p[0] == i]
            if admm.average_includes_self or not got:
                got.append(agents[i].copies[i])
            averages[i] = sum(got) / len(got)
        outbox = {}
        for i in range(n):
            outbox[i] = [
                (j, (i, *map(float, averages[i])))
                for j in states[i].tree_neighbors()
            ]
        inbox = net.exchange("admm_avg", outbox)
        for i in range(n):
            ag = agents[i]
            ag.ubar[i] = averages[i]
            for _, payload in inbox.get(i, []):
                v = int(payload[0])
                if v in ag.copies:
                    ag.ubar[v] = np.array(payload[1:])
            gap = 0.0
            for v in ag.copies:
                diff = ag.copies[v] - ag.ubar[v]
                ag.eta[v] = ag.eta[v] + rho * diff
                gap += float(diff @ diff)
            ag.residual = math.sqrt(gap)
        worst = max(agents[i].residual for i in range(n))
        if worst <= tol:
            break
    return iters, worst


def build_tree_decentralized(wg, trace=None):
    """Grow the minimum-weight spanning tree by message-passing alone.

    Runs the fragment-merge waves of the full period over the weighted
    graph's usable edges and returns the resulting tree; ``trace``, if given,
    receives the message log.  Raises ProtocolError when the usable edges
    cannot connect all robots.
    """
    graph = wg.graph
    n = graph.n
    neighbors = {i: set(graph.neighbors(i)) for i in range(n)}
    net = _Net(neighbors)
    states = [_TreeState(i, n) for i in range(n)]
    for _ in range(n):
        if states[0].spanning() and all(s.spanning() for s in states):
            break
        mwoe = _mwoe_phase(net, states, neighbors, wg.weights)
        if all(m is None for m in mwoe.values()) and not states[0].spanning():
            break
        _connect_phase(net, states, mwoe)
        _ad_flood_phase(net, states, neighbors)
    if trace is not None:
        trace.extend(net.trace)
    if not states[0].spanning():
        frags = sorted({tuple(sorted(s.fragment())) for s in states})
        raise ProtocolError(
            "usable edges leave fragments: " + "; ".join(str(list(f)) for f in frags)
        )
    return SpanningTree(n, tuple(sorted(states[0].ad)))


def run_decentralized_period(
    beliefs,
    obstacles,
    params,
    u_nom,
    alphas=None,
    subgroup=None,
    dyn=SINGLE_INTEGRATOR,
    beta=1000.0,
    aggregate="drift",
    admm=AdmmParams(),
):
    """One full decentralized control period.

    Builds the observed graph, weights its edges, grows the spanning tree
    wave by wave with a consensus pass after each wave (construction passes
    run at a relaxed tolerance; the final pass on the completed tree uses
    the full tolerance), and returns the agreed controls along with the
    tree, diagnostics and the message trace.
    """
    n = len(beliefs)
    u_nom = {i: np.asarray(u_nom[i], dtype=float) for i in range(n)}
    alphas = dict(alphas or {})
    graph = build_los_graph(beliefs, obstacles, params.r_c, subgroup)
    neighbors = {i: set(graph.neighbors(i)) for i in range(n)}

    weights = {}
    mvces = {}
    dropped = []
    for i, j in graph.edges:
        try:
            ell = pair_los_ellipsoid(beliefs[i], beliefs[j], params)
            w = edge_weight(
                i, beliefs[i], j, beliefs[j], obstacles, params,
                u_nom[i], u_nom[j], intra=graph.is_intra(i, j), beta=beta,
                dyn=dyn, aggregate=aggregate, mvce=ell,
            )
        except CertificateError:
            dropped.append((i, j))
            continue
        bi, bj = alphas.get(i), alphas.get(j)
        if (
            bi is not None
            and bj is not None
            and not pair_rows_feasible(
                i, beliefs[i], j, beliefs[j], obstacles, params,
                bi, bj, dyn=dyn, mvce=ell,
            )
        ):
            # both endpoints reach the same verdict from shared data, so the
            # edge silently leaves every robot's candidate set
            dropped.append((i, j))
            continue
        weights[(i, j)] = w
        mvces[(i, j)] = ell
    weighted = WeightedLosGraph(graph, weights, beta, mvces, tuple(dropped))

    net = _Net(neighbors)
    # state exchange: estimates, nominal controls, subgroup, degree
    outbox = {}
    for i in range(n):
        payload = (
            tuple(map(float, beliefs[i].mean)),
            tuple(map(float, beliefs[i].cov.ravel())),
            tuple(map(float, u_nom[i])),
            -1 if graph.subgroup is None else graph.subgroup[i],
            len(neighbors[i]),
        )
        outbox[i] = [(j, payload) for j in sorted(neighbors[i])]
    net.exchange("info", outbox)

    states = [_TreeState(i, n) for i in range(n)]
    agents = [_Consensus(i, u_nom) for i in range(n)]
    beliefs_by_id = {i: beliefs[i] for i in range(n)}

    def refresh(i):
        states_i = states[i]
        tree_nb = states_i.tree_neighbors()
        agents[i].ensure_vars(tree_nb)
        agents[i].rows = assemble_local_rows(
            i, beliefs_by_id, sorted(neighbors[i]), tree_nb, obstacles, params,
            dyn, mvce=mvces,
        )

    def degrees():
        deg = dict.fromkeys(range(n), 0)
        for a, b in states[0].ad:
            deg[a] += 1
            deg[b] += 1
        return deg

    total_iters = 0
    worst = 0.0
    for i in range(n):
        refresh(i)
    for _ in range(n):
        if states[0].spanning():
            break
        mwoe = _mwoe_phase(net, states, neighbors, weights)
        if all(m is None for m in mwoe.values()):
            break
        _connect_phase(net, states, mwoe)
        _ad_flood_phase(net, states, neighbors)
        for i in range(n):
            refresh(i)
        it, worst = _admm_phase(
            net, agents, states, alphas, admm,
            tol=10.0 * admm.tol, cap=min(100, admm.max_inner), degree=degrees(),
        )
        total_iters += it
    if not states[0].spanning():
        frags = sorted({tuple(sorted(s.fragment())) for s in states})
        raise ProtocolError(
            "observed graph cannot be spanned: " + "; ".join(str(list(f)) for f in frags)
        )
    it, worst = _admm_phase(
        net, agents, states, alphas, admm,
        tol=admm.tol, cap=admm.max_inner, degree=degrees(),
    )
    total_iters += it

    tree = SpanningTree(n, tuple(sorted(states[0].ad)))
    controls = {i: agents[i].copies[i].copy() for i in range(n)}
    counts = {}
    for i in range(n):
        for row in agents[i].rows:
            counts[row.tag] = counts.get(row.tag, 0) + 1
    return PeriodResult(
        controls, tree, graph, weighted, total_iters, worst, counts, tuple(net.trace)
    )
