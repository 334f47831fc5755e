"""Observed connectivity graphs and least-constraining spanning trees.

The graph over robot position estimates has an edge wherever two robots are
within communication range and no obstacle blocks the segment between their
estimated positions.  Each edge gets a weight measuring how little slack its
proximity and line-of-sight rows would leave the nominal controls; a
minimum-weight spanning tree of the negated slack then picks the edges that
constrain the swarm the least.  Intra-subgroup edges are scaled by ``beta``
so subgroups connect internally before bridging to each other.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .certificates import (
    SINGLE_INTEGRATOR,
    CertificateError,
    _pair_quantile_shift,
    pair_los_ellipsoid,
    prcbc_distance_rows,
    prlos_cbc_rows,
    prsbc_pair_rows,
)
from .geometry import segment_occluded
from .qp import QpProblem, solve as solve_qp

__all__ = [
    "GraphError",
    "LosGraph",
    "WeightedLosGraph",
    "SpanningTree",
    "build_los_graph",
    "edge_weight",
    "pair_rows_feasible",
    "build_weighted_graph",
    "centralized_ulos_lct",
    "algebraic_los_connectivity",
    "check_subgroup_connected",
]


class GraphError(RuntimeError):
    """The observed graph cannot support the requested structure."""


def _check_edges(n, edges):
    seen = set()
    clean = []
    for i, j in edges:
        i, j = int(i), int(j)
        if not (0 <= i < j < n):
            raise ValueError(f"edge ({i}, {j}) is not ascending within {n} robots")
        if (i, j) in seen:
            raise ValueError(f"duplicate edge ({i}, {j})")
        seen.add((i, j))
        clean.append((i, j))
    return clean


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[max(ra, rb)] = min(ra, rb)
        return True


def _components(n, edges):
    uf = _UnionFind(n)
    for i, j in edges:
        uf.union(i, j)
    groups = {}
    for v in range(n):
        groups.setdefault(uf.find(v), []).append(v)
    return sorted(groups.values())


@dataclass(frozen=True)
class LosGraph:
    """Undirected graph on robots 0..n-1 with ascending edge tuples and an
    optional subgroup id per robot."""

    n: int
    edges: tuple
    subgroup: tuple = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("need at least one robot")
        object.__setattr__(self, "edges", tuple(_check_edges(self.n, self.edges)))
        if self.subgroup is not None:
            sg = tuple(int(s) for s in self.subgroup)
            if len(sg) != self.n:
                raise ValueError("subgroup list must assign every robot")
            object.__setattr__(self, "subgroup", sg)

    def neighbors(self, v):
        out = []
        for i, j in self.edges:
            if i == v:
                out.append(j)
            elif j == v:
                out.append(i)
        return sorted(out)

    def is_intra(self, i, j):
        return self.subgroup is None or self.subgroup[i] == self.subgroup[j]


@dataclass(frozen=True)
class WeightedLosGraph:
    """A LosGraph with the spanning-tree weight of each usable edge.

    Edges whose pair ellipsoid already contains an obstacle center (no
    certifiable line of sight) or whose own certificate rows contradict each
    other within the control bounds are kept out of ``weights`` and listed
    in ``dropped``; ``mvce`` caches each usable edge's covering ellipsoid
    for reuse when the rows are assembled.
    """

    graph: LosGraph
    weights: dict
    beta: float
    mvce: dict = field(default_factory=dict)
    dropped: tuple = ()

    def __post_init__(self):
        edge_set = set(self.graph.edges)
        for e in self.weights:
            if e not in edge_set:
                raise ValueError(f"weight for unknown edge {e}")
        for e in self.dropped:
            if tuple(e) not in edge_set:
                raise ValueError(f"dropped edge {e} not in graph")


@dataclass(frozen=True)
class SpanningTree:
    """Exactly n-1 ascending edges connecting all n robots."""

    n: int
    edges: tuple

    def __post_init__(self):
        edges = _check_edges(self.n, self.edges)
        if len(edges) != self.n - 1:
            raise ValueError(f"{len(edges)} edges cannot span {self.n} robots")
        uf = _UnionFind(self.n)
        for i, j in edges:
            if not uf.union(i, j):
                raise ValueError(f"edge ({i}, {j}) closes a cycle")
        object.__setattr__(self, "edges", tuple(sorted(edges)))

    def as_dict(self):
        return {"n": self.n, "edges": [list(e) for e in self.edges]}


def build_los_graph(beliefs, obstacles, r_c, subgroup=None):
    """Graph on the position estimates: an edge joins robots within ``r_c``
    whose connecting segment clears every obstacle."""
    n = len(beliefs)
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            a, b = beliefs[i].mean, beliefs[j].mean
            if float(np.linalg.norm(a - b)) > r_c:
                continue
            if segment_occluded(a, b, obstacles):
                continue
            edges.append((i, j))
    return LosGraph(n, tuple(edges), None if subgroup is None else tuple(subgroup))


def _row_slack(row, controls):
    return -row.violation(controls)


def edge_weight(
    i,
    belief_i,
    j,
    belief_j,
    obstacles,
    params,
    u_nom_i,
    u_nom_j,
    intra=True,
    beta=1000.0,
    dyn=SINGLE_INTEGRATOR,
    aggregate="drift",
    mvce=None,
):
    """Spanning-tree weight of the edge (i, j) given the nominal controls.

    The weight combines a proximity term and the mean line-of-sight-row
    slack, negated and scaled by ``beta`` for intra-subgroup edges, so lower
    weight means the edge leaves the nominal controls more freedom.  The
    proximity term is, per ``aggregate``:

    - "drift": the barrier drift gamma*(r_c^2 - |e|^2) - 2 e . d/dt(x_i-x_j)
      at the quantile-adjusted separation e (the +/- row pairs of the
      proximity certificate have constant slack sum, so this scalar form is
      what actually discriminates between edges);
    - "min": the smallest slack among the proximity rows.

    The computation canonicalizes the pair order, so both endpoints derive
    bit-identical weights.
    """
    if i == j:
        raise ValueError("edge weight needs two distinct robots")
    if i > j:
        i, j, belief_i, belief_j = j, i, belief_j, belief_i
        u_nom_i, u_nom_j = u_nom_j, u_nom_i
    if aggregate not in ("drift", "min"):
        raise ValueError(f"unknown aggregate {aggregate!r}")
    controls = {i: np.asarray(u_nom_i, dtype=float), j: np.asarray(u_nom_j, dtype=float)}
    if aggregate == "min":
        crows = prcbc_distance_rows(i, belief_i, j, belief_j, params, dyn)
        w_d = min(_row_slack(r, controls) for r in crows)
    else:
        e = belief_i.mean - belief_j.mean + _pair_quantile_shift(
            belief_i.cov + belief_j.cov, params.sigma_c
        )
        rel_vel = (
            dyn.input_at(belief_i.mean) @ controls[i]
            + dyn.drift_at(belief_i.mean)
            - dyn.input_at(belief_j.mean) @ controls[j]
            - dyn.drift_at(belief_j.mean)
        )
        w_d = params.gamma * (params.r_c**2 - float(e @ e)) - 2.0 * float(e @ rel_vel)
    lrows = prlos_cbc_rows(i, belief_i, j, belief_j, obstacles, params, dyn, mvce=mvce)
    w_los = 0.0
    if lrows:
        w_los = sum(_row_slack(r, controls) for r in lrows) / len(lrows)
    w = w_d + w_los
    return -beta * w if intra else -w


def pair_rows_feasible(
    i, belief_i, j, belief_j, obstacles, params, bound_i, bound_j,
    dyn=SINGLE_INTEGRATOR, mvce=None,
):
    """Whether some joint control within the two norm bounds satisfies every
    certificate row the pair generates on its own.

    Around the communication radius the proximity row can demand an approach
    that the separation row forbids: the quantile shift moves the two
    certified distances apart by twice its size, so a pair whose observed
    difference is positive along the canonical order can be squeezed between
    them with no control escaping the squeeze.  Such an edge cannot be held
    for a period without violating a certificate, so tree selection treats
    it like an occluded edge rather than handing the joint program a
    contradiction.

    Rows with nonnegative offsets are satisfied by zero control, so the
    two-robot program is only solved when some row demands motion.
    """
    if i > j:
        i, j, belief_i, belief_j = j, i, belief_j, belief_i
        bound_i, bound_j = bound_j, bound_i
    rows = list(prsbc_pair_rows(i, belief_i, j, belief_j, params, dyn))
    rows.extend(prcbc_distance_rows(i, belief_i, j, belief_j, params, dyn))
    rows.extend(
        prlos_cbc_rows(i, belief_i, j, belief_j, obstacles, params, dyn, mvce=mvce)
    )
    if all(row.rhs >= 0.0 for row in rows):
        return True
    m = dyn.input_at(belief_i.mean).shape[1]
    nominal = {i: np.zeros(m), j: np.zeros(m)}
    sol = solve_qp(
        QpProblem(nominal, tuple(rows), norm_bounds={i: bound_i, j: bound_j})
    )
    return sol.status == "optimal"


def build_weighted_graph(
    graph,
    beliefs,
    obstacles,
    params,
    u_nom,
    beta=1000.0,
    dyn=SINGLE_INTEGRATOR,
    aggregate="drift",
    norm_bounds=None,
):
    """Weight every edge of ``graph``, dropping edges that cannot certify
    line of sight.

    When ``norm_bounds`` maps both endpoints of an edge to control bounds,
    edges whose own certificate rows admit no bounded joint control are
    dropped as well (see pair_rows_feasible).

    Warns when subgroups are present but the ``beta`` scaling fails to put
    every intra-subgroup weight below every inter-subgroup weight.
    """
    weights = {}
    mvces = {}
    dropped = []
    for i, j in graph.edges:
        try:
            mvce = pair_los_ellipsoid(beliefs[i], beliefs[j], params)
            w = edge_weight(
                i,
                beliefs[i],
                j,
                beliefs[j],
                obstacles,
                params,
                u_nom[i],
                u_nom[j],
                intra=graph.is_intra(i, j),
                beta=beta,
                dyn=dyn,
                aggregate=aggregate,
                mvce=mvce,
            )
        except CertificateError:
            dropped.append((i, j))
            continue
        if norm_bounds is not None:
            bi, bj = norm_bounds.get(i), norm_bounds.get(j)
            if (
                bi is not None
                and bj is not None
                and not pair_rows_feasible(
                    i, beliefs[i], j, beliefs[j], obstacles, params,
                    bi, bj, dyn=dyn, mvce=mvce,
                )
            ):
                dropped.append((i, j))
                continue
        weights[(i, j)] = w
        mvces[(i, j)] = mvce
    if graph.subgroup is not None:
        intra = [w for e, w in weights.items() if graph.is_intra(*e)]
        inter = [w for e, w in weights.items() if not graph.is_intra(*e)]
        if intra and inter and max(intra) >= min(inter):
            warnings.warn(
                "beta scaling does not separate intra- from inter-subgroup "
                "weights; the tree may bridge subgroups early",
                RuntimeWarning,
                stacklevel=2,
            )
    return WeightedLosGraph(graph, weights, beta, mvces, tuple(dropped))


def centralized_ulos_lct(wg):
    """Minimum-weight spanning tree over the usable edges (Kruskal with
    lexicographic tie-breaking).

    Raises GraphError listing the components when the usable edges do not
    connect all robots.
    """
    n = wg.graph.n
    uf = _UnionFind(n)
    chosen = []
    for (i, j), _ in sorted(wg.weights.items(), key=lambda kv: (kv[1], kv[0])):
        if uf.union(i, j):
            chosen.append((i, j))
            if len(chosen) == n - 1:
                break
    if len(chosen) != n - 1:
        comps = _components(n, chosen)
        raise GraphError(
            f"usable edges leave {len(comps)} components: "
            + "; ".join(str(c) for c in comps)
        )
    return SpanningTree(n, tuple(chosen))


def algebraic_los_connectivity(graph):
    """Second-smallest Laplacian eigenvalue of the observed graph (infinite
    for a single robot, zero when disconnected)."""
    n = graph.n
    if n == 1:
        return math.inf
    lap = np.zeros((n, n))
    for i, j in graph.edges:
        lap[i, i] += 1.0
        lap[j, j] += 1.0
        lap[i, j] -= 1.0
        lap[j, i] -= 1.0
    return float(np.linalg.eigvalsh(lap)[1])


def check_subgroup_connected(graph):
    """Whether each subgroup's induced subgraph is connected, plus whether
    the whole graph is.

    Returns ({subgroup_id: bool}, global_bool); with no subgroups the dict
    has a single entry for group 0 covering all robots.
    """
    subgroup = graph.subgroup if graph.subgroup is not None else (0,) * graph.n
    result = {}
    for sid in sorted(set(subgroup)):
        members = [v for v in range(graph.n) if subgroup[v] == sid]
        inner = [(i, j) for i, j in graph.edges if subgroup[i] == sid and subgroup[j] == sid]
        uf = _UnionFind(graph.n)
        for i, j in inner:
            uf.union(i, j)
        root = uf.find(members[0])
        result[sid] = all(uf.find(v) == root for v in members)
    whole = len(_components(graph.n, graph.edges)) == 1
    return result, whole
