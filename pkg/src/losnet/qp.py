"""Minimally invasive control correction.

Solves the quadratic program

    minimize    sum_k w_k ||u_k - unom_k||^2
    subject to  every constraint row,  ||u_k|| <= alpha_k

by projection onto the row polyhedron in weight-scaled coordinates.  Norm
bounds are expressed as tangent rows of a regular polygon (planar controls)
or a coordinate box (otherwise), so the whole problem stays a linear-
inequality projection and is solved with a small active-set iteration.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from .certificates import ConstraintRow

__all__ = ["QpProblem", "QpSolution", "norm_ball_rows", "prune_rows", "solve"]


@dataclass
class QpProblem:
    """Controls to correct, the rows to respect, and optional weights/bounds.

    ``quad_weights`` scales each robot's deviation penalty (default 1).
    ``norm_bounds`` adds a 2-norm style control bound per robot, realized as
    ``sides`` tangent rows for planar controls.
    """

    nominal: dict
    rows: list
    quad_weights: dict = field(default_factory=dict)
    norm_bounds: dict = field(default_factory=dict)
    sides: int = 16

    def __post_init__(self):
        self.nominal = {int(k): np.asarray(v, dtype=float) for k, v in self.nominal.items()}
        if not self.nominal:
            raise ValueError("need at least one robot")
        dims = {v.size for v in self.nominal.values()}
        if len(dims) != 1:
            raise ValueError(f"mixed control dimensions {sorted(dims)}")
        dim = dims.pop()
        for row in self.rows:
            for rid, vec in row.coeffs.items():
                if rid not in self.nominal:
                    raise ValueError(f"row references unknown robot {rid}")
                if vec.size != dim:
                    raise ValueError(
                        f"row block for robot {rid} has dimension {vec.size}, expected {dim}"
                    )
        for rid, w in self.quad_weights.items():
            if not (math.isfinite(w) and w > 0.0):
                raise ValueError(f"quad weight for robot {rid} must be positive")
        for rid, a in self.norm_bounds.items():
            if rid not in self.nominal:
                raise ValueError(f"norm bound for unknown robot {rid}")
            if not (math.isfinite(a) and a > 0.0):
                raise ValueError(f"norm bound for robot {rid} must be positive")

    @property
    def robots(self):
        return sorted(self.nominal)

    @property
    def control_dim(self):
        return next(iter(self.nominal.values())).size


@dataclass
class QpSolution:
    """Corrected controls plus solve diagnostics.

    ``multipliers`` aligns with the problem's rows (bound rows excluded);
    ``kkt_residual`` is the worst violation among stationarity, primal
    feasibility and complementarity in the original variable scale.
    """

    controls: dict
    status: str
    iterations: int
    objective: float
    kkt_residual: float
    multipliers: np.ndarray


def norm_ball_rows(robot, alpha, q=2, sides=None):
    """Rows bounding robot's control norm by ``alpha``.

    Planar controls (q == 2) get ``sides`` tangent rows of the circle, a
    polygon that contains the true ball with worst-case overshoot
    1/cos(pi/sides).  Other dimensions fall back to per-coordinate bounds;
    requesting ``sides`` there is an error.
    """
    if not (math.isfinite(alpha) and alpha > 0.0):
        raise ValueError(f"alpha must be positive, got {alpha}")
    if q == 2:
        k = 16 if sides is None else int(sides)
        if k < 3:
            raise ValueError("need at least 3 tangent rows")
        rows = []
        for t in range(k):
            th = 2.0 * math.pi * t / k
            rows.append(
                ConstraintRow({robot: [math.cos(th), math.sin(th)]}, alpha, "ControlBound")
            )
        return rows
    if sides is not None:
        raise ValueError("sides is only meaningful for planar controls")
    rows = []
    for axis in range(q):
        e = np.zeros(q)
        e[axis] = 1.0
        rows.append(ConstraintRow({robot: e}, alpha, "ControlBound"))
        rows.append(ConstraintRow({robot: -e}, alpha, "ControlBound"))
    return rows


def prune_rows(rows, norm_bounds, sides=16):
    """Drop rows that no control inside the bounds can make active.

    The polygon realization of a bound admits norms up to
    alpha / cos(pi/sides), so a row is prunable only when its slack exceeds
    the corresponding worst case.  Rows touching a robot without a bound are
    always kept.
    """
    stretch = 1.0 / math.cos(math.pi / max(int(sides), 3))
    kept = []
    for row in rows:
        reach = 0.0
        for rid, vec in row.coeffs.items():
            alpha = norm_bounds.get(rid)
            if alpha is None:
                reach = math.inf
                break
            reach += float(np.linalg.norm(vec)) * alpha * stretch
        if row.rhs - reach > 0.0:
            continue
        kept.append(row)
    return kept


def _stack_rows(problem, offsets, n):
    rows = list(problem.rows)
    n_user = len(rows)
    for rid, alpha in sorted(problem.norm_bounds.items()):
        if problem.control_dim == 2:
            rows.extend(norm_ball_rows(rid, alpha, 2, problem.sides))
        else:
            rows.extend(norm_ball_rows(rid, alpha, problem.control_dim))
    a = np.zeros((len(rows), n))
    b = np.empty(len(rows))
    for r, row in enumerate(rows):
        for rid, vec in row.coeffs.items():
            a[r, offsets[rid] : offsets[rid] + vec.size] = vec
        b[r] = row.rhs
    return a, b, n_user


def solve(problem, tol=1e-9, max_iter=10000):
    """Project the nominal controls onto the feasible polyhedron.

    The projection is reduced to a least-distance program and solved through
    its nonnegative least-squares dual: stacking the normalized rows as
    columns of E = [-A^T; -b^T] and minimizing ||E mu - e_last|| over mu >= 0
    yields either a zero residual (a certificate that the rows are
    contradictory, status "infeasible") or the projection
    v = -r[:n] / r[n] together with the row multipliers.  ``tol`` is the
    infeasibility threshold on the residual's last coordinate;
    QpSolution.iterations reports the size of the final active set.
    """
    robots = problem.robots
    q = problem.control_dim
    offsets = {rid: k * q for k, rid in enumerate(robots)}
    n = len(robots) * q
    unom = np.concatenate([problem.nominal[rid] for rid in robots])
    w = np.ones(n)
    for rid, wk in problem.quad_weights.items():
        w[offsets[rid] : offsets[rid] + q] = wk
    sw = np.sqrt(w)

    a_raw, b_raw, n_user = _stack_rows(problem, offsets, n)
    m = a_raw.shape[0]
    mult = np.zeros(n_user)

    def finish(v, status, iters, nu_all):
        u = unom + v / sw
        controls = {rid: u[offsets[rid] : offsets[rid] + q].copy() for rid in robots}
        obj = float(np.sum(w * (u - unom) ** 2))
        if m:
            resid_p = float(np.max(a_raw @ u - b_raw, initial=0.0))
            stat = 2.0 * w * (u - unom) + a_raw.T @ nu_all
            comp = float(np.max(np.abs(nu_all * (a_raw @ u - b_raw)), initial=0.0))
            kkt = max(max(resid_p, 0.0), float(np.max(np.abs(stat))), comp)
        else:
            kkt = float(np.max(np.abs(2.0 * w * (u - unom))))
        mult[:] = nu_all[:n_user] if m else 0.0
        return QpSolution(controls, status, iters, obj, kkt, mult.copy())

    if m == 0:
        return finish(np.zeros(n), "optimal", 0, np.zeros(0))

    # weight-scaled, row-normalized system: abar v <= bbar with v = sw*(u-unom)
    abar = a_raw / sw
    bbar = b_raw - a_raw @ unom
    norms = np.linalg.norm(abar, axis=1)
    degenerate = norms <= 1e-14
    if np.any(degenerate & (bbar < -1e-9)):
        return finish(np.zeros(n), "infeasible", 0, np.zeros(m))
    keep = ~degenerate
    idx = np.flatnonzero(keep)
    if idx.size == 0:
        return finish(np.zeros(n), "optimal", 0, np.zeros(m))
    abar = abar[keep] / norms[keep, None]
    bbar = bbar[keep] / norms[keep]

    e = np.concatenate([-abar.T, -bbar[None, :]], axis=0)
    f = np.zeros(n + 1)
    f[-1] = 1.0
    try:
        mu_nnls, _ = nnls(e, f, maxiter=max(max_iter, 10 * idx.size))
    except RuntimeError:
        return finish(np.zeros(n), "max_iter", max_iter, np.zeros(m))
    r = e @ mu_nnls - f
    active = int(np.count_nonzero(mu_nnls > 0.0))
    if r[-1] >= -tol:
        return finish(np.zeros(n), "infeasible", active, np.zeros(m))
    v = -r[:n] / r[-1]
    nu_all = np.zeros(m)
    nu_all[idx] = np.maximum(mu_nnls * (-2.0 / r[-1]), 0.0) / norms[idx]
    return finish(v, "optimal", active, nu_all)
