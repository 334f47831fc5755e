"""Linear control constraints that keep pairwise state conditions invariant
with configurable probability under Gaussian position noise.

Three families of conditions are maintained, each through rows of the form
``sum_k a_k^T u_k <= b`` over robot controls:

- pair / obstacle separation (distance at least ``r_s`` / ``r_obs``),
- pair proximity (distance at most ``r_c``),
- line-of-sight clearance (obstacle centers outside a covering ellipsoid of
  the pair's position uncertainty).

Noise enters through one-dimensional Gaussian quantiles applied per
coordinate of the relative position estimate; the barrier condition
``dh/dt >= -gamma * h`` is then imposed on the confidence-adjusted h.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .geometry import confidence_ellipsoid, fixed_center_mvce

__all__ = [
    "CertificateError",
    "DynamicsSpec",
    "CertificateParams",
    "ConstraintRow",
    "prsbc_pair_rows",
    "prsbc_obstacle_rows",
    "prcbc_distance_rows",
    "prlos_cbc_rows",
    "pair_los_ellipsoid",
    "sigma_los_for_graph",
]


class CertificateError(RuntimeError):
    """A certificate cannot be formed for the current observed state."""


@dataclass(frozen=True)
class DynamicsSpec:
    """Control-affine single-robot dynamics xdot = drift(x) + input_map(x) u.

    ``drift=None`` means zero drift and ``input_map=None`` means identity,
    which together give the default single-integrator model.
    """

    state_dim: int = 2
    control_dim: int = 2
    drift: object = None
    input_map: object = None

    def drift_at(self, x):
        if self.drift is None:
            return np.zeros(self.state_dim)
        return np.asarray(self.drift(x), dtype=float)

    def input_at(self, x):
        if self.input_map is None:
            return np.eye(self.state_dim, self.control_dim)
        return np.asarray(self.input_map(x), dtype=float)


SINGLE_INTEGRATOR = DynamicsSpec()


@dataclass(frozen=True)
class CertificateParams:
    """Radii, per-family confidence levels and the barrier gain."""

    r_s: float = 0.2
    r_obs: float = 0.2
    r_c: float = 0.8
    sigma_s: float = 0.9
    sigma_obs: float = 0.9
    sigma_c: float = 0.9
    sigma_los: float = 0.99
    gamma: float = 1.0

    def __post_init__(self):
        for name in ("r_s", "r_obs", "r_c", "gamma"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0.0):
                raise ValueError(f"{name} must be positive, got {v}")
        for name in ("sigma_s", "sigma_obs", "sigma_c", "sigma_los"):
            v = getattr(self, name)
            if not (0.0 < v < 1.0):
                raise ValueError(f"{name} must be in (0, 1), got {v}")
        if self.r_c <= self.r_s:
            raise ValueError(
                f"r_c ({self.r_c}) must exceed r_s ({self.r_s}); "
                "otherwise no pair can be both safe and in range"
            )


@dataclass(eq=False)
class ConstraintRow:
    """One linear inequality sum_k coeffs[k] . u_k <= rhs over robot controls.

    ``tag`` names the condition family; ``members`` (sorted robot ids) is a
    convenience view of which controls the row touches.
    """

    coeffs: dict
    rhs: float
    tag: str

    def __post_init__(self):
        clean = {}
        for rid, vec in self.coeffs.items():
            v = np.asarray(vec, dtype=float)
            if v.ndim != 1:
                raise ValueError(f"coefficient block for robot {rid} must be a vector")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"non-finite coefficients for robot {rid}")
            clean[int(rid)] = v
        if not math.isfinite(self.rhs):
            raise ValueError(f"non-finite rhs {self.rhs}")
        self.coeffs = clean
        self.rhs = float(self.rhs)

    @property
    def members(self):
        return sorted(self.coeffs)

    def violation(self, controls):
        """a^T u - rhs for controls given as {robot_id: vector} (positive
        means violated)."""
        s = 0.0
        for rid, vec in self.coeffs.items():
            s += float(vec @ np.asarray(controls[rid], dtype=float))
        return s - self.rhs


def _pair_quantile_shift(cov_sum, sigma):
    z = float(ndtri(0.5 * (1.0 + sigma)))
    return z * np.sqrt(np.clip(np.diag(cov_sum), 0.0, None))


def _shrunk_separation(delta, shift):
    """Move each coordinate of the relative estimate toward zero by its
    quantile shift, clamping at zero (the conservative direction for
    keep-apart conditions)."""
    return np.sign(delta) * np.maximum(np.abs(delta) - shift, 0.0)


def _separation_row(i, gi, fi, j, gj, fj, delta, shift, radius, gamma, tag):
    """Keep-apart row shared by the pair and obstacle families.

    ``j is None`` marks a static obstacle (no control block, no drift).
    Normally the row is built on the confidence-shrunk relative position.
    When the shrink collapses to a sliver (below a quarter of the protected
    radius) the coefficient vector vanishes while the right-hand side stays
    near ``-gamma * radius**2``, so the row would demand an unboundedly
    fast retreat that no admissible control can deliver; the confidence
    condition is already lost at that point, and the row falls back to a
    deterministic braking condition on the observed means (with a fixed
    arbitrary axis if even the means coincide).  At the 1/4 cut the shrunk
    row's demanded relative retreat speed is gamma*radius*15/8 — well
    inside the actuation budget of a unit-bounded pair, so several such
    rows can be honored at once in a crowd; letting the sliver shrink
    further makes the demand blow up like 1/|e| and a handful of
    simultaneous rows turn a dense scene jointly infeasible.
    """
    e = _shrunk_separation(delta, shift)
    if float(e @ e) <= (0.25 * radius) ** 2:
        if float(delta @ delta) > 1e-18:
            e = delta
        else:
            e = np.zeros_like(delta)
            e[0] = radius
    rhs = gamma * (float(e @ e) - radius * radius) + 2.0 * float(e @ (fi - fj))
    coeffs = {i: -2.0 * (gi.T @ e)}
    if j is not None:
        coeffs[j] = 2.0 * (gj.T @ e)
    return ConstraintRow(coeffs, rhs, tag)


def prsbc_pair_rows(i, belief_i, j, belief_j, params, dyn=SINGLE_INTEGRATOR):
    """Row keeping robots ``i`` and ``j`` at distance >= r_s with
    probability sigma_s.

    Returns a single row; it is identical whichever order the pair is given
    in.
    """
    if i == j:
        raise ValueError("pair rows need two distinct robots")
    if i > j:
        i, j, belief_i, belief_j = j, i, belief_j, belief_i
    delta = belief_i.mean - belief_j.mean
    shift = _pair_quantile_shift(belief_i.cov + belief_j.cov, params.sigma_s)
    gi = dyn.input_at(belief_i.mean)
    gj = dyn.input_at(belief_j.mean)
    fi = dyn.drift_at(belief_i.mean)
    fj = dyn.drift_at(belief_j.mean)
    return [
        _separation_row(i, gi, fi, j, gj, fj, delta, shift, params.r_s, params.gamma, "Safety")
    ]


def prsbc_obstacle_rows(i, belief_i, obstacles, params, dyn=SINGLE_INTEGRATOR):
    """Rows keeping robot ``i`` at distance >= r_obs from each obstacle
    center with probability sigma_obs (obstacle positions are exact)."""
    gi = dyn.input_at(belief_i.mean)
    fi = dyn.drift_at(belief_i.mean)
    shift = _pair_quantile_shift(belief_i.cov, params.sigma_obs)
    rows = []
    zero = np.zeros(dyn.state_dim)
    for obs in obstacles:
        delta = belief_i.mean - obs.center
        rows.append(
            _separation_row(
                i, gi, fi, None, None, zero, delta, shift, params.r_obs, params.gamma,
                "ObstacleSafety",
            )
        )
    return rows


def prcbc_distance_rows(i, belief_i, j, belief_j, params, dyn=SINGLE_INTEGRATOR):
    """Per-coordinate row pairs keeping robots ``i`` and ``j`` within r_c
    with probability sigma_c.

    Each coordinate of the relative estimate is replaced by its upper
    sigma_c-quantile e_l and the barrier condition is split into the +-
    directions, giving two rows per state dimension.  The pair is
    canonicalized to ascending ids so both endpoints derive identical rows.
    """
    if i == j:
        raise ValueError("distance rows need two distinct robots")
    if i > j:
        i, j, belief_i, belief_j = j, i, belief_j, belief_i
    delta = belief_i.mean - belief_j.mean
    shift = _pair_quantile_shift(belief_i.cov + belief_j.cov, params.sigma_c)
    e = delta + shift
    gi = dyn.input_at(belief_i.mean)
    gj = dyn.input_at(belief_j.mean)
    df = dyn.drift_at(belief_i.mean) - dyn.drift_at(belief_j.mean)
    gamma = params.gamma
    rc2 = params.r_c * params.r_c
    rows = []
    for axis in range(delta.size):
        el = float(e[axis])
        ai = 2.0 * el * gi[axis, :]
        aj = -2.0 * el * gj[axis, :]
        base = 2.0 * el * float(df[axis])
        rows.append(
            ConstraintRow(
                {i: ai, j: aj}, -gamma * el * el + gamma * rc2 - base, "CommDistance"
            )
        )
        rows.append(
            ConstraintRow(
                {i: -ai, j: -aj}, gamma * el * el + gamma * rc2 + base, "CommDistance"
            )
        )
    return rows


def pair_los_ellipsoid(belief_i, belief_j, params):
    """Covering ellipsoid of the pair's position uncertainty, centered at the
    observed midpoint.

    Each robot gets a sqrt(sigma_los) confidence ellipsoid so that both lie
    inside simultaneously with probability sigma_los; the fixed-center cover
    then contains the segment between any two such positions by convexity.
    """
    level = math.sqrt(params.sigma_los)
    ei = confidence_ellipsoid(belief_i, level)
    ej = confidence_ellipsoid(belief_j, level)
    center = 0.5 * (belief_i.mean + belief_j.mean)
    return fixed_center_mvce(ei, ej, center)


def prlos_cbc_rows(
    i, belief_i, j, belief_j, obstacles, params, dyn=SINGLE_INTEGRATOR, mvce=None
):
    """Rows keeping every obstacle center outside the pair's covering
    ellipsoid, which preserves the pair's line of sight with probability
    sigma_los.

    Raises CertificateError when an obstacle center is already inside the
    ellipsoid beyond tolerance (clearance h < -1e-6): line of sight can no
    longer be certified and the caller must not rely on this edge.
    """
    if i == j:
        raise ValueError("line-of-sight rows need two distinct robots")
    if i > j:
        i, j, belief_i, belief_j = j, i, belief_j, belief_i
    if mvce is None:
        mvce = pair_los_ellipsoid(belief_i, belief_j, params)
    center = mvce.center
    q = mvce.shape
    gi = dyn.input_at(belief_i.mean)
    gj = dyn.input_at(belief_j.mean)
    fsum = dyn.drift_at(belief_i.mean) + dyn.drift_at(belief_j.mean)
    rows = []
    for obs in obstacles:
        v = obs.center - center
        qv = q @ v
        h = float(v @ qv) - 1.0
        if h < -1e-6:
            raise CertificateError(
                f"obstacle at {obs.center} lies inside the pair ({i},{j}) "
                f"uncertainty ellipsoid (clearance {h:.3e})"
            )
        rhs = params.gamma * h - float(qv @ fsum)
        rows.append(
            ConstraintRow({i: gi.T @ qv, j: gj.T @ qv}, rhs, "LosOcclusion")
        )
    return rows


def sigma_los_for_graph(sigma_graph, n_robots):
    """Per-edge confidence so a spanning tree of ``n_robots`` keeps every
    edge's line of sight simultaneously with probability sigma_graph.

    A union bound over the n-1 tree edges gives
    sigma_los = 1 - (1 - sigma_graph) / (n_robots - 1).
    """
    if not isinstance(n_robots, (int, np.integer)) or n_robots < 2:
        raise ValueError(f"need an integer robot count >= 2, got {n_robots!r}")
    if not (0.0 < sigma_graph < 1.0):
        raise ValueError(f"sigma_graph must be in (0, 1), got {sigma_graph}")
    return 1.0 - (1.0 - sigma_graph) / (n_robots - 1)
