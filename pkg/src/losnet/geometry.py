"""Planar geometric primitives: obstacles, ellipsoids, and occlusion tests.

Positions are metric coordinates in R^d.  The shipped scenarios use d = 2;
the routines are dimension-generic unless a docstring says otherwise.  All
functions are pure.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

__all__ = [
    "SphereObstacle",
    "PolyObstacle",
    "Ellipsoid",
    "GaussianBelief",
    "discretize_obstacles",
    "confidence_ellipsoid",
    "fixed_center_mvce",
    "segment_occluded",
    "point_segment_distance",
    "ellipsoid_contains",
]


def _vector(p, name="point"):
    v = np.asarray(p, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError(f"{name} must be a 1-D coordinate vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} has non-finite entries: {v}")
    return v


def _symmetric_matrix(m, dim, name="matrix"):
    a = np.asarray(m, dtype=float)
    if a.shape != (dim, dim):
        raise ValueError(f"{name} must be {dim}x{dim}, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    if not np.allclose(a, a.T, atol=1e-9, rtol=1e-9):
        raise ValueError(f"{name} must be symmetric")
    return 0.5 * (a + a.T)


@dataclass(frozen=True, eq=False)
class SphereObstacle:
    """Solid sphere (disk in 2-D) with a strictly positive radius."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", _vector(self.center, "center"))
        r = float(self.radius)
        if not (math.isfinite(r) and r > 0.0):
            raise ValueError(f"radius must be positive and finite, got {r}")
        object.__setattr__(self, "radius", r)


@dataclass(frozen=True, eq=False)
class PolyObstacle:
    """Simple polygon given by its vertices in order (2-D only).

    The polygon must enclose a nonzero area; degenerate chains are rejected
    because their boundary cannot be discretized meaningfully.
    """

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[0] < 3 or v.shape[1] != 2:
            raise ValueError(
                f"vertices must be an (k>=3, 2) array, got shape {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("vertices contain non-finite entries")
        x, y = v[:, 0], v[:, 1]
        area = 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
        if area <= 1e-12:
            raise ValueError(f"polygon encloses no area (shoelace area {area:g})")
        object.__setattr__(self, "vertices", v)


@dataclass(frozen=True, eq=False)
class Ellipsoid:
    """Set {x : (x - center)^T shape (x - center) <= 1} with shape > 0."""

    center: np.ndarray
    shape: np.ndarray

    def __post_init__(self):
        c = _vector(self.center, "center")
        s = _symmetric_matrix(self.shape, c.size, "shape")
        eigs = np.linalg.eigvalsh(s)
        if eigs[0] <= 0.0:
            raise ValueError(f"shape matrix must be positive definite, min eig {eigs[0]:g}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "shape", s)


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    """Gaussian position estimate: observed mean and noise covariance."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        m = _vector(self.mean, "mean")
        c = _symmetric_matrix(self.cov, m.size, "cov")
        eigs = np.linalg.eigvalsh(c)
        if eigs[0] < -1e-12:
            raise ValueError(f"covariance must be positive semidefinite, min eig {eigs[0]:g}")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "cov", c)


def discretize_obstacles(polys, spacing, radius):
    """Cover polygon boundaries with spheres placed along each edge.

    Parameters
    ----------
    polys : iterable of PolyObstacle
    spacing : float
        Maximum arc-length gap between consecutive sphere centers on an edge.
    radius : float
        Radius given to every generated sphere.

    Returns
    -------
    list of SphereObstacle
        Centers walk each closed boundary from vertex to vertex; every edge
        contributes ceil(len/spacing) evenly spaced centers starting at the
        edge's first vertex, so vertices are always covered and no two
        consecutive centers are farther apart than ``spacing``.
    """
    if not (math.isfinite(spacing) and spacing > 0.0):
        raise ValueError(f"spacing must be positive, got {spacing}")
    if not (math.isfinite(radius) and radius > 0.0):
        raise ValueError(f"radius must be positive, got {radius}")
    spheres = []
    for poly in polys:
        verts = poly.vertices
        k = verts.shape[0]
        for a in range(k):
            p = verts[a]
            q = verts[(a + 1) % k]
            length = float(np.linalg.norm(q - p))
            if length <= 1e-12:
                # Repeated vertex; the point itself is still covered below.
                spheres.append(SphereObstacle(p.copy(), radius))
                continue
            m = max(1, int(math.ceil(length / spacing - 1e-9)))
            for t in range(m):
                spheres.append(SphereObstacle(p + (t / m) * (q - p), radius))
    return spheres


def confidence_ellipsoid(belief, prob):
    """Smallest centered ellipsoid containing the belief with given probability.

    Parameters
    ----------
    belief : GaussianBelief
    prob : float
        Coverage probability, strictly inside (0, 1).

    Returns
    -------
    Ellipsoid
        Centered at the belief mean with shape cov^{-1} / r2 where r2 is the
        chi-square quantile of ``prob`` with d degrees of freedom.  A singular
        covariance is regularized by adding 1e-12 * I so the ellipsoid remains
        well defined (it degenerates to a tiny ball around the mean).
    """
    if not (0.0 < prob < 1.0):
        raise ValueError(f"prob must be in (0, 1), got {prob}")
    d = belief.mean.size
    cov = belief.cov
    if np.linalg.eigvalsh(cov)[0] < 1e-12:
        cov = cov + 1e-12 * np.eye(d)
    r2 = float(chi2.ppf(prob, df=d))
    shape = np.linalg.inv(cov) / r2
    return Ellipsoid(belief.mean.copy(), 0.5 * (shape + shape.T))


def ellipsoid_contains(ell, point, slack=0.0):
    """Boundary-inclusive membership test: quadratic form <= 1 + slack."""
    v = _vector(point, "point") - ell.center
    return float(v @ ell.shape @ v) <= 1.0 + slack


def point_segment_distance(p, a, b):
    """Euclidean distance from point ``p`` to the closed segment [a, b].

    Collapses to point-to-point distance when a == b.
    """
    p = _vector(p, "p")
    a = _vector(a, "a")
    b = _vector(b, "b")
    ab = b - a
    denom = float(ab @ ab)
    if denom <= 1e-24:
        return float(np.linalg.norm(p - a))
    t = float((p - a) @ ab) / denom
    t = min(1.0, max(0.0, t))
    return float(np.linalg.norm(p - (a + t * ab)))


def segment_occluded(a, b, obstacles):
    """True when the open line of sight between a and b hits some obstacle.

    A sphere occludes iff its center lies strictly closer than its radius to
    the closed segment, so a segment exactly tangent to a sphere still counts
    as clear.
    """
    for obs in obstacles:
        if point_segment_distance(obs.center, a, b) < obs.radius:
            return True
    return False


# ---------------------------------------------------------------------------
# Minimum-volume covering ellipsoid with a pinned center
# ---------------------------------------------------------------------------

_BASE_DIRECTIONS = 256
_UNIT_ANGLES = 2.0 * math.pi * np.arange(_BASE_DIRECTIONS) / _BASE_DIRECTIONS
_UNIT_CIRCLE = np.stack([np.cos(_UNIT_ANGLES), np.sin(_UNIT_ANGLES)], axis=1)


def _unit_directions(d, count):
    """Deterministic spread of unit directions in R^d."""
    if d == 2:
        if count == _BASE_DIRECTIONS:
            return _UNIT_CIRCLE
        ang = 2.0 * math.pi * np.arange(count) / count
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    rng = np.random.default_rng(1234567 + 1000 * d + count)
    dirs = rng.standard_normal((count, d))
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def _boundary_points(ell, count):
    """``count`` points on the boundary of ``ell`` (exact up to linear algebra)."""
    L = np.linalg.cholesky(ell.shape)
    dirs = _unit_directions(ell.center.size, count)
    # shape = L L^T, boundary = center + L^{-T} s for unit s
    return ell.center + np.linalg.solve(L.T, dirs.T).T


def _central_mvee(points, tol=2e-5, max_iter=20000):
    """Shape matrix Q of the minimum-volume ellipsoid {y: y^T Q y <= 1}
    centered at the origin covering ``points``.

    Multiplicative-weights ascent on log det of the weighted scatter matrix,
    with away steps, extreme-point initialization and safe candidate
    elimination.  Returns Q only approximately optimal; callers rescale
    afterwards, so the tolerance here affects volume optimality, never
    containment.
    """
    y = np.asarray(points, dtype=float)
    k, d = y.shape
    lam = np.full(k, 1.0 / k)
    # initialize on coordinate extremes; spans the data unless degenerate
    seeds = set()
    for axis in range(d):
        seeds.add(int(np.argmax(y[:, axis])))
        seeds.add(int(np.argmin(y[:, axis])))
    seed_lam = np.zeros(k)
    seed_lam[list(seeds)] = 1.0 / len(seeds)
    seed_m = y.T @ (y * seed_lam[:, None])
    if np.linalg.matrix_rank(seed_m) == d:
        lam = seed_lam
        m = seed_m
    else:
        m = y.T @ (y * lam[:, None])
    n = np.linalg.inv(m)
    alive = np.arange(k)
    for it in range(max_iter):
        g = (y @ n * y).sum(axis=1)
        j_up = int(np.argmax(g))
        g_up = g[j_up]
        # primal criterion: max leverage within d(1+tol) bounds the volume
        # gap; containment is enforced exactly by the caller afterwards
        if g_up <= d * (1.0 + tol):
            break
        if it % 32 == 31 and k > 2 * d:
            # Harman-Pronzato test: leverage below this threshold can never
            # reach the optimal support, so those candidates are removable
            eps = g_up / d - 1.0
            thr = d * (1.0 + eps / 2.0 - math.sqrt(eps * (4.0 + eps - 4.0 / d)) / 2.0)
            keep = (g >= thr) | (lam > 1e-12)
            if not np.all(keep):
                y = y[keep]
                lam = lam[keep]
                alive = alive[keep]
                s = lam.sum()
                if s <= 0.0:
                    raise AssertionError("all covering weights eliminated")
                lam /= s
                m = y.T @ (y * lam[:, None])
                n = np.linalg.inv(m)
                k = y.shape[0]
                continue
        masked = np.where(lam > 1e-12, g, np.inf)
        j_dn = int(np.argmin(masked))
        g_dn = masked[j_dn]
        drop = False
        if g_up - d >= d - g_dn:
            j = j_up
            beta = (g_up - d) / (d * (g_up - 1.0))
        else:
            j = j_dn
            # for leverage below 1 the objective is monotone along the away
            # direction, so the best move is dropping the point entirely
            if g_dn > 1.0 + 1e-12:
                beta = (g_dn - d) / (d * (g_dn - 1.0))
            else:
                beta = -np.inf
            bound = -lam[j] / max(1.0 - lam[j], 1e-12)
            if beta <= bound:
                beta = bound
                drop = True
        lam *= 1.0 - beta
        lam[j] = 0.0 if drop else lam[j] + beta
        np.clip(lam, 0.0, None, out=lam)
        m = (1.0 - beta) * m + beta * np.outer(y[j], y[j])
        n = np.linalg.inv(m)
    q = n / d
    return 0.5 * (q + q.T)


def _max_quadform_on_boundary(q, ell, center):
    """Exact max of (y)^T q (y) over y on the boundary of ``ell`` shifted so
    that ``center`` is the origin.  2-D uses the closed-form trigonometric
    stationarity polished by Newton; other dimensions use a dense sampled max.
    """
    c = ell.center - center
    L = np.linalg.cholesky(ell.shape)
    z = np.linalg.inv(L.T)  # boundary: y = c + z @ s, |s| = 1
    d = c.size
    if d != 2:
        s = _unit_directions(d, 8192)
        pts = c + s @ z.T
        return float(np.max(np.einsum("ki,ij,kj->k", pts, q, pts)))
    p = 2.0 * (z.T @ (q @ c))
    w = z.T @ q @ z
    a0 = float(c @ q @ c) + 0.5 * (w[0, 0] + w[1, 1])
    c1, s1 = p[0], p[1]
    c2 = 0.5 * (w[0, 0] - w[1, 1])
    s2 = w[0, 1] + w[1, 0]  # == 2*w01 by symmetry
    s2 *= 0.5

    def val(t):
        return a0 + c1 * np.cos(t) + s1 * np.sin(t) + c2 * np.cos(2 * t) + s2 * np.sin(2 * t)

    best = float(np.max(val(_UNIT_ANGLES)))
    # stationary points: q'(theta) = 0 becomes a quartic in tan(theta/2)
    coeffs = np.array(
        [
            2.0 * s2 - s1,
            8.0 * c2 - 2.0 * c1,
            -12.0 * s2,
            -2.0 * c1 - 8.0 * c2,
            s1 + 2.0 * s2,
        ]
    )
    scale = float(np.max(np.abs(coeffs)))
    if scale > 0.0:
        roots = np.roots(coeffs / scale)
        real = roots.real[np.abs(roots.imag) <= 1e-8 * (1.0 + np.abs(roots.real))]
        if real.size:
            best = max(best, float(np.max(val(2.0 * np.arctan(real)))))
    # tan(theta/2) misses theta = pi
    best = max(best, float(val(math.pi)))
    return best


def _symmetric_congruent_cover(ell_a, ell_b, center):
    """Closed-form minimum-volume cover for the congruent symmetric case.

    When both input ellipsoids share one shape matrix and their centers are
    mirror images about ``center``, whitening by the shared shape turns the
    problem into covering two unit disks at +-v with an origin-centered
    ellipse.  By symmetry its axes align with v; writing A = 1/a^2 along v
    and B = 1/b^2 across, the inner tangency condition makes the optimal
    ratio rho = B/A the positive root of rho^2 - (2+r^2) rho + (1-r^2) = 0
    with r = |v|.  Returns None when the case does not apply.
    """
    s = ell_a.shape
    if not np.allclose(s, ell_b.shape, rtol=1e-10, atol=1e-14):
        return None
    scale = float(np.linalg.norm(ell_a.center - ell_b.center)) + 1.0
    if np.linalg.norm(0.5 * (ell_a.center + ell_b.center) - center) > 1e-10 * scale:
        return None
    if ell_a.center.size != 2:
        return None
    lt = np.linalg.cholesky(s).T
    v = lt @ (ell_a.center - center)
    r = float(np.linalg.norm(v))
    if r < 1e-12:
        q_white = np.eye(2)
    else:
        rho = 0.5 * (2.0 + r * r + r * math.sqrt(r * r + 8.0))
        big_a = 1.0 / (r * r + rho + r * r / (rho - 1.0))
        big_b = rho * big_a
        u1 = v / r
        u2 = np.array([-u1[1], u1[0]])
        q_white = big_a * np.outer(u1, u1) + big_b * np.outer(u2, u2)
    q = lt.T @ q_white @ lt
    return 0.5 * (q + q.T)


def fixed_center_mvce(ell_a, ell_b, center, tol=2e-5):
    """Minimum-volume ellipsoid with a prescribed center covering two ellipsoids.

    Parameters
    ----------
    ell_a, ell_b : Ellipsoid
    center : array-like
        Center of the covering ellipsoid (it is not optimized).
    tol : float
        Relative optimality gap for the underlying weight ascent.

    Returns
    -------
    Ellipsoid
        Covers both inputs: the covering is enforced exactly by rescaling the
        optimized shape until the analytic maximum of its quadratic form over
        both input boundaries is <= 1.  A 4x denser boundary sample is then
        asserted to be contained within 1e-6 as an independent guard.
    """
    center = _vector(center, "center")
    d = center.size
    if ell_a.center.size != d or ell_b.center.size != d:
        raise ValueError("ellipsoids and center must share one dimension")
    q = _symmetric_congruent_cover(ell_a, ell_b, center)
    if q is None:
        pts = np.vstack(
            [_boundary_points(ell_a, _BASE_DIRECTIONS), _boundary_points(ell_b, _BASE_DIRECTIONS)]
        ) - center
        q = _central_mvee(pts, tol=tol)
    worst = max(
        _max_quadform_on_boundary(q, ell_a, center),
        _max_quadform_on_boundary(q, ell_b, center),
    )
    if worst <= 0.0 or not math.isfinite(worst):
        raise ValueError("degenerate covering ellipsoid (inputs may be ill-conditioned)")
    q = q / (worst * (1.0 + 1e-9))
    cover = Ellipsoid(center, q)
    dense = np.vstack(
        [_boundary_points(ell_a, 4 * _BASE_DIRECTIONS), _boundary_points(ell_b, 4 * _BASE_DIRECTIONS)]
    ) - center
    forms = np.einsum("ki,ij,kj->k", dense, cover.shape, dense)
    # evaluating the quadratic form loses ~cond(q) * eps digits, so the guard
    # must sit above that floor for needle-shaped covers (near-singular inputs)
    eigs = np.linalg.eigvalsh(cover.shape)
    cond = eigs[-1] / max(eigs[0], np.finfo(float).tiny)
    guard = max(1e-6, 32.0 * np.finfo(float).eps * cond)
    if float(np.max(forms)) > 1.0 + guard:
        raise AssertionError(
            f"covering ellipsoid failed dense containment check (max form {np.max(forms):.9f})"
        )
    return cover
