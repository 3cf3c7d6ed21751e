"""
Convex hulls, polar duality and the set distances used by every comparison.
"""
import logging
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .errors import GeometryError
from .models import Ellipsoid, Polytope, StarBody

logger = logging.getLogger(__name__)

Body = Union[Polytope, Ellipsoid, StarBody]

_FACET_DIGITS = 9


def cross(p, q, r) -> float:
    return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])


def _monotone_chain(points: np.ndarray) -> np.ndarray:
    pts = sorted(set(map(tuple, points)))
    if len(pts) <= 2:
        return np.array(pts, dtype=float)
    lower = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1], dtype=float)


def _polygon_facets(ring: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    edges = np.roll(ring, -1, axis=0) - ring
    normals = np.column_stack([edges[:, 1], -edges[:, 0]])
    normals /= np.linalg.norm(normals, axis=1)[:, None]
    offsets = np.einsum("ij,ij->i", normals, ring)
    return normals, offsets


def _merge_facets(equations: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    normals = equations[:, :-1]
    offsets = -equations[:, -1]
    keys = np.round(np.column_stack([normals, offsets]), _FACET_DIGITS)
    _, first = np.unique(keys, axis=0, return_index=True)
    first = np.sort(first)
    return normals[first], offsets[first]


def convex_hull(points) -> Polytope:
    """Convex hull of a finite point set in dimension 1, 2 or 3.

    Args:
        points: Array of shape (n, d).

    Returns:
        Polytope with extreme vertices and merged facets. Inputs that do not
        span a full-dimensional body come back with ``degenerate=True`` and
        no facets.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[0] == 0:
        raise GeometryError("convex hull of an empty point set")
    d = points.shape[1]
    if d > 3:
        raise GeometryError(f"convex hull in dimension {d} is not supported")

    if d == 1:
        lo, hi = points.min(), points.max()
        if lo == hi:
            return Polytope(np.array([[lo]]), np.zeros((0, 1)), np.zeros(0), degenerate=True)
        return Polytope(np.array([[lo], [hi]]), np.array([[-1.0], [1.0]]), np.array([-lo, hi]))

    if d == 2:
        ring = _monotone_chain(points)
        if ring.shape[0] < 3:
            return Polytope(ring.reshape(-1, 2), np.zeros((0, 2)), np.zeros(0), degenerate=True)
        normals, offsets = _polygon_facets(ring)
        return Polytope(ring, normals, offsets)

    unique = np.unique(points, axis=0)
    try:
        hull = ConvexHull(unique)
    except (QhullError, ValueError):
        logger.debug("degenerate 3-d hull input with %d points", unique.shape[0])
        return Polytope(unique, np.zeros((0, 3)), np.zeros(0), degenerate=True)
    normals, offsets = _merge_facets(hull.equations)
    return Polytope(unique[hull.vertices], normals, offsets)


def origin_is_interior(points, tol: float = 1e-12) -> bool:
    """Whether 0 lies strictly inside the convex hull of points, in any dimension."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] <= 3:
        hull = convex_hull(points)
        if hull.degenerate:
            return False
        return bool(np.all(hull.offsets > tol))
    try:
        hull = ConvexHull(np.unique(points, axis=0))
    except (QhullError, ValueError):
        return False
    return bool(np.all(hull.equations[:, -1] < -tol))


def support_function(polytope: Polytope, directions) -> np.ndarray:
    """max over vertices of v . u for each direction u."""
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    return (directions @ polytope.vertices.T).max(axis=1)


def polar_dual(body: Body) -> Body:
    """Polar dual {s : s . x <= 1 for all x in body}.

    Polytopes are dualized through their facets (vertex n/b for each facet
    n . x <= b), ellipsoids by inverting their matrix, and star bodies with
    per-sample outward normals by mapping each sample x_k to n_k/(n_k . x_k).
    """
    if isinstance(body, Ellipsoid):
        return Ellipsoid(np.linalg.inv(body.matrix))

    if isinstance(body, Polytope):
        if body.degenerate or body.offsets.size == 0 or np.any(body.offsets <= 1e-12):
            raise GeometryError("0 is not interior to the polytope")
        return convex_hull(body.normals / body.offsets[:, None])

    if isinstance(body, StarBody):
        if body.normals is None:
            raise GeometryError("star body needs outward normals to be dualized")
        points = body.boundary_points()
        normals = body.normals / np.linalg.norm(body.normals, axis=1)[:, None]
        heights = np.einsum("ij,ij->i", normals, points)
        if np.any(heights <= 0):
            raise GeometryError("0 is not interior to the star body")
        return StarBody(normals, 1.0 / heights, body.directions)

    raise GeometryError(f"cannot dualize {type(body).__name__}")


def hausdorff(a, b) -> float:
    """Hausdorff distance between two finite point sets."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise GeometryError("Hausdorff distance of an empty set")
    forward, _ = cKDTree(b).query(a)
    backward, _ = cKDTree(a).query(b)
    return float(max(forward.max(), backward.max()))


def spherical_gap(a: StarBody, b: StarBody) -> float:
    """Sup over the shared direction grid of |r_a(u) - r_b(u)|."""
    if a.directions.shape != b.directions.shape or not np.allclose(
        a.directions, b.directions, rtol=0.0, atol=1e-12
    ):
        raise GeometryError("star bodies are sampled on different direction grids")
    return float(np.max(np.abs(np.asarray(a.radii) - np.asarray(b.radii))))


def direction_grid(d: int, count: Optional[int] = None, seed: int = 0) -> np.ndarray:
    """Unit directions covering the sphere S^{d-1}.

    d=1 gives the two signs, d=2 equally spaced angles (default 720),
    d=3 a Fibonacci sphere (default 2000) and higher dimensions seeded
    Gaussian samples (default 5000).
    """
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        count = count or 720
        angles = 2.0 * np.pi * np.arange(count) / count
        return np.column_stack([np.cos(angles), np.sin(angles)])
    if d == 3:
        count = count or 2000
        k = np.arange(count) + 0.5
        z = 1.0 - 2.0 * k / count
        phi = np.pi * (1.0 + 5.0 ** 0.5) * k
        r = np.sqrt(1.0 - z * z)
        return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    count = count or 5000
    rng = np.random.default_rng(seed)
    samples = rng.standard_normal((count, d))
    return samples / np.linalg.norm(samples, axis=1)[:, None]


def radial_function(body: Body, directions) -> np.ndarray:
    """Radius of body along each unit direction (0 must be interior)."""
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    if isinstance(body, Ellipsoid):
        quad = np.einsum("ij,jk,ik->i", directions, body.matrix, directions)
        return 1.0 / np.sqrt(quad)
    if isinstance(body, Polytope):
        if body.degenerate or np.any(body.offsets <= 0):
            raise GeometryError("0 is not interior to the polytope")
        heights = directions @ body.normals.T
        with np.errstate(divide="ignore"):
            ratios = np.where(heights > 0, body.offsets / heights, np.inf)
        return ratios.min(axis=1)
    if isinstance(body, StarBody):
        if body.directions.shape != directions.shape or not np.allclose(body.directions, directions, atol=1e-12):
            raise GeometryError("star body is sampled on a different direction grid")
        return np.asarray(body.radii, dtype=float)
    raise GeometryError(f"no radial function for {type(body).__name__}")


def star_body(body: Body, directions) -> StarBody:
    """Sample any body as a StarBody on the given grid."""
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    return StarBody(directions, radial_function(body, directions))


def sample_polytope(polytope: Polytope, spacing: float) -> np.ndarray:
    """Grid points of the given spacing inside polytope, plus its vertices."""
    lo = polytope.vertices.min(axis=0)
    hi = polytope.vertices.max(axis=0)
    axes = [np.arange(a, b + spacing / 2, spacing) for a, b in zip(lo, hi)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, polytope.dimension)
    inside = grid[polytope.contains(grid, tol=1e-12)]
    return np.vstack([inside, polytope.vertices])


def toothpick_fixture(directions, indices: Sequence[int], length: float = 2.0, samples: int = 50):
    """Unit ball and a family of balls pricked by [0, length*u_n], one per index n.

    The indices must be distinct, so along any fixed grid direction the
    radius of the family is eventually 1 while every member stays at
    distance length - 1 from the ball.

    Returns:
        (ball, ball_points, family): the ball as a StarBody, a point sampling
        of its boundary, and a list of (pricked, pricked_points) pairs with
        the toothpick included in the points.
    """
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    indices = [int(i) for i in indices]
    if len(set(indices)) != len(indices):
        raise GeometryError("toothpick directions must be distinct")
    ball = StarBody(directions, np.ones(directions.shape[0]))
    ball_points = ball.boundary_points()
    family = []
    for index in indices:
        radii = np.ones(directions.shape[0])
        radii[index] = length
        stick = np.linspace(1.0, length, samples)[:, None] * directions[index][None, :]
        family.append((StarBody(directions, radii), np.vstack([ball_points, stick])))
    return ball, ball_points, family
