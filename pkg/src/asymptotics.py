"""
Predicted limit shapes and their degenerate regimes.

The limit shape of the sandpile rescaled by log N is the polar dual of the
convex body {rho <= 1}: along u its radius is 1/h(u). When every leakiness
grows the shape rescaled by log m tends to the convex hull of the averaged
color-cycle displacements; when every leakiness tends to 1 the shape
rescaled by sqrt(m - 1) tends to an ellipsoid given by the second moments
of the walk without killing.
"""
import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from .config import DEFAULT_SETTINGS, NumericSettings
from .errors import ConvergenceError, DriftError, MemoryGuardError
from .geometry import convex_hull, hausdorff, radial_function, sample_polytope, spherical_gap, star_body
from .kernel import krw_measure, non_killed, with_leakiness
from .models import (
    CyclePoint,
    CyclePointSet,
    Ellipsoid,
    JumpKernel,
    ModelSpec,
    ShapeCurve,
    Site,
    StarBody,
)
from .spectral import SpectralSolver

logger = logging.getLogger(__name__)

_BRANCH = -1.0 / math.e


def limit_shape(
    kernel: JumpKernel,
    directions,
    settings: NumericSettings = DEFAULT_SETTINGS,
    threads: Optional[int] = None,
    progress: bool = False,
) -> ShapeCurve:
    """Sample the limit shape: radius 1/h(u) for every direction u.

    Args:
        kernel: Killed jump kernel.
        directions: Unit vectors, shape (n, d).
        settings: Spectral tolerances.
        threads: Worker count for the direction sweep; results do not depend on it.
        progress: Show a progress bar.

    Returns:
        ShapeCurve with the boundary samples kept for duality checks.
    """
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    solver = SpectralSolver(kernel, settings)
    with ThreadPoolExecutor(max_workers=threads) as executor:
        samples = list(
            tqdm(
                executor.map(solver.support, directions),
                total=directions.shape[0],
                desc="支撑函数",
                disable=not progress,
                leave=False,
            )
        )
    gammas = np.array([s.h for s in samples])
    if np.any(gammas <= 0):
        raise ConvergenceError("non-positive support value; 0 is not interior to {rho <= 1}")
    logger.debug("limit shape over %d directions, gamma in [%.6g, %.6g]", gammas.size, gammas.min(), gammas.max())
    return ShapeCurve(directions, 1.0 / gammas, gammas, tuple(samples))


def level_set_body(kernel: JumpKernel, directions, settings: NumericSettings = DEFAULT_SETTINGS) -> StarBody:
    """{rho <= 1} sampled along rays, with the outward normal at every sample."""
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    solver = SpectralSolver(kernel, settings)
    radii = np.array([solver.boundary_ray(u) for u in directions])
    normals = np.array([solver.point(r * u).grad for r, u in zip(radii, directions)])
    return StarBody(directions, radii, normals / np.linalg.norm(normals, axis=1)[:, None])


def cycle_points(kernel: JumpKernel, settings: NumericSettings = DEFAULT_SETTINGS) -> CyclePointSet:
    """Averaged displacements of the color cycles of length at most p.

    Closed walks i_1 -> ... -> i_q -> i_1 are enumerated with i_1 the least
    color on the walk and no intermediate return to i_1; walks that pass
    through i_1 again average to convex combinations of shorter ones.
    """
    d, p = kernel.dimension, kernel.colors
    moves = kernel.by_source()
    scale = math.lcm(*range(1, p + 1))
    found: Dict[Tuple[int, ...], CyclePoint] = {}
    visited = 0
    stack: List[Tuple[int, Tuple[int, ...], Tuple[int, ...]]] = [
        (start, (start,), (0,) * d) for start in range(p - 1, -1, -1)
    ]
    while stack:
        start, colors, total = stack.pop()
        for offset, target, _ in moves[colors[-1]]:
            visited += 1
            if visited > settings.cycle_cap * max(p, 1):
                raise MemoryGuardError(f"cycle enumeration visited more than {settings.cycle_cap * p} steps")
            summed = tuple(a + b for a, b in zip(total, offset))
            q = len(colors)
            if target == start:
                key = tuple(c * (scale // q) for c in summed)
                if key not in found:
                    found[key] = CyclePoint(tuple(c / q for c in summed), q, colors)
                    if len(found) > settings.cycle_cap:
                        raise MemoryGuardError(f"more than {settings.cycle_cap} cycle points")
            elif target > start and q < p:
                stack.append((start, colors + (target,), summed))
    points = tuple(sorted(found.values(), key=lambda c: (c.length, c.point)))
    logger.debug("%d cycle points after %d transitions", len(points), visited)
    return CyclePointSet(d, points)


def first_passage_set(
    kernel: JumpKernel, n: int, start_color: int = 0, settings: NumericSettings = DEFAULT_SETTINGS
) -> Tuple[FrozenSet[Site], np.ndarray]:
    """States reachable from (0, start_color) in at most n steps.

    Returns:
        The set of sites and the distinct lattice points of A_n divided by n
        (the origin alone when n = 0).
    """
    if n < 0:
        raise ValueError("first passage needs n >= 0")
    d = kernel.dimension
    moves = kernel.by_source()
    start = (0,) * d + (start_color,)
    visited = {start}
    frontier = [start]
    for _ in range(n):
        fresh = []
        for site in frontier:
            x = site[:d]
            for offset, target, _ in moves[site[-1]]:
                nxt = tuple(a + b for a, b in zip(x, offset)) + (target,)
                if nxt not in visited:
                    visited.add(nxt)
                    fresh.append(nxt)
        if len(visited) > settings.max_cells:
            raise MemoryGuardError(f"first passage set exceeds {settings.max_cells} sites")
        if not fresh:
            break
        frontier = fresh
    points = np.array(sorted({s[:d] for s in visited}), dtype=float).reshape(-1, d)
    if n > 0:
        points /= n
    return frozenset(visited), points


def zero_leak_ellipsoid(kernel_tilde: JumpKernel, settings: NumericSettings = DEFAULT_SETTINGS) -> Ellipsoid:
    """Ellipsoid {s : 2 s^T sigma^{-1} s <= 1} with sigma the Hessian of rho at 0."""
    solver = SpectralSolver(kernel_tilde, settings)
    origin = np.zeros(kernel_tilde.dimension)
    drift = solver.point(origin).grad
    if np.linalg.norm(drift) > 1e-8:
        raise DriftError(drift)
    sigma = solver.hessian(origin)
    return Ellipsoid(2.0 * np.linalg.inv(sigma))


def lambert_w(y: float, settings: NumericSettings = DEFAULT_SETTINGS) -> float:
    """Principal branch of the Lambert W function for real y >= -1/e.

    Halley iteration seeded by the branch-point series near -1/e and by
    log(y) - log(log(y)) elsewhere.
    """
    y = float(y)
    if y < _BRANCH - 1e-16:
        raise ValueError(f"Lambert W is not real below -1/e (got {y!r})")
    if y <= _BRANCH:
        return -1.0
    if y == 0.0:
        return 0.0
    if abs(y - _BRANCH) <= 1.5:
        w = math.sqrt(2.0 * math.e * y + 2.0) - 1.0
    else:
        log_y = math.log(y)
        w = log_y - math.log(log_y)
    for _ in range(settings.lambert_cap):
        e = math.exp(w)
        f = w * e - y
        w1 = w + 1.0
        if w1 == 0.0:
            break
        dw = f / (e * w1 - (w + 2.0) * f / (2.0 * w1))
        w -= dw
        if abs(dw) < 0.7e-16 * (2.0 + abs(w)):
            break
    if abs(w * math.exp(w) - y) > settings.lambert_tol * max(1.0, abs(y)):
        raise ConvergenceError(f"Lambert W did not converge at y = {y!r}")
    return w


def lambert_w_of_exp(log_y: float, settings: NumericSettings = DEFAULT_SETTINGS) -> float:
    """W(exp(log_y)) for arguments too large to exponentiate, via w + log w = log_y."""
    if log_y < 700.0:
        return lambert_w(math.exp(log_y), settings)
    w = log_y - math.log(log_y)
    for _ in range(settings.lambert_cap):
        step = (w + math.log(w) - log_y) / (1.0 + 1.0 / w)
        w -= step
        if abs(step) < 1e-15 * w:
            return w
    raise ConvergenceError(f"Lambert W did not converge at log y = {log_y!r}")


def inverse_decay_profile(gamma: float, d: int, prefactor: float, y: float) -> float:
    """Solve C r^{-(d-1)/2} e^{-gamma r} = y for r.

    With q = 2/(d-1) this is r = W(q gamma C^q y^{-q}) / (q gamma); in
    dimension one it reduces to log(C/y)/gamma.
    """
    if gamma <= 0 or prefactor <= 0 or y <= 0:
        raise ValueError("gamma, prefactor and y must be positive")
    if d == 1:
        return math.log(prefactor / y) / gamma
    q = 2.0 / (d - 1)
    log_argument = math.log(q * gamma) + q * (math.log(prefactor) - math.log(y))
    return lambert_w_of_exp(log_argument) / (q * gamma)


def predicted_radius(gamma_u: float, d: int, N: float, c0: float = 0.0) -> float:
    """(log N)/gamma - ((d-1)/(2 gamma)) log log N + c0."""
    if gamma_u <= 0:
        raise ValueError("gamma must be positive")
    if N <= math.e:
        raise ValueError("N must exceed e")
    log_n = math.log(N)
    return log_n / gamma_u - (d - 1) / (2.0 * gamma_u) * math.log(log_n) + c0


def fit_radius_offset(gamma_u: float, d: int, Ns: Sequence[float], radii: Sequence[float]) -> float:
    """Least-squares constant c0 matching predicted_radius to measured radii."""
    if len(Ns) != len(radii) or not Ns:
        raise ValueError("need matching, non-empty N and radius samples")
    base = np.array([predicted_radius(gamma_u, d, N) for N in Ns])
    return float(np.mean(np.asarray(radii, dtype=float) - base))


def polytope_regime(
    spec: ModelSpec,
    ms: Iterable[float],
    directions,
    settings: NumericSettings = DEFAULT_SETTINGS,
    threads: Optional[int] = None,
    progress: bool = False,
) -> List[Tuple[float, float]]:
    """Hausdorff distance between (log m) C_m and conv X for each m.

    Every color gets leakiness m; both bodies are compared through their
    boundary points along the given directions.
    """
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    hull = convex_hull(cycle_points(krw_measure(spec), settings).coordinates())
    target = radial_function(hull, directions)[:, None] * directions
    results = []
    for m in tqdm(list(ms), desc="m", disable=not progress):
        curve = limit_shape(krw_measure(with_leakiness(spec, m)), directions, settings, threads)
        scaled = math.log(m) * curve.radii[:, None] * directions
        distance = hausdorff(scaled, target)
        logger.info("polytope regime m=%g: d_H = %.6g", m, distance)
        results.append((float(m), distance))
    return results


def ellipsoid_regime(
    spec: ModelSpec,
    ms: Iterable[float],
    directions,
    settings: NumericSettings = DEFAULT_SETTINGS,
    threads: Optional[int] = None,
    progress: bool = False,
) -> List[Tuple[float, float]]:
    """Spherical gap between sqrt(m-1) C_m and the zero-leak ellipsoid for each m."""
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    ellipsoid = zero_leak_ellipsoid(non_killed(krw_measure(spec)), settings)
    reference = star_body(ellipsoid, directions)
    results = []
    for m in tqdm(list(ms), desc="m", disable=not progress):
        if m <= 1.0:
            raise ValueError("the ellipsoid regime needs m > 1")
        curve = limit_shape(krw_measure(with_leakiness(spec, m)), directions, settings, threads)
        scaled = StarBody(directions, math.sqrt(m - 1.0) * curve.radii)
        gap = spherical_gap(scaled, reference)
        logger.info("ellipsoid regime m=%g: gap = %.6g", m, gap)
        results.append((float(m), gap))
    return results


def first_passage_distances(
    kernel: JumpKernel, ns: Iterable[int], start_color: int = 0, settings: NumericSettings = DEFAULT_SETTINGS
) -> List[Tuple[int, float]]:
    """d_H(conv X, A_n / n) for each n, conv X sampled at spacing 1/(2n)."""
    hull = convex_hull(cycle_points(kernel, settings).coordinates())
    results = []
    for n in ns:
        if n < 1:
            raise ValueError("first passage distances need n >= 1")
        _, points = first_passage_set(kernel, n, start_color, settings)
        distance = hausdorff(sample_polytope(hull, 1.0 / (2 * n)), points)
        logger.info("first passage n=%d: d_H = %.6g", n, distance)
        results.append((int(n), distance))
    return results


def dump_shape(path: str, curve: ShapeCurve) -> None:
    """CSV u_1..u_d,radius,gamma."""
    d = curve.directions.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow([f"u_{k + 1}" for k in range(d)] + ["radius", "gamma"])
        for u, r, g in zip(curve.directions, curve.radii, curve.gammas):
            writer.writerow([repr(float(c)) for c in u] + [repr(float(r)), repr(float(g))])


def dump_vertices(path: str, vertices) -> None:
    """CSV x_1..x_d, one polytope vertex per row."""
    vertices = np.atleast_2d(np.asarray(vertices, dtype=float))
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow([f"x_{k + 1}" for k in range(vertices.shape[1])])
        for v in vertices:
            writer.writerow([repr(float(c)) for c in v])


def dump_matrix(path: str, matrix) -> None:
    """CSV of the ellipsoid matrix, one row per line."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        for row in np.atleast_2d(matrix):
            writer.writerow([repr(float(c)) for c in row])
