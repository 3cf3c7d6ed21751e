"""
Green function of the killed random walk on a truncated box.

G((0,i0),(x,j)) is accumulated as the occupation measure sum_n q_n with
q_0 = delta_(0,i0) and q_{n+1} = q_n * mu. The walk itself runs on a larger
outer box so that the stored window only truncates storage; whatever still
leaves the outer box is counted in ``escaped_mass`` and folded into
``error_bound``.
"""
import itertools
import logging
import math
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .config import DEFAULT_SETTINGS, NumericSettings
from .errors import ConvergenceError, InsufficientBoxError, MemoryGuardError, SpecValidationError
from .geometry import direction_grid
from .kernel import krw_measure
from .lattice import Box
from .models import GreenTable, JumpKernel, ModelSpec, Shape, Site
from .sandpile import dump_field
from .spectral import SpectralSolver

logger = logging.getLogger(__name__)

Tables = Union[GreenTable, Sequence[GreenTable], Mapping[int, GreenTable]]


def _laplace_zero(kernel: JumpKernel) -> np.ndarray:
    return SpectralSolver(kernel).laplace_matrix(np.zeros(kernel.dimension))


def _as_list(tables: Tables) -> List[GreenTable]:
    if isinstance(tables, GreenTable):
        return [tables]
    if isinstance(tables, Mapping):
        return list(tables.values())
    return list(tables)


def killed_mass_profile(
    kernel: JumpKernel, i0: int, eps_stop: float, settings: NumericSettings = DEFAULT_SETTINGS
) -> int:
    """First n with e_{i0}^T L(0)^n 1 < eps_stop, the surviving mass after n steps."""
    matrix = _laplace_zero(kernel)
    rho0 = float(np.max(np.abs(np.linalg.eigvals(matrix))))
    if rho0 >= 1.0 - 1e-15:
        raise ConvergenceError(f"surviving mass does not decay (rho(0) = {rho0:.6g})")
    survival = np.ones(kernel.colors)
    steps = 0
    while survival[i0] >= eps_stop:
        survival = matrix @ survival
        steps += 1
        if steps > settings.topple_cap:
            raise ConvergenceError(f"surviving mass still {survival[i0]:.3g} after {steps} steps")
    return steps


def green_totals(kernel: JumpKernel) -> np.ndarray:
    """(I - L(0))^{-1}; entry [j, i] is sum_z G((0,j),(z,i))."""
    matrix = _laplace_zero(kernel)
    return np.linalg.inv(np.eye(kernel.colors) - matrix)


def _fitting_radius(colors: int, dimension: int, max_cells: int) -> int:
    side = int(math.floor((max_cells / colors) ** (1.0 / dimension) + 1e-9))
    return max((side - 1) // 2, 0)


def _next_reach(hop: np.ndarray, reach: np.ndarray, cap: int) -> np.ndarray:
    p = hop.shape[0]
    fresh = np.full(p, -1)
    for i in range(p):
        if reach[i] < 0:
            continue
        for j in range(p):
            if hop[i, j] >= 0:
                fresh[j] = max(fresh[j], min(reach[i] + hop[i, j], cap))
    return fresh


def _furthest_reach(hop: np.ndarray, i0: int, steps: int) -> int:
    """Largest sup-norm distance any color can be at within ``steps`` steps."""
    reach = np.full(hop.shape[0], -1)
    reach[i0] = 0
    furthest = 0
    for _ in range(steps):
        reach = _next_reach(hop, reach, steps * max(int(hop.max()), 0))
        furthest = max(furthest, int(reach.max()))
    return furthest


def green_table(
    kernel: JumpKernel,
    i0: int,
    box_R: int,
    eps_stop: Optional[float] = None,
    origin: Optional[Sequence[int]] = None,
    settings: NumericSettings = DEFAULT_SETTINGS,
) -> GreenTable:
    """Tabulate G((origin, i0), (x, j)) for |x - origin|_inf <= box_R.

    Args:
        kernel: Killed jump kernel.
        i0: Source color, 0-based.
        box_R: Sup-norm radius of the stored window around the source.
        eps_stop: Stop once the surviving mass is below this value.
        origin: Source point, the lattice origin by default.
        settings: Memory guard and default eps_stop.

    Returns:
        GreenTable over the box of radius box_R + |origin|_inf centered at 0.
    """
    eps_stop = settings.eps_stop if eps_stop is None else float(eps_stop)
    if eps_stop <= 0:
        raise SpecValidationError("eps_stop must be positive")
    if not 0 <= i0 < kernel.colors:
        raise SpecValidationError(f"source color {i0 + 1} out of range")
    if box_R < 1:
        raise SpecValidationError("Green box radius must be at least 1")
    d, p = kernel.dimension, kernel.colors
    origin = tuple(int(c) for c in origin) if origin is not None else (0,) * d
    shift = max((abs(c) for c in origin), default=0)

    n_max = killed_mass_profile(kernel, i0, eps_stop, settings)
    matrix = _laplace_zero(kernel)
    hop = np.full((p, p), -1, dtype=int)
    moves = kernel.by_source()
    for i, group in enumerate(moves):
        for offset, j, _ in group:
            hop[i, j] = max(hop[i, j], max((abs(c) for c in offset), default=0))
    wanted = min(box_R + n_max * kernel.max_step, _furthest_reach(hop, i0, n_max))
    outer_R = min(max(wanted, box_R), _fitting_radius(p, d, settings.max_cells) - shift)
    if outer_R < box_R:
        raise MemoryGuardError(
            f"Green box of radius {box_R} needs more than {settings.max_cells} cells"
        )
    outer = Box(d, outer_R + shift, p, settings.max_cells)
    center = outer.radius

    q = outer.zeros()
    q[(i0,) + outer.index(origin)] = 1.0
    total = q.copy()
    reach = np.full(p, -1)
    reach[i0] = 0
    mass = np.zeros(p)
    mass[i0] = 1.0
    escaped = np.zeros(p)

    for _ in range(n_max):
        clipped = bool(np.any(_next_reach(hop, reach, outer_R + kernel.max_step) > outer_R))
        fresh_reach = _next_reach(hop, reach, outer_R)
        s = int(max(fresh_reach.max(), reach.max(), 0))
        region = (slice(None),) + tuple(slice(center + o - s, center + o + s + 1) for o in origin)
        view = Box(d, s, p, settings.max_cells)
        source = q[region]
        fresh = np.zeros_like(source)
        for i, group in enumerate(moves):
            if reach[i] < 0:
                continue
            for offset, j, prob in group:
                view.shift_add(fresh[j], source[i], offset, prob)
        expected = mass @ matrix
        q[region] = fresh
        total[region] += fresh
        mass = fresh.reshape(p, -1).sum(axis=1)
        if clipped:
            escaped += np.clip(expected - mass, 0.0, None)
        reach = fresh_reach

    totals = green_totals(kernel)
    tail = float(mass.sum())
    error_bound = float((mass + escaped) @ totals @ np.ones(p))
    stored = box_R + shift
    window = (slice(None),) + (slice(center - stored, center + stored + 1),) * d
    logger.info(
        "Green table from color %d: %d steps, box %d, outer %d, tail %.3g, escaped %.3g",
        i0 + 1, n_max, box_R, outer_R, tail, escaped.sum(),
    )
    return GreenTable(
        source_color=i0,
        box_radius=stored,
        values=total[window].copy(),
        eps_stop=eps_stop,
        tail_bound=tail,
        escaped_mass=float(escaped.sum()),
        error_bound=error_bound,
        steps=n_max,
        origin=origin,
    )


def green_interp(table: GreenTable, x, j: int) -> float:
    """Tent-weighted extension of the table to real points.

    The value at x is sum_y theta(|x-y|_inf) G(y, j) / sum_y theta(|x-y|_inf)
    with theta(s) = max(0, 1 - s), which only involves the 2^d corners of
    the unit cell containing x.
    """
    x = np.asarray(x, dtype=float).reshape(table.dimension)
    if np.max(np.abs(x), initial=0.0) > table.box_radius - 1 + 1e-12:
        raise InsufficientBoxError(
            f"point {x.tolist()} lies outside the interpolation box of radius {table.box_radius - 1}"
        )
    base = np.floor(x)
    numerator = denominator = 0.0
    for corner in itertools.product((0.0, 1.0), repeat=table.dimension):
        y = base + np.asarray(corner)
        weight = 1.0 - float(np.max(np.abs(x - y), initial=0.0))
        if weight <= 0.0:
            continue
        numerator += weight * table.value(y.astype(int), j)
        denominator += weight
    return numerator / denominator


def threshold_constants(
    spec: ModelSpec, tables: Tables, settings: NumericSettings = DEFAULT_SETTINGS
) -> Tuple[float, float]:
    """Constants (alpha, beta) of the threshold sandwich.

    beta = min_i M_i and alpha = max_i M_i * max_i sum_j sum_z G((0,j),(z,i)).
    The column sums come from (I - L(0))^{-1}; every supplied table must
    recover at least ``certify_fraction`` of its exact row before alpha is
    reported.
    """
    kernel = krw_measure(spec)
    totals = green_totals(kernel)
    for table in _as_list(tables):
        measured = table.values.reshape(table.colors, -1).sum(axis=1)
        exact = totals[table.source_color]
        reached = exact > 0
        ratio = measured[reached] / exact[reached]
        if ratio.size and ratio.min() < settings.certify_fraction:
            raise InsufficientBoxError(
                f"Green table from color {table.source_color + 1} holds only "
                f"{ratio.min():.2%} of the occupation mass; use a larger box"
            )
    thresholds = spec.thresholds
    beta = min(thresholds)
    alpha = max(thresholds) * float(totals.sum(axis=0).max())
    return alpha, beta


def _bisect(g, lo: float, hi: float, keep_low, tol: float) -> Tuple[float, float]:
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if keep_low(g(mid)):
            lo = mid
        else:
            hi = mid
    return lo, hi


def radii(
    table: GreenTable,
    u,
    N: float,
    alpha: float,
    beta: float,
    j: Optional[int] = None,
    settings: NumericSettings = DEFAULT_SETTINGS,
) -> Tuple[float, float]:
    """(r_Nu, R_Nu) along the unit direction u.

    r_Nu = inf{r > 0 : g_u(r) <= alpha/N} and R_Nu = sup{r > 0 : g_u(r) >= beta/N}
    on the interpolated profile g_u(r) = G(origin + r u, j), located by a scan
    of step ``radius_scan_step`` and refined by bisection.
    """
    u = np.asarray(u, dtype=float)
    if not N > 0:
        raise SpecValidationError(f"N must be positive, got {N!r}")
    u = u / np.linalg.norm(u)
    j = table.source_color if j is None else j
    lower, upper = alpha / N, beta / N
    if upper <= table.error_bound:
        raise InsufficientBoxError(
            f"threshold {upper:.3g} is below the table error bound {table.error_bound:.3g}"
        )
    origin = np.asarray(table.origin, dtype=float)
    shift = float(np.max(np.abs(origin), initial=0.0))
    r_max = (table.box_radius - shift - 1.0) / float(np.max(np.abs(u)))
    g = lambda r: green_interp(table, origin + r * u, j)

    grid = np.arange(0.0, r_max + 1e-12, settings.radius_scan_step)
    if grid[-1] < r_max - 1e-12:
        grid = np.append(grid, r_max)
    values = np.array([g(r) for r in grid])
    tol = settings.radius_bisect_tol

    below = np.nonzero(values <= lower)[0]
    if below.size == 0:
        raise InsufficientBoxError(f"g_u stays above alpha/N = {lower:.3g} inside the box")
    k = int(below[0])
    if k == 0:
        inner = 0.0
    else:
        inner = _bisect(g, grid[k - 1], grid[k], lambda v: v > lower, tol)[1]

    above = np.nonzero(values >= upper)[0]
    if above.size == 0:
        outer = 0.0
    else:
        k = int(above[-1])
        if k == grid.size - 1:
            raise InsufficientBoxError(f"g_u stays above beta/N = {upper:.3g} up to the box edge")
        outer = _bisect(g, grid[k], grid[k + 1], lambda v: v >= upper, tol)[0]
    return inner, outer


def sandwich_violations(
    tables: Tables, shape: Shape, alpha: float, beta: float, N: float, i0: int = 0
) -> List[Tuple[Site, str]]:
    """Sites breaking {N G > alpha} inside shape inside {N G >= beta}.

    Returns:
        (site, reason) pairs; reason is "missing" for a site with N G > alpha
        that did not topple and "excess" for a toppled site with N G < beta
        (shape sites outside the table box count as excess).
    """
    table = next((t for t in _as_list(tables) if t.source_color == i0), None)
    if table is None:
        raise SpecValidationError(f"no Green table for source color {i0 + 1}")
    violations: List[Tuple[Site, str]] = []
    R = table.box_radius
    for cell in zip(*np.nonzero(N * table.values > alpha)):
        site = tuple(int(c) - R for c in cell[1:]) + (int(cell[0]),)
        if site not in shape.sites:
            violations.append((site, "missing"))
    for site in shape.sites:
        value = table.value(site[:-1], site[-1])
        if N * (value + table.error_bound) < beta:
            violations.append((site, "excess"))
    return sorted(violations)


def green_transpose_apply(tables: Tables, v: Mapping[Site, float], settings: NumericSettings = DEFAULT_SETTINGS) -> Dict[Site, float]:
    """(G^T v)(x, i) = sum_(y,j) v(y,j) G((0,j),(x-y,i)) over the union of shifted table boxes."""
    by_color = {t.source_color: t for t in _as_list(tables)}
    if not by_color or not v:
        return {}
    first = next(iter(by_color.values()))
    d, p = first.dimension, first.colors
    R = max(t.box_radius for t in by_color.values())
    reach = max(max((abs(c) for c in site[:-1]), default=0) for site in v)
    box = Box(d, R + reach, p, settings.max_cells)
    acc = box.zeros()
    for site, value in v.items():
        table = by_color.get(site[-1])
        if table is None:
            raise SpecValidationError(f"no Green table for source color {site[-1] + 1}")
        if any(table.origin):
            raise SpecValidationError("transpose needs tables sourced at the origin")
        Rt = table.box_radius
        region = (slice(None),) + tuple(slice(box.radius + y - Rt, box.radius + y + Rt + 1) for y in site[:-1])
        acc[region] += value * table.values
    return box.to_field(acc)


def min_decay_rate(kernel: JumpKernel, directions, settings: NumericSettings = DEFAULT_SETTINGS) -> float:
    """Smallest support value h(u) over the given directions."""
    solver = SpectralSolver(kernel, settings)
    return min(solver.support(u).h for u in np.atleast_2d(directions))


def default_box_radius(
    kernel: JumpKernel,
    N_max: float,
    beta: float,
    directions=None,
    settings: NumericSettings = DEFAULT_SETTINGS,
) -> int:
    """ceil(log(N_max/beta)/gamma_min) + box_margin, gamma_min from a coarse sweep."""
    if N_max <= beta:
        return settings.box_margin
    if directions is None:
        directions = direction_grid(kernel.dimension, {1: None, 2: 16, 3: 64}.get(kernel.dimension, 128))
    gamma = min_decay_rate(kernel, directions, settings)
    return int(math.ceil(math.log(N_max / beta) / gamma)) + settings.box_margin


def dump_green_table(path: str, table: GreenTable) -> str:
    """Write the table as CSV x_1..x_d,color,value plus a key: value sidecar.

    Returns:
        Path of the sidecar file.
    """
    R = table.box_radius
    box = Box(table.dimension, R, table.colors, max_cells=table.values.size)
    dump_field(path, box.to_field(table.values), value_name="value")
    sidecar = path + ".meta"
    with open(sidecar, "w", encoding="utf-8") as handle:
        handle.write(f"source_color: {table.source_color + 1}\n")
        handle.write(f"box_radius: {R}\n")
        handle.write(f"origin: {','.join(str(c) for c in table.origin)}\n")
        handle.write(f"eps_stop: {table.eps_stop!r}\n")
        handle.write(f"tail_bound: {table.tail_bound!r}\n")
        handle.write(f"escaped_mass: {table.escaped_mass!r}\n")
        handle.write(f"error_bound: {table.error_bound!r}\n")
        handle.write(f"steps: {table.steps}\n")
    return sidecar
