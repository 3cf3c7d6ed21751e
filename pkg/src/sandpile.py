"""
Stabilization of leaky multicolor sandpiles.

A site (x, i) is stable when its mass is at most the threshold
M_i = m_i * row_sum(i). An unstable site topples k times at once: it loses
k * M_i, sends k * c(y, i, j) to (x + y, j) and the remaining
k * (m_i - 1) * row_sum(i) leaks away.
"""
import csv
import logging
import math
from collections import deque
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .config import DEFAULT_SETTINGS, NumericSettings
from .errors import NonTerminationError, SpecValidationError
from .kernel import krw_measure
from .lattice import lattice_ball
from .models import Extent, ModelSpec, Odometer, SandpileState, Shape, Site

logger = logging.getLogger(__name__)


def topple_count(mass: float, threshold: float) -> int:
    """Number of single topplings that bring mass down to at most threshold.

    Args:
        mass: Current mass at the site.
        threshold: Site threshold M_i, positive.

    Returns:
        max(0, ceil(mass / threshold) - 1); a mass of exactly j * threshold
        gives j - 1, so a site holding exactly its threshold is stable.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    if mass <= threshold:
        return 0
    return max(0, math.ceil(mass / threshold) - 1)


def point_source(spec: ModelSpec, amount: float, color: int = 0, origin: Optional[Sequence[int]] = None) -> SandpileState:
    """Initial configuration holding amount at (origin, color)."""
    if not 0 <= color < spec.colors:
        raise SpecValidationError(f"source color {color + 1} out of range")
    if amount < 0 or not math.isfinite(amount):
        raise SpecValidationError("initial mass must be finite and non-negative")
    origin = tuple(origin) if origin is not None else (0,) * spec.dimension
    return SandpileState({origin + (color,): float(amount)})


def _neumaier(total: float, carry: float, value: float) -> Tuple[float, float]:
    s = total + value
    if abs(total) >= abs(value):
        carry += (total - s) + value
    else:
        carry += (value - s) + total
    return s, carry


class Stabilizer:
    """Runs the toppling dynamics of one model to a stable configuration."""

    def __init__(
        self,
        spec: ModelSpec,
        order_seed: Optional[int] = 0,
        settings: NumericSettings = DEFAULT_SETTINGS,
        cap: Optional[int] = None,
    ):
        """Initialize the stabilizer.

        Args:
            spec: Validated model.
            order_seed: Seed used to shuffle the insertion order of newly
                unstable sites; None keeps plain FIFO order.
            settings: Numeric settings (stability slack, default toppling cap).
            cap: Explicit bound on bulk toppling events, overriding the
                bound derived from the leak.
        """
        self.spec = spec
        self.order_seed = order_seed
        self.settings = settings
        self.cap = cap
        self.thresholds = spec.thresholds
        row_sums = spec.row_sums
        self.leak_per_topple = tuple((m - 1.0) * s for m, s in zip(spec.leakiness, row_sums))
        self.moves: List[List[Tuple[Tuple[int, ...], int, float]]] = [[] for _ in range(spec.colors)]
        for entry in spec.entries:
            if entry.weight > 0:
                self.moves[entry.source].append((entry.offset, entry.target, entry.weight))

    def event_cap(self, total: float) -> int:
        """Budget of bulk toppling events for an initial total mass."""
        if self.cap is not None:
            return self.cap
        if all(m > 1.0 for m in self.spec.leakiness):
            least_leak = (min(self.spec.leakiness) - 1.0) * min(self.spec.row_sums)
            bound = 10.0 * total / least_leak
            return int(min(bound, float(2 ** 62))) + 1
        return self.settings.topple_cap

    def run(self, initial: SandpileState) -> Tuple[SandpileState, Odometer]:
        """Stabilize a copy of initial.

        Returns:
            The stable configuration and the odometer of the run.
        """
        thresholds = self.thresholds
        slack = self.settings.stability_slack
        moves = self.moves
        d = self.spec.dimension
        rng = np.random.default_rng(self.order_seed) if self.order_seed is not None else None

        mass: Dict[Site, float] = {s: float(v) for s, v in initial.mass.items() if v != 0.0}
        carry: Dict[Site, float] = {}
        emitted: Dict[Site, float] = {}
        emitted_carry: Dict[Site, float] = {}
        leaked, leaked_carry = initial.leaked_total, 0.0
        events = 0
        total = math.fsum(mass.values())
        cap = self.event_cap(total)

        pending = [s for s, v in mass.items() if v > thresholds[s[-1]] + slack]
        if rng is not None:
            rng.shuffle(pending)
        queue = deque(pending)
        queued = set(pending)

        while queue:
            site = queue.popleft()
            queued.discard(site)
            color = site[-1]
            threshold = thresholds[color]
            current = mass[site] + carry.get(site, 0.0)
            if current <= threshold + slack:
                continue
            k = topple_count(current, threshold)
            residual = min(max(current - k * threshold, 0.0), threshold)
            mass[site] = residual
            carry.pop(site, None)
            emitted[site], emitted_carry[site] = _neumaier(
                emitted.get(site, 0.0), emitted_carry.get(site, 0.0), k * threshold
            )
            leaked, leaked_carry = _neumaier(leaked, leaked_carry, k * self.leak_per_topple[color])
            events += 1
            if events > cap:
                raise NonTerminationError(
                    f"stabilization exceeded {cap} toppling events; "
                    f"{len(queue)} sites still queued, leaked {leaked:.6g} of {total:.6g}"
                )

            fresh = []
            x = site[:d]
            for offset, target, weight in moves[color]:
                neighbour = tuple(a + b for a, b in zip(x, offset)) + (target,)
                value, c = _neumaier(mass.get(neighbour, 0.0), carry.get(neighbour, 0.0), k * weight)
                mass[neighbour] = value
                if c or neighbour in carry:
                    carry[neighbour] = c
                if neighbour not in queued and value + c > thresholds[target] + slack:
                    fresh.append(neighbour)
                    queued.add(neighbour)
            if fresh:
                if rng is not None and len(fresh) > 1:
                    rng.shuffle(fresh)
                queue.extend(fresh)

        final = {s: v + carry.get(s, 0.0) for s, v in mass.items()}
        final = {s: v for s, v in final.items() if v > 0.0}
        odometer = {s: v + emitted_carry.get(s, 0.0) for s, v in emitted.items()}
        logger.debug("stabilized %d sites with %d events, leaked %.6g", len(final), events, leaked)
        state = SandpileState(final, leaked + leaked_carry, initial.topple_events + events)
        return state, Odometer(odometer)


def stabilize(
    spec: ModelSpec,
    initial: SandpileState,
    order_seed: Optional[int] = 0,
    settings: NumericSettings = DEFAULT_SETTINGS,
    cap: Optional[int] = None,
) -> Tuple[SandpileState, Odometer]:
    """Stabilize initial under the toppling rule of spec (see Stabilizer)."""
    return Stabilizer(spec, order_seed=order_seed, settings=settings, cap=cap).run(initial)


def shape(odo: Odometer) -> Shape:
    """Sites that emitted sand, and their projection to Z^d."""
    sites = frozenset(s for s, v in odo.emitted.items() if v > 0)
    return Shape(sites, frozenset(s[:-1] for s in sites))


def receive_closure(final: SandpileState, odo: Odometer) -> Shape:
    """Sites that emitted or still hold sand."""
    sites = frozenset(s for s, v in final.mass.items() if v > 0) | shape(odo).sites
    return Shape(sites, frozenset(s[:-1] for s in sites))


def is_nested(shapes: Sequence[Shape]) -> bool:
    """Whether each shape contains the previous one."""
    return all(a.sites <= b.sites for a, b in zip(shapes, shapes[1:]))


def apply_T(spec: ModelSpec, field: Mapping[Site, float]) -> Dict[Site, float]:
    """Massive Laplacian: (Tv)(x,i) = sum P((y,j)->(x,i)) v(y,j) - v(x,i)."""
    moves = krw_measure(spec).by_source()
    d = spec.dimension
    out: Dict[Site, float] = {}
    for site, value in field.items():
        if value == 0.0:
            continue
        x = site[:d]
        for offset, target, prob in moves[site[-1]]:
            neighbour = tuple(a + b for a, b in zip(x, offset)) + (target,)
            out[neighbour] = out.get(neighbour, 0.0) + prob * value
        out[site] = out.get(site, 0.0) - value
    return out


def mass_change(initial: SandpileState, final: SandpileState) -> Dict[Site, float]:
    """final - initial as a sparse field."""
    change = dict(final.mass)
    for site, value in initial.mass.items():
        change[site] = change.get(site, 0.0) - value
    return change


def radial_extents(points: Iterable[Tuple[int, ...]], directions, tol_angle: float) -> List[Extent]:
    """Inner and outer radii of a lattice set along each direction.

    Args:
        points: Lattice points of the shape (the union over colors).
        directions: Unit vectors, shape (n, d).
        tol_angle: Half-angle in radians of the cone around each direction.

    Returns:
        One Extent per direction. outer is the largest norm of a shape point
        in the cone, inner the largest norm r such that every cone lattice
        point of norm at most r belongs to the shape. Both are None when the
        cone holds no lattice point.
    """
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    d = directions.shape[1]
    members = {tuple(int(c) for c in p) for p in points}
    if not members:
        raise SpecValidationError("radial extents of an empty shape")
    reach = max(math.sqrt(sum(c * c for c in p)) for p in members)
    grid = lattice_ball(math.ceil(reach) + 2, d)
    norms = np.linalg.norm(grid, axis=1)
    keep = norms > 0
    grid, norms = grid[keep], norms[keep]
    inside = np.fromiter((tuple(p) in members for p in grid.tolist()), dtype=bool, count=grid.shape[0])
    order = np.argsort(norms, kind="stable")
    grid, norms, inside = grid[order], norms[order], inside[order]
    unit = grid / norms[:, None]
    cos_tol = math.cos(tol_angle)

    extents: List[Extent] = []
    for u in directions:
        cone = unit @ u >= cos_tol - 1e-12
        if not cone.any():
            extents.append(Extent(None, None))
            continue
        cone_norms = norms[cone]
        cone_inside = inside[cone]
        outer = float(cone_norms[cone_inside].max()) if cone_inside.any() else 0.0
        missing = np.nonzero(~cone_inside)[0]
        first_gap = missing[0] if missing.size else cone_norms.size
        inner = float(cone_norms[first_gap - 1]) if first_gap > 0 else 0.0
        extents.append(Extent(inner, outer))
    return extents


def dump_field(path: str, field: Mapping[Site, float], value_name: str = "mass") -> None:
    """Write a sparse field as CSV rows x_1..x_d,color,value (1-based colors)."""
    sites = sorted(field)
    d = len(sites[0]) - 1 if sites else 0
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow([f"x_{k + 1}" for k in range(d)] + ["color", value_name])
        for site in sites:
            writer.writerow(list(site[:-1]) + [site[-1] + 1, repr(float(field[site]))])


def load_field(path: str) -> Dict[Site, float]:
    """Read a CSV written by dump_field back into a 0-based sparse field."""
    field: Dict[Site, float] = {}
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        next(reader, None)
        for row in reader:
            point = tuple(int(c) for c in row[:-2])
            field[point + (int(row[-2]) - 1,)] = float(row[-1])
    return field


def dump_state(path: str, state: SandpileState) -> None:
    dump_field(path, state.mass, "mass")


def dump_odometer(path: str, odo: Odometer) -> None:
    dump_field(path, odo.emitted, "emitted")
