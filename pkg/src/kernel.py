"""
Model documents and the killed random walk they induce.

Loads and validates the toppling rule, builds the jump kernel
mu_{i,j}(x) = c(x,i,j) / (m_i * row_sum(i)) and checks the standing
assumptions on it.
"""
import json
import logging
import math
from functools import reduce
from typing import Dict, List, Mapping, Optional, Sequence, Set, Tuple, Union

import numpy as np

from .errors import SpecParseError, SpecValidationError
from .geometry import origin_is_interior
from .models import AssumptionReport, Entry, JumpKernel, ModelSpec

logger = logging.getLogger(__name__)

_REQUIRED_FIELDS = ("dimension", "colors", "leakiness", "entries")
_ENTRY_FIELDS = ("offset", "from", "to", "weight")


def _reject_duplicate_keys(pairs):
    seen = {}
    for key, value in pairs:
        if key in seen:
            raise SpecParseError(f"duplicate key '{key}'")
        seen[key] = value
    return seen


def _as_int(value, what: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SpecValidationError(f"{what} must be an integer, got {value!r}")
    return value


def _as_real(value, what: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SpecValidationError(f"{what} must be a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise SpecValidationError(f"{what} must be finite")
    return value


def load_model_spec(text: str) -> ModelSpec:
    """Parse and validate a model document.

    Args:
        text: JSON document with fields dimension, colors, leakiness, entries.
            Colors are numbered from 1 in the document.

    Returns:
        A validated ModelSpec with 0-based colors.
    """
    try:
        document = json.loads(text, object_pairs_hook=_reject_duplicate_keys)
    except json.JSONDecodeError as exc:
        raise SpecParseError(f"malformed model document: {exc}") from exc
    if not isinstance(document, dict):
        raise SpecParseError("model document must be an object")
    missing = [name for name in _REQUIRED_FIELDS if name not in document]
    if missing:
        raise SpecParseError(f"missing field(s): {', '.join(missing)}")

    dimension = _as_int(document["dimension"], "dimension")
    colors = _as_int(document["colors"], "colors")
    raw_leakiness = document["leakiness"]
    raw_entries = document["entries"]
    if not isinstance(raw_leakiness, list) or not isinstance(raw_entries, list):
        raise SpecParseError("leakiness and entries must be arrays")

    leakiness = tuple(_as_real(m, f"leakiness[{k + 1}]") for k, m in enumerate(raw_leakiness))
    entries: List[Entry] = []
    keys: Set[Tuple[Tuple[int, ...], int, int]] = set()
    for position, record in enumerate(raw_entries):
        if not isinstance(record, dict):
            raise SpecParseError(f"entry {position} is not an object")
        absent = [name for name in _ENTRY_FIELDS if name not in record]
        if absent:
            raise SpecParseError(f"entry {position} lacks {', '.join(absent)}")
        offset = record["offset"]
        if not isinstance(offset, list):
            raise SpecParseError(f"entry {position}: offset must be an array")
        offset = tuple(_as_int(c, f"entry {position} offset") for c in offset)
        source = _as_int(record["from"], f"entry {position} from") - 1
        target = _as_int(record["to"], f"entry {position} to") - 1
        weight = _as_real(record["weight"], f"entry {position} weight")
        key = (offset, source, target)
        if key in keys:
            raise SpecParseError(
                f"duplicate entry offset={list(offset)} from={source + 1} to={target + 1}"
            )
        keys.add(key)
        entries.append(Entry(offset, source, target, weight))

    spec = ModelSpec(dimension, colors, leakiness, tuple(entries))
    validate_spec(spec)
    return spec


def validate_spec(spec: ModelSpec, require_leak: bool = True) -> ModelSpec:
    """Check the structural invariants of a ModelSpec.

    Args:
        spec: Model to check.
        require_leak: Whether at least one color must have leakiness > 1.

    Returns:
        The same spec, for chaining.
    """
    if spec.dimension < 1:
        raise SpecValidationError("dimension must be positive")
    if spec.colors < 1:
        raise SpecValidationError("colors must be positive")
    if len(spec.leakiness) != spec.colors:
        raise SpecValidationError(
            f"leakiness has {len(spec.leakiness)} values for {spec.colors} colors"
        )
    for color, m in enumerate(spec.leakiness):
        if m < 1.0:
            raise SpecValidationError(f"leakiness of color {color + 1} is below 1")
    for entry in spec.entries:
        if len(entry.offset) != spec.dimension:
            raise SpecValidationError(
                f"offset {list(entry.offset)} does not have dimension {spec.dimension}"
            )
        if not (0 <= entry.source < spec.colors and 0 <= entry.target < spec.colors):
            raise SpecValidationError(
                f"color out of range in entry from={entry.source + 1} to={entry.target + 1}"
            )
        if entry.weight < 0:
            raise SpecValidationError("negative weight")
    for color, total in enumerate(spec.row_sums):
        if total <= 0:
            raise SpecValidationError(f"empty toppling row for color {color + 1}")
    if require_leak and not any(m > 1.0 for m in spec.leakiness):
        raise SpecValidationError("no leaky color: some leakiness must exceed 1")
    return spec


def emit_model_spec(spec: ModelSpec) -> str:
    """Serialize a ModelSpec back to its document form (1-based colors)."""
    document = {
        "dimension": spec.dimension,
        "colors": spec.colors,
        "leakiness": [float(m) for m in spec.leakiness],
        "entries": [
            {
                "offset": list(entry.offset),
                "from": entry.source + 1,
                "to": entry.target + 1,
                "weight": float(entry.weight),
            }
            for entry in spec.entries
        ],
    }
    return json.dumps(document, indent=2) + "\n"


def with_leakiness(spec: ModelSpec, overrides: Union[float, Mapping[int, float]]) -> ModelSpec:
    """Return the spec with some or all leakiness values replaced.

    Args:
        spec: Original model.
        overrides: A single value applied to every color, or a mapping from
            0-based color to its new leakiness.
    """
    if isinstance(overrides, Mapping):
        leakiness = list(spec.leakiness)
        for color, m in overrides.items():
            if not 0 <= color < spec.colors:
                raise SpecValidationError(f"override color {color + 1} out of range")
            leakiness[color] = float(m)
    else:
        leakiness = [float(overrides)] * spec.colors
    return validate_spec(spec._replace(leakiness=tuple(leakiness)))


def krw_measure(spec: ModelSpec) -> JumpKernel:
    """Build the jump kernel of the killed random walk attached to spec."""
    row_sums = spec.row_sums
    support = [e for e in spec.entries if e.weight > 0]
    offsets = np.array([e.offset for e in support], dtype=np.int64).reshape(-1, spec.dimension)
    sources = np.array([e.source for e in support], dtype=np.int64)
    targets = np.array([e.target for e in support], dtype=np.int64)
    probs = np.array(
        [e.weight / (spec.leakiness[e.source] * row_sums[e.source]) for e in support],
        dtype=float,
    )
    return JumpKernel(spec.dimension, spec.colors, tuple(spec.leakiness), offsets, sources, targets, probs)


def non_killed(kernel: JumpKernel) -> JumpKernel:
    """Rescale every row so it sums to one: the kernel of the walk without killing."""
    scale = np.asarray(kernel.leakiness, dtype=float)[kernel.sources]
    return JumpKernel(
        kernel.dimension,
        kernel.colors,
        (1.0,) * kernel.colors,
        kernel.offsets,
        kernel.sources,
        kernel.targets,
        kernel.probs * scale,
    )


def default_horizon(kernel: JumpKernel) -> int:
    """Step horizon used when the caller does not supply one."""
    return 2 * kernel.colors * (kernel.max_step + 1)


def _strongly_connected(kernel: JumpKernel) -> bool:
    adjacency = np.zeros((kernel.colors, kernel.colors), dtype=bool)
    adjacency[kernel.sources, kernel.targets] = True
    reach = adjacency | np.eye(kernel.colors, dtype=bool)
    for _ in range(kernel.colors):
        reach = reach | ((reach.astype(np.int64) @ reach.astype(np.int64)) > 0)
    return bool(reach.all())


def _confined_to_half_space(offsets: np.ndarray, dimension: int) -> bool:
    return not origin_interior_of(offsets, dimension)


def _lattice_index(vectors: Sequence[Sequence[int]], dimension: int) -> int:
    """Index of the subgroup of Z^d generated by vectors (0 when not full rank)."""
    rows = [list(map(int, v)) for v in vectors if any(v)]
    basis: List[List[int]] = []
    for column in range(dimension):
        pivot_rows = [r for r in rows if r[column] != 0]
        rest = [r for r in rows if r[column] == 0]
        # Euclid on the column until one row carries the gcd
        while len(pivot_rows) > 1:
            pivot_rows.sort(key=lambda r: abs(r[column]))
            head = pivot_rows[0]
            reduced = [head]
            for row in pivot_rows[1:]:
                q = row[column] // head[column]
                row = [a - q * b for a, b in zip(row, head)]
                if row[column] != 0:
                    reduced.append(row)
                elif any(row):
                    rest.append(row)
            pivot_rows = reduced
        if not pivot_rows:
            return 0
        basis.append(pivot_rows[0])
        rows = rest
    return abs(math.prod(row[column] for column, row in enumerate(basis)))


def _layers(kernel: JumpKernel, start_color: int, horizon: int):
    """Yield the sets of states reachable in exactly n steps, n = 1..horizon."""
    moves = kernel.by_source()
    layer = {(0,) * kernel.dimension + (start_color,)}
    for _ in range(horizon):
        nxt = set()
        for state in layer:
            x, color = state[:-1], state[-1]
            for offset, target, _prob in moves[color]:
                nxt.add(tuple(a + b for a, b in zip(x, offset)) + (target,))
        layer = nxt
        yield layer


def validate_assumptions(kernel: JumpKernel, horizon: Optional[int] = None) -> AssumptionReport:
    """Check the standing assumptions on the killed random walk.

    Irreducibility and aperiodicity are witnessed by breadth-first
    enumeration up to horizon steps. A property that cannot be witnessed
    within the horizon is reported as None (undetermined); irreducibility is
    reported False only for obstructions that no horizon can remove.

    Args:
        kernel: Jump kernel to inspect.
        horizon: Number of steps to enumerate (default 2*p*(max step + 1)).

    Returns:
        AssumptionReport with the four checks.
    """
    if horizon is None:
        horizon = default_horizon(kernel)
    if horizon < 1:
        raise SpecValidationError("horizon must be at least 1")

    leaky = any(m > 1.0 for m in kernel.leakiness)
    origin = (0,) * kernel.dimension

    irreducible: Optional[bool]
    if not _strongly_connected(kernel) or _confined_to_half_space(kernel.offsets, kernel.dimension):
        irreducible = False
    else:
        returns = set()
        for layer in _layers(kernel, 0, horizon):
            returns.update(state[:-1] for state in layer if state[-1] == 0)
        returns.discard(origin)
        vectors = sorted(returns)
        spans = (
            len(vectors) > 0
            and _lattice_index(vectors, kernel.dimension) == 1
            and origin_interior_of(vectors, kernel.dimension)
        )
        irreducible = True if spans else None

    aperiodic: Optional[bool] = True
    for color in range(kernel.colors):
        lengths = [
            n
            for n, layer in enumerate(_layers(kernel, color, horizon), start=1)
            if origin + (color,) in layer
        ]
        if reduce(math.gcd, lengths, 0) != 1:
            aperiodic = None
            break

    report = AssumptionReport(
        leaky=leaky,
        irreducible=irreducible,
        aperiodic=aperiodic,
        finite_support=True,
        horizon=horizon,
    )
    logger.debug("assumption report: %s", report)
    return report


def origin_interior_of(vectors: Sequence[Sequence[int]], dimension: int) -> bool:
    """Whether the cone spanned by vectors is all of R^d."""
    points = np.asarray(vectors, dtype=float).reshape(-1, dimension)
    if points.shape[0] == 0 or np.linalg.matrix_rank(points) < dimension:
        return False
    return origin_is_interior(points)


def parse_overrides(values: Sequence[str]) -> Dict[int, float]:
    """Parse `color:value` strings (1-based colors) into a 0-based mapping."""
    overrides: Dict[int, float] = {}
    for text in values:
        try:
            color_text, value_text = text.split(":", 1)
            color = int(color_text) - 1
            value = float(value_text)
        except ValueError as exc:
            raise SpecValidationError(f"bad leakiness override '{text}' (expected color:value)") from exc
        overrides[color] = value
    return overrides
