"""
Dense arrays over sup-norm boxes of Z^d, and sparse field helpers.
"""
from typing import Dict, Mapping, Tuple

import numpy as np

from .errors import MemoryGuardError
from .models import Site


class Box:
    """The lattice box {x in Z^d : |x|_inf <= radius} stored as a dense array."""

    def __init__(self, dimension: int, radius: int, colors: int = 1, max_cells: int = 20_000_000):
        self.dimension = dimension
        self.radius = int(radius)
        self.colors = colors
        self.side = 2 * self.radius + 1
        cells = colors * self.side ** dimension
        if cells > max_cells:
            raise MemoryGuardError(
                f"box of radius {radius} in dimension {dimension} needs {cells} cells (limit {max_cells})"
            )

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.colors,) + (self.side,) * self.dimension

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def index(self, point) -> Tuple[int, ...]:
        return tuple(int(c) + self.radius for c in point)

    def contains(self, point) -> bool:
        return all(abs(int(c)) <= self.radius for c in point)

    def shift_add(self, dst: np.ndarray, src: np.ndarray, offset, weight: float) -> None:
        """dst[y + offset] += weight * src[y] for every y whose image stays in the box."""
        dst_index, src_index = [], []
        for o in offset:
            o = int(o)
            if abs(o) >= self.side:
                return
            src_index.append(slice(max(0, -o), self.side - max(0, o)))
            dst_index.append(slice(max(0, o), self.side - max(0, -o)))
        dst[tuple(dst_index)] += weight * src[tuple(src_index)]

    def to_field(self, values: np.ndarray, threshold: float = 0.0) -> Dict[Site, float]:
        """Sparse field of all cells whose absolute value exceeds threshold."""
        field: Dict[Site, float] = {}
        for cell in zip(*np.nonzero(np.abs(values) > threshold)):
            color, rest = int(cell[0]), cell[1:]
            site = tuple(int(c) - self.radius for c in rest) + (color,)
            field[site] = float(values[cell])
        return field


def field_add(a: Mapping[Site, float], b: Mapping[Site, float], scale: float = 1.0) -> Dict[Site, float]:
    """a + scale * b as a new sparse field."""
    out = dict(a)
    for site, value in b.items():
        out[site] = out.get(site, 0.0) + scale * value
    return out


def sup_norm(field: Mapping[Site, float]) -> float:
    return max((abs(v) for v in field.values()), default=0.0)


def lattice_ball(radius: float, dimension: int) -> np.ndarray:
    """Lattice points of Euclidean norm <= radius, as an (n, d) array."""
    bound = int(np.floor(radius))
    axis = np.arange(-bound, bound + 1)
    grid = np.stack(np.meshgrid(*([axis] * dimension), indexing="ij"), axis=-1).reshape(-1, dimension)
    return grid[np.linalg.norm(grid, axis=1) <= radius + 1e-12]
