"""
Image output: PPM slices of lattice fields and SVG overlays of planar shapes.
"""
import logging
import os
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import matplotlib
import numpy as np
from matplotlib.figure import Figure
from PIL import Image

from .errors import GeometryError, SpecValidationError
from .models import Site

logger = logging.getLogger(__name__)

# 叠加图中每一层的名称、二维点列与画法 ("points" 或 "curve")
Layer = Tuple[str, np.ndarray, str]


def slice_field(
    field: Mapping[Site, float], dimension: int, axis: Optional[int] = None, value: int = 0
) -> Dict[Site, float]:
    """Restrict a field to the plane x[axis] = value and drop that coordinate.

    Fields of dimension 1 or 2 are returned unchanged; dimension 3 needs an
    axis (0-based).
    """
    if dimension <= 2:
        return dict(field)
    if axis is None:
        raise SpecValidationError("a slice axis is required above dimension 2")
    if not 0 <= axis < dimension or dimension > 3:
        raise SpecValidationError(f"cannot slice dimension {dimension} along axis {axis + 1}")
    out: Dict[Site, float] = {}
    for site, mass in field.items():
        if site[axis] == value:
            out[site[:axis] + site[axis + 1:dimension] + (site[-1],)] = mass
    return out


def field_image(field: Mapping[Site, float], color: int, log_scale: bool = True) -> np.ndarray:
    """RGB image (uint8) of one color of a planar (or linear) field, origin centered."""
    cells = [(site[:-1], mass) for site, mass in field.items() if site[-1] == color]
    if cells and len(cells[0][0]) == 1:
        cells = [((x[0], 0), mass) for x, mass in cells]
    reach = max((max(abs(c) for c in x) for x, _ in cells), default=0)
    side = 2 * reach + 1
    grid = np.zeros((side, side))
    for (x, y), mass in cells:
        grid[reach - y, reach + x] = mass
    positive = grid > 0
    shade = np.zeros_like(grid)
    if positive.any():
        values = np.log1p(grid[positive]) if log_scale else grid[positive]
        top = values.max()
        shade[positive] = 0.15 + 0.85 * (values / top if top > 0 else 1.0)
    rgba = matplotlib.colormaps["viridis"](shade)
    rgb = (rgba[..., :3] * 255).round().astype(np.uint8)
    rgb[~positive] = 0
    return rgb


def write_ppm_slices(
    prefix: str,
    field: Mapping[Site, float],
    dimension: int,
    colors: int,
    axis: Optional[int] = None,
    value: int = 0,
) -> List[str]:
    """Write one binary PPM (P6) per color; returns the paths."""
    planar = slice_field(field, dimension, axis, value)
    paths = []
    for color in range(colors):
        path = f"{prefix}_color{color + 1}.ppm"
        Image.fromarray(field_image(planar, color)).save(path, format="PPM")
        logger.debug("wrote %s", path)
        paths.append(path)
    return paths


def write_overlay_svg(path: str, layers: Sequence[Layer], title: str = "") -> str:
    """Draw planar point sets and closed curves on one set of axes as SVG.

    Args:
        path: Output file.
        layers: (label, points of shape (n, 2), "points" or "curve") triples.
        title: Optional axes title.
    """
    figure = Figure(figsize=(6, 6))
    ax = figure.add_subplot(1, 1, 1)
    for label, points, kind in layers:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.size == 0:
            continue
        if points.shape[1] != 2:
            raise GeometryError("overlays are planar")
        if kind == "curve":
            ring = np.vstack([points, points[:1]])
            ax.plot(ring[:, 0], ring[:, 1], linewidth=1.0, label=label)
        else:
            ax.scatter(points[:, 0], points[:, 1], s=4, label=label)
    ax.set_aspect("equal")
    if title:
        ax.set_title(title)
    ax.legend(loc="upper right", fontsize="small")
    with matplotlib.rc_context({"svg.hashsalt": "lasm"}):
        figure.savefig(path, format="svg", metadata={"Date": None})
    return os.fspath(path)
