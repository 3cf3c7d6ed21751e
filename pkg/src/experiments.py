"""
Run harness shared by every subcommand.

An ExperimentRunner loads one model document, performs the requested
experiment, writes its CSV outputs into the run directory and finally a
``manifest`` with the parameters, outputs and timing of the run.
"""
import csv
import hashlib
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from .asymptotics import (
    cycle_points,
    dump_matrix,
    dump_shape,
    dump_vertices,
    ellipsoid_regime,
    first_passage_distances,
    first_passage_set,
    limit_shape,
    polytope_regime,
    zero_leak_ellipsoid,
)
from .config import DEFAULT_SETTINGS, NumericSettings
from .errors import DriftError, SpecParseError, SpecValidationError
from .geometry import convex_hull, direction_grid, radial_function
from .green import (
    default_box_radius,
    dump_green_table,
    green_table,
    radii,
    sandwich_violations,
    threshold_constants,
)
from .kernel import krw_measure, load_model_spec, non_killed, validate_assumptions, with_leakiness
from .models import AssumptionReport, Extent, Odometer, RunManifest, SandpileState, ShapeCurve
from .render import write_overlay_svg, write_ppm_slices
from .sandpile import (
    dump_odometer,
    dump_state,
    is_nested,
    load_field,
    point_source,
    radial_extents,
    receive_closure,
    shape,
    stabilize,
)
from .spectral import dump_boundary_samples

logger = logging.getLogger(__name__)


def format_number(value: float) -> str:
    """Short tag for file names and reports (1e+06 -> 1e6)."""
    text = f"{value:g}"
    return text.replace("e+0", "e").replace("e+", "e").replace("e-0", "e-")


class ExperimentRunner:
    """Runs experiments on one model and records their outputs."""

    def __init__(
        self,
        spec_path: str,
        output_dir: str,
        max_workers: Optional[int] = None,
        settings: NumericSettings = DEFAULT_SETTINGS,
        quiet: bool = False,
        m_overrides: Optional[Mapping[int, float]] = None,
    ):
        """Initialize the runner.

        Args:
            spec_path: Path of the model document.
            output_dir: Directory receiving CSV outputs and the manifest.
            max_workers: Worker count for direction sweeps (None lets the pool decide).
            settings: Numeric settings handed to every computation.
            quiet: Suppress progress bars.
            m_overrides: 0-based color -> leakiness replacements.
        """
        try:
            with open(spec_path, "rb") as handle:
                raw = handle.read()
        except OSError as exc:
            raise SpecParseError(f"cannot read model document {spec_path}: {exc.strerror}") from exc
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise SpecParseError(f"model document {spec_path} is not UTF-8") from exc
        spec = load_model_spec(text)
        if m_overrides:
            spec = with_leakiness(spec, m_overrides)

        self.spec_path = spec_path
        self.digest = hashlib.sha256(raw).hexdigest()
        self.spec = spec
        self.kernel = krw_measure(spec)
        self.output_dir = output_dir
        self.max_workers = max_workers
        self.settings = settings
        self.quiet = quiet
        self.parameters: Dict[str, str] = {}
        if m_overrides:
            self.parameters["m_override"] = ",".join(f"{c + 1}:{m!r}" for c, m in sorted(m_overrides.items()))
        self.outputs: List[str] = []
        self.topple_events = 0
        self._started = time.perf_counter()

        os.makedirs(output_dir, exist_ok=True)

    def _path(self, name: str) -> str:
        self.outputs.append(name)
        return os.path.join(self.output_dir, name)

    def _record(self, **parameters) -> None:
        for key, value in parameters.items():
            if isinstance(value, (list, tuple)):
                value = ",".join(format_number(v) if isinstance(v, float) else str(v) for v in value)
            elif isinstance(value, float):
                value = format_number(value)
            self.parameters[key] = str(value)

    def directions(self, count: Optional[int] = None) -> np.ndarray:
        """Direction grid for the model dimension (defaults from the settings)."""
        d = self.spec.dimension
        if count is None and d > 1:
            count = {2: self.settings.directions_2d, 3: self.settings.directions_3d}.get(
                d, self.settings.directions_high
            )
        return direction_grid(d, count)

    def _check_color(self, color: int) -> int:
        if not 0 <= color < self.spec.colors:
            raise SpecValidationError(f"color {color + 1} out of range 1..{self.spec.colors}")
        return color

    def _write_rows(self, name: str, header: Sequence[str], rows) -> str:
        path = self._path(name)
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(header)
            writer.writerows(rows)
        return path

    # validate

    def validate(self, horizon: Optional[int] = None) -> AssumptionReport:
        """Check the standing assumptions and write them to ``assumptions``."""
        report = validate_assumptions(self.kernel, horizon)
        self._record(horizon=report["horizon"])
        with open(self._path("assumptions"), "w", encoding="utf-8") as handle:
            for key, value in report.items():
                handle.write(f"{key}: {_verdict(value)}\n")
        return report

    # simulate

    def simulate(
        self, Ns: Sequence[float], seed: Optional[int] = 0, source_color: int = 0, write: bool = True
    ) -> List[Tuple[float, SandpileState, Odometer]]:
        """Stabilize N at (0, source_color) for each N.

        With a single N the outputs are ``final.csv`` and ``odometer.csv``;
        several N get an ``_N<value>`` suffix. ``shapes.csv`` summarizes
        every run.
        """
        self._check_color(source_color)
        self._record(N=list(map(float, Ns)), seed=seed, source_color=source_color + 1)
        runs = []
        rows = []
        for N in tqdm(list(Ns), desc="稳定化", disable=self.quiet or len(Ns) < 2):
            initial = point_source(self.spec, N, source_color)
            final, odo = stabilize(self.spec, initial, order_seed=seed, settings=self.settings)
            self.topple_events += final.topple_events
            runs.append((float(N), final, odo))
            if write:
                suffix = "" if len(Ns) == 1 else f"_N{format_number(N)}"
                dump_state(self._path(f"final{suffix}.csv"), final)
                dump_odometer(self._path(f"odometer{suffix}.csv"), odo)
            strict = shape(odo)
            closure = receive_closure(final, odo)
            rows.append([
                format_number(N), len(strict.sites), len(strict.points), len(closure.sites),
                repr(float(final.leaked_total)), final.topple_events,
            ])
        if write:
            self._write_rows(
                "shapes.csv",
                ["N", "shape_sites", "shape_points", "closure_sites", "leaked_total", "topple_events"],
                rows,
            )
        if len(runs) > 1:
            ordered = sorted(runs, key=lambda run: run[0])
            nested = is_nested([shape(odo) for _, _, odo in ordered])
            self.parameters["nested"] = "yes" if nested else "no"
        return runs

    # shape

    def shape(self, count: Optional[int] = None) -> ShapeCurve:
        """Predicted limit shape over the direction grid."""
        directions = self.directions(count)
        self._record(directions=directions.shape[0])
        curve = limit_shape(self.kernel, directions, self.settings, self.max_workers, progress=not self.quiet)
        dump_shape(self._path("shape.csv"), curve)
        dump_boundary_samples(self._path("boundary.csv"), curve.samples)
        return curve

    # predict

    def _tables(self, N_max: float, box_R: Optional[int], eps_stop: Optional[float]):
        beta = min(self.spec.thresholds)
        if box_R is None:
            box_R = default_box_radius(self.kernel, N_max, beta, settings=self.settings)
        tables = [
            green_table(self.kernel, color, box_R, eps_stop, settings=self.settings)
            for color in tqdm(range(self.spec.colors), desc="Green", disable=self.quiet)
        ]
        alpha, beta = threshold_constants(self.spec, tables, self.settings)
        self._record(box_R=box_R, eps_stop=float(tables[0].eps_stop), alpha=alpha, beta=beta)
        return tables, alpha, beta

    def predict(
        self,
        Ns: Sequence[float],
        count: Optional[int] = None,
        box_R: Optional[int] = None,
        eps_stop: Optional[float] = None,
        source_color: int = 0,
    ) -> List[list]:
        """Sandwich radii r_Nu <= R_Nu next to (log N)/gamma_u, written to ``radii.csv``."""
        self._check_color(source_color)
        _check_amounts(Ns, 0.0)
        directions = self.directions(count)
        self._record(N=list(map(float, Ns)), directions=directions.shape[0], source_color=source_color + 1)
        tables, alpha, beta = self._tables(max(Ns), box_R, eps_stop)
        table = tables[source_color]
        dump_green_table(self._path("green.csv"), table)
        self.outputs.append("green.csv.meta")
        curve = limit_shape(self.kernel, directions, self.settings, self.max_workers, progress=not self.quiet)

        rows = []
        for N in Ns:
            with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
                pairs = list(
                    executor.map(
                        lambda u: radii(table, u, N, alpha, beta, source_color, self.settings), directions
                    )
                )
            for u, gamma, (inner, outer) in zip(directions, curve.gammas, pairs):
                rows.append(
                    [format_number(N)] + [repr(float(c)) for c in u]
                    + [repr(float(inner)), repr(float(outer)), repr(float(math.log(N) / gamma))]
                )
        d = self.spec.dimension
        self._write_rows(
            "radii.csv",
            ["N"] + [f"u_{k + 1}" for k in range(d)] + ["r_inner", "r_outer", "log_N_over_gamma"],
            rows,
        )
        return rows

    # compare

    def compare(
        self,
        Ns: Sequence[float],
        count: Optional[int] = None,
        seed: Optional[int] = 0,
        tol_angle: float = 0.1,
        box_R: Optional[int] = None,
        eps_stop: Optional[float] = None,
        source_color: int = 0,
    ) -> List[dict]:
        """Measured shapes against the predicted limit shape and the threshold sandwich.

        Returns:
            One record per N with the largest |outer(u)/log N - 1/gamma_u|,
            the number of directions whose cone held no lattice point and
            the number of sandwich violations.
        """
        _check_amounts(Ns, 1.0)
        directions = self.directions(count)
        self._record(directions=directions.shape[0], tol_angle=tol_angle)
        curve = limit_shape(self.kernel, directions, self.settings, self.max_workers, progress=not self.quiet)
        runs = self.simulate(Ns, seed, source_color, write=False)
        tables, alpha, beta = self._tables(max(Ns), box_R, eps_stop)

        records = []
        for N, final, odo in runs:
            strict = shape(odo)
            if strict.points:
                extents = radial_extents(strict.points, directions, tol_angle)
            else:
                logger.warning("N = %s leaves an empty shape", format_number(N))
                extents = [Extent(None, None)] * directions.shape[0]
            log_n = math.log(N)
            deviations = [
                abs(e.outer / log_n - r) for e, r in zip(extents, curve.radii) if e.outer is not None
            ]
            violations = sandwich_violations(tables, strict, alpha, beta, N, source_color)
            records.append({
                "N": N,
                "max_deviation": max(deviations) if deviations else float("nan"),
                "missing": sum(e.outer is None for e in extents),
                "violations": len(violations),
            })
        self._write_rows(
            "compare.csv",
            ["N", "max_deviation", "missing_directions", "sandwich_violations"],
            [[format_number(r["N"]), repr(float(r["max_deviation"])), r["missing"], r["violations"]] for r in records],
        )
        return records

    # regimes

    def polytope(self, ms: Sequence[float], count: Optional[int] = None) -> List[Tuple[float, float]]:
        """Distance from (log m) C_m to conv X, plus the cycle points and hull vertices."""
        directions = self.directions(count)
        self._record(m=list(map(float, ms)), directions=directions.shape[0])
        points = cycle_points(self.kernel, self.settings)
        dump_vertices(self._path("cycle_points.csv"), points.coordinates())
        dump_vertices(self._path("vertices.csv"), convex_hull(points.coordinates()).vertices)
        results = polytope_regime(self.spec, ms, directions, self.settings, self.max_workers, not self.quiet)
        self._write_rows("polytope.csv", ["m", "hausdorff"], [[format_number(m), repr(float(v))] for m, v in results])
        return results

    def ellipsoid(self, ms: Sequence[float], count: Optional[int] = None) -> List[Tuple[float, float]]:
        """Spherical gap from sqrt(m-1) C_m to the zero-leak ellipsoid."""
        directions = self.directions(count)
        self._record(m=list(map(float, ms)), directions=directions.shape[0])
        ellipsoid = zero_leak_ellipsoid(non_killed(self.kernel), self.settings)
        dump_matrix(self._path("ellipsoid.csv"), ellipsoid.matrix)
        results = ellipsoid_regime(self.spec, ms, directions, self.settings, self.max_workers, not self.quiet)
        self._write_rows("ellipsoid_gap.csv", ["m", "spherical_gap"], [[format_number(m), repr(float(v))] for m, v in results])
        return results

    def first_passage(self, ns: Sequence[int], start_color: int = 0) -> List[Tuple[int, float]]:
        """Hausdorff distance from A_n/n to conv X for each n."""
        self._check_color(start_color)
        self._record(n=list(ns), start_color=start_color + 1)
        results = first_passage_distances(self.kernel, ns, start_color, self.settings)
        sizes = [len(first_passage_set(self.kernel, n, start_color, self.settings)[0]) for n in ns]
        self._write_rows(
            "first_passage.csv",
            ["n", "hausdorff", "sites"],
            [[n, repr(float(v)), size] for (n, v), size in zip(results, sizes)],
        )
        return results

    # render

    def render(
        self,
        N: Optional[float] = None,
        field_path: Optional[str] = None,
        seed: Optional[int] = 0,
        axis: Optional[int] = None,
        value: int = 0,
        count: Optional[int] = None,
        source_color: int = 0,
    ) -> List[str]:
        """PPM slices of a configuration, plus an SVG overlay in dimension 2.

        The configuration is read from field_path when given, otherwise the
        point source of mass N is stabilized first.
        """
        d = self.spec.dimension
        if field_path is not None:
            field = load_field(field_path)
            self._record(field=field_path)
            points = {site[:-1] for site in field}
        elif N is not None:
            (_, final, odo), = self.simulate([N], seed, source_color, write=False)
            field = final.mass
            points = shape(odo).points
        else:
            raise SpecValidationError("render needs --N or --field")
        if axis is not None:
            self._record(slice=f"{axis + 1}={value}")
        prefix = os.path.join(self.output_dir, "slice")
        written = write_ppm_slices(prefix, field, d, self.spec.colors, axis, value)
        self.outputs.extend(os.path.basename(p) for p in written)

        if d == 2 and N is not None and N > 1:
            directions = self.directions(count)
            curve = limit_shape(self.kernel, directions, self.settings, self.max_workers, progress=not self.quiet)
            log_n = math.log(N)
            layers = [
                ("simulated / log N", np.array(sorted(points), dtype=float) / log_n, "points"),
                ("predicted", curve.radii[:, None] * directions, "curve"),
            ]
            layers.extend(self._regime_layers(directions))
            written.append(write_overlay_svg(self._path("overlay.svg"), layers, f"N = {format_number(N)}"))
        return written

    def _regime_layers(self, directions: np.ndarray):
        leakiness = set(self.spec.leakiness)
        if len(leakiness) != 1:
            return []
        m = leakiness.pop()
        if m <= 1.0:
            return []
        layers = []
        hull = convex_hull(cycle_points(self.kernel, self.settings).coordinates())
        if not hull.degenerate and np.all(hull.offsets > 0):
            layers.append(("conv X / log m", radial_function(hull, directions)[:, None] * directions / math.log(m), "curve"))
        try:
            ellipsoid = zero_leak_ellipsoid(non_killed(self.kernel), self.settings)
        except DriftError:
            logger.info("drifted kernel: no ellipse layer")
        else:
            radius = radial_function(ellipsoid, directions) / math.sqrt(m - 1.0)
            layers.append(("ellipse / sqrt(m-1)", radius[:, None] * directions, "curve"))
        return layers

    # manifest

    def write_manifest(self, command: str) -> RunManifest:
        """Write ``manifest`` as key: value lines and return its content."""
        manifest = RunManifest(
            command=command,
            spec_path=self.spec_path,
            spec_digest=f"sha256:{self.digest}",
            parameters=dict(self.parameters),
            outputs=list(self.outputs),
            wall_clock=time.perf_counter() - self._started,
            topple_events=self.topple_events,
        )
        with open(os.path.join(self.output_dir, "manifest"), "w", encoding="utf-8") as handle:
            handle.write(f"command: {command}\n")
            handle.write(f"spec_path: {manifest['spec_path']}\n")
            handle.write(f"spec_digest: {manifest['spec_digest']}\n")
            for key, value in manifest["parameters"].items():
                handle.write(f"parameter.{key}: {value}\n")
            handle.write(f"outputs: {', '.join(manifest['outputs'])}\n")
            handle.write(f"wall_clock: {manifest['wall_clock']:.3f}\n")
            handle.write(f"topple_events: {manifest['topple_events']}\n")
        return manifest


def _check_amounts(Ns: Sequence[float], floor: float) -> None:
    bad = [N for N in Ns if not N > floor]
    if bad:
        raise SpecValidationError(f"N must exceed {floor:g}, got {format_number(bad[0])}")


def _verdict(value) -> str:
    if value is None:
        return "undetermined"
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def read_manifest(path: str) -> Dict[str, str]:
    """Parse a manifest back into a flat key -> value mapping."""
    entries: Dict[str, str] = {}
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if ":" in line:
                key, value = line.split(":", 1)
                entries[key.strip()] = value.strip()
    return entries
