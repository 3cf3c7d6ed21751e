"""
Tests for Green tables, threshold constants and the radius sandwich.
"""
import math
import os
import tempfile
import unittest

import numpy as np

from src.asymptotics import fit_radius_offset, predicted_radius
from src.config import DEFAULT_SETTINGS
from src.errors import InsufficientBoxError, MemoryGuardError, SpecValidationError
from src.green import (
    default_box_radius,
    dump_green_table,
    green_interp,
    green_table,
    green_totals,
    green_transpose_apply,
    killed_mass_profile,
    min_decay_rate,
    radii,
    sandwich_violations,
    threshold_constants,
)
from src.kernel import krw_measure, load_model_spec
from src.lattice import field_add, sup_norm
from src.models import GreenTable
from src.sandpile import apply_T, point_source, radial_extents, shape, stabilize
from src.spectral import support_value

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")

GAMMA_AXIS_2D = math.acosh(3.0)


def load(name):
    with open(os.path.join(FIXTURES, name + ".model"), encoding="utf-8") as handle:
        return load_model_spec(handle.read())


class TestGreenTable(unittest.TestCase):
    """Test cases for the truncated Green function."""

    def test_self_loop(self):
        """Test a walk that never moves has G(0) = 1 + 1/2 + 1/4 + ... = 2."""
        spec = load("selfloop")
        kernel = krw_measure(spec)
        table = green_table(kernel, 0, 2)
        self.assertAlmostEqual(table.value((0,), 0), 2.0, delta=1e-12)
        self.assertEqual(table.value((1,), 0), 0.0)
        self.assertLess(table.tail_bound, 1e-16)
        self.assertEqual(table.escaped_mass, 0.0)
        alpha, beta = threshold_constants(spec, table)
        self.assertAlmostEqual(alpha, 4.0, places=12)
        self.assertEqual(beta, 2.0)

    def test_square_lattice_constants(self):
        """Test alpha = 16 and beta = 8 for the uniform planar model."""
        spec = load("uniform2d")
        kernel = krw_measure(spec)
        table = green_table(kernel, 0, 20)
        alpha, beta = threshold_constants(spec, table)
        self.assertAlmostEqual(alpha, 16.0, places=10)
        self.assertEqual(beta, 8.0)
        np.testing.assert_allclose(green_totals(kernel), [[2.0]])

    def test_certification_needs_a_large_box(self):
        """Test a table holding too little of the occupation mass cannot certify alpha."""
        spec = load("uniform2d")
        table = green_table(krw_measure(spec), 0, 1)
        with self.assertRaises(InsufficientBoxError):
            threshold_constants(spec, table)

    def test_finite_speed(self):
        """Test the table vanishes beyond the number of steps taken."""
        kernel = krw_measure(load("uniform2d"))
        steps = killed_mass_profile(kernel, 0, 1e-3)
        self.assertEqual(steps, 10)
        table = green_table(kernel, 0, 15, eps_stop=1e-3)
        self.assertGreater(table.value((steps, 0), 0), 0.0)
        self.assertEqual(table.value((steps + 1, 0), 0), 0.0)
        self.assertEqual(table.value((6, 5), 0), 0.0)

    def test_symmetry(self):
        """Test the uniform planar table is invariant under the lattice symmetries."""
        table = green_table(krw_measure(load("uniform2d")), 0, 10)
        values = table.values[0]
        np.testing.assert_allclose(values, values[::-1, :], rtol=1e-12)
        np.testing.assert_allclose(values, values.T, rtol=1e-12)

    def test_translation_invariance(self):
        """Test a table sourced at a shifted origin is the shifted table."""
        kernel = krw_measure(load("uniform2d"))
        base = green_table(kernel, 0, 10, eps_stop=1e-12)
        moved = green_table(kernel, 0, 10, eps_stop=1e-12, origin=(3, -2))
        for x in [(0, 0), (1, 0), (4, -3), (-10, 10), (7, 2)]:
            shifted = (x[0] + 3, x[1] - 2)
            self.assertAlmostEqual(moved.value(shifted, 0), base.value(x, 0), delta=1e-12)

    def test_four_color_tables(self):
        """Test every color's table certifies against the exact column sums."""
        spec = load("fig1")
        kernel = krw_measure(spec)
        tables = [green_table(kernel, i, 12) for i in range(4)]
        totals = green_totals(kernel)
        for table in tables:
            measured = table.values.reshape(4, -1).sum(axis=1)
            np.testing.assert_allclose(measured, totals[table.source_color], rtol=1e-9)
        alpha, beta = threshold_constants(spec, tables)
        self.assertAlmostEqual(alpha, 4.0 * totals.sum(axis=0).max(), places=10)
        self.assertAlmostEqual(beta, 4.0, places=12)

    def test_memory_guard(self):
        """Test a box beyond the cell budget is refused."""
        kernel = krw_measure(load("uniform2d"))
        with self.assertRaises(MemoryGuardError):
            green_table(kernel, 0, 50, settings=DEFAULT_SETTINGS.with_overrides(max_cells=1000))

    def test_bad_arguments(self):
        """Test invalid source colors and box radii are refused."""
        kernel = krw_measure(load("uniform2d"))
        with self.assertRaises(SpecValidationError):
            green_table(kernel, 1, 5)
        with self.assertRaises(SpecValidationError):
            green_table(kernel, 0, 0)
        with self.assertRaises(SpecValidationError):
            green_table(kernel, 0, 5, eps_stop=0.0)

    def test_log_slope_matches_decay_rate(self):
        """Test -log G(r e1)/r approaches h(e1) as r grows."""
        kernel = krw_measure(load("uniform2d"))
        table = green_table(kernel, 0, 40, eps_stop=1e-40)
        slope = -(math.log(table.value((36, 0), 0)) - math.log(table.value((24, 0), 0))) / 12.0
        gamma = support_value(kernel, [1.0, 0.0]).h
        self.assertAlmostEqual(slope, gamma, delta=0.02 * gamma)

    def test_nothing_escapes_a_large_box(self):
        """Test no mass is counted as escaped when the box covers every reachable site."""
        kernel = krw_measure(load("uniform2d"))
        table = green_table(kernel, 0, 40, eps_stop=1e-40)
        self.assertEqual(table.escaped_mass, 0.0)
        self.assertLessEqual(table.tail_bound, 1e-40)
        self.assertLessEqual(table.error_bound, 2.0 * table.tail_bound + 1e-300)

    def test_clipped_box_counts_escaped_mass(self):
        """Test a box smaller than the reach reports the mass lost at its faces."""
        kernel = krw_measure(load("uniform2d"))
        settings = DEFAULT_SETTINGS.with_overrides(max_cells=11 * 11)
        table = green_table(kernel, 0, 5, eps_stop=1e-12, settings=settings)
        self.assertGreater(table.escaped_mass, 1e-6)
        self.assertGreater(table.error_bound, table.escaped_mass)

    def test_dump_sidecar(self):
        """Test the table CSV and its metadata file."""
        table = green_table(krw_measure(load("uniform2d")), 0, 3)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "green.csv")
            sidecar = dump_green_table(path, table)
            with open(sidecar, encoding="utf-8") as handle:
                meta = dict(line.rstrip("\n").split(": ", 1) for line in handle)
            with open(path, encoding="utf-8") as handle:
                header = handle.readline().strip()
        self.assertEqual(header, "x_1,x_2,color,value")
        self.assertEqual(meta["source_color"], "1")
        self.assertEqual(meta["box_radius"], "3")
        self.assertEqual(int(meta["steps"]), table.steps)


class TestGreenOperator(unittest.TestCase):
    """Test cases for G as the inverse of the massive Laplacian."""

    def test_inverse_identity(self):
        """Test T G^T v = -v for random compactly supported v."""
        spec = load("uniform2d")
        table = green_table(krw_measure(spec), 0, 20)
        rng = np.random.default_rng(11)
        for _ in range(20):
            v = {}
            for _ in range(5):
                point = tuple(int(c) for c in rng.integers(-3, 4, size=2))
                v[point + (0,)] = float(rng.uniform(-1.0, 1.0))
            image = green_transpose_apply(table, v)
            residual = field_add(apply_T(spec, image), v)
            self.assertLessEqual(sup_norm(residual), table.tail_bound + 1e-9)

    def test_non_negative_input(self):
        """Test G^T maps non-negative fields to non-negative fields."""
        table = green_table(krw_measure(load("fig1")), 0, 8)
        image = green_transpose_apply(table, {(0, 0, 0, 0): 1.0, (2, 0, -1, 0): 0.5})
        self.assertTrue(all(value >= 0.0 for value in image.values()))

    def test_missing_source_table(self):
        """Test every color in v needs a table."""
        table = green_table(krw_measure(load("fig1")), 0, 4)
        with self.assertRaises(SpecValidationError):
            green_transpose_apply(table, {(0, 0, 0, 2): 1.0})


class TestInterpolation(unittest.TestCase):
    """Test cases for the tent-weighted extension to real points."""

    def test_lattice_points(self):
        """Test the extension agrees with the table on lattice points."""
        table = green_table(krw_measure(load("uniform2d")), 0, 10)
        for x in [(0, 0), (3, -2), (-8, 9)]:
            self.assertAlmostEqual(green_interp(table, x, 0), table.value(x, 0), places=15)

    def test_constant_table(self):
        """Test a constant table interpolates to the same constant."""
        table = GreenTable(0, 4, np.full((1, 9, 9), 3.0), 1e-16, 0.0, 0.0, 0.0, 0, (0, 0))
        for x in [(0.5, 0.0), (1.25, -2.75), (-2.9, 0.1)]:
            self.assertAlmostEqual(green_interp(table, x, 0), 3.0, places=12)

    def test_between_corners(self):
        """Test interpolated values stay between the corner values."""
        table = green_table(krw_measure(load("uniform2d")), 0, 10)
        rng = np.random.default_rng(5)
        for _ in range(50):
            x = rng.uniform(-8.0, 8.0, size=2)
            base = np.floor(x).astype(int)
            corners = [table.value(base + np.array(c), 0) for c in [(0, 0), (1, 0), (0, 1), (1, 1)]]
            value = green_interp(table, x, 0)
            self.assertGreaterEqual(value, min(corners) - 1e-15)
            self.assertLessEqual(value, max(corners) + 1e-15)

    def test_outside_box(self):
        """Test points beyond the interpolation box are refused."""
        table = green_table(krw_measure(load("uniform2d")), 0, 5)
        with self.assertRaises(InsufficientBoxError):
            green_interp(table, (4.5, 0.0), 0)


class TestSandwich(unittest.TestCase):
    """Test cases for the radius sandwich around the simulated shape."""

    @classmethod
    def setUpClass(cls):
        cls.spec = load("uniform2d")
        cls.kernel = krw_measure(cls.spec)
        cls.table = green_table(cls.kernel, 0, 30)
        cls.alpha, cls.beta = threshold_constants(cls.spec, cls.table)

    def test_default_box_radius(self):
        """Test the default box reaches the decay length of N."""
        radius = default_box_radius(self.kernel, 1e12, self.beta)
        expected = math.ceil(math.log(1e12 / 8.0) / GAMMA_AXIS_2D) + 10
        self.assertGreaterEqual(radius, expected - 1)
        self.assertLessEqual(radius, expected)

    def test_min_decay_rate(self):
        """Test the slowest decay over axis and diagonal directions is along the axis."""
        rate = min_decay_rate(self.kernel, [[1.0, 0.0], [1.0, 1.0]])
        self.assertAlmostEqual(rate, GAMMA_AXIS_2D, places=7)

    def test_radii_are_ordered(self):
        """Test r <= R along several directions and both grow with N."""
        previous = None
        for N in (1e6, 1e9, 1e12):
            inner, outer = radii(self.table, [1.0, 0.0], N, self.alpha, self.beta)
            self.assertLess(inner, outer)
            if previous is not None:
                self.assertGreater(inner, previous[0])
                self.assertGreater(outer, previous[1])
            previous = (inner, outer)
        for u in ([1.0, 1.0], [0.3, -1.0]):
            inner, outer = radii(self.table, u, 1e9, self.alpha, self.beta)
            self.assertLess(inner, outer)

    def test_radii_need_a_precise_table(self):
        """Test thresholds below the table error are refused."""
        coarse = green_table(self.kernel, 0, 30, eps_stop=1e-6)
        with self.assertRaises(InsufficientBoxError):
            radii(coarse, [1.0, 0.0], 1e12, self.alpha, self.beta)

    def test_radii_need_a_large_box(self):
        """Test a box smaller than the outer radius is refused."""
        small = green_table(self.kernel, 0, 6)
        with self.assertRaises(InsufficientBoxError):
            radii(small, [1.0, 0.0], 1e12, self.alpha, self.beta)

    def test_no_violations(self):
        """Test the simulated shape lies between the two Green level sets."""
        for N in (1e4, 1e8, 1e12):
            _, odo = stabilize(self.spec, point_source(self.spec, N))
            violations = sandwich_violations(self.table, shape(odo), self.alpha, self.beta, N)
            self.assertEqual(violations, [], f"N={N:g}")

    def test_no_violations_four_colors(self):
        """Test the sandwich on the four-color model."""
        spec = load("fig1")
        kernel = krw_measure(spec)
        table = green_table(kernel, 0, 16)
        alpha, beta = threshold_constants(spec, table)
        for N in (1e4, 1e8):
            _, odo = stabilize(spec, point_source(spec, N))
            self.assertEqual(sandwich_violations(table, shape(odo), alpha, beta, N), [], f"N={N:g}")

    def test_no_violations_four_colors_large_N(self):
        """Test the four-color sandwich at N = 1e12 with a table sized for it."""
        spec = load("fig1")
        kernel = krw_measure(spec)
        N = 1e12
        coarse = green_table(kernel, 0, 16)
        _, beta = threshold_constants(spec, coarse)
        table = green_table(kernel, 0, default_box_radius(kernel, N, beta), eps_stop=1e-6 * beta / N)
        alpha, beta = threshold_constants(spec, table)
        _, odo = stabilize(spec, point_source(spec, N))
        self.assertEqual(sandwich_violations(table, shape(odo), alpha, beta, N), [])

    def test_radius_gap_is_bounded(self):
        """Test R - r stays flat in log N and below log(alpha/beta)/gamma plus half a site."""
        Ns = np.logspace(3, 12, 46)
        table = self.table_for(Ns[-1])
        gaps = []
        for N in Ns:
            inner, outer = radii(table, [1.0, 0.0], N, self.alpha, self.beta)
            gaps.append(outer - inner)
        slope = np.polyfit(np.log(Ns), gaps, 1)[0]
        self.assertLessEqual(abs(slope), 0.02)
        self.assertLessEqual(max(gaps), math.log(self.alpha / self.beta) / GAMMA_AXIS_2D + 0.5)

    def test_radii_need_positive_N(self):
        """Test a non-positive N is refused."""
        for N in (0.0, -5.0):
            with self.assertRaises(SpecValidationError):
                radii(self.table, [1.0, 0.0], N, self.alpha, self.beta)

    def test_simulated_extent_within_radii(self):
        """Test the simulated axis extent lies within the sandwich radii."""
        N = 1e12
        inner, outer = radii(self.table, [1.0, 0.0], N, self.alpha, self.beta)
        _, odo = stabilize(self.spec, point_source(self.spec, N))
        extent = radial_extents(shape(odo).points, [[1.0, 0.0]], 0.1)[0]
        self.assertGreaterEqual(extent.outer, inner - 1.5)
        self.assertLessEqual(extent.outer, outer + 1.5)

    def test_log_n_scaling(self):
        """Test radii over log N move toward 1/gamma as N grows."""
        ratios = []
        for N in (1e6, 1e12, 1e40):
            inner, outer = radii(self.table_for(N), [1.0, 0.0], N, self.alpha, self.beta)
            ratios.append(0.5 * (inner + outer) / math.log(N))
        target = 1.0 / GAMMA_AXIS_2D
        self.assertLess(abs(ratios[1] - target), abs(ratios[0] - target))
        self.assertLess(abs(ratios[2] - target), abs(ratios[1] - target))
        self.assertLess(abs(ratios[1] - target), 0.25 * target)

    def test_extrapolated_radius(self):
        """Test the three-term radius law fitted on small N predicts a larger N."""
        Ns = [1e8, 1e12, 1e16, 1e20]
        table = self.table_for(1e30)
        measured = [radii(table, [1.0, 0.0], N, self.alpha, self.beta)[1] for N in Ns]
        c0 = fit_radius_offset(GAMMA_AXIS_2D, 2, Ns, measured)
        target = radii(table, [1.0, 0.0], 1e30, self.alpha, self.beta)[1]
        self.assertAlmostEqual(predicted_radius(GAMMA_AXIS_2D, 2, 1e30, c0), target, delta=0.5)

    def table_for(self, N):
        radius = default_box_radius(self.kernel, N, self.beta)
        return green_table(self.kernel, 0, radius, eps_stop=min(1e-16, 1e-6 * self.beta / N))


if __name__ == "__main__":
    unittest.main()
