"""
Tests for the Laplace transform matrix, its spectral radius and the level set {rho = 1}.
"""
import math
import os
import tempfile
import unittest

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from src.errors import BracketError, OverflowGuardError
from src.kernel import krw_measure, load_model_spec, non_killed, with_leakiness
from src.spectral import (
    SpectralSolver,
    boundary_ray,
    doob_kernel,
    dump_boundary_samples,
    finite_difference_gradient,
    finite_difference_hessian,
    hessian_at,
    laplace_matrix,
    rho_at,
    spectral_radius,
    support_value,
)

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")

GAMMA_AXIS_2D = math.acosh(3.0)


def load(name):
    with open(os.path.join(FIXTURES, name + ".model"), encoding="utf-8") as handle:
        return load_model_spec(handle.read())


def kernel_of(name):
    return krw_measure(load(name))


coordinate = st.floats(min_value=-1.0, max_value=1.0, allow_nan=False)
points_3d = st.tuples(coordinate, coordinate, coordinate)


class TestLaplaceMatrix(unittest.TestCase):
    """Test cases for L(t) and its spectral radius."""

    def test_fig1_at_zero(self):
        """Test L(0) of the four-color model and rho(0) = sqrt(3/8)."""
        kernel = kernel_of("fig1")
        matrix = laplace_matrix(kernel, np.zeros(3))
        np.testing.assert_allclose(matrix[0], [0.0, 0.25, 0.25, 0.25])
        np.testing.assert_allclose(matrix[1:, 0], [0.5, 0.5, 0.5])
        self.assertAlmostEqual(rho_at(kernel, np.zeros(3)).rho, math.sqrt(3.0 / 8.0), places=11)

    def test_square_lattice(self):
        """Test rho(t) = (cosh t1 + cosh t2)/4 for the uniform planar model."""
        kernel = kernel_of("uniform2d")
        for t in ([0.0, 0.0], [0.3, -1.2], [1.7, 0.4]):
            expected = (math.cosh(t[0]) + math.cosh(t[1])) / 4.0
            self.assertAlmostEqual(rho_at(kernel, t).rho, expected, places=12)

    def test_perron_residual(self):
        """Test the right Perron vector solves L phi = rho phi."""
        kernel = kernel_of("fig1")
        t = np.array([0.4, -0.2, 0.9])
        point = rho_at(kernel, t)
        matrix = laplace_matrix(kernel, t)
        residual = np.max(np.abs(matrix @ point.right - point.rho * point.right))
        self.assertLessEqual(residual, 1e-10)
        self.assertTrue(np.all(point.right > 0))
        self.assertTrue(np.all(point.left > 0))

    def test_one_color_shortcut(self):
        """Test a 1x1 matrix is its own spectral radius."""
        rho, right, left = spectral_radius(np.array([[0.7]]))
        self.assertEqual(rho, 0.7)
        np.testing.assert_allclose(right, [1.0])

    @settings(derandomize=True, max_examples=30, deadline=None)
    @given(points_3d)
    def test_matches_dense_eigenvalues(self, t):
        """Test power iteration agrees with a dense eigenvalue solver."""
        kernel = kernel_of("fig1")
        matrix = laplace_matrix(kernel, t)
        expected = float(np.max(np.abs(np.linalg.eigvals(matrix))))
        self.assertAlmostEqual(rho_at(kernel, t).rho, expected, delta=1e-10 * max(expected, 1.0))

    @settings(derandomize=True, max_examples=30, deadline=None)
    @given(points_3d)
    def test_gradient_matches_finite_differences(self, t):
        """Test the perturbation formula for the gradient of rho."""
        kernel = kernel_of("fig1")
        grad = rho_at(kernel, t).grad
        numeric = finite_difference_gradient(kernel, t)
        np.testing.assert_allclose(grad, numeric, rtol=0.0, atol=1e-6 * (1.0 + np.max(np.abs(grad))))

    @settings(derandomize=True, max_examples=30, deadline=None)
    @given(points_3d, points_3d, st.sampled_from([0.25, 0.5, 0.75]))
    def test_log_convex(self, a, b, lam):
        """Test log rho is convex along segments."""
        kernel = kernel_of("fig1")
        ta, tb = 1.5 * np.array(a), 1.5 * np.array(b)
        mid = rho_at(kernel, lam * ta + (1.0 - lam) * tb).rho
        bound = lam * math.log(rho_at(kernel, ta).rho) + (1.0 - lam) * math.log(rho_at(kernel, tb).rho)
        self.assertLessEqual(math.log(mid), bound + 1e-12)

    def test_overflow_guard(self):
        """Test huge exponents are refused instead of overflowing."""
        with self.assertRaises(OverflowGuardError):
            rho_at(kernel_of("uniform2d"), [800.0, 0.0])


class TestLevelSet(unittest.TestCase):
    """Test cases for boundary rays, support values and the Doob transform."""

    def test_axis_ray_square_lattice(self):
        """Test cosh r = 3 along the axis of the uniform planar model."""
        kernel = kernel_of("uniform2d")
        self.assertAlmostEqual(boundary_ray(kernel, [1.0, 0.0]), GAMMA_AXIS_2D, places=9)
        self.assertAlmostEqual(
            boundary_ray(kernel, [1.0, 1.0]), math.sqrt(2.0) * math.acosh(2.0), places=9
        )

    def test_line(self):
        """Test rho = cosh(t)/m on Z gives r* = arccosh(2) at m = 2."""
        kernel = kernel_of("uniform1d")
        self.assertAlmostEqual(rho_at(kernel, [0.5]).rho, math.cosh(0.5) / 2.0, places=12)
        self.assertAlmostEqual(boundary_ray(kernel, [1.0]), math.acosh(2.0), places=9)
        self.assertAlmostEqual(support_value(kernel, [-1.0]).h, math.acosh(2.0), places=9)

    def test_support_square_lattice(self):
        """Test h(u) on the axis and the diagonal of the uniform planar model."""
        kernel = kernel_of("uniform2d")
        axis = support_value(kernel, [1.0, 0.0])
        self.assertAlmostEqual(axis.h, GAMMA_AXIS_2D, places=7)
        diagonal = support_value(kernel, [1.0, 1.0])
        self.assertAlmostEqual(diagonal.h, math.sqrt(2.0) * math.acosh(2.0), places=7)
        self.assertLessEqual(diagonal.kkt_residual, 1e-8)

    def test_support_dominates_ray(self):
        """Test h(u) >= r*(u) and the maximizer's normal is u."""
        kernel = kernel_of("fig1")
        solver = SpectralSolver(kernel)
        rng = np.random.default_rng(3)
        for _ in range(10):
            u = rng.standard_normal(3)
            u /= np.linalg.norm(u)
            sample = solver.support(u)
            self.assertGreaterEqual(sample.h, solver.boundary_ray(u) - 1e-12)
            self.assertLessEqual(sample.kkt_residual, 1e-6)
            np.testing.assert_allclose(sample.normal, u, atol=1e-6)
            self.assertAlmostEqual(solver.rho(sample.t), 1.0, delta=1e-9)

    def test_support_small_leak(self):
        """Test h(u) off the axes when the leak is tiny and the level set is nearly square."""
        kernel = krw_measure(with_leakiness(load("uniform2d"), 1e8))
        solver = SpectralSolver(kernel)
        u = np.array([0.809, 0.588]) / np.linalg.norm([0.809, 0.588])
        sample = solver.support(u)
        self.assertLessEqual(sample.kkt_residual, 1e-8)
        self.assertAlmostEqual(solver.rho(sample.t), 1.0, delta=1e-9)
        self.assertGreaterEqual(sample.h, solver.boundary_ray(u) - 1e-12)
        normal = np.sinh(sample.t) / np.linalg.norm(np.sinh(sample.t))
        np.testing.assert_allclose(normal, u, atol=1e-6)
        for angle in np.linspace(0.0, 2.0 * np.pi, 24, endpoint=False):
            v = np.array([np.cos(angle), np.sin(angle)])
            self.assertLessEqual(solver.support(v).kkt_residual, 1e-8)

    def test_hessian_matches_finite_differences(self):
        """Test the perturbation Hessian against differences of the gradient."""
        kernel = kernel_of("fig1")
        u = np.array([0.3, -0.5, 0.8]) / np.linalg.norm([0.3, -0.5, 0.8])
        for t in (np.zeros(3), 0.7 * boundary_ray(kernel, u) * u, boundary_ray(kernel, u) * u):
            np.testing.assert_allclose(
                SpectralSolver(kernel).hessian(t, check=False),
                finite_difference_hessian(kernel, t),
                rtol=1e-4,
                atol=1e-7,
            )

    def test_doob_rows_are_stochastic(self):
        """Test the Doob transform at a boundary point has unit row sums."""
        kernel = kernel_of("fig1")
        u = np.array([1.0, 2.0, -0.5]) / np.linalg.norm([1.0, 2.0, -0.5])
        t = boundary_ray(kernel, u) * u
        doob = doob_kernel(kernel, t)
        np.testing.assert_allclose(doob.row_mass(), np.ones(4), atol=1e-10)
        self.assertTrue(np.all(doob.probs > 0))

    def test_no_leak_has_no_bracket(self):
        """Test a kernel without killing has no boundary ray."""
        with self.assertRaises(BracketError):
            boundary_ray(non_killed(kernel_of("uniform2d")), [1.0, 0.0])

    def test_zero_leak_hessian(self):
        """Test the Hessian of the non-killed rho at 0 is the covariance."""
        hess = hessian_at(non_killed(kernel_of("uniform2d")), np.zeros(2))
        np.testing.assert_allclose(hess, np.diag([0.5, 0.5]), atol=1e-6)
        line = hessian_at(non_killed(kernel_of("uniform1d")), np.zeros(1))
        np.testing.assert_allclose(line, [[1.0]], atol=1e-6)

    def test_dump_boundary_samples(self):
        """Test the boundary sample CSV has one row per direction."""
        kernel = kernel_of("uniform2d")
        samples = [support_value(kernel, u) for u in ([1.0, 0.0], [0.0, 1.0])]
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "boundary.csv")
            dump_boundary_samples(path, samples)
            with open(path, encoding="utf-8") as handle:
                lines = handle.read().splitlines()
        self.assertEqual(lines[0], "u_1,u_2,h,t_1,t_2,kkt_residual")
        self.assertEqual(len(lines), 3)


if __name__ == "__main__":
    unittest.main()
