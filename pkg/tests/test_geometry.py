"""
Tests for convex hulls, polar duality and set distances.
"""
import math
import unittest

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from src.errors import GeometryError
from src.geometry import (
    convex_hull,
    direction_grid,
    hausdorff,
    origin_is_interior,
    polar_dual,
    radial_function,
    sample_polytope,
    spherical_gap,
    star_body,
    support_function,
    toothpick_fixture,
)
from src.models import Ellipsoid, StarBody

SQUARE = np.array([[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]])
DIAMOND = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
OCTAHEDRON = np.vstack([np.eye(3), -np.eye(3)])

planar_points = st.lists(
    st.tuples(st.integers(-20, 20), st.integers(-20, 20)), min_size=3, max_size=40
)


def random_body(rng, d, count=12):
    """Points at random radii in [0.5, 2] around a small cross-polytope."""
    directions = rng.normal(size=(count, d))
    directions /= np.linalg.norm(directions, axis=1)[:, None]
    shell = directions * rng.uniform(0.5, 2.0, count)[:, None]
    return np.vstack([shell, 0.2 * np.eye(d), -0.2 * np.eye(d)])


def random_rotation(rng, d):
    q, r = np.linalg.qr(rng.normal(size=(d, d)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


class TestConvexHull(unittest.TestCase):
    """Test cases for hulls in dimensions 1 to 3."""

    def test_square_with_interior_points(self):
        """Test interior and edge points are not vertices."""
        points = np.vstack([SQUARE, [[0.0, 0.0], [0.5, -0.2], [1.0, 0.0]]])
        hull = convex_hull(points)
        self.assertEqual({tuple(v) for v in hull.vertices.tolist()}, {tuple(v) for v in SQUARE.tolist()})
        self.assertEqual(hull.normals.shape, (4, 2))
        np.testing.assert_allclose(hull.offsets, np.ones(4))

    def test_octahedron(self):
        """Test the 3-d hull of +-e_k has six vertices and eight facets."""
        hull = convex_hull(np.vstack([OCTAHEDRON, np.zeros((1, 3))]))
        self.assertEqual(hull.vertices.shape[0], 6)
        self.assertEqual(hull.normals.shape[0], 8)
        np.testing.assert_allclose(hull.offsets, np.full(8, 1.0 / math.sqrt(3.0)))

    def test_cube_facets_are_merged(self):
        """Test coplanar triangles of a cube merge into six facets."""
        cube = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=float)
        hull = convex_hull(cube)
        self.assertEqual(hull.normals.shape[0], 6)

    def test_segment(self):
        """Test the hull of points on a line is an interval in d = 1."""
        hull = convex_hull([[2.0], [-1.0], [0.5]])
        np.testing.assert_allclose(hull.vertices.ravel(), [-1.0, 2.0])
        self.assertTrue(hull.contains([[0.0]])[0])
        self.assertFalse(hull.contains([[2.5]])[0])

    def test_degenerate_inputs(self):
        """Test collinear planar points and coplanar spatial points are flagged."""
        self.assertTrue(convex_hull([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]).degenerate)
        self.assertTrue(convex_hull([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]]).degenerate)
        with self.assertRaises(GeometryError):
            convex_hull(np.zeros((0, 2)))

    @settings(derandomize=True, max_examples=100)
    @given(planar_points)
    def test_vertices_are_extreme(self, points):
        """Test every input lies in the hull and no vertex lies in the hull of the others."""
        points = np.array(points, dtype=float)
        hull = convex_hull(points)
        if hull.degenerate:
            return
        self.assertTrue(np.all(hull.contains(points, tol=1e-9)))
        for k in range(hull.vertices.shape[0]):
            others = np.delete(hull.vertices, k, axis=0)
            reduced = convex_hull(others)
            if reduced.degenerate:
                continue
            self.assertFalse(reduced.contains(hull.vertices[k:k + 1], tol=-1e-9)[0])

    def test_origin_interior(self):
        """Test the origin test on hulls that do and do not surround it."""
        self.assertTrue(origin_is_interior(DIAMOND))
        self.assertFalse(origin_is_interior(DIAMOND + 2.0))
        self.assertFalse(origin_is_interior([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]))
        cross_polytope = np.vstack([np.eye(4), -np.eye(4)])
        self.assertTrue(origin_is_interior(cross_polytope))
        self.assertFalse(origin_is_interior(cross_polytope + 2.0))
        self.assertFalse(origin_is_interior(np.eye(4)))


class TestDuality(unittest.TestCase):
    """Test cases for polar duals."""

    def test_square_and_diamond(self):
        """Test the square [-1,1]^2 and the diamond |x|_1 <= 1 are dual."""
        dual = polar_dual(convex_hull(SQUARE))
        self.assertEqual(
            {tuple(np.round(v, 12) + 0.0) for v in dual.vertices.tolist()},
            {tuple(v) for v in DIAMOND.tolist()},
        )

    def test_involution(self):
        """Test K** = K for a random polygon around the origin."""
        rng = np.random.default_rng(2)
        angles = 2.0 * math.pi * np.arange(9) / 9 + rng.uniform(-0.2, 0.2, 9)
        radii = rng.uniform(0.5, 2.0, 9)
        polygon = convex_hull(np.column_stack([radii * np.cos(angles), radii * np.sin(angles)]))
        twice = polar_dual(polar_dual(polygon))
        directions = direction_grid(2, 90)
        np.testing.assert_allclose(
            radial_function(twice, directions), radial_function(polygon, directions), rtol=1e-9
        )

    def test_involution_random_bodies(self):
        """Test K** = K on random polygons and polyhedra around the origin."""
        rng = np.random.default_rng(11)
        for trial in range(100):
            d = 2 if trial % 2 == 0 else 3
            body = convex_hull(random_body(rng, d))
            twice = polar_dual(polar_dual(body))
            self.assertLessEqual(hausdorff(twice.vertices, body.vertices), 1e-8, f"trial {trial}")

    def test_rotation(self):
        """Test (UK)* = U(K*) for random rotations in the plane and in space."""
        rng = np.random.default_rng(5)
        for d in (2, 3, 2, 3):
            points = random_body(rng, d)
            rotation = random_rotation(rng, d)
            rotated_dual = polar_dual(convex_hull(points @ rotation.T))
            dual_rotated = polar_dual(convex_hull(points)).vertices @ rotation.T
            self.assertLessEqual(hausdorff(rotated_dual.vertices, dual_rotated), 1e-8)

    def test_scaling(self):
        """Test (tK)* = K*/t."""
        directions = direction_grid(2, 45)
        dual = radial_function(polar_dual(convex_hull(SQUARE)), directions)
        scaled = radial_function(polar_dual(convex_hull(3.0 * SQUARE)), directions)
        np.testing.assert_allclose(scaled, dual / 3.0, rtol=1e-12)

    def test_inclusion_reverses(self):
        """Test K1 inside K2 gives K2* inside K1*."""
        directions = direction_grid(2, 60)
        inner = radial_function(polar_dual(convex_hull(DIAMOND)), directions)
        outer = radial_function(polar_dual(convex_hull(SQUARE)), directions)
        self.assertTrue(np.all(outer <= inner + 1e-12))

    def test_ellipsoid(self):
        """Test the dual of {x : x^T A x <= 1} is {x : x^T A^{-1} x <= 1}."""
        matrix = np.array([[4.0, 1.0], [1.0, 2.0]])
        dual = polar_dual(Ellipsoid(matrix))
        np.testing.assert_allclose(dual.matrix, np.linalg.inv(matrix))

    def test_support_function_of_dual(self):
        """Test the radius of K* along u is 1/h_K(u)."""
        hull = convex_hull(OCTAHEDRON)
        directions = direction_grid(3, 50)
        np.testing.assert_allclose(
            radial_function(polar_dual(hull), directions), 1.0 / support_function(hull, directions), rtol=1e-9
        )

    def test_star_body_dual(self):
        """Test a sampled disc with its normals is self-dual."""
        directions = direction_grid(2, 36)
        disc = StarBody(directions, np.ones(36), directions)
        dual = polar_dual(disc)
        np.testing.assert_allclose(dual.radii, np.ones(36))

    def test_dual_needs_interior_origin(self):
        """Test a polytope not surrounding the origin has no dual."""
        with self.assertRaises(GeometryError):
            polar_dual(convex_hull(SQUARE + 3.0))
        with self.assertRaises(GeometryError):
            polar_dual(StarBody(direction_grid(2, 4), np.ones(4)))


class TestDistances(unittest.TestCase):
    """Test cases for the Hausdorff distance and the spherical gap."""

    def test_hausdorff(self):
        """Test the distance of a set to itself and to a translate."""
        self.assertEqual(hausdorff(SQUARE, SQUARE), 0.0)
        self.assertAlmostEqual(hausdorff(SQUARE, SQUARE + [0.3, 0.0]), 0.3)
        self.assertAlmostEqual(hausdorff([[0.0, 0.0]], [[0.0, 0.0], [3.0, 4.0]]), 5.0)
        with self.assertRaises(GeometryError):
            hausdorff(np.zeros((0, 2)), SQUARE)

    def test_spherical_gap(self):
        """Test the sup of radial differences on a shared grid."""
        directions = direction_grid(2, 12)
        a = StarBody(directions, np.ones(12))
        b = StarBody(directions, np.linspace(1.0, 1.5, 12))
        self.assertAlmostEqual(spherical_gap(a, b), 0.5)
        with self.assertRaises(GeometryError):
            spherical_gap(a, StarBody(direction_grid(2, 13), np.ones(13)))

    def test_toothpick(self):
        """Test pricking along distinct directions: radii settle at 1 while both distances stay 1."""
        directions = direction_grid(2, 360)
        indices = list(range(0, 360, 9))
        ball, ball_points, family = toothpick_fixture(directions, indices, length=2.0)
        radii = np.array([pricked.radii for pricked, _ in family])
        for k in range(directions.shape[0]):
            self.assertLessEqual(int(np.sum(radii[:, k] != 1.0)), 1)
        np.testing.assert_array_equal(radii[-1, :indices[-1]], np.ones(indices[-1]))
        for pricked, points in family:
            self.assertAlmostEqual(spherical_gap(ball, pricked), 1.0)
            self.assertAlmostEqual(hausdorff(ball_points, points), 1.0)
        with self.assertRaises(GeometryError):
            toothpick_fixture(directions, [3, 3])

    def test_hausdorff_is_a_metric(self):
        """Test symmetry and the triangle inequality on random triples of point sets."""
        rng = np.random.default_rng(8)
        for _ in range(50):
            d = int(rng.integers(1, 4))
            a, b, c = (rng.normal(size=(int(rng.integers(1, 30)), d)) for _ in range(3))
            self.assertEqual(hausdorff(a, b), hausdorff(b, a))
            self.assertLessEqual(hausdorff(a, c), hausdorff(a, b) + hausdorff(b, c) + 1e-12)

    def test_circle_and_square(self):
        """Test the unit circle against the square it is inscribed in."""
        angles = 2.0 * np.pi * np.arange(720) / 720
        circle = np.column_stack([np.cos(angles), np.sin(angles)])
        side = np.linspace(-1.0, 1.0, 401)
        square = np.vstack([
            np.column_stack([side, np.ones_like(side)]),
            np.column_stack([side, -np.ones_like(side)]),
            np.column_stack([np.ones_like(side), side]),
            np.column_stack([-np.ones_like(side), side]),
        ])
        self.assertAlmostEqual(hausdorff(circle, square), math.sqrt(2.0) - 1.0, delta=0.01)

    def test_star_body_of_ellipsoid(self):
        """Test sampling an ellipsoid along the axes."""
        body = star_body(Ellipsoid(np.diag([4.0, 1.0])), [[1.0, 0.0], [0.0, 1.0]])
        np.testing.assert_allclose(body.radii, [0.5, 1.0])

    def test_sample_polytope(self):
        """Test grid samples of the diamond stay inside and include the vertices."""
        hull = convex_hull(DIAMOND)
        samples = sample_polytope(hull, 0.25)
        self.assertTrue(np.all(np.abs(samples).sum(axis=1) <= 1.0 + 1e-12))
        for vertex in DIAMOND:
            self.assertTrue(np.any(np.all(np.isclose(samples, vertex), axis=1)))
        self.assertIn(0.0, np.abs(samples).sum(axis=1))

    def test_direction_grid(self):
        """Test the default grids are unit vectors of the documented sizes."""
        self.assertEqual(direction_grid(1).shape, (2, 1))
        for d, count in ((2, 720), (3, 2000), (4, 5000)):
            grid = direction_grid(d)
            self.assertEqual(grid.shape, (count, d))
            np.testing.assert_allclose(np.linalg.norm(grid, axis=1), np.ones(count))
        np.testing.assert_array_equal(direction_grid(4, 10, seed=3), direction_grid(4, 10, seed=3))


if __name__ == "__main__":
    unittest.main()
