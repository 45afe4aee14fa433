import sys, os, unittest

import numpy as np

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "../src")))
from bspline_hazard import build_basis, eval_basis, eval_basis_matrix, log_h0, penalty, project_log_hazard
from jmirt_architecture import ConfigurationError, DomainRangeError


def cox_de_boor(knots, degree, u, t):
    """Recursive evaluation of the u-th basis function, right end closed."""
    if degree == 0:
        if knots[u] <= t < knots[u + 1]:
            return 1.0
        last = len(knots) - 1
        # closed right boundary: the last non-empty interval owns t = domain_max
        if t == knots[-1] and knots[u] < knots[u + 1] == knots[last]:
            return 1.0
        return 0.0
    value = 0.0
    left = knots[u + degree] - knots[u]
    if left > 0:
        value += (t - knots[u]) / left * cox_de_boor(knots, degree - 1, u, t)
    right = knots[u + degree + 1] - knots[u + 1]
    if right > 0:
        value += (knots[u + degree + 1] - t) / right * cox_de_boor(knots, degree - 1, u + 1, t)
    return value


class TestBasis(unittest.TestCase):
    def setUp(self):
        self.basis = build_basis(20.0, n_basis=12, degree=3)

    def test_knot_vector(self):
        self.assertEqual(len(self.basis.knots), 12 + 3 + 1)
        np.testing.assert_allclose(self.basis.knots[:4], 0.0)
        np.testing.assert_allclose(self.basis.knots[-4:], 20.0)

    def test_partition_of_unity(self):
        grid = np.linspace(0.0, 20.0, 501)
        B = eval_basis_matrix(self.basis, grid)
        self.assertEqual(B.shape, (501, 12))
        self.assertTrue(np.all(B >= 0))
        np.testing.assert_allclose(B.sum(axis=1), 1.0, atol=1e-12)

    def test_matches_recursion(self):
        for t in [0.0, 0.3, 2.5, 7.77, 11.0, 19.999, 20.0]:
            expected = [cox_de_boor(self.basis.knots, 3, u, t) for u in range(12)]
            np.testing.assert_allclose(eval_basis(self.basis, t), expected, atol=1e-12)

    def test_domain(self):
        with self.assertRaises(DomainRangeError):
            eval_basis(self.basis, 20.0 + 1e-9)
        with self.assertRaises(DomainRangeError):
            eval_basis(self.basis, -0.1)
        with self.assertRaises(ConfigurationError):
            build_basis(10.0, n_basis=3, degree=3)
        with self.assertRaises(ConfigurationError):
            build_basis(0.0)

    def test_log_h0_scalar_and_vector(self):
        coeffs = np.full(12, -2.0)
        self.assertAlmostEqual(log_h0(self.basis, coeffs, 5.0), -2.0, places=12)
        values = log_h0(self.basis, coeffs, np.array([0.0, 20.0]))
        np.testing.assert_allclose(values, [-2.0, -2.0], atol=1e-12)
        with self.assertRaises(ConfigurationError):
            log_h0(self.basis, np.zeros(11), 1.0)

    def test_projection_reproduces_cubic(self):
        cubic = lambda t: -3.0 + 0.2 * t - 0.01 * t**2 + 0.0005 * t**3
        coeffs = project_log_hazard(self.basis, cubic)
        grid = np.linspace(0.0, 20.0, 37)
        np.testing.assert_allclose(log_h0(self.basis, coeffs, grid), cubic(grid), atol=1e-9)


class TestPenalty(unittest.TestCase):
    def test_rank_and_null_space(self):
        K = penalty(12, r=2)
        self.assertEqual(K.rank, 10)
        np.testing.assert_allclose(K.matrix, K.matrix.T)
        self.assertAlmostEqual(K.quadratic_form(np.ones(12)), 0.0, places=12)
        self.assertAlmostEqual(K.quadratic_form(np.arange(12.0)), 0.0, places=10)
        self.assertGreater(K.quadratic_form(np.arange(12.0) ** 2), 0.0)

    def test_second_order_three_coefficients(self):
        K = penalty(3, r=2)
        expected = [[1.0, -2.0, 1.0], [-2.0, 4.0, -2.0], [1.0, -2.0, 1.0]]
        for row, expected_row in zip(K.matrix, expected):
            for value, target in zip(row, expected_row):
                self.assertAlmostEqual(value, target, places=14)
        self.assertEqual(K.rank, 1)

    def test_first_order(self):
        K = penalty(5, r=1)
        self.assertEqual(K.rank, 4)
        self.assertAlmostEqual(K.quadratic_form([0, 1, 0, 0, 0]), 2.0)

    def test_invalid(self):
        with self.assertRaises(ConfigurationError):
            penalty(2, r=2)
        with self.assertRaises(ConfigurationError):
            penalty(5, r=0)


if __name__ == "__main__":
    unittest.main()
