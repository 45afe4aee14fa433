import sys, os, unittest

import numpy as np
from scipy.integrate import quad

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "../src")))
from bspline_hazard import build_basis, log_h0
from jmirt_architecture import CauseParams, DomainRangeError, NumericError, SubjectData
from survival import (
    GK15,
    SurvivalDesign,
    cumulative_hazard,
    integrate,
    log_hazard,
    log_lik_survival,
    panel_edges,
)


class TestQuadrature(unittest.TestCase):
    def test_rule(self):
        self.assertEqual(GK15.n_points, 15)
        self.assertAlmostEqual(GK15.weights.sum(), 2.0, places=14)
        np.testing.assert_allclose(GK15.nodes, -GK15.nodes[::-1], atol=1e-16)

    def test_polynomials_exact(self):
        for degree in (0, 3, 10, 22):
            value = integrate(lambda t: t**degree, 2.0)
            self.assertAlmostEqual(value / (2.0 ** (degree + 1) / (degree + 1)), 1.0, places=12)

    def test_panels(self):
        smooth = lambda t: np.exp(-0.3 * t) * np.cos(t)
        reference, _ = quad(smooth, 0.0, 20.0, epsabs=1e-13)
        self.assertAlmostEqual(integrate(smooth, 20.0, panels=8), reference, places=9)

    def test_limits(self):
        self.assertEqual(integrate(np.exp, 0.0), 0.0)
        with self.assertRaises(DomainRangeError):
            integrate(np.exp, -1.0)

    def test_vector_map(self):
        nodes, weights = GK15.map(np.array([1.0, 4.0]))
        self.assertEqual(nodes.shape, (2, 15))
        np.testing.assert_allclose(weights.sum(axis=1), [1.0, 4.0])
        self.assertTrue(np.all((nodes > 0) & (nodes < 4.0)))


class TestHazards(unittest.TestCase):
    def setUp(self):
        self.basis = build_basis(20.0)
        self.flat = CauseParams(gamma=[-1.0], alpha=[-0.25], spline_coeffs=np.full(12, -3.0))
        self.curved = CauseParams(gamma=[0.5], alpha=[0.25], spline_coeffs=np.linspace(-4.0, -1.5, 12))

    def test_constant_hazard_closed_form(self):
        w, b = np.array([1.0]), np.array([0.4])
        rate = np.exp(-3.0 - 1.0 - 0.1)
        self.assertAlmostEqual(log_hazard(self.flat, self.basis, w, b, 7.0), np.log(rate), places=12)
        self.assertAlmostEqual(cumulative_hazard(self.flat, self.basis, w, b, 7.0), 7.0 * rate, places=12)
        self.assertEqual(cumulative_hazard(self.flat, self.basis, w, b, 0.0), 0.0)

    def test_spline_hazard_against_quad(self):
        w, b = np.array([0.0]), np.array([-1.0])
        knots = self.basis.breakpoints
        reference, _ = quad(
            lambda s: np.exp(log_h0(self.basis, self.curved.spline_coeffs, s)),
            0.0, 13.0, points=knots[(knots > 0.0) & (knots < 13.0)], epsabs=1e-14, epsrel=1e-13,
        )
        expected = reference * np.exp(-0.25)
        value = cumulative_hazard(self.curved, self.basis, w, b, 13.0)
        self.assertAlmostEqual(value / expected, 1.0, delta=1e-10)

    def test_random_spline_hazards_match_refined_rule(self):
        rng = np.random.default_rng(20)
        w, b = np.zeros(1), np.zeros(1)
        worst = 0.0
        for n_basis in (6, 12, 15):
            basis = build_basis(20.0, n_basis=n_basis)
            for _ in range(100):
                cause = CauseParams(gamma=[0.0], alpha=[0.0], spline_coeffs=rng.normal(-2.0, 1.0, size=n_basis))
                T = rng.uniform(1.0, 20.0)
                value = cumulative_hazard(cause, basis, w, b, T)
                refined = cumulative_hazard(cause, basis, w, b, T, panels=8)
                worst = max(worst, abs(value / refined - 1.0))
        self.assertLess(worst, 1e-8)

    def test_design_matches_refined_rule(self):
        rng = np.random.default_rng(3)
        basis = build_basis(20.0, n_basis=15)
        times = rng.uniform(1.0, 20.0, size=25)
        dataset = [SubjectData(i + 1, [0.0], [[1]], [0.0], t, [0]) for i, t in enumerate(times)]
        design = SurvivalDesign(dataset, basis)
        cause = CauseParams(gamma=[0.0], alpha=[0.0], spline_coeffs=rng.normal(-2.0, 1.0, size=15))
        refined = [cumulative_hazard(cause, basis, [0.0], [0.0], t, panels=8) for t in times]
        np.testing.assert_allclose(design.baseline_cumulative(cause.spline_coeffs), refined, rtol=1e-8)

    def test_panel_edges_follow_knots(self):
        np.testing.assert_allclose(panel_edges(5.0, breaks=self.basis.breakpoints), [0.0, 20 / 9, 40 / 9, 5.0])
        np.testing.assert_allclose(panel_edges(1.0, panels=2, breaks=self.basis.breakpoints), [0.0, 0.5, 1.0])
        np.testing.assert_allclose(panel_edges(3.0, panels=3), [0.0, 1.0, 2.0, 3.0])

    def test_errors(self):
        with self.assertRaises(DomainRangeError):
            cumulative_hazard(self.flat, self.basis, [0.0], [0.0], -1.0)
        overflow = CauseParams(gamma=[800.0], alpha=[0.0], spline_coeffs=np.zeros(12))
        with self.assertRaises(NumericError):
            cumulative_hazard(overflow, self.basis, [1.0], [0.0], 1.0)

    def test_log_lik_constant_hazards(self):
        subject = SubjectData(1, [0.0], [[1]], [1.0], 5.0, [0, 1])
        b = np.array([0.2])
        value = log_lik_survival(subject, [self.flat, self.flat], self.basis, b)
        log_rate = -3.0 - 1.0 - 0.25 * 0.2
        self.assertAlmostEqual(value, log_rate - 2 * 5.0 * np.exp(log_rate), places=12)

    def test_design_matches_subject_path(self):
        dataset = [
            SubjectData(1, [0.0], [[1]], [1.0], 5.0, [0, 1]),
            SubjectData(2, [0.0], [[1]], [0.0], 19.5, [0, 0]),
            SubjectData(3, [0.0], [[1]], [1.0], 0.0, [1, 0]),
        ]
        b = np.array([[0.3], [-1.2], [0.0]])
        causes = [self.curved, self.flat]
        design = SurvivalDesign(dataset, self.basis)
        vectorized = sum(design.log_lik(p, causes[p], b) for p in range(2))
        scalar = [log_lik_survival(s, causes, self.basis, b[i]) for i, s in enumerate(dataset)]
        np.testing.assert_allclose(vectorized, scalar, rtol=1e-12, atol=1e-12)


if __name__ == "__main__":
    unittest.main()
