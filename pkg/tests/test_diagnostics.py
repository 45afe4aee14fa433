import sys, os, unittest

import numpy as np

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "../src")))
from bspline_hazard import build_basis
from diagnostics import (
    ar_spectral_density_at_zero,
    cumulative_incidence,
    diagnose_chains,
    gelman_rubin,
    geweke,
    replication_metrics,
    report_frame,
    response_profile,
    spectral_density_at_zero,
    summarize,
)
from grm import category_probs
from jmirt_architecture import CauseParams, ConfigurationError, ParameterState, PosteriorSummary, SubjectData
from model_config import default_model_spec
from simulator import SETTING_I_ITEMS


class TestGeweke(unittest.TestCase):
    def test_constant_chain_is_degenerate(self):
        result = geweke(np.full(500, 0.3))
        self.assertTrue(result.degenerate)
        self.assertIsNone(result.z)
        self.assertFalse(result.flagged())

    def test_stationary_chain(self):
        chain = np.random.default_rng(11).normal(size=5000)
        self.assertLess(abs(geweke(chain).z), 4.0)

    def test_trend_is_flagged(self):
        rng = np.random.default_rng(12)
        chain = np.linspace(0.0, 3.0, 2000) + rng.normal(scale=0.5, size=2000)
        self.assertTrue(geweke(chain).flagged())

    def test_short_chain(self):
        with self.assertRaises(ConfigurationError):
            geweke(np.zeros(50))

    def test_spectral_density_of_white_noise(self):
        x = np.random.default_rng(4).normal(scale=2.0, size=20000)
        self.assertAlmostEqual(spectral_density_at_zero(x, lag_fraction=0.001) / 4.0, 1.0, delta=0.1)
        self.assertAlmostEqual(ar_spectral_density_at_zero(x) / 4.0, 1.0, delta=0.05)

    def test_ar_spectral_density_of_autoregression(self):
        rng = np.random.default_rng(5)
        noise = rng.normal(size=40000)
        x = np.empty_like(noise)
        x[0] = noise[0]
        for t in range(1, len(x)):
            x[t] = 0.5 * x[t - 1] + noise[t]
        self.assertAlmostEqual(ar_spectral_density_at_zero(x) / 4.0, 1.0, delta=0.1)

    def test_iid_chains_are_calibrated(self):
        rng = np.random.default_rng(2024)
        z = np.array([geweke(rng.standard_normal(10000)).z for _ in range(1000)])
        self.assertGreaterEqual(np.mean(np.abs(z) < 1.96), 0.94)

    def test_bartlett_option(self):
        chain = np.random.default_rng(6).normal(size=5000)
        self.assertLess(abs(geweke(chain, spectrum="bartlett").z), 4.0)
        with self.assertRaises(ConfigurationError):
            geweke(chain, spectrum="parzen")


class TestGelmanRubin(unittest.TestCase):
    def test_identical_chains(self):
        chain = np.random.default_rng(1).normal(size=1000)
        value = gelman_rubin([chain, chain.copy()])
        self.assertLessEqual(value, 1.0)
        self.assertGreater(value, 0.999)

    def test_separated_chains(self):
        rng = np.random.default_rng(2)
        self.assertGreater(gelman_rubin([rng.normal(size=500), rng.normal(loc=3.0, size=500)]), 1.5)

    def test_constant_chains(self):
        self.assertEqual(gelman_rubin([np.ones(200), np.ones(200)]), 1.0)
        self.assertEqual(gelman_rubin([np.ones(200), np.zeros(200)]), float("inf"))
        with self.assertRaises(ConfigurationError):
            gelman_rubin([np.ones(200)])

    def test_table(self):
        rng = np.random.default_rng(3)
        draws = rng.normal(size=(400, 2))
        draws[:, 1] = 1.0
        frame = diagnose_chains([draws, draws.copy()], ["beta[1]", "D[1,1]"])
        self.assertEqual(list(frame.columns), ["parameter", "geweke_1", "geweke_2", "rhat", "degenerate", "flagged"])
        self.assertFalse(frame.loc[0, "degenerate"])
        self.assertTrue(frame.loc[1, "degenerate"])
        self.assertLessEqual(frame.loc[0, "rhat"], 1.0)
        self.assertEqual(frame.loc[1, "rhat"], 1.0)
        self.assertFalse(frame.loc[1, "flagged"])


class TestSummaries(unittest.TestCase):
    def test_summarize(self):
        draws = np.column_stack([np.arange(1, 101, dtype=float), np.full(100, 2.0)])
        summary = summarize(draws, ["x", "y"])
        self.assertAlmostEqual(summary.mean[0], 50.5)
        self.assertAlmostEqual(summary.lower[0], 1.0 + 0.025 * 99)
        self.assertAlmostEqual(summary.upper[0], 1.0 + 0.975 * 99)
        self.assertEqual(summary.sd[1], 0.0)

    def test_few_draws_warn(self):
        with self.assertLogs("jmirt.diagnostics", level="WARNING"):
            summarize(np.zeros((5, 1)), ["x"])

    def test_replication_metrics(self):
        summaries = [
            PosteriorSummary(["x", "y"], np.array([1.0, 5.0]), np.ones(2), np.array([0.5, 4.0]), np.array([2.5, 6.0])),
            PosteriorSummary(["x", "y"], np.array([3.0, 7.0]), np.ones(2), np.array([2.5, 6.0]), np.array([3.5, 8.0])),
        ]
        report = replication_metrics(summaries, {"x": 2.0, "y": None, "z": 1.0}, n_failed=1)
        x = report.row("x")
        self.assertAlmostEqual(x.bias, 0.0)
        self.assertAlmostEqual(x.rmse, 1.0)
        self.assertAlmostEqual(x.coverage, 0.5)
        self.assertEqual(x.n_used, 2)
        self.assertTrue(np.isnan(report.row("y").bias))
        self.assertAlmostEqual(report.row("y").mean_estimate, 6.0)
        with self.assertRaises(KeyError):
            report.row("z")
        self.assertEqual((report.n_replications, report.n_failed), (3, 1))
        frame = report_frame(report)
        self.assertEqual(list(frame.columns), ["parameter", "True", "Bias", "RMSE", "COV", "Est."])
        self.assertEqual(frame["parameter"].tolist(), ["x", "y"])

    def test_no_successful_replication(self):
        with self.assertRaises(ConfigurationError):
            replication_metrics([], {"x": 1.0})


class TestCurves(unittest.TestCase):
    def test_response_profile(self):
        spec = default_model_spec()
        basis = build_basis(20.0)
        state = ParameterState(
            beta=[0.15, 0.4],
            lam=[-0.25, 0.1],
            items=SETTING_I_ITEMS,
            random_effects=np.zeros((1, 1)),
            D=[[2.25]],
            causes=[CauseParams([-1.0], [-0.25], np.full(12, -3.0)), CauseParams([-0.75], [0.25], np.full(12, -3.0))],
        )
        frame = response_profile(state, spec, basis, item=2, times=[0.0, 10.0, 20.0], covariates=[1.0])
        probs = frame[["p1", "p2", "p3", "p4"]].to_numpy()
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(frame["eta"], 0.15 * frame["time"] + 0.4 + 0.45, atol=1e-12)
        np.testing.assert_allclose(probs[1], category_probs(SETTING_I_ITEMS[1], 1.5 + 0.85), atol=1e-12)
        with self.assertRaises(ConfigurationError):
            response_profile(state, spec, basis, item=4, times=[0.0], covariates=[1.0])

    def test_cumulative_incidence(self):
        subject = lambda i, t, causes: SubjectData(i, [0.0], [[1, 1, 1]], [0.0], t, causes)
        dataset = [subject(1, 1.0, [1, 0]), subject(2, 2.0, [0, 1]), subject(3, 3.0, [0, 0]), subject(4, 4.0, [1, 0])]
        frame = cumulative_incidence(dataset, [0.0, 1.0, 2.5, 5.0])
        np.testing.assert_allclose(frame["cause_1"], [0.0, 0.25, 0.25, 0.75])
        np.testing.assert_allclose(frame["cause_2"], [0.0, 0.0, 0.25, 0.25])

    def test_incidence_without_events(self):
        dataset = [SubjectData(1, [0.0], [[1]], [0.0], 20.0, [0, 0])]
        frame = cumulative_incidence(dataset, [5.0, 20.0])
        self.assertEqual(frame[["cause_1", "cause_2"]].to_numpy().sum(), 0.0)
        with self.assertRaises(ConfigurationError):
            cumulative_incidence([], [1.0])


if __name__ == "__main__":
    unittest.main()
