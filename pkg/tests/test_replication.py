import sys, os, unittest, tempfile
from dataclasses import replace
from pathlib import Path
from unittest.mock import patch

import numpy as np

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "../src")))
from jmirt_architecture import ChainOutput, FitVariant, NumericError, SamplerSchedule
from replication import derive_seed, fit_failure, run_replication, run_replications, write_report
from simulator import setting

SCHEDULE = SamplerSchedule(adaptive=20, burn_in=10, iterations=40, thin=2)


def chain_around(values, seed, shift=0.0, n_draws=60):
    names = list(values)
    centre = np.array([v if v is not None else 0.0 for v in values.values()]) + shift
    rng = np.random.default_rng(seed)
    return ChainOutput(
        parameter_names=names,
        draws=centre + 0.01 * rng.standard_normal((n_draws, len(names))),
        acceptance_rates={},
        proposal_covariances={},
        seed=seed,
        schedule=SCHEDULE,
    )


class TestSeeds(unittest.TestCase):
    def test_derived_seeds(self):
        seeds = [derive_seed(2024, i) for i in range(50)]
        self.assertEqual(seeds, [derive_seed(2024, i) for i in range(50)])
        self.assertEqual(len(set(seeds)), 50)
        self.assertTrue(all(0 <= s < 2**63 for s in seeds))
        self.assertNotEqual(derive_seed(2024, 0), derive_seed(2025, 0))


class TestFitFailure(unittest.TestCase):
    def setUp(self):
        self.values = {"beta[1]": 0.15, "beta[2]": 0.4}

    def test_healthy(self):
        self.assertIsNone(fit_failure([chain_around(self.values, 1), chain_around(self.values, 2)]))

    def test_non_finite(self):
        chain = chain_around(self.values, 1)
        chain.draws[5, 1] = np.nan
        self.assertEqual(fit_failure([chain]), "non-finite draws")

    def test_divergent_chains(self):
        reason = fit_failure([chain_around(self.values, 1), chain_around(self.values, 2, shift=1.0)])
        self.assertIn("R-hat", reason)


class TestReplications(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.model = setting("I")

    def fake_chains(self, data, n_chains, seed):
        variant = FitVariant.EXT if data.spec.n_causes > 1 else FitVariant.SIMPLE
        return [chain_around(self.model.truth(variant), seed + c) for c in range(n_chains)]

    def test_aggregates_both_variants(self):
        with patch("replication.simulate_dataset", return_value=[]), patch(
            "replication.run_chains", side_effect=self.fake_chains
        ), patch("replication.FitData", side_effect=lambda data, spec: type("Fit", (), {"spec": spec})()):
            reports = run_replications(
                self.model, 3, 99, variants=(FitVariant.EXT, FitVariant.SIMPLE), n_chains=2, schedule=SCHEDULE
            )
        ext = reports[FitVariant.EXT]
        self.assertEqual((ext.n_replications, ext.n_failed), (3, 0))
        self.assertAlmostEqual(ext.row("lambda[1]").bias, 0.0, delta=0.01)
        self.assertEqual(ext.row("beta[2]").coverage, 1.0)
        simple = reports[FitVariant.SIMPLE]
        self.assertIsNone(simple.row("gamma[1,1]").true_value)
        self.assertTrue(np.isnan(simple.row("gamma[1,1]").rmse))
        with tempfile.TemporaryDirectory() as tmp:
            path = write_report(ext, Path(tmp) / "report.csv")
            self.assertTrue(path.read_text().startswith("parameter,True,Bias,RMSE,COV,Est."))

    def test_failed_fit_is_counted(self):
        calls = []

        def flaky(data, n_chains, seed):
            calls.append(seed)
            if len(calls) == 2:
                raise NumericError("non-finite log posterior")
            return self.fake_chains(data, n_chains, seed)

        with patch("replication.simulate_dataset", return_value=[]), patch(
            "replication.run_chains", side_effect=flaky
        ), patch("replication.FitData", side_effect=lambda data, spec: type("Fit", (), {"spec": spec})()):
            with self.assertLogs("jmirt.replication", level="WARNING"):
                report = run_replications(self.model, 3, 5, schedule=SCHEDULE)[FitVariant.EXT]
        self.assertEqual((report.n_replications, report.n_failed), (3, 1))
        self.assertEqual(report.row("beta[1]").n_used, 2)
        self.assertEqual(calls, [derive_seed(5, i) for i in range(3)])

    def test_needs_two_replications(self):
        with self.assertRaises(ValueError):
            run_replications(self.model, 1, 0)

    def test_end_to_end_single_replication(self):
        model = replace(self.model, n_subjects=40)
        schedule = SamplerSchedule(adaptive=100, burn_in=20, iterations=40, thin=2, adapt_window=20)
        outcome = run_replication(model, 0, 17, variants=(FitVariant.EXT, FitVariant.SIMPLE), schedule=schedule)
        self.assertEqual(outcome.seed, derive_seed(17, 0))
        self.assertEqual(outcome.failures, {})
        ext = outcome.summaries[FitVariant.EXT]
        self.assertIn("lambda[2]", ext.parameter_names)
        self.assertNotIn("lambda[1]", outcome.summaries[FitVariant.SIMPLE].parameter_names)
        self.assertEqual(ext.row("a[1]")["mean"], 1.0)


if __name__ == "__main__":
    unittest.main()
