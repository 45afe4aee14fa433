import sys, os, unittest, tempfile, json
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pandas as pd

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "../src")))
from chain_store import write_chain
from jmirt_architecture import ChainOutput, FitVariant, SamplerSchedule, SubjectData
from main import _fit_spec, build_parser, config_from_args, main
from model_config import RunConfig

DATA_DIR = Path(__file__).resolve().parents[1] / "data"


class TestParser(unittest.TestCase):
    def test_fit_flags(self):
        args = build_parser().parse_args(
            ["fit", "-d", "data/x", "--model", "simpleJMIRT", "--chains", "3", "--thin", "5", "--seed", "4"]
        )
        with patch.dict(os.environ):
            for key in ("JMIRT_SEED", "JMIRT_CHAINS", "JMIRT_WORKERS"):
                os.environ.pop(key, None)
            config = config_from_args(args)
        self.assertEqual(config.subcommand, "fit")
        self.assertEqual(config.variant, FitVariant.SIMPLE)
        self.assertEqual(config.chains, 3)
        self.assertEqual(config.seed, 4)
        self.assertEqual(config.schedule_overrides, {"thin": 5})

    def test_unknown_setting_rejected(self):
        with self.assertRaises(SystemExit):
            build_parser().parse_args(["simulate", "--setting", "IV"])


class TestCommands(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        self.env = patch.dict(os.environ)
        self.env.start()
        for key in ("JMIRT_SEED", "JMIRT_CHAINS", "JMIRT_WORKERS", "JMIRT_OUTPUT_DIR"):
            os.environ.pop(key, None)

    def tearDown(self):
        self.env.stop()
        self.tmp.cleanup()

    def simulate(self, out: Path, seed: int = 5) -> Path:
        code = main(["simulate", "--setting", "IIa", "--n", "15", "--seed", str(seed), "-o", str(out)])
        self.assertEqual(code, 0)
        return out / f"setting_IIa_n15_seed{seed}"

    def test_simulate_is_reproducible(self):
        first = self.simulate(self.root / "a")
        second = self.simulate(self.root / "b")
        for suffix in ("_long.csv", "_subjects.csv", "_truth.json"):
            self.assertEqual(
                Path(f"{first}{suffix}").read_bytes(), Path(f"{second}{suffix}").read_bytes(), suffix
            )
        subjects = pd.read_csv(f"{first}_subjects.csv")
        self.assertEqual(list(subjects.columns), ["id", "T", "delta_1", "delta_2", "w_1"])
        self.assertEqual(len(subjects), 15)

    def test_simulate_needs_seed(self):
        self.assertEqual(main(["simulate", "-o", str(self.root)]), 1)

    def test_fit_missing_data(self):
        self.assertEqual(main(["fit", "-d", str(self.root / "absent"), "-o", str(self.root)]), 1)

    def test_fit_writes_outputs(self):
        prefix = self.simulate(self.root / "data")
        out = self.root / "fit"
        code = main(
            [
                "fit", "-d", str(prefix), "-o", str(out), "--seed", "3", "--chains", "2",
                "--model-spec", str(DATA_DIR / "setting_I_ext.json"),
                "--adaptive", "100", "--burn-in", "20", "--iterations", "40", "--thin", "2",
                "--emit-profile", "--profile-item", "2",
            ]
        )
        self.assertEqual(code, 0)
        for name in ("chain_1.csv", "chain_1.json", "chain_2.csv", "summary.csv", "rhat.csv", "profile_item2.csv"):
            self.assertTrue((out / name).exists(), name)
        draws = pd.read_csv(out / "chain_1.csv")
        self.assertEqual(len(draws), 20)
        self.assertTrue((draws["a[1]"] == 1.0).all())
        profile = pd.read_csv(out / "profile_item2.csv")
        self.assertEqual(len(profile), 101)
        np.testing.assert_allclose(profile[["p1", "p2", "p3", "p4"]].sum(axis=1), 1.0, atol=1e-9)

    def test_diagnose(self):
        rng = np.random.default_rng(0)
        names = ["beta[1]", "a[1]"]
        paths = []
        for c in range(2):
            draws = np.column_stack([rng.normal(size=200), np.ones(200)])
            chain = ChainOutput(names, draws, {}, {}, seed=c, schedule=SamplerSchedule(0, 0, 200, 1))
            paths.append(str(write_chain(chain, self.root / f"chain_{c + 1}")[0]))
        code = main(["diagnose", *paths, "-o", str(self.root / "diag"), "--trace"])
        self.assertEqual(code, 0)
        table = pd.read_csv(self.root / "diag" / "diagnostics.csv")
        self.assertEqual(table["parameter"].tolist(), names)
        self.assertTrue(table.loc[1, "degenerate"])
        trace = pd.read_csv(self.root / "diag" / "trace.csv")
        self.assertEqual(list(trace.columns), ["chain", "draw", *names])
        self.assertEqual(len(trace), 400)

    def test_diagnose_mismatched_chains(self):
        schedule = SamplerSchedule(0, 0, 200, 1)
        first = write_chain(ChainOutput(["x"], np.zeros((200, 1)), {}, {}, 0, schedule), self.root / "c1")[0]
        second = write_chain(ChainOutput(["y"], np.zeros((200, 1)), {}, {}, 1, schedule), self.root / "c2")[0]
        self.assertEqual(main(["diagnose", str(first), str(second), "-o", str(self.root)]), 1)

    def test_incidence_export(self):
        prefix = self.simulate(self.root / "data")
        chain = ChainOutput(["x"], np.random.default_rng(1).normal(size=(150, 1)), {}, {}, 0, SamplerSchedule(0, 0, 150, 1))
        path = write_chain(chain, self.root / "chain_1")[0]
        code = main(["diagnose", str(path), "-d", str(prefix), "--incidence", "-o", str(self.root / "diag")])
        self.assertEqual(code, 0)
        curves = pd.read_csv(self.root / "diag" / "incidence.csv")
        self.assertEqual(list(curves.columns), ["time", "cause_1", "cause_2"])
        self.assertTrue((curves[["cause_1", "cause_2"]].diff().dropna() >= 0).all().all())

    def test_replicate_writes_reports(self):
        out = self.root / "rep"
        code = main(
            [
                "replicate", "--setting", "IIa", "--n", "30", "--replications", "2", "--seed", "1",
                "--adaptive", "100", "--burn-in", "20", "--iterations", "40", "--thin", "2", "-o", str(out),
            ]
        )
        self.assertEqual(code, 0)
        table = pd.read_csv(out / "replication_IIa_extJMIRT.csv")
        self.assertEqual(list(table.columns), ["parameter", "True", "Bias", "RMSE", "COV", "Est."])
        self.assertIn("beta[1]", table["parameter"].tolist())
        document = json.loads((out / "replication_IIa_extJMIRT.json").read_text())
        self.assertEqual(document["n_replications"], 2)
        self.assertEqual(document["seed"], 1)
        self.assertEqual(document["variant"], "extJMIRT")
        self.assertFalse((out / "replication_IIa_simpleJMIRT.csv").exists())


class TestFitSpec(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_items_from_first_subject_with_visits(self):
        dataset = [
            SubjectData(1, [], [], [0.0], 0.5, [0, 1]),
            SubjectData(2, [0.0, 1.0], [[1, 2], [3, 1]], [1.0], 1.5, [1, 0]),
        ]
        with self.assertLogs("jmirt", level="WARNING") as logs:
            spec = _fit_spec(RunConfig(subcommand="fit"), dataset)
        self.assertEqual(spec.n_items, 2)
        self.assertEqual(spec.categories_per_item, [3, 3])
        self.assertIn("largest observed response", logs.output[0])

    def test_categories_from_truth_manifest(self):
        prefix = self.root / "sim"
        manifest = {"model": {"items": [{"a": 1.0, "thresholds": [0.0, -1.0, -2.0, -3.0]}, {"a": 0.8, "thresholds": [0.5]}]}}
        Path(f"{prefix}_truth.json").write_text(json.dumps(manifest))
        dataset = [SubjectData(1, [0.0], [[1, 2]], [0.0], 3.0, [0, 0])]
        config = RunConfig(subcommand="fit", data_path=str(prefix))
        spec = _fit_spec(config, dataset)
        self.assertEqual(spec.categories_per_item, [5, 2])
        json_config = RunConfig(subcommand="fit", data_path=f"{prefix}.json", data_format="json")
        self.assertEqual(_fit_spec(json_config, dataset).categories_per_item, [5, 2])


if __name__ == "__main__":
    unittest.main()
