import sys, os, unittest, tempfile
from pathlib import Path

import numpy as np

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "../src")))
from dataset_io import collapse_causes, dataset_paths, read_dataset, write_dataset
from jmirt_architecture import (
    MISSING_CATEGORY,
    DatasetParseError,
    DatasetValidationError,
    ModelSpec,
    SubjectData,
)


def small_dataset():
    return [
        SubjectData(1, [0.0, 1.0], [[1, 4], [2, MISSING_CATEGORY]], [1.0], 1.7, [0, 1]),
        SubjectData(2, [0.0], [[3, 3]], [0.0], 0.1 + 0.2, [0, 0]),
        SubjectData(3, [], [], [1.0], 0.0, [1, 0]),
    ]


class TestDatasetIO(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.prefix = Path(self.tmp.name) / "data"

    def tearDown(self):
        self.tmp.cleanup()

    def test_csv_round_trip(self):
        write_dataset(small_dataset(), self.prefix)
        restored = read_dataset(self.prefix)
        self.assertEqual(len(restored), 3)
        self.assertEqual(restored[1].observed_time, 0.1 + 0.2)
        np.testing.assert_array_equal(restored[0].responses, [[1, 4], [2, MISSING_CATEGORY]])
        self.assertEqual(restored[2].n_visits, 0)
        self.assertEqual(restored[0].event_cause, 1)

    def test_rewrite_is_byte_identical(self):
        write_dataset(small_dataset(), self.prefix)
        first = [p.read_bytes() for p in dataset_paths(self.prefix)]
        again = Path(self.tmp.name) / "again"
        write_dataset(read_dataset(self.prefix), again)
        second = [p.read_bytes() for p in dataset_paths(again)]
        self.assertEqual(first, second)

    def test_missing_written_as_na(self):
        write_dataset(small_dataset(), self.prefix)
        long_path, _ = dataset_paths(self.prefix)
        self.assertIn(",NA", long_path.read_text())

    def test_json_round_trip(self):
        path = Path(self.tmp.name) / "data.json"
        write_dataset(small_dataset(), path, format="json")
        restored = read_dataset(path, format="json")
        self.assertEqual([s.id for s in restored], [1, 2, 3])
        np.testing.assert_array_equal(restored[0].cause_indicators, [0, 1])

    def test_bad_number_reports_line(self):
        write_dataset(small_dataset(), self.prefix)
        _, subjects_path = dataset_paths(self.prefix)
        lines = subjects_path.read_text().splitlines()
        lines[2] = lines[2].replace("0.30000000000000004", "soon")
        subjects_path.write_text("\n".join(lines) + "\n")
        with self.assertRaises(DatasetParseError) as ctx:
            read_dataset(self.prefix)
        self.assertEqual(ctx.exception.line_number, 3)

    def test_category_zero_rejected(self):
        write_dataset(small_dataset(), self.prefix)
        long_path, _ = dataset_paths(self.prefix)
        text = long_path.read_text().replace(",NA", ",0")
        long_path.write_text(text)
        with self.assertRaises(DatasetValidationError):
            read_dataset(self.prefix)

    def test_spec_enforced(self):
        write_dataset(small_dataset(), self.prefix)
        spec = ModelSpec(n_items=2, categories_per_item=[3, 3])
        with self.assertRaises(DatasetValidationError) as ctx:
            read_dataset(self.prefix, spec=spec)
        self.assertFalse(ctx.exception.report.is_valid)

    def test_missing_file(self):
        with self.assertRaises(FileNotFoundError):
            read_dataset(Path(self.tmp.name) / "nothing")

    def test_collapse_causes(self):
        collapsed = collapse_causes(small_dataset())
        self.assertEqual([s.cause_indicators.tolist() for s in collapsed], [[1], [0], [1]])


if __name__ == "__main__":
    unittest.main()
