import os
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import numpy as np

from dictionaries import mercedes_benz_frame
from ensembles import Ensemble, generate
from result_files import (
    MATRIX_HEADER,
    format_value,
    read_csv,
    read_matrix_csv,
    read_numeric_column,
    read_pgm,
    to_gray,
    write_atomic,
    write_csv,
    write_frame_csv,
    write_matrix_csv,
    write_pgm,
    write_recovery_csv,
    write_trace_csv,
)
from solvers_batch import Algorithm


class FormatTests(unittest.TestCase):
    def test_values(self):
        self.assertEqual(format_value(True), "true")
        self.assertEqual(format_value(np.int64(7)), "7")
        self.assertEqual(format_value(0.1), "0.10000000000000001")
        self.assertEqual(format_value(Algorithm.IHT), "iht")
        self.assertEqual(format_value(None), "")
        self.assertEqual(format_value("x"), "x")


class CsvTests(unittest.TestCase):
    def test_floats_reparse_exactly(self):
        values = np.random.default_rng(1).standard_normal(20)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "values.csv")
            write_csv(path, {"seed": 1, "algo": Algorithm.OMP}, ("i", "v"), list(enumerate(values)))
            meta, columns, rows = read_csv(path)
            column = read_numeric_column(path, "v")
            text = Path(path).read_text(encoding="utf-8")
        self.assertEqual(meta, {"seed": "1", "algo": "omp"})
        self.assertEqual(columns, ["i", "v"])
        self.assertEqual(len(rows), 20)
        np.testing.assert_array_equal(column, values)
        self.assertTrue(text.startswith("# seed=1\n# algo=omp\ni,v\n"))

    def test_fields_with_commas_are_quoted(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_csv(os.path.join(tmp, "q.csv"), {}, ("label", "v"), [("a,b", 1.5), ('say "hi"', 2)])
            text = path.read_text(encoding="utf-8")
            _, columns, rows = read_csv(path)
        self.assertIn('"a,b",1.5\n', text)
        self.assertEqual(columns, ["label", "v"])
        self.assertEqual(rows, [["a,b", "1.5"], ['say "hi"', "2"]])

    def test_row_width_must_match_header(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(ValueError):
                write_csv(os.path.join(tmp, "bad.csv"), {}, ("a", "b"), [(1,)])

    def test_missing_column(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_csv(os.path.join(tmp, "x.csv"), {}, ("a",), [(1,)])
            with self.assertRaises(ValueError):
                read_numeric_column(path, "b")

    def test_recovery_and_trace_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            recovery = write_recovery_csv(os.path.join(tmp, "r.csv"), {"seed": 0}, [1.0, 0.0], [0.9, 0.1])
            trace = write_trace_csv(os.path.join(tmp, "t.csv"), {"seed": 0}, "spapsm", 0, [-1.0, -2.5])
            self.assertEqual(read_csv(recovery)[1], ["index", "truth", "estimate"])
            np.testing.assert_array_equal(read_numeric_column(recovery, "estimate"), [0.9, 0.1])
            np.testing.assert_array_equal(read_numeric_column(trace, "mse_db"), [-10.0, -25.0])
            self.assertEqual(read_csv(trace)[2][1], ["2", "-25", "spapsm", "0"])

    def test_frame_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            meta, columns, rows = read_csv(write_frame_csv(os.path.join(tmp, "mb.csv"), mercedes_benz_frame()))
        self.assertEqual(columns, ["atom_0", "atom_1", "atom_2"])
        self.assertEqual(len(rows), 2)
        self.assertEqual(meta["tight"], "true")


class MatrixFileTests(unittest.TestCase):
    def test_matrix_reloads(self):
        matrix = generate(Ensemble.TERNARY, 3, 5, 11)
        with tempfile.TemporaryDirectory() as tmp:
            path = write_matrix_csv(os.path.join(tmp, "m.csv"), matrix)
            lines = path.read_text(encoding="utf-8").splitlines()
            loaded = read_matrix_csv(path)
        self.assertEqual(lines[:2], [MATRIX_HEADER, "# 3,5,ternary,11"])
        np.testing.assert_array_equal(loaded.entries, matrix.entries)
        self.assertEqual((loaded.ensemble, loaded.seed), (Ensemble.TERNARY, 11))

    def test_malformed_matrix_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            wrong_header = Path(tmp, "a.csv")
            wrong_header.write_text("1,2\n3,4\n", encoding="utf-8")
            wrong_shape = Path(tmp, "b.csv")
            wrong_shape.write_text(f"{MATRIX_HEADER}\n# 2,2,explicit,\n1,2\n", encoding="utf-8")
            for path in (wrong_header, wrong_shape):
                with self.subTest(path=path.name):
                    with self.assertRaises(ValueError):
                        read_matrix_csv(path)


class PgmTests(unittest.TestCase):
    def test_pixels_reload(self):
        pixels = np.arange(12, dtype=np.uint8).reshape(3, 4) * 20
        with tempfile.TemporaryDirectory() as tmp:
            path = write_pgm(os.path.join(tmp, "p.pgm"), pixels)
            self.assertTrue(path.read_bytes().startswith(b"P5\n4 3\n255\n"))
            np.testing.assert_array_equal(read_pgm(path), pixels)

    def test_rejects_non_byte_pixels(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(ValueError):
                write_pgm(os.path.join(tmp, "p.pgm"), np.zeros((2, 2)))

    def test_gray_levels(self):
        self.assertEqual(to_gray([0, 1, 2, 3, 4], 3).tolist(), [0, 85, 170, 255, 255])
        self.assertEqual(to_gray([1.0], 0).tolist(), [0])


class AtomicWriteTests(unittest.TestCase):
    def test_failed_replace_keeps_old_file_and_cleans_up(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp, "out.csv")
            path.write_bytes(b"old")
            with patch("result_files.os.replace", side_effect=OSError("disk full")):
                with self.assertRaises(OSError):
                    write_atomic(path, b"new")
            self.assertEqual(path.read_bytes(), b"old")
            self.assertEqual(os.listdir(tmp), ["out.csv"])

    def test_creates_parent_directories(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp, "nested", "deeper", "x.bin")
            write_atomic(path, b"data")
            self.assertEqual(path.read_bytes(), b"data")


if __name__ == "__main__":
    unittest.main()
