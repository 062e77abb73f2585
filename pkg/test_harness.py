import logging
import os
import tempfile
import unittest
from pathlib import Path

import numpy as np

from ensembles import Ensemble
from harness import (
    PhaseCell,
    PhaseSpec,
    SupportRule,
    TrialFailure,
    ValueDistribution,
    VectorEnsemble,
    gabor_demo,
    gen_sparse_vector,
    grid_point,
    load_scenario_file,
    online_experiment,
    phase_grid,
    phase_image,
    recovery_curve,
    run_pool,
    run_trial,
    trial_config,
)
from result_files import read_csv, read_pgm
from solvers_batch import Algorithm, BatchConfig
from solvers_online import OnlineAlgorithm, OnlineScenario


def make_spec(**overrides):
    values = {"l": 20, "grid": 3, "trials": 2, "algo": Algorithm.OMP, "seed": 3}
    values.update(overrides)
    return PhaseSpec(**values)


def smoothed(row):
    padded = np.concatenate([row[:1], row, row[-1:]])
    return np.array([np.median(padded[i:i + 3]) for i in range(len(row))])


class SparseVectorTests(unittest.TestCase):
    def test_exact_support_size(self):
        for kind in ValueDistribution:
            with self.subTest(kind=kind.value):
                theta = gen_sparse_vector(VectorEnsemble(kind, 5), 30, 1)
                self.assertEqual(np.count_nonzero(theta), 5)

    def test_zero_sparsity(self):
        self.assertFalse(np.any(gen_sparse_vector(VectorEnsemble(ValueDistribution.GAUSSIAN, 0), 10, 1)))

    def test_cars_values_are_signs(self):
        theta = gen_sparse_vector(VectorEnsemble(ValueDistribution.CARS, 8), 20, 2)
        self.assertEqual(set(np.abs(theta[theta != 0]).tolist()), {1.0})

    def test_bernoulli_support_size_is_near_k(self):
        theta = gen_sparse_vector(VectorEnsemble(ValueDistribution.GAUSSIAN, 100, SupportRule.BERNOULLI), 1000, 4)
        self.assertTrue(60 <= np.count_nonzero(theta) <= 140)

    def test_gaussian_values_are_centred(self):
        theta = gen_sparse_vector(VectorEnsemble(ValueDistribution.GAUSSIAN, 10_000), 10_000, 5)
        self.assertAlmostEqual(float(theta.mean()), 0.0, delta=0.05)
        self.assertAlmostEqual(float(theta.std()), 1.0, delta=0.05)

    def test_seeded(self):
        ens = VectorEnsemble(ValueDistribution.UNIFORM, 4)
        np.testing.assert_array_equal(gen_sparse_vector(ens, 20, 9), gen_sparse_vector(ens, 20, 9))

    def test_sparsity_out_of_range(self):
        with self.assertRaises(ValueError):
            gen_sparse_vector(VectorEnsemble(ValueDistribution.GAUSSIAN, 11), 10, 1)


class TrialTests(unittest.TestCase):
    def trial(self, n, l, k, algo=Algorithm.OMP, cfg=None, noise_sigma=0.0, seed=0):
        return run_trial(Ensemble.GAUSSIAN, VectorEnsemble(ValueDistribution.GAUSSIAN, k), n, l,
                         noise_sigma, algo, cfg or BatchConfig(), seed)

    def test_easy_trials_succeed(self):
        records = [self.trial(20, 50, 2, seed=seed) for seed in range(5)]
        self.assertGreaterEqual(sum(r.success for r in records), 4)
        for record in records:
            self.assertEqual((record.n, record.l, record.k), (20, 50, 2))

    def test_square_system(self):
        records = [self.trial(10, 10, 2, algo=Algorithm.CSMP, seed=seed) for seed in range(5)]
        self.assertGreaterEqual(sum(r.success for r in records), 4)

    def test_too_many_nonzeros_fail(self):
        record = self.trial(10, 50, 10)
        self.assertFalse(record.success)
        self.assertIs(record.failure, TrialFailure.NOT_RECOVERED)
        self.assertGreater(record.relative_error, 1e-4)

    def test_noisy_trials_judge_the_support(self):
        record = self.trial(20, 50, 2, noise_sigma=0.01, seed=1)
        self.assertTrue(np.isfinite(record.relative_error))
        if not record.success:
            self.assertIs(record.failure, TrialFailure.SUPPORT_MISMATCH)

    def test_solver_errors_are_recorded(self):
        record = self.trial(10, 20, 2, algo=Algorithm.ISTA, cfg=BatchConfig(step_mu=10.0))
        self.assertFalse(record.success)
        self.assertIs(record.failure, TrialFailure.SOLVER_ERROR)
        self.assertIn("Step size", record.reason)

    def test_trial_config(self):
        cfg = trial_config(Algorithm.CSMP, BatchConfig(), 3)
        self.assertEqual((cfg.sparsity_k, cfg.csmp_t), (3, 6))
        self.assertEqual(trial_config(Algorithm.OMP, BatchConfig(), 0).sparsity_k, 1)

    def test_pool_keeps_submission_order(self):
        jobs = [lambda i=i: i * i for i in range(20)]
        self.assertEqual(run_pool(jobs, 4), [i * i for i in range(20)])
        self.assertEqual(run_pool(jobs, 1), [i * i for i in range(20)])


class CurveTests(unittest.TestCase):
    def test_curve_shape_and_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            out = os.path.join(tmp, "curve")
            curve = recovery_curve(make_spec(trials=4), 10, out=out)
            meta, columns, rows = read_csv(f"{out}.csv")
        self.assertEqual(len(curve), 10)
        self.assertEqual([beta for beta, _ in curve], [k / 10 for k in range(1, 11)])
        self.assertEqual(curve[0][1], 1.0)
        self.assertEqual(columns, ["k", "beta", "successes", "trials", "probability"])
        self.assertEqual(len(rows), 10)
        self.assertEqual(meta["n"], "10")
        self.assertEqual(meta["algo"], "omp")

    def test_single_trial_gives_zero_or_one(self):
        curve = recovery_curve(make_spec(trials=1), 6)
        self.assertTrue(all(p in (0.0, 1.0) for _, p in curve))

    def test_measurements_out_of_range(self):
        with self.assertRaises(ValueError):
            recovery_curve(make_spec(), 21)


class PhaseGridTests(unittest.TestCase):
    def test_grid_point(self):
        self.assertEqual(grid_point(100, 15, 14, 0), (1.0, 1 / 15, 100, 7))
        self.assertEqual(grid_point(100, 15, 0, 14)[2:], (7, 7))

    def test_worker_count_does_not_change_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            serial = make_spec(workers=1)
            parallel = make_spec(workers=3)
            phase_grid(serial, out=os.path.join(tmp, "serial"))
            phase_grid(parallel, out=os.path.join(tmp, "parallel"))
            for suffix in (".csv", ".pgm"):
                with self.subTest(suffix=suffix):
                    self.assertEqual(Path(tmp, "serial" + suffix).read_bytes(),
                                     Path(tmp, "parallel" + suffix).read_bytes())
            _, columns, rows = read_csv(os.path.join(tmp, "serial.csv"))
            image = read_pgm(os.path.join(tmp, "serial.pgm"))
        self.assertEqual(columns, ["alpha", "beta", "n", "k", "m", "M"])
        self.assertEqual(len(rows), 9)
        self.assertEqual(image.shape, (3, 3))

    def test_image_layout_and_intensity(self):
        cells = [
            [PhaseCell(0.5, 0.5, 1, 1, 1, 1), PhaseCell(0.5, 1.0, 1, 1, 0, 0)],
            [PhaseCell(1.0, 0.5, 2, 1, 2, 3), PhaseCell(1.0, 1.0, 2, 2, 0, 3)],
        ]
        image = phase_image(cells)
        self.assertEqual(image[1, 0], 255)
        self.assertEqual(image[1, 1], 170)
        self.assertEqual(image[0, 0], 0)
        self.assertEqual(image[0, 1], 0)

    def test_invalid_spec(self):
        with self.assertRaises(ValueError):
            phase_grid(make_spec(trials=0))

    def test_median_trial_time_is_logged_per_cell(self):
        with self.assertLogs(level="INFO") as logs:
            cells = phase_grid(make_spec(workers=1))
        timing = [line for line in logs.output if "ms per trial" in line]
        self.assertEqual(len(timing), 9)
        self.assertTrue(any("alpha=1.000 beta=0.333 (N=20, k=7): " in line for line in timing))
        self.assertTrue(all(cell.median_seconds > 0 for line in cells for cell in line))

    @unittest.skipUnless(os.getenv("SPARSEKIT_SLOW_TESTS"), "full phase grids take minutes")
    def test_full_grid_properties(self):
        solvers = {
            Algorithm.OMP: BatchConfig(),
            Algorithm.COSAMP: BatchConfig(),
            Algorithm.IHT: BatchConfig(step_scale=0.99),
            Algorithm.ISTA: BatchConfig(lambda_ratio=0.001, debias=True, max_iters=5000),
        }
        transitions = {}
        for algo, solver in solvers.items():
            with self.subTest(algo=algo.value):
                spec = PhaseSpec(l=100, grid=15, trials=25, algo=algo, solver=solver,
                                 values=ValueDistribution.CARS, seed=1, workers=os.cpu_count() or 1)
                cells = phase_grid(spec)
                probabilities = np.array([[c.probability for c in row] for row in cells])
                for row in probabilities:
                    self.assertLessEqual(float(np.diff(smoothed(row)).max()), 0.25)
                self.assertGreaterEqual(probabilities[-1, 0], 0.95)
                self.assertLessEqual(probabilities[0, -1], 0.05)
                middle = probabilities[7]
                transitions[algo] = int(np.argmax(middle < 0.5)) if np.any(middle < 0.5) else len(middle)
        logging.info(f"Transition column at alpha=0.5: {transitions}")


class OnlineExperimentTests(unittest.TestCase):
    def test_files_are_reproducible(self):
        scenario = OnlineScenario(length=16, sparsity=2, samples=60, change_at=30, changed=1, seed=4)
        with tempfile.TemporaryDirectory() as tmp:
            first = online_experiment(scenario, out=os.path.join(tmp, "a"), workers=1)
            online_experiment(scenario, out=os.path.join(tmp, "b"), workers=2)
            for algo in OnlineAlgorithm:
                with self.subTest(algo=algo.value):
                    a = Path(tmp, f"a_{algo.value}.csv").read_bytes()
                    b = Path(tmp, f"b_{algo.value}.csv").read_bytes()
                    self.assertEqual(a, b)
            meta, columns, rows = read_csv(os.path.join(tmp, "a_spapsm.csv"))
        self.assertEqual(columns, ["n", "mse_db", "algo", "seed"])
        self.assertEqual(len(rows), 60)
        self.assertEqual(meta["scenario.seed"], "4")
        self.assertEqual(len(first[OnlineAlgorithm.ADCOSAMP]), 60)
        self.assertAlmostEqual(float(rows[0][1]), 10 * first[OnlineAlgorithm.SPAPSM][0])


class ScenarioFileTests(unittest.TestCase):
    def write(self, tmp, text):
        path = os.path.join(tmp, "scenario.env")
        Path(path).write_text(text, encoding="utf-8")
        return path

    def test_reads_scenario_and_overrides(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = self.write(tmp, "length=64\nsparsity=4\nchange_at=none\nwavelet=false\n# solver\nq_slabs=8\n")
            scenario, overrides = load_scenario_file(path)
        self.assertEqual((scenario.length, scenario.sparsity), (64, 4))
        self.assertIsNone(scenario.change_at)
        self.assertFalse(scenario.wavelet)
        self.assertEqual(overrides, {"q_slabs": 8})

    def test_rejections(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaisesRegex(ValueError, "Unknown scenario keys"):
                load_scenario_file(self.write(tmp, "length=64\ncolour=blue\n"))
            with self.assertRaisesRegex(ValueError, "Invalid samples"):
                load_scenario_file(self.write(tmp, "samples=lots\n"))
            with self.assertRaisesRegex(ValueError, "not found"):
                load_scenario_file(os.path.join(tmp, "missing.env"))


class GaborDemoTests(unittest.TestCase):
    def test_small_demo_writes_its_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            demo = gabor_demo(l=64, alpha=8, beta=4, out=os.path.join(tmp, "gabor"))
            self.assertEqual([p.name for p in demo.files],
                             ["gabor_decay.csv", "gabor_spectrogram.pgm", "gabor_original.pgm"])
            image = read_pgm(os.path.join(tmp, "gabor_spectrogram.pgm"))
            _, columns, rows = read_csv(os.path.join(tmp, "gabor_decay.csv"))
        self.assertEqual(demo.frame.size, 128)
        self.assertEqual(image.shape, (9, 8))
        self.assertEqual(columns, ["rank", "synthesis", "dual_analysis"])
        self.assertEqual(len(rows), 128)
        self.assertTrue(np.isfinite(demo.relative_error))


if __name__ == "__main__":
    unittest.main()
