import unittest
from itertools import product

import numpy as np
import scipy.linalg

from ensembles import (
    DegenerateMatrixError,
    Ensemble,
    RegressionProblem,
    SearchTooLargeError,
    SingularSystemError,
    coherence_sparsity_bound,
    derive_seed,
    diagnose,
    explicit,
    generate,
    l1_minimality_check,
    least_squares_qr,
    ls_solution,
    make_rng,
    min_l2_solution,
    mutual_coherence,
    null_space_basis,
    omp_recovery_guaranteed,
    ridge_solution,
    rip_constant,
    spark,
    spark_uniqueness,
    welch_bound,
)

SPARK_EXAMPLE = [
    [1, 0, 0, 0, 1, 0],
    [0, 1, 0, 0, 1, 1],
    [0, 0, 1, 0, 0, 1],
    [0, 0, 0, 1, 0, 0],
]


def problem(X, y):
    return RegressionProblem(explicit(X), y)


class GenerateTests(unittest.TestCase):
    def test_normalized_gaussian_has_unit_columns(self):
        X = generate(Ensemble.GAUSSIAN, 20, 50, 42, normalize=True)
        self.assertEqual((X.n_rows, X.n_cols), (20, 50))
        self.assertTrue(X.column_normalized)
        np.testing.assert_allclose(np.linalg.norm(X.entries, axis=0), 1.0, atol=1e-12)

    def test_bernoulli_entries_are_plus_minus_half(self):
        X = generate(Ensemble.BERNOULLI, 4, 8, 7)
        self.assertTrue(np.all(np.isin(X.entries, [0.5, -0.5])))

    def test_partial_orthonormal_rows(self):
        for l in (8, 12):
            with self.subTest(l=l):
                X = generate(Ensemble.PARTIAL_ORTHONORMAL, 3, l, 1)
                np.testing.assert_allclose(X.entries @ X.entries.T, np.eye(3), atol=1e-12)

    def test_ternary_levels_and_frequencies(self):
        X = generate(Ensemble.TERNARY, 200, 500, 3)
        level = np.sqrt(3.0 / 200)
        self.assertTrue(np.all(np.isclose(np.abs(X.entries), level) | (X.entries == 0)))
        self.assertAlmostEqual(np.mean(X.entries == 0), 2 / 3, delta=0.01)
        self.assertAlmostEqual(np.mean(X.entries > 0), 1 / 6, delta=0.01)

    def test_uniform_sphere_is_always_normalized(self):
        X = generate(Ensemble.UNIFORM_SPHERE, 5, 9, 11)
        self.assertTrue(X.column_normalized)
        np.testing.assert_allclose(np.linalg.norm(X.entries, axis=0), 1.0, atol=1e-12)

    def test_same_seed_same_bits(self):
        for ensemble in (Ensemble.GAUSSIAN, Ensemble.BERNOULLI, Ensemble.TERNARY,
                         Ensemble.UNIFORM_SPHERE, Ensemble.PARTIAL_ORTHONORMAL):
            with self.subTest(ensemble=ensemble.value):
                first = generate(ensemble, 6, 10, 123)
                second = generate(ensemble, 6, 10, 123)
                self.assertTrue(np.array_equal(first.entries, second.entries))
                self.assertFalse(np.array_equal(first.entries, generate(ensemble, 6, 10, 124).entries))

    def test_entries_are_read_only(self):
        X = generate(Ensemble.GAUSSIAN, 3, 4, 0)
        with self.assertRaises(ValueError):
            X.entries[0, 0] = 1.0

    def test_invalid_dimensions(self):
        with self.assertRaises(ValueError):
            generate(Ensemble.GAUSSIAN, 0, 4, 0)
        with self.assertRaises(ValueError):
            generate(Ensemble.PARTIAL_ORTHONORMAL, 9, 8, 0)

    def test_derived_seeds_differ_per_part(self):
        seeds = {derive_seed(7, row, col) for row, col in product(range(4), range(4))}
        self.assertEqual(len(seeds), 16)
        self.assertEqual(derive_seed(7, 1, 2), derive_seed(7, 1, 2))
        self.assertNotEqual(derive_seed(7, 1), derive_seed(7, 1, 0))
        self.assertEqual(make_rng(-1).random(), make_rng((1 << 64) - 1).random())


class DiagnosticTests(unittest.TestCase):
    def test_coherence_examples(self):
        self.assertEqual(mutual_coherence(np.eye(4)), 0.0)
        X = np.hstack([np.eye(4), scipy.linalg.hadamard(4) / 2.0])
        self.assertAlmostEqual(mutual_coherence(X), 0.5, delta=1e-12)
        duplicated = np.array([[1.0, 2.0, 0.0], [1.0, 2.0, 1.0]])
        self.assertAlmostEqual(mutual_coherence(duplicated), 1.0, delta=1e-12)

    def test_coherence_rejects_zero_column(self):
        with self.assertRaises(DegenerateMatrixError):
            mutual_coherence(np.array([[1.0, 0.0], [0.0, 0.0]]))

    def test_welch_bound(self):
        self.assertAlmostEqual(welch_bound(4, 8), 0.37796, delta=1e-5)
        self.assertAlmostEqual(welch_bound(4, 5), 0.25, delta=1e-15)
        self.assertLess(welch_bound(4, 10_000), 0.5)
        self.assertGreater(welch_bound(4, 10_000), 0.49)
        with self.assertRaises(ValueError):
            welch_bound(4, 4)

    def test_generated_coherence_respects_welch_bound(self):
        for seed in range(10):
            X = generate(Ensemble.GAUSSIAN, 5, 12, seed)
            self.assertGreaterEqual(mutual_coherence(X), welch_bound(5, 12) - 1e-12)

    def test_spark_examples(self):
        self.assertEqual(spark(np.array(SPARK_EXAMPLE, dtype=float)), 3)
        self.assertEqual(spark(np.eye(4)), 5)
        self.assertEqual(spark(np.array([[1.0, 0.0, 2.0], [0.0, 0.0, 1.0]])), 1)

    def test_spark_guard(self):
        with self.assertRaises(SearchTooLargeError):
            spark(np.ones((3, 21)))
        self.assertEqual(spark(np.eye(3)[:, [0, 1, 2, 0]], max_cols=4), 2)

    def test_spark_coherence_lemma(self):
        for seed in range(20):
            with self.subTest(seed=seed):
                X = generate(Ensemble.GAUSSIAN, 4, 7, seed)
                self.assertGreaterEqual(spark(X), 1 + 1 / mutual_coherence(X) - 1e-9)

    def test_rip_examples(self):
        H = scipy.linalg.hadamard(4) / 2.0
        for k in (1, 2, 3):
            self.assertAlmostEqual(rip_constant(H, k), 0.0, delta=1e-12)
        twins = np.array([[1.0, 1.0], [0.0, 0.0]])
        self.assertAlmostEqual(rip_constant(twins, 2), 1.0, delta=1e-12)
        X = generate(Ensemble.GAUSSIAN, 6, 12, 5, normalize=True)
        self.assertAlmostEqual(rip_constant(X, 1), 0.0, delta=1e-12)

    def test_rip_is_monotone_in_order(self):
        X = generate(Ensemble.GAUSSIAN, 6, 10, 9, normalize=True)
        deltas = [rip_constant(X, k) for k in (1, 2, 3, 4)]
        self.assertEqual(deltas, sorted(deltas))

    def test_rip_guards(self):
        X = generate(Ensemble.GAUSSIAN, 6, 12, 5)
        with self.assertRaises(ValueError):
            rip_constant(X, 7)
        with self.assertRaises(SearchTooLargeError):
            rip_constant(X, 6, max_supports=100)

    def test_diagnose_skips_refused_searches(self):
        X = generate(Ensemble.GAUSSIAN, 4, 30, 2)
        report = diagnose(X, rip_orders=(1, 2))
        self.assertIsNone(report.spark)
        self.assertEqual(report.rip_constants, {})
        self.assertGreaterEqual(report.coherence, report.welch_lower_bound - 1e-12)

        small = diagnose(generate(Ensemble.GAUSSIAN, 4, 8, 1, normalize=True), rip_orders=(1, 2))
        self.assertIn(small.spark, range(2, 6))
        self.assertLessEqual(small.rip_constants[1], small.rip_constants[2])

    def test_coherence_predicates(self):
        X = np.hstack([np.eye(4), scipy.linalg.hadamard(4) / 2.0])
        self.assertAlmostEqual(coherence_sparsity_bound(X), 1.5)
        self.assertTrue(omp_recovery_guaranteed(X, 1))
        self.assertFalse(omp_recovery_guaranteed(X, 2))
        self.assertTrue(spark_uniqueness(np.array(SPARK_EXAMPLE, dtype=float), [0, 0, 1, 0, 0, 0]))
        self.assertFalse(spark_uniqueness(np.array(SPARK_EXAMPLE, dtype=float), [1, 1, 0, 0, 0, 0]))


class EstimatorTests(unittest.TestCase):
    def test_ls_examples(self):
        H = scipy.linalg.hadamard(4) / 2.0
        y = np.array([1.0, -2.0, 0.5, 3.0])
        np.testing.assert_allclose(ls_solution(problem(H, y)), H.T @ y, atol=1e-12)
        np.testing.assert_allclose(ls_solution(problem(np.eye(2), [1.0, 2.0])), [1.0, 2.0], atol=1e-12)

    def test_ls_matches_grid_oracle(self):
        X = np.array([[1.0, 0.5], [0.0, 1.0], [1.0, 1.0]])
        y = np.array([1.0, 0.3, 1.4])
        theta = ls_solution(problem(X, y))
        best = min(
            np.linalg.norm(y - X @ np.array([a, b]))
            for a in np.linspace(-2, 2, 201) for b in np.linspace(-2, 2, 201)
        )
        self.assertLessEqual(np.linalg.norm(y - X @ theta), best + 1e-12)
        np.testing.assert_allclose(X.T @ (y - X @ theta), 0.0, atol=1e-10)

    def test_ls_refuses_singular_normal_matrix(self):
        with self.assertRaises(SingularSystemError):
            ls_solution(problem(np.array([[1.0, 2.0]]), [1.0]))
        with self.assertRaises(SingularSystemError):
            least_squares_qr(np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]), np.ones(3))

    def test_ridge_worked_example(self):
        ls = np.array([0.2, -0.7, 0.8, -0.1, 1.0])
        ridge = ridge_solution(problem(np.eye(5), ls), 1.0)
        np.testing.assert_allclose(ridge, [0.1, -0.35, 0.4, -0.05, 0.5], atol=1e-12)

    def test_ridge_limits(self):
        X = generate(Ensemble.GAUSSIAN, 8, 3, 4).entries
        y = make_rng(1).standard_normal(8)
        P = problem(X, y)
        np.testing.assert_allclose(ridge_solution(P, 0.0), ls_solution(P), atol=1e-10)
        norms = [np.linalg.norm(ridge_solution(P, lam)) for lam in (0.1, 1.0, 10.0, 1e3, 1e6)]
        self.assertEqual(norms, sorted(norms, reverse=True))
        self.assertLess(norms[-1], 1e-4)
        with self.assertRaises(ValueError):
            ridge_solution(P, -1.0)

    def test_min_l2_examples(self):
        np.testing.assert_allclose(min_l2_solution(problem([[0.5, 1.0]], [1.0])), [0.4, 0.8], atol=1e-12)
        X = generate(Ensemble.GAUSSIAN, 3, 6, 2).entries
        np.testing.assert_allclose(min_l2_solution(problem(X, np.zeros(3))), 0.0, atol=1e-15)

    def test_min_l2_is_feasible_and_shortest(self):
        X = generate(Ensemble.GAUSSIAN, 4, 9, 8).entries
        y = make_rng(3).standard_normal(4)
        theta = min_l2_solution(problem(X, y))
        self.assertLessEqual(np.linalg.norm(X @ theta - y), 1e-10 * np.linalg.norm(y))
        basis = null_space_basis(X)
        np.testing.assert_allclose(basis.T @ theta, 0.0, atol=1e-8)
        rng = make_rng(4)
        for _ in range(1000):
            other = theta + basis @ rng.standard_normal(basis.shape[1])
            self.assertGreaterEqual(np.linalg.norm(other), np.linalg.norm(theta) - 1e-12)

    def test_min_l2_refuses_rank_deficient_rows(self):
        with self.assertRaises(SingularSystemError):
            min_l2_solution(problem([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0]], [1.0, 2.0]))

    def test_l1_minimality_examples(self):
        self.assertTrue(l1_minimality_check(explicit([[0.5, 1.0]]), [0.0, 1.0], 50, 0))
        self.assertFalse(l1_minimality_check(explicit([[2.0, 1.0]]), [0.0, 1.0], 50, 0))
        self.assertTrue(l1_minimality_check(explicit([[2.0, 1.0]]), [0.5, 0.0], 50, 0))
        self.assertTrue(l1_minimality_check(explicit(np.eye(3)), [1.0, 0.0, -2.0], 10, 0))


class RegressionProblemTests(unittest.TestCase):
    def test_rejects_inconsistent_noiseless_truth(self):
        with self.assertRaises(ValueError):
            RegressionProblem(explicit(np.eye(2)), [1.0, 2.0], truth=[1.0, 0.0])
        with self.assertRaises(ValueError):
            RegressionProblem(explicit(np.eye(2)), [1.0, 2.0, 3.0])

    def test_from_truth_adds_seeded_noise(self):
        X = generate(Ensemble.GAUSSIAN, 30, 10, 1)
        truth = np.arange(10, dtype=float)
        clean = RegressionProblem.from_truth(X, truth)
        np.testing.assert_allclose(clean.y, X.entries @ truth)
        noisy = RegressionProblem.from_truth(X, truth, 0.1, seed=5)
        again = RegressionProblem.from_truth(X, truth, 0.1, seed=5)
        self.assertTrue(np.array_equal(noisy.y, again.y))
        self.assertGreater(np.linalg.norm(noisy.y - clean.y), 0.0)


if __name__ == "__main__":
    unittest.main()
