"""Sensing-matrix ensembles, classical estimators and matrix diagnostics.

All randomness goes through ``make_rng``: a numpy Generator on the Philox
counter-based bit generator, so a seed reproduces the same matrix on every
platform numpy supports.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations
from math import comb
from typing import Dict, Optional, Sequence, Union

import numpy as np
import scipy.linalg

SEED_MASK = (1 << 64) - 1
RANK_TOL = 1e-10
SPARK_MAX_COLS = 20
RIP_MAX_SUPPORTS = 200_000


class DegenerateMatrixError(ValueError):
    """A zero column makes normalized quantities undefined."""


class SearchTooLargeError(ValueError):
    """An exhaustive search would exceed its configured guard."""


class SingularSystemError(ValueError):
    """A least-squares system has no unique solution."""


class Ensemble(str, Enum):
    GAUSSIAN = "gaussian"
    BERNOULLI = "bernoulli"
    TERNARY = "ternary"
    UNIFORM_SPHERE = "uniform_sphere"
    PARTIAL_ORTHONORMAL = "partial_orthonormal"
    EXPLICIT = "explicit"


SeedLike = Union[int, np.random.SeedSequence]


def make_rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, (int, np.integer)):
        seed = int(seed) & SEED_MASK
    return np.random.Generator(np.random.Philox(seed))


def derive_seed(*parts: int) -> int:
    """Hash integer parts into one 64-bit seed; independent of call order."""
    # the part count leads so short tuples do not collide with zero-padded longer ones
    entropy = [len(parts)] + [int(part) & SEED_MASK for part in parts]
    state = np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)
    return int(state[0])


@dataclass(frozen=True, eq=False)
class SensingMatrix:
    entries: np.ndarray
    ensemble: Ensemble = Ensemble.EXPLICIT
    column_normalized: bool = False
    seed: Optional[int] = None

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float)
        if entries.ndim != 2 or entries.shape[0] < 1 or entries.shape[1] < 1:
            raise ValueError(f"Sensing matrix must be a non-empty 2-D array, got shape {entries.shape}")
        entries.setflags(write=False)
        object.__setattr__(self, 'entries', entries)

    @property
    def n_rows(self) -> int:
        return self.entries.shape[0]

    @property
    def n_cols(self) -> int:
        return self.entries.shape[1]


MatrixLike = Union[SensingMatrix, np.ndarray]


def as_array(X: MatrixLike) -> np.ndarray:
    if isinstance(X, SensingMatrix):
        return X.entries
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    return arr


def _normalize_columns(entries: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(entries, axis=0)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise DegenerateMatrixError(f"Cannot normalize: column {int(zero[0])} is zero")
    return entries / norms


def _orthonormal_basis(l: int, rng: np.random.Generator) -> np.ndarray:
    if l & (l - 1) == 0:
        return scipy.linalg.hadamard(l).astype(float) / np.sqrt(l)
    q, r = scipy.linalg.qr(rng.standard_normal((l, l)))
    # fix the sign ambiguity of QR so the basis is a function of the draw only
    return q * np.sign(np.diag(r))


def generate(ensemble: Ensemble, n: int, l: int, seed: int, normalize: bool = False) -> SensingMatrix:
    ensemble = Ensemble(ensemble)
    if n < 1 or l < 1:
        raise ValueError(f"Invalid dimensions: n={n}, l={l} (both must be positive)")
    if ensemble is Ensemble.EXPLICIT:
        raise ValueError("Explicit matrices are built with explicit(), not generate()")
    if ensemble is Ensemble.PARTIAL_ORTHONORMAL and n > l:
        raise ValueError(f"Partial orthonormal ensemble needs n <= l, got n={n}, l={l}")

    rng = make_rng(seed)
    normalized = normalize
    if ensemble is Ensemble.GAUSSIAN:
        entries = rng.standard_normal((n, l)) / np.sqrt(n)
    elif ensemble is Ensemble.BERNOULLI:
        entries = np.where(rng.random((n, l)) < 0.5, 1.0, -1.0) / np.sqrt(n)
    elif ensemble is Ensemble.TERNARY:
        u = rng.random((n, l))
        scale = np.sqrt(3.0 / n)
        entries = np.where(u < 1 / 6, scale, np.where(u >= 5 / 6, -scale, 0.0))
    elif ensemble is Ensemble.UNIFORM_SPHERE:
        entries = _normalize_columns(rng.standard_normal((n, l)))
        normalized = True
    else:
        basis = _orthonormal_basis(l, rng)
        rows = np.sort(rng.choice(l, size=n, replace=False))
        entries = basis[rows]

    if normalize:
        entries = _normalize_columns(entries)
    return SensingMatrix(entries, ensemble, normalized, seed)


def explicit(entries, normalize: bool = False) -> SensingMatrix:
    arr = as_array(entries)
    if normalize:
        arr = _normalize_columns(arr)
    return SensingMatrix(arr, Ensemble.EXPLICIT, normalize)


@dataclass(eq=False)
class RegressionProblem:
    matrix: SensingMatrix
    measurements: np.ndarray
    truth: Optional[np.ndarray] = None
    noise_sigma: float = 0.0

    def __post_init__(self):
        if not isinstance(self.matrix, SensingMatrix):
            self.matrix = explicit(self.matrix)
        self.measurements = np.atleast_1d(np.asarray(self.measurements, dtype=float))
        if self.measurements.shape != (self.matrix.n_rows,):
            raise ValueError(
                f"Measurement length {self.measurements.size} does not match {self.matrix.n_rows} rows"
            )
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be nonnegative, got {self.noise_sigma}")
        if self.truth is not None:
            self.truth = np.asarray(self.truth, dtype=float)
            if self.truth.shape != (self.matrix.n_cols,):
                raise ValueError(
                    f"Truth length {self.truth.size} does not match {self.matrix.n_cols} columns"
                )
            if self.noise_sigma == 0:
                gap = np.linalg.norm(self.measurements - self.matrix.entries @ self.truth)
                if gap > 1e-10 * max(np.linalg.norm(self.measurements), 1e-300):
                    raise ValueError("Noiseless problem: measurements do not equal X @ truth")

    @property
    def X(self) -> np.ndarray:
        return self.matrix.entries

    @property
    def y(self) -> np.ndarray:
        return self.measurements

    @classmethod
    def from_truth(cls, matrix: MatrixLike, truth, noise_sigma: float = 0.0,
                   seed: Optional[int] = None) -> 'RegressionProblem':
        if not isinstance(matrix, SensingMatrix):
            matrix = explicit(matrix)
        truth = np.asarray(truth, dtype=float)
        y = matrix.entries @ truth
        if noise_sigma > 0:
            y = y + noise_sigma * make_rng(0 if seed is None else seed).standard_normal(y.size)
        return cls(matrix, y, truth, noise_sigma)


@dataclass
class MatrixDiagnostics:
    coherence: float
    welch_lower_bound: Optional[float]
    spark: Optional[int] = None
    rip_constants: Dict[int, float] = field(default_factory=dict)


def mutual_coherence(X: MatrixLike) -> float:
    A = as_array(X)
    if A.shape[1] < 2:
        raise ValueError("Mutual coherence needs at least two columns")
    normalized = _normalize_columns(A)
    gram = np.abs(normalized.T @ normalized)
    np.fill_diagonal(gram, 0.0)
    return float(min(gram.max(), 1.0))


def welch_bound(n: int, l: int) -> float:
    if n < 1 or l <= n:
        raise ValueError(f"Welch bound is defined for l > n >= 1, got n={n}, l={l}")
    return float(np.sqrt((l - n) / (n * (l - 1))))


def numerical_rank(A: np.ndarray) -> int:
    if A.size == 0:
        return 0
    s = np.linalg.svd(A, compute_uv=False)
    if s[0] == 0:
        return 0
    return int(np.sum(s > RANK_TOL * s[0]))


def spark(X: MatrixLike, max_cols: int = SPARK_MAX_COLS) -> int:
    A = as_array(X)
    n, l = A.shape
    if l > max_cols:
        raise SearchTooLargeError(
            f"spark needs an exhaustive search over column subsets; l={l} exceeds the guard of "
            f"{max_cols} columns (raise max_cols explicitly to force it)"
        )
    if np.any(np.linalg.norm(A, axis=0) == 0):
        return 1
    for m in range(2, min(n, l) + 1):
        for cols in combinations(range(l), m):
            if numerical_rank(A[:, cols]) < m:
                return m
    return n + 1


def rip_constant(X: MatrixLike, k: int, max_cols: int = SPARK_MAX_COLS,
                 max_supports: int = RIP_MAX_SUPPORTS) -> float:
    A = as_array(X)
    n, l = A.shape
    if k < 1 or k > n:
        raise ValueError(f"RIP order k must satisfy 1 <= k <= N={n}, got {k}")
    if k > l:
        raise ValueError(f"RIP order k={k} exceeds the number of columns {l}")
    supports = comb(l, k)
    if l > max_cols or supports > max_supports:
        raise SearchTooLargeError(
            f"RIP constant of order {k} needs {supports} supports on l={l} columns; guards are "
            f"l <= {max_cols} and at most {max_supports} supports"
        )
    delta = 0.0
    for cols in combinations(range(l), k):
        sub = A[:, cols]
        eig = scipy.linalg.eigvalsh(sub.T @ sub)
        delta = max(delta, 1.0 - eig[0], eig[-1] - 1.0)
    return float(delta)


def least_squares_qr(A: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Solve min ||y - A b|| with column-pivoted QR; refuses rank-deficient A."""
    n, m = A.shape
    if m == 0:
        return np.zeros(0)
    if m > n:
        raise SingularSystemError(f"Least squares on {m} columns with only {n} rows is underdetermined")
    q, r, perm = scipy.linalg.qr(A, mode='economic', pivoting=True)
    diag = np.abs(np.diag(r))
    if diag[0] == 0 or diag[-1] <= RANK_TOL * diag[0]:
        raise SingularSystemError(
            f"Least-squares system is rank deficient (|R| ratio {diag[-1] / max(diag[0], 1e-300):.3e})"
        )
    coef = scipy.linalg.solve_triangular(r, q.T @ y)
    out = np.empty(m)
    out[perm] = coef
    return out


def ls_solution(P: RegressionProblem) -> np.ndarray:
    X = P.X
    if X.shape[0] < X.shape[1]:
        raise SingularSystemError(
            f"X^T X is singular: {X.shape[0]} rows cannot determine {X.shape[1]} unknowns"
        )
    return least_squares_qr(X, P.y)


def ridge_solution(P: RegressionProblem, lam: float) -> np.ndarray:
    if lam < 0:
        raise ValueError(f"Ridge parameter must be nonnegative, got {lam}")
    X = P.X
    gram = X.T @ X + lam * np.eye(X.shape[1])
    try:
        return scipy.linalg.solve(gram, X.T @ P.y, assume_a='sym')
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise SingularSystemError(f"Ridge normal matrix is singular for lambda={lam}") from exc


def min_l2_solution(P: RegressionProblem) -> np.ndarray:
    X = P.X
    n, l = X.shape
    if n > l or numerical_rank(X) < n:
        raise SingularSystemError(f"Minimum-norm solution needs full row rank; X is {n}x{l} with rank {numerical_rank(X)}")
    return X.T @ scipy.linalg.solve(X @ X.T, P.y, assume_a='pos')


def null_space_basis(X: MatrixLike) -> np.ndarray:
    return scipy.linalg.null_space(as_array(X), rcond=RANK_TOL)


def l1_minimality_check(X: MatrixLike, theta, trials: int, seed: int) -> bool:
    """Sampled necessary condition for theta to minimize the l1 norm on its affine set.

    False certifies that some feasible direction lowers ||theta||_1.
    True only means no such direction was sampled.
    """
    theta = np.asarray(theta, dtype=float)
    basis = null_space_basis(X)
    if basis.shape[1] == 0:
        return True
    on = theta != 0
    signs = np.sign(theta[on])
    rng = make_rng(seed)
    for _ in range(trials):
        z = basis @ rng.standard_normal(basis.shape[1])
        lhs = abs(float(signs @ z[on]))
        rhs = float(np.abs(z[~on]).sum())
        if lhs > rhs + 1e-12 * max(np.abs(z).sum(), 1.0):
            return False
    return True


def coherence_sparsity_bound(X: MatrixLike) -> float:
    """Sparsity level below which l0 and l1 solutions coincide and OMP succeeds."""
    mu = mutual_coherence(X)
    return float('inf') if mu == 0 else 0.5 * (1.0 + 1.0 / mu)


def omp_recovery_guaranteed(X: MatrixLike, k: int) -> bool:
    return k < coherence_sparsity_bound(X)


def spark_uniqueness(X: MatrixLike, theta, max_cols: int = SPARK_MAX_COLS) -> bool:
    """True when no other vector this sparse reproduces X @ theta."""
    nonzeros = int(np.count_nonzero(np.asarray(theta)))
    return nonzeros < spark(X, max_cols) / 2


def diagnose(X: MatrixLike, rip_orders: Sequence[int] = (), spark_max_cols: int = SPARK_MAX_COLS,
             rip_max_supports: int = RIP_MAX_SUPPORTS) -> MatrixDiagnostics:
    A = as_array(X)
    n, l = A.shape
    diag = MatrixDiagnostics(
        coherence=mutual_coherence(A),
        welch_lower_bound=welch_bound(n, l) if l > n else None,
    )
    try:
        diag.spark = spark(A, spark_max_cols)
    except SearchTooLargeError as exc:
        logging.info(f"Spark skipped: {exc}")
    for k in rip_orders:
        try:
            diag.rip_constants[k] = rip_constant(A, k, spark_max_cols, rip_max_supports)
        except SearchTooLargeError as exc:
            logging.info(f"RIP constant of order {k} skipped: {exc}")
    return diag
