"""Batch sparse recovery.

Greedy pursuits (OMP, the CSMP family covering CoSaMP and subspace pursuit,
two-stage thresholding), iterative shrinkage (ISTA, FISTA, IHT, sequential and
parallel coordinate descent) and the reweighted-l1 outer loop.

Every shrinkage solver minimizes ``0.5 * ||y - X theta||^2 + lam * sum(w * |theta|)``.
The unhalved loss of the textbook LASSO thresholds at lam/2; here the same
problem is written with lam directly, so callers converting from the unhalved
form pass half their value.
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg

from ensembles import DegenerateMatrixError, RegressionProblem, SingularSystemError, least_squares_qr
from operators import keep_top_k, lasso_optimality_gap, soft_threshold, top_k_indices

DEFAULT_STEP_FRACTION = 0.99
STEP_SLACK = 1e-12
STAGNATION_WINDOW = 10
STABLE_SUPPORT_ITERS = 3
CONTINUATION_FACTOR = 0.1
CONTINUATION_FLOOR = 1e-6
INNER_GAP_FRACTION = 1e-2
NIHT_SHRINK = 2.0
NIHT_MARGIN = 0.01
NIHT_MAX_SHRINKS = 50


class StepSizeError(ValueError):
    """Step size outside the range where the iteration converges."""


class Algorithm(str, Enum):
    OMP = "omp"
    CSMP = "csmp"
    COSAMP = "cosamp"
    SP = "sp"
    TST = "tst"
    ISTA = "ista"
    FISTA = "fista"
    IHT = "iht"
    CD = "cd"
    PCD = "pcd"
    REWEIGHTED_L1 = "irl1"


WEIGHTED_SOLVERS = (Algorithm.ISTA, Algorithm.FISTA, Algorithm.CD, Algorithm.PCD)


@dataclass
class BatchConfig:
    lam: float = 0.0
    step_mu: Optional[float] = None  # None picks the solver default
    sparsity_k: Optional[int] = None
    csmp_t: Optional[int] = None
    max_iters: int = 1000
    tol: float = 1e-8
    reweight_epsilon: float = 0.1
    reweight_rounds: int = 3
    lambda_ratio: Optional[float] = None  # lam = ratio * ||X^T y||_inf when set
    step_scale: Optional[float] = None  # step = scale / lambda_max(X^T X) when set
    tst_t: Optional[int] = None  # stage-one size for TST, defaults to k
    debias: bool = False  # least-squares refit on the final support
    inner: Algorithm = Algorithm.CD  # weighted solver inside reweighted_l1
    adaptive_step: bool = False  # normalized IHT: line-searched step on the active set
    gap_tol: Optional[float] = None  # stop shrinkage solvers on the optimality gap instead

    def validate(self) -> None:
        invalid = []
        if self.lam < 0:
            invalid.append(f"lam={self.lam} (nonnegative)")
        if self.step_mu is not None and not self.step_mu > 0:
            invalid.append(f"step_mu={self.step_mu} (positive)")
        if self.sparsity_k is not None and self.sparsity_k < 0:
            invalid.append(f"sparsity_k={self.sparsity_k} (nonnegative)")
        if self.csmp_t is not None and self.csmp_t < 1:
            invalid.append(f"csmp_t={self.csmp_t} (positive)")
        if self.tst_t is not None and self.tst_t < 1:
            invalid.append(f"tst_t={self.tst_t} (positive)")
        if self.max_iters < 1:
            invalid.append(f"max_iters={self.max_iters} (positive)")
        if self.tol < 0:
            invalid.append(f"tol={self.tol} (nonnegative)")
        if not self.reweight_epsilon > 0:
            invalid.append(f"reweight_epsilon={self.reweight_epsilon} (positive)")
        if self.reweight_rounds < 1:
            invalid.append(f"reweight_rounds={self.reweight_rounds} (positive)")
        if self.lambda_ratio is not None and self.lambda_ratio < 0:
            invalid.append(f"lambda_ratio={self.lambda_ratio} (nonnegative)")
        if self.step_scale is not None and not self.step_scale > 0:
            invalid.append(f"step_scale={self.step_scale} (positive)")
        if self.gap_tol is not None and self.gap_tol < 0:
            invalid.append(f"gap_tol={self.gap_tol} (nonnegative)")
        if invalid:
            raise ValueError("Invalid solver configuration: " + ", ".join(invalid))


@dataclass
class RecoveryResult:
    estimate: np.ndarray
    support: Tuple[int, ...]
    iterations: int
    residual_norm: float
    objective_history: List[float] = field(default_factory=list)
    converged: bool = False
    algo: str = ""


def spectral_bound(X: np.ndarray) -> float:
    """lambda_max(X^T X)."""
    return float(scipy.linalg.svdvals(X)[0] ** 2)


def lasso_objective(X: np.ndarray, y: np.ndarray, theta: np.ndarray, lam: float,
                    weights: Optional[np.ndarray] = None) -> float:
    r = y - X @ theta
    penalty = np.abs(theta).sum() if weights is None else float(weights @ np.abs(theta))
    return float(0.5 * (r @ r) + lam * penalty)


def momentum_sequence(n: int) -> List[float]:
    """First n FISTA momentum terms, starting from t_1 = 1."""
    t = [1.0]
    while len(t) < n:
        t.append((1.0 + np.sqrt(1.0 + 4.0 * t[-1] ** 2)) / 2.0)
    return t[:n]


def _regularization(P: RegressionProblem, cfg: BatchConfig) -> float:
    if cfg.lambda_ratio is not None:
        return cfg.lambda_ratio * float(np.abs(P.X.T @ P.y).max(initial=0.0))
    return cfg.lam


def _shrinkage_step(X: np.ndarray, cfg: BatchConfig) -> float:
    bound = spectral_bound(X)
    if bound == 0:
        raise DegenerateMatrixError("X is identically zero")
    if cfg.step_scale is not None:
        mu = cfg.step_scale / bound
    elif cfg.step_mu is not None:
        mu = cfg.step_mu
    else:
        return DEFAULT_STEP_FRACTION / bound
    if not 0 < mu <= (1.0 + STEP_SLACK) / bound:
        raise StepSizeError(f"Step size {mu:.6g} outside (0, 1/lambda_max] = (0, {1.0 / bound:.6g}]")
    return mu


def _column_norms_sq(X: np.ndarray) -> np.ndarray:
    col_sq = np.einsum('ij,ij->j', X, X)
    zero = np.flatnonzero(col_sq == 0)
    if zero.size:
        raise DegenerateMatrixError(f"Column {int(zero[0])} of X is zero")
    return col_sq


def _require_k(cfg: BatchConfig, name: str, l: int) -> int:
    if cfg.sparsity_k is None:
        raise ValueError(f"{name} needs sparsity_k")
    if cfg.sparsity_k > l:
        raise ValueError(f"{name}: sparsity_k={cfg.sparsity_k} exceeds {l} unknowns")
    return cfg.sparsity_k


def _weights(weights: Optional[np.ndarray], l: int) -> np.ndarray:
    if weights is None:
        return np.ones(l)
    w = np.asarray(weights, dtype=float)
    if w.shape != (l,) or np.any(w <= 0):
        raise ValueError(f"weights must be {l} positive values")
    return w


def _finish(P: RegressionProblem, theta: np.ndarray, iterations: int, history: List[float],
            converged: bool, algo: Algorithm, cfg: BatchConfig) -> RecoveryResult:
    support = np.flatnonzero(theta)
    if cfg.debias and support.size:
        try:
            refit = np.zeros_like(theta)
            refit[support] = least_squares_qr(P.X[:, support], P.y)
            theta = refit
            support = np.flatnonzero(theta)
        except SingularSystemError as exc:
            logging.debug(f"Debias skipped: {exc}")
    return RecoveryResult(
        estimate=theta,
        support=tuple(int(i) for i in support),
        iterations=iterations,
        residual_norm=float(np.linalg.norm(P.y - P.X @ theta)),
        objective_history=history,
        converged=converged,
        algo=algo.value,
    )


def omp(P: RegressionProblem, cfg: BatchConfig) -> RecoveryResult:
    X, y = P.X, P.y
    n, l = X.shape
    norms = np.sqrt(_column_norms_sq(X))
    limit = min(cfg.max_iters, n, l)
    if cfg.sparsity_k is not None:
        limit = min(limit, cfg.sparsity_k)

    support: List[int] = []
    theta = np.zeros(l)
    e = y.copy()
    history = [float(np.linalg.norm(e))]
    while len(support) < limit and history[-1] > cfg.tol:
        corr = np.abs(X.T @ e) / norms
        corr[support] = -1.0
        support.append(int(np.argmax(corr)))
        coef = least_squares_qr(X[:, support], y)
        theta = np.zeros(l)
        theta[support] = coef
        e = y - X @ theta
        history.append(float(np.linalg.norm(e)))
    return _finish(P, theta, len(support), history, history[-1] <= cfg.tol, Algorithm.OMP, cfg)


def _pursuit(P: RegressionProblem, cfg: BatchConfig, k: int, t: int, algo: Algorithm,
             select: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> RecoveryResult:
    X, y = P.X, P.y
    l = X.shape[1]
    theta = np.zeros(l)
    e = y.copy()
    history = [float(np.linalg.norm(e))]
    previous: Optional[Tuple[int, ...]] = None
    repeats = 0
    iterations = 0
    while iterations < cfg.max_iters and history[-1] > cfg.tol:
        iterations += 1
        active = select(theta, e)
        coef = least_squares_qr(X[:, active], y)
        full = np.zeros(l)
        full[active] = coef
        theta = keep_top_k(full, k)
        e = y - X @ theta
        residual = float(np.linalg.norm(e))
        current = tuple(np.flatnonzero(theta))
        repeats = repeats + 1 if current == previous and residual >= history[-1] else 0
        history.append(residual)
        previous = current
        if repeats >= STABLE_SUPPORT_ITERS - 1:
            break
    return _finish(P, theta, iterations, history, history[-1] <= cfg.tol, algo, cfg)


def csmp(P: RegressionProblem, cfg: BatchConfig, algo: Algorithm = Algorithm.CSMP) -> RecoveryResult:
    X = P.X
    k = _require_k(cfg, 'csmp', X.shape[1])
    if cfg.csmp_t is None:
        raise ValueError("csmp needs csmp_t (2k for CoSaMP, k for subspace pursuit)")
    t = min(cfg.csmp_t, X.shape[1])

    def select(theta, e):
        return np.union1d(np.flatnonzero(theta), top_k_indices(X.T @ e, t))

    return _pursuit(P, cfg, k, t, algo, select)


def cosamp(P: RegressionProblem, cfg: BatchConfig) -> RecoveryResult:
    k = _require_k(cfg, 'cosamp', P.X.shape[1])
    return csmp(P, replace(cfg, csmp_t=2 * k), Algorithm.COSAMP)


def subspace_pursuit(P: RegressionProblem, cfg: BatchConfig) -> RecoveryResult:
    k = _require_k(cfg, 'subspace pursuit', P.X.shape[1])
    return csmp(P, replace(cfg, csmp_t=k), Algorithm.SP)


def tst(P: RegressionProblem, cfg: BatchConfig) -> RecoveryResult:
    X = P.X
    k = _require_k(cfg, 'tst', X.shape[1])
    t = min(cfg.tst_t or k, X.shape[1])
    mu = cfg.step_mu if cfg.step_mu is not None else 1.0
    if cfg.step_scale is not None:
        mu = cfg.step_scale / spectral_bound(X)

    def select(theta, e):
        return np.sort(top_k_indices(theta + mu * (X.T @ e), t))

    return _pursuit(P, cfg, k, t, Algorithm.TST, select)


def _normalized_step(X: np.ndarray, theta: np.ndarray, gradient: np.ndarray, k: int) -> np.ndarray:
    """One normalized IHT update.

    The step is the exact line search along the gradient restricted to the
    active set (the current support, or the k largest correlations at the
    start). When thresholding changes the support, the step is shrunk until
    it is short enough for the new support.
    """
    active = np.flatnonzero(theta)
    if active.size == 0:
        active = np.sort(top_k_indices(gradient, k))
    g = gradient[active]
    Xg = X[:, active] @ g
    curvature = float(Xg @ Xg)
    mu = float(g @ g) / curvature if curvature > 0 else 1.0

    candidate = keep_top_k(theta + mu * gradient, k)
    for _ in range(NIHT_MAX_SHRINKS):
        if np.array_equal(np.flatnonzero(candidate), active):
            break
        move = candidate - theta
        Xm = X @ move
        spread = float(Xm @ Xm)
        if spread == 0 or mu <= (1.0 - NIHT_MARGIN) * float(move @ move) / spread:
            break
        mu /= NIHT_SHRINK * (1.0 - NIHT_MARGIN)
        candidate = keep_top_k(theta + mu * gradient, k)
    return candidate


def iht(P: RegressionProblem, cfg: BatchConfig) -> RecoveryResult:
    X, y = P.X, P.y
    k = _require_k(cfg, 'iht', X.shape[1])
    if cfg.step_scale is not None:
        mu = cfg.step_scale / spectral_bound(X)
    else:
        mu = cfg.step_mu if cfg.step_mu is not None else 1.0

    theta = np.zeros(X.shape[1])
    e = y.copy()
    history = [float(np.linalg.norm(e))]
    iterations = 0
    converged = False
    while iterations < cfg.max_iters:
        if history[-1] <= cfg.tol:
            converged = True
            break
        iterations += 1
        if cfg.adaptive_step:
            theta = _normalized_step(X, theta, X.T @ e, k)
        else:
            theta = keep_top_k(theta + mu * (X.T @ e), k)
        e = y - X @ theta
        history.append(float(np.linalg.norm(e)))
        if len(history) > STAGNATION_WINDOW:
            before = history[-1 - STAGNATION_WINDOW]
            if abs(before - history[-1]) <= cfg.tol * before:
                converged = True
                break
    converged = converged or history[-1] <= cfg.tol
    return _finish(P, theta, iterations, history, converged, Algorithm.IHT, cfg)


def _start(initial: Optional[np.ndarray], l: int) -> np.ndarray:
    return np.zeros(l) if initial is None else np.array(initial, dtype=float)


def _settled(previous: float, current: float, tol: float) -> bool:
    return previous - current <= tol * previous


def _should_stop(P: RegressionProblem, cfg: BatchConfig, theta: np.ndarray, lam: float,
                 w: np.ndarray, settled: bool) -> bool:
    if cfg.gap_tol is None:
        return settled
    return lasso_optimality_gap(P.X, P.y, theta, lam, w) <= cfg.gap_tol


def ista(P: RegressionProblem, cfg: BatchConfig, weights: Optional[np.ndarray] = None,
         initial: Optional[np.ndarray] = None) -> RecoveryResult:
    X, y = P.X, P.y
    l = X.shape[1]
    lam = _regularization(P, cfg)
    w = _weights(weights, l)
    mu = _shrinkage_step(X, cfg)
    thresholds = mu * lam * w

    theta = _start(initial, l)
    history = [lasso_objective(X, y, theta, lam, w)]
    converged = False
    iterations = 0
    while iterations < cfg.max_iters:
        iterations += 1
        theta = soft_threshold(theta + mu * (X.T @ (y - X @ theta)), thresholds)
        history.append(lasso_objective(X, y, theta, lam, w))
        if _should_stop(P, cfg, theta, lam, w, _settled(history[-2], history[-1], cfg.tol)):
            converged = True
            break
    return _finish(P, theta, iterations, history, converged, Algorithm.ISTA, cfg)


def fista(P: RegressionProblem, cfg: BatchConfig, weights: Optional[np.ndarray] = None,
          initial: Optional[np.ndarray] = None) -> RecoveryResult:
    X, y = P.X, P.y
    l = X.shape[1]
    lam = _regularization(P, cfg)
    w = _weights(weights, l)
    mu = _shrinkage_step(X, cfg)
    thresholds = mu * lam * w

    theta = _start(initial, l)
    z = theta.copy()
    t = 1.0
    history = [lasso_objective(X, y, theta, lam, w)]
    converged = False
    iterations = 0
    while iterations < cfg.max_iters:
        iterations += 1
        previous = theta
        theta = soft_threshold(z + mu * (X.T @ (y - X @ z)), thresholds)
        t_next = (1.0 + np.sqrt(1.0 + 4.0 * t * t)) / 2.0
        z = theta + ((t - 1.0) / t_next) * (theta - previous)
        t = t_next
        history.append(lasso_objective(X, y, theta, lam, w))
        if _should_stop(P, cfg, theta, lam, w, abs(history[-2] - history[-1]) <= cfg.tol * history[-2]):
            converged = True
            break
    return _finish(P, theta, iterations, history, converged, Algorithm.FISTA, cfg)


def coordinate_descent(P: RegressionProblem, cfg: BatchConfig, weights: Optional[np.ndarray] = None,
                       initial: Optional[np.ndarray] = None) -> RecoveryResult:
    X, y = P.X, P.y
    l = X.shape[1]
    col_sq = _column_norms_sq(X)
    lam = _regularization(P, cfg)
    w = _weights(weights, l)
    thresholds = lam * w / col_sq

    theta = _start(initial, l)
    e = y - X @ theta
    history = [lasso_objective(X, y, theta, lam, w)]
    converged = False
    sweeps = 0
    while sweeps < cfg.max_iters:
        sweeps += 1
        for j in range(l):
            old = theta[j]
            z = old + (X[:, j] @ e) / col_sq[j]
            new = np.sign(z) * max(abs(z) - thresholds[j], 0.0)
            if new != old:
                e -= X[:, j] * (new - old)
                theta[j] = new
        history.append(lasso_objective(X, y, theta, lam, w))
        if _should_stop(P, cfg, theta, lam, w, _settled(history[-2], history[-1], cfg.tol)):
            converged = True
            break
    return _finish(P, theta, sweeps, history, converged, Algorithm.CD, cfg)


def parallel_coordinate_descent(P: RegressionProblem, cfg: BatchConfig,
                                weights: Optional[np.ndarray] = None,
                                initial: Optional[np.ndarray] = None) -> RecoveryResult:
    """All coordinates solved against the same residual, then a backtracking step."""
    X, y = P.X, P.y
    l = X.shape[1]
    col_sq = _column_norms_sq(X)
    lam = _regularization(P, cfg)
    w = _weights(weights, l)
    thresholds = lam * w / col_sq

    theta = _start(initial, l)
    e = y - X @ theta
    objective = lasso_objective(X, y, theta, lam, w)
    history = [objective]
    converged = False
    iterations = 0
    while iterations < cfg.max_iters:
        iterations += 1
        direction = soft_threshold(theta + (X.T @ e) / col_sq, thresholds) - theta
        if not np.any(direction):
            converged = True
            break
        moved = X @ direction
        step = 1.0
        for _ in range(40):
            candidate = theta + step * direction
            trial_e = e - step * moved
            trial = float(0.5 * (trial_e @ trial_e) + lam * (w @ np.abs(candidate)))
            if trial <= objective:
                break
            step *= 0.5
        else:
            converged = True
            break
        theta, e, objective = candidate, trial_e, trial
        history.append(objective)
        if _should_stop(P, cfg, theta, lam, w, _settled(history[-2], history[-1], cfg.tol)):
            converged = True
            break
    return _finish(P, theta, iterations, history, converged, Algorithm.PCD, cfg)


WEIGHTED_DISPATCH: Dict[Algorithm, Callable[..., RecoveryResult]] = {
    Algorithm.ISTA: ista,
    Algorithm.FISTA: fista,
    Algorithm.CD: coordinate_descent,
    Algorithm.PCD: parallel_coordinate_descent,
}


def _weighted_lasso(P: RegressionProblem, cfg: BatchConfig, inner: Algorithm, w: np.ndarray,
                    lam: float, start: np.ndarray) -> RecoveryResult:
    """Weighted LASSO at lam; lam == 0 stands for the equality-constrained problem.

    Solved along a decreasing lam path with warm starts, ending at lam or, for
    the constrained case, at 1e-6 * ||X^T y||_inf. Each level runs until its
    optimality gap is below 1% of that level.
    """
    X, y = P.X, P.y
    corr = np.abs(X.T @ y)
    scale = float(corr.max(initial=0.0))
    target = lam if lam > 0 else CONTINUATION_FLOOR * scale
    entry = float((corr / w).max(initial=0.0))
    solver = WEIGHTED_DISPATCH[inner]
    if target == 0 or entry == 0:
        return solver(P, replace(cfg, lam=0.0, lambda_ratio=None), weights=w, initial=start)

    path = []
    level = entry * CONTINUATION_FACTOR
    while level > target:
        path.append(level)
        level *= CONTINUATION_FACTOR
    path.append(target)

    theta = start
    total = 0
    history: List[float] = []
    result = None
    for level in path:
        level_cfg = replace(cfg, lam=level, lambda_ratio=None, debias=False, gap_tol=INNER_GAP_FRACTION * level)
        result = solver(P, level_cfg, weights=w, initial=theta)
        theta = result.estimate
        total += result.iterations
        history.extend(result.objective_history)
    result.iterations = total
    result.objective_history = history
    return result


def reweighted_l1(P: RegressionProblem, cfg: BatchConfig, inner: Optional[Algorithm] = None,
                  initial_weights: Optional[np.ndarray] = None) -> RecoveryResult:
    inner = Algorithm(inner or cfg.inner)
    if inner not in WEIGHTED_DISPATCH:
        raise ValueError(f"reweighted_l1 needs a weighted solver ({', '.join(a.value for a in WEIGHTED_DISPATCH)}), got {inner.value}")
    l = P.X.shape[1]
    w = _weights(initial_weights, l)
    lam = _regularization(P, cfg)
    theta = np.zeros(l)
    result = None
    for round_index in range(cfg.reweight_rounds):
        result = _weighted_lasso(P, cfg, inner, w, lam, theta)
        theta = result.estimate
        logging.debug(f"Reweighting round {round_index + 1}: support size {len(result.support)}")
        w = 1.0 / (np.abs(theta) + cfg.reweight_epsilon)
    final = _finish(P, result.estimate, result.iterations, result.objective_history,
                    result.converged, Algorithm.REWEIGHTED_L1, cfg)
    return final


SOLVERS: Dict[Algorithm, Callable[[RegressionProblem, BatchConfig], RecoveryResult]] = {
    Algorithm.OMP: omp,
    Algorithm.CSMP: csmp,
    Algorithm.COSAMP: cosamp,
    Algorithm.SP: subspace_pursuit,
    Algorithm.TST: tst,
    Algorithm.ISTA: ista,
    Algorithm.FISTA: fista,
    Algorithm.IHT: iht,
    Algorithm.CD: coordinate_descent,
    Algorithm.PCD: parallel_coordinate_descent,
    Algorithm.REWEIGHTED_L1: reweighted_l1,
}


def solve(algo: Algorithm, P: RegressionProblem, cfg: BatchConfig) -> RecoveryResult:
    cfg.validate()
    return SOLVERS[Algorithm(algo)](P, cfg)
