"""Experiment engine: sparse problem generation, seeded trials, recovery
curves, phase-transition grids, online MSE traces and the Gabor demo.

Trials are independent jobs. Each one derives its own seed from the run seed
and its grid coordinates, so results do not depend on the worker count or on
the order in which the pool finishes them.
"""

import logging
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, get_args

import numpy as np
from dotenv import dotenv_values

from dictionaries import (
    Frame,
    GaborParams,
    analysis,
    canonical_dual,
    chirp_signal,
    coefficient_decay,
    gabor_dictionary,
    spectrogram,
    synthesis,
)
from ensembles import Ensemble, RegressionProblem, derive_seed, explicit, generate, make_rng
from operators import top_k_indices
from result_files import to_gray, write_csv, write_pgm, write_trace_csv
from solvers_batch import Algorithm, BatchConfig, RecoveryResult, solve
from solvers_online import OnlineAlgorithm, OnlineConfig, OnlineScenario, run_stream

SPECTROGRAM_RANGE_DB = 60.0


class ValueDistribution(str, Enum):
    CARS = "cars"  # constant amplitude, random sign
    GAUSSIAN = "gaussian"
    UNIFORM = "uniform"
    DOUBLE_EXPONENTIAL = "double_exponential"
    CAUCHY = "cauchy"


class SupportRule(str, Enum):
    EXACT_K = "exact_k"
    BERNOULLI = "bernoulli"  # each index kept with probability k/l


class TrialFailure(str, Enum):
    NOT_RECOVERED = "not_recovered"
    SUPPORT_MISMATCH = "support_mismatch"
    SOLVER_ERROR = "solver_error"


@dataclass(frozen=True)
class VectorEnsemble:
    kind: ValueDistribution = ValueDistribution.GAUSSIAN
    sparsity_k: int = 1
    support_rule: SupportRule = SupportRule.EXACT_K


def gen_sparse_vector(ens: VectorEnsemble, l: int, seed: int) -> np.ndarray:
    k = ens.sparsity_k
    if k < 0 or k > l:
        raise ValueError(f"Sparsity k={k} must lie between 0 and l={l}")
    rng = make_rng(seed)
    theta = np.zeros(l)
    if SupportRule(ens.support_rule) is SupportRule.EXACT_K:
        support = np.sort(rng.choice(l, size=k, replace=False))
    else:
        support = np.flatnonzero(rng.random(l) < k / l)
    m = support.size

    kind = ValueDistribution(ens.kind)
    if kind is ValueDistribution.CARS:
        values = np.where(rng.random(m) < 0.5, -1.0, 1.0)
    elif kind is ValueDistribution.GAUSSIAN:
        values = rng.standard_normal(m)
    elif kind is ValueDistribution.UNIFORM:
        values = rng.uniform(-1.0, 1.0, size=m)
    elif kind is ValueDistribution.DOUBLE_EXPONENTIAL:
        values = rng.laplace(0.0, 1.0, size=m)
    else:
        values = rng.standard_cauchy(m)
    theta[support] = values
    return theta


@dataclass
class TrialRecord:
    seed: int
    n: int
    l: int
    k: int
    success: bool
    failure: Optional[TrialFailure] = None
    reason: str = ""
    relative_error: float = float('nan')
    iterations: int = 0
    seconds: float = 0.0


def trial_config(algo: Algorithm, cfg: BatchConfig, k: int) -> BatchConfig:
    """Give the solver the true sparsity; CSMP without an explicit t runs as CoSaMP."""
    k = max(k, 1)
    trial = replace(cfg, sparsity_k=k)
    if Algorithm(algo) is Algorithm.CSMP and cfg.csmp_t is None:
        trial = replace(trial, csmp_t=2 * k)
    return trial


def run_trial(matrix_ens: Ensemble, vector_ens: VectorEnsemble, n: int, l: int,
              noise_sigma: float, algo: Algorithm, cfg: BatchConfig, seed: int,
              success_tol: float = 1e-4, normalize: bool = True) -> TrialRecord:
    X = generate(matrix_ens, n, l, derive_seed(seed, 0), normalize=normalize)
    truth = gen_sparse_vector(vector_ens, l, derive_seed(seed, 1))
    problem = RegressionProblem.from_truth(X, truth, noise_sigma, derive_seed(seed, 2))
    true_support = np.flatnonzero(truth)
    k = int(true_support.size)
    record = TrialRecord(seed=seed, n=n, l=l, k=k, success=False)

    started = time.perf_counter()
    try:
        result = solve(algo, problem, trial_config(algo, cfg, k))
    except Exception as exc:
        record.seconds = time.perf_counter() - started
        record.failure = TrialFailure.SOLVER_ERROR
        record.reason = str(exc)
        logging.debug(f"Trial {seed}: solver error: {exc}")
        return record
    record.seconds = time.perf_counter() - started
    record.iterations = result.iterations

    gap = float(np.linalg.norm(result.estimate - truth))
    scale = float(np.linalg.norm(truth))
    record.relative_error = gap / scale if scale > 0 else gap
    if noise_sigma == 0:
        record.success = record.relative_error <= success_tol
        if not record.success:
            record.failure = TrialFailure.NOT_RECOVERED
    else:
        estimated = set(int(i) for i in top_k_indices(result.estimate, k)) if k else set()
        record.success = estimated == set(int(i) for i in true_support)
        if not record.success:
            record.failure = TrialFailure.SUPPORT_MISMATCH
    return record


def run_solve(matrix_ens: Ensemble, vector_ens: VectorEnsemble, n: int, l: int,
              noise_sigma: float, algo: Algorithm, cfg: BatchConfig, seed: int,
              normalize: bool = True) -> Tuple[RegressionProblem, RecoveryResult]:
    """One seeded problem solved once; the CLI ``solve`` command."""
    X = generate(matrix_ens, n, l, derive_seed(seed, 0), normalize=normalize)
    truth = gen_sparse_vector(vector_ens, l, derive_seed(seed, 1))
    problem = RegressionProblem.from_truth(X, truth, noise_sigma, derive_seed(seed, 2))
    result = solve(algo, problem, trial_config(algo, cfg, vector_ens.sparsity_k))
    return problem, result


def run_pool(jobs: Sequence[Callable[[], Any]], workers: int) -> List[Any]:
    """Run zero-argument jobs and return their results in submission order."""
    if workers <= 1 or len(jobs) <= 1:
        return [job() for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(lambda job: job(), jobs))


@dataclass
class PhaseSpec:
    l: int = 100
    grid: int = 15
    trials: int = 25
    algo: Algorithm = Algorithm.OMP
    solver: BatchConfig = field(default_factory=BatchConfig)
    matrix_ensemble: Ensemble = Ensemble.GAUSSIAN
    values: ValueDistribution = ValueDistribution.GAUSSIAN
    support_rule: SupportRule = SupportRule.EXACT_K
    noise_sigma: float = 0.0
    success_tol: float = 1e-4
    seed: int = 0
    normalize: bool = True
    workers: int = 1

    def validate(self) -> None:
        invalid = []
        if self.l < 1:
            invalid.append(f"l={self.l} (positive)")
        if self.grid < 1:
            invalid.append(f"grid={self.grid} (positive)")
        if self.trials < 1:
            invalid.append(f"trials={self.trials} (positive)")
        if not self.success_tol > 0:
            invalid.append(f"success_tol={self.success_tol} (positive)")
        if self.noise_sigma < 0:
            invalid.append(f"noise_sigma={self.noise_sigma} (nonnegative)")
        if self.workers < 1:
            invalid.append(f"workers={self.workers} (positive)")
        if invalid:
            raise ValueError("Invalid phase specification: " + ", ".join(invalid))
        self.solver.validate()

    def vector(self, k: int) -> VectorEnsemble:
        return VectorEnsemble(self.values, k, self.support_rule)

    def trial_job(self, n: int, k: int, seed: int) -> Callable[[], TrialRecord]:
        return lambda: run_trial(self.matrix_ensemble, self.vector(k), n, self.l, self.noise_sigma,
                                 self.algo, self.solver, seed, self.success_tol, self.normalize)

    def metadata(self) -> Dict[str, Any]:
        meta = {
            "seed": self.seed,
            "algo": Algorithm(self.algo).value,
            "l": self.l,
            "grid": self.grid,
            "trials": self.trials,
            "matrix_ensemble": Ensemble(self.matrix_ensemble).value,
            "values": ValueDistribution(self.values).value,
            "support_rule": SupportRule(self.support_rule).value,
            "noise_sigma": self.noise_sigma,
            "success_tol": self.success_tol,
            "normalize": self.normalize,
        }
        for name, value in asdict(self.solver).items():
            meta[f"solver.{name}"] = value
        return meta


@dataclass
class PhaseCell:
    alpha: float
    beta: float
    n: int
    k: int
    successes: int
    trials: int
    median_seconds: float = 0.0

    @property
    def probability(self) -> float:
        return self.successes / self.trials if self.trials else 0.0


def _summarize(records: List[TrialRecord]) -> Tuple[int, float]:
    successes = sum(1 for r in records if r.success)
    seconds = statistics.median(r.seconds for r in records) if records else 0.0
    return successes, seconds


def recovery_curve(spec: PhaseSpec, n: int, out: Optional[str] = None) -> List[Tuple[float, float]]:
    """Empirical success probability for k = 1..n at a fixed number of measurements."""
    spec.validate()
    if not 1 <= n <= spec.l:
        raise ValueError(f"Curve needs 1 <= N <= l={spec.l}, got N={n}")
    logging.info(f"🚀 Recovery curve: {Algorithm(spec.algo).value}, N={n}, l={spec.l}, {spec.trials} trials per k")
    jobs = [spec.trial_job(n, k, derive_seed(spec.seed, n, k, trial))
            for k in range(1, n + 1) for trial in range(spec.trials)]
    records = run_pool(jobs, spec.workers)

    curve: List[Tuple[float, float]] = []
    rows = []
    for k in range(1, n + 1):
        chunk = records[(k - 1) * spec.trials:k * spec.trials]
        successes, _ = _summarize(chunk)
        curve.append((k / n, successes / spec.trials))
        rows.append((k, k / n, successes, spec.trials, successes / spec.trials))
    if out:
        meta = dict(spec.metadata(), n=n)
        write_csv(f"{out}.csv", meta, ("k", "beta", "successes", "trials", "probability"), rows)
    return curve


def grid_point(l: int, grid: int, row: int, col: int) -> Tuple[float, float, int, int]:
    alpha = (row + 1) / grid
    beta = (col + 1) / grid
    n = max(1, int(round(alpha * l)))
    k = max(1, int(round(beta * n)))
    return alpha, beta, n, k


def phase_grid(spec: PhaseSpec, out: Optional[str] = None) -> List[List[PhaseCell]]:
    """Rows follow alpha = N/l, columns follow beta = k/N, both (i+1)/grid."""
    spec.validate()
    logging.info(
        f"🚀 Phase grid: {Algorithm(spec.algo).value}, l={spec.l}, {spec.grid}x{spec.grid} cells, "
        f"{spec.trials} trials each, {spec.workers} workers"
    )
    layout = []
    jobs = []
    for row in range(spec.grid):
        for col in range(spec.grid):
            alpha, beta, n, k = grid_point(spec.l, spec.grid, row, col)
            count = spec.trials if k <= n else 0
            layout.append((row, col, alpha, beta, n, k, count))
            jobs.extend(spec.trial_job(n, k, derive_seed(spec.seed, row, col, trial)) for trial in range(count))

    started = time.perf_counter()
    records = run_pool(jobs, spec.workers)
    cells: List[List[PhaseCell]] = [[None] * spec.grid for _ in range(spec.grid)]
    position = 0
    for row, col, alpha, beta, n, k, count in layout:
        chunk = records[position:position + count]
        position += count
        successes, seconds = _summarize(chunk)
        cells[row][col] = PhaseCell(alpha, beta, n, k, successes, count, seconds)
        logging.info(
            f"📊 Cell alpha={alpha:.3f} beta={beta:.3f} (N={n}, k={k}): "
            f"{successes}/{count} recovered, median {1000 * seconds:.3f} ms per trial"
        )
    logging.info(f"✅ Phase grid done: {len(records)} trials in {time.perf_counter() - started:.1f}s")

    if out:
        write_phase_files(out, spec, cells)
    return cells


def phase_image(cells: List[List[PhaseCell]]) -> np.ndarray:
    """Heatmap with alpha growing to the right and beta growing upward."""
    grid = len(cells)
    image = np.zeros((grid, grid), dtype=np.uint8)
    for row in range(grid):
        for col in range(grid):
            cell = cells[row][col]
            if cell.trials:
                image[grid - 1 - col, row] = (255 * cell.successes) // cell.trials
    return image


def write_phase_files(out: str, spec: PhaseSpec, cells: List[List[PhaseCell]]) -> Tuple[Path, Path]:
    rows = [
        (c.alpha, c.beta, c.n, c.k, c.successes, c.trials)
        for line in cells for c in line
    ]
    csv_path = write_csv(f"{out}.csv", spec.metadata(), ("alpha", "beta", "n", "k", "m", "M"), rows)
    pgm_path = write_pgm(f"{out}.pgm", phase_image(cells))
    return csv_path, pgm_path


def default_online_configs(scenario: OnlineScenario,
                           overrides: Optional[Dict[str, Any]] = None) -> Dict[OnlineAlgorithm, OnlineConfig]:
    """Overestimated sparsity (1.5 k), NLMS for AdCoSaMP, 3l/8 slabs of width 1.3 sigma for SpAPSM."""
    k_hat = max(1, int(np.ceil(1.5 * scenario.sparsity)))
    noise = float(np.sqrt(scenario.noise_var))
    adcosamp = OnlineConfig(sparsity_k=k_hat, lms_mu=1.0, forgetting_beta=0.99, normalized_lms=True)
    spapsm = OnlineConfig(
        sparsity_k=k_hat,
        q_slabs=max(1, (3 * scenario.length) // 8),
        slab_epsilon=1.3 * noise,
        extrapolation_scale=1.8,
        weight_epsilon=0.1,
        use_weights=True,
    )
    if overrides:
        adcosamp = replace(adcosamp, **overrides)
        spapsm = replace(spapsm, **overrides)
    return {OnlineAlgorithm.ADCOSAMP: adcosamp, OnlineAlgorithm.SPAPSM: spapsm}


def online_experiment(scenario: OnlineScenario, configs: Optional[Dict[OnlineAlgorithm, OnlineConfig]] = None,
                      out: Optional[str] = None, workers: int = 1) -> Dict[OnlineAlgorithm, np.ndarray]:
    """Run both online algorithms on the same stream; traces are log10 MSE per sample."""
    scenario.validate()
    configs = configs or default_online_configs(scenario)
    algos = list(configs)
    logging.info(
        f"🚀 Online experiment: l={scenario.length}, k={scenario.sparsity}, {scenario.samples} samples, "
        f"change at {scenario.change_at}"
    )
    jobs = [lambda algo=algo: run_stream(scenario, algo, configs[algo])[1] for algo in algos]
    traces = dict(zip(algos, run_pool(jobs, workers)))

    if out:
        for algo, trace in traces.items():
            meta = {f"scenario.{k}": v for k, v in asdict(scenario).items()}
            meta.update({f"config.{k}": v for k, v in asdict(configs[algo]).items()})
            write_trace_csv(f"{out}_{algo.value}.csv", meta, algo.value, scenario.seed, trace)
    return traces


_SCENARIO_FIELDS = {f.name: f.type for f in fields(OnlineScenario)}
_CONFIG_FIELDS = {f.name: f.type for f in fields(OnlineConfig)}


def _parse_field(name: str, kind, raw: str) -> Any:
    args = [a for a in get_args(kind) if a is not type(None)]
    optional = len(args) < len(get_args(kind))
    base = args[0] if args else kind
    text = raw.strip()
    if optional and text.lower() in ('', 'none'):
        return None
    if base is bool:
        if text.lower() in ('true', '1', 'yes'):
            return True
        if text.lower() in ('false', '0', 'no'):
            return False
        raise ValueError(f"Invalid {name}: expected true or false, got {raw!r}")
    try:
        return base(text)
    except ValueError as exc:
        raise ValueError(f"Invalid {name}: expected {base.__name__}, got {raw!r}") from exc


def load_scenario_file(path: str) -> Tuple[OnlineScenario, Dict[str, Any]]:
    """Read ``key=value`` lines into a scenario plus online-config overrides."""
    if not Path(path).is_file():
        raise ValueError(f"Scenario file not found: {path}")
    values = dotenv_values(path, interpolate=False)
    scenario_args: Dict[str, Any] = {}
    overrides: Dict[str, Any] = {}
    unknown = []
    for key, raw in values.items():
        name = key.strip().lower()
        raw = raw or ''
        if name in _SCENARIO_FIELDS:
            scenario_args[name] = _parse_field(name, _SCENARIO_FIELDS[name], raw)
        elif name in _CONFIG_FIELDS:
            overrides[name] = _parse_field(name, _CONFIG_FIELDS[name], raw)
        else:
            unknown.append(key)
    if unknown:
        raise ValueError(f"Unknown scenario keys in {path}: {', '.join(unknown)}")
    scenario = OnlineScenario(**scenario_args)
    scenario.validate()
    return scenario, overrides


@dataclass
class GaborDemoResult:
    frame: Frame
    coefficients: np.ndarray
    signal: np.ndarray
    recovered: np.ndarray
    relative_error: float
    files: List[Path] = field(default_factory=list)


def spectrogram_image(energy: np.ndarray, dynamic_range_db: float = SPECTROGRAM_RANGE_DB) -> np.ndarray:
    """Log-scaled, max-normalized; low frequencies at the bottom."""
    peak = float(energy.max(initial=0.0))
    if peak <= 0:
        return np.zeros(energy.shape, dtype=np.uint8)
    floor = peak * 10.0 ** (-dynamic_range_db / 10.0)
    db = 10.0 * np.log10(np.maximum(energy, floor) / peak)
    return to_gray((db + dynamic_range_db)[::-1, :], dynamic_range_db)


def gabor_demo(l: int = 512, sigma: Optional[float] = None, alpha: int = 16, beta: int = 8,
               seed: int = 0, out: Optional[str] = None, lambda_ratio: float = 0.01,
               max_iters: int = 2000) -> GaborDemoResult:
    """Compress a chirp with a +-1 matrix at N = l/8 and recover its Gabor synthesis coefficients."""
    params = GaborParams(l, sigma if sigma is not None else l / 16.0, alpha, beta)
    frame = gabor_dictionary(params)
    signal = chirp_signal(l)
    logging.info(f"🚀 Gabor demo: l={l}, {frame.size} atoms, bounds [{frame.lower_bound:.4g}, {frame.upper_bound:.4g}]")

    n = max(1, l // 8)
    sensing = generate(Ensemble.BERNOULLI, n, l, seed)
    measurements = sensing.entries @ signal
    problem = RegressionProblem(explicit(sensing.entries @ frame.atoms), measurements)
    result = solve(Algorithm.FISTA, problem, BatchConfig(lambda_ratio=lambda_ratio, max_iters=max_iters, tol=1e-10))
    recovered = synthesis(frame, result.estimate)
    error = float(np.linalg.norm(recovered - signal) / np.linalg.norm(signal))
    logging.info(f"📈 Gabor demo: {len(result.support)} active atoms, relative error {error:.4f}")

    demo = GaborDemoResult(frame, result.estimate, signal, recovered, error)
    if out:
        meta = {
            "seed": seed, "l": l, "sigma": params.sigma, "alpha": alpha, "beta": beta,
            "n": n, "lambda_ratio": lambda_ratio, "relative_error": error,
        }
        recovered_decay = coefficient_decay(result.estimate)
        dual_decay = coefficient_decay(canonical_dual(frame).T @ signal)
        rows = [(rank, recovered_decay[rank - 1], dual_decay[rank - 1]) for rank in range(1, frame.size + 1)]
        demo.files.append(write_csv(f"{out}_decay.csv", meta, ("rank", "synthesis", "dual_analysis"), rows))
        demo.files.append(write_pgm(f"{out}_spectrogram.pgm", spectrogram_image(spectrogram(frame, result.estimate))))
        original = spectrogram(frame, analysis(frame, signal))
        demo.files.append(write_pgm(f"{out}_original.pgm", spectrogram_image(original)))
    return demo
