"""Time-recursive sparse estimation: AdCoSaMP and SpAPSM.

Both algorithms consume a stream of (x_n, y_n) pairs and track a sparse
parameter vector that may change over time. States are immutable snapshots;
every step returns a new one.
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from ensembles import make_rng
from operators import WeightedL1Ball, keep_top_k, project_weighted_l1_ball, top_k_indices

EXTRAPOLATION_FLOOR = 1e-14
NLMS_REGULARIZER = 1e-12
MSE_FLOOR = 1e-300


class OnlineAlgorithm(str, Enum):
    ADCOSAMP = "adcosamp"
    SPAPSM = "spapsm"


@dataclass
class OnlineConfig:
    sparsity_k: int
    lms_mu: float = 0.5
    forgetting_beta: float = 0.99
    slab_epsilon: float = 0.0
    q_slabs: int = 1
    ball_radius: Optional[float] = None  # None means rho = sparsity_k
    extrapolation_scale: float = 1.8
    weight_epsilon: float = 0.1
    use_weights: bool = True
    normalized_lms: bool = False

    def validate(self) -> None:
        invalid = []
        if self.sparsity_k < 1:
            invalid.append(f"sparsity_k={self.sparsity_k} (positive)")
        if not self.lms_mu > 0:
            invalid.append(f"lms_mu={self.lms_mu} (positive)")
        if not 0 < self.forgetting_beta <= 1:
            invalid.append(f"forgetting_beta={self.forgetting_beta} (in (0, 1])")
        if self.slab_epsilon < 0:
            invalid.append(f"slab_epsilon={self.slab_epsilon} (nonnegative)")
        if self.q_slabs < 1:
            invalid.append(f"q_slabs={self.q_slabs} (positive)")
        if self.ball_radius is not None and not self.ball_radius > 0:
            invalid.append(f"ball_radius={self.ball_radius} (positive)")
        if not 0 < self.extrapolation_scale < 2:
            invalid.append(f"extrapolation_scale={self.extrapolation_scale} (in (0, 2))")
        if not self.weight_epsilon > 0:
            invalid.append(f"weight_epsilon={self.weight_epsilon} (positive)")
        if invalid:
            raise ValueError("Invalid online configuration: " + ", ".join(invalid))

    @property
    def radius(self) -> float:
        return float(self.sparsity_k) if self.ball_radius is None else self.ball_radius


@dataclass(frozen=True, eq=False)
class StreamSample:
    input: np.ndarray
    output: float
    time: int


@dataclass(frozen=True, eq=False)
class OnlineState:
    estimate: np.ndarray
    correlation: np.ndarray
    slab_buffer: Tuple[StreamSample, ...] = ()
    mse_history: Tuple[float, ...] = ()
    last_input: Optional[np.ndarray] = None
    last_error: float = 0.0
    steps: int = 0


def initial_state(l: int) -> OnlineState:
    return OnlineState(estimate=np.zeros(l), correlation=np.zeros(l))


def adcosamp_step(state: OnlineState, sample: StreamSample, cfg: OnlineConfig) -> OnlineState:
    x, y = sample.input, sample.output
    theta = state.estimate
    if state.last_input is None:
        # the first sample only seeds the error recursion
        return replace(state, last_input=x, last_error=float(y - x @ theta), steps=state.steps + 1)

    k = cfg.sparsity_k
    p = cfg.forgetting_beta * state.correlation + state.last_input * state.last_error
    support = np.union1d(np.flatnonzero(theta), top_k_indices(p, 2 * k))

    x_s = x[support]
    error = y - x_s @ theta[support]
    mu = cfg.lms_mu
    if cfg.normalized_lms:
        mu = mu / (NLMS_REGULARIZER + x_s @ x_s)
    candidate = np.zeros_like(theta)
    candidate[support] = theta[support] + mu * x_s * error
    theta = keep_top_k(candidate, min(k, theta.size))

    return replace(
        state,
        estimate=theta,
        correlation=p,
        last_input=x,
        last_error=float(y - x @ theta),
        steps=state.steps + 1,
    )


def extrapolation_bound(theta: np.ndarray, projections: np.ndarray, weights: np.ndarray) -> float:
    """M_n: weighted mean squared move over the squared move of the mean, 1 when degenerate."""
    moves = projections - theta
    combined = weights @ moves
    denominator = float(combined @ combined)
    if denominator < EXTRAPOLATION_FLOOR:
        return 1.0
    return float(weights @ np.einsum('ij,ij->i', moves, moves)) / denominator


def _project_slabs(theta: np.ndarray, inputs: np.ndarray, outputs: np.ndarray, epsilon: float) -> np.ndarray:
    """Rows are the projections of theta onto each hyperslab |<x_i, .> - y_i| <= epsilon."""
    inner = inputs @ theta - outputs
    excess = np.where(inner > epsilon, inner - epsilon, np.where(inner < -epsilon, inner + epsilon, 0.0))
    norms = np.einsum('ij,ij->i', inputs, inputs)
    scale = np.divide(excess, norms, out=np.zeros_like(excess), where=norms > 0)
    return theta[None, :] - scale[:, None] * inputs


def spapsm_step(state: OnlineState, sample: StreamSample, cfg: OnlineConfig) -> OnlineState:
    buffer = (state.slab_buffer + (sample,))[-cfg.q_slabs:]
    theta = state.estimate
    inputs = np.stack([s.input for s in buffer])
    outputs = np.array([s.output for s in buffer])
    weights = np.full(len(buffer), 1.0 / len(buffer))

    projections = _project_slabs(theta, inputs, outputs, cfg.slab_epsilon)
    bound = extrapolation_bound(theta, projections, weights)
    moved = theta + cfg.extrapolation_scale * bound * (weights @ projections - theta)

    if cfg.use_weights:
        ball_weights = 1.0 / (np.abs(theta) + cfg.weight_epsilon)
    else:
        ball_weights = np.ones_like(theta)
    estimate = project_weighted_l1_ball(WeightedL1Ball(ball_weights, cfg.radius), moved)

    return replace(
        state,
        estimate=estimate,
        slab_buffer=buffer,
        last_input=sample.input,
        last_error=float(sample.output - sample.input @ estimate),
        steps=state.steps + 1,
    )


STEPS = {
    OnlineAlgorithm.ADCOSAMP: adcosamp_step,
    OnlineAlgorithm.SPAPSM: spapsm_step,
}


def haar_matrix(l: int) -> np.ndarray:
    """Orthonormal Haar synthesis basis; columns are the wavelets, s = H @ theta."""
    if l < 1 or l & (l - 1):
        raise ValueError(f"Haar basis needs a power-of-two length, got {l}")
    analysis = np.ones((1, 1))
    while analysis.shape[0] < l:
        n = analysis.shape[0]
        coarse = np.kron(analysis, [1.0, 1.0])
        detail = np.kron(np.eye(n), [1.0, -1.0])
        analysis = np.vstack([coarse, detail]) / np.sqrt(2.0)
    return analysis.T


@dataclass
class OnlineScenario:
    length: int = 256
    sparsity: int = 25
    samples: int = 1500
    change_at: Optional[int] = 750  # first time index that sees the changed target
    changed: int = 10
    noise_var: float = 0.1
    seed: int = 0
    wavelet: bool = True

    def validate(self) -> None:
        invalid = []
        if self.length < 1:
            invalid.append(f"length={self.length} (positive)")
        if self.wavelet and self.length & (self.length - 1):
            invalid.append(f"length={self.length} (power of two for the Haar basis)")
        if not 0 <= self.sparsity <= self.length:
            invalid.append(f"sparsity={self.sparsity} (between 0 and length)")
        if self.samples < 1:
            invalid.append(f"samples={self.samples} (positive)")
        if self.change_at is not None and not 1 < self.change_at <= self.samples:
            invalid.append(f"change_at={self.change_at} (between 2 and samples)")
        if not 0 <= self.changed <= self.length:
            invalid.append(f"changed={self.changed} (between 0 and length)")
        if self.noise_var < 0:
            invalid.append(f"noise_var={self.noise_var} (nonnegative)")
        if invalid:
            raise ValueError("Invalid online scenario: " + ", ".join(invalid))

    def generate(self) -> 'ScenarioData':
        self.validate()
        rng = make_rng(self.seed)
        l = self.length
        basis = haar_matrix(l) if self.wavelet else np.eye(l)

        before = np.zeros(l)
        support = rng.choice(l, size=self.sparsity, replace=False)
        before[support] = rng.uniform(-1.0, 1.0, size=self.sparsity)
        after = before.copy()
        if self.change_at is not None and self.changed:
            moved = rng.choice(l, size=self.changed, replace=False)
            after[moved] = rng.uniform(-1.0, 1.0, size=self.changed)

        raw = rng.standard_normal((self.samples, l))
        noise = np.sqrt(self.noise_var) * rng.standard_normal(self.samples)
        # y_n = x_n^T s = (basis^T x_n)^T theta, so the solvers see basis^T x_n
        inputs = raw @ basis
        times = np.arange(1, self.samples + 1)
        active_after = times >= self.change_at if self.change_at is not None else np.zeros(self.samples, bool)
        clean = np.where(active_after, inputs @ after, inputs @ before)
        return ScenarioData(basis, inputs, clean + noise, before, after, self.change_at)


@dataclass(eq=False)
class ScenarioData:
    basis: np.ndarray
    inputs: np.ndarray
    outputs: np.ndarray
    truth_before: np.ndarray
    truth_after: np.ndarray
    change_at: Optional[int]

    def truth(self, time: int) -> np.ndarray:
        if self.change_at is not None and time >= self.change_at:
            return self.truth_after
        return self.truth_before

    def samples(self):
        for index, (x, y) in enumerate(zip(self.inputs, self.outputs), start=1):
            yield StreamSample(x, float(y), index)


def mse_log10(basis: np.ndarray, truth: np.ndarray, estimate: np.ndarray) -> float:
    """log10(0.5 * ||s - basis @ theta||^2) with s = basis @ truth."""
    gap = basis @ (truth - estimate)
    return float(np.log10(max(0.5 * float(gap @ gap), MSE_FLOOR)))


def run_stream(scenario: OnlineScenario, algo: OnlineAlgorithm,
               cfg: OnlineConfig) -> Tuple[OnlineState, np.ndarray]:
    cfg.validate()
    algo = OnlineAlgorithm(algo)
    data = scenario.generate()
    step = STEPS[algo]
    state = initial_state(scenario.length)
    trace: List[float] = []
    for sample in data.samples():
        state = step(state, sample, cfg)
        trace.append(mse_log10(data.basis, data.truth(sample.time), state.estimate))
    logging.info(f"📈 {algo.value}: {len(trace)} samples, final log10 MSE {trace[-1]:.3f}")
    state = replace(state, mse_history=tuple(trace))
    return state, np.array(trace)
