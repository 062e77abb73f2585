"""Thresholding rules and convex projections shared by every solver."""

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple, Union

import numpy as np

SCAD_ALPHA = 3.7


class ThresholdKind(str, Enum):
    SOFT = "soft"
    HARD = "hard"
    TOP_K = "top_k"
    SCAD = "scad"
    GARROTE = "garrote"


@dataclass(frozen=True)
class ThresholdRule:
    kind: ThresholdKind
    lam: float = 0.0
    k: int = 0
    alpha: float = SCAD_ALPHA

    def __post_init__(self):
        object.__setattr__(self, 'kind', ThresholdKind(self.kind))
        if self.kind is ThresholdKind.TOP_K:
            if self.k < 0:
                raise ValueError(f"TopK needs k >= 0, got {self.k}")
        elif not self.lam > 0:
            raise ValueError(f"{self.kind.value} threshold needs lambda > 0, got {self.lam}")
        if self.kind is ThresholdKind.SCAD and not self.alpha > 2:
            raise ValueError(f"SCAD needs alpha > 2, got {self.alpha}")

    @classmethod
    def soft(cls, lam: float) -> 'ThresholdRule':
        return cls(ThresholdKind.SOFT, lam=lam)

    @classmethod
    def hard(cls, lam: float) -> 'ThresholdRule':
        return cls(ThresholdKind.HARD, lam=lam)

    @classmethod
    def top_k(cls, k: int) -> 'ThresholdRule':
        return cls(ThresholdKind.TOP_K, k=k)

    @classmethod
    def scad(cls, lam: float, alpha: float = SCAD_ALPHA) -> 'ThresholdRule':
        return cls(ThresholdKind.SCAD, lam=lam, alpha=alpha)

    @classmethod
    def garrote(cls, lam: float) -> 'ThresholdRule':
        return cls(ThresholdKind.GARROTE, lam=lam)


def soft_threshold(v: np.ndarray, thresholds) -> np.ndarray:
    """sign(v) * max(|v| - t, 0); ``thresholds`` may be a scalar or per entry."""
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - thresholds, 0.0)


def top_k_indices(v: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest magnitudes; ties go to the lower index."""
    order = np.argsort(-np.abs(v), kind='stable')
    return order[:k]


def keep_top_k(v: np.ndarray, k: int) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if k > v.size:
        raise ValueError(f"TopK with k={k} on a vector of length {v.size}")
    out = np.zeros_like(v)
    idx = top_k_indices(v, k)
    out[idx] = v[idx]
    return out


def apply_threshold(rule: ThresholdRule, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    a = np.abs(v)
    lam = rule.lam
    if rule.kind is ThresholdKind.SOFT:
        return soft_threshold(v, lam)
    if rule.kind is ThresholdKind.HARD:
        return np.where(a > lam, v, 0.0)
    if rule.kind is ThresholdKind.TOP_K:
        return keep_top_k(v, rule.k)
    if rule.kind is ThresholdKind.SCAD:
        alpha = rule.alpha
        middle = ((alpha - 1) * v - alpha * lam * np.sign(v)) / (alpha - 2)
        # seams |v| = 2*lam and |v| = alpha*lam belong to the lower branch
        return np.where(a <= 2 * lam, soft_threshold(v, lam), np.where(a <= alpha * lam, middle, v))
    safe = np.where(v == 0, 1.0, v)
    return np.where(a > lam, v - lam * lam / safe, 0.0)


@dataclass(frozen=True, eq=False)
class Hyperslab:
    normal: np.ndarray
    center: float
    half_width: float

    def __post_init__(self):
        normal = np.asarray(self.normal, dtype=float)
        if not np.any(normal):
            raise ValueError("Hyperslab normal vector must be nonzero")
        if self.half_width < 0:
            raise ValueError(f"Hyperslab half width must be nonnegative, got {self.half_width}")
        object.__setattr__(self, 'normal', normal)


def project_hyperslab(S: Hyperslab, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != S.normal.shape:
        raise ValueError(f"Dimension mismatch: slab {S.normal.shape} vs vector {theta.shape}")
    inner = float(S.normal @ theta)
    if inner > S.center + S.half_width:
        excess = inner - S.center - S.half_width
    elif inner < S.center - S.half_width:
        excess = inner - S.center + S.half_width
    else:
        return theta.copy()
    return theta - (excess / float(S.normal @ S.normal)) * S.normal


@dataclass(frozen=True, eq=False)
class WeightedL1Ball:
    weights: np.ndarray
    radius: float

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float)
        if weights.ndim != 1 or not np.all(weights > 0):
            raise ValueError("Weighted l1 ball needs a vector of strictly positive weights")
        if not self.radius > 0:
            raise ValueError(f"Weighted l1 ball needs a positive radius, got {self.radius}")
        object.__setattr__(self, 'weights', weights)


def project_weighted_l1_ball(B: WeightedL1Ball, theta) -> np.ndarray:
    """Metric projection onto {x : sum w_i |x_i| <= rho}.

    Entries are sorted by |theta_i| / w_i; the active prefix is shrunk until
    every kept entry exceeds the common threshold, then each kept magnitude is
    reduced by threshold * w_i.
    """
    theta = np.asarray(theta, dtype=float)
    w = B.weights
    if theta.shape != w.shape:
        raise ValueError(f"Dimension mismatch: weights {w.shape} vs vector {theta.shape}")
    magnitude = np.abs(theta)
    if float(w @ magnitude) <= B.radius:
        return theta.copy()

    order = np.argsort(-(magnitude / w), kind='stable')
    a = magnitude[order]
    ws = w[order]
    ratios = a / ws
    weighted = np.cumsum(ws * a)
    squares = np.cumsum(ws * ws)

    r = a.size
    while True:
        level = (weighted[r - 1] - B.radius) / squares[r - 1]
        above = np.flatnonzero(ratios[:r] > level)
        last = int(above[-1]) + 1
        if last == r:
            break
        r = last

    p = np.zeros_like(a)
    p[:r] = a[:r] - level * ws[:r]
    out = np.zeros_like(theta)
    out[order] = p
    return np.sign(theta) * out


def project_l1_ball(rho: float, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    return project_weighted_l1_ball(WeightedL1Ball(np.ones(theta.size), rho), theta)


def lp_norm(v, p: float) -> float:
    """l_p norm for p >= 1, quasi-norm for 0 < p < 1, max-norm for p = inf."""
    if not p > 0:
        raise ValueError(f"p must be positive, got {p}")
    a = np.abs(np.asarray(v, dtype=float))
    if np.isinf(p):
        return float(a.max(initial=0.0))
    return float(np.sum(a ** p) ** (1.0 / p))


def l0_count(v, tol: float = 0.0) -> int:
    return int(np.sum(np.abs(np.asarray(v, dtype=float)) > tol))


def abs_subdifferential(theta) -> Tuple[np.ndarray, np.ndarray]:
    """Interval bounds of the subdifferential of |.| at every entry."""
    theta = np.asarray(theta, dtype=float)
    s = np.sign(theta)
    return np.where(theta == 0, -1.0, s), np.where(theta == 0, 1.0, s)


def lasso_optimality_gap(X: np.ndarray, y: np.ndarray, theta, lam: float,
                         weights: Optional[Union[np.ndarray, float]] = None) -> float:
    """Distance of X^T (y - X theta) from lam * w * subdifferential(||theta||_1), max norm."""
    theta = np.asarray(theta, dtype=float)
    w = np.ones_like(theta) if weights is None else np.broadcast_to(weights, theta.shape)
    corr = X.T @ (y - X @ theta)
    lower, upper = abs_subdifferential(theta)
    lo = lam * w * lower
    hi = lam * w * upper
    gap = np.maximum(lo - corr, 0.0) + np.maximum(corr - hi, 0.0)
    return float(gap.max(initial=0.0))
