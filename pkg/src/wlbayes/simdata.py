"""Synthetic binary and ordinal datasets with controlled class imbalance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .model import Dataset

DEFAULT_BETA = (1.5, -1.5)
_BRACKET = (-50.0, 50.0)
_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite_e.hermegauss(101)
_GH_WEIGHTS = _GH_WEIGHTS / _GH_WEIGHTS.sum()


class UnattainableProportionError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    ``target_proportions`` are the class proportions (class 0 then 1 for
    binary; categories 1..K for ordinal). ``intercept`` or ``true_cutpoints``,
    when given, override the values solved from the proportions.
    """

    n: int
    seed: int
    family: str = "binary"
    target_proportions: tuple[float, ...] = (0.87, 0.13)
    true_beta: tuple[float, ...] = DEFAULT_BETA
    intercept: float | None = None
    true_cutpoints: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.family not in ("binary", "ordinal"):
            raise ValueError(f"unknown family {self.family!r}")
        p = np.asarray(self.target_proportions, dtype=float)
        if p.ndim != 1 or p.size < 2:
            raise ValueError("need at least two class proportions")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("proportions must sum to 1")
        if self.family == "binary" and p.size != 2:
            raise ValueError("binary simulation takes exactly two proportions")
        if len(self.true_beta) < 1:
            raise ValueError("need at least one predictor")
        if self.true_cutpoints is not None and len(self.true_cutpoints) != p.size - 1:
            raise ValueError("need K-1 cutpoints")


def expected_positive_rate(intercept: float, beta_norm: float) -> float:
    """E[sigmoid(intercept + x.beta)] for x ~ N(0, I), by Gauss-Hermite quadrature."""
    return float(np.dot(_GH_WEIGHTS, expit(intercept + beta_norm * _GH_NODES)))


def _bisect(f, target: float, tol: float = 1e-12, max_iter: int = 200) -> float:
    lo, hi = _BRACKET
    if not f(lo) <= target <= f(hi):
        raise UnattainableProportionError(
            f"target proportion {target:g} not attainable within intercept bracket {_BRACKET}"
        )
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if f(mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def solve_intercept(positive_rate: float, beta) -> float:
    s = float(np.linalg.norm(beta))
    return _bisect(lambda a: expected_positive_rate(a, s), positive_rate)


def solve_cutpoints(proportions, beta) -> np.ndarray:
    """Cutpoints with P(y <= k) = cumulative target proportion, averaged over x."""
    s = float(np.linalg.norm(beta))
    cum = np.cumsum(np.asarray(proportions, dtype=float))[:-1]
    # P(y <= k) = E[sigmoid(c_k - x.beta)]; x.beta is symmetric about 0
    return np.array([_bisect(lambda c: expected_positive_rate(c, s), t) for t in cum])


def simulate(config: SimConfig) -> Dataset:
    """Standard-normal predictors and outcomes drawn from the model."""
    rng = np.random.default_rng(int(config.seed))
    beta = np.asarray(config.true_beta, dtype=float)
    J = beta.size
    X = rng.standard_normal((config.n, J))
    u = rng.random(config.n)
    eta = X @ beta
    names = [f"x{j + 1}" for j in range(J)]
    if config.family == "binary":
        a = config.intercept
        if a is None:
            a = solve_intercept(config.target_proportions[1], beta)
        y = (u < expit(a + eta)).astype(np.int64)
        return Dataset.binary(y, X, names)
    K = len(config.target_proportions)
    if config.true_cutpoints is not None:
        c = np.asarray(config.true_cutpoints, dtype=float)
        if np.any(np.diff(c) <= 0):
            raise ValueError("cutpoints must be strictly increasing")
    else:
        c = solve_cutpoints(config.target_proportions, beta)
    cum = expit(c[None, :] - eta[:, None])
    y = 1 + (u[:, None] > cum).sum(axis=1)
    return Dataset.ordinal(y, X, K, names)
