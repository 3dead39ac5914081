"""Weighted-likelihood binary logistic and ordered logistic models.

The log posterior is ``log p(theta) + sum_i w_i * log p(y_i | theta)``.
Two parameter spaces are used:

* constrained: ``[intercept], beta_1..beta_J, c_1 < ... < c_{K-1}``
* unconstrained: cutpoints replaced by ``c_1, log(c_2 - c_1), ...``

The sampler works on the unconstrained vector; the density there includes
the log-Jacobian of the cutpoint transform. Cumulative-logit convention:
``P(y <= k) = sigmoid(c_k - x.beta)``, so larger ``x.beta`` moves mass to
higher categories.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy.special import betaln, expit, log_expit

from .weights import ClassWeights

BINARY = "binary-logit"
ORDERED = "ordered-logit"
_LOG_2PI = float(np.log(2.0 * np.pi))


class InvalidCutpointsError(ValueError):
    pass


def _log_sigmoid_pair(x):
    """``(log sigmoid(x), sigmoid(-x))`` from a single exponential."""
    e = np.exp(-np.abs(x))
    r = 1.0 / (1.0 + e)
    return np.minimum(x, 0.0) - np.log1p(e), np.where(x >= 0, e * r, r)


@dataclass(frozen=True)
class Dataset:
    """Outcome vector plus predictor matrix.

    ``y`` is in {0, 1} for binary outcomes and in {1..K} for ordinal ones.
    """

    y: np.ndarray
    X: np.ndarray
    predictor_names: tuple[str, ...]
    outcome_kind: str = "binary"
    n_categories: int = 2

    def __post_init__(self):
        y = np.asarray(self.y)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if y.ndim != 1 or y.size < 1:
            raise ValueError("outcome must be a non-empty vector")
        if X.ndim != 2 or X.shape[0] != y.size:
            raise ValueError(f"X has shape {X.shape}, expected ({y.size}, J)")
        if len(self.predictor_names) != X.shape[1]:
            raise ValueError("predictor_names length does not match X columns")
        if not np.all(np.isfinite(X)):
            raise ValueError("predictors contain missing or non-finite values")
        if y.dtype.kind == "f":
            if not np.all(np.isfinite(y)) or np.any(y != np.round(y)):
                raise ValueError("outcome must be integer valued")
        y = y.astype(np.int64)
        if self.outcome_kind == "binary":
            if not np.all((y == 0) | (y == 1)):
                raise ValueError("binary outcome must contain only 0 and 1")
            object.__setattr__(self, "n_categories", 2)
        elif self.outcome_kind == "ordinal":
            if self.n_categories < 2:
                raise ValueError("ordinal outcome needs K >= 2")
            if np.any(y < 1) or np.any(y > self.n_categories):
                raise ValueError(f"ordinal outcome must lie in 1..{self.n_categories}")
        else:
            raise ValueError(f"unknown outcome kind {self.outcome_kind!r}")
        X = X.copy()
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "predictor_names", tuple(self.predictor_names))

    @classmethod
    def binary(cls, y, X, predictor_names: Sequence[str] | None = None) -> Dataset:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        names = predictor_names or [f"x{j + 1}" for j in range(X.shape[1])]
        return cls(np.asarray(y), X, tuple(names), "binary", 2)

    @classmethod
    def ordinal(cls, y, X, n_categories: int | None = None, predictor_names=None) -> Dataset:
        y = np.asarray(y)
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        K = int(n_categories if n_categories is not None else y.max())
        names = predictor_names or [f"x{j + 1}" for j in range(X.shape[1])]
        return cls(y, X, tuple(names), "ordinal", K)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def n_predictors(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> Dataset:
        return Dataset(self.y[idx], self.X[idx], self.predictor_names, self.outcome_kind, self.n_categories)


@dataclass(frozen=True)
class ModelSpec:
    """Model family and prior hyperparameters.

    ``intercept_beta_prior=(a, b)`` replaces the Normal intercept prior by
    a Beta(a, b) prior on ``sigmoid(intercept)``; it exists for conjugate
    checks of the sampler.
    """

    family: str = BINARY
    n_categories: int = 2
    prior_sd: float = 1.0
    include_intercept: bool = True
    intercept_sd: float = 2.5
    intercept_beta_prior: tuple[float, float] | None = None
    cutpoint_sd: float = 5.0
    standardize: bool = True

    def __post_init__(self):
        if self.family not in (BINARY, ORDERED):
            raise ValueError(f"unknown family {self.family!r}")
        if not self.prior_sd > 0 or not self.intercept_sd > 0 or not self.cutpoint_sd > 0:
            raise ValueError("prior standard deviations must be positive")
        if self.family == ORDERED:
            if self.n_categories < 2:
                raise ValueError("ordered-logit needs K >= 2")
            # cutpoints play the role of intercepts
            object.__setattr__(self, "include_intercept", False)
        else:
            object.__setattr__(self, "n_categories", 2)
        if self.intercept_beta_prior is not None:
            a, b = self.intercept_beta_prior
            if not (a > 0 and b > 0):
                raise ValueError("Beta prior parameters must be positive")

    @classmethod
    def binary(cls, **kw) -> ModelSpec:
        return cls(family=BINARY, **kw)

    @classmethod
    def ordered(cls, n_categories: int, **kw) -> ModelSpec:
        return cls(family=ORDERED, n_categories=n_categories, **kw)

    @property
    def n_cutpoints(self) -> int:
        return self.n_categories - 1 if self.family == ORDERED else 0

    def n_params(self, n_predictors: int) -> int:
        return int(self.include_intercept) + n_predictors + self.n_cutpoints

    def param_names(self, predictor_names: Sequence[str]) -> list[str]:
        names = ["intercept"] if self.include_intercept else []
        names += [f"beta[{p}]" for p in predictor_names]
        names += [f"cutpoint[{k + 1}]" for k in range(self.n_cutpoints)]
        return names

    def check_data(self, data: Dataset) -> None:
        if self.family == BINARY and data.outcome_kind != "binary":
            raise ValueError("binary-logit model needs a binary outcome")
        if self.family == ORDERED:
            if data.outcome_kind != "ordinal":
                raise ValueError("ordered-logit model needs an ordinal outcome")
            if data.n_categories != self.n_categories:
                raise ValueError(
                    f"model has K={self.n_categories} but data has K={data.n_categories}"
                )


@dataclass(frozen=True)
class ParameterVector:
    beta: np.ndarray
    intercept: float | None = None
    cutpoints: np.ndarray | None = None

    def as_array(self) -> np.ndarray:
        parts = [] if self.intercept is None else [np.atleast_1d(float(self.intercept))]
        parts.append(np.atleast_1d(np.asarray(self.beta, dtype=float)))
        if self.cutpoints is not None:
            parts.append(np.atleast_1d(np.asarray(self.cutpoints, dtype=float)))
        return np.concatenate(parts)


@dataclass
class Standardizer:
    """Column centring and scaling fitted on training predictors."""

    center: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X) -> Standardizer:
        X = np.asarray(X, dtype=float)
        center = X.mean(axis=0)
        scale = X.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        return cls(center, scale)

    @classmethod
    def identity(cls, n_predictors: int) -> Standardizer:
        return cls(np.zeros(n_predictors), np.ones(n_predictors))

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.center) / self.scale

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "scale": self.scale.tolist()}


def _layout(spec: ModelSpec, n_predictors: int) -> tuple[int, slice, slice]:
    """Offsets of (intercept, beta block, cutpoint block) in a parameter vector."""
    i0 = int(spec.include_intercept)
    return i0, slice(i0, i0 + n_predictors), slice(i0 + n_predictors, i0 + n_predictors + spec.n_cutpoints)


def parse_theta(spec: ModelSpec, n_predictors: int, theta) -> np.ndarray:
    """Constrained parameter array from a ParameterVector or array."""
    if isinstance(theta, ParameterVector):
        if spec.include_intercept and theta.intercept is None:
            raise ValueError("model has an intercept but theta does not")
        if not spec.include_intercept and theta.intercept is not None:
            raise ValueError("theta has an intercept but the model does not")
        if (theta.cutpoints is None) != (spec.n_cutpoints == 0):
            raise ValueError("cutpoints do not match the model family")
        theta = theta.as_array()
    arr = np.asarray(theta, dtype=float)
    if arr.shape != (spec.n_params(n_predictors),):
        raise ValueError(
            f"parameter vector has shape {arr.shape}, expected ({spec.n_params(n_predictors)},)"
        )
    return arr


def unpack(spec: ModelSpec, n_predictors: int, theta) -> ParameterVector:
    arr = parse_theta(spec, n_predictors, theta)
    _, bs, cs = _layout(spec, n_predictors)
    return ParameterVector(
        beta=arr[bs].copy(),
        intercept=float(arr[0]) if spec.include_intercept else None,
        cutpoints=arr[cs].copy() if spec.n_cutpoints else None,
    )


def to_unconstrained(spec: ModelSpec, n_predictors: int, theta) -> np.ndarray:
    arr = parse_theta(spec, n_predictors, theta).copy()
    if spec.n_cutpoints:
        _, _, cs = _layout(spec, n_predictors)
        c = arr[cs]
        gaps = np.diff(c)
        if not np.all(np.isfinite(c)) or np.any(gaps <= 0):
            raise InvalidCutpointsError("invalid cutpoints")
        arr[cs] = np.concatenate([c[:1], np.log(gaps)])
    return arr


def constrain(spec: ModelSpec, n_predictors: int, U) -> np.ndarray:
    """Map unconstrained vectors (..., P) to constrained ones."""
    U = np.asarray(U, dtype=float)
    if not spec.n_cutpoints:
        return U.copy()
    _, _, cs = _layout(spec, n_predictors)
    out = U.copy()
    z = U[..., cs]
    c = np.concatenate([z[..., :1], np.exp(z[..., 1:])], axis=-1)
    out[..., cs] = np.cumsum(c, axis=-1)
    return out


class BatchPosterior:
    """Vectorised log density of the unconstrained target.

    Every row of the batch ``U`` may use its own predictor matrix and
    weight vector (leave-one-out folds share one object this way). Row
    results depend only on that row's inputs: all reductions run along the
    observation axis of a contiguous array, so a row evaluated alone or in
    a batch gives bitwise-identical output.

    Parameters
    ----------
    spec : ModelSpec
    X : ndarray, shape (N, J) or (B, N, J)
    y : ndarray, shape (N,)
    W : ndarray, shape (N,) or (B, N)
    """

    def __init__(self, spec: ModelSpec, X, y, W):
        X = np.asarray(X, dtype=float)
        W = np.asarray(W, dtype=float)
        y = np.asarray(y, dtype=np.int64)
        if X.ndim == 2:
            X = X[None]
        if W.ndim == 1:
            W = W[None]
        n = y.size
        if X.shape[1] != n or W.shape[1] != n:
            raise ValueError("X, y and weights disagree on the number of observations")
        self.spec = spec
        self.n_predictors = X.shape[2]
        self.dim = spec.n_params(self.n_predictors)
        self._i0, self._bs, self._cs = _layout(spec, self.n_predictors)
        if spec.family == ORDERED:
            # group observations by category so each category is a column slice
            perm = np.argsort(y, kind="stable")
            y, X, W = y[perm], X[:, perm], W[:, perm]
            bounds = np.searchsorted(y, np.arange(1, spec.n_categories + 2))
            self._cat_slices = [slice(bounds[k], bounds[k + 1]) for k in range(spec.n_categories)]
        self.y = y
        # (J, B, N) so each predictor slice is a contiguous (B, N) block
        self._Xt = np.ascontiguousarray(np.moveaxis(X, 2, 0))
        self._W = np.ascontiguousarray(W)
        self._active = self._W > 0
        if spec.family == BINARY:
            self._sign = 2.0 * y - 1.0

    def _eta(self, U, Xt):
        B = U.shape[0]
        if self.spec.include_intercept:
            eta = np.broadcast_to(U[:, :1], (B, self.y.size)).copy()
        else:
            eta = np.zeros((B, self.y.size))
        for j in range(self.n_predictors):
            eta = eta + U[:, self._i0 + j, None] * Xt[j]
        return eta

    def _log_prior(self, U, grad):
        spec = self.spec
        lp = np.zeros(U.shape[0])
        if spec.include_intercept:
            a0 = U[:, 0]
            if spec.intercept_beta_prior is not None:
                a, b = spec.intercept_beta_prior
                lp = lp + a * log_expit(a0) + b * log_expit(-a0) - betaln(a, b)
                grad[:, 0] += a * expit(-a0) - b * expit(a0)
            else:
                s = spec.intercept_sd
                lp = lp - 0.5 * (a0 / s) ** 2 - np.log(s) - 0.5 * _LOG_2PI
                grad[:, 0] += -a0 / s**2
        if self.n_predictors:
            beta = U[:, self._bs]
            s = spec.prior_sd
            lp = lp + (-0.5 * (beta / s) ** 2 - np.log(s) - 0.5 * _LOG_2PI).sum(axis=1)
            grad[:, self._bs] += -beta / s**2
        if spec.n_cutpoints:
            z = U[:, self._cs]
            s = spec.cutpoint_sd
            lp = lp + (-0.5 * (z / s) ** 2 - np.log(s) - 0.5 * _LOG_2PI).sum(axis=1)
            grad[:, self._cs] += -z / s**2
        return lp

    def logp_grad(self, U, rows=None):
        """Sampler target and its gradient for a batch of unconstrained vectors.

        The target is the constrained log posterior plus the log-Jacobian
        of the cutpoint transform. ``rows`` selects which per-row data
        (predictors, weights) the batch ``U`` corresponds to.
        """
        U = np.atleast_2d(np.asarray(U, dtype=float))
        if U.shape[1] != self.dim:
            raise ValueError(f"expected {self.dim} parameters, got {U.shape[1]}")
        Xt, W, active = self._Xt, self._W, self._active
        if rows is not None and W.shape[0] > 1:
            Xt, W, active = Xt[:, rows], W[rows], active[rows]
        if W.shape[0] not in (1, U.shape[0]):
            raise ValueError("batch size does not match the per-row weights")
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            return self._logp_grad(U, Xt, W, active)

    def _logp_grad(self, U, Xt, W, active):
        grad = np.zeros_like(U)
        lp = self._log_prior(U, grad)
        eta = self._eta(U, Xt)
        if self.spec.family == BINARY:
            wll, g_eta = self._binary_terms(eta, W, active)
        else:
            wll, g_eta = self._ordered_terms(U, eta, grad, W, active)
        lp = lp + wll
        if self.spec.n_cutpoints > 1:
            lp = lp + self.log_jacobian(U)
            grad[:, self._cs.start + 1 : self._cs.stop] += 1.0
        if self.spec.include_intercept:
            grad[:, 0] += g_eta.sum(axis=1)
        for j in range(self.n_predictors):
            grad[:, self._i0 + j] += (g_eta * Xt[j]).sum(axis=1)
        return lp, grad

    def log_jacobian(self, U):
        """log |d cutpoints / d unconstrained| = sum of the log gaps."""
        U = np.atleast_2d(U)
        return U[:, self._cs.start + 1 : self._cs.stop].sum(axis=1)

    def logp(self, U):
        return self.logp_grad(U)[0]

    def _binary_terms(self, eta, W, active):
        """Weighted log-likelihood per row and its derivative in eta."""
        ll, tail = _log_sigmoid_pair(self._sign * eta)
        # held-out observations carry weight 0; keep them out even if a term is inf
        wll = np.where(active, W * ll, 0.0).sum(axis=1)
        g_eta = np.where(active, W * self._sign * tail, 0.0)
        return wll, g_eta

    def _ordered_terms(self, U, eta, grad, W, active):
        """Weighted ordered-logit log-likelihood; adds cutpoint gradients to ``grad``.

        For a middle category, P(y=k) = sigmoid(b) * sigmoid(-a) * (1 - exp(a - b))
        with b = c_k - eta, a = c_{k-1} - eta, and b - a is the cutpoint gap.
        """
        K = self.spec.n_categories
        z = U[:, self._cs]
        gaps = np.exp(z[:, 1:])
        c = np.cumsum(np.concatenate([z[:, :1], gaps], axis=1), axis=1)
        log_gap = np.log(-np.expm1(-gaps))
        inv_gap = 1.0 / np.expm1(gaps)

        wll = np.zeros(U.shape[0])
        g_eta = np.empty_like(eta)
        g_c = np.zeros((U.shape[0], K - 1))
        for k in range(1, K + 1):
            sl = self._cat_slices[k - 1]
            if sl.start == sl.stop:
                continue
            e = eta[:, sl]
            w = W[:, sl]
            act = active[:, sl]
            ll = 0.0
            ge = 0.0
            if k < K:
                ls_b, s_nb = _log_sigmoid_pair(c[:, k - 1, None] - e)
                ll = ll + ls_b
                ge = ge - s_nb
                d_up = s_nb
            if k > 1:
                ls_na, s_a = _log_sigmoid_pair(e - c[:, k - 2, None])
                ll = ll + ls_na
                ge = ge + s_a
                d_lo = -s_a
            if 1 < k < K:
                ll = ll + log_gap[:, k - 2, None]
                d_up = d_up + inv_gap[:, k - 2, None]
                d_lo = d_lo - inv_gap[:, k - 2, None]
            wll += np.where(act, w * ll, 0.0).sum(axis=1)
            g_eta[:, sl] = np.where(act, w * ge, 0.0)
            if k < K:
                g_c[:, k - 1] += np.where(act, w * d_up, 0.0).sum(axis=1)
            if k > 1:
                g_c[:, k - 2] += np.where(act, w * d_lo, 0.0).sum(axis=1)

        # c_m = z_0 + sum_{k<m} exp(z_k): chain rule through the cumulative sum
        tail = np.cumsum(g_c[:, ::-1], axis=1)[:, ::-1]
        g_z = tail.copy()
        g_z[:, 1:] = tail[:, 1:] * gaps
        grad[:, self._cs] += g_z
        return wll, g_eta


def _posterior(spec: ModelSpec, data: Dataset, weights) -> BatchPosterior:
    spec.check_data(data)
    w = weights.values if isinstance(weights, ClassWeights) else np.asarray(weights, dtype=float)
    if w.shape != (data.n,):
        raise ValueError(f"weights have shape {w.shape}, expected ({data.n},)")
    if np.any(~np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and non-negative")
    return BatchPosterior(spec, data.X, data.y, w)


def log_density_unconstrained(spec: ModelSpec, data: Dataset, weights, u) -> float:
    """Sampler target: log posterior in unconstrained space, Jacobian included."""
    post = _posterior(spec, data, weights)
    lp, _ = post.logp_grad(np.asarray(u, dtype=float)[None])
    return float(lp[0])


def grad_log_posterior(spec: ModelSpec, data: Dataset, weights, u) -> np.ndarray:
    """Gradient of :func:`log_density_unconstrained` with respect to ``u``."""
    post = _posterior(spec, data, weights)
    _, g = post.logp_grad(np.asarray(u, dtype=float)[None])
    return g[0]


def log_posterior(spec: ModelSpec, data: Dataset, weights, theta) -> float:
    """Weighted log posterior at constrained parameters ``theta``.

    Returns ``log p(theta) + sum_i w_i log p(y_i | theta)``. The cutpoint
    prior is Normal(0, cutpoint_sd) evaluated at the first cutpoint and at
    each log gap ``log(c_{k+1} - c_k)``.
    """
    u = to_unconstrained(spec, data.n_predictors, theta)
    post = _posterior(spec, data, weights)
    lp, _ = post.logp_grad(u[None])
    return float(lp[0] - post.log_jacobian(u[None])[0])


def log_prior(spec: ModelSpec, n_predictors: int, theta) -> float:
    u = to_unconstrained(spec, n_predictors, theta)[None]
    post = BatchPosterior(spec, np.zeros((1, n_predictors)), np.ones(1, dtype=np.int64), np.zeros(1))
    return float(post._log_prior(u, np.zeros_like(u))[0])


def class_probabilities(spec: ModelSpec, theta, x_row) -> np.ndarray:
    """Category probabilities for one predictor row.

    Binary: ``[P(y=0), P(y=1)]``. Ordinal: ``[P(y=1), ..., P(y=K)]``.
    """
    x = np.atleast_1d(np.asarray(x_row, dtype=float))
    arr = parse_theta(spec, x.size, theta)
    if spec.n_cutpoints and np.any(np.diff(arr[_layout(spec, x.size)[2]]) <= 0):
        raise InvalidCutpointsError("invalid cutpoints")
    return batch_class_probabilities(spec, arr[None], x[None])[0, 0]


def linear_predictor(spec: ModelSpec, draws, X) -> np.ndarray:
    """``x.beta`` (plus intercept) for constrained draws (S, P) and rows X (M, J)."""
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    X = np.atleast_2d(np.asarray(X, dtype=float))
    J = X.shape[1]
    if draws.shape[1] != spec.n_params(J):
        raise ValueError(f"draws have {draws.shape[1]} columns, expected {spec.n_params(J)}")
    _, bs, _ = _layout(spec, J)
    eta = draws[:, bs] @ X.T
    if spec.include_intercept:
        eta = eta + draws[:, :1]
    return eta


def batch_class_probabilities(spec: ModelSpec, draws, X) -> np.ndarray:
    """Probabilities of shape (S, M, K) for S constrained draws and M rows."""
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    X = np.atleast_2d(np.asarray(X, dtype=float))
    eta = linear_predictor(spec, draws, X)
    if spec.family == BINARY:
        return np.stack([expit(-eta), expit(eta)], axis=-1)
    _, _, cs = _layout(spec, X.shape[1])
    c = draws[:, cs]
    cum = expit(c[:, None, :] - eta[:, :, None])
    S, M = eta.shape
    cum = np.concatenate([np.zeros((S, M, 1)), cum, np.ones((S, M, 1))], axis=-1)
    return np.diff(cum, axis=-1)
