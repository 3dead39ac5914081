"""Posterior predictive distributions, point classification and LOO validation."""

from __future__ import annotations

import csv
import logging
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from . import model as M
from .diagnostics import diagnostics
from .sampler import PosteriorDraws, SamplerConfig, SamplerError, run_chains
from .weights import compute_weights

logger = logging.getLogger(__name__)

WEIGHTING_MODES = ("none", "inverse", "proportions")

# rows x observations per LOO batch; keeps peak memory bounded for large N
_BATCH_CELLS = 400_000


@dataclass
class PredictiveDistribution:
    """Posterior predictive summaries for M observations.

    ``probs`` holds mean class probabilities (M, K). ``median``/``sd`` are
    taken across draws of the latent prediction: P(y=1) for binary models,
    ``x.beta`` for ordinal ones. ``cutpoint_median`` (M, K-1) is the
    posterior median of the cutpoints used for each row (ordinal only).
    """

    probs: np.ndarray
    median: np.ndarray
    sd: np.ndarray
    kind: str
    cutpoint_median: np.ndarray | None = None
    per_draw: np.ndarray | None = None

    @property
    def n_categories(self) -> int:
        return self.probs.shape[1]

    def __len__(self) -> int:
        return self.probs.shape[0]


def predictive_from_draws(spec: M.ModelSpec, draws, X, keep_draws: bool = False) -> PredictiveDistribution:
    """Predictive distribution from constrained draws (S, P) on already-transformed X."""
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    X = np.atleast_2d(np.asarray(X, dtype=float))
    probs = M.batch_class_probabilities(spec, draws, X)
    if spec.family == M.BINARY:
        latent = probs[:, :, 1]
        cut_med = None
    else:
        latent = M.linear_predictor(spec, draws, X)
        cs = M._layout(spec, X.shape[1])[2]
        cut_med = np.broadcast_to(np.median(draws[:, cs], axis=0), (X.shape[0], spec.n_cutpoints)).copy()
    S = draws.shape[0]
    return PredictiveDistribution(
        probs=probs.mean(axis=0),
        median=np.median(latent, axis=0),
        sd=latent.std(axis=0, ddof=1) if S > 1 else np.zeros(X.shape[0]),
        kind="binary" if spec.family == M.BINARY else "ordinal",
        cutpoint_median=cut_med,
        per_draw=probs if keep_draws else None,
    )


def posterior_predict(draws: PosteriorDraws, X_new, keep_draws: bool = False) -> PredictiveDistribution:
    """Average class probabilities over all draws for new predictor rows.

    ``X_new`` is on the raw scale; the training standardisation is applied.
    """
    X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
    J = len(draws.predictor_names)
    if X_new.shape[1] != J:
        raise ValueError(f"X_new has {X_new.shape[1]} columns, model expects {J}")
    X = draws.standardizer.transform(X_new)
    return predictive_from_draws(draws.spec, draws.matrix, X, keep_draws)


def classify(
    pred: PredictiveDistribution,
    threshold: float = 0.5,
    mode: str | None = None,
    statistic: str = "median",
    rule: str = "argmax",
) -> np.ndarray:
    """Point classification.

    Binary mode labels an observation 1 iff its posterior median (or mean,
    with ``statistic="mean"``) predicted probability is strictly above
    ``threshold``. Ordinal mode returns the category 1..K with the largest
    mean predictive mass, ties going to the lower category; with
    ``rule="latent"`` the median ``x.beta`` is compared to the median
    cutpoints instead.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    mode = mode or pred.kind
    if mode == "binary":
        if pred.n_categories != 2:
            raise ValueError("binary classification needs a two-class predictive")
        if statistic == "median":
            p1 = pred.median if pred.kind == "binary" else None
            if p1 is None:
                raise ValueError("median probability is only stored for binary predictives")
        elif statistic == "mean":
            p1 = pred.probs[:, 1]
        else:
            raise ValueError(f"unknown statistic {statistic!r}")
        return (p1 > threshold).astype(np.int64)
    if mode != "ordinal":
        raise ValueError(f"unknown mode {mode!r}")
    if rule == "argmax":
        # np.argmax returns the first maximum, i.e. the lower category
        return np.argmax(pred.probs, axis=1).astype(np.int64) + 1
    if rule == "latent":
        if pred.cutpoint_median is None:
            raise ValueError("latent rule needs an ordinal predictive with cutpoints")
        return (pred.cutpoint_median < pred.median[:, None]).sum(axis=1).astype(np.int64) + 1
    raise ValueError(f"unknown rule {rule!r}")


def true_category_mass(pred: PredictiveDistribution, true_labels) -> np.ndarray:
    """Mean predictive mass on each observation's true category (labels 1..K)."""
    y = np.asarray(true_labels, dtype=np.int64)
    K = pred.n_categories
    if y.shape != (len(pred),):
        raise ValueError("true_labels length does not match the predictive")
    if np.any(y < 1) or np.any(y > K):
        raise ValueError(f"labels must lie in 1..{K}")
    return pred.probs[np.arange(y.size), y - 1]


@dataclass
class LooResult:
    """Held-out predictions from N leave-one-out refits, in the input row order.

    ``fold_key[i]`` is the canonical rank of row i (rows sorted by outcome
    then predictors); the random streams of fold i are derived from
    ``(seed, fold_key[i], chain)``, so results follow the data rather than
    the row order.
    """

    predictive: PredictiveDistribution
    y_true: np.ndarray
    seed: int
    fold_key: np.ndarray
    weighting: str
    max_rhat: np.ndarray
    min_ess: np.ndarray
    accept_rate: np.ndarray
    n_divergent: np.ndarray
    warnings: dict[int, str] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.y_true.size

    def flagged(self, rhat_limit: float = 1.05) -> np.ndarray:
        r = np.where(np.isnan(self.max_rhat), 1.0, self.max_rhat)
        return (r > rhat_limit) | (self.n_divergent > 0)

    def diagnostics_summary(self) -> dict:
        rh = self.max_rhat[~np.isnan(self.max_rhat)]
        es = self.min_ess[~np.isnan(self.min_ess)]
        return {
            "n_folds": int(self.n),
            "max_rhat": float(rh.max()) if rh.size else None,
            "min_ess_bulk": float(es.min()) if es.size else None,
            "mean_accept_rate": float(self.accept_rate.mean()),
            "total_divergent": int(self.n_divergent.sum()),
            "n_flagged_folds": int(self.flagged().sum()),
            "fold_warnings": {str(k): v for k, v in sorted(self.warnings.items())},
        }

    def write_csv(self, path) -> None:
        """One row per observation: truth, class probabilities, median, sd, flag."""
        pred = self.predictive
        K = pred.n_categories
        labels = [0, 1] if pred.kind == "binary" else list(range(1, K + 1))
        flags = self.flagged()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(
                ["row", "y_true", *[f"p_{c}" for c in labels], "median", "sd", "fold_key", "flagged"]
            )
            for i in range(self.n):
                w.writerow(
                    [
                        i,
                        int(self.y_true[i]),
                        *(repr(float(v)) for v in pred.probs[i]),
                        repr(float(pred.median[i])),
                        repr(float(pred.sd[i])),
                        int(self.fold_key[i]),
                        int(flags[i]),
                    ]
                )


def canonical_order(data: M.Dataset) -> np.ndarray:
    """Row order sorted by outcome, then predictor columns left to right."""
    keys = [data.X[:, j] for j in range(data.n_predictors - 1, -1, -1)] + [data.y]
    return np.lexsort(keys)


def fold_weights(
    y_train: np.ndarray,
    weighting: str,
    proportions: Mapping[int, float] | None = None,
) -> np.ndarray:
    if weighting == "none":
        return np.ones(y_train.size)
    if weighting == "inverse":
        return compute_weights(y_train).values
    if weighting == "proportions":
        if proportions is None:
            raise ValueError("weighting='proportions' needs class proportions")
        return compute_weights(y_train, proportions).values
    raise ValueError(f"unknown weighting {weighting!r}; expected one of {WEIGHTING_MODES}")


def fold_inputs(
    spec: M.ModelSpec,
    data: M.Dataset,
    weighting: str,
    proportions: Mapping[int, float] | None = None,
    fixed_weights: bool = False,
) -> tuple[np.ndarray, np.ndarray, dict[int, str]]:
    """Per-fold weights (N, N) and transformed predictors (N, N, J).

    Row f holds the inputs of the fold that leaves out observation f: its
    weight is zero there and the standardisation is fitted without it.
    """
    n, J = data.n, data.n_predictors
    y = data.y
    classes = set(np.unique(y).tolist())
    full_w = fold_weights(y, weighting, proportions) if fixed_weights else None
    W = np.zeros((n, n))
    Xf = np.empty((n, n, J))
    warnings: dict[int, str] = {}
    for f in range(n):
        train = np.ones(n, dtype=bool)
        train[f] = False
        if fixed_weights:
            W[f, train] = full_w[train]
        else:
            W[f, train] = fold_weights(y[train], weighting, proportions)
        missing = classes - set(np.unique(y[train]).tolist())
        if missing:
            warnings[f] = f"training fold has no observations of class(es) {sorted(missing)}"
        std = M.Standardizer.fit(data.X[train]) if spec.standardize else M.Standardizer.identity(J)
        Xf[f] = std.transform(data.X)
    return W, Xf, warnings


def loo_validate(
    spec: M.ModelSpec,
    data: M.Dataset,
    weighting: str,
    config: SamplerConfig,
    proportions: Mapping[int, float] | None = None,
    fixed_weights: bool = False,
) -> LooResult:
    """Leave-one-out validation with a full refit per held-out observation.

    Weights are recomputed on each training fold unless ``fixed_weights``
    is set, in which case the full-data weights are used with the held-out
    observation removed. Folds are run as independent rows of one
    vectorised sampler batch.
    """
    spec.check_data(data)
    n = data.n
    if n < 2:
        raise ValueError("leave-one-out needs at least 2 observations")
    if weighting not in WEIGHTING_MODES:
        raise ValueError(f"unknown weighting {weighting!r}; expected one of {WEIGHTING_MODES}")

    order = canonical_order(data)
    ds = data.subset(order)
    y = ds.y
    J = ds.n_predictors
    W, Xf, warnings = fold_inputs(spec, ds, weighting, proportions, fixed_weights)

    C = config.n_chains
    per_batch = max(1, _BATCH_CELLS // (n * C))
    probs = np.empty((n, spec.n_categories))
    med = np.empty(n)
    sd = np.empty(n)
    cut_med = np.empty((n, spec.n_cutpoints)) if spec.n_cutpoints else None
    max_rhat = np.full(n, np.nan)
    min_ess = np.full(n, np.nan)
    acc = np.empty(n)
    ndiv = np.zeros(n, dtype=np.int64)

    for start in range(0, n, per_batch):
        folds = np.arange(start, min(n, start + per_batch))
        rows = np.repeat(folds, C)
        post = M.BatchPosterior(spec, Xf[rows], y, W[rows])
        keys = [(1, int(f), c) for f in folds for c in range(C)]
        try:
            res = run_chains(post, config.seed, keys, config)
        except SamplerError as exc:
            raise SamplerError(f"LOO folds {folds[0]}..{folds[-1]}: {exc}") from exc
        draws = M.constrain(spec, J, res["draws"])
        for k, f in enumerate(folds):
            d = draws[k * C : (k + 1) * C]
            pr = predictive_from_draws(spec, d.reshape(-1, d.shape[2]), Xf[f, f : f + 1])
            probs[f] = pr.probs[0]
            med[f] = pr.median[0]
            sd[f] = pr.sd[0]
            if cut_med is not None:
                cut_med[f] = pr.cutpoint_median[0]
            diag = diagnostics(d)
            mr = diag.max_rhat()
            me = diag.min_ess()
            max_rhat[f] = np.nan if mr is None else mr
            min_ess[f] = np.nan if me is None else me
            acc[f] = res["accept_rate"][k * C : (k + 1) * C].mean()
            ndiv[f] = res["n_divergent"][k * C : (k + 1) * C].sum()
            if f in warnings:
                logger.warning("LOO fold %d: %s", f, warnings[f])

    inv = np.empty(n, dtype=np.int64)
    inv[order] = np.arange(n)
    pred = PredictiveDistribution(
        probs=probs[inv],
        median=med[inv],
        sd=sd[inv],
        kind="binary" if spec.family == M.BINARY else "ordinal",
        cutpoint_median=None if cut_med is None else cut_med[inv],
    )
    return LooResult(
        predictive=pred,
        y_true=data.y.copy(),
        seed=int(config.seed),
        fold_key=inv.copy(),
        weighting=weighting,
        max_rhat=max_rhat[inv],
        min_ess=min_ess[inv],
        accept_rate=acc[inv],
        n_divergent=ndiv[inv],
        warnings={int(order[f]): msg for f, msg in warnings.items()},
    )
