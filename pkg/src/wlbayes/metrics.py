"""Discrimination and calibration metrics for imbalanced classification.

Undefined values (zero denominators, missing classes) are reported as
``None`` and serialise to JSON ``null``; they are never NaN.
"""

from __future__ import annotations

import json
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

# metric name -> how to pick the better of two values
HIGHER = "higher"
LOWER = "lower"
CLOSE_TO_0 = "zero"
CLOSE_TO_1 = "one"

BINARY_KEYS = {
    "auc": HIGHER,
    "accuracy": HIGHER,
    "balanced_accuracy": HIGHER,
    "brier": LOWER,
    "balanced_brier": LOWER,
    "sensitivity": HIGHER,
    "specificity": HIGHER,
    "ppv": HIGHER,
    "npv": HIGHER,
    "f1": HIGHER,
    "p4": HIGHER,
    "mean_calibration_mse": LOWER,
    "calibration_intercept": CLOSE_TO_0,
    "calibration_slope": CLOSE_TO_1,
}

ORDINAL_KEYS = {
    "accuracy": HIGHER,
    "balanced_accuracy": HIGHER,
    "rps": LOWER,
    "mean_calibration_mse": LOWER,
}


class CalibrationError(RuntimeError):
    pass


@dataclass
class ConfusionCounts:
    """Counts with true classes on rows and predicted classes on columns."""

    matrix: np.ndarray
    labels: tuple[int, ...]

    @property
    def total(self) -> int:
        return int(self.matrix.sum())

    def _binary(self):
        if len(self.labels) != 2:
            raise ValueError("binary counts need exactly two labels")
        return self.matrix

    # positive class is the second label
    @property
    def tp(self) -> int:
        return int(self._binary()[1, 1])

    @property
    def fn(self) -> int:
        return int(self._binary()[1, 0])

    @property
    def fp(self) -> int:
        return int(self._binary()[0, 1])

    @property
    def tn(self) -> int:
        return int(self._binary()[0, 0])

    @classmethod
    def from_counts(cls, tp: int, fp: int, tn: int, fn: int) -> ConfusionCounts:
        return cls(np.array([[tn, fp], [fn, tp]], dtype=np.int64), (0, 1))

    def to_dict(self) -> dict:
        out = {"labels": list(self.labels), "matrix": self.matrix.tolist()}
        if len(self.labels) == 2:
            out.update(tp=self.tp, fp=self.fp, tn=self.tn, fn=self.fn)
        return out


def confusion(pred_labels, true_labels, labels: Sequence[int] | None = None) -> ConfusionCounts:
    pred = np.asarray(pred_labels, dtype=np.int64)
    true = np.asarray(true_labels, dtype=np.int64)
    if pred.shape != true.shape or pred.ndim != 1:
        raise ValueError("pred_labels and true_labels must be vectors of equal length")
    if pred.size == 0:
        raise ValueError("no observations to score")
    if labels is None:
        labels = np.union1d(np.unique(true), np.unique(pred))
        if labels.size < 2 and set(labels.tolist()) <= {0, 1}:
            labels = np.array([0, 1])
    labels = tuple(int(v) for v in labels)
    index = {v: i for i, v in enumerate(labels)}
    unknown = set(np.unique(np.concatenate([pred, true])).tolist()) - set(labels)
    if unknown:
        raise ValueError(f"labels {sorted(unknown)} not in {labels}")
    m = np.zeros((len(labels), len(labels)), dtype=np.int64)
    np.add.at(m, ([index[v] for v in true], [index[v] for v in pred]), 1)
    return ConfusionCounts(m, labels)


def _ratio(num, den):
    return None if den == 0 else num / den


def harmonic_mean(values) -> float | None:
    """Harmonic mean; None if any input is undefined, 0 if any input is 0."""
    if any(v is None for v in values):
        return None
    if any(v == 0 for v in values):
        return 0.0
    return len(values) / sum(1.0 / v for v in values)


def threshold_metrics(counts: ConfusionCounts) -> dict[str, float | None]:
    """Sensitivity, specificity, PPV, NPV, accuracy, balanced accuracy, F1 and P4."""
    tp, fp, tn, fn = counts.tp, counts.fp, counts.tn, counts.fn
    se = _ratio(tp, tp + fn)
    sp = _ratio(tn, tn + fp)
    ppv = _ratio(tp, tp + fp)
    npv = _ratio(tn, tn + fn)
    return {
        "sensitivity": se,
        "specificity": sp,
        "ppv": ppv,
        "npv": npv,
        "accuracy": _ratio(tp + tn, tp + tn + fp + fn),
        "balanced_accuracy": None if se is None or sp is None else (se + sp) / 2.0,
        "f1": harmonic_mean([se, ppv]),
        "p4": harmonic_mean([se, sp, ppv, npv]),
    }


def _binary_truth(true_labels) -> np.ndarray:
    y = np.asarray(true_labels)
    if y.ndim != 1 or not np.all((y == 0) | (y == 1)):
        raise ValueError("binary labels must be 0/1")
    return y.astype(np.int64)


def auc(scores, true_labels) -> float | None:
    """Mann-Whitney AUC; tied scores count one half. None if one class is absent."""
    s = np.asarray(scores, dtype=float)
    y = _binary_truth(true_labels)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n1 = int(y.sum())
    n0 = y.size - n1
    if n1 == 0 or n0 == 0:
        return None
    ranks = stats.rankdata(s, method="average")
    return float((ranks[y == 1].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


def _check_probs(probs, y):
    p = np.asarray(probs, dtype=float)
    if p.shape != y.shape:
        raise ValueError("probabilities and labels differ in length")
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("probabilities must lie in [0, 1]")
    return p


def brier(probs, true_labels) -> float:
    y = _binary_truth(true_labels)
    p = _check_probs(probs, y)
    return float(np.mean((p - y) ** 2))


def balanced_brier(probs, true_labels) -> float | None:
    """Equal-weight average of the within-class Brier scores."""
    y = _binary_truth(true_labels)
    p = _check_probs(probs, y)
    if y.min() == y.max():
        return None
    sq = (p - y) ** 2
    return float((sq[y == 0].mean() + sq[y == 1].mean()) / 2.0)


def rps(predictive, true_labels, normalize: bool = False) -> tuple[float, np.ndarray]:
    """Ranked probability score for ordinal predictions (labels 1..K).

    Returns the mean and the per-observation scores. Unnormalised by
    default: the sum over the K-1 cumulative steps. ``normalize`` divides
    by K-1.
    """
    P = np.atleast_2d(np.asarray(predictive, dtype=float))
    y = np.asarray(true_labels, dtype=np.int64)
    M, K = P.shape
    if K < 2:
        raise ValueError("need K >= 2 categories")
    if y.shape != (M,):
        raise ValueError("labels and predictive differ in length")
    if np.any(y < 1) or np.any(y > K):
        raise ValueError(f"labels must lie in 1..{K}")
    if np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-6):
        raise ValueError("predictive rows must sum to 1")
    # upper-tail form: (F_k - O_k)^2 == (S_k - T_k)^2 with S = 1 - F, and for
    # K = 2 the single term is exactly the Brier term (p - y)^2
    upper_pred = np.cumsum(P[:, ::-1], axis=1)[:, ::-1][:, 1:]
    upper_obs = (y[:, None] > np.arange(1, K)[None, :]).astype(float)
    per_obs = ((upper_pred - upper_obs) ** 2).sum(axis=1)
    if normalize:
        per_obs = per_obs / (K - 1)
    return float(per_obs.mean()), per_obs


def mean_calibration(probs, true_labels, reduce: str = "mean") -> float:
    """Squared gap between mean predicted and observed class proportions.

    ``probs`` is either P(class 1) for 0/1 labels or an (M, K) predictive
    for labels 1..K. Gaps are averaged over classes (``reduce="sum"``
    adds them instead); for binary data both class gaps are equal, so the
    mean is the squared gap on class 1.
    """
    p = np.asarray(probs, dtype=float)
    y = np.asarray(true_labels, dtype=np.int64)
    if p.ndim == 1:
        y = _binary_truth(y)
        P = np.stack([1.0 - p, p], axis=1)
        obs = np.array([1.0 - y.mean(), y.mean()])
    else:
        P = p
        K = P.shape[1]
        if np.any(y < 1) or np.any(y > K):
            raise ValueError(f"labels must lie in 1..{K}")
        obs = np.bincount(y - 1, minlength=K) / y.size
    if P.shape[0] != y.size or y.size == 0:
        raise ValueError("probabilities and labels differ in length")
    gaps = (P.mean(axis=0) - obs) ** 2
    if reduce == "mean":
        return float(gaps.mean())
    if reduce == "sum":
        return float(gaps.sum())
    raise ValueError(f"unknown reduce {reduce!r}")


@dataclass
class CalibrationFit:
    intercept: float | None
    slope: float | None
    iterations: int
    converged: bool
    flag: str | None = None


def weak_calibration(probs, true_labels, max_iter: int = 100, tol: float = 1e-10) -> CalibrationFit:
    """Calibration intercept and slope.

    Logistic regression of the outcome on ``logit(p)`` (p clamped to
    [1e-6, 1 - 1e-6]) fitted by Newton-Raphson, stopping when the largest
    coefficient update falls below ``tol``. Perfect calibration gives
    intercept 0 and slope 1. A constant design or perfectly separated
    outcomes are flagged and return ``None`` coefficients.
    """
    y = _binary_truth(true_labels)
    p = _check_probs(probs, y)
    if y.min() == y.max():
        raise ValueError("weak calibration needs both classes present")
    x = np.log(np.clip(p, 1e-6, 1 - 1e-6)) - np.log1p(-np.clip(p, 1e-6, 1 - 1e-6))
    if np.ptp(x) == 0:
        return CalibrationFit(None, None, 0, False, "degenerate: all predictions equal")
    x0, x1 = x[y == 0], x[y == 1]
    if x0.max() < x1.min() or x1.max() < x0.min():
        return CalibrationFit(None, None, 0, False, "separation: outcomes perfectly separated")

    D = np.column_stack([np.ones_like(x), x])
    beta = np.zeros(2)
    for it in range(1, max_iter + 1):
        eta = D @ beta
        mu = 1.0 / (1.0 + np.exp(-eta))
        w = mu * (1.0 - mu)
        grad = D.T @ (y - mu)
        hess = D.T @ (D * w[:, None])
        step = np.linalg.solve(hess, grad)
        beta = beta + step
        if np.max(np.abs(step)) < tol:
            return CalibrationFit(float(beta[0]), float(beta[1]), it, True)
    raise CalibrationError(
        f"calibration fit did not converge in {max_iter} iterations "
        f"(intercept={beta[0]:.6g}, slope={beta[1]:.6g}, last step={np.max(np.abs(step)):.3g})"
    )


@dataclass
class MetricsReport:
    """Named metric values plus the counts and fits they came from."""

    kind: str
    values: dict[str, float | None]
    confusion: ConfusionCounts
    n: int
    threshold: float | None = None
    collapse: dict | None = None
    flags: list[str] = field(default_factory=list)
    collapses: dict[str, MetricsReport] = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n": self.n,
            "threshold": self.threshold,
            "metrics": {k: _clean(v) for k, v in self.values.items()},
            "confusion": self.confusion.to_dict(),
            "collapse": self.collapse,
            "flags": list(self.flags),
            "collapses": {k: r.to_dict() for k, r in self.collapses.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> MetricsReport:
        conf = ConfusionCounts(np.asarray(d["confusion"]["matrix"], dtype=np.int64), tuple(d["confusion"]["labels"]))
        return cls(
            kind=d["kind"],
            values=dict(d["metrics"]),
            confusion=conf,
            n=d["n"],
            threshold=d.get("threshold"),
            collapse=d.get("collapse"),
            flags=list(d.get("flags", [])),
            collapses={k: cls.from_dict(v) for k, v in d.get("collapses", {}).items()},
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _clean(v):
    if v is None:
        return None
    v = float(v)
    return None if not np.isfinite(v) else v


def binary_report(
    probs,
    true_labels,
    pred_labels=None,
    threshold: float = 0.5,
    collapse: dict | None = None,
) -> MetricsReport:
    """Full binary report.

    ``probs`` (P(class 1)) feeds AUC, Brier and calibration metrics.
    ``pred_labels`` are the point classifications; when omitted they are
    ``probs > threshold``.
    """
    y = _binary_truth(true_labels)
    p = _check_probs(probs, y)
    pred = (p > threshold).astype(np.int64) if pred_labels is None else np.asarray(pred_labels, dtype=np.int64)
    counts = confusion(pred, y, labels=(0, 1))
    values: dict[str, float | None] = {k: None for k in BINARY_KEYS}
    values.update(threshold_metrics(counts))
    values["auc"] = auc(p, y)
    values["brier"] = brier(p, y)
    values["balanced_brier"] = balanced_brier(p, y)
    values["mean_calibration_mse"] = mean_calibration(p, y)
    flags = []
    if y.min() == y.max():
        flags.append("single class in truth: calibration fit skipped")
    else:
        try:
            fit = weak_calibration(p, y)
            values["calibration_intercept"] = fit.intercept
            values["calibration_slope"] = fit.slope
            if fit.flag:
                flags.append(fit.flag)
        except CalibrationError as exc:
            flags.append(str(exc))
    for k, v in values.items():
        if v is None and not any(k in f for f in flags):
            flags.append(f"{k} undefined")
    return MetricsReport("binary", values, counts, int(y.size), threshold, collapse, flags)


def _split_name(k: int, K: int, positive: str) -> str:
    lo = "{" + ",".join(str(c) for c in range(1, k + 1)) + "}" if k > 1 else "1"
    hi = "{" + ",".join(str(c) for c in range(k + 1, K + 1)) + "}" if K - k > 1 else str(K)
    return f"{lo} vs {hi}"


def adjacent_binary_collapse(
    predictive,
    true_labels,
    split: int,
    pred_labels=None,
    threshold: float = 0.5,
    positive: str = "upper",
) -> MetricsReport:
    """Binary report for categories <= split versus > split.

    The predictive mass above the split is the binary score. Point labels
    collapse ``pred_labels`` (ordinal classifications) when given,
    otherwise the collapsed mass is thresholded. ``positive="upper"``
    treats the higher (more severe) side as the positive class.
    """
    P = np.atleast_2d(np.asarray(predictive, dtype=float))
    y = np.asarray(true_labels, dtype=np.int64)
    K = P.shape[1]
    if not 1 <= split < K:
        raise ValueError(f"split must satisfy 1 <= k < {K}")
    if positive not in ("upper", "lower"):
        raise ValueError("positive must be 'upper' or 'lower'")
    upper_mass = P[:, split:].sum(axis=1)
    truth = (y > split).astype(np.int64)
    pred = None if pred_labels is None else (np.asarray(pred_labels) > split).astype(np.int64)
    score = np.clip(upper_mass, 0.0, 1.0)
    if positive == "lower":
        truth = 1 - truth
        score = np.clip(1.0 - upper_mass, 0.0, 1.0)
        pred = None if pred is None else 1 - pred
    info = {"split": split, "positive": positive, "name": _split_name(split, K, positive)}
    return binary_report(score, truth, pred, threshold, collapse=info)


def ordinal_report(predictive, true_labels, pred_labels, positive: str = "upper") -> MetricsReport:
    """Overall ordinal metrics plus a binary report for every adjacent split."""
    P = np.atleast_2d(np.asarray(predictive, dtype=float))
    y = np.asarray(true_labels, dtype=np.int64)
    pred = np.asarray(pred_labels, dtype=np.int64)
    K = P.shape[1]
    labels = tuple(range(1, K + 1))
    counts = confusion(pred, y, labels=labels)
    m = counts.matrix
    row = m.sum(axis=1)
    recalls = [m[i, i] / row[i] for i in range(K) if row[i] > 0]
    values = {
        "accuracy": float(np.trace(m) / m.sum()),
        "balanced_accuracy": float(np.mean(recalls)),
        "rps": rps(P, y)[0],
        "mean_calibration_mse": mean_calibration(P, y),
    }
    flags = [f"class {c} absent from truth" for i, c in enumerate(labels) if row[i] == 0]
    collapses = {}
    for k in range(1, K):
        rep = adjacent_binary_collapse(P, y, k, pred, positive=positive)
        collapses[rep.collapse["name"]] = rep
    return MetricsReport("ordinal", values, counts, int(y.size), None, None, flags, collapses)


def _better(a, b, direction):
    if a is None or b is None or a == b:
        return None
    if direction == HIGHER:
        return 0 if a > b else 1
    if direction == LOWER:
        return 0 if a < b else 1
    target = 0.0 if direction == CLOSE_TO_0 else 1.0
    da, db = abs(a - target), abs(b - target)
    if da == db:
        return None
    return 0 if da < db else 1


def _fmt(v):
    return "undefined" if v is None else f"{v:.3f}"


def format_report(report: MetricsReport) -> str:
    """One metric per line, collapses indented under their split names."""
    lines = [f"{k:<24}{_fmt(v):>10}" for k, v in report.values.items()]
    for name, sub in report.collapses.items():
        lines.append(name)
        lines += [f"  {k:<22}{_fmt(v):>10}" for k, v in sub.values.items()]
    return "\n".join(lines)


def comparison_table(a: MetricsReport, b: MetricsReport, names=("Unweighted", "Weighted")) -> str:
    """Aligned two-column table; ``*`` marks the better value of each row."""
    lines = []

    def block(ra, rb, keys, title=None):
        if title:
            lines.append(title)
        w = max(len(k) for k in keys) + 2
        lines.append(f"{'metric':<{w}}{names[0]:>14}{names[1]:>14}")
        for k, direction in keys.items():
            if k not in ra.values and k not in rb.values:
                continue
            va, vb = ra.values.get(k), rb.values.get(k)
            best = _better(va, vb, direction)
            ca = _fmt(va) + ("*" if best == 0 else " ")
            cb = _fmt(vb) + ("*" if best == 1 else " ")
            lines.append(f"{k:<{w}}{ca:>14}{cb:>14}")

    block(a, b, BINARY_KEYS if a.kind == "binary" else ORDINAL_KEYS)
    for name in a.collapses:
        if name in b.collapses:
            lines.append("")
            block(a.collapses[name], b.collapses[name], BINARY_KEYS, title=name)
    return "\n".join(lines)
