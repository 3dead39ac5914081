"""Per-observation likelihood weights from class membership.

Each observation's log-likelihood contribution is multiplied by a weight
inversely proportional to the frequency of its class. Weights are rescaled
so they sum to the number of observations, which keeps the total amount
of information in the data unchanged.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np


class EmptyDatasetError(ValueError):
    pass


@dataclass(frozen=True)
class ClassWeights:
    """Weights attached to a label vector.

    Attributes
    ----------
    values : np.ndarray
        Positive multipliers on the log-likelihood contributions, length N.
    class_labels : np.ndarray
        Integer labels the weights were derived from, length N.
    class_proportions : dict
        Proportion used for each class (empirical unless overridden).
    """

    values: np.ndarray
    class_labels: np.ndarray
    class_proportions: dict[int, float]

    def __len__(self) -> int:
        return len(self.values)

    def per_class(self) -> dict[int, float]:
        out = {}
        for c in self.class_proportions:
            idx = np.flatnonzero(self.class_labels == c)
            if idx.size:
                out[c] = float(self.values[idx[0]])
        return out


def _as_labels(labels) -> np.ndarray:
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise ValueError("labels must be one-dimensional")
    if arr.size == 0:
        raise EmptyDatasetError("empty dataset")
    if arr.dtype.kind == "f":
        if not np.all(np.isfinite(arr)) or np.any(arr != np.round(arr)):
            raise ValueError("class labels must be integers")
    elif arr.dtype.kind not in "iub":
        raise ValueError("class labels must be integers")
    return arr.astype(np.int64)


def compute_weights(labels, proportions: Mapping[int, float] | None = None) -> ClassWeights:
    """Inverse-class-proportion weights normalised to sum to N.

    Parameters
    ----------
    labels : array_like of int
        Class label of every observation.
    proportions : mapping, optional
        Externally known class proportions (e.g. population prevalence).
        When given, they replace the empirical proportions of ``labels``.
        Every observed class must have an entry.

    Returns
    -------
    ClassWeights

    Examples
    --------
    >>> w = compute_weights([0, 0, 0, 0, 0, 0, 1, 1])
    >>> np.round(w.values, 2).tolist()
    [0.67, 0.67, 0.67, 0.67, 0.67, 0.67, 2.0, 2.0]
    """
    y = _as_labels(labels)
    n = y.size
    classes, inverse, counts = np.unique(y, return_inverse=True, return_counts=True)

    if proportions is None:
        props = counts / n
    else:
        missing = [int(c) for c in classes if int(c) not in proportions]
        if missing:
            raise ValueError(f"no proportion supplied for classes {missing}")
        props = np.array([float(proportions[int(c)]) for c in classes])
        if np.any(~np.isfinite(props)) or np.any(props <= 0) or np.any(props > 1):
            raise ValueError("proportions must lie in (0, 1]")

    if np.all(props == props[0]):
        # equal proportions: exactly the unweighted analysis
        per_class = np.ones(classes.size)
    else:
        # normaliser summed per class, so the result does not depend on row order
        raw = 1.0 / props
        per_class = raw / np.dot(counts, raw) * n
    values = per_class[inverse]

    return ClassWeights(
        values=values,
        class_labels=y,
        class_proportions={int(c): float(p) for c, p in zip(classes, props)},
    )


def unit_weights(n: int, labels=None) -> ClassWeights:
    """All-ones weights; the unweighted analysis."""
    n = int(n)
    if n < 1:
        raise EmptyDatasetError("empty dataset")
    if labels is None:
        y = np.zeros(n, dtype=np.int64)
    else:
        y = _as_labels(labels)
        if y.size != n:
            raise ValueError("labels length does not match n")
    classes, counts = np.unique(y, return_counts=True)
    return ClassWeights(
        values=np.ones(n),
        class_labels=y,
        class_proportions={int(c): float(k / n) for c, k in zip(classes, counts)},
    )
