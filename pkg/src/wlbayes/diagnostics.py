"""Convergence diagnostics: rank-normalised split R-hat and effective sample size.

R-hat is the maximum of the bulk and tail (folded) versions computed on
rank-normalised split chains and the classic split R-hat on the raw
draws. Rank normalisation caps R-hat for fully separated chains (about
1.83 for two chains), so the classic form is kept to report gross
disagreement at its true scale. ESS uses Geyer's initial monotone sequence
on FFT autocovariances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats


@dataclass
class Diagnostics:
    """Per-parameter diagnostics. ``rhat`` is None when only one chain ran."""

    rhat: np.ndarray | None
    ess_bulk: np.ndarray
    ess_tail: np.ndarray
    degenerate: np.ndarray

    def max_rhat(self) -> float | None:
        if self.rhat is None or np.all(np.isnan(self.rhat)):
            return None
        return float(np.nanmax(self.rhat))

    def min_ess(self) -> float | None:
        ok = self.ess_bulk[~np.isnan(self.ess_bulk)]
        return float(ok.min()) if ok.size else None


def _split_chains(x: np.ndarray) -> np.ndarray:
    half = x.shape[1] // 2
    return np.vstack([x[:, :half], x[:, -half:]])


def _z_scale(x: np.ndarray) -> np.ndarray:
    ranks = stats.rankdata(x, method="average").reshape(x.shape)
    return stats.norm.ppf((ranks - 0.375) / (x.size + 0.25))


def _is_constant(x: np.ndarray) -> bool:
    return bool(np.all(x == x.flat[0]))


def _rhat_basic(x: np.ndarray) -> float:
    n = x.shape[1]
    chain_mean = x.mean(axis=1)
    within = x.var(axis=1, ddof=1).mean()
    between = n * chain_mean.var(ddof=1)
    if within == 0:
        return np.nan
    var_plus = (n - 1) / n * within + between / n
    return float(np.sqrt(var_plus / within))


def _autocov(x: np.ndarray) -> np.ndarray:
    """Autocovariance along the last axis via zero-padded FFT."""
    n = x.shape[-1]
    m = 1 << (2 * n - 1).bit_length()
    xc = x - x.mean(axis=-1, keepdims=True)
    f = np.fft.rfft(xc, n=m, axis=-1)
    acov = np.fft.irfft(f * np.conj(f), n=m, axis=-1)[..., :n]
    return acov / n


def _ess_basic(x: np.ndarray) -> float:
    n_chain, n = x.shape
    if n < 4 or _is_constant(x):
        return np.nan
    acov = _autocov(x)
    chain_mean = x.mean(axis=1)
    mean_var = acov[:, 0].mean() * n / (n - 1.0)
    var_plus = mean_var * (n - 1.0) / n
    if n_chain > 1:
        var_plus += chain_mean.var(ddof=1)
    if var_plus <= 0:
        return np.nan

    rho = np.zeros(n)
    rho_even, rho_odd = 1.0, 1.0 - (mean_var - acov[:, 1].mean()) / var_plus
    rho[0], rho[1] = rho_even, rho_odd
    t = 1
    while t < n - 2 and rho_even + rho_odd >= 0.0:
        rho_even = 1.0 - (mean_var - acov[:, t + 1].mean()) / var_plus
        rho_odd = 1.0 - (mean_var - acov[:, t + 2].mean()) / var_plus
        if rho_even + rho_odd >= 0:
            rho[t + 1], rho[t + 2] = rho_even, rho_odd
        t += 2
    max_t = t
    # initial monotone sequence
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = rho[t + 2] = (rho[t - 1] + rho[t]) / 2.0
        t += 2
    tau = -1.0 + 2.0 * rho[:max_t].sum() + rho[max_t : max_t + 2].sum()
    tau = max(tau, 1.0 / np.log10(n_chain * n))
    return float(n_chain * n / tau)


def split_rhat(chains) -> float | None:
    """Rank-normalised split R-hat for a (chains, draws) array.

    Returns None for a single chain and NaN for constant chains.
    """
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2:
        raise ValueError("expected a (chains, draws) array")
    if x.shape[0] < 2:
        return None
    if x.shape[1] < 4 or _is_constant(x):
        return np.nan
    split = _split_chains(x)
    bulk = _rhat_basic(_z_scale(split))
    folded = np.abs(x - np.median(x))
    tail = np.nan if _is_constant(folded) else _rhat_basic(_z_scale(_split_chains(folded)))
    classic = _rhat_basic(split)
    values = np.array([bulk, tail, classic])
    return float(np.nanmax(values)) if not np.all(np.isnan(values)) else np.nan


def ess_bulk(chains) -> float:
    x = np.asarray(chains, dtype=float)
    if x.shape[1] < 4 or _is_constant(x):
        return np.nan
    return _ess_basic(_z_scale(_split_chains(x)))


def ess_tail(chains, prob: float = 0.05) -> float:
    x = np.asarray(chains, dtype=float)
    if x.shape[1] < 4 or _is_constant(x):
        return np.nan
    lo, hi = np.quantile(x, [prob, 1 - prob])
    values = []
    for q in (lo, hi):
        ind = (x <= q).astype(float)
        values.append(np.nan if _is_constant(ind) else _ess_basic(_split_chains(ind)))
    return float(np.nanmin(values)) if not np.all(np.isnan(values)) else np.nan


def ess_mean(chains) -> float:
    x = np.asarray(chains, dtype=float)
    return _ess_basic(_split_chains(x))


def mcse_mean(chains) -> float:
    x = np.asarray(chains, dtype=float)
    ess = ess_mean(x)
    return float(x.std(ddof=1) / np.sqrt(ess))


def mcse_sd(chains) -> float:
    """Monte-Carlo standard error of the posterior sd (delta method on the second moment)."""
    x = np.asarray(chains, dtype=float)
    sq = (x - x.mean()) ** 2
    ess = ess_mean(sq)
    sd = x.std(ddof=1)
    return float(sq.std(ddof=1) / np.sqrt(ess) / (2.0 * sd))


def diagnostics(draws) -> Diagnostics:
    """Per-parameter R-hat and ESS for draws shaped (chains, draws, P)."""
    d = np.asarray(draws, dtype=float)
    if d.ndim != 3:
        raise ValueError("expected a (chains, draws, parameters) array")
    P = d.shape[2]
    degenerate = np.array([_is_constant(d[:, :, p]) for p in range(P)])
    rhat = None
    if d.shape[0] >= 2:
        rhat = np.array([split_rhat(d[:, :, p]) for p in range(P)], dtype=float)
    bulk = np.array([ess_bulk(d[:, :, p]) for p in range(P)], dtype=float)
    tail = np.array([ess_tail(d[:, :, p]) for p in range(P)], dtype=float)
    return Diagnostics(rhat=rhat, ess_bulk=bulk, ess_tail=tail, degenerate=degenerate)
