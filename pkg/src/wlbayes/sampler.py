"""Posterior sampling for the weighted-likelihood models.

The default algorithm is Hamiltonian Monte Carlo with a diagonal mass
matrix, dual-averaging step-size adaptation and a jittered fixed path
length. Adaptive random-walk Metropolis is kept as a gradient-free
fallback.

Chains are advanced together as one vectorised batch. Every chain draws
from its own random stream derived from ``(seed, key, chain)`` and all
arithmetic is row-wise, so a chain gives the same draws whether it runs
alone or alongside others.
"""

from __future__ import annotations

import csv
import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from . import model as M
from .diagnostics import Diagnostics, diagnostics
from .weights import ClassWeights

logger = logging.getLogger(__name__)

HMC = "hmc"
RWM = "rwm"

_BLOCK = 64
_MAX_ENERGY_ERROR = 1000.0
_INIT_TRIES = 100


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    """Sampler settings. ``seed`` is required; nothing is seeded from the clock."""

    seed: int
    n_chains: int = 4
    n_warmup: int = 1000
    n_draws: int = 1000
    algorithm: str = HMC
    target_accept: float | None = None
    path_length: float = 2.0
    max_leapfrog: int = 256
    adapt_mass: bool = True

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")
        if self.n_draws < 1:
            raise ValueError("n_draws must be >= 1")
        if self.n_warmup < 0:
            raise ValueError("n_warmup must be >= 0")
        if self.algorithm not in (HMC, RWM):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.target_accept is not None and not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.path_length <= 0 or self.max_leapfrog < 1:
            raise ValueError("path_length and max_leapfrog must be positive")

    @property
    def accept_target(self) -> float:
        if self.target_accept is not None:
            return self.target_accept
        return 0.8 if self.algorithm == HMC else 0.234

    def to_dict(self) -> dict:
        return {
            "seed": int(self.seed),
            "n_chains": self.n_chains,
            "n_warmup": self.n_warmup,
            "n_draws": self.n_draws,
            "algorithm": self.algorithm,
            "target_accept": self.accept_target,
            "path_length": self.path_length,
            "max_leapfrog": self.max_leapfrog,
            "adapt_mass": self.adapt_mass,
        }


@dataclass
class PosteriorDraws:
    """Constrained posterior draws, shape (chains, draws, P), plus metadata."""

    draws: np.ndarray
    parameter_names: list[str]
    spec: M.ModelSpec
    predictor_names: tuple[str, ...]
    standardizer: M.Standardizer
    diagnostics: Diagnostics
    accept_rate: np.ndarray
    step_size: np.ndarray
    n_divergent: np.ndarray
    config: SamplerConfig | None = None

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        """Draws stacked chain after chain, shape (chains * draws, P)."""
        return self.draws.reshape(-1, self.draws.shape[2])

    def summary(self) -> dict:
        d = self.diagnostics
        out = {}
        for p, name in enumerate(self.parameter_names):
            col = self.draws[:, :, p]
            out[name] = {
                "mean": float(col.mean()),
                "sd": float(col.std(ddof=1)) if col.size > 1 else 0.0,
                "median": float(np.median(col)),
                "q05": float(np.quantile(col, 0.05)),
                "q95": float(np.quantile(col, 0.95)),
                "rhat": None if d.rhat is None or np.isnan(d.rhat[p]) else float(d.rhat[p]),
                "ess_bulk": None if np.isnan(d.ess_bulk[p]) else float(d.ess_bulk[p]),
                "ess_tail": None if np.isnan(d.ess_tail[p]) else float(d.ess_tail[p]),
                "degenerate": bool(d.degenerate[p]),
            }
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["chain", "iteration", *self.parameter_names])
            for c in range(self.draws.shape[0]):
                for i in range(self.draws.shape[1]):
                    w.writerow([c, i, *(repr(float(v)) for v in self.draws[c, i])])


class _Streams:
    """Per-row random streams with block prefetch.

    Each row consumes its own generator in a fixed order, independent of
    which other rows share the batch.
    """

    def __init__(self, seed: int, keys: Sequence[tuple[int, ...]], dim: int):
        self.dim = dim
        self.main = []
        self.aux = []
        for key in keys:
            ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
            a, b = ss.spawn(2)
            self.main.append(np.random.default_rng(a))
            self.aux.append(np.random.default_rng(b))
        self._start = -1
        self._normals = None
        self._uniforms = None

    def __len__(self):
        return len(self.main)

    def draw(self, it: int) -> tuple[np.ndarray, np.ndarray]:
        """Standard normals (B, dim) and two uniforms (B, 2) for iteration ``it``."""
        start = it - it % _BLOCK
        if start != self._start:
            self._normals = np.stack([g.standard_normal((_BLOCK, self.dim)) for g in self.main], axis=1)
            self._uniforms = np.stack([g.random((_BLOCK, 2)) for g in self.main], axis=1)
            self._start = start
        return self._normals[it - start], self._uniforms[it - start]

    def aux_normals(self) -> np.ndarray:
        return np.stack([g.standard_normal(self.dim) for g in self.aux])


def _initial_points(post: M.BatchPosterior, streams: _Streams) -> np.ndarray:
    spec = post.spec
    J = post.n_predictors
    B = len(streams)
    n_fixed = int(spec.include_intercept) + J
    K1 = spec.n_cutpoints

    def draw(r):
        g = streams.aux[r]
        u = np.empty(post.dim)
        u[:n_fixed] = g.normal(0.0, 0.1, n_fixed)
        if K1:
            c = np.sort(g.uniform(-2.0, 2.0, K1))
            gaps = np.maximum(np.diff(c), 1e-8)
            u[n_fixed:] = np.concatenate([c[:1], np.log(gaps)])
        return u

    def not_finite(U):
        lp, g = post.logp_grad(U)
        return ~np.isfinite(lp) | ~np.all(np.isfinite(g), axis=1)

    U = np.stack([draw(r) for r in range(B)])
    bad = not_finite(U)
    for _ in range(_INIT_TRIES):
        if not bad.any():
            return U
        for r in np.flatnonzero(bad):
            U[r] = draw(r)
        bad = not_finite(U)
    bad = np.flatnonzero(bad)
    raise SamplerError(f"initialization failed for chain(s) {bad.tolist()}")


def _leapfrog_step(post, q, p, g, eps, inv_metric, rows=None):
    p_half = p + 0.5 * eps[:, None] * g
    q_new = q + eps[:, None] * inv_metric * p_half
    lp_new, g_new = post.logp_grad(q_new, rows)
    p_new = p_half + 0.5 * eps[:, None] * g_new
    return q_new, p_new, lp_new, g_new


def _kinetic(p, inv_metric):
    return 0.5 * (p * p * inv_metric).sum(axis=1)


def _find_step_size(post, q, lp, g, inv_metric, streams, eps0=None):
    """Doubling/halving search for a step size with acceptance near 1/2."""
    B = q.shape[0]
    eps = np.ones(B) if eps0 is None else eps0.copy()
    p = streams.aux_normals() / np.sqrt(inv_metric)
    h0 = -lp + _kinetic(p, inv_metric)

    def log_ratio(e):
        _, p1, lp1, _ = _leapfrog_step(post, q, p, g, e, inv_metric)
        out = h0 - (-lp1 + _kinetic(p1, inv_metric))
        return np.where(np.isfinite(out), out, -np.inf)

    r = log_ratio(eps)
    direction = np.where(r > np.log(0.5), 1.0, -1.0)
    active = np.ones(B, dtype=bool)
    for _ in range(60):
        active &= direction * r > -direction * np.log(2.0)
        if not active.any():
            break
        eps = np.where(active, eps * 2.0**direction, eps)
        r = np.where(active, log_ratio(eps), r)
    return np.clip(eps, 1e-10, 1e3)


class _DualAveraging:
    def __init__(self, eps, target, gamma=0.05, t0=10.0, kappa=0.75):
        self.target = target
        self.gamma, self.t0, self.kappa = gamma, t0, kappa
        self.restart(eps)

    def restart(self, eps):
        self.mu = np.log(10.0 * eps)
        self.h_bar = np.zeros_like(eps)
        self.log_eps = np.log(eps)
        self.log_eps_bar = np.zeros_like(eps)
        self.t = 0

    def update(self, accept_stat):
        self.t += 1
        t = self.t
        w = 1.0 / (t + self.t0)
        self.h_bar = (1 - w) * self.h_bar + w * (self.target - accept_stat)
        self.log_eps = self.mu - np.sqrt(t) / self.gamma * self.h_bar
        k = t ** (-self.kappa)
        self.log_eps_bar = k * self.log_eps + (1 - k) * self.log_eps_bar
        return np.exp(self.log_eps)

    def final(self):
        return np.exp(self.log_eps_bar)


def _adaptation_windows(n_warmup: int) -> list[tuple[int, int]]:
    """Slow-adaptation windows ``[start, end)`` for the diagonal metric.

    An initial fast phase and a terminal phase adapt the step size only;
    the windows in between double in length.
    """
    if n_warmup < 20:
        return []
    init, term, base = 75, max(50, n_warmup // 5), 25
    if init + term + base > n_warmup:
        init = int(0.15 * n_warmup)
        term = int(0.1 * n_warmup)
        base = n_warmup - init - term
    windows = []
    start, size = init, base
    last = n_warmup - term
    while start < last:
        end = start + size
        if end + 2 * size > last:
            end = last
        windows.append((start, end))
        start, size = end, size * 2
    return windows


def run_chains(
    post: M.BatchPosterior,
    seed: int,
    keys: Sequence[tuple[int, ...]],
    config: SamplerConfig,
    progress: Callable[[int], None] | None = None,
) -> dict:
    """Run one chain per batch row and return unconstrained draws and statistics.

    Row ``r`` of the batch uses the random stream keyed by ``keys[r]``.
    """
    # overflow in rejected trajectories is expected; those steps are discarded
    with np.errstate(over="ignore", invalid="ignore"):
        return _run_chains(post, seed, keys, config, progress)


def _run_chains(post, seed, keys, config, progress):
    streams = _Streams(seed, keys, post.dim)
    q = _initial_points(post, streams)
    lp, g = post.logp_grad(q)
    B, P = q.shape
    inv_metric = np.ones((B, P))
    target = config.accept_target
    n_total = config.n_warmup + config.n_draws
    windows = _adaptation_windows(config.n_warmup) if config.adapt_mass else []
    ends = {end for _, end in windows}
    first = windows[0][0] if windows else n_total
    welford_n = 0
    w_mean = np.zeros((B, P))
    w_m2 = np.zeros((B, P))

    if config.algorithm == HMC:
        eps = _find_step_size(post, q, lp, g, inv_metric, streams)
    else:
        eps = np.full(B, 2.38 / np.sqrt(P))
    da = _DualAveraging(eps, target)

    out = np.empty((B, config.n_draws, P))
    accept_sum = np.zeros(B)
    n_div = np.zeros(B, dtype=np.int64)
    n_steps = 0

    for it in range(n_total):
        warm = it < config.n_warmup
        z, unif = streams.draw(it)
        if config.algorithm == HMC:
            p = z / np.sqrt(inv_metric)
            h0 = -lp + _kinetic(p, inv_metric)
            L = np.clip(np.ceil(config.path_length * (0.5 + unif[:, 1]) / eps), 1, config.max_leapfrog).astype(int)
            qn, pn, lpn, gn = q, p, lp, g
            alive = np.ones(B, dtype=bool)
            for s in range(int(L.max())):
                step = alive & (s < L)
                if not step.any():
                    break
                if step.all():
                    q1, p1, lp1, g1 = _leapfrog_step(post, qn, pn, gn, eps, inv_metric)
                else:
                    # only rows still integrating; row results do not depend on the subset
                    idx = np.flatnonzero(step)
                    q1, p1, lp1, g1 = qn.copy(), pn.copy(), lpn.copy(), gn.copy()
                    q1[idx], p1[idx], lp1[idx], g1[idx] = _leapfrog_step(
                        post, qn[idx], pn[idx], gn[idx], eps[idx], inv_metric[idx], idx
                    )
                bad = ~np.isfinite(lp1) | ~np.all(np.isfinite(g1), axis=1)
                bad |= (-lp1 + _kinetic(p1, inv_metric)) - h0 > _MAX_ENERGY_ERROR
                div = step & bad
                alive &= ~div
                step &= ~div
                qn = np.where(step[:, None], q1, qn)
                pn = np.where(step[:, None], p1, pn)
                lpn = np.where(step, lp1, lpn)
                gn = np.where(step[:, None], g1, gn)
                n_steps += 1
            h1 = -lpn + _kinetic(pn, inv_metric)
            log_alpha = np.minimum(0.0, h0 - h1)
            log_alpha = np.where(alive & np.isfinite(log_alpha), log_alpha, -np.inf)
            if not warm:
                n_div += ~alive
        else:
            qn = q + eps[:, None] * np.sqrt(inv_metric) * z
            lpn, gn = post.logp_grad(qn)
            log_alpha = np.minimum(0.0, lpn - lp)
            log_alpha = np.where(np.isfinite(log_alpha), log_alpha, -np.inf)

        accept_stat = np.exp(log_alpha)
        accept = np.log(unif[:, 0]) < log_alpha
        q = np.where(accept[:, None], qn, q)
        lp = np.where(accept, lpn, lp)
        g = np.where(accept[:, None], gn, g)

        if warm:
            eps = da.update(accept_stat)
            if it + 1 == config.n_warmup:
                eps = da.final()
            if first <= it < config.n_warmup and it < windows[-1][1]:
                welford_n += 1
                delta = q - w_mean
                w_mean = w_mean + delta / welford_n
                w_m2 = w_m2 + delta * (q - w_mean)
                if it + 1 in ends:
                    n = welford_n
                    var = w_m2 / max(n - 1, 1)
                    inv_metric = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
                    welford_n = 0
                    w_mean = np.zeros((B, P))
                    w_m2 = np.zeros((B, P))
                    if config.algorithm == HMC:
                        eps = _find_step_size(post, q, lp, g, inv_metric, streams, eps)
                    da.restart(eps)
        else:
            out[:, it - config.n_warmup] = q
            accept_sum += accept_stat
        if progress is not None:
            progress(it)

    if not np.all(np.isfinite(out)):
        bad = np.flatnonzero(~np.all(np.isfinite(out), axis=(1, 2)))
        raise SamplerError(f"chain(s) {bad.tolist()} diverged to a non-finite state")
    return {
        "draws": out,
        "accept_rate": accept_sum / config.n_draws,
        "step_size": eps,
        "n_divergent": n_div,
        "inv_metric": inv_metric,
        "n_gradient_batches": n_steps,
    }


def _weights_array(weights, n):
    w = weights.values if isinstance(weights, ClassWeights) else np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"weights have shape {w.shape}, expected ({n},)")
    return w


def sample(spec: M.ModelSpec, data: M.Dataset, weights, config: SamplerConfig) -> PosteriorDraws:
    """Draw from the weighted posterior.

    Predictors are standardised first when ``spec.standardize`` is set;
    the fitted transform is kept on the result for prediction. Reported
    draws are on the constrained scale (ordered cutpoints).
    """
    spec.check_data(data)
    w = _weights_array(weights, data.n)
    std = M.Standardizer.fit(data.X) if spec.standardize else M.Standardizer.identity(data.n_predictors)
    X = std.transform(data.X)
    post = M.BatchPosterior(spec, X, data.y, w)
    keys = [(0, c) for c in range(config.n_chains)]
    res = run_chains(post, config.seed, keys, config)
    draws = M.constrain(spec, data.n_predictors, res["draws"])
    diag = diagnostics(draws)
    return PosteriorDraws(
        draws=draws,
        parameter_names=spec.param_names(data.predictor_names),
        spec=spec,
        predictor_names=data.predictor_names,
        standardizer=std,
        diagnostics=diag,
        accept_rate=res["accept_rate"],
        step_size=res["step_size"],
        n_divergent=res["n_divergent"],
        config=config,
    )
