"""Weight-perturbation evolution strategies and Gaussian smoothing.

Two gradient estimators drive the same ascent loop ``theta <- theta + alpha*g``:

``"es"``
    The population estimator ``g = 1/(N sigma) sum_k r_k eps_k`` with
    ``r_k`` the (group-averaged) reward at ``theta + sigma eps_k``.  Works on
    any black-box objective.  Every candidate draws from its own stream
    ``key / ("iter", t) / ("cand", k)``.

``"noisy_gradient"``
    The ES-like noisy ascent used by the quadratic OU model:
    ``g = grad J(theta) + (sigma / sqrt(N)) xi`` with ``xi ~ N(0, I)``.
    Needs an objective with an analytic gradient.  On quadratics
    ``grad J_sigma = grad J``, so this is the smoothed-gradient flow with
    isotropic noise of covariance ``(sigma^2/N) I``.  Noise comes from the
    single stream ``key / ("noise", 0)`` consumed one D-vector per iteration.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import NumericError, ParameterError
from .landscape import ObjectiveFunction
from .stochastics import StreamKey, derive_stream

__all__ = [
    "ESConfig",
    "Trajectory",
    "EnsembleResult",
    "es_gradient_estimate",
    "run_es",
    "run_ensemble",
    "smoothed_reward",
]

ESTIMATORS = ("es", "noisy_gradient")


@dataclass(frozen=True)
class ESConfig:
    alpha: float
    sigma: float
    N: int
    T: int
    G: int = 1
    antithetic: bool = False
    baseline: bool = False
    estimator: str = "es"
    record_every: int = 1

    def __post_init__(self):
        if not (self.alpha > 0 and np.isfinite(self.alpha)):
            raise ParameterError(f"alpha must be positive, got {self.alpha}")
        if not (self.sigma > 0 and np.isfinite(self.sigma)):
            raise ParameterError(f"sigma must be positive, got {self.sigma}")
        for name in ("N", "G", "record_every"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ParameterError(f"{name} must be a positive integer, got {v!r}")
        if int(self.T) != self.T or self.T < 0:
            raise ParameterError(f"T must be a nonnegative integer, got {self.T!r}")
        if self.antithetic and self.N % 2:
            raise ParameterError(f"antithetic sampling needs an even population, got N={self.N}")
        if self.baseline and self.N < 2:
            raise ParameterError("baseline subtraction needs N >= 2")
        if self.estimator not in ESTIMATORS:
            raise ParameterError(f"estimator must be one of {ESTIMATORS}, got {self.estimator!r}")

    @property
    def kappa(self) -> float:
        """Effective noise sigma^2 / N."""
        return self.sigma**2 / self.N

    def with_(self, **kw) -> "ESConfig":
        d = asdict(self)
        d.update(kw)
        return ESConfig(**d)


def config_hash(payload) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=float)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


@dataclass
class Trajectory:
    """Recorded run: ``rewards`` and ``grad_norms`` have length T+1.

    ``grad_norms[T]`` is NaN (no update is computed after the last step).
    ``thetas`` holds parameter snapshots at ``theta_iters``.
    """

    rewards: np.ndarray
    grad_norms: np.ndarray
    thetas: np.ndarray
    theta_iters: np.ndarray
    config: ESConfig
    landscape: dict
    key: StreamKey
    rewards_clean: bool = True

    def __len__(self):
        return self.rewards.size

    @property
    def final_theta(self):
        return self.thetas[-1]

    def metadata(self) -> dict:
        return {
            "config": asdict(self.config),
            "landscape": self.landscape,
            "stream_key": self.key.as_dict(),
            "rewards_clean": self.rewards_clean,
            "length": len(self),
            "config_hash": config_hash({"config": asdict(self.config), "landscape": self.landscape}),
        }


def _candidate_noise(rng_k, D):
    return rng_k.standard_normal(D)


def es_gradient_estimate(objective: ObjectiveFunction, theta, cfg: ESConfig, stream):
    """Population gradient estimate at ``theta``.

    ``stream`` is either a :class:`StreamKey` for this iteration (each
    candidate then derives ``("cand", k)``) or a generator consumed in
    candidate order.  Returns ``(g_hat, rewards)``.
    """
    theta = objective._check(theta)
    D, N, sigma = objective.dimension, cfg.N, cfg.sigma
    n_dirs = N // 2 if cfg.antithetic else N
    if isinstance(stream, StreamKey):
        rngs = [derive_stream(stream.child("cand", k)) for k in range(n_dirs)]
    else:
        rngs = [stream] * n_dirs
    eps = np.empty((n_dirs, D))
    for k in range(n_dirs):
        eps[k] = _candidate_noise(rngs[k], D)

    if cfg.antithetic:
        cand = np.concatenate([theta + sigma * eps, theta - sigma * eps])
    else:
        cand = theta + sigma * eps
    clean = objective.values(cand)
    if objective.noise_scale > 0:
        scale = objective.noise_scale / np.sqrt(cfg.G)
        noise = np.empty(cand.shape[0])
        for k in range(n_dirs):
            noise[k] = rngs[k].standard_normal()
            if cfg.antithetic:
                noise[k + n_dirs] = rngs[k].standard_normal()
        rewards = clean + scale * noise
    else:
        rewards = clean
    if not np.all(np.isfinite(rewards)):
        raise NumericError("non-finite candidate reward")

    if cfg.antithetic:
        w = rewards[:n_dirs] - rewards[n_dirs:]
        if cfg.baseline:
            # a constant shift cancels inside each pair already
            pass
    else:
        w = rewards
        if cfg.baseline:
            # leave-one-out mean keeps the estimator unbiased
            w = rewards - (rewards.sum() - rewards) / (N - 1)
    # fixed-order reduction over candidates
    g = (w[:, None] * eps).sum(axis=0) / (N * sigma)
    return g, rewards


def _noisy_gradient_step(objective, theta, cfg, rng):
    xi = rng.standard_normal(theta.shape)
    return objective.gradient(theta) + (cfg.sigma / np.sqrt(cfg.N)) * xi


def run_es(objective: ObjectiveFunction, theta0, cfg: ESConfig, key: StreamKey) -> Trajectory:
    """Run ``cfg.T`` ascent iterations from ``theta0``; deterministic given ``key``."""
    theta = objective._check(theta0).copy()
    if cfg.estimator == "noisy_gradient" and not objective.has_gradient:
        raise ParameterError("estimator 'noisy_gradient' needs an objective with an analytic gradient")
    T = cfg.T
    rewards = np.empty(T + 1)
    grad_norms = np.full(T + 1, np.nan)
    iters = list(range(0, T + 1, cfg.record_every))
    if iters[-1] != T:
        iters.append(T)
    snaps = np.empty((len(iters), objective.dimension))
    snap_pos = {t: i for i, t in enumerate(iters)}
    noise_rng = derive_stream(key.child("noise")) if cfg.estimator == "noisy_gradient" else None

    for t in range(T + 1):
        r = objective.value(theta)
        if not np.isfinite(r) or not np.all(np.isfinite(theta)):
            raise NumericError("non-finite reward or parameter", iteration=t)
        rewards[t] = r
        if t in snap_pos:
            snaps[snap_pos[t]] = theta
        if t == T:
            break
        if noise_rng is not None:
            g = _noisy_gradient_step(objective, theta, cfg, noise_rng)
        else:
            g = es_gradient_estimate(objective, theta, cfg, key.child("iter", t))[0]
        grad_norms[t] = np.linalg.norm(g)
        theta = theta + cfg.alpha * g

    return Trajectory(rewards, grad_norms, snaps, np.array(iters), cfg, objective.describe(), key)


@dataclass
class EnsembleResult:
    """Rewards of R replicates, shape (R, T+1), plus per-replicate summaries."""

    rewards: np.ndarray
    final_thetas: np.ndarray
    max_dist: np.ndarray
    keys: list = field(default_factory=list)
    grad_norm_mean: np.ndarray | None = None

    @property
    def mean(self):
        return self.rewards.mean(axis=0)

    @property
    def se(self):
        R = self.rewards.shape[0]
        if R < 2:
            return np.full(self.rewards.shape[1], np.nan)
        return self.rewards.std(axis=0, ddof=1) / np.sqrt(R)


def _chunked_noise(rngs, D, chunk):
    """Yield per-iteration noise blocks of shape (R, D), drawing ``chunk`` steps at a time."""
    while True:
        block = np.stack([rng.standard_normal((chunk, D)) for rng in rngs], axis=1)
        for row in block:
            yield row


def run_ensemble(objective: ObjectiveFunction, theta0, cfg: ESConfig, keys, center=None, workers=1,
                 chunk=256) -> EnsembleResult:
    """Run one replicate per key.

    In ``noisy_gradient`` mode the replicates are advanced together in one
    vectorized loop; each replicate still consumes its own stream exactly as
    :func:`run_es` would, so row ``r`` reproduces ``run_es(..., keys[r])``.
    ``center`` (default ``theta0``) sets the reference for ``max_dist``.
    """
    keys = list(keys)
    theta0 = objective._check(theta0)
    center = theta0 if center is None else objective._check(center)
    R, T, D = len(keys), cfg.T, objective.dimension

    if cfg.estimator != "noisy_gradient":
        def one(k):
            tr = run_es(objective, theta0, cfg.with_(record_every=max(T, 1)), k)
            dist = np.linalg.norm(tr.thetas - center, axis=1).max()
            return tr.rewards, tr.final_theta, dist, tr.grad_norms
        if workers > 1:
            with ThreadPoolExecutor(workers) as ex:
                out = list(ex.map(one, keys))
        else:
            out = [one(k) for k in keys]
        return EnsembleResult(np.array([o[0] for o in out]), np.array([o[1] for o in out]),
                              np.array([o[2] for o in out]), keys, np.array([o[3] for o in out]).mean(axis=0))

    if not objective.has_gradient:
        raise ParameterError("estimator 'noisy_gradient' needs an objective with an analytic gradient")
    rngs = [derive_stream(k.child("noise")) for k in keys]
    noise = _chunked_noise(rngs, D, min(chunk, max(T, 1)))
    theta = np.tile(theta0, (R, 1))
    rewards = np.empty((R, T + 1))
    max_dist = np.zeros(R)
    gnorm = np.full(T + 1, np.nan)
    scale = cfg.sigma / np.sqrt(cfg.N)
    for t in range(T + 1):
        r = objective.values(theta)
        if not np.all(np.isfinite(r)):
            raise NumericError("non-finite reward or parameter", iteration=t)
        rewards[:, t] = r
        np.maximum(max_dist, np.sqrt(((theta - center) ** 2).sum(axis=1)), out=max_dist)
        if t == T:
            break
        g = objective.gradient(theta) + scale * next(noise)
        gnorm[t] = np.sqrt((g * g).sum(axis=1)).mean()
        theta = theta + cfg.alpha * g
    return EnsembleResult(rewards, theta, max_dist, keys, gnorm)


def smoothed_reward(objective: ObjectiveFunction, theta, sigma, samples, stream):
    """Monte Carlo estimate of ``J_sigma(theta) = E[J(theta + sigma eps)]``.

    Each of the ``samples`` draws averages the antithetic pair
    ``theta +- sigma eps``: still unbiased, and odd terms of J around theta
    cancel exactly, so small sigma recovers J(theta) to rounding.
    Returns ``(mean, standard_error)`` with the SE taken over pairs.
    """
    if int(samples) != samples or samples < 2:
        raise ParameterError(f"samples must be an integer >= 2, got {samples!r}")
    if not sigma > 0:
        raise ParameterError("sigma must be positive")
    theta = objective._check(theta)
    rng = derive_stream(stream) if isinstance(stream, StreamKey) else stream
    eps = rng.standard_normal((int(samples), objective.dimension))
    r = 0.5 * (objective.evaluate_batch(theta + sigma * eps, rng) + objective.evaluate_batch(theta - sigma * eps, rng))
    return float(r.mean()), float(r.std(ddof=1) / np.sqrt(samples))
