"""Perturbation batches and extreme-value statistics over them.

A batch holds the reward deltas ``dR_j = R(theta + sigma u_j) - R_0`` of M
unnormalized Gaussian directions.  From it we estimate the expected best-of-N
improvement (subset sampling without replacement, or exactly from order
statistics), tail quantiles, improvement probability, bootstrap SEs and the
saturation population N_90.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ParameterError
from .stochastics import StreamKey, derive_stream

__all__ = [
    "PerturbationBatch",
    "BestOfNEstimate",
    "generate_batch",
    "best_of_n",
    "best_of_n_mc",
    "best_of_n_exact",
    "summarize_best_of_n",
    "saturation_population",
    "tail_statistics",
    "bootstrap_se",
    "estimate_p_improve",
    "DEFAULT_N_LIST",
]

DEFAULT_N_LIST = (5, 10, 20, 30, 50)


@dataclass
class PerturbationBatch:
    R0: float
    deltas: np.ndarray
    sigma: float
    index: int = 0
    key: StreamKey | None = None
    excluded: int = 0

    def __post_init__(self):
        self.deltas = np.asarray(self.deltas, dtype=float).ravel()
        if self.deltas.size < 1:
            raise ParameterError("a batch needs at least one finite candidate")
        if not np.all(np.isfinite(self.deltas)):
            raise ParameterError("batch deltas must be finite")

    @property
    def M(self) -> int:
        return self.deltas.size


def _pool(batch_or_pool) -> np.ndarray:
    if isinstance(batch_or_pool, PerturbationBatch):
        return batch_or_pool.deltas
    pool = np.asarray(batch_or_pool, dtype=float).ravel()
    if pool.size < 1 or not np.all(np.isfinite(pool)):
        raise ParameterError("pool must be a nonempty finite array")
    return pool


def _rng(stream):
    return derive_stream(stream) if isinstance(stream, StreamKey) else stream


def generate_batch(objective, theta, sigma, M, stream: StreamKey, index=0, group_size=1) -> PerturbationBatch:
    """Evaluate M perturbed candidates around ``theta``.

    Candidate j draws its direction (and its evaluation noise) from
    ``stream / ("cand", j)``; the baseline uses ``stream / ("baseline", 0)``.
    Non-finite rewards are excluded and counted.
    """
    if int(M) != M or M < 1:
        raise ParameterError(f"M must be a positive integer, got {M!r}")
    if sigma < 0:
        raise ParameterError("sigma must be nonnegative")
    theta = objective._check(theta)
    D = objective.dimension
    R0 = objective.evaluate(theta, derive_stream(stream.child("baseline")), group_size)
    rngs = [derive_stream(stream.child("cand", j)) for j in range(int(M))]
    U = np.stack([r.standard_normal(D) for r in rngs])
    clean = objective.values(theta + sigma * U)
    if objective.noise_scale > 0:
        noise = np.array([r.standard_normal() for r in rngs])
        clean = clean + objective.noise_scale / math.sqrt(group_size) * noise
    ok = np.isfinite(clean)
    return PerturbationBatch(R0, clean[ok] - R0, sigma, index, stream, int((~ok).sum()))


def best_of_n_exact(pool, N) -> float:
    """E[max of a uniform N-subset] = sum_j x_(j) C(j-1, N-1) / C(M, N).

    Evaluated in exact rational arithmetic and rounded once, so the result is
    the correctly rounded expectation: exactly the maximum at N = M, and
    nondecreasing in N bit for bit.
    """
    x = np.sort(_pool(pool))
    M = x.size
    if int(N) != N or not 1 <= N <= M:
        raise ParameterError(f"N must be an integer in [1, {M}], got {N!r}")
    N = int(N)
    if N == M:
        return float(x[-1])
    # binomial weights updated in place: C(j, N-1) = C(j-1, N-1) * j / (j - N + 1)
    c = 1
    total = Fraction(0)
    for j in range(N, M + 1):
        if j > N:
            c = c * (j - 1) // (j - N)
        total += c * Fraction(float(x[j - 1]))
    return float(total / math.comb(M, N))


def best_of_n_mc(pool, N, subset_samples, stream, chunk=4096):
    """Monte Carlo mean and SE of the best of N drawn without replacement."""
    x = _pool(pool)
    M = x.size
    if int(N) != N or not 1 <= N <= M:
        raise ParameterError(f"N must be an integer in [1, {M}], got {N!r}")
    if int(subset_samples) != subset_samples or subset_samples < 2:
        raise ParameterError("subset_samples must be an integer >= 2")
    rng = _rng(stream)
    N, S = int(N), int(subset_samples)
    out = np.empty(S)
    done = 0
    while done < S:
        k = min(chunk, S - done)
        keys = rng.random((k, M))
        # the N smallest random keys index a uniform subset without replacement
        idx = np.argpartition(keys, N - 1, axis=1)[:, :N] if N < M else np.broadcast_to(np.arange(M), (k, M))
        out[done:done + k] = x[idx].max(axis=1)
        done += k
    return float(out.mean()), float(out.std(ddof=1) / math.sqrt(S))


def best_of_n(batch, N, subset_samples=2000, stream=None) -> float:
    """Expected best-of-N improvement; ``subset_samples=0`` selects the exact formula."""
    if subset_samples == 0:
        return best_of_n_exact(batch, N)
    if stream is None:
        raise ParameterError("Monte Carlo mode needs a stream")
    return best_of_n_mc(batch, N, subset_samples, stream)[0]


@dataclass
class BestOfNEstimate:
    N_list: tuple
    per_batch: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    R0: float
    normalized: np.ndarray | None
    normalized_se: np.ndarray | None
    subset_samples: int
    notes: list = field(default_factory=list)

    @property
    def ci95(self):
        return 1.96 * self.se

    def as_dict(self):
        d = {"N": list(self.N_list), "mean": self.mean.tolist(), "se": self.se.tolist(),
             "ci95": self.ci95.tolist(), "R0": self.R0, "subset_samples": self.subset_samples, "notes": self.notes}
        if self.normalized is not None:
            d["normalized"] = self.normalized.tolist()
            d["normalized_se"] = self.normalized_se.tolist()
        return d


def summarize_best_of_n(batches, N_list=DEFAULT_N_LIST, R0=None, subset_samples=0, stream=None) -> BestOfNEstimate:
    """Across-batch mean and SE of best-of-N, plus headroom normalization.

    ``R0`` defaults to the mean batch baseline.  Normalization by ``1 - R0``
    is refused (left as None, with a note) when ``R0 >= 1``.
    """
    batches = list(batches)
    if len(batches) < 2:
        raise ParameterError("need at least two batches for a standard error")
    N_list = tuple(int(n) for n in N_list)
    vals = np.empty((len(batches), len(N_list)))
    for s, b in enumerate(batches):
        for i, n in enumerate(N_list):
            if subset_samples == 0:
                vals[s, i] = best_of_n_exact(b, n)
            else:
                vals[s, i] = best_of_n_mc(b, n, subset_samples, stream.child("batch", s).child("N", n))[0]
    mean = vals.mean(axis=0)
    se = vals.std(axis=0, ddof=1) / math.sqrt(len(batches))
    if R0 is None:
        R0 = float(np.mean([b.R0 for b in batches]))
    notes = []
    if R0 < 1:
        norm, norm_se = mean / (1.0 - R0), se / (1.0 - R0)
    else:
        norm = norm_se = None
        notes.append(f"headroom normalization refused: R0={R0} >= 1")
    return BestOfNEstimate(N_list, vals, mean, se, float(R0), norm, norm_se, int(subset_samples), notes)


def saturation_population(est: BestOfNEstimate, fraction=0.9):
    """Smallest listed N with mean Delta*_N >= fraction * Delta*_{N_max}; None if undefined."""
    order = np.argsort(est.N_list)
    N = np.asarray(est.N_list)[order]
    vals = np.asarray(est.mean)[order]
    top = vals[-1]
    if not top > 0:
        return None
    hit = np.flatnonzero(vals >= fraction * top)
    return int(N[hit[0]])


@dataclass(frozen=True)
class TailStats:
    quantile: float
    level: float
    p_improve: float
    normalized: bool


def tail_statistics(batch, level=0.95, normalize=True) -> TailStats:
    """Empirical quantile (linear interpolation between order statistics) and Pr(dR > 0).

    Batches are normalized by their headroom ``1 - R0`` unless
    ``normalize=False``; plain arrays are used as given.
    """
    if not 0 < level < 1:
        raise ParameterError("level must lie in (0, 1)")
    x = _pool(batch)
    scaled = False
    if normalize and isinstance(batch, PerturbationBatch):
        if batch.R0 >= 1:
            raise ParameterError(f"headroom normalization refused: R0={batch.R0} >= 1")
        x = x / (1.0 - batch.R0)
        scaled = True
    q = float(np.quantile(x, level, method="linear"))
    return TailStats(q, float(level), float(np.mean(x > 0)), scaled)


def bootstrap_se(batch, statistic, replicates=1000, stream=None) -> float:
    """SE of ``statistic(pool)`` over candidate resamples drawn with replacement."""
    if int(replicates) != replicates or replicates < 100:
        raise ParameterError("replicates must be an integer >= 100")
    x = _pool(batch)
    rng = _rng(stream)
    idx = rng.integers(0, x.size, size=(int(replicates), x.size))
    stats = np.array([statistic(x[i]) for i in idx], dtype=float)
    if np.ptp(stats) == 0:
        return 0.0
    return float(stats.std(ddof=1))


def estimate_p_improve(objective, theta, sigma, samples, stream: StreamKey, group_size=1):
    """Fraction of perturbations with strictly positive reward change, with binomial SE."""
    if int(samples) != samples or samples < 100:
        raise ParameterError("samples must be an integer >= 100")
    b = generate_batch(objective, theta, sigma, samples, stream, group_size=group_size)
    p = float(np.mean(b.deltas > 0))
    return p, math.sqrt(p * (1.0 - p) / b.M)
