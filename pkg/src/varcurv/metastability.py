"""Noisy ascent on the quartic double-well: escape times, hop statistics, regimes.

The simulated coordinate follows the discrete Langevin update

    x_{k+1} = x_k - alpha L'(x_k) + alpha xi_k,    xi_k ~ N(0, sigma^2 / N),

which is the noisy-gradient ascent on the reward ``-L``.  Its small-step
limit has noise temperature ``eps = alpha sigma^2 / (2N)`` and the
Eyring-Kramers law for the quartic well ``L = lam/4 (x^2 - a^2)^2`` reads

    E[K_esc] ~= 2 pi / (alpha lam a^2 sqrt 2) * exp(dL / eps),   dL = lam a^4 / 4.

Extra quadratic coordinates of the landscape decouple from coordinate 0,
so only coordinate 0 is simulated.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import NumericError, ParameterError
from .landscape import DoubleWellLandscape
from .stochastics import StreamKey, derive_stream

__all__ = [
    "KramersSetup",
    "KramersPrediction",
    "HopRecord",
    "DoubleWellRun",
    "kramers_escape_iters",
    "hop_probability",
    "classify_regime",
    "simulate_double_well",
    "first_passage_times",
    "C_LO",
    "C_HI",
]

C_LO = 0.5
C_HI = 2.0
_CHUNK = 1 << 16


@dataclass(frozen=True)
class KramersSetup:
    landscape: DoubleWellLandscape
    alpha: float
    sigma: float
    N: int
    T: int = 10_000
    replicates: int = 100
    hysteresis: float = 0.5
    start: float = -1.0

    def __post_init__(self):
        if not isinstance(self.landscape, DoubleWellLandscape):
            raise ParameterError("landscape must be a DoubleWellLandscape")
        if not self.alpha > 0:
            raise ParameterError("alpha must be positive")
        if self.sigma < 0:
            raise ParameterError("sigma must be nonnegative")
        for name in ("N", "replicates"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ParameterError(f"{name} must be a positive integer, got {v!r}")
        if int(self.T) != self.T or self.T < 1:
            raise ParameterError(f"T must be a positive integer, got {self.T!r}")
        if not 0 < self.hysteresis < 1:
            raise ParameterError("hysteresis must lie in (0, 1)")
        if self.start not in (-1.0, 1.0):
            raise ParameterError("start must be -1 (left well) or +1 (right well)")

    @classmethod
    def from_ratio(cls, lam_dw, a, alpha, ratio, N=1, **kw):
        """Setup whose barrier-to-noise ratio dL/eps equals ``ratio``."""
        land = DoubleWellLandscape(lam_dw, a)
        eps = land.barrier / ratio
        return cls(land, alpha, math.sqrt(2.0 * N * eps / alpha), N, **kw)

    @property
    def eps(self) -> float:
        return self.alpha * self.sigma**2 / (2.0 * self.N)

    @property
    def ratio(self) -> float:
        return self.landscape.barrier / self.eps if self.eps > 0 else math.inf

    @property
    def step_noise(self) -> float:
        """Standard deviation of alpha xi per step."""
        return self.alpha * self.sigma / math.sqrt(self.N)


@dataclass(frozen=True)
class KramersPrediction:
    expected_iters: float
    prefactor: float
    exponent: float
    valid: bool


def kramers_escape_iters(setup: KramersSetup) -> KramersPrediction:
    """Eyring-Kramers mean escape time in iterations.

    ``valid`` is False when dL/eps <= 1, where the asymptotic law no longer
    applies (the prediction then collapses toward the bare prefactor).
    """
    if not setup.eps > 0:
        raise ParameterError("eps must be positive (sigma > 0)")
    land = setup.landscape
    pref = 2.0 * math.pi / (setup.alpha * math.sqrt(land.curvature_min * abs(land.curvature_saddle)))
    expo = setup.ratio
    with np.errstate(over="ignore"):
        e = pref * math.exp(expo) if expo < 700 else math.inf
    return KramersPrediction(e, pref, expo, expo > 1.0)


def hop_probability(setup: KramersSetup, T=None):
    """``(1 - exp(-T/E[K]), T/E[K])``: the exponential law and its small-T form."""
    T = setup.T if T is None else T
    EK = kramers_escape_iters(setup).expected_iters
    lin = T / EK
    return -math.expm1(-lin), lin


def classify_regime(setup: KramersSetup, T=None) -> str:
    """metastable / hopping / delocalized from dL/eps against ln T.

    Between 1 and ``C_LO ln T`` the predicted hop probability decides: inside
    (0.01, 0.99) it is hopping, above it the walk mixes across wells within the
    horizon (delocalized), below it the run is effectively trapped.
    """
    T = setup.T if T is None else T
    if T < 1:
        raise ParameterError("T must be >= 1")
    r = setup.ratio
    lnT = math.log(T) if T > 1 else 0.0
    if r <= 1.0:
        return "delocalized"
    if r > C_HI * lnT:
        return "metastable"
    if r >= C_LO * lnT:
        return "hopping"
    p = hop_probability(setup, T)[0]
    if p >= 0.99:
        return "delocalized"
    if p <= 0.01:
        return "metastable"
    return "hopping"


@njit(cache=True, nogil=True)
def _advance(x, side, hops, first, t0, xi, alpha, lam, a2, thr, stop_first, rec, rec_every):
    """Advance one replicate through a block of noise; returns the updated state.

    ``status`` is -1 on success, the failing iteration on non-finite state,
    or -2 when stopping at the first hop.
    """
    n = xi.shape[0]
    for k in range(n):
        t = t0 + k
        if rec_every > 0 and t % rec_every == 0:
            idx = t // rec_every
            if idx < rec.shape[0]:
                rec[idx] = x
        x = x - alpha * lam * x * (x * x - a2) + xi[k]
        if not math.isfinite(x):
            return x, side, hops, first, t + 1
        if side < 0 and x > thr:
            side = 1
            hops += 1
            if first < 0:
                first = t + 1
            if stop_first:
                return x, side, hops, first, -2
        elif side > 0 and x < -thr:
            side = -1
            hops += 1
            if first < 0:
                first = t + 1
            if stop_first:
                return x, side, hops, first, -2
    return x, side, hops, first, -1


def _run_replicate(setup: KramersSetup, key: StreamKey, horizon, stop_first, rec_every=0):
    land = setup.landscape
    rng = derive_stream(key)
    a = land.a
    x = setup.start * a
    side = -1 if setup.start < 0 else 1
    hops, first, t = 0, -1, 0
    n_rec = horizon // rec_every + 1 if rec_every else 0
    rec = np.full(n_rec, np.nan)
    scale = setup.step_noise
    while t < horizon:
        k = min(_CHUNK, horizon - t)
        xi = scale * rng.standard_normal(k)
        x, side, hops, first, status = _advance(x, side, hops, first, t, xi, setup.alpha, land.lam_dw, a * a,
                                                setup.hysteresis * a, stop_first, rec, rec_every)
        if status >= 0:
            raise NumericError("non-finite double-well state", iteration=int(status))
        if status == -2:
            t = first
            break
        t += k
    if rec_every and t == horizon and horizon % rec_every == 0:
        rec[horizon // rec_every] = x
    return float(x), int(hops), int(first), int(t), rec


@dataclass
class HopRecord:
    first_hop: np.ndarray
    hop_count: np.ndarray
    final_x: np.ndarray
    horizon: int

    @property
    def hopped(self):
        return self.first_hop >= 0

    @property
    def hop_fraction(self) -> float:
        return float(self.hopped.mean())

    @property
    def mfpt(self) -> float:
        h = self.first_hop[self.hopped]
        return float(h.mean()) if h.size else math.nan

    @property
    def mfpt_se(self) -> float:
        h = self.first_hop[self.hopped]
        return float(h.std(ddof=1) / math.sqrt(h.size)) if h.size > 1 else math.nan

    @property
    def censored(self) -> int:
        return int((~self.hopped).sum())

    def summary(self):
        return {"replicates": int(self.first_hop.size), "hop_fraction": self.hop_fraction, "mfpt": self.mfpt,
                "mfpt_se": self.mfpt_se, "censored": self.censored, "horizon": self.horizon,
                "mean_hop_count": float(self.hop_count.mean())}


@dataclass
class DoubleWellRun:
    record: HopRecord
    trajectories: np.ndarray
    traj_iters: np.ndarray
    hist_counts: np.ndarray
    hist_edges: np.ndarray

    @property
    def imbalance(self) -> float:
        """(right - left) / total over final coordinates, split at the saddle."""
        x = self.record.final_x
        return float(((x > 0).sum() - (x < 0).sum()) / x.size)


def _map(fn, items, workers):
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def simulate_double_well(setup: KramersSetup, stream: StreamKey, record_replicates=4, record_every=None,
                         bins=40, workers=1) -> DoubleWellRun:
    """Full-horizon runs of every replicate from the ``start`` well.

    Replicate r uses ``stream / ("rep", r)``.  The first ``record_replicates``
    trajectories are sampled every ``record_every`` iterations (default
    T/1000).  The histogram of final coordinates spans [-2a, 2a].
    """
    T = int(setup.T)
    if record_every is None:
        record_every = max(1, T // 1000)
    keys = [stream.child("rep", r) for r in range(setup.replicates)]

    def one(r):
        rec_every = record_every if r < record_replicates else 0
        return _run_replicate(setup, keys[r], T, False, rec_every)

    out = _map(one, range(setup.replicates), workers)
    final = np.array([o[0] for o in out])
    rec = HopRecord(np.array([o[2] for o in out]), np.array([o[1] for o in out]), final, T)
    n_rec = min(record_replicates, setup.replicates)
    trajs = np.array([out[r][4] for r in range(n_rec)]) if n_rec else np.zeros((0, 0))
    iters = np.arange(trajs.shape[1]) * record_every if n_rec else np.zeros(0, dtype=int)
    a = setup.landscape.a
    counts, edges = np.histogram(np.clip(final, -2 * a, 2 * a), bins=bins, range=(-2 * a, 2 * a))
    return DoubleWellRun(rec, trajs, iters, counts, edges)


def first_passage_times(setup: KramersSetup, stream: StreamKey, max_iters=None, workers=1) -> HopRecord:
    """Iterations until the first hop, each replicate stopped at its hop.

    Replicates still trapped after ``max_iters`` (default ``setup.T``) are
    censored (``first_hop == -1``).
    """
    horizon = int(setup.T if max_iters is None else max_iters)
    keys = [stream.child("rep", r) for r in range(setup.replicates)]
    out = _map(lambda k: _run_replicate(setup, k, horizon, True), keys, workers)
    return HopRecord(np.array([o[2] for o in out]), np.array([o[1] for o in out]),
                     np.array([o[0] for o in out]), horizon)
