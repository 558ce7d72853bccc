"""Checkpointed local slope spectroscopy.

Short noisy-ascent probes started at a checkpoint ``theta*`` settle to a
plateau ``J_inf(N)`` whose gap to a low-noise reference is linear in the
effective noise ``kappa = sigma^2 / N`` with slope ``(alpha/4) d_eff``.
Probes are accepted only if they stay local (Euclidean distance to
``theta*`` within ``tau_loc``) and have settled (last two tail-window means
within ``tau_stat``).  The slope of an OLS fit of gap on kappa gives
``d_eff_hat = 4 S / alpha``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ParameterError
from .es import ESConfig, run_ensemble
from .stochastics import StreamKey

__all__ = [
    "CLSSConfig",
    "PlateauResult",
    "SlopeFit",
    "probe_plateau",
    "fit_slope",
    "clss_run",
    "integrated_autocorr_time",
    "default_tau_loc",
]


@dataclass(frozen=True)
class CLSSConfig:
    sigma: float
    alphas: tuple
    Ns: tuple
    T: int
    w: int
    R: int = 32
    tau_loc: float | None = None
    tau_stat: float | None = None
    R_min: int = 8
    fit_count: int = 4
    r2_min: float = 0.9
    accept_min: float = 0.5
    loc_curvature: float | None = None
    estimator: str = "noisy_gradient"

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "Ns", tuple(int(n) for n in self.Ns))
        if self.sigma < 0:
            raise ParameterError("sigma must be nonnegative")
        if len(self.Ns) < 3:
            raise ParameterError("Ns needs at least 3 population sizes")
        if any(n < 1 for n in self.Ns) or len(set(self.Ns)) != len(self.Ns):
            raise ParameterError("Ns must be distinct positive integers")
        if any(not a > 0 for a in self.alphas):
            raise ParameterError("step sizes must be positive")
        for name in ("T", "w", "R", "R_min"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ParameterError(f"{name} must be a positive integer, got {v!r}")
        if 2 * self.w > self.T:
            raise ParameterError(f"need 2w <= T, got w={self.w}, T={self.T}")
        if self.R_min > self.R:
            raise ParameterError("R_min must not exceed R")
        if self.fit_count < 3:
            raise ParameterError("fit_count must be >= 3 (reference plus two points)")
        if self.tau_loc is not None and self.tau_loc < 0:
            raise ParameterError("tau_loc must be nonnegative")
        if self.tau_stat is not None and self.tau_stat < 0:
            raise ParameterError("tau_stat must be nonnegative")

    def as_dict(self):
        d = asdict(self)
        d["alphas"], d["Ns"] = list(self.alphas), list(self.Ns)
        return d


def integrated_autocorr_time(x, c=5.0) -> float:
    """Integrated autocorrelation time with Sokal's self-consistent window."""
    x = np.asarray(x, dtype=float)
    n = x.size
    y = x - x.mean()
    var = y @ y / n
    if n < 4 or var == 0:
        return 1.0
    f = np.fft.rfft(y, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n] / (n * var)
    tau = 1.0
    for M in range(1, n):
        tau += 2.0 * acf[M]
        if M >= c * tau:
            break
    return max(tau, 1.0)


def default_tau_loc(objective, alpha, sigma, N, loc_curvature=None):
    """``5 sqrt(D v)`` with v the isotropic stationary variance at the reference curvature."""
    lam = loc_curvature if loc_curvature is not None else objective.curvature_scale
    if lam is None or not lam > 0:
        raise ParameterError("no curvature scale for the default locality threshold; set tau_loc or loc_curvature")
    if alpha * lam >= 2:
        raise ParameterError("alpha * curvature >= 2: no stationary scale")
    v = alpha * sigma**2 / (N * lam * (2.0 - alpha * lam))
    return 5.0 * math.sqrt(objective.dimension * v)


@dataclass
class PlateauResult:
    value: float | None
    se: float
    N: int
    alpha: float
    tau_loc: float
    n_valid: int
    acceptance: float
    seeds: list = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return self.value is not None


def _deterministic_rewards(objective, theta, alpha, T):
    rewards = np.empty(T + 1)
    dist = 0.0
    th = theta.copy()
    for t in range(T + 1):
        rewards[t] = objective.value(th)
        dist = max(dist, float(np.linalg.norm(th - theta)))
        if t < T:
            th = th + alpha * objective.gradient(th)
    return rewards, dist


def probe_plateau(objective, theta_star, alpha, sigma, N, cfg: CLSSConfig, stream: StreamKey) -> PlateauResult:
    """R probes of T steps from ``theta_star``; plateau = mean of accepted last-window means."""
    theta_star = objective._check(theta_star)
    T, w, R = cfg.T, cfg.w, cfg.R
    if cfg.tau_loc is not None:
        tau_loc = float(cfg.tau_loc)
    elif sigma == 0:
        tau_loc = 0.0
    else:
        tau_loc = default_tau_loc(objective, alpha, sigma, N, cfg.loc_curvature)

    if sigma == 0:
        r, d = _deterministic_rewards(objective, theta_star, alpha, T)
        rewards, max_dist = np.tile(r, (R, 1)), np.full(R, d)
    else:
        es_cfg = ESConfig(alpha, sigma, N, T, estimator=cfg.estimator, record_every=max(T, 1))
        keys = [stream.child("seed", r) for r in range(R)]
        ens = run_ensemble(objective, theta_star, es_cfg, keys, center=theta_star)
        rewards, max_dist = ens.rewards, ens.max_dist

    seeds = []
    J1s = []
    for r in range(R):
        last = rewards[r, T - w + 1:]
        prev = rewards[r, T - 2 * w + 1:T - w + 1]
        J1, J0 = float(last.mean()), float(prev.mean())
        if cfg.tau_stat is not None:
            tstat = float(cfg.tau_stat)
        else:
            tint = integrated_autocorr_time(last)
            tstat = 2.0 * math.sqrt(float(last.var(ddof=1)) * tint / w)
        loc_ok = bool(max_dist[r] <= tau_loc)
        stat_ok = bool(abs(J1 - J0) <= tstat)
        seeds.append({"seed": r, "max_dist": float(max_dist[r]), "tau_loc": tau_loc, "J1": J1, "J0": J0,
                      "tau_stat": tstat, "loc_ok": loc_ok, "stat_ok": stat_ok, "valid": loc_ok and stat_ok})
        if loc_ok and stat_ok:
            J1s.append(J1)
    n_valid = len(J1s)
    acc = n_valid / R
    if n_valid < cfg.R_min:
        return PlateauResult(None, math.nan, int(N), float(alpha), tau_loc, n_valid, acc, seeds)
    J1s = np.array(J1s)
    se = float(J1s.std(ddof=1) / math.sqrt(n_valid)) if n_valid > 1 else math.nan
    return PlateauResult(float(J1s.mean()), se, int(N), float(alpha), tau_loc, n_valid, acc, seeds)


@dataclass
class SlopeFit:
    status: str
    reason: str
    alpha: float
    slope: float = math.nan
    intercept: float = math.nan
    r2: float = math.nan
    residuals: list = field(default_factory=list)
    points: list = field(default_factory=list)
    N_used: list = field(default_factory=list)
    N_ref: int | None = None
    d_eff_raw: float = math.nan
    acceptance: dict = field(default_factory=dict)
    suspicious: bool = False
    plateaus: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status == "PASS"

    @property
    def d_eff_hat(self):
        """Reported only when the fit passed its gates."""
        return self.d_eff_raw if self.passed else None

    def as_dict(self):
        d = asdict(self)
        d["d_eff_hat"] = self.d_eff_hat
        return d


def fit_slope(points, sigma, alpha, cfg: CLSSConfig | None = None, acceptance=None, fit_count=None,
              r2_min=None, accept_min=None) -> SlopeFit:
    """OLS of gap g(N) = J(N_ref) - J(N) on kappa = sigma^2/N over the largest valid N.

    ``points`` is a list of ``(N, plateau)`` with ``None`` marking invalid
    plateaus.  The reference is the largest valid N; it enters the fit with
    gap zero.
    """
    fit_count = fit_count or (cfg.fit_count if cfg else 4)
    r2_min = r2_min if r2_min is not None else (cfg.r2_min if cfg else 0.9)
    accept_min = accept_min if accept_min is not None else (cfg.accept_min if cfg else 0.5)
    acceptance = dict(acceptance or {})
    plateaus = {int(n): (None if j is None else float(j)) for n, j in points}
    valid = sorted((n, j) for n, j in plateaus.items() if j is not None)
    if len(valid) < 3:
        return SlopeFit("FAIL", f"only {len(valid)} valid plateaus; need a reference plus two", float(alpha),
                        acceptance=acceptance, plateaus=plateaus)
    used = valid[-fit_count:]
    N_ref, J_ref = used[-1]
    kappa = np.array([sigma**2 / n for n, _ in used])
    gap = np.array([J_ref - j for _, j in used])
    A = np.stack([kappa, np.ones_like(kappa)], axis=1)
    (slope, intercept), *_ = np.linalg.lstsq(A, gap, rcond=None)
    resid = gap - (slope * kappa + intercept)
    ss_res = math.fsum(resid * resid)
    ss_tot = math.fsum((gap - gap.mean()) ** 2)
    if ss_tot > 0:
        r2 = 1.0 - ss_res / ss_tot
    else:
        r2 = 1.0 if ss_res <= 1e-30 else 0.0
    d_raw = 4.0 * slope / alpha
    suspicious = bool(not slope > 0 or ss_tot == 0)
    fit = SlopeFit("PASS", "", float(alpha), float(slope), float(intercept), float(r2), resid.tolist(),
                   [(float(k), float(g)) for k, g in zip(kappa, gap)], [n for n, _ in used], int(N_ref),
                   float(d_raw), acceptance, suspicious, plateaus)
    reasons = []
    if r2 < r2_min:
        reasons.append(f"fit R^2 {r2:.4f} < {r2_min}")
    low = {n: a for n, a in acceptance.items() if a < accept_min}
    if low:
        reasons.append(f"acceptance below {accept_min} at N={sorted(low)}")
    if reasons:
        fit.status, fit.reason = "FAIL", "; ".join(reasons)
    return fit


def clss_run(objective, theta_star, cfg: CLSSConfig, stream: StreamKey) -> dict:
    """Probe every (alpha, N), fit each alpha, and apply the acceptance gate.

    Returns ``{alpha: (SlopeFit, [PlateauResult, ...])}``; FAIL is a status,
    never an exception.
    """
    out = {}
    for i, alpha in enumerate(cfg.alphas):
        probes = []
        for N in cfg.Ns:
            probes.append(probe_plateau(objective, theta_star, alpha, cfg.sigma, N, cfg,
                                        stream.child("alpha", i).child("N", N)))
        acc = {p.N: p.acceptance for p in probes}
        fit = fit_slope([(p.N, p.value) for p in probes], cfg.sigma, alpha, cfg, acceptance=acc)
        out[alpha] = (fit, probes)
    return out
