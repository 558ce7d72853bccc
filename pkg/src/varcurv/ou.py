"""Closed-form OU / AR(1) theory of noisy ascent on a concave quadratic.

In the eigenbasis of the curvature each mode evolves independently,

    x_{i,t+1} = a_i x_{i,t} + b xi,   a_i = 1 - alpha lam_i,   b = alpha sigma / sqrt(N),

so means and variances follow exact recursions and the expected reward is a
mixture of exponentials ``E[J_t] = J_inf + sum_i A_i exp(-gamma_i t)``.

Modes with identical ``(lam, x0, v0)`` share every formula, so they are
collapsed into groups with multiplicities; this keeps the cost independent
of D for block spectra and lets sums run in compensated arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import ParameterError, StabilityError
from .landscape import Spectrum

__all__ = [
    "StabilityReport",
    "OUPrediction",
    "stability_report",
    "ou_trajectory",
    "terminal_plateau",
    "amplitudes",
    "peak_time_two_mode",
    "peak_time_general",
    "interior_maxima",
    "effective_dimension",
    "plateau_slope_curve",
    "stationary_variance",
]


def _as_spectrum(spectrum) -> np.ndarray:
    if isinstance(spectrum, Spectrum):
        return spectrum.values
    lam = np.asarray(spectrum, dtype=float).ravel()
    if lam.size and np.any(lam < 0):
        raise ParameterError("negative curvature is outside the quadratic OU model")
    return lam


def _check_noise(alpha, sigma, N):
    if not alpha > 0:
        raise ParameterError(f"alpha must be positive, got {alpha}")
    if sigma < 0:
        raise ParameterError(f"sigma must be nonnegative, got {sigma}")
    if int(N) != N or N < 1:
        raise ParameterError(f"N must be a positive integer, got {N!r}")


@dataclass(frozen=True)
class StabilityReport:
    stable: bool
    max_abs_a: float
    offending: tuple

    def __str__(self):
        state = "stable" if self.stable else f"unstable modes {list(self.offending)[:10]}"
        return f"{state}; max |1 - alpha*lam| over positive modes = {self.max_abs_a:.6g}"


def stability_report(spectrum, alpha) -> StabilityReport:
    """Stable iff every positive mode has |1 - alpha lam| < 1, i.e. alpha < 2/lam_max."""
    lam = _as_spectrum(spectrum)
    pos = lam > 0
    a = np.abs(1.0 - alpha * lam[pos])
    bad = np.flatnonzero(pos)[a >= 1.0]
    return StabilityReport(bool(bad.size == 0), float(a.max()) if a.size else 0.0, tuple(int(i) for i in bad))


def _require_stable(spectrum, alpha):
    rep = stability_report(spectrum, alpha)
    if not rep.stable:
        raise StabilityError(f"alpha={alpha} is unstable: {rep}", rep)
    return rep


def stationary_variance(lam, alpha, sigma, N):
    """v_inf = alpha sigma^2 / (N lam (2 - alpha lam)); inf for null modes."""
    lam = np.asarray(lam, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(lam > 0, alpha * sigma**2 / (N * lam * (2.0 - alpha * lam)), np.inf)


def _group(lam, x0, v0):
    key = np.stack([lam, x0, v0], axis=1)
    uniq, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    return uniq[:, 0], uniq[:, 1], uniq[:, 2], counts, inverse.ravel()


def _weighted_fsum(rows, weights):
    """Compensated sum of ``rows @ weights`` for each row of a 2-D array."""
    rows = np.atleast_2d(rows) * weights
    return np.array([math.fsum(r) for r in rows])


@dataclass
class OUPrediction:
    """Analytic prediction on the time grid t = 0..T.

    Per-mode quantities are stored per group of identical modes; ``inverse``
    maps each original mode to its group and ``counts`` gives multiplicities.
    """

    lam: np.ndarray
    counts: np.ndarray
    inverse: np.ndarray
    a: np.ndarray
    gamma: np.ndarray
    A: np.ndarray
    v_inf: np.ndarray
    mu: np.ndarray
    var: np.ndarray
    expected_reward: np.ndarray
    J_inf: float
    peak: float
    stability: StabilityReport
    params: dict

    @property
    def T(self) -> int:
        return self.expected_reward.size - 1

    @property
    def times(self):
        return np.arange(self.T + 1)

    def mode_mean(self, i):
        return self.mu[:, self.inverse[i]]

    def mode_variance(self, i):
        return self.var[:, self.inverse[i]]

    def mixture(self, t):
        """E[J] rebuilt from the exponential-mixture representation."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        terms = self.A[None, :] * np.exp(-self.gamma[None, :] * t[:, None])
        return self.J_inf + _weighted_fsum(terms, self.counts)

    def mixture_slope(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        terms = -self.gamma * self.A * np.exp(-self.gamma[None, :] * t[:, None])
        return _weighted_fsum(terms, self.counts)

    @property
    def mixed_signs(self) -> bool:
        nz = self.A[self.A != 0]
        return bool(np.any(nz > 0) and np.any(nz < 0))


def ou_trajectory(spectrum, x0, alpha, sigma, N, T, v0=None, peak=1.0) -> OUPrediction:
    """Exact mean/variance recursions and the expected-reward curve.

    ``x0`` is the initial point in the eigenbasis; ``v0`` an optional initial
    per-mode variance (deterministic start by default).  Unstable step sizes
    are not an error here: the returned prediction carries ``stability`` and
    its curve diverges.
    """
    lam = _as_spectrum(spectrum)
    _check_noise(alpha, sigma, N)
    D = lam.size
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (D,)) if np.ndim(x0) == 0 else np.asarray(x0, dtype=float)
    if x0.shape != (D,):
        raise ParameterError(f"x0 must have length {D}")
    v0 = np.zeros(D) if v0 is None else np.broadcast_to(np.asarray(v0, dtype=float), (D,))
    if np.any(v0 < 0):
        raise ParameterError("initial variances must be nonnegative")
    if int(T) != T or T < 0:
        raise ParameterError(f"T must be a nonnegative integer, got {T!r}")
    rep = stability_report(lam, alpha)

    g_lam, g_x0, g_v0, counts, inverse = _group(lam, x0, v0)
    g_x2 = g_x0 * g_x0
    a = 1.0 - alpha * g_lam
    b2 = alpha**2 * sigma**2 / N
    t = np.arange(int(T) + 1, dtype=float)[:, None]
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        a2t = (a * a)[None, :] ** t
        mu = g_x0[None, :] * a[None, :] ** t
        one_minus = 1.0 - a * a
        noise = np.where(np.abs(one_minus) > 0, b2 * (1.0 - a2t) / np.where(one_minus == 0, 1.0, one_minus),
                         b2 * t)
        var = a2t * g_v0 + noise
        v_inf = stationary_variance(g_lam, alpha, sigma, N)
        gamma = np.where(g_lam > 0, -2.0 * np.log(np.abs(a)), 0.0)
        A = _clean_amplitudes(g_lam, g_x2 + g_v0, np.where(g_lam > 0, v_inf, 0.0))
        loss = g_lam * (mu * mu + var)
        loss = np.where(g_lam > 0, loss, 0.0)
        ej = peak - 0.5 * _weighted_fsum(loss, counts)
    J_inf = peak - (_plateau_gap(g_lam, counts, alpha, sigma, N) if rep.stable else np.nan)

    return OUPrediction(g_lam, counts, inverse, a, gamma, A, v_inf, mu, var, ej, float(J_inf), float(peak), rep,
                        {"alpha": alpha, "sigma": sigma, "N": N, "T": int(T)})


def _plateau_gap(lam, counts, alpha, sigma, N):
    pos = lam > 0
    terms = counts[pos] / (2.0 - alpha * lam[pos])
    return alpha * sigma**2 / (2.0 * N) * math.fsum(terms)


def _counts(lam):
    vals, counts = np.unique(lam, return_counts=True)
    return vals, counts


def terminal_plateau(spectrum, alpha, sigma, N) -> float:
    """J_inf with 1 - J_inf = (alpha sigma^2 / 2N) sum_{lam>0} 1/(2 - alpha lam).

    Null modes do not enter the sum; they random-walk without a stationary
    state but carry no reward.
    """
    lam = _as_spectrum(spectrum)
    _check_noise(alpha, sigma, N)
    _require_stable(lam, alpha)
    vals, counts = _counts(lam)
    return 1.0 - _plateau_gap(vals, counts, alpha, sigma, N)


def amplitudes(spectrum, x0, alpha, sigma, N, v0=None):
    """Per-mode amplitudes ``A_i`` and rates ``gamma_i``.

    Returns ``(A, gamma, mixed_signs)`` with arrays in the original mode order.
    """
    lam = _as_spectrum(spectrum)
    _check_noise(alpha, sigma, N)
    _require_stable(lam, alpha)
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), lam.shape)
    v0 = np.zeros_like(lam) if v0 is None else np.broadcast_to(np.asarray(v0, dtype=float), lam.shape)
    pos = lam > 0
    v_inf = np.where(pos, stationary_variance(lam, alpha, sigma, N), 0.0)
    A = _clean_amplitudes(lam, x0 * x0 + v0, v_inf)
    with np.errstate(divide="ignore"):
        gamma = np.where(pos, -2.0 * np.log(np.abs(1.0 - alpha * lam)), 0.0)
    nz = A[A != 0]
    mixed = bool(np.any(nz > 0) and np.any(nz < 0))
    return A, gamma, mixed


def _clean_amplitudes(lam, second_moment, v_inf):
    """A = -lam (m0 - v_inf) / 2 on positive modes, with rounding-level values set to 0.

    An equilibrium start should give A = 0 exactly; without the cut, residues
    of order 1e-19 would register as mixed signs.
    """
    with np.errstate(invalid="ignore"):
        A = np.where(lam > 0, -0.5 * lam * (second_moment - v_inf), 0.0)
        scale = 0.5 * lam * (second_moment + v_inf)
    return np.where(np.abs(A) <= 1e-12 * scale, 0.0, A)


def _rate(lam, alpha):
    return -2.0 * math.log(abs(1.0 - alpha * lam))


def peak_time_two_mode(lam_hi, lam_lo, A_hi, A_lo, alpha):
    """Interior maximum of ``A_hi e^{-g_hi t} + A_lo e^{-g_lo t}``, or None."""
    if not lam_hi > lam_lo > 0:
        raise ParameterError("need lam_hi > lam_lo > 0")
    if not (A_hi < 0 < A_lo):
        return None
    g_hi, g_lo = _rate(lam_hi, alpha), _rate(lam_lo, alpha)
    if g_hi <= g_lo:
        return None
    ratio = g_hi * abs(A_hi) / (g_lo * A_lo)
    if ratio <= 1.0:
        return None
    return math.log(ratio) / (g_hi - g_lo)


def _default_search(pred: OUPrediction):
    g = pred.gamma[(pred.gamma > 0) & (pred.A != 0)]
    return 10.0 / g.min() if g.size else None


def interior_maxima(pred: OUPrediction, T_search=None, grid=20000):
    """All interior maxima of E[J_t] on (0, T_search], ascending.

    The slope of the mixture is scanned on a uniform grid; each + to - sign
    change is refined by Brent bisection on the slope.
    """
    if T_search is None:
        T_search = _default_search(pred)
    if not T_search:
        return []
    ts = np.linspace(0.0, float(T_search), int(grid) + 1)
    s = pred.mixture_slope(ts)
    out = []
    f = lambda x: float(pred.mixture_slope(x)[0])
    for k in range(len(ts) - 1):
        if s[k] > 0 and s[k + 1] <= 0:
            if s[k + 1] == 0:
                root = ts[k + 1]
            else:
                root = brentq(f, ts[k], ts[k + 1], xtol=1e-12, rtol=1e-14)
            if root > 0:
                out.append(float(root))
    return out


def peak_time_general(pred: OUPrediction, T_search=None, grid=20000):
    """Earliest interior maximum of the expected reward, or None.

    Use :func:`interior_maxima` to see every maximum when the mixture has
    several sign changes.
    """
    if not pred.mixed_signs:
        return None
    peaks = interior_maxima(pred, T_search, grid)
    return peaks[0] if peaks else None


def effective_dimension(spectrum, alpha) -> float:
    """d_eff(alpha) = 2 sum_{lam>0} 1/(2 - alpha lam)."""
    lam = _as_spectrum(spectrum)
    if not alpha > 0:
        raise ParameterError("alpha must be positive")
    _require_stable(lam, alpha)
    vals, counts = _counts(lam)
    pos = vals > 0
    return 2.0 * math.fsum(counts[pos] / (2.0 - alpha * vals[pos]))


def plateau_slope_curve(spectrum, alpha, sigma, N_list):
    """Points ``(kappa, 1 - J_inf)`` for each N, with kappa = sigma^2 / N."""
    out = []
    for N in N_list:
        out.append((sigma**2 / N, 1.0 - terminal_plateau(spectrum, alpha, sigma, N)))
    return out
