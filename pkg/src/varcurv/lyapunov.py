"""Stationary covariance of a linearized noisy ascent under anisotropic noise.

Near a maximizer the deviation follows ``x_{t+1} = (I - alpha H) x_t + alpha eta_t``
with ``Cov(eta) = Sigma``.  Both solvers diagonalize ``H = Q diag(lam) Q^T``
and work with ``S = Q^T Sigma Q``, where the equations decouple entrywise:

    discrete:    V~_ij = alpha^2 S_ij / (1 - a_i a_j),   a_i = 1 - alpha lam_i
    continuous:  V~_ij = alpha S_ij / (lam_i + lam_j)

Dense matrices only (D up to a few hundred).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, ParameterError, StabilityError

__all__ = [
    "LinearizedSystem",
    "solve_discrete_lyapunov",
    "solve_continuous_lyapunov",
    "stationary_gap",
    "iterate_covariance",
    "is_psd",
]

MAX_DIM = 512
_SYM_TOL = 1e-10


def _symmetrize(M, name):
    M = np.array(M, dtype=float, ndmin=2)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ParameterError(f"{name} must be a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ParameterError(f"{name} has non-finite entries")
    scale = max(1.0, np.abs(M).max())
    asym = np.abs(M - M.T).max()
    if asym > _SYM_TOL * scale:
        raise ParameterError(f"{name} is not symmetric (max asymmetry {asym:.3g})")
    return 0.5 * (M + M.T)


@dataclass
class LinearizedSystem:
    H: np.ndarray
    Sigma: np.ndarray
    alpha: float

    def __post_init__(self):
        self.H = _symmetrize(self.H, "H")
        self.Sigma = _symmetrize(self.Sigma, "Sigma")
        if self.H.shape != self.Sigma.shape:
            raise ParameterError(f"H {self.H.shape} and Sigma {self.Sigma.shape} differ in shape")
        if self.H.shape[0] > MAX_DIM:
            raise ParameterError(f"dense solvers are limited to D <= {MAX_DIM}")
        if not self.alpha > 0:
            raise ParameterError("alpha must be positive")
        self.alpha = float(self.alpha)
        self.lam, self.Q = np.linalg.eigh(self.H)
        tol = 1e-10 * max(1.0, np.abs(self.lam).max())
        if self.lam.min() < -tol:
            raise ParameterError(f"H must be positive semidefinite (min eigenvalue {self.lam.min():.3g})")
        self.lam = np.where(np.abs(self.lam) <= tol, 0.0, self.lam)

    @property
    def dimension(self):
        return self.H.shape[0]

    @property
    def contraction(self):
        return 1.0 - self.alpha * self.lam

    @property
    def spectral_radius(self) -> float:
        return float(np.abs(self.contraction).max())

    @property
    def null_modes(self):
        return np.flatnonzero(self.lam == 0.0)


def _rotated_noise(sys):
    return sys.Q.T @ sys.Sigma @ sys.Q


def _rotate_back(sys, Vt):
    V = sys.Q @ Vt @ sys.Q.T
    return 0.5 * (V + V.T)


def is_psd(V, tol=1e-12) -> bool:
    """Cholesky of ``V + tol*scale*I`` succeeds."""
    V = np.asarray(V, dtype=float)
    scale = max(1.0, np.abs(V).max())
    try:
        np.linalg.cholesky(V + tol * scale * np.eye(V.shape[0]))
    except np.linalg.LinAlgError:
        return False
    return True


def solve_discrete_lyapunov(sys: LinearizedSystem, rtol=1e-10) -> np.ndarray:
    """V with V = (I - alpha H) V (I - alpha H)^T + alpha^2 Sigma."""
    a = sys.contraction
    if np.any(np.abs(a) >= 1.0):
        bad = np.flatnonzero(np.abs(a) >= 1.0)
        raise StabilityError(f"spectral radius of I - alpha H is {sys.spectral_radius:.6g} >= 1 "
                             f"(modes {bad.tolist()[:10]})", {"spectral_radius": sys.spectral_radius,
                                                              "modes": bad.tolist()})
    S = _rotated_noise(sys)
    # 1 - a_i a_j expanded so small alpha*lam does not cancel
    al = sys.alpha * sys.lam
    denom = al[:, None] + al[None, :] - np.outer(al, al)
    Vt = sys.alpha**2 * S / denom
    V = _rotate_back(sys, Vt)
    M = np.eye(sys.dimension) - sys.alpha * sys.H
    rhs = sys.alpha**2 * sys.Sigma
    res = np.linalg.norm(V - M @ V @ M.T - rhs)
    # rounding in the residual scales with the larger of V and the forcing term
    if res > rtol * max(np.linalg.norm(rhs), np.linalg.norm(V), 1e-300) and res > 1e-300:
        raise ConvergenceError(f"discrete Lyapunov residual {res:.3g} exceeds tolerance")
    return V


def solve_continuous_lyapunov(sys: LinearizedSystem, rtol=1e-10) -> np.ndarray:
    """V with H V + V H^T = alpha Sigma; H must be positive definite."""
    null = sys.null_modes
    if null.size:
        raise StabilityError(f"H has {null.size} null mode(s) (eigen-indices {null.tolist()[:10]}); "
                             "no stationary covariance exists",
                             {"null_modes": null.tolist(), "null_vectors": sys.Q[:, null].T.tolist()})
    S = _rotated_noise(sys)
    Vt = sys.alpha * S / (sys.lam[:, None] + sys.lam[None, :])
    V = _rotate_back(sys, Vt)
    rhs = sys.alpha * sys.Sigma
    res = np.linalg.norm(sys.H @ V + V @ sys.H.T - rhs)
    if res > rtol * max(np.linalg.norm(rhs), np.linalg.norm(sys.H) * np.linalg.norm(V), 1e-300) and res > 1e-300:
        raise ConvergenceError(f"continuous Lyapunov residual {res:.3g} exceeds tolerance")
    return V


def stationary_gap(sys: LinearizedSystem, V) -> float:
    """Expected reward loss 1/2 tr(H V) around the maximizer.

    When H and Sigma commute the continuous solution gives exactly
    ``alpha tr(Sigma) / 4``: each eigen-direction contributes
    ``lam_i * alpha s_i / (2 lam_i) / 2``, independent of its curvature.
    """
    V = np.asarray(V, dtype=float)
    if V.shape != sys.H.shape:
        raise ParameterError("V and H differ in shape")
    return 0.5 * math.fsum((sys.H * V).ravel())


def iterate_covariance(sys: LinearizedSystem, steps=None, tol=1e-14, V0=None, max_steps=10**7):
    """Run ``V <- M V M^T + alpha^2 Sigma`` from V0 (zero by default).

    Stops after ``steps`` iterations, or once the remaining distance to the
    fixed point is below ``tol`` relative to ``max(|V|, 1)``.  The error
    contracts by ``rho^2`` per step, so the step difference times
    ``rho^2 / (1 - rho^2)`` bounds it.  Returns ``(V, iterations)``.
    """
    M = np.eye(sys.dimension) - sys.alpha * sys.H
    Q = sys.alpha**2 * sys.Sigma
    V = np.zeros_like(Q) if V0 is None else np.array(V0, dtype=float)
    r2 = sys.spectral_radius**2
    if steps is None and r2 >= 1.0:
        raise StabilityError(f"spectral radius {sys.spectral_radius:.6g} >= 1: the recursion does not settle")
    factor = r2 / (1.0 - r2) if r2 < 1.0 else math.inf
    n = 0
    while True:
        nxt = M @ V @ M.T + Q
        n += 1
        if steps is not None:
            done = n >= steps
        else:
            done = np.linalg.norm(nxt - V) * max(factor, 1.0) < tol * max(np.linalg.norm(nxt), 1.0)
        V = nxt
        if done:
            break
        if n >= max_steps:
            raise ConvergenceError(f"covariance recursion did not settle in {max_steps} steps")
    return 0.5 * (V + V.T), n
