"""Matrix-free stochastic Lanczos quadrature and spectral summary metrics.

For a probe ``z`` with ``q1 = z/|z|``, m Lanczos steps give a tridiagonal
``T`` whose eigenpairs ``(theta_k, V)`` define Gaussian quadrature nodes and
weights ``w_k = V[0, k]^2``; then ``z^T f(A) z ~= |z|^2 sum_k w_k f(theta_k)``
and averaging over probes estimates ``tr f(A)``.

Spectral metrics are read off the pooled node/weight cloud, treated as a
discrete density over eigenvalues (weights normalized to sum to one):

* ``lambda_min``: most negative pooled node (signed).
* negative mass: total pooled weight on nodes below zero.
* participation ratio: with per-eigenvalue magnitude shares
  ``p_i = |lam_i| / sum_j |lam_j|``, ``PR = 1 / sum p_i^2``.  In density form
  this is ``D (sum w|theta|)^2 / sum w theta^2``.
* effective rank: ``exp(-sum p_i ln p_i)`` with the same shares, i.e.
  ``exp(ln(D S) - sum w |theta| ln|theta| / S)`` with ``S = sum w |theta|``.

Both concentration measures lie in ``[1, D]`` and equal ``k`` for an
operator with ``k`` equal nonzero eigenvalues.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .errors import NumericError, ParameterError
from .stochastics import StreamKey, derive_stream

__all__ = [
    "MatVecOperator",
    "LanczosResult",
    "RitzQuadrature",
    "SpectralMetrics",
    "lanczos",
    "ritz_pairs",
    "slq_quadrature",
    "slq_trace",
    "spectral_metrics",
    "density_metrics",
    "hvp_from_objective",
]

BREAKDOWN_TOL = 1e-12


class MatVecOperator:
    """Symmetric linear map accessed only through ``apply``."""

    def __init__(self, apply: Callable, dimension: int, name: str = "operator"):
        if int(dimension) != dimension or dimension < 1:
            raise ParameterError(f"dimension must be a positive integer, got {dimension!r}")
        self._apply = apply
        self.dimension = int(dimension)
        self.name = name

    @classmethod
    def from_matrix(cls, A, name="dense"):
        A = np.asarray(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ParameterError(f"expected a square matrix, got shape {A.shape}")
        op = cls(lambda v: A @ v, A.shape[0], name)
        op.matrix = A
        return op

    def apply(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.dimension,):
            raise ParameterError(f"expected a vector of length {self.dimension}, got {v.shape}")
        out = np.asarray(self._apply(v), dtype=float)
        if out.shape != (self.dimension,):
            raise ParameterError(f"matvec returned shape {out.shape}")
        if not np.all(np.isfinite(out)):
            raise NumericError(f"non-finite matvec output from {self.name}")
        return out

    __matmul__ = apply

    def norm_estimate(self, rng, iters=20):
        v = rng.standard_normal(self.dimension)
        v /= np.linalg.norm(v)
        est = 0.0
        for _ in range(iters):
            w = self.apply(v)
            nw = np.linalg.norm(w)
            est = max(est, nw)
            if nw == 0:
                break
            v = w / nw
        return est

    def symmetry_defect(self, rng, trials=3):
        """Largest ``|u.Av - v.Au| / (|u||v||A|_est)`` over random pairs."""
        scale = self.norm_estimate(rng)
        if scale == 0:
            return 0.0
        worst = 0.0
        for _ in range(trials):
            u = rng.standard_normal(self.dimension)
            v = rng.standard_normal(self.dimension)
            d = abs(u @ self.apply(v) - v @ self.apply(u))
            worst = max(worst, d / (np.linalg.norm(u) * np.linalg.norm(v) * scale))
        return worst

    def check_symmetry(self, rng, tol=1e-8):
        d = self.symmetry_defect(rng)
        if d > tol:
            raise ParameterError(f"{self.name} fails the symmetry test (relative defect {d:.3g} > {tol})")
        return d


@dataclass
class LanczosResult:
    alpha: np.ndarray
    beta: np.ndarray
    steps: int
    breakdown: bool
    orthogonality_loss: float = 0.0

    @property
    def tridiagonal(self):
        k = self.steps
        return np.diag(self.alpha) + np.diag(self.beta, 1) + np.diag(self.beta, -1) if k else np.zeros((0, 0))


def lanczos(op: MatVecOperator, start, m: int, reorthogonalize=True) -> LanczosResult:
    """m-step Lanczos from ``start`` with full reorthogonalization.

    Stops early when an off-diagonal falls below ``BREAKDOWN_TOL`` times the
    running scale (an invariant subspace was found); ``breakdown`` is set and
    ``steps`` gives the reduced size.
    """
    D = op.dimension
    if int(m) != m or m < 1:
        raise ParameterError(f"m must be a positive integer, got {m!r}")
    if m > D:
        raise ParameterError(f"m={m} exceeds the dimension {D}")
    q = np.asarray(start, dtype=float)
    if q.shape != (D,):
        raise ParameterError(f"start vector must have length {D}")
    nq = np.linalg.norm(q)
    if not nq > 0 or not np.isfinite(nq):
        raise ParameterError("start vector must be finite and nonzero")
    Q = np.zeros((m, D))
    Q[0] = q / nq
    alpha = np.zeros(m)
    beta = np.zeros(max(m - 1, 0))
    scale = 0.0
    steps, broke = m, False
    for j in range(m):
        w = op.apply(Q[j])
        alpha[j] = Q[j] @ w
        w = w - alpha[j] * Q[j]
        if j > 0:
            w = w - beta[j - 1] * Q[j - 1]
        if reorthogonalize:
            # two passes of classical Gram-Schmidt against the whole basis
            for _ in range(2):
                w = w - Q[: j + 1].T @ (Q[: j + 1] @ w)
        scale = max(scale, abs(alpha[j]), beta[j - 1] if j > 0 else 0.0)
        if j == m - 1:
            break
        b = np.linalg.norm(w)
        if b < BREAKDOWN_TOL * max(scale, 1.0):
            steps, broke = j + 1, True
            break
        beta[j] = b
        Q[j + 1] = w / b
    G = Q[:steps] @ Q[:steps].T
    loss = float(np.abs(G - np.eye(steps)).max())
    return LanczosResult(alpha[:steps].copy(), beta[: steps - 1].copy(), steps, broke, loss)


def ritz_pairs(res: LanczosResult):
    """Nodes and quadrature weights of the Lanczos tridiagonal."""
    if res.steps == 1:
        return res.alpha.copy(), np.ones(1)
    theta, V = eigh_tridiagonal(res.alpha, res.beta)
    w = V[0] ** 2
    return theta, w / w.sum()


@dataclass
class RitzQuadrature:
    nodes: list
    weights: list
    znorm2: np.ndarray
    s: int
    m: int
    breakdowns: list = field(default_factory=list)
    probes: np.ndarray | None = None

    def tau(self, f):
        """Per-probe estimates ``|z_j|^2 sum_k w_jk f(theta_jk)``."""
        return np.array([z2 * math.fsum(w * f(t)) for t, w, z2 in zip(self.nodes, self.weights, self.znorm2)])

    def pooled(self):
        """Pooled (nodes, weights) with weights summing to one."""
        nodes = np.concatenate(self.nodes)
        total = math.fsum(self.znorm2)
        weights = np.concatenate([w * z2 / total for w, z2 in zip(self.weights, self.znorm2)])
        return nodes, weights


def _probe(rng, D, kind):
    if kind == "rademacher":
        return rng.integers(0, 2, size=D).astype(float) * 2.0 - 1.0
    if kind == "gaussian":
        return rng.standard_normal(D)
    raise ParameterError(f"probe kind must be 'rademacher' or 'gaussian', got {kind!r}")


def _probe_rngs(stream, s):
    if isinstance(stream, StreamKey):
        return [derive_stream(stream.child("probe", j)) for j in range(s)]
    return [stream] * s


def slq_quadrature(op: MatVecOperator, s: int, m: int, stream, probe="rademacher", check_symmetry=True,
                   keep_probes=False) -> RitzQuadrature:
    if int(s) != s or s < 1:
        raise ParameterError(f"s must be a positive integer, got {s!r}")
    if check_symmetry:
        key_rng = derive_stream(stream.child("symmetry")) if isinstance(stream, StreamKey) else stream
        op.check_symmetry(key_rng)
    nodes, weights, z2s, brk, zs = [], [], [], [], []
    for rng in _probe_rngs(stream, int(s)):
        z = _probe(rng, op.dimension, probe)
        res = lanczos(op, z, m)
        th, w = ritz_pairs(res)
        nodes.append(th)
        weights.append(w)
        z2s.append(float(z @ z))
        brk.append(res.steps if res.breakdown else None)
        if keep_probes:
            zs.append(z)
    return RitzQuadrature(nodes, weights, np.array(z2s), int(s), int(m), brk,
                          np.array(zs) if keep_probes else None)


def slq_trace(op: MatVecOperator, f: Callable, s: int, m: int, stream, probe="rademacher", return_quadrature=False):
    """Estimate ``tr f(A)``; returns ``(mean, standard_error)``.

    With ``return_quadrature`` the :class:`RitzQuadrature` (including the
    probe vectors) is appended to the tuple.
    """
    if int(s) != s or s < 2:
        raise ParameterError(f"s must be an integer >= 2, got {s!r}")
    quad = slq_quadrature(op, s, m, stream, probe, keep_probes=return_quadrature)
    tau = quad.tau(lambda x: np.asarray(f(x), dtype=float) * np.ones_like(x))
    est = math.fsum(tau) / s
    se = float(tau.std(ddof=1) / math.sqrt(s))
    if return_quadrature:
        return est, se, quad
    return est, se


def density_metrics(nodes, weights, D):
    """Metrics of a discrete spectral density (weights sum to one) over D eigenvalues."""
    nodes = np.asarray(nodes, dtype=float)
    weights = np.asarray(weights, dtype=float)
    weights = weights / math.fsum(weights)
    mag = np.abs(nodes)
    S = math.fsum(weights * mag)
    S2 = math.fsum(weights * mag * mag)
    neg = math.fsum(weights[nodes < 0])
    lam_min = float(nodes.min())
    if S2 > 0:
        pr = D * S * S / S2
        with np.errstate(divide="ignore", invalid="ignore"):
            xlogx = np.where(mag > 0, mag * np.log(np.where(mag > 0, mag, 1.0)), 0.0)
        er = math.exp(math.log(D * S) - math.fsum(weights * xlogx) / S)
        pr, er = min(max(pr, 1.0), D), min(max(er, 1.0), D)
    else:
        pr = er = float("nan")
    return {"lambda_min": lam_min, "negative_mass": min(max(neg, 0.0), 1.0),
            "participation_ratio": pr, "effective_rank": er}


@dataclass
class SpectralMetrics:
    lambda_min: float
    negative_mass: float
    participation_ratio: float
    effective_rank: float
    se: dict
    per_seed: list

    def as_dict(self):
        return {"lambda_min": self.lambda_min, "negative_mass": self.negative_mass,
                "participation_ratio": self.participation_ratio, "effective_rank": self.effective_rank,
                "se": self.se, "per_seed": self.per_seed}


def spectral_metrics(op: MatVecOperator, s: int, m: int, stream: StreamKey, seeds: int = 5,
                     probe="rademacher") -> SpectralMetrics:
    """Metrics from the pooled Ritz cloud, repeated over independent probe sets.

    Reported values are the mean over ``seeds`` with the standard error across
    seeds (zero when ``seeds == 1``).
    """
    if int(seeds) != seeds or seeds < 1:
        raise ParameterError("seeds must be a positive integer")
    if not isinstance(stream, StreamKey):
        raise ParameterError("spectral_metrics needs a StreamKey so each seed gets its own stream")
    per = []
    for r in range(int(seeds)):
        quad = slq_quadrature(op, s, m, stream.child("seed", r), probe, check_symmetry=(r == 0))
        per.append(density_metrics(*quad.pooled(), op.dimension))
    keys = ("lambda_min", "negative_mass", "participation_ratio", "effective_rank")
    mean, se = {}, {}
    for k in keys:
        vals = np.array([p[k] for p in per])
        mean[k] = float(vals.mean())
        se[k] = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return SpectralMetrics(mean["lambda_min"], mean["negative_mass"], mean["participation_ratio"],
                           mean["effective_rank"], se, per)


def hvp_from_objective(objective, theta, sigma_fd, es_config=None, stream=None) -> MatVecOperator:
    """Hessian-vector products of the reward by central differences of a gradient.

    With an analytic gradient: ``Av = (g(theta + h v) - g(theta - h v)) / 2h``.
    Otherwise ``es_config`` selects an ES gradient estimate; both sides use the
    same perturbations (common random numbers), the operator is materialized
    column by column and symmetrized, which is affordable at desk scale.
    """
    theta = objective._check(theta)
    h = float(sigma_fd)
    if not h > 0:
        raise ParameterError("sigma_fd must be positive")
    D = objective.dimension

    if es_config is None:
        if not objective.has_gradient:
            raise ParameterError("objective has no analytic gradient; pass es_config for an ES estimate")

        def apply(v):
            gp = objective.gradient(theta + h * v)
            gm = objective.gradient(theta - h * v)
            out = (gp - gm) / (2.0 * h)
            if not np.all(np.isfinite(out)):
                raise NumericError("non-finite gradient in finite-difference HVP")
            return out

        return MatVecOperator(apply, D, "fd-hvp")

    from .es import es_gradient_estimate

    if not isinstance(stream, StreamKey):
        raise ParameterError("the ES route needs a StreamKey for common random numbers")
    cols = np.empty((D, D))
    for i in range(D):
        e = np.zeros(D)
        e[i] = 1.0
        gp = es_gradient_estimate(objective, theta + h * e, es_config, stream)[0]
        gm = es_gradient_estimate(objective, theta - h * e, es_config, stream)[0]
        cols[:, i] = (gp - gm) / (2.0 * h)
    if not np.all(np.isfinite(cols)):
        raise NumericError("non-finite ES gradient in HVP")
    return MatVecOperator.from_matrix(0.5 * (cols + cols.T), "es-hvp")
