"""Objective abstraction and the synthetic landscapes used throughout.

Rewards are maximized.  The quadratic family is

    J(theta) = peak - 1/2 (theta - theta*)^T Q diag(lam) Q^T (theta - theta*)

and the double-well is written in loss convention
``L(x) = lam_dw/4 (x^2 - a^2)^2`` on coordinate 0, with reward ``-L``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NumericError, ParameterError

__all__ = [
    "ObjectiveFunction",
    "CallableObjective",
    "Spectrum",
    "QuadraticLandscape",
    "TwoBlockSpec",
    "DoubleWellLandscape",
    "make_two_block",
    "evaluate_quadratic",
    "evaluate_double_well",
    "landscape_from_config",
    "expand_blocks",
]


class ObjectiveFunction:
    """Map from a D-vector to a scalar reward.

    Subclasses implement :meth:`value` (noiseless reward) and may override
    :meth:`values` for vectorized batches and :meth:`gradient` when an exact
    gradient is available.  Evaluation noise is additive Gaussian with
    standard deviation ``noise_scale``; averaging over a group of ``G``
    evaluations divides its variance by ``G``.  Objects hold no mutable
    state, so concurrent evaluation is safe as long as each caller passes
    its own generator.
    """

    dimension: int
    noise_scale: float = 0.0

    def value(self, theta):
        raise NotImplementedError

    def values(self, thetas):
        thetas = self._check_batch(thetas)
        return np.array([self.value(t) for t in thetas], dtype=float)

    def gradient(self, theta):
        raise NotImplementedError(f"{type(self).__name__} has no analytic gradient")

    @property
    def has_gradient(self) -> bool:
        return type(self).gradient is not ObjectiveFunction.gradient

    @property
    def curvature_scale(self):
        """Typical local curvature, used only as a default locality unit."""
        return None

    def evaluate(self, theta, rng=None, group_size=1):
        return float(self.evaluate_batch(np.asarray(theta, dtype=float)[None, :], rng, group_size)[0])

    def evaluate_batch(self, thetas, rng=None, group_size=1):
        thetas = self._check_batch(thetas)
        out = self.values(thetas)
        if self.noise_scale > 0:
            if rng is None:
                raise ParameterError("a random stream is required when noise_scale > 0")
            out = out + (self.noise_scale / np.sqrt(group_size)) * rng.standard_normal(out.shape[0])
        return out

    def describe(self) -> dict:
        return {"kind": type(self).__name__, "dimension": self.dimension, "noise_scale": self.noise_scale}

    def _check(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dimension,):
            raise ParameterError(f"expected a vector of length {self.dimension}, got shape {theta.shape}")
        return theta

    def _check_batch(self, thetas):
        thetas = np.asarray(thetas, dtype=float)
        if thetas.ndim != 2 or thetas.shape[1] != self.dimension:
            raise ParameterError(f"expected shape (K, {self.dimension}), got {thetas.shape}")
        return thetas


class CallableObjective(ObjectiveFunction):
    """Wrap a plain function ``fn(theta) -> float`` as a black-box objective."""

    def __init__(self, fn: Callable, dimension: int, noise_scale: float = 0.0, gradient: Callable | None = None):
        if int(dimension) != dimension or dimension < 1:
            raise ParameterError(f"dimension must be a positive integer, got {dimension!r}")
        if noise_scale < 0:
            raise ParameterError("noise_scale must be nonnegative")
        self.fn = fn
        self.dimension = int(dimension)
        self.noise_scale = float(noise_scale)
        self._grad = gradient

    def value(self, theta):
        return float(self.fn(self._check(theta)))

    def gradient(self, theta):
        if self._grad is None:
            raise NotImplementedError("no gradient supplied for this objective")
        return np.asarray(self._grad(self._check(theta)), dtype=float)

    @property
    def has_gradient(self):
        return self._grad is not None


class Spectrum:
    """Nonnegative curvature eigenvalues, stored in non-increasing order."""

    def __init__(self, eigenvalues):
        lam = np.asarray(eigenvalues, dtype=float).ravel()
        if lam.size == 0:
            raise ParameterError("spectrum must contain at least one eigenvalue")
        if not np.all(np.isfinite(lam)):
            raise ParameterError("spectrum contains non-finite entries")
        if np.any(lam < 0):
            raise ParameterError(
                "negative curvature is outside the quadratic model (strict saddles have no stationary state)"
            )
        self.values = np.sort(lam)[::-1].copy()
        self.values.setflags(write=False)

    def __len__(self):
        return self.values.size

    def __repr__(self):
        return f"Spectrum(D={len(self)}, rank={self.rank}, max={self.lam_max:g})"

    @property
    def rank(self) -> int:
        return int(np.count_nonzero(self.values > 0))

    @property
    def lam_max(self) -> float:
        return float(self.values[0])

    @property
    def positive(self) -> np.ndarray:
        return self.values[self.values > 0]


class QuadraticLandscape(ObjectiveFunction):
    def __init__(self, spectrum, basis=None, peak=1.0, offset=None, noise_scale=0.0):
        if not isinstance(spectrum, Spectrum):
            raw = np.asarray(spectrum, dtype=float)
            spectrum = Spectrum(raw)
            if basis is not None and not np.array_equal(spectrum.values, raw):
                raise ParameterError("with an explicit basis, eigenvalues must already be sorted descending")
        self.spectrum = spectrum
        self.dimension = len(spectrum)
        if basis is not None:
            basis = np.asarray(basis, dtype=float)
            if basis.shape != (self.dimension, self.dimension):
                raise ParameterError(f"basis must be {self.dimension}x{self.dimension}")
            if not np.allclose(basis.T @ basis, np.eye(self.dimension), atol=1e-10):
                raise ParameterError("basis must be orthogonal")
        self.basis = basis
        self.peak = float(peak)
        self.offset = np.zeros(self.dimension) if offset is None else self._check(offset).copy()
        if noise_scale < 0:
            raise ParameterError("noise_scale must be nonnegative")
        self.noise_scale = float(noise_scale)

    @classmethod
    def from_matrix(cls, C, **kw):
        C = np.asarray(C, dtype=float)
        if C.ndim != 2 or C.shape[0] != C.shape[1] or not np.allclose(C, C.T, atol=1e-10):
            raise ParameterError("curvature matrix must be square and symmetric")
        lam, Q = np.linalg.eigh(0.5 * (C + C.T))
        lam, Q = lam[::-1], Q[:, ::-1]
        lam[np.abs(lam) < 1e-14 * max(1.0, np.abs(lam).max())] = 0.0
        return cls(Spectrum(lam), basis=Q, **kw)

    def matrix(self):
        lam = self.spectrum.values
        if self.basis is None:
            return np.diag(lam)
        return (self.basis * lam) @ self.basis.T

    def to_eigenbasis(self, thetas):
        """Coordinates of ``theta - theta*`` in the curvature eigenbasis."""
        x = np.asarray(thetas, dtype=float) - self.offset
        return x if self.basis is None else x @ self.basis

    def from_eigenbasis(self, x):
        """Parameter vector ``theta* + Q x`` for eigenbasis coordinates ``x``."""
        x = np.asarray(x, dtype=float)
        return self.offset + (x if self.basis is None else x @ self.basis.T)

    def values(self, thetas):
        x = self.to_eigenbasis(self._check_batch(thetas))
        # elementwise reduction keeps results independent of BLAS threading
        return self.peak - 0.5 * (x * x * self.spectrum.values).sum(axis=1)

    def value(self, theta):
        return float(self.values(self._check(theta)[None, :])[0])

    def gradient(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape[-1] != self.dimension:
            raise ParameterError(f"expected trailing dimension {self.dimension}, got {theta.shape}")
        x = self.to_eigenbasis(theta)
        g = -x * self.spectrum.values
        return g if self.basis is None else g @ self.basis.T

    @property
    def curvature_scale(self):
        pos = self.spectrum.positive
        return float(pos.min()) if pos.size else None

    def describe(self):
        d = {"kind": "quadratic", "dimension": self.dimension, "peak": self.peak,
             "rank": self.spectrum.rank, "noise_scale": self.noise_scale}
        lam, counts = np.unique(self.spectrum.values, return_counts=True)
        d["spectrum_blocks"] = [[float(v), int(c)] for v, c in zip(lam[::-1], counts[::-1])]
        d["basis"] = "identity" if self.basis is None else "custom"
        return d


@dataclass(frozen=True)
class TwoBlockSpec:
    D: int
    d: int
    lam_hi: float
    lam_lo: float

    def validate(self):
        if int(self.D) != self.D or int(self.d) != self.d:
            raise ParameterError("D and d must be integers")
        if not 1 <= self.d <= self.D:
            raise ParameterError(f"need 1 <= d <= D, got d={self.d}, D={self.D}")
        if not self.lam_lo > 0:
            raise ParameterError(f"lam_lo must be positive, got {self.lam_lo}")
        if not self.lam_hi > self.lam_lo:
            raise ParameterError(f"need lam_hi > lam_lo, got {self.lam_hi} <= {self.lam_lo}")


def make_two_block(spec: TwoBlockSpec) -> QuadraticLandscape:
    """``d`` stiff directions at ``lam_hi`` followed by ``D - d`` flat ones."""
    spec.validate()
    lam = np.full(spec.D, float(spec.lam_lo))
    lam[: spec.d] = spec.lam_hi
    return QuadraticLandscape(Spectrum(lam))


def evaluate_quadratic(landscape: QuadraticLandscape, theta, rng=None) -> float:
    if rng is None:
        return landscape.value(theta)
    return landscape.evaluate(theta, rng)


class DoubleWellLandscape(ObjectiveFunction):
    """Quartic double-well on coordinate 0, optional quadratic block on the rest.

    ``loss`` returns L; ``value``/``evaluate`` return the reward ``-L`` so the
    landscape plugs into the ascent code unchanged.
    """

    def __init__(self, lam_dw, a, D=1, extra_spectrum=None, noise_scale=0.0):
        if not lam_dw > 0 or not a > 0:
            raise ParameterError("lam_dw and a must be positive")
        if int(D) != D or D < 1:
            raise ParameterError("D must be a positive integer")
        self.lam_dw = float(lam_dw)
        self.a = float(a)
        self.dimension = int(D)
        if extra_spectrum is None:
            extra = np.zeros(self.dimension - 1)
        else:
            extra = np.asarray(extra_spectrum, dtype=float).ravel()
            if extra.size != self.dimension - 1:
                raise ParameterError(f"extra_spectrum needs {self.dimension - 1} entries, got {extra.size}")
            if np.any(extra < 0):
                raise ParameterError("extra_spectrum must be nonnegative")
        self.extra = extra
        self.noise_scale = float(noise_scale)

    @property
    def barrier(self) -> float:
        """lam_dw a^4 / 4, written in the same arithmetic as ``loss_1d(0)`` so the identity is exact."""
        return 0.25 * self.lam_dw * (self.a**2) ** 2

    @property
    def curvature_min(self) -> float:
        """L'' at the minima +-a."""
        return 2.0 * self.lam_dw * self.a**2

    @property
    def curvature_saddle(self) -> float:
        """L'' at the saddle x = 0 (negative)."""
        return -self.lam_dw * self.a**2

    @property
    def curvature_scale(self):
        return self.curvature_min

    def loss_1d(self, x):
        x = np.asarray(x, dtype=float)
        return 0.25 * self.lam_dw * (x * x - self.a**2) ** 2

    def dloss_1d(self, x):
        x = np.asarray(x, dtype=float)
        return self.lam_dw * x * (x * x - self.a**2)

    def losses(self, thetas):
        thetas = self._check_batch(thetas)
        out = self.loss_1d(thetas[:, 0])
        if self.dimension > 1:
            out = out + 0.5 * (thetas[:, 1:] ** 2 * self.extra).sum(axis=1)
        return out

    def loss(self, theta) -> float:
        return float(self.losses(self._check(theta)[None, :])[0])

    def values(self, thetas):
        return -self.losses(thetas)

    def value(self, theta):
        return -self.loss(theta)

    def gradient(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape[-1] != self.dimension:
            raise ParameterError(f"expected trailing dimension {self.dimension}, got {theta.shape}")
        g = np.empty_like(theta)
        g[..., 0] = -self.dloss_1d(theta[..., 0])
        g[..., 1:] = -theta[..., 1:] * self.extra
        return g

    def describe(self):
        return {"kind": "double_well", "dimension": self.dimension, "lam_dw": self.lam_dw, "a": self.a,
                "barrier": self.barrier, "noise_scale": self.noise_scale, "reward_convention": "reward = -loss"}


def evaluate_double_well(landscape: DoubleWellLandscape, theta) -> float:
    """Loss value L(theta); the matching reward is ``-L``."""
    value = landscape.loss(theta)
    if not np.isfinite(value):
        raise NumericError("non-finite double-well loss")
    return value


_LANDSCAPE_KEYS = {
    "two_block": {"kind", "D", "d", "lam_hi", "lam_lo", "noise_scale"},
    "quadratic": {"kind", "eigenvalues", "peak", "offset", "noise_scale"},
    "double_well": {"kind", "lam_dw", "a", "D", "extra_spectrum", "noise_scale"},
}


def expand_blocks(eigenvalues):
    """Accept a flat list or ``[[value, count], ...]`` blocks."""
    ev = list(eigenvalues)
    if ev and all(isinstance(e, (list, tuple)) for e in ev):
        out = []
        for e in ev:
            if len(e) != 2 or int(e[1]) != e[1] or e[1] < 0:
                raise ParameterError(f"eigenvalue block must be [value, count], got {e!r}")
            out.extend([float(e[0])] * int(e[1]))
        return out
    return ev


def landscape_from_config(cfg: dict) -> ObjectiveFunction:
    kind = cfg.get("kind")
    if kind not in _LANDSCAPE_KEYS:
        raise ParameterError(f"landscape.kind must be one of {sorted(_LANDSCAPE_KEYS)}, got {kind!r}")
    unknown = set(cfg) - _LANDSCAPE_KEYS[kind]
    if unknown:
        raise ParameterError(f"unknown landscape keys for kind={kind}: {sorted(unknown)}")
    noise = float(cfg.get("noise_scale", 0.0))
    if kind == "two_block":
        land = make_two_block(TwoBlockSpec(int(cfg["D"]), int(cfg["d"]), float(cfg["lam_hi"]), float(cfg["lam_lo"])))
        land.noise_scale = noise
        return land
    if kind == "quadratic":
        return QuadraticLandscape(expand_blocks(cfg["eigenvalues"]), peak=cfg.get("peak", 1.0), offset=cfg.get("offset"),
                                  noise_scale=noise)
    return DoubleWellLandscape(cfg["lam_dw"], cfg["a"], D=cfg.get("D", 1),
                               extra_spectrum=(None if cfg.get("extra_spectrum") is None
                                               else expand_blocks(cfg["extra_spectrum"])), noise_scale=noise)
