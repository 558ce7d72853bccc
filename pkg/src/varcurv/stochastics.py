"""Hierarchical, order-independent random streams.

Every Monte Carlo draw in the package comes from a stream identified by a
:class:`StreamKey`: a base seed plus a path such as
``[("rep", 3), ("iter", 17), ("cand", 5)]``.  The key is hashed into a
:class:`numpy.random.SeedSequence` spawn key and fed to the counter-based
Philox bit generator, so a stream depends only on its key and never on how
many draws other workers have made.

Normal variates use numpy's ``Generator.standard_normal`` (the ziggurat
method).  Bit-exact replay therefore holds for a fixed numpy version.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

__all__ = ["StreamKey", "derive_stream", "sample_gaussian_vector", "sample_rademacher"]

_SEED_MASK = (1 << 64) - 1


def _label_code(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


@dataclass(frozen=True)
class StreamKey:
    """Base seed plus a path of ``(label, index)`` pairs."""

    seed: int
    path: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        if not isinstance(self.seed, (int, np.integer)) or not 0 <= int(self.seed) <= _SEED_MASK:
            raise ParameterError(f"seed must be an integer in [0, 2**64), got {self.seed!r}")
        path = tuple((str(label), int(index)) for label, index in self.path)
        for label, index in path:
            if index < 0:
                raise ParameterError(f"path index must be nonnegative, got {label}={index}")
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "path", path)

    def child(self, label: str, index: int = 0) -> "StreamKey":
        return StreamKey(self.seed, self.path + ((label, index),))

    def spawn_key(self) -> tuple[int, ...]:
        out = []
        for label, index in self.path:
            out.extend((_label_code(label), index))
        return tuple(out)

    def as_dict(self) -> dict:
        return {"seed": self.seed, "path": [list(p) for p in self.path]}

    @classmethod
    def from_dict(cls, d) -> "StreamKey":
        return cls(int(d["seed"]), tuple((str(a), int(b)) for a, b in d.get("path", ())))


def derive_stream(key: StreamKey) -> np.random.Generator:
    """Return the generator owned by ``key``; a pure function of the key."""
    ss = np.random.SeedSequence(entropy=key.seed, spawn_key=key.spawn_key())
    return np.random.Generator(np.random.Philox(ss))


def sample_gaussian_vector(stream: np.random.Generator, D: int) -> np.ndarray:
    if int(D) != D or D < 1:
        raise ParameterError(f"dimension must be a positive integer, got {D!r}")
    return stream.standard_normal(int(D))


def sample_rademacher(stream: np.random.Generator, D: int) -> np.ndarray:
    if int(D) != D or D < 1:
        raise ParameterError(f"dimension must be a positive integer, got {D!r}")
    return stream.integers(0, 2, size=int(D)).astype(float) * 2.0 - 1.0
