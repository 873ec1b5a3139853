"""Path-keyed random streams.

A stream is identified by a root seed plus a tuple of labels such as
``("a1b2c3", "it7", "missing-dev")``. Labels are hashed into the spawn key of
a :class:`numpy.random.SeedSequence`, so streams can be derived in any order
and on any worker without bookkeeping.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SeedSpec:
    root_seed: int
    path: tuple = ()

    def __post_init__(self):
        if not 0 <= int(self.root_seed) < 2**64:
            raise ValueError(f"root_seed must fit in 64 unsigned bits, got {self.root_seed}")
        object.__setattr__(self, "root_seed", int(self.root_seed))
        object.__setattr__(self, "path", tuple(str(p) for p in self.path))

    def child(self, *labels) -> "SeedSpec":
        return SeedSpec(self.root_seed, self.path + tuple(str(x) for x in labels))


def _label_word(label: str) -> int:
    return int.from_bytes(hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest(), "little")


def derive_stream(seed: SeedSpec) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=seed.root_seed, spawn_key=tuple(_label_word(p) for p in seed.path))
    return np.random.Generator(np.random.PCG64(seq))


def stream(root_seed: int, *labels) -> np.random.Generator:
    return derive_stream(SeedSpec(root_seed, labels))


def sample_bivariate_normal(n: int, rho: float, rng: np.random.Generator):
    """Draw ``n`` pairs from a standard bivariate normal with correlation ``rho``.

    Uses the Cholesky factor of [[1, rho], [rho, 1]].
    """
    if not -1.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [-1, 1], got {rho}")
    z = rng.standard_normal((n, 2))
    x1 = z[:, 0]
    x2 = rho * z[:, 0] + np.sqrt(1.0 - rho * rho) * z[:, 1]
    return x1, x2
