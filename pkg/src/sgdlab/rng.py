"""Counter-based random streams keyed by ``(seed, replica, purpose)``.

Each stream is an independent Philox generator. Keying by replica id (rather
than by worker or block) makes results independent of how replicas are
partitioned across processes.
"""
from __future__ import annotations

import zlib

import numpy as np

from .models import ObjectiveModel


def purpose_key(purpose: str | int) -> int:
    if isinstance(purpose, int):
        return purpose
    return zlib.crc32(purpose.encode("utf-8"))


def stream(seed: int, replica: int = 0, purpose: str | int = "atoms") -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(purpose_key(purpose), int(replica)))
    return np.random.Generator(np.random.Philox(ss))


class AtomStreams:
    """Atom-index draws for a block of replicas, one Philox stream per replica.

    ``next(n)`` returns an ``(n, n_replicas)`` array; consecutive calls continue
    each replica's stream, so the chunk size has no effect on the draws.
    """

    def __init__(self, model: ObjectiveModel, seed: int, replicas, purpose="atoms"):
        self.replicas = np.atleast_1d(np.asarray(replicas, dtype=np.int64))
        self._gens = [stream(seed, int(r), purpose) for r in self.replicas]
        cum = np.cumsum(model.w)
        cum[-1] = 1.0
        self._cum = cum
        self._single = model.n_atoms == 1

    def next(self, n: int) -> np.ndarray:
        if self._single:
            for g in self._gens:
                g.random(n)
            return np.zeros((n, len(self._gens)), dtype=np.int64)
        u = np.empty((n, len(self._gens)))
        for j, g in enumerate(self._gens):
            u[:, j] = g.random(n)
        return np.searchsorted(self._cum, u, side="right")
