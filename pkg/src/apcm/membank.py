"""Slot memory of stored latent prefixes with cosine read and idle-then-LFU write."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import ContractError, as_batch

COSINE_EPS = 1e-12


class EmptyMemoryError(LookupError):
    def __init__(self):
        super().__init__("no memory stored")


def cosine_sim(q, v) -> float:
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if q.shape != v.shape:
        raise ContractError(f"length mismatch: {q.shape} vs {v.shape}")
    nq = max(float(np.linalg.norm(q)), COSINE_EPS)
    nv = max(float(np.linalg.norm(v)), COSINE_EPS)
    return float(np.clip(q @ v / (nq * nv), -1.0, 1.0))


@dataclass
class ReadResult:
    slot: int
    similarity: float
    x_mem: np.ndarray


class MemoryBank:
    """``max_mem`` slots of length-``m`` vectors plus access counters ``aff``.

    A slot is occupied iff its counter is positive.  Reads bump the counter of
    the winning slot; a write stores the batch-mean latent and sets the
    counter to 1.
    """

    def __init__(self, max_mem: int, m: int):
        if max_mem < 1 or m < 1:
            raise ContractError("max_mem and m must be >= 1")
        self.max_mem, self.m = max_mem, m
        self.M = np.zeros((max_mem, m))
        self.aff = np.zeros(max_mem, dtype=np.int64)

    def occupied(self) -> np.ndarray:
        return np.flatnonzero(self.aff > 0)

    def select_slot(self) -> int:
        idle = np.flatnonzero(self.aff == 0)
        if idle.size:
            return int(idle[0])
        return int(np.argmin(self.aff))  # argmin returns the lowest index on ties

    def store(self, z: np.ndarray) -> int:
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (self.m,):
            raise ContractError(f"expected a length-{self.m} vector, got shape {z.shape}")
        slot = self.select_slot()
        self.M[slot] = z
        self.aff[slot] = 1
        return slot

    def lookup(self, q: np.ndarray) -> tuple[int, float]:
        occ = self.occupied()
        if occ.size == 0:
            raise EmptyMemoryError()
        sims = [cosine_sim(q, self.M[i]) for i in occ]
        k = int(np.argmax(sims))
        slot = int(occ[k])
        self.aff[slot] += 1
        return slot, sims[k]

    def read(self, model, x_query) -> ReadResult:
        q = model.compress(x_query)
        slot, sim = self.lookup(q)
        return ReadResult(slot, sim, model.reconstruct(self.M[slot]))

    def write(self, model, batch) -> int:
        x, _ = as_batch(batch)
        if x.shape[0] == 0:
            raise ContractError("empty batch")
        return self.store(model.compress(x).mean(axis=0))

    def to_dict(self) -> dict:
        return {"max_mem": self.max_mem, "m": self.m, "M": self.M.ravel().tolist(), "aff": self.aff.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "MemoryBank":
        bank = cls(int(d["max_mem"]), int(d["m"]))
        bank.M[:] = np.asarray(d["M"], dtype=np.float64).reshape(bank.max_mem, bank.m)
        bank.aff[:] = np.asarray(d["aff"], dtype=np.int64)
        return bank


def select_slot(bank: MemoryBank) -> int:
    return bank.select_slot()


def mem_read(bank: MemoryBank, model, x_query) -> ReadResult:
    return bank.read(model, x_query)


def mem_write(bank: MemoryBank, model, batch) -> int:
    return bank.write(model, batch)
