"""PCA baseline fitted by SVD of the centred data."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import ContractError, as_batch


@dataclass
class PcaModel:
    mean: np.ndarray  # (d,)
    components: np.ndarray  # (d, m), orthonormal columns
    explained_variance: np.ndarray  # (m,), descending

    @property
    def m(self) -> int:
        return self.components.shape[1]

    @property
    def d(self) -> int:
        return self.components.shape[0]

    def compress(self, x) -> np.ndarray:
        return pca_compress(self, x)

    def reconstruct(self, z) -> np.ndarray:
        return pca_reconstruct(self, z)


def pca_fit(data, m: int) -> PcaModel:
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ContractError("pca_fit needs a 2-D array with at least two samples")
    n, d = x.shape
    if not 1 <= m <= min(n, d):
        raise ContractError(f"m must lie in [1, {min(n, d)}], got {m}")
    mean = x.mean(axis=0)
    _, sv, vt = np.linalg.svd(x - mean, full_matrices=False)
    comps = vt[:m].T.copy()
    # each column's largest-magnitude entry is made positive
    pivot = comps[np.argmax(np.abs(comps), axis=0), np.arange(m)]
    comps *= np.where(pivot < 0, -1.0, 1.0)
    return PcaModel(mean, comps, sv[:m] ** 2 / (n - 1))


def pca_compress(model: PcaModel, x) -> np.ndarray:
    xb, single = as_batch(x)
    z = (xb - model.mean) @ model.components
    return z[0] if single else z


def pca_reconstruct(model: PcaModel, z) -> np.ndarray:
    zb, single = as_batch(z)
    x = model.mean + zb @ model.components.T
    return x[0] if single else x
