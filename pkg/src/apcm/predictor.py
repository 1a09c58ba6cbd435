from __future__ import annotations

import numpy as np

from .diffcore import ContractError, Linear, RngStream, as_batch, prefixed, swiglu_bwd, swiglu_fwd


class PredictorNet:
    """Estimates the discarded latent suffix from the stored prefix.

    Linear(m -> 2*hidden) -> swiglu -> Linear(hidden -> d - m).  The output
    projection starts at zero so an untrained net predicts a zero suffix.
    """

    def __init__(self, m: int, out_dim: int, hidden: int = 256, rng: RngStream | None = None):
        self.m, self.out_dim, self.hidden = m, out_dim, hidden
        self.inp = Linear(m, 2 * hidden, rng)
        self.out = Linear(hidden, out_dim, zero=True)

    def params(self) -> dict[str, np.ndarray]:
        return {**prefixed("inp", self.inp.params()), **prefixed("out", self.out.params())}

    def forward(self, zc: np.ndarray):
        if zc.shape[-1] != self.m:
            raise ContractError(f"predictor expects {self.m} inputs, got {zc.shape[-1]}")
        h, a = swiglu_fwd(self.inp.forward(zc))
        return self.out.forward(h), (zc, a, h)

    def backward(self, cache, gy: np.ndarray, need_grads: bool = True):
        zc, a, h = cache
        gh, g_out = self.out.backward(h, gy, need_grads)
        gzc, g_inp = self.inp.backward(zc, swiglu_bwd(a, gh), need_grads)
        return gzc, {**prefixed("inp", g_inp), **prefixed("out", g_out)}


def predict_aux(net: PredictorNet, z_comp) -> np.ndarray:
    zb, single = as_batch(z_comp)
    y, _ = net.forward(zb)
    return y[0] if single else y
