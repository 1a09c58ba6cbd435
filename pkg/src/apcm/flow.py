"""Invertible encoder: affine coupling layers interleaved with fixed permutations."""
from __future__ import annotations

import numpy as np

from .diffcore import DTYPE, ContractError, Linear, ResidualBlock, RngStream, as_batch, prefixed, swiglu_bwd, swiglu_fwd


class CouplingSubnet:
    """Maps the conditioning half ``x1`` (length d/2) to ``(s, t)``.

    Layout: Linear(d/2 -> 2h), swiglu -> h, ``res_blocks`` residual blocks,
    Linear(h -> d) whose output splits into ``s_raw`` and ``t``.  The scale is
    soft-clamped as ``s_max * tanh(s_raw / s_max)``.
    """

    def __init__(self, d: int, hidden: int, res_blocks: int = 1, s_max: float = 2.0, rng: RngStream | None = None):
        half = d // 2
        self.half = half
        self.s_max = float(s_max)
        self.inp = Linear(half, 2 * hidden, rng)
        self.blocks = [ResidualBlock(hidden, rng) for _ in range(res_blocks)]
        self.out = Linear(hidden, d, zero=True)

    def params(self) -> dict[str, np.ndarray]:
        p = prefixed("inp", self.inp.params())
        for i, blk in enumerate(self.blocks):
            p.update(prefixed(f"res{i}", blk.params()))
        p.update(prefixed("out", self.out.params()))
        return p

    def forward(self, x1: np.ndarray):
        h, a0 = swiglu_fwd(self.inp.forward(x1))
        block_caches = []
        for blk in self.blocks:
            h, c = blk.forward(h)
            block_caches.append(c)
        o = self.out.forward(h)
        th = np.tanh(o[:, : self.half] / self.s_max)
        s = self.s_max * th
        t = o[:, self.half :]
        return s, t, (x1, a0, block_caches, h, th)

    def backward(self, cache, gs: np.ndarray, gt: np.ndarray, need_grads: bool = True):
        x1, a0, block_caches, h, th = cache
        go = np.concatenate([gs * (1.0 - th * th), gt], axis=1)
        grads = {}
        gh, g = self.out.backward(h, go, need_grads)
        grads.update(prefixed("out", g))
        for i in range(len(self.blocks) - 1, -1, -1):
            gh, g = self.blocks[i].backward(block_caches[i], gh, need_grads)
            grads.update(prefixed(f"res{i}", g))
        ga0 = swiglu_bwd(a0, gh)
        gx1, g = self.inp.backward(x1, ga0, need_grads)
        grads.update(prefixed("inp", g))
        return gx1, grads


class CouplingLayer:
    """``y1 = x1``, ``y2 = x2 * exp(s) + t`` with ``(s, t)`` computed from ``x1``."""

    def __init__(self, d: int, hidden: int, res_blocks: int = 1, s_max: float = 2.0, rng: RngStream | None = None):
        if d < 2 or d % 2:
            raise ContractError(f"coupling layers need an even dimension >= 2, got {d}")
        self.d = d
        self.half = d // 2
        self.subnet = CouplingSubnet(d, hidden, res_blocks, s_max, rng)

    def params(self) -> dict[str, np.ndarray]:
        return self.subnet.params()

    def forward(self, x: np.ndarray):
        x1, x2 = x[:, : self.half], x[:, self.half :]
        s, t, sub = self.subnet.forward(x1)
        es = np.exp(s)
        y = np.concatenate([x1, x2 * es + t], axis=1)
        return y, (sub, x2, es)

    def backward(self, cache, gy: np.ndarray, need_grads: bool = True):
        sub, x2, es = cache
        gy1, gy2 = gy[:, : self.half], gy[:, self.half :]
        gx2 = gy2 * es
        gs = gx2 * x2
        gx1, grads = self.subnet.backward(sub, gs, gy2, need_grads)
        return np.concatenate([gy1 + gx1, gx2], axis=1), grads

    def inverse(self, y: np.ndarray):
        y1, y2 = y[:, : self.half], y[:, self.half :]
        s, t, sub = self.subnet.forward(y1)
        ens = np.exp(-s)
        x2 = (y2 - t) * ens
        return np.concatenate([y1, x2], axis=1), (sub, x2, ens)

    def inverse_backward(self, cache, gx: np.ndarray, need_grads: bool = True):
        sub, x2, ens = cache
        gx1, gx2 = gx[:, : self.half], gx[:, self.half :]
        gy2 = gx2 * ens
        gs = -gx2 * x2
        gy1, grads = self.subnet.backward(sub, gs, -gy2, need_grads)
        return np.concatenate([gx1 + gy1, gy2], axis=1), grads


class PermuteLayer:
    """Fixed permutation: ``out[i] = x[perm[i]]``."""

    def __init__(self, perm):
        perm = np.asarray(perm, dtype=np.int64)
        if sorted(perm.tolist()) != list(range(len(perm))):
            raise ContractError("perm must be a bijection on 0..d-1")
        self.perm = perm
        self.inv_perm = np.argsort(perm)

    @classmethod
    def random(cls, d: int, rng: RngStream) -> "PermuteLayer":
        return cls(rng.permutation(d))

    def forward(self, x: np.ndarray) -> np.ndarray:
        return x[:, self.perm]

    def inverse(self, y: np.ndarray) -> np.ndarray:
        return y[:, self.inv_perm]


def permute_apply(layer: PermuteLayer, x, direction: str = "forward") -> np.ndarray:
    xb, single = as_batch(x)
    if direction == "forward":
        y = layer.forward(xb)
    elif direction == "inverse":
        y = layer.inverse(xb)
    else:
        raise ContractError(f"direction must be 'forward' or 'inverse', got {direction!r}")
    return y[0] if single else y


class FlowEncoder:
    """``n_layers`` (coupling, permutation) pairs over dimension ``d``; the first
    ``m`` latent coordinates form the stored part."""

    def __init__(
        self,
        d: int,
        m: int,
        n_layers: int = 6,
        hidden: int = 256,
        res_blocks: int = 1,
        s_max: float = 2.0,
        rng: RngStream | None = None,
        identity_perms: bool = False,
    ):
        if n_layers < 1:
            raise ContractError("a flow needs at least one layer")
        if not 0 < m < d:
            raise ContractError(f"need 0 < m < d, got m={m}, d={d}")
        if d % 2:
            raise ContractError(f"flow dimension must be even, got {d}; zero-pad the data first")
        rng = rng if rng is not None else RngStream(0, "flow")
        self.d, self.m = d, m
        self.hidden, self.res_blocks, self.s_max = hidden, res_blocks, s_max
        self.couplings = []
        self.perms = []
        for _ in range(n_layers):
            self.couplings.append(CouplingLayer(d, hidden, res_blocks, s_max, rng))
            self.perms.append(PermuteLayer(np.arange(d)) if identity_perms else PermuteLayer.random(d, rng))

    @property
    def n_layers(self) -> int:
        return len(self.couplings)

    def params(self) -> dict[str, np.ndarray]:
        p = {}
        for i, c in enumerate(self.couplings):
            p.update(prefixed(f"c{i}", c.params()))
        return p

    def forward(self, x: np.ndarray):
        caches = []
        for c, p in zip(self.couplings, self.perms):
            x, cache = c.forward(x)
            x = p.forward(x)
            caches.append(cache)
        return x, caches

    def backward(self, caches, gz: np.ndarray, need_grads: bool = True):
        grads = {}
        for i in range(self.n_layers - 1, -1, -1):
            gz = self.perms[i].inverse(gz)
            gz, g = self.couplings[i].backward(caches[i], gz, need_grads)
            grads.update(prefixed(f"c{i}", g))
        return gz, grads

    def inverse(self, z: np.ndarray):
        caches = [None] * self.n_layers
        for i in range(self.n_layers - 1, -1, -1):
            z = self.perms[i].inverse(z)
            z, caches[i] = self.couplings[i].inverse(z)
        return z, caches

    def inverse_backward(self, caches, gx: np.ndarray, need_grads: bool = True):
        grads = {}
        for i in range(self.n_layers):
            gx, g = self.couplings[i].inverse_backward(caches[i], gx, need_grads)
            gx = self.perms[i].forward(gx)
            grads.update(prefixed(f"c{i}", g))
        return gx, grads

    def split(self, z: np.ndarray):
        return z[..., : self.m], z[..., self.m :]


def encoder_forward(enc: FlowEncoder, x) -> np.ndarray:
    xb, single = as_batch(x)
    z, _ = enc.forward(xb)
    return z[0] if single else z


def encoder_inverse(enc: FlowEncoder, z) -> np.ndarray:
    zb, single = as_batch(z)
    x, _ = enc.inverse(zb)
    return x[0] if single else x


def split_latent(enc: FlowEncoder, z) -> tuple[np.ndarray, np.ndarray]:
    z = np.asarray(z, dtype=DTYPE)
    if z.shape[-1] != enc.d:
        raise ContractError(f"latent length {z.shape[-1]} != d = {enc.d}")
    return enc.split(z)
