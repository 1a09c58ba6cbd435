"""Numeric substrate: layers with hand-written backward passes, Adam, and
finite-difference gradient checking.

All arrays are float64 numpy arrays.  Layers work on batches shaped
``(n, features)``; a 1-D input is treated as a batch of one and the result is
squeezed back.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit

DTYPE = np.float64


class ContractError(ValueError):
    """Raised when an operation is called with arguments violating its contract."""


class GradCheckError(RuntimeError):
    pass


def as_batch(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim != 2:
        raise ContractError(f"expected a vector or a batch of vectors, got shape {x.shape}")
    return x, False


class RngStream:
    """Seeded random stream backed by numpy's PCG64 bit generator.

    ``name`` derives an independent sub-stream so that weight init, permutation
    draws and batch shuffling never consume each other's numbers.
    """

    algorithm = "numpy.PCG64"

    def __init__(self, seed: int, name: str = ""):
        if not 0 <= int(seed) < 2**64:
            raise ContractError("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)
        self.name = name
        key = [ord(c) for c in name]
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=key)))
        self.draws = 0

    def uniform(self, low: float, high: float, size) -> np.ndarray:
        out = self._gen.uniform(low, high, size)
        self.draws += int(np.size(out))
        return out

    def normal(self, loc: float, scale: float, size) -> np.ndarray:
        out = self._gen.normal(loc, scale, size)
        self.draws += int(np.size(out))
        return out

    def integer(self, high: int) -> int:
        """Uniform integer in [0, high)."""
        self.draws += 1
        return int(self._gen.integers(0, high))

    def permutation(self, n: int) -> np.ndarray:
        # explicit Fisher-Yates so the draw order is part of this code, not numpy's
        perm = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.integer(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm


class Linear:
    """Affine map ``y = x W^T + b`` with ``W`` shaped ``(out_dim, in_dim)``."""

    def __init__(self, in_dim: int, out_dim: int, rng: RngStream | None = None, zero: bool = False):
        self.in_dim = in_dim
        self.out_dim = out_dim
        if zero or rng is None:
            self.W = np.zeros((out_dim, in_dim), dtype=DTYPE)
        else:
            # fan-in scaled uniform, unit variance for unit-variance inputs
            bound = np.sqrt(3.0 / in_dim)
            self.W = rng.uniform(-bound, bound, (out_dim, in_dim))
        self.b = np.zeros(out_dim, dtype=DTYPE)

    def params(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b}

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.in_dim:
            raise ContractError(f"linear layer expects {self.in_dim} inputs, got {x.shape[-1]}")
        return x @ self.W.T + self.b

    def backward(self, x: np.ndarray, gy: np.ndarray, need_grads: bool = True):
        gx = gy @ self.W
        if not need_grads:
            return gx, {}
        return gx, {"W": gy.T @ x, "b": gy.sum(axis=0)}


def linear_forward(p: Linear, x) -> np.ndarray:
    xb, single = as_batch(x)
    y = p.forward(xb)
    return y[0] if single else y


def _check_even(x: np.ndarray) -> int:
    if x.shape[-1] % 2:
        raise ContractError(f"swiglu needs an even-length input, got {x.shape[-1]}")
    return x.shape[-1] // 2


def swiglu(x) -> np.ndarray:
    """silu(a) * b where a is the first half of ``x`` and b the second half."""
    return swiglu_fwd(np.asarray(x, dtype=DTYPE))[0]


def swiglu_backward(x: np.ndarray, gy: np.ndarray) -> np.ndarray:
    return swiglu_bwd(swiglu_fwd(np.asarray(x, dtype=DTYPE))[1], gy)


def swiglu_fwd(x: np.ndarray):
    k = _check_even(x)
    a, b = x[..., :k], x[..., k:]
    sig = expit(a)
    silu = a * sig
    return silu * b, (b, sig, silu)


def swiglu_bwd(cache, gy: np.ndarray) -> np.ndarray:
    b, sig, silu = cache
    k = b.shape[-1]
    gx = np.empty(gy.shape[:-1] + (2 * k,))
    # d silu/da = sig + silu * (1 - sig)
    ga = np.subtract(1.0, sig, out=gx[..., :k])
    ga *= silu
    ga += sig
    ga *= b
    ga *= gy
    np.multiply(gy, silu, out=gx[..., k:])
    return gx


class ResidualBlock:
    """``h + swiglu(Linear(h))`` with the linear map widening h -> 2h."""

    def __init__(self, width: int, rng: RngStream | None = None):
        self.width = width
        self.lin = Linear(width, 2 * width, rng)

    def params(self) -> dict[str, np.ndarray]:
        return {f"lin.{k}": v for k, v in self.lin.params().items()}

    def forward(self, h: np.ndarray):
        act, sw = swiglu_fwd(self.lin.forward(h))
        return h + act, (h, sw)

    def backward(self, cache, gy: np.ndarray, need_grads: bool = True):
        h, sw = cache
        ga = swiglu_bwd(sw, gy)
        gh, g = self.lin.backward(h, ga, need_grads)
        return gy + gh, {f"lin.{k}": v for k, v in g.items()}


def randomize_params(params: dict[str, np.ndarray], rng: RngStream, scale: float = 0.3) -> None:
    """Overwrite every parameter with U(-scale, scale) draws (for invertibility and gradient probes)."""
    for name in sorted(params):
        params[name][...] = rng.uniform(-scale, scale, params[name].shape)


def prefixed(prefix: str, d: dict) -> dict:
    return {f"{prefix}.{k}": v for k, v in d.items()}


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState) -> None:
    """In-place Adam update of every parameter that has a gradient."""
    for name, g in grads.items():
        if name not in params:
            raise ContractError(f"gradient for unknown parameter {name!r}")
        if params[name].shape != g.shape:
            raise ContractError(f"shape mismatch for {name!r}: {params[name].shape} vs {g.shape}")
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, g in grads.items():
        p = params[name]
        m = state.first_moment.get(name)
        if m is None:
            m = state.first_moment[name] = np.zeros_like(p)
            state.second_moment[name] = np.zeros_like(p)
        v = state.second_moment[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        # p -= lr * (m / c1) / (sqrt(v / c2) + eps), without extra temporaries
        denom = np.sqrt(v)
        denom *= 1.0 / np.sqrt(c2)
        denom += state.eps
        np.divide(m, denom, out=denom)
        denom *= state.lr / c1
        p -= denom


LossFn = Callable[[], "tuple[float, dict[str, np.ndarray]]"]


def grad_check(
    loss_fn: LossFn,
    params: dict[str, np.ndarray],
    probe_eps: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn()`` returns ``(loss, grads)`` evaluated at the current contents of
    ``params``; probing perturbs those arrays in place and restores them.  When
    ``max_coords`` is given, that many coordinates (at least 32) are sampled
    uniformly instead of probing all of them.
    """
    if not 0 < probe_eps <= 1e-2:
        raise ContractError("probe_eps must lie in (0, 1e-2]")
    _, grads = loss_fn()
    coords = [(name, i) for name in sorted(params) for i in range(params[name].size)]
    if max_coords is not None and len(coords) > max(32, max_coords):
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(coords), size=max(32, max_coords), replace=False)
        coords = [coords[k] for k in sorted(pick)]
    worst = 0.0
    for name, i in coords:
        flat = params[name].reshape(-1)
        orig = flat[i]
        flat[i] = orig + probe_eps
        lp, _ = loss_fn()
        flat[i] = orig - probe_eps
        lm, _ = loss_fn()
        flat[i] = orig
        if not (np.isfinite(lp) and np.isfinite(lm)):
            raise GradCheckError(f"non-finite loss while probing {name}[{i}]")
        numeric = (lp - lm) / (2 * probe_eps)
        g = grads.get(name)
        analytic = 0.0 if g is None else float(g.reshape(-1)[i])
        err = abs(analytic - numeric) / max(1e-12, abs(analytic) + abs(numeric))
        worst = max(worst, err)
    return worst
