"""The IDRP codec: flow encoder + auxiliary predictor, its loss, and training."""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .diffcore import AdamState, ContractError, RngStream, adam_step, as_batch, prefixed
from .flow import FlowEncoder
from .metrics import psnr_from_mse
from .predictor import PredictorNet

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class ModelConfig:
    d: int | None = None
    m: int = 16
    n_layers: int = 6
    hidden: int = 256
    pred_hidden: int = 256
    res_blocks: int = 1
    s_max: float = 2.0

    def validate(self) -> None:
        if self.d is not None:
            if self.d < 2 or self.d % 2:
                raise ContractError(f"model.d must be even and >= 2, got {self.d}")
            if not 0 < self.m < self.d:
                raise ContractError(f"need 0 < m < d, got m={self.m}, d={self.d}")
        if self.m < 1:
            raise ContractError("model.m must be >= 1")
        for name in ("n_layers", "hidden", "pred_hidden"):
            if getattr(self, name) < 1:
                raise ContractError(f"model.{name} must be >= 1")
        if self.res_blocks < 0:
            raise ContractError("model.res_blocks must be >= 0")
        if self.s_max <= 0:
            raise ContractError("model.s_max must be > 0")


@dataclass
class TrainConfig:
    epochs: int = 2000
    pretrain_epochs: int = 2000
    batch_size: int = 128
    lr: float = 1e-3
    lambda_aux: float = 1.0
    seed: int = 0
    train_flow: bool = True
    log_every: int = 1

    def validate(self) -> None:
        if self.epochs < 0 or self.pretrain_epochs < 0:
            raise ContractError("epoch counts must be >= 0")
        if self.batch_size < 1 or self.log_every < 1:
            raise ContractError("batch_size and log_every must be >= 1")
        if self.lr <= 0:
            raise ContractError("lr must be > 0")
        if self.lambda_aux < 0:
            raise ContractError("lambda_aux must be >= 0")


@dataclass
class EpochRecord:
    epoch: int
    total_loss: float
    recon_mse: float
    aux_mse: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def extend(self, other: "TrainHistory", offset: int = 0) -> None:
        for r in other.records:
            self.records.append(EpochRecord(r.epoch + offset, r.total_loss, r.recon_mse, r.aux_mse))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["epoch", "total_loss", "recon_mse", "aux_mse"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.total_loss), repr(r.recon_mse), repr(r.aux_mse)])


class IdrpModel:
    def __init__(self, d: int, cfg: ModelConfig | None = None, seed: int = 0, identity_perms: bool = False):
        cfg = cfg or ModelConfig()
        self.cfg = ModelConfig(**{**asdict(cfg), "d": d})
        self.cfg.validate()
        self.d, self.m = d, self.cfg.m
        self.seed = seed
        self.encoder = FlowEncoder(
            d, self.m, self.cfg.n_layers, self.cfg.hidden, self.cfg.res_blocks, self.cfg.s_max,
            rng=RngStream(seed, "flow"), identity_perms=identity_perms,
        )
        self.predictor = PredictorNet(self.m, d - self.m, self.cfg.pred_hidden, rng=RngStream(seed, "predictor"))

    def flow_params(self) -> dict[str, np.ndarray]:
        return prefixed("flow", self.encoder.params())

    def predictor_params(self) -> dict[str, np.ndarray]:
        return prefixed("pred", self.predictor.params())

    def params(self) -> dict[str, np.ndarray]:
        return {**self.flow_params(), **self.predictor_params()}

    # codec -------------------------------------------------------------

    def encode(self, x):
        xb, single = as_batch(x)
        if xb.shape[1] != self.d:
            raise ContractError(f"input length {xb.shape[1]} != d = {self.d}")
        z, _ = self.encoder.forward(xb)
        zc, za = self.encoder.split(z)
        return (zc[0], za[0]) if single else (zc, za)

    def compress(self, x) -> np.ndarray:
        return self.encode(x)[0]

    def reconstruct(self, z_comp, z_aux=None) -> np.ndarray:
        """Invert ``[z_comp, z_aux]``; ``z_aux`` defaults to the predictor's estimate."""
        zc, single = as_batch(z_comp)
        if zc.shape[1] != self.m:
            raise ContractError(f"z_comp length {zc.shape[1]} != m = {self.m}")
        if z_aux is None:
            za, _ = self.predictor.forward(zc)
        else:
            za, _ = as_batch(z_aux)
        x, _ = self.encoder.inverse(np.concatenate([zc, za], axis=1))
        return x[0] if single else x

    # loss -----------------------------------------------------------------

    def loss(self, batch, lambda_aux: float = 1.0):
        """(total, recon_mse, aux_mse) on a batch."""
        total, recon, aux, _ = self.loss_and_grads(batch, lambda_aux, grads=None)
        return total, recon, aux

    def loss_and_grads(self, batch, lambda_aux: float = 1.0, grads: str | None = "all", z=None):
        """Loss terms and parameter gradients.

        ``grads`` is ``"all"``, ``"predictor"`` or ``None``.  ``z`` may carry a
        precomputed latent for the batch when the flow is frozen.
        """
        x, _ = as_batch(batch)
        n = x.shape[0]
        if n == 0:
            raise ContractError("empty batch")
        d, m = self.d, self.m
        flow_grads = grads == "all"
        enc_cache = None
        if z is None or flow_grads:
            z, enc_cache = self.encoder.forward(x)
        zc, za = z[:, :m], z[:, m:]
        za_hat, pred_cache = self.predictor.forward(zc)
        x_hat, inv_cache = self.encoder.inverse(np.concatenate([zc, za_hat], axis=1))
        r = x_hat - x
        e = za_hat - za
        recon = float(np.sum(r * r)) / (n * d)
        aux = float(np.sum(e * e)) / (n * (d - m))
        total = recon + lambda_aux * aux
        if grads is None:
            return total, recon, aux, {}

        out = {}
        g_zhat, g = self.encoder.inverse_backward(inv_cache, (2.0 / (n * d)) * r, flow_grads)
        inv_flow_grads = g
        g_aux = (2.0 * lambda_aux / (n * (d - m))) * e
        g_zc, g = self.predictor.backward(pred_cache, g_zhat[:, m:] + g_aux, True)
        out.update(prefixed("pred", g))
        if flow_grads:
            g_z = np.concatenate([g_zhat[:, :m] + g_zc, -g_aux], axis=1)
            _, g = self.encoder.backward(enc_cache, g_z, True)
            for k, v in g.items():
                out[f"flow.{k}"] = v + inv_flow_grads[k]
        return total, recon, aux, out

    def aux_loss_and_grads(self, z: np.ndarray):
        """Predictor-only objective on a precomputed latent batch."""
        n = z.shape[0]
        zc, za = z[:, : self.m], z[:, self.m :]
        za_hat, cache = self.predictor.forward(zc)
        e = za_hat - za
        aux = float(np.sum(e * e)) / (n * (self.d - self.m))
        _, g = self.predictor.backward(cache, (2.0 / (n * (self.d - self.m))) * e, True)
        return aux, prefixed("pred", g)


def encode(model: IdrpModel, x):
    return model.encode(x)


def compress(model: IdrpModel, x) -> np.ndarray:
    return model.compress(x)


def reconstruct(model: IdrpModel, z_comp) -> np.ndarray:
    return model.reconstruct(z_comp)


# training -----------------------------------------------------------------


def _batches(n: int, batch_size: int, rng: RngStream):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i : i + batch_size]


def _check_finite(value: float, phase: str, epoch: int, batch: int) -> None:
    if not np.isfinite(value):
        raise TrainingDivergedError(f"{phase}: non-finite loss at epoch {epoch}, batch {batch}")


def pretrain_predictor(model: IdrpModel, data: np.ndarray, cfg: TrainConfig) -> TrainHistory:
    """Fit the predictor to the frozen flow's latents by minimising aux_mse."""
    cfg.validate()
    hist = TrainHistory()
    if cfg.pretrain_epochs == 0:
        return hist
    data = np.asarray(data, dtype=np.float64)
    z, _ = model.encoder.forward(data)
    params = model.predictor_params()
    state = AdamState(lr=cfg.lr)
    rng = RngStream(cfg.seed, "pretrain-shuffle")
    n = len(data)
    for epoch in range(1, cfg.pretrain_epochs + 1):
        acc = 0.0
        for b, idx in enumerate(_batches(n, cfg.batch_size, rng)):
            aux, g = model.aux_loss_and_grads(z[idx])
            _check_finite(aux, "pretrain", epoch, b)
            adam_step(params, g, state)
            acc += aux * len(idx)
        if epoch % cfg.log_every == 0 or epoch == cfg.pretrain_epochs:
            aux = acc / n
            # the pretraining objective is aux_mse alone; recon is not evaluated here
            hist.records.append(EpochRecord(epoch, aux, float("nan"), aux))
            log.debug("pretrain epoch %d aux_mse %.3e", epoch, aux)
    return hist


def train_joint(model: IdrpModel, data: np.ndarray, cfg: TrainConfig) -> TrainHistory:
    """Mini-batch Adam on recon_mse + lambda_aux * aux_mse.

    With ``train_flow`` false only the predictor is updated and the latents are
    computed once up front.
    """
    cfg.validate()
    hist = TrainHistory()
    if cfg.epochs == 0:
        return hist
    data = np.asarray(data, dtype=np.float64)
    mode = "all" if cfg.train_flow else "predictor"
    params = model.params() if cfg.train_flow else model.predictor_params()
    z_all = None if cfg.train_flow else model.encoder.forward(data)[0]
    state = AdamState(lr=cfg.lr)
    rng = RngStream(cfg.seed, "joint-shuffle")
    n = len(data)
    for epoch in range(1, cfg.epochs + 1):
        tot = rec = aux = 0.0
        for b, idx in enumerate(_batches(n, cfg.batch_size, rng)):
            zb = None if z_all is None else z_all[idx]
            t, r, a, g = model.loss_and_grads(data[idx], cfg.lambda_aux, mode, z=zb)
            _check_finite(t, "joint", epoch, b)
            adam_step(params, g, state)
            k = len(idx)
            tot, rec, aux = tot + t * k, rec + r * k, aux + a * k
        if epoch % cfg.log_every == 0 or epoch == cfg.epochs:
            hist.records.append(EpochRecord(epoch, tot / n, rec / n, aux / n))
            log.debug("joint epoch %d loss %.3e", epoch, tot / n)
    return hist


def train(model: IdrpModel, data: np.ndarray, cfg: TrainConfig) -> TrainHistory:
    """Predictor pretraining followed by joint training, as one history."""
    hist = pretrain_predictor(model, data, cfg)
    hist.extend(train_joint(model, data, cfg), offset=cfg.pretrain_epochs)
    return hist


# noise analysis -------------------------------------------------------------


@dataclass
class NoiseRecord:
    sample_id: int
    aux_err: float
    recon_err: float
    psnr_db: float


def noise_analysis(model: IdrpModel, data, oracle: bool = False, peak: float = 1.0):
    """Per-sample predictor error and the reconstruction error it induces.

    Returns ``(records, summary)`` where summary holds mean/max of both error
    stages.  ``oracle`` substitutes the true suffix for the prediction.
    """
    x, _ = as_batch(data)
    zc, za = model.encode(x)
    za_hat = za if oracle else model.predictor.forward(zc)[0]
    x_hat = model.reconstruct(zc, za_hat)
    aux_err = np.sum((za - za_hat) ** 2, axis=1)
    recon_err = np.sum((x - x_hat) ** 2, axis=1)
    records = [
        NoiseRecord(i, float(a), float(r), psnr_from_mse(float(r) / model.d, peak))
        for i, (a, r) in enumerate(zip(aux_err, recon_err))
    ]
    summary = {
        "aux_err_mean": float(aux_err.mean()),
        "aux_err_max": float(aux_err.max()),
        "recon_err_mean": float(recon_err.mean()),
        "recon_err_max": float(recon_err.max()),
    }
    return records, summary


def write_noise_csv(records, path: Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["sample_id", "aux_err", "recon_err", "psnr_db"])
        for r in records:
            w.writerow([r.sample_id, repr(r.aux_err), repr(r.recon_err), "inf" if np.isinf(r.psnr_db) else repr(r.psnr_db)])
