"""Train a small codec, then store and recall a few samples through the memory bank."""
import numpy as np

from apcm.data import ManifoldSpec, gen_manifold
from apcm.idrp import IdrpModel, ModelConfig, TrainConfig, train
from apcm.membank import MemoryBank
from apcm.metrics import eval_metrics

if __name__ == "__main__":
    x = gen_manifold(ManifoldSpec(n=512, d=16, k=2, seed=1, freq_scale=3.0)).values
    model = IdrpModel(16, ModelConfig(m=4, n_layers=4, hidden=32, pred_hidden=32), seed=1)
    train(model, x, TrainConfig(pretrain_epochs=200, epochs=100, batch_size=64, lr=3e-3))

    bank = MemoryBank(max_mem=3, m=model.m)
    for i in (0, 1, 2):
        print(f"write sample {i} -> slot {bank.write(model, x[i])}, aff = {bank.aff.tolist()}")
    for i in (1, 1, 2, 0, 0):
        res = bank.read(model, x[i])
        rep = eval_metrics(x[i], res.x_mem)
        print(f"read sample {i} -> slot {res.slot} (sim {res.similarity:.4f}), {rep.listing('recall')}, aff = {bank.aff.tolist()}")
    # slot 2 has been read least often, so the next write evicts it
    print(f"write sample 3 -> slot {bank.write(model, x[3])}, aff = {bank.aff.tolist()}")
    print(f"mean-vector write of samples 4-7 -> slot {bank.write(model, x[4:8])}, aff = {bank.aff.tolist()}")
    assert np.all(bank.aff > 0)
