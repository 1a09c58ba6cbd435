import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from apcm.diffcore import ContractError, RngStream, randomize_params
from apcm.idrp import (
    IdrpModel,
    ModelConfig,
    TrainConfig,
    TrainingDivergedError,
    compress,
    noise_analysis,
    pretrain_predictor,
    reconstruct,
    train,
    train_joint,
)
from apcm.predictor import PredictorNet, predict_aux
from apcm.verify import small_random_model


class TestPredictor:
    def test_untrained_predicts_zero(self):
        net = PredictorNet(3, 5, hidden=4, rng=RngStream(0))
        assert predict_aux(net, [0.3, -1.0, 2.0]).tolist() == [0.0] * 5

    def test_bias_only(self):
        net = PredictorNet(2, 3, hidden=4, rng=RngStream(0))
        net.out.b[:] = [1.0, -2.0, 0.5]
        z = np.random.default_rng(0).normal(size=(7, 2))
        assert np.array_equal(predict_aux(net, z), np.tile([1.0, -2.0, 0.5], (7, 1)))

    def test_input_length(self):
        with pytest.raises(ContractError):
            predict_aux(PredictorNet(3, 5, hidden=4), [1.0, 2.0])

    def test_hand_computed(self):
        net = PredictorNet(1, 1, hidden=1, rng=RngStream(0))
        net.inp.W[:] = [[1.0], [1.0]]
        net.inp.b[:] = 0.0
        net.out.W[:] = [[2.0]]
        net.out.b[:] = [0.5]
        sig = 1 / (1 + math.exp(-1.5))
        assert predict_aux(net, [1.5])[0] == pytest.approx(2 * 1.5 * sig * 1.5 + 0.5, abs=1e-12)


class TestCodec:
    def test_compress_length(self):
        model = IdrpModel(8, ModelConfig(m=3, n_layers=2, hidden=8, pred_hidden=8))
        assert compress(model, np.zeros(8)).shape == (3,)

    def test_identity_model_reconstruction(self):
        model = IdrpModel(8, ModelConfig(m=3, n_layers=2, hidden=8, pred_hidden=8), identity_perms=True)
        x = np.array([0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8])
        assert reconstruct(model, compress(model, x)).tolist() == [0.1, 0.2, 0.3, 0, 0, 0, 0, 0]

    def test_true_suffix_is_exact(self):
        model = small_random_model(seed=3)
        x = RngStream(3, "x").uniform(0, 1, (100, 8))
        zc, za = model.encode(x)
        per_sample = np.mean((model.reconstruct(zc, za) - x) ** 2, axis=1)
        assert per_sample.max() <= 1e-16

    def test_input_length_checks(self):
        model = small_random_model()
        with pytest.raises(ContractError):
            model.encode(np.zeros(7))
        with pytest.raises(ContractError):
            model.reconstruct(np.zeros(4))

    def test_config_invariants(self):
        with pytest.raises(ContractError):
            IdrpModel(8, ModelConfig(m=8))
        with pytest.raises(ContractError):
            IdrpModel(8, ModelConfig(m=0))

    @settings(max_examples=20, deadline=None)
    @given(arrays(np.float64, 8, elements=st.floats(0, 1)), st.integers(0, 50))
    def test_reconstruction_error_is_prediction_error_through_inverse(self, x, seed):
        model = small_random_model(seed=seed)
        zc, za = model.encode(x)
        za_hat = predict_aux(model.predictor, zc)
        # composing by hand: inverse of [zc, za_hat]
        by_hand, _ = model.encoder.inverse(np.concatenate([zc, za_hat])[None, :])
        assert np.array_equal(model.reconstruct(zc), by_hand[0])


class TestLoss:
    def test_hand_values_identity_model(self):
        model = IdrpModel(4, ModelConfig(m=2, n_layers=1, hidden=4, pred_hidden=4), identity_perms=True)
        x = np.array([[0.5, 0.5, 0.2, 0.4]])
        total, recon, aux = model.loss(x, lambda_aux=0.5)
        # predictor outputs zero: recon = (0.04 + 0.16) / 4, aux = (0.04 + 0.16) / 2
        assert recon == pytest.approx(0.05, abs=1e-15)
        assert aux == pytest.approx(0.1, abs=1e-15)
        assert total == pytest.approx(0.05 + 0.5 * 0.1, abs=1e-15)

    def test_zero_when_predictor_exact(self):
        model = IdrpModel(4, ModelConfig(m=2, n_layers=1, hidden=4, pred_hidden=4), identity_perms=True)
        model.predictor.out.b[:] = [0.2, 0.4]
        assert model.loss(np.array([[0.5, 0.5, 0.2, 0.4]])) == (0.0, 0.0, 0.0)

    def test_empty_batch(self):
        with pytest.raises(ContractError):
            small_random_model().loss(np.zeros((0, 8)))

    def test_predictor_grads_match_all_mode(self):
        model = small_random_model(seed=2)
        x = RngStream(2, "x").uniform(0, 1, (5, 8))
        _, _, _, g_all = model.loss_and_grads(x, 1.0, "all")
        _, _, _, g_pred = model.loss_and_grads(x, 1.0, "predictor")
        assert set(g_pred) == {k for k in g_all if k.startswith("pred.")}
        for k, v in g_pred.items():
            assert np.allclose(v, g_all[k], rtol=0, atol=1e-15)


def _tiny_problem():
    data = RngStream(5, "data").uniform(0.2, 0.8, (64, 8))
    return IdrpModel(8, ModelConfig(m=4, n_layers=2, hidden=16, pred_hidden=16), seed=1), data


class TestTraining:
    def test_pretrain_reduces_aux_only(self):
        model, data = _tiny_problem()
        flow_before = {k: v.copy() for k, v in model.flow_params().items()}
        hist = pretrain_predictor(model, data, TrainConfig(pretrain_epochs=40, epochs=0, batch_size=16, lr=1e-2))
        aux = hist.column("aux_mse")
        assert aux[-1] < aux[0]
        assert np.all(np.isnan(hist.column("recon_mse")))
        for k, v in model.flow_params().items():
            assert np.array_equal(v, flow_before[k])

    def test_joint_reduces_loss(self):
        model, data = _tiny_problem()
        hist = train(model, data, TrainConfig(pretrain_epochs=10, epochs=40, batch_size=16, lr=3e-3))
        joint = hist.records[10:]
        assert joint[0].epoch == 11 and hist.records[-1].epoch == 50
        assert joint[-1].total_loss < joint[0].total_loss

    def test_frozen_flow(self):
        model, data = _tiny_problem()
        flow_before = {k: v.copy() for k, v in model.flow_params().items()}
        train_joint(model, data, TrainConfig(pretrain_epochs=0, epochs=5, batch_size=16, train_flow=False))
        for k, v in model.flow_params().items():
            assert np.array_equal(v, flow_before[k])

    def test_deterministic(self):
        cfg = TrainConfig(pretrain_epochs=3, epochs=3, batch_size=16, seed=4)
        runs = []
        for _ in range(2):
            model, data = _tiny_problem()
            train(model, data, cfg)
            runs.append(model.params())
        for k in runs[0]:
            assert np.array_equal(runs[0][k], runs[1][k])

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_reported(self):
        model, data = _tiny_problem()
        model.predictor.out.b[:] = np.inf
        with pytest.raises(TrainingDivergedError, match="epoch 1, batch 0"):
            train_joint(model, data, TrainConfig(pretrain_epochs=0, epochs=1, batch_size=16))

    def test_config_validation(self):
        with pytest.raises(ContractError):
            TrainConfig(batch_size=0).validate()
        with pytest.raises(ContractError):
            TrainConfig(lr=0).validate()


class TestNoise:
    def test_oracle_is_exact(self):
        model = small_random_model(seed=1)
        x = RngStream(1, "x").uniform(0, 1, (20, 8))
        records, summary = noise_analysis(model, x, oracle=True)
        assert summary["aux_err_max"] == 0.0
        assert summary["recon_err_max"] <= 1e-14 * 8

    def test_untrained_identity_model(self):
        model = IdrpModel(4, ModelConfig(m=2, n_layers=1, hidden=4, pred_hidden=4), identity_perms=True)
        x = np.array([[0.5, 0.5, 0.2, 0.4], [1.0, 0.0, 0.0, 0.0]])
        records, summary = noise_analysis(model, x)
        assert records[0].aux_err == pytest.approx(0.2, abs=1e-15)
        assert records[0].recon_err == pytest.approx(0.2, abs=1e-15)
        assert math.isinf(records[1].psnr_db)
        assert summary["aux_err_mean"] == pytest.approx(0.1, abs=1e-15)

    def test_recon_bounded_by_lipschitz_growth(self):
        # identity couplings make the inverse an isometry, so both errors agree exactly
        model = IdrpModel(8, ModelConfig(m=3, n_layers=3, hidden=4, pred_hidden=4), seed=0)
        randomize_params(model.predictor_params(), RngStream(0, "p"), 0.5)
        x = RngStream(0, "x").uniform(0, 1, (10, 8))
        records, _ = noise_analysis(model, x)
        for r in records:
            assert r.recon_err == pytest.approx(r.aux_err, rel=1e-12)
