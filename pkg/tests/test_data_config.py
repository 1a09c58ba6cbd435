import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from apcm import checkpoint
from apcm.config import ConfigError, RunConfig, apply_override, config_from_dict, load_config
from apcm.data import (
    DataFormatError,
    Dataset,
    ManifoldSpec,
    gen_manifold,
    load_any,
    load_csv_matrix,
    load_pgm,
    pad_even,
    parse_pgm,
    save_csv_matrix,
    save_pgm,
    split,
    strip_pad,
)
from apcm.diffcore import ContractError, RngStream
from apcm.membank import MemoryBank
from apcm.pca import pca_fit
from apcm.verify import small_random_model


def pgm_bytes(w, h, maxval, pixels):
    return f"P5\n{w} {h}\n{maxval}\n".encode() + bytes(pixels)


class TestPgm:
    def test_single_black_pixel(self, tmp_path):
        (tmp_path / "a.pgm").write_bytes(pgm_bytes(1, 1, 255, [0]))
        ds = load_pgm(tmp_path / "a.pgm")
        assert ds.values.tolist() == [[0.0]] and ds.original_shape == (1, 1)

    def test_mid_grey(self, tmp_path):
        (tmp_path / "a.pgm").write_bytes(pgm_bytes(1, 1, 255, [128]))
        assert load_pgm(tmp_path / "a.pgm").values[0, 0] == pytest.approx(0.5019608, abs=1e-7)

    def test_comments_and_shape(self):
        pixels, maxval = parse_pgm(b"P5 # c\n3 # w\n2\n255\n" + bytes(range(6)))
        assert maxval == 255 and pixels.tolist() == [[0, 1, 2], [3, 4, 5]]

    def test_sixteen_bit(self):
        pixels, _ = parse_pgm(b"P5\n1 1\n65535\n" + bytes([1, 2]))
        assert pixels[0, 0] == 258

    def test_bad_magic(self):
        with pytest.raises(DataFormatError, match="byte 0"):
            parse_pgm(b"P2\n1 1\n255\n0")

    def test_truncated_payload_offset(self):
        with pytest.raises(DataFormatError, match="byte 13"):
            parse_pgm(b"P5\n2 2\n255\n" + bytes([1, 2]))

    def test_malformed_header(self):
        with pytest.raises(DataFormatError, match="byte"):
            parse_pgm(b"P5\nx 2\n255\n")

    def test_save_rounding(self, tmp_path):
        save_pgm(np.array([[1.0, 0.0, 0.5]]), tmp_path / "o.pgm")
        pixels, _ = parse_pgm((tmp_path / "o.pgm").read_bytes())
        assert pixels.tolist() == [[255, 0, 128]]

    def test_save_rejects_out_of_range(self, tmp_path):
        with pytest.raises(DataFormatError):
            save_pgm(np.array([[1.2]]), tmp_path / "o.pgm")

    @settings(max_examples=25, deadline=None)
    @given(arrays(np.float64, (3, 4), elements=st.floats(0, 1)), st.sampled_from([255, 1023, 65535]))
    def test_round_trip_quantization(self, img, maxval):
        import tempfile, os
        with tempfile.TemporaryDirectory() as d:
            p = os.path.join(d, "x.pgm")
            save_pgm(img, p, maxval=maxval)
            back = load_pgm(p).values.reshape(3, 4)
        assert np.max(np.abs(back - img)) <= 1 / (2 * maxval) + 1e-12

    def test_directory_loader(self, tmp_path):
        for i in range(3):
            save_pgm(np.full((2, 2), i / 4), tmp_path / f"im{i}.pgm")
        ds = load_any(tmp_path)
        assert ds.n == 3 and ds.d == 4 and ds.original_shape == (2, 2)


class TestCsv:
    def test_zeros(self, tmp_path):
        (tmp_path / "z.csv").write_text("0,0,0\n0,0,0\n")
        ds = load_csv_matrix(tmp_path / "z.csv")
        assert (ds.n, ds.d) == (2, 3)

    def test_ragged(self, tmp_path):
        (tmp_path / "r.csv").write_text("0,0,0\n0,0\n")
        with pytest.raises(DataFormatError, match="line 2"):
            load_csv_matrix(tmp_path / "r.csv")

    def test_non_numeric(self, tmp_path):
        (tmp_path / "n.csv").write_text("0,0\n0,abc\n")
        with pytest.raises(DataFormatError, match="line 2"):
            load_csv_matrix(tmp_path / "n.csv")

    def test_out_of_range_is_error_not_clamp(self, tmp_path):
        (tmp_path / "o.csv").write_text("0.5,1.5\n")
        with pytest.raises(DataFormatError, match="line 1"):
            load_csv_matrix(tmp_path / "o.csv")

    def test_header(self, tmp_path):
        (tmp_path / "h.csv").write_text("a,b\n0.1,0.2\n")
        assert load_csv_matrix(tmp_path / "h.csv", header=True).values.tolist() == [[0.1, 0.2]]

    @settings(max_examples=25, deadline=None)
    @given(arrays(np.float64, (4, 3), elements=st.floats(0, 1)))
    def test_round_trip(self, values):
        import tempfile, os
        with tempfile.TemporaryDirectory() as d:
            p = os.path.join(d, "x.csv")
            save_csv_matrix(values, p)
            back = load_csv_matrix(p).values
        assert np.array_equal(back, values)


class TestGenerators:
    @pytest.mark.parametrize("kind", ["sinusoidal", "blobs"])
    @pytest.mark.parametrize("seed", [0, 1, 99])
    def test_bounds_and_reproducible(self, kind, seed):
        spec = ManifoldSpec(n=64, d=64, k=2, seed=seed, kind=kind)
        a, b = gen_manifold(spec), gen_manifold(spec)
        assert a.values.min() >= 0 and a.values.max() <= 1
        assert np.array_equal(a.values, b.values)

    def test_k_must_be_below_d(self):
        with pytest.raises(ContractError):
            gen_manifold(ManifoldSpec(n=4, d=4, k=4))

    def test_genuinely_nonlinear(self):
        # PCA(m=1) residual on seeds 0-3 is 0.028-0.037 with the default frequency scale
        ds = gen_manifold(ManifoldSpec(n=512, d=8, k=1, seed=0))
        model = pca_fit(ds.values, 1)
        resid = np.mean((model.reconstruct(model.compress(ds.values)) - ds.values) ** 2)
        assert resid > 1e-3


class TestSplit:
    def test_sizes_and_union(self):
        ds = Dataset(np.linspace(0, 1, 10)[:, None])
        tr, te = split(ds, 0.5, 3)
        assert (tr.n, te.n) == (5, 5)
        assert sorted(np.concatenate([tr.values, te.values])[:, 0].tolist()) == ds.values[:, 0].tolist()

    def test_reproducible(self):
        ds = Dataset(np.linspace(0, 1, 10)[:, None])
        assert np.array_equal(split(ds, 0.3, 7)[0].values, split(ds, 0.3, 7)[0].values)

    def test_bad_fraction(self):
        with pytest.raises(ContractError):
            split(Dataset(np.zeros((4, 2))), 1.0, 0)


class TestPadding:
    def test_odd_padded_and_stripped(self):
        padded, d = pad_even(np.ones((2, 3)))
        assert padded.shape == (2, 4) and d == 3 and padded[:, 3].tolist() == [0, 0]
        assert strip_pad(padded, d).shape == (2, 3)

    def test_even_untouched(self):
        x = np.ones((2, 4))
        assert pad_even(x)[0] is x

    def test_dataset_rejects_out_of_range(self):
        with pytest.raises(DataFormatError):
            Dataset(np.array([[1.5]]))


class TestConfig:
    def test_defaults_validate(self):
        cfg = config_from_dict({})
        assert cfg.model.n_layers == 6 and cfg.model.hidden == 256 and cfg.model.pred_hidden == 256

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="bogus"):
            config_from_dict({"model": {"bogus": 1}})

    def test_type_errors(self):
        with pytest.raises(ConfigError):
            config_from_dict({"train": {"epochs": "ten"}})
        with pytest.raises(ConfigError):
            config_from_dict({"train": {"train_flow": 1}})

    def test_invariants_checked(self):
        with pytest.raises(ConfigError):
            config_from_dict({"model": {"m": 0}})
        with pytest.raises(ConfigError):
            config_from_dict({"data": {"train_fraction": 1.5}})

    def test_override(self):
        raw = {}
        apply_override(raw, "train.epochs=5")
        apply_override(raw, "data.generator.kind=blobs")
        cfg = config_from_dict(raw)
        assert cfg.train.epochs == 5 and cfg.data.generator.kind == "blobs"

    def test_round_trip_file(self, tmp_path):
        cfg = RunConfig()
        (tmp_path / "c.json").write_text(json.dumps(cfg.to_dict()))
        assert load_config(tmp_path / "c.json") == cfg


class TestCheckpoint:
    def test_idrp_round_trip_bit_exact(self, tmp_path):
        model = small_random_model(seed=4)
        checkpoint.save(checkpoint.idrp_to_doc(model), tmp_path / "c.json")
        again = checkpoint.idrp_from_doc(checkpoint.load(tmp_path / "c.json"))
        x = RngStream(4, "x").uniform(0, 1, (10, 8))
        assert np.array_equal(model.reconstruct(model.compress(x)), again.reconstruct(again.compress(x)))
        assert [p.perm.tolist() for p in model.encoder.perms] == [p.perm.tolist() for p in again.encoder.perms]

    def test_save_is_byte_stable(self, tmp_path):
        model = small_random_model(seed=4)
        checkpoint.save(checkpoint.idrp_to_doc(model), tmp_path / "a.json")
        again = checkpoint.idrp_from_doc(checkpoint.load(tmp_path / "a.json"))
        checkpoint.save(checkpoint.idrp_to_doc(again), tmp_path / "b.json")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_pca_and_bank(self, tmp_path):
        pca = pca_fit(RngStream(0).uniform(0, 1, (10, 4)), 2)
        checkpoint.save(checkpoint.pca_to_doc(pca), tmp_path / "p.json")
        back = checkpoint.pca_from_doc(checkpoint.load(tmp_path / "p.json"))
        assert np.array_equal(back.components, pca.components)
        bank = MemoryBank(3, 2)
        bank.store(np.array([0.1, 0.2]))
        checkpoint.save(checkpoint.bank_to_doc(bank), tmp_path / "b.json")
        assert checkpoint.bank_from_doc(checkpoint.load(tmp_path / "b.json")).aff.tolist() == [1, 0, 0]

    def test_bad_version(self, tmp_path):
        doc = checkpoint.idrp_to_doc(small_random_model())
        doc["format_version"] = 99
        (tmp_path / "c.json").write_text(json.dumps(doc))
        with pytest.raises(checkpoint.CheckpointError):
            checkpoint.load(tmp_path / "c.json")

    def test_kind_mismatch(self):
        with pytest.raises(checkpoint.CheckpointError):
            checkpoint.pca_from_doc(checkpoint.idrp_to_doc(small_random_model()))
