"""Encoder/decoder assembly, shape contracts, checkpoint round-trips."""

import numpy as np
import pytest

from txir import blocks as B
from txir import tensor as T
from txir.gradcheck import gradcheck
from txir.network import (ModelConfig, encoder_forward, head_forward, init_model,
                          load_checkpoint, model_forward, pcsid_forward,
                          save_checkpoint)
from txir.tensor import Tensor, ShapeError, TxirError


@pytest.fixture
def small_config():
    return ModelConfig(base_channels=8, text_dim=16, input_size=(16, 16))


class TestEncoder:
    def test_shape_ladder(self):
        config = ModelConfig(base_channels=16, text_dim=32, input_size=(64, 64))
        params = init_model(config, seed=0)
        feats = encoder_forward(Tensor(np.random.default_rng(0).random((1, 1, 64, 64),
                                                                       dtype=np.float32)), params)
        assert [f.shape for f in feats] == [(1, 16, 64, 64), (1, 32, 32, 32),
                                            (1, 64, 16, 16), (1, 128, 8, 8)]

    def test_zero_input_zero_pyramid(self, small_config):
        params = init_model(small_config, seed=1)  # biases init to zero
        feats = encoder_forward(Tensor(np.zeros((2, 1, 16, 16), dtype=np.float32)), params)
        for f in feats:
            assert np.all(f.data == 0.0)

    def test_indivisible_size_rejected(self, small_config):
        params = init_model(small_config, seed=0)
        with pytest.raises(ShapeError):
            encoder_forward(Tensor(np.zeros((1, 1, 12, 12), dtype=np.float32)), params)

    def test_two_stage_gradcheck(self):
        config = ModelConfig(base_channels=4, text_dim=8, input_size=(8, 8))
        with T.float64_mode():
            params = init_model(config, seed=2)
        img = Tensor(np.random.default_rng(3).random((1, 1, 8, 8)))

        def f(x):
            feats = encoder_forward(x, params)
            return T.tensor_sum(T.sigmoid(feats[1]))

        assert gradcheck(f, [img], max_probes_per_input=16) < 1e-4


class TestPcsid:
    def test_output_shape(self, small_config):
        params = init_model(small_config, seed=0)
        rng = np.random.default_rng(1)
        img = Tensor(rng.random((2, 1, 16, 16), dtype=np.float32))
        e = Tensor(rng.standard_normal((2, 16)).astype(np.float32))
        feats = encoder_forward(img, params)
        out = pcsid_forward(feats, e, params)
        assert out.shape == (2, 8, 16, 16)

    def test_zero_tgsi_equals_identity_wiring(self, small_config):
        params = init_model(small_config, seed=4)
        for p in params.tgsi:
            for lp in (p.ffn.fc1, p.ffn.fc2):
                lp.w.data = np.zeros_like(lp.w.data)
                lp.b.data = np.zeros_like(lp.b.data)
        rng = np.random.default_rng(2)
        img = Tensor(rng.random((1, 1, 16, 16), dtype=np.float32))
        e = Tensor(rng.standard_normal((1, 16)).astype(np.float32))
        feats = encoder_forward(img, params)
        with_zero = pcsid_forward(feats, e, params)
        identity = pcsid_forward(feats, e, params, B.ForwardSwitches(tgsi="identity"))
        np.testing.assert_array_equal(with_zero.data, identity.data)

    def test_stage_recomposition_oracle(self, small_config):
        params = init_model(small_config, seed=5)
        rng = np.random.default_rng(3)
        img = Tensor(rng.random((1, 1, 16, 16), dtype=np.float32))
        e = Tensor(rng.standard_normal((1, 16)).astype(np.float32))
        feats = encoder_forward(img, params)
        full = pcsid_forward(feats, e, params)

        x = B.dpm_forward(feats[3], params.bottleneck_dpm)
        for skip, tgfa_p, tgsi_p in zip((feats[2], feats[1], feats[0]),
                                        params.tgfa, params.tgsi):
            x = B.tgsi_forward(B.tgfa_forward(skip, x, e, tgfa_p), e, tgsi_p)
        np.testing.assert_array_equal(full.data, x.data)


class TestHead:
    def test_zero_head_gives_half(self, small_config):
        params = init_model(small_config, seed=0)
        params.head.w.data = np.zeros_like(params.head.w.data)
        params.head.b.data = np.zeros_like(params.head.b.data)
        d = Tensor(np.random.default_rng(0).standard_normal((1, 8, 4, 4)).astype(np.float32))
        out = head_forward(d, params)
        np.testing.assert_array_equal(out.data, np.full((1, 1, 4, 4), 0.5, dtype=np.float32))

    def test_output_bounds(self, small_config):
        params = init_model(small_config, seed=1)
        d = Tensor((np.random.default_rng(1).standard_normal((2, 8, 4, 4)) * 50)
                   .astype(np.float32))
        out = head_forward(d, params)
        assert np.all(out.data >= 0.0) and np.all(out.data <= 1.0)


class TestModelForward:
    def test_deterministic(self, small_config):
        params = init_model(small_config, seed=6)
        rng = np.random.default_rng(4)
        img = rng.random((1, 1, 16, 16), dtype=np.float32)
        e = rng.standard_normal((1, 16)).astype(np.float32)
        with T.no_grad():
            o1 = model_forward(Tensor(img), Tensor(e), params)
            o2 = model_forward(Tensor(img), Tensor(e), params)
        assert o1.data.tobytes() == o2.data.tobytes()

    def test_text_path_is_live(self, small_config):
        params = init_model(small_config, seed=7)
        rng = np.random.default_rng(5)
        img = Tensor(rng.random((1, 1, 16, 16), dtype=np.float32))
        e1 = Tensor(rng.standard_normal((1, 16)).astype(np.float32))
        e2 = Tensor(rng.standard_normal((1, 16)).astype(np.float32))
        with T.no_grad():
            o1 = model_forward(img, e1, params)
            o2 = model_forward(img, e2, params)
        assert not np.array_equal(o1.data, o2.data)

    def test_output_shape_and_range(self, small_config):
        params = init_model(small_config, seed=8)
        rng = np.random.default_rng(6)
        with T.no_grad():
            out = model_forward(Tensor(rng.random((3, 1, 16, 16), dtype=np.float32)),
                                Tensor(rng.standard_normal((3, 16)).astype(np.float32)),
                                params)
        assert out.shape == (3, 1, 16, 16)
        # mathematically strict (0,1); float32 saturation clamps to the ends
        assert np.all((out.data >= 0.0) & (out.data <= 1.0))


class TestCheckpoints:
    def test_save_load_save_byte_identical(self, small_config, tmp_path):
        params = init_model(small_config, seed=9)
        p1, p2 = tmp_path / "a.txck", tmp_path / "b.txck"
        save_checkpoint(params, small_config, p1)
        loaded, config = load_checkpoint(p1)
        save_checkpoint(loaded, config, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_corrupt_magic_rejected(self, small_config, tmp_path):
        path = tmp_path / "c.txck"
        save_checkpoint(init_model(small_config, seed=0), small_config, path)
        blob = bytearray(path.read_bytes())
        blob[:4] = b"XXXX"
        path.write_bytes(bytes(blob))
        with pytest.raises(TxirError):
            load_checkpoint(path)

    def test_loaded_forward_bit_exact(self, small_config, tmp_path):
        params = init_model(small_config, seed=10)
        path = tmp_path / "d.txck"
        save_checkpoint(params, small_config, path)
        loaded, config = load_checkpoint(path)
        rng = np.random.default_rng(7)
        img = Tensor(rng.random((1, 1, 16, 16), dtype=np.float32))
        e = Tensor(rng.standard_normal((1, 16)).astype(np.float32))
        with T.no_grad():
            a = model_forward(img, e, params)
            b = model_forward(img, e, loaded)
        assert a.data.tobytes() == b.data.tobytes()

    def test_config_mismatch_diagnosed(self, small_config, tmp_path):
        path = tmp_path / "e.txck"
        save_checkpoint(init_model(small_config, seed=0), small_config, path)
        # truncate one tensor entry: parameter set no longer matches
        blob = path.read_bytes()
        path.write_bytes(blob[:len(blob) - 40])
        with pytest.raises(TxirError):
            load_checkpoint(path)

    def test_concat_fusion_config_round_trip(self, tmp_path):
        config = ModelConfig(base_channels=8, text_dim=16, input_size=(16, 16),
                             fusion="concat")
        params = init_model(config, seed=1)
        path = tmp_path / "f.txck"
        save_checkpoint(params, config, path)
        loaded, back = load_checkpoint(path)
        assert back.fusion == "concat"
        assert loaded.tgsi[0].concat_proj is not None


class TestConfigValidation:
    def test_divisibility_enforced(self):
        with pytest.raises(ShapeError):
            ModelConfig(base_channels=6)   # 6 % 4 != 0
        with pytest.raises(ShapeError):
            ModelConfig(base_channels=8, r=16)

    def test_json_round_trip(self):
        config = ModelConfig(base_channels=8, text_dim=64, input_size=(32, 32))
        assert ModelConfig.from_json(config.to_json()) == config
