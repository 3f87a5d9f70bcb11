import numpy as np
import pytest

from tristream import gaussian, network
from tristream.datasets import PairedSample
from tristream.errors import ConfigError, DataError, ShapeError
from conftest import tiny_arch


class TestArchConfig:
    def test_desk_preset_chains(self):
        assert network.DESK_ARCH.image_h_chain() == [32, 16, 8]
        assert network.DESK_ARCH.signal_chain() == [2048, 1024, 512]

    def test_full_preset_flatten_widths(self):
        # 60000 -> 30000 -> 15000 -> 7500 at 64 channels
        assert network.FULL_ARCH.signal_chain() == [30000, 15000, 7500]
        assert network.FULL_ARCH.signal_flat() == 7500 * 64
        assert network.FULL_ARCH.image_h_chain() == [112, 56, 28]

    def test_degenerate_geometry_rejected(self):
        with pytest.raises(ConfigError):
            network.ArchConfig(image_h=4, image_w=4, signal_len=4096)
        with pytest.raises(ConfigError):
            network.ArchConfig(head_dropout=1.0)
        with pytest.raises(ConfigError):
            network.ArchConfig(channels=(4, 8))


class TestInitParams:
    def test_deterministic_per_seed(self):
        arch = tiny_arch()
        a = network.init_params(arch, 7)
        b = network.init_params(arch, 7)
        assert sorted(a) == sorted(b)
        for k in a:
            assert a[k].tobytes() == b[k].tobytes()
        c = network.init_params(arch, 8)
        assert any(a[k].tobytes() != c[k].tobytes() for k in a)

    def test_desk_conv3_output_is_8x8(self):
        assert network.DESK_ARCH.image_h_chain()[-1] == 8
        assert network.DESK_ARCH.image_w_chain()[-1] == 8
        spec = network.param_specs(network.DESK_ARCH)
        assert spec["cxr_encoder.fc_mu.weight"][0] == (16, 64 * 8 * 8)

    def test_all_tensors_present_and_finite(self):
        arch = tiny_arch()
        params = network.init_params(arch, 0)
        network.validate_params(arch, params)
        assert all(v.dtype == np.float32 for v in params.values())
        for name in network.HEAD_NAMES:
            assert name in params


class TestEncodeDecode:
    def setup_method(self):
        self.arch = tiny_arch()
        self.net = network.Network.initialized(self.arch, seed=1)
        rng = np.random.default_rng(3)
        self.image = rng.random((12, 12, 1)).astype(np.float32)
        self.signal = rng.standard_normal((1, 16)).astype(np.float32)

    def test_encode_cxr_shape_contract(self):
        q = self.net.encode_cxr(self.image)
        assert q.mean.shape == (5,) and q.log_var.shape == (5,)

    def test_zero_image_zero_bias_gives_zero_mean(self):
        q = self.net.encode_cxr(np.zeros((12, 12, 1), dtype=np.float32))
        np.testing.assert_array_equal(q.mean, np.zeros(5))
        np.testing.assert_array_equal(q.log_var, np.zeros(5))

    def test_encode_deterministic(self):
        a = self.net.encode_cxr(self.image)
        b = self.net.encode_cxr(self.image)
        assert a.mean.tobytes() == b.mean.tobytes()

    def test_out_of_range_pixels_rejected(self):
        bad = self.image.copy()
        bad[0, 0, 0] = 1.5
        with pytest.raises(DataError):
            self.net.encode_cxr(bad)

    def test_encode_ecg_shapes_and_determinism(self):
        q = self.net.encode_ecg(self.signal)
        assert q.mean.shape == (5,)
        assert self.net.encode_ecg(self.signal).mean.tobytes() == q.mean.tobytes()
        with pytest.raises(ShapeError):
            self.net.encode_ecg(np.zeros((1, 17), dtype=np.float32))

    def test_decode_cxr_shape_and_range(self):
        z = np.random.default_rng(4).standard_normal(5).astype(np.float32)
        out = self.net.decode_cxr(z)
        assert out.shape == (12, 12, 1)
        assert np.all(out > 0) and np.all(out < 1)

    def test_decode_ecg_shape_and_determinism(self):
        z = np.random.default_rng(5).standard_normal(5).astype(np.float32)
        out = self.net.decode_ecg(z)
        assert out.shape == (1, 16)
        assert self.net.decode_ecg(z).tobytes() == out.tobytes()

    @pytest.mark.parametrize("kw", [
        dict(),  # 12x12 / 16
        dict(image_h=17, image_w=17, signal_len=21),  # odd extents
        dict(image_h=24, image_w=16, signal_len=100),
    ])
    def test_encoder_decoder_shape_closure(self, kw):
        arch = tiny_arch(**kw)
        net = network.Network.initialized(arch, seed=2)
        rng = np.random.default_rng(6)
        image = rng.random((arch.image_h, arch.image_w, 1)).astype(np.float32)
        signal = rng.standard_normal((1, arch.signal_len)).astype(np.float32)
        q = net.encode_cxr(image)
        z = gaussian.reparameterize(q, rng.standard_normal(arch.latent_dim))
        assert net.decode_cxr(z.astype(np.float32)).shape == image.shape
        qg = net.encode_ecg(signal)
        zg = gaussian.reparameterize(qg, rng.standard_normal(arch.latent_dim))
        assert net.decode_ecg(zg.astype(np.float32)).shape == signal.shape


class TestClassify:
    def setup_method(self):
        self.arch = tiny_arch()
        self.net = network.Network.initialized(self.arch, seed=1)
        self.feats = np.random.default_rng(7).standard_normal(5).astype(np.float32)

    def test_eval_mode_deterministic(self):
        a = self.net.classify(self.feats)
        b = self.net.classify(self.feats)
        assert a == b

    def test_zero_weights_give_fc2_bias(self):
        params = {k: np.zeros_like(v) for k, v in self.net.params.items()}
        params["head.fc2.bias"] = np.array([0.37], dtype=np.float32)
        net = network.Network(self.arch, params, validate=False)
        assert net.classify(self.feats) == pytest.approx(0.37, rel=1e-6)

    def test_train_mode_reproducible_per_seed(self):
        a = self.net.classify(self.feats, train_mode=True,
                              dropout_rng=np.random.default_rng(42))
        b = self.net.classify(self.feats, train_mode=True,
                              dropout_rng=np.random.default_rng(42))
        c = self.net.classify(self.feats, train_mode=True,
                              dropout_rng=np.random.default_rng(43))
        assert a == b
        assert a != c  # almost surely under a different mask

    def test_train_mode_without_rng_rejected(self):
        with pytest.raises(ConfigError):
            self.net.classify(self.feats, train_mode=True)


class TestExtractFeatures:
    def setup_method(self):
        self.arch = tiny_arch()
        self.net = network.Network.initialized(self.arch, seed=1)
        rng = np.random.default_rng(8)
        self.samples = [
            PairedSample(id=f"p{i}", image=rng.random((12, 12, 1)).astype(np.float32),
                         signal=rng.standard_normal((1, 16)).astype(np.float32))
            for i in range(5)
        ]

    def test_joint_mode_shape(self):
        feats = self.net.extract_features(self.samples, "joint")
        assert feats.shape == (5, 5)

    def test_cxr_mode_equals_posterior_mean(self):
        feats = self.net.extract_features(self.samples, "cxr")
        q = self.net.encode_cxr(self.samples[2].image)
        np.testing.assert_allclose(feats[2], q.mean, rtol=1e-6)

    def test_joint_mode_equals_fused_composition(self):
        feats = self.net.extract_features(self.samples, "joint")
        s = self.samples[1]
        fused = gaussian.poe_fuse([self.net.encode_cxr(s.image),
                                   self.net.encode_ecg(s.signal)], include_prior=True)
        np.testing.assert_allclose(feats[1], fused.mean, rtol=1e-5, atol=1e-6)

    def test_joint_degrades_to_unimodal_with_prior(self):
        lone = PairedSample(id="only-img", image=self.samples[0].image, signal=None)
        feats = self.net.extract_features([lone], "joint")
        fused = gaussian.poe_fuse([self.net.encode_cxr(lone.image)], include_prior=True)
        np.testing.assert_allclose(feats[0], fused.mean, rtol=1e-5, atol=1e-6)

    def test_missing_modality_for_unimodal_mode_rejected(self):
        lone = PairedSample(id="only-img", image=self.samples[0].image, signal=None)
        with pytest.raises(DataError, match="only-img"):
            self.net.extract_features([lone], "ecg")

    def test_unknown_mode_rejected(self):
        with pytest.raises(ConfigError):
            self.net.extract_features(self.samples, "both")
