import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tristream import layers
from tristream.errors import NumericError, ShapeError


class TestConvOutLen:
    def test_stride2_halving_chain(self):
        # 224 -> 112 -> 56 -> 28 with k3 s2 p1
        assert layers.conv_out_len(224, 3, 2, 1) == 112
        assert layers.conv_out_len(112, 3, 2, 1) == 56
        assert layers.conv_out_len(56, 3, 2, 1) == 28

    def test_identity_convolution(self):
        for n in (1, 5, 17):
            assert layers.conv_out_len(n, 1, 1, 0) == n

    def test_long_signal(self):
        assert layers.conv_out_len(60000, 3, 2, 1) == 30000

    def test_degenerate_output_rejected(self):
        with pytest.raises(ShapeError, match="degenerate"):
            layers.conv_out_len(2, 7, 1, 0)

    def test_bad_arguments_rejected(self):
        with pytest.raises(ShapeError):
            layers.conv_out_len(0, 3, 2, 1)
        with pytest.raises(ShapeError):
            layers.conv_out_len(8, 3, 0, 1)


class TestForward:
    def test_conv2d_shape_contract(self):
        spec = layers.LayerSpec("conv2d", 1, 16, kernel=3, stride=2, padding=1,
                                activation="relu")
        rng = np.random.default_rng(0)
        w = rng.standard_normal(spec.weight_shape()).astype(np.float32)
        b = np.zeros(16, dtype=np.float32)
        x = rng.random((224, 224, 1)).astype(np.float32)
        y = layers.forward(spec, w, b, x)
        assert y.shape == (112, 112, 16)

    def test_fc_identity(self):
        spec = layers.LayerSpec("fc", 7, 7)
        x = np.random.default_rng(1).standard_normal(7).astype(np.float32)
        y = layers.forward(spec, np.eye(7, dtype=np.float32),
                           np.zeros(7, dtype=np.float32), x)
        np.testing.assert_array_equal(y, x)

    def test_tconv1d_inverts_conv1d_length(self):
        spec = layers.LayerSpec("tconv1d", 2, 1, kernel=3, stride=2, padding=1,
                                output_padding=1)
        rng = np.random.default_rng(2)
        w = rng.standard_normal(spec.weight_shape()).astype(np.float32)
        b = np.zeros(1, dtype=np.float32)
        x = rng.standard_normal((7500, 2)).astype(np.float32)
        y = layers.forward(spec, w, b, x)
        assert y.shape == (15000, 1)

    def test_shape_error_names_axis(self):
        spec = layers.LayerSpec("conv2d", 3, 4, kernel=3, stride=2, padding=1)
        w = np.zeros(spec.weight_shape(), dtype=np.float32)
        b = np.zeros(4, dtype=np.float32)
        with pytest.raises(ShapeError, match="axis 2"):
            layers.forward(spec, w, b, np.zeros((8, 8, 1), dtype=np.float32))

    def test_nonfinite_input_rejected(self):
        spec = layers.LayerSpec("fc", 3, 2)
        w = np.zeros((2, 3), dtype=np.float32)
        b = np.zeros(2, dtype=np.float32)
        x = np.array([1.0, np.nan, 0.0], dtype=np.float32)
        with pytest.raises(NumericError):
            layers.forward(spec, w, b, x)

    def test_forward_is_pure_and_deterministic(self):
        spec = layers.LayerSpec("conv1d", 2, 3, kernel=3, stride=2, padding=1,
                                activation="sigmoid")
        rng = np.random.default_rng(3)
        w = rng.standard_normal(spec.weight_shape()).astype(np.float32)
        b = rng.standard_normal(3).astype(np.float32)
        x = rng.standard_normal((20, 2)).astype(np.float32)
        y1 = layers.forward(spec, w, b, x)
        y2 = layers.forward(spec, w, b, x)
        assert y1.tobytes() == y2.tobytes()


class TestShapeRoundTrip:
    @pytest.mark.parametrize("n", [8, 9, 16, 17, 60000, 224])
    def test_tconv_restores_every_invertible_extent(self, n):
        down = layers.conv_out_len(n, 3, 2, 1)
        for extra in (0, 1):
            restored = layers.tconv_out_len(down, 3, 2, 1, extra)
            if restored == n:
                break
        assert restored == n


class TestActivations:
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=64))
    def test_relu_nonnegative(self, xs):
        out = layers.relu(np.array(xs))
        assert np.all(out >= 0)

    @given(st.lists(st.floats(-30, 30), min_size=1, max_size=64))
    def test_sigmoid_in_open_unit_interval(self, xs):
        # float64 saturates to exactly 0/1 beyond |x| ~ 37; inside that range
        # the open-interval property must hold
        out = layers.sigmoid(np.array(xs))
        assert np.all(out > 0) and np.all(out < 1)

    def test_sigmoid_saturation_stays_in_closed_interval(self):
        out = layers.sigmoid(np.array([-1e4, 1e4]))
        assert out[0] >= 0.0 and out[1] <= 1.0


class TestGradientCheck:
    def test_quadratic_closed_form(self):
        def f(x):
            return float(np.sum(x * x)), 2.0 * x

        x = np.random.default_rng(4).standard_normal(10)
        assert layers.gradient_check(f, x, eps=1e-5) < 1e-6

    def test_constant_function(self):
        def f(x):
            return 3.5, np.zeros_like(x)

        assert layers.gradient_check(f, np.ones(5), eps=1e-4) == 0.0

    def test_composite_conv_relu_fc(self):
        rng = np.random.default_rng(5)
        conv = layers.LayerSpec("conv2d", 1, 2, kernel=3, stride=2, padding=1,
                                activation="relu")
        wc = rng.standard_normal(conv.weight_shape())
        bc = rng.uniform(0.05, 0.15, 2)  # keep pre-activations off the relu kink
        wf = rng.standard_normal(2 * 16)

        def f(x):
            xcf = x.reshape(1, 1, 8, 8)
            out = layers.forward_batch(conv, wc, bc, xcf)
            val = float(out.reshape(-1) @ wf)
            gx, _, _ = layers.backward_batch(conv, wc, xcf, out, wf.reshape(out.shape))
            return val, gx.reshape(x.shape)

        x = rng.standard_normal(64)
        assert layers.gradient_check(f, x, eps=1e-4) < 1e-4

    def test_nonfinite_value_rejected(self):
        def f(x):
            return float("nan"), np.zeros_like(x)

        with pytest.raises(NumericError):
            layers.gradient_check(f, np.ones(3))


class TestLayerGradientSoundness:
    @pytest.mark.parametrize("kind,shape", [
        ("conv1d", (8,)), ("conv2d", (7, 6)), ("tconv1d", (5,)), ("tconv2d", (4, 5)),
        ("fc", None),
    ])
    def test_every_layer_kind(self, kind, shape):
        rng = np.random.default_rng(6)
        if kind == "fc":
            spec = layers.LayerSpec("fc", 6, 4, activation="relu")
            x = rng.standard_normal((2, 6))
        else:
            spec = layers.LayerSpec(kind, 2, 3, kernel=3, stride=2, padding=1,
                                    activation="relu",
                                    output_padding=1 if kind.startswith("t") else 0)
            x = rng.standard_normal((2, 2) + shape)
        w = rng.standard_normal(spec.weight_shape())
        b = rng.uniform(0.05, 0.15, spec.bias_shape())
        gy_shape = layers.forward_batch(spec, w, b, x).shape
        gy = rng.standard_normal(gy_shape)

        def f(xx):
            out = layers.forward_batch(spec, w, b, xx)
            gx, _, _ = layers.backward_batch(spec, w, xx, out, gy)
            return float((out * gy).sum()), gx

        assert layers.gradient_check(f, x, eps=1e-5) < 1e-4

    def test_weight_and_bias_grads(self):
        rng = np.random.default_rng(7)
        spec = layers.LayerSpec("conv2d", 2, 3, kernel=3, stride=2, padding=1,
                                activation="sigmoid")
        x = rng.standard_normal((2, 2, 6, 6))
        w0 = rng.standard_normal(spec.weight_shape())
        b0 = rng.standard_normal(spec.bias_shape())
        gy = rng.standard_normal(layers.forward_batch(spec, w0, b0, x).shape)

        def fw(w):
            out = layers.forward_batch(spec, w, b0, x)
            _, gw, _ = layers.backward_batch(spec, w, x, out, gy)
            return float((out * gy).sum()), gw

        def fb(b):
            out = layers.forward_batch(spec, w0, b, x)
            _, _, gb = layers.backward_batch(spec, w0, x, out, gy)
            return float((out * gy).sum()), gb

        assert layers.gradient_check(fw, w0, eps=1e-5) < 1e-4
        assert layers.gradient_check(fb, b0, eps=1e-5) < 1e-4


class TestLayerSpecValidation:
    def test_invalid_specs_rejected(self):
        with pytest.raises(ShapeError):
            layers.LayerSpec("conv3d", 1, 1)
        with pytest.raises(ShapeError):
            layers.LayerSpec("conv2d", 1, 1, kernel=0)
        with pytest.raises(ShapeError):
            layers.LayerSpec("conv2d", 1, 1, stride=0)
        with pytest.raises(ShapeError):
            layers.LayerSpec("conv2d", 1, 1, padding=-1)
        with pytest.raises(ShapeError):
            layers.LayerSpec("tconv2d", 1, 1, stride=2, output_padding=2)
        with pytest.raises(ShapeError):
            layers.LayerSpec("fc", 1, 1, activation="tanh")
