import numpy as np
import pytest

from supercut.errors import NumericError, StructuralError
from supercut.nn import functional as F
from supercut.nn import finite_diff_check, load_arrays, optimizer_step, save_arrays
from supercut.nn.layers import BatchNorm2d, Conv2d, ConvBlock, ConvTranspose2d, Param


def direct_conv2d(x, w, b, stride, padding):
    """Loop-by-loop cross-correlation, used as an independent oracle."""
    bsz, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    y = np.zeros((bsz, cout, oh, ow))
    for n in range(bsz):
        for o in range(cout):
            for i in range(oh):
                for j in range(ow):
                    patch = xp[n, :, i * stride : i * stride + kh, j * stride : j * stride + kw]
                    y[n, o, i, j] = (patch * w[o]).sum() + (b[o] if b is not None else 0.0)
    return y


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class TestConv2d:
    def test_scalar(self):
        y = F.conv2d(np.array([[[[2.0]]]]), np.array([[[[3.0]]]]), np.zeros(1), padding=0)
        assert y.shape == (1, 1, 1, 1)
        assert y[0, 0, 0, 0] == 6.0

    def test_ones_padded(self):
        y = F.conv2d(np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 3)), np.zeros(1), stride=1, padding=1)
        assert y[0, 0, 1, 1] == 9.0
        assert y[0, 0, 0, 0] == 4.0

    def test_zero_input_gives_bias(self, rng):
        y = F.conv2d(np.zeros((2, 3, 5, 4)), rng.normal(size=(4, 3, 3, 3)), np.array([0.5, -1, 2, 0]))
        np.testing.assert_array_equal(y, np.broadcast_to(np.array([0.5, -1, 2, 0])[None, :, None, None], y.shape))

    @pytest.mark.parametrize("stride", [1, 2])
    @pytest.mark.parametrize("size", [(5, 5), (6, 7)])
    def test_matches_direct_loops(self, rng, stride, size):
        x = rng.normal(size=(2, 3, *size))
        w = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=4)
        np.testing.assert_allclose(F.conv2d(x, w, b, stride, 1), direct_conv2d(x, w, b, stride, 1), atol=1e-12)

    def test_stride2_is_ceil_half(self, rng):
        for h in (4, 5, 7, 48):
            y = F.conv2d(rng.normal(size=(1, 1, h, h + 1)), rng.normal(size=(1, 1, 3, 3)), None, 2, 1)
            assert y.shape[2:] == (-(-h // 2), -(-(h + 1) // 2))

    def test_channel_mismatch(self, rng):
        with pytest.raises(StructuralError):
            F.conv2d(rng.normal(size=(1, 2, 4, 4)), rng.normal(size=(1, 3, 3, 3)))

    def test_even_kernel_rejected(self, rng):
        with pytest.raises(StructuralError):
            F.conv2d(rng.normal(size=(1, 1, 4, 4)), rng.normal(size=(1, 1, 2, 2)))

    def test_non_finite_rejected(self):
        x = np.ones((1, 1, 3, 3))
        x[0, 0, 1, 1] = np.nan
        with pytest.raises(NumericError):
            F.conv2d(x, np.ones((1, 1, 3, 3)))


class TestConvTranspose2d:
    def test_identity(self):
        y = F.conv_transpose2d(np.array([[[[1.0]]]]), np.array([[[[1.0]]]]), np.zeros(1), stride=1, padding=0)
        np.testing.assert_array_equal(y, [[[[1.0]]]])

    def test_zero_input_gives_bias(self, rng):
        y = F.conv_transpose2d(np.zeros((1, 3, 4, 4)), rng.normal(size=(3, 2, 3, 3)), np.array([1.5, -0.5]), 2, 1, (8, 8))
        assert y.shape == (1, 2, 8, 8)
        np.testing.assert_array_equal(y[0, 0], 1.5)
        np.testing.assert_array_equal(y[0, 1], -0.5)

    @pytest.mark.parametrize("stride,size", [(1, (5, 6)), (2, (7, 8)), (2, (6, 6))])
    def test_adjoint_identity(self, rng, stride, size):
        x = rng.normal(size=(2, 3, *size))
        w = rng.normal(size=(4, 3, 3, 3))
        y = rng.normal(size=F.conv2d(x, w, None, stride, 1).shape)
        lhs = (F.conv2d(x, w, None, stride, 1) * y).sum()
        # the transposed kernel is read as (in=4, out=3)
        rhs = (x * F.conv_transpose2d(y, w, None, stride, 1, size)).sum()
        assert abs(lhs - rhs) < 1e-10

    @pytest.mark.parametrize("h", [4, 5, 6, 7, 48])
    def test_round_trip_sizes(self, rng, h):
        x = rng.normal(size=(1, 2, h, h + 3))
        down = F.conv2d(x, rng.normal(size=(2, 2, 3, 3)), None, 2, 1)
        up = F.conv_transpose2d(down, rng.normal(size=(2, 2, 3, 3)), None, 2, 1, x.shape[2:])
        assert up.shape == x.shape

    def test_unreachable_size(self, rng):
        with pytest.raises(StructuralError):
            F.conv_transpose2d(rng.normal(size=(1, 1, 3, 3)), rng.normal(size=(1, 1, 3, 3)), None, 2, 1, (9, 6))


class TestBatchNorm:
    def test_constant_input_gives_shift(self):
        y, _ = F.batchnorm2d(np.full((2, 1, 3, 3), 4.2), np.ones(1), np.array([0.3]), np.zeros(1), np.ones(1), True)
        np.testing.assert_allclose(y, 0.3, atol=1e-12)

    def test_plus_minus_one(self):
        x = np.array([-1.0, 1.0, -1.0, 1.0]).reshape(1, 1, 2, 2)
        y, _ = F.batchnorm2d(x, np.array([2.0]), np.zeros(1), np.zeros(1), np.ones(1), True, eps=1e-5)
        np.testing.assert_allclose(y.ravel(), [-2, 2, -2, 2], rtol=1e-5)

    def test_eval_is_affine(self, rng):
        x = rng.normal(size=(2, 3, 4, 4))
        gamma, beta = rng.normal(size=3), rng.normal(size=3)
        y, cache = F.batchnorm2d(x, gamma, beta, np.zeros(3), np.ones(3), False, eps=0.0)
        assert cache is None
        np.testing.assert_allclose(y, x * gamma[None, :, None, None] + beta[None, :, None, None], atol=1e-12)

    def test_running_stats_update(self):
        x = np.arange(8.0).reshape(2, 1, 2, 2)
        rm, rv = np.zeros(1), np.ones(1)
        F.batchnorm2d(x, np.ones(1), np.zeros(1), rm, rv, True, momentum=0.1)
        assert rm[0] == pytest.approx(0.1 * 3.5)
        assert rv[0] == pytest.approx(0.9 + 0.1 * x.var(ddof=1))

    def test_channel_mismatch(self):
        with pytest.raises(StructuralError):
            F.batchnorm2d(np.zeros((1, 2, 2, 2)), np.ones(3), np.zeros(3), np.zeros(3), np.ones(3), True)


class TestPointwise:
    def test_relu(self):
        np.testing.assert_array_equal(F.activation(np.array([-1.0, 2.0]), "relu"), [0.0, 2.0])

    def test_sigmoid(self):
        assert F.activation(np.array([0.0]), "sigmoid")[0] == 0.5
        out = F.sigmoid(np.array([-800.0, 800.0]))
        assert np.all(np.isfinite(out))

    def test_softmax_two_logits(self):
        p = F.activation(np.array([0.0, np.log(3.0)]).reshape(1, 2, 1, 1), "softmax_channels").ravel()
        np.testing.assert_allclose(p, [0.25, 0.75], atol=1e-15)

    def test_softmax_sums_to_one(self, rng):
        p = F.softmax(rng.normal(scale=10, size=(2, 7, 5, 5)), axis=1)
        assert np.abs(p.sum(axis=1) - 1).max() < 1e-12
        assert p.min() >= 0 and p.max() <= 1

    def test_unknown(self):
        with pytest.raises(StructuralError):
            F.activation(np.zeros(2), "tanh")


class TestUpsample:
    def test_half_pixel_row(self):
        y = F.bilinear_upsample(np.array([0.0, 1.0]).reshape(1, 1, 1, 2), 1, 4)
        np.testing.assert_allclose(y.ravel(), [0.0, 0.25, 0.75, 1.0], atol=1e-15)

    def test_constant(self):
        y = F.bilinear_upsample(np.full((1, 2, 3, 5), 0.7), 11, 13)
        np.testing.assert_allclose(y, 0.7, atol=1e-14)

    def test_identity(self, rng):
        x = rng.normal(size=(1, 2, 4, 5))
        np.testing.assert_array_equal(F.bilinear_upsample(x, 4, 5), x)

    def test_shrinking_rejected(self):
        with pytest.raises(StructuralError):
            F.bilinear_upsample(np.zeros((1, 1, 4, 4)), 3, 4)

    def test_backward_is_adjoint(self, rng):
        x = rng.normal(size=(1, 2, 3, 5))
        g = rng.normal(size=(1, 2, 12, 9))
        lhs = (F.bilinear_upsample(x, 12, 9) * g).sum()
        rhs = (x * F.bilinear_upsample_backward(g, x.shape)).sum()
        assert abs(lhs - rhs) < 1e-12


class TestConcat:
    def test_channel_count(self):
        assert F.concat_channels([np.zeros((1, 3, 4, 4)), np.zeros((1, 64, 4, 4))]).shape == (1, 67, 4, 4)

    def test_single_is_identity(self, rng):
        x = rng.normal(size=(2, 3, 4, 4))
        np.testing.assert_array_equal(F.concat_channels([x]), x)

    def test_split_round_trip(self, rng):
        parts = [rng.normal(size=(2, c, 3, 3)) for c in (1, 4, 2)]
        back = F.concat_channels_backward(F.concat_channels(parts), [1, 4, 2])
        for a, b in zip(parts, back):
            np.testing.assert_array_equal(a, b)

    def test_spatial_mismatch(self):
        with pytest.raises(StructuralError):
            F.concat_channels([np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 4, 5))])


class TestOptimizers:
    def test_plain_sgd(self):
        p = {"w": Param(np.array([1.0]), grad=np.array([0.5]))}
        optimizer_step(p, "sgd_momentum", lr=0.1, momentum=0.0)
        assert p["w"].data[0] == pytest.approx(0.95)
        assert p["w"].grad[0] == 0.0

    def test_momentum_two_steps(self):
        p = {"w": Param(np.array([0.0]))}
        p["w"].grad[:] = 1.0
        optimizer_step(p, "sgd_momentum", lr=0.1, momentum=0.9)
        assert p["w"].data[0] == pytest.approx(-0.1)
        p["w"].grad[:] = 1.0
        optimizer_step(p, "sgd_momentum", lr=0.1, momentum=0.9)
        assert p["w"].state["velocity"][0] == pytest.approx(1.9)
        assert p["w"].data[0] == pytest.approx(-0.29)

    @pytest.mark.parametrize("kind", ["sgd_momentum", "adam"])
    def test_zero_gradient_is_noop(self, kind):
        p = {"w": Param(np.array([1.0, -2.0]))}
        optimizer_step(p, kind, lr=0.1)
        np.testing.assert_array_equal(p["w"].data, [1.0, -2.0])

    def test_adam_first_step_is_lr_sized(self):
        p = {"w": Param(np.array([0.0, 0.0]), grad=np.array([3.0, -0.01]))}
        optimizer_step(p, "adam", lr=1e-3)
        np.testing.assert_allclose(p["w"].data, [-1e-3, 1e-3], rtol=1e-4)

    def test_non_finite_gradient_names_parameter(self):
        p = {"enc1.conv.weight": Param(np.zeros(2), grad=np.array([np.inf, 0.0]))}
        with pytest.raises(NumericError, match="enc1.conv.weight"):
            optimizer_step(p, "adam", lr=1e-3)


class TestFiniteDiffCheck:
    def test_sum_of_squares(self):
        err = finite_diff_check(lambda v: float((v**2).sum()), np.array([1.0, 2.0]), np.array([2.0, 4.0]))
        assert err < 1e-8

    def test_exact(self):
        f = lambda v: float(np.sin(v).sum())  # noqa: E731
        x = np.array([0.1, 0.7, -1.2])
        from supercut.nn import numerical_gradient

        assert finite_diff_check(f, x, numerical_gradient(f, x)) == pytest.approx(0.0, abs=1e-15)

    def test_detects_scaled_gradient(self):
        err = finite_diff_check(lambda v: float((v**2).sum()), np.array([1.0, 2.0]), 2 * np.array([2.0, 4.0]))
        assert err == pytest.approx(1.0, rel=1e-6)


def _probe(shape, rng):
    return rng.normal(size=shape)


class TestLayerGradients:
    """Every layer's backward against central differences (float64, tiny shapes)."""

    TOL = 1e-4

    def _check_layer(self, layer, x, forward, rng):
        out = forward(x)
        probe = _probe(out.shape, rng)
        layer.zero_grad()
        gx = layer.backward(probe)

        def loss_x(v):
            return float((forward(v) * probe).sum())

        assert finite_diff_check(loss_x, x, gx) < self.TOL
        for name, p in layer.params().items():
            analytic = p.grad.copy()

            def loss_p(v, p=p):
                old = p.data.copy()
                p.data[...] = v
                try:
                    return float((forward(x) * probe).sum())
                finally:
                    p.data[...] = old

            assert finite_diff_check(loss_p, p.data.copy(), analytic) < self.TOL, name

    @pytest.mark.parametrize("stride", [1, 2])
    def test_conv2d(self, rng, stride):
        layer = Conv2d(2, 3, 3, stride, rng=rng)
        self._check_layer(layer, rng.normal(size=(2, 2, 5, 4)), layer.forward, rng)

    def test_conv_transpose2d(self, rng):
        layer = ConvTranspose2d(3, 2, 3, 2, rng=rng)
        self._check_layer(layer, rng.normal(size=(2, 3, 3, 2)), lambda v: layer.forward(v, (5, 4)), rng)

    def test_batchnorm_train(self, rng):
        layer = BatchNorm2d(3)
        layer.gamma.data[:] = rng.normal(size=3)
        layer.beta.data[:] = rng.normal(size=3)
        self._check_layer(layer, rng.normal(size=(2, 3, 3, 3)), lambda v: layer.forward(v, True), rng)

    def test_batchnorm_eval(self, rng):
        layer = BatchNorm2d(3)
        layer.running_mean[:] = rng.normal(size=3)
        layer.running_var[:] = rng.uniform(0.5, 2, size=3)
        self._check_layer(layer, rng.normal(size=(2, 3, 3, 3)), lambda v: layer.forward(v, False), rng)

    def test_conv_block(self, rng):
        layer = ConvBlock(2, 3, stride=2, rng=rng)
        self._check_layer(layer, rng.normal(size=(2, 2, 5, 5)), lambda v: layer.forward(v, True), rng)

    @pytest.mark.parametrize("kind", ["relu", "sigmoid", "softmax_channels"])
    def test_activations(self, rng, kind):
        x = rng.normal(size=(2, 4, 3, 3))
        x[np.abs(x) < 1e-3] = 0.5  # keep relu away from its kink
        probe = rng.normal(size=x.shape)
        y = F.activation(x, kind)
        g = F.activation_backward(probe, x, y, kind)
        assert finite_diff_check(lambda v: float((F.activation(v, kind) * probe).sum()), x, g) < self.TOL

    def test_upsample(self, rng):
        x = rng.normal(size=(1, 2, 3, 4))
        probe = rng.normal(size=(1, 2, 7, 9))
        g = F.bilinear_upsample_backward(probe, x.shape)
        assert finite_diff_check(lambda v: float((F.bilinear_upsample(v, 7, 9) * probe).sum()), x, g) < self.TOL

    def test_concat(self, rng):
        a, b = rng.normal(size=(1, 2, 3, 3)), rng.normal(size=(1, 3, 3, 3))
        probe = rng.normal(size=(1, 5, 3, 3))
        ga, gb = F.concat_channels_backward(probe, [2, 3])
        assert finite_diff_check(lambda v: float((F.concat_channels([v, b]) * probe).sum()), a, ga) < self.TOL
        assert finite_diff_check(lambda v: float((F.concat_channels([a, v]) * probe).sum()), b, gb) < self.TOL


class TestCheckpoint:
    def test_bit_exact_round_trip(self, tmp_path, rng):
        arrays = {
            "a": rng.normal(size=(3, 4)),
            "b": np.array([np.pi, -0.0, 5e-324, 1.7976931348623157e308]),
            "c": rng.normal(size=(2, 1, 3, 3)),
        }
        path = tmp_path / "m.ckpt"
        save_arrays(path, arrays, {"k": 4})
        back, meta = load_arrays(path)
        assert meta == {"k": 4}
        assert list(back) == list(arrays)
        for name in arrays:
            assert back[name].tobytes() == arrays[name].astype("<f8").tobytes()

    def test_header_lists_offsets(self, tmp_path):
        save_arrays(tmp_path / "m.ckpt", {"x": np.zeros(3), "y": np.ones((2, 2))})
        import json

        header = json.loads((tmp_path / "m.ckpt").read_bytes().split(b"\n")[1])
        assert [(e["name"], e["shape"], e["offset"]) for e in header["arrays"]] == [("x", [3], 0), ("y", [2, 2], 24)]

    def test_truncated_file(self, tmp_path):
        from supercut.errors import ParseError

        path = tmp_path / "m.ckpt"
        save_arrays(path, {"x": np.zeros(10)})
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ParseError):
            load_arrays(path)


def test_forward_backward_deterministic(rng):
    x = rng.normal(size=(2, 3, 8, 8))
    outs = []
    for _ in range(2):
        layer = ConvBlock(3, 4, stride=2, rng=np.random.default_rng(7))
        y = layer.forward(x)
        g = layer.backward(np.ones_like(y))
        outs.append((y.tobytes(), g.tobytes(), layer.conv.weight.grad.tobytes()))
    assert outs[0] == outs[1]
