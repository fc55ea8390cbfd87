"""Autodiff engine, primitives and their numeric oracles."""

import math
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from depthcrf.errors import DimensionError
from depthcrf.tensor import (
    Tensor,
    adaptive_avg_pool,
    adaptive_bins,
    add,
    concat,
    conv2d,
    count_macs,
    deconv2d,
    default_dtype,
    expand,
    gelu,
    grad_check,
    l2_normalize,
    layer_norm,
    mac_scope,
    matmul,
    mul,
    no_grad,
    pad,
    pixel_shuffle,
    pixel_unshuffle,
    roll,
    sigmoid,
    softmax_lastdim,
    tsum,
    upsample_bilinear,
    verification_mode,
)
from depthcrf.gradsuite import PRIMITIVES, TOLERANCE


def conv2d_loop(x, w, b, stride, padding):
    """Direct nested-loop cross-correlation."""
    B, C, H, W = x.shape
    O, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (H + 2 * padding - k) // stride + 1
    ow = (W + 2 * padding - k) // stride + 1
    out = np.zeros((B, O, oh, ow))
    for n in range(B):
        for o in range(O):
            for i in range(oh):
                for j in range(ow):
                    patch = xp[n, :, i * stride : i * stride + k, j * stride : j * stride + k]
                    out[n, o, i, j] = (patch * w[o]).sum() + b[o]
    return out


def bilinear_loop(x, oh, ow):
    """Half-pixel bilinear resize with edge clamping, one output pixel at a time."""
    B, C, H, W = x.shape
    out = np.zeros((B, C, oh, ow))
    for i in range(oh):
        sy = max((i + 0.5) * H / oh - 0.5, 0.0)
        y0 = min(int(math.floor(sy)), H - 1)
        y1 = min(y0 + 1, H - 1)
        fy = sy - y0
        for j in range(ow):
            sx = max((j + 0.5) * W / ow - 0.5, 0.0)
            x0 = min(int(math.floor(sx)), W - 1)
            x1 = min(x0 + 1, W - 1)
            fx = sx - x0
            out[:, :, i, j] = (
                (1 - fy) * (1 - fx) * x[:, :, y0, x0]
                + (1 - fy) * fx * x[:, :, y0, x1]
                + fy * (1 - fx) * x[:, :, y1, x0]
                + fy * fx * x[:, :, y1, x1]
            )
    return out


class TestTape:
    def test_fan_out_accumulates(self):
        with verification_mode():
            x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
            y = tsum(add(mul(x, x), x))
            y.backward()
        np.testing.assert_allclose(x.grad, 2 * x.data + 1)

    def test_diamond_graph(self):
        with verification_mode():
            x = Tensor(np.array([0.5, 1.5]), requires_grad=True)
            a = mul(x, 3.0)
            b = mul(x, x)
            tsum(mul(a, b)).backward()
        np.testing.assert_allclose(x.grad, 9 * x.data**2)

    def test_nonscalar_backward_needs_seed(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            mul(x, 2.0).backward()

    def test_explicit_seed(self):
        x = Tensor(np.ones(3), requires_grad=True)
        mul(x, 2.0).backward(np.array([1.0, 2.0, 3.0]))
        np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0])

    def test_no_grad_records_nothing(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            y = mul(x, 2.0)
        assert not y.requires_grad

    def test_deep_chain_does_not_recurse(self):
        x = Tensor(np.array([1.0]), requires_grad=True)
        y = x
        for _ in range(5000):
            y = add(y, 1.0)
        tsum(y).backward()
        assert x.grad[0] == 1.0


class TestBroadcastRules:
    def test_tensor_shape_mismatch_names_axes(self):
        with pytest.raises(DimensionError, match="axes 1"):
            add(Tensor(np.ones((3, 4))), Tensor(np.ones((3, 5))))
        with pytest.raises(DimensionError, match="rank"):
            add(Tensor(np.ones((3, 4))), Tensor(np.ones((4,))))

    def test_constant_may_broadcast(self):
        a = Tensor(np.ones((2, 3)))
        np.testing.assert_allclose(add(a, np.array([1.0, 2.0, 3.0])).data, [[2, 3, 4]] * 2)

    def test_expand_gradient_sums(self):
        x = Tensor(np.ones((1, 3)), requires_grad=True)
        tsum(expand(x, (4, 3))).backward()
        np.testing.assert_allclose(x.grad, np.full((1, 3), 4.0))


class TestPrecision:
    def test_default_float32(self):
        assert default_dtype() == np.float32
        assert Tensor([1.0]).dtype == np.float32

    def test_verification_mode_float64(self):
        with verification_mode():
            assert Tensor([1.0]).dtype == np.float64
        assert Tensor([1.0]).dtype == np.float32

    def test_env_switch(self):
        code = "from depthcrf.tensor import Tensor; print(Tensor([1.0]).dtype)"
        env = dict(os.environ, DEPTHCRF_VERIFY="1")
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        assert out.stdout.strip() == "float64"


class TestPrimitiveOracles:
    def test_conv2d_matches_loop(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((2, 3, 7, 6))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        with verification_mode():
            for stride, padding in ((1, 1), (2, 0), (2, 1)):
                got = conv2d(Tensor(x), Tensor(w), Tensor(b), stride, padding).data
                np.testing.assert_allclose(got, conv2d_loop(x, w, b, stride, padding), atol=1e-12)

    def test_deconv_is_adjoint_of_conv(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((1, 3, 5, 5))
        w = rng.standard_normal((4, 3, 3, 3))
        y = rng.standard_normal((1, 4, 3, 3))
        with verification_mode():
            cx = conv2d(Tensor(x), Tensor(w), None, 2, 1).data
            dy = deconv2d(Tensor(y), Tensor(w), None, 2, 1).data
        assert dy.shape == x.shape
        np.testing.assert_allclose((cx * y).sum(), (x * dy).sum(), rtol=1e-12)

    def test_gelu_exact_erf(self):
        x = np.linspace(-4, 4, 17)
        with verification_mode():
            got = gelu(Tensor(x)).data
        ref = [0.5 * v * (1 + math.erf(v / math.sqrt(2))) for v in x]
        np.testing.assert_allclose(got, ref, atol=1e-15)

    def test_sigmoid_extremes_finite(self):
        got = sigmoid(Tensor(np.array([-1000.0, 0.0, 1000.0]))).data
        np.testing.assert_array_equal(got, [0.0, 0.5, 1.0])

    def test_softmax_rows_sum_to_one(self):
        x = np.random.default_rng(2).standard_normal((3, 4, 9)) * 50
        s = softmax_lastdim(Tensor(x)).data
        np.testing.assert_allclose(s.sum(-1), 1.0, atol=1e-6)

    def test_softmax_masked_key(self):
        x = np.array([[0.0, 1.0, -np.inf]])
        s = softmax_lastdim(Tensor(x)).data
        assert s[0, 2] == 0.0
        np.testing.assert_allclose(s[0, :2], np.exp([0, 1]) / np.exp([0, 1]).sum(), rtol=1e-6)

    def test_l2_normalize(self):
        x = np.array([[3.0, 4.0], [0.0, 0.0]])
        with verification_mode():
            got = l2_normalize(Tensor(x)).data
        np.testing.assert_allclose(got[0], [0.6, 0.8], atol=1e-8)
        np.testing.assert_array_equal(got[1], [0.0, 0.0])

    def test_layer_norm_moments(self):
        x = np.random.default_rng(3).standard_normal((5, 16)) * 3 + 2
        with verification_mode():
            y = layer_norm(Tensor(x), Tensor(np.ones(16)), Tensor(np.zeros(16))).data
        np.testing.assert_allclose(y.mean(-1), 0.0, atol=1e-12)
        np.testing.assert_allclose(y.var(-1), 1.0, atol=1e-3)

    def test_adaptive_bins(self):
        assert adaptive_bins(5, 3) == [(0, 2), (1, 4), (3, 5)]
        assert adaptive_bins(4, 2) == [(0, 2), (2, 4)]

    def test_adaptive_pool_matches_loop(self):
        x = np.random.default_rng(4).standard_normal((1, 2, 7, 5))
        with verification_mode():
            got = adaptive_avg_pool(Tensor(x), 3, 2).data
        for i, (r0, r1) in enumerate(adaptive_bins(7, 3)):
            for j, (c0, c1) in enumerate(adaptive_bins(5, 2)):
                np.testing.assert_allclose(got[:, :, i, j], x[:, :, r0:r1, c0:c1].mean(axis=(2, 3)))

    def test_adaptive_pool_rejects_bad_size(self):
        with pytest.raises(ValueError):
            adaptive_avg_pool(Tensor(np.ones((1, 1, 3, 3))), 4, 1)
        with pytest.raises(ValueError):
            adaptive_avg_pool(Tensor(np.ones((1, 1, 3, 3))), 0, 1)

    def test_bilinear_matches_loop(self):
        x = np.random.default_rng(5).standard_normal((1, 2, 3, 4))
        with verification_mode():
            for oh, ow in ((6, 8), (7, 5), (3, 4), (1, 1)):
                np.testing.assert_allclose(upsample_bilinear(Tensor(x), oh, ow).data, bilinear_loop(x, oh, ow), atol=1e-12)

    def test_pixel_shuffle_layout(self):
        r = 2
        x = np.arange(1 * 8 * 2 * 3, dtype=float).reshape(1, 8, 2, 3)
        y = pixel_shuffle(Tensor(x), r).data
        assert y.shape == (1, 2, 4, 6)
        for c in range(2):
            for h in range(2):
                for w in range(3):
                    for i in range(r):
                        for j in range(r):
                            assert y[0, c, h * r + i, w * r + j] == x[0, c * r * r + i * r + j, h, w]

    def test_pixel_unshuffle_rejects_indivisible(self):
        with pytest.raises(ValueError):
            pixel_unshuffle(Tensor(np.ones((1, 1, 5, 4))), 2)

    def test_pad_and_roll(self):
        x = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(pad(Tensor(x), ((0, 1), (1, 0))).data, np.pad(x, ((0, 1), (1, 0))))
        np.testing.assert_array_equal(roll(Tensor(x), (1, -1), (0, 1)).data, np.roll(x, (1, -1), (0, 1)))

    def test_concat(self):
        a, b = np.ones((2, 1)), np.zeros((2, 2))
        np.testing.assert_array_equal(concat([Tensor(a), Tensor(b)], axis=1).data, np.concatenate([a, b], 1))


class TestMacCounting:
    def test_matmul_count(self):
        with count_macs() as c:
            matmul(Tensor(np.ones((2, 3, 4))), Tensor(np.ones((4, 5))))
        assert c.total == 2 * 3 * 5 * 4

    def test_conv_count_and_scope(self):
        with count_macs() as c:
            with mac_scope("head"):
                conv2d(Tensor(np.ones((1, 3, 4, 4))), Tensor(np.ones((2, 3, 3, 3))), None, 1, 1)
            matmul(Tensor(np.ones((1, 2))), Tensor(np.ones((2, 1))))
        assert c.by_tag["head"] == 2 * 4 * 4 * 3 * 9
        assert c.total == c.by_tag["head"] + 2

    def test_no_counter_no_cost(self):
        matmul(Tensor(np.ones((2, 2))), Tensor(np.ones((2, 2))))


class TestGradientRegistry:
    @pytest.mark.parametrize("name", sorted(PRIMITIVES))
    def test_primitive(self, name):
        rng = np.random.default_rng([7, len(name)])
        with verification_mode():
            err = PRIMITIVES[name](rng)
        assert err <= TOLERANCE

    def test_identity_is_exact(self):
        err = PRIMITIVES["identity"](np.random.default_rng(0))
        assert err <= 1e-7

    def test_grad_check_detects_wrong_gradient(self):
        def bad(t):
            out = mul(t, 2.0)
            out._backward = lambda g: (g * 3.0,)
            return tsum(out)

        assert grad_check(bad, np.ones(3)) > 0.1


class TestProperties:
    @settings(max_examples=25, deadline=None)
    @given(
        st.integers(1, 2), st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.sampled_from([2, 3])
    )
    def test_shuffle_roundtrip(self, b, c, h, w, r):
        x = np.random.default_rng(b * 100 + c * 10 + h).standard_normal((b, c * r * r, h, w)).astype(np.float32)
        y = pixel_unshuffle(pixel_shuffle(Tensor(x), r), r).data
        np.testing.assert_array_equal(y, x)
        z = np.random.default_rng(w).standard_normal((b, c, h * r, w * r)).astype(np.float32)
        np.testing.assert_array_equal(pixel_shuffle(pixel_unshuffle(Tensor(z), r), r).data, z)

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.floats(-30, 30), min_size=2, max_size=12))
    def test_softmax_shift_invariant(self, vals):
        x = np.array(vals)
        with verification_mode():
            a = softmax_lastdim(Tensor(x)).data
            b = softmax_lastdim(Tensor(x + 7.5)).data
        np.testing.assert_allclose(a, b, atol=1e-12)
        np.testing.assert_allclose(a.sum(), 1.0, atol=1e-12)
