import numpy as np
import pytest

from voxprior import autodiff as ad
from voxprior.errors import FormatError, ShapeMismatchError

from util import finite_difference_grads, gradcheck, max_rel_error

rng = np.random.default_rng(2024)


def arr(*shape):
    return rng.standard_normal(shape)


class TestElementwise:
    def test_add_broadcast(self):
        gradcheck(lambda a, b: ad.sum_(ad.mul(a + b, a + b)),
                  [arr(3, 4), arr(4)])

    def test_mul(self):
        gradcheck(lambda a, b: ad.sum_(ad.mul(a, b)), [arr(2, 5), arr(2, 5)])

    def test_neg_sub_div(self):
        gradcheck(lambda a, b: ad.sum_(a / (b * b + 1.0) - a),
                  [arr(6), arr(6)])

    def test_power(self):
        gradcheck(lambda x: ad.sum_(ad.power(x, 3.0)), [arr(4, 2)])
        gradcheck(lambda x: ad.sum_(ad.power(x, -1.0)),
                  [rng.uniform(1.0, 2.0, (5,))])

    def test_log_exp(self):
        gradcheck(lambda x: ad.sum_(ad.log(x)), [rng.uniform(0.5, 2.0, (7,))])
        gradcheck(lambda x: ad.sum_(ad.exp(x)), [arr(3, 3)])

    def test_sigmoid(self):
        gradcheck(lambda x: ad.sum_(ad.sigmoid(x)), [arr(4, 4)])

    def test_sigmoid_stable_extremes(self):
        y = ad.sigmoid(ad.Tensor(np.array([-800.0, 800.0])))
        assert np.all(np.isfinite(y.data))
        assert y.data[0] == 0.0 and y.data[1] == 1.0

    def test_relu_leaky_relu(self):
        # keep inputs away from the kink
        x = arr(5, 5)
        x[np.abs(x) < 0.1] = 0.5
        gradcheck(lambda t: ad.sum_(ad.relu(t)), [x])
        gradcheck(lambda t: ad.sum_(ad.leaky_relu(t, 0.2)), [x])

    def test_leaky_relu_slope(self):
        x = ad.Tensor(np.array([-2.0, 3.0]), requires_grad=True)
        (g,) = ad.backward(ad.sum_(ad.leaky_relu(x, 0.2)), [x])
        assert np.array_equal(g.data, [0.2, 1.0])

    def test_clamp(self):
        x = ad.Tensor(np.array([-1.0, 0.3, 2.0]), requires_grad=True)
        y = ad.clamp(x, 0.0, 1.0)
        assert np.array_equal(y.data, [0.0, 0.3, 1.0])
        (g,) = ad.backward(ad.sum_(y), [x])
        assert np.array_equal(g.data, [0.0, 1.0, 0.0])


class TestShapeOps:
    def test_sum_axis_keepdims(self):
        gradcheck(lambda x: ad.sum_(ad.mul(ad.sum_(x, axis=1, keepdims=True), x)),
                  [arr(3, 4)])

    def test_mean_axes(self):
        gradcheck(lambda x: ad.sum_(ad.power(ad.mean(x, axis=(0, 2)), 2.0)),
                  [arr(2, 3, 4)])

    def test_reshape_transpose(self):
        gradcheck(lambda x: ad.sum_(ad.mul(ad.transpose(ad.reshape(x, (4, 3))),
                                           ad.reshape(x, (3, 4)))),
                  [arr(2, 6)])

    def test_matmul(self):
        gradcheck(lambda a, b: ad.sum_(ad.matmul(a, b)), [arr(3, 4), arr(4, 2)])

    def test_pad_crop_round_trip(self):
        x = ad.Tensor(arr(2, 3), requires_grad=True)
        y = ad.pad_end(x, (1, 2))
        assert y.shape == (3, 5)
        assert np.array_equal(y.data[:2, :3], x.data)
        assert np.all(y.data[2:] == 0) and np.all(y.data[:, 3:] == 0)
        z = ad.crop_end(y, (2, 3))
        assert np.array_equal(z.data, x.data)
        (g,) = ad.backward(ad.sum_(ad.mul(z, z)), [x])
        assert np.allclose(g.data, 2 * x.data)

    def test_pad_crop_gradcheck(self):
        gradcheck(lambda x: ad.sum_(ad.power(ad.pad_end(x, (2, 1)) + 1.0, 2.0)),
                  [arr(3, 3)])
        gradcheck(lambda x: ad.sum_(ad.power(ad.crop_end(x, (2, 2)), 3.0)),
                  [arr(4, 3)])


class TestConv:
    def test_conv2d_values_oracle(self):
        # direct nested-loop cross-correlation
        x = arr(2, 3, 6, 5)
        w = arr(4, 3, 3, 3)
        out = ad.conv2d(ad.Tensor(x), ad.Tensor(w), stride=2, padding=1).data
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        B, Co = 2, 4
        Ho = (6 + 2 - 3) // 2 + 1
        Wo = (5 + 2 - 3) // 2 + 1
        ref = np.zeros((B, Co, Ho, Wo))
        for b in range(B):
            for co in range(Co):
                for i in range(Ho):
                    for j in range(Wo):
                        patch = xp[b, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3]
                        ref[b, co, i, j] = np.sum(patch * w[co])
        assert np.allclose(out, ref, atol=1e-12)
        assert out.shape == ref.shape

    def test_conv_adjoint_identity(self):
        # <conv(x, w), y> == <x, conv_transpose(y, w)> for matching geometry
        x = arr(1, 2, 8, 8)
        w = arr(3, 2, 4, 4)
        y = arr(1, 3, 4, 4)
        lhs = np.sum(ad.conv_nd(ad.Tensor(x), ad.Tensor(w), 2, 1).data * y)
        rhs = np.sum(ad.conv_transpose_nd(ad.Tensor(y), ad.Tensor(w), 2, 1).data * x)
        assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))

    def test_conv2d_gradcheck(self):
        gradcheck(lambda x, w: ad.sum_(ad.power(ad.conv_nd(x, w, 2, 1), 2.0)),
                  [arr(2, 2, 5, 5), arr(3, 2, 4, 4)])

    def test_conv_transpose2d_gradcheck(self):
        gradcheck(lambda x, w: ad.sum_(ad.power(ad.conv_transpose_nd(x, w, 2, 1), 2.0)),
                  [arr(1, 3, 3, 3), arr(3, 2, 4, 4)])

    def test_conv3d_gradcheck(self):
        gradcheck(lambda x, w: ad.sum_(ad.power(ad.conv_nd(x, w, 2, 1), 2.0)),
                  [arr(1, 2, 4, 4, 4), arr(2, 2, 4, 4, 4)])

    def test_conv_transpose3d_shape_doubles(self):
        out = ad.conv_transpose3d(ad.Tensor(arr(2, 3, 4, 4, 4)),
                                  ad.Tensor(arr(3, 5, 4, 4, 4)),
                                  stride=2, padding=1)
        assert out.shape == (2, 5, 8, 8, 8)

    def test_conv_odd_size_floor_then_transpose(self):
        # 5 -> floor((5+2-4)/2)+1 = 2 -> transpose gives 4; gradients must
        # still be exact despite the size mismatch handling.
        gradcheck(lambda x, w: ad.sum_(
            ad.power(ad.conv_transpose_nd(ad.conv_nd(x, w, 2, 1), w, 2, 1), 2.0)),
            [arr(1, 1, 5, 5), arr(2, 1, 4, 4)])

    def test_bias_gradcheck(self):
        gradcheck(lambda x, w, b: ad.sum_(ad.power(ad.conv2d(x, w, b, 2, 1), 2.0)),
                  [arr(1, 2, 4, 4), arr(3, 2, 4, 4), arr(3)])

    def test_wgrad_matches_backward(self):
        x = ad.Tensor(arr(2, 2, 6, 6), requires_grad=True)
        w = ad.Tensor(arr(3, 2, 4, 4), requires_grad=True)
        out = ad.conv_nd(x, w, 2, 1)
        gx, gw = ad.backward(ad.sum_(out), [x, w])
        g = np.ones_like(out.data)
        assert np.allclose(
            gw.data, ad.conv_wgrad_nd(x.detach(), ad.Tensor(g), 2, 1, 4).data,
            atol=1e-12)
        assert np.allclose(
            gx.data, ad.conv_transpose_nd(ad.Tensor(g), w.detach(), 2, 1).data,
            atol=1e-12)


class TestOps:
    def test_dense_gradcheck(self):
        gradcheck(lambda x, w, b: ad.sum_(ad.power(ad.dense(x, w, b), 2.0)),
                  [arr(3, 5), arr(4, 5), arr(4)])

    def test_dense_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            ad.dense(ad.Tensor(arr(3, 4)), ad.Tensor(arr(2, 5)))

    def test_batchnorm_train_stats(self):
        x = arr(8, 3, 4)
        out = ad.batchnorm(ad.Tensor(x), ad.Tensor(np.ones(3)),
                           ad.Tensor(np.zeros(3))).data
        assert np.allclose(out.mean(axis=(0, 2)), 0.0, atol=1e-10)
        assert np.allclose(out.std(axis=(0, 2)), 1.0, atol=1e-3)

    def test_batchnorm_gradcheck(self):
        # larger step: the normalization makes 1e-5 roundoff-limited
        gradcheck(lambda x, g, b: ad.sum_(ad.power(ad.batchnorm(x, g, b), 2.0)),
                  [arr(4, 2, 3), rng.uniform(0.5, 1.5, 2), arr(2)], h=3e-4)

    def test_batchnorm_eval_uses_running(self):
        running = {"mean": np.array([1.0, -1.0]), "var": np.array([4.0, 9.0])}
        x = arr(5, 2)
        out = ad.batchnorm(ad.Tensor(x), ad.Tensor(np.ones(2)),
                           ad.Tensor(np.zeros(2)), mode="eval",
                           running=running).data
        ref = (x - running["mean"]) / np.sqrt(running["var"] + 1e-5)
        assert np.allclose(out, ref, atol=1e-12)

    def test_batchnorm_running_update(self):
        running = {"mean": np.zeros(2), "var": np.ones(2)}
        x = arr(16, 2)
        ad.batchnorm(ad.Tensor(x), ad.Tensor(np.ones(2)),
                     ad.Tensor(np.zeros(2)), running=running, momentum=0.1)
        assert np.allclose(running["mean"], 0.1 * x.mean(axis=0), atol=1e-12)
        assert np.allclose(running["var"],
                           0.9 + 0.1 * x.var(axis=0, ddof=1), atol=1e-12)

    def test_bce_value_and_grad(self):
        p = rng.uniform(0.05, 0.95, (4, 4))
        t = (rng.random((4, 4)) < 0.5).astype(float)
        ref = -np.mean(t * np.log(p) + (1 - t) * np.log(1 - p))
        assert abs(ad.bce(ad.Tensor(p), ad.Tensor(t)).item() - ref) < 1e-12
        gradcheck(lambda q: ad.bce(q, ad.Tensor(t)), [p])

    def test_bce_saturated_predictions_finite(self):
        p = ad.Tensor(np.array([0.0, 1.0]), requires_grad=True)
        t = ad.Tensor(np.array([1.0, 0.0]))
        loss = ad.bce(p, t)
        assert np.isfinite(loss.item())
        (g,) = ad.backward(loss, [p])
        assert np.all(np.isfinite(g.data))

    def test_l2_norm(self):
        x = arr(3, 4)
        assert abs(ad.l2_norm(ad.Tensor(x)).item() - np.linalg.norm(x)) < 1e-12
        gradcheck(lambda t: ad.l2_norm(t), [x])


class TestBackwardMachinery:
    def test_unreachable_wrt_zero_grad(self):
        x = ad.Tensor(arr(3), requires_grad=True)
        z = ad.Tensor(arr(2), requires_grad=True)
        gx, gz = ad.backward(ad.sum_(ad.mul(x, x)), [x, z])
        assert np.allclose(gx.data, 2 * x.data)
        assert np.array_equal(gz.data, np.zeros(2))

    def test_grad_accumulates_over_fanout(self):
        x = ad.Tensor(np.array([2.0]), requires_grad=True)
        y = ad.add(ad.mul(x, x), ad.mul(3.0, x))
        (g,) = ad.backward(ad.sum_(y), [x])
        assert np.allclose(g.data, [7.0])

    def test_no_grad_suppresses_graph(self):
        x = ad.Tensor(arr(3), requires_grad=True)
        with ad.no_grad():
            y = ad.mul(x, x)
        assert y.grad_fn is None and not y.requires_grad

    def test_higher_order_scalar(self):
        # d/dx of (dy/dx) for y = x^3: first grad 3x^2, second 6x
        x = ad.Tensor(np.array([4.0]), requires_grad=True)
        y = ad.power(x, 3.0)
        (g,) = ad.backward(y, [x], higher_order=True)
        assert np.allclose(g.data, [48.0])
        (gg,) = ad.backward(ad.sum_(g), [x])
        assert np.allclose(gg.data, [24.0])

    def test_higher_order_through_sigmoid(self):
        x0 = np.array([0.3, -0.7])

        def grad_norm_sq(xa):
            x = ad.Tensor(xa, requires_grad=True)
            y = ad.sum_(ad.sigmoid(x))
            (g,) = ad.backward(y, [x], higher_order=True)
            return ad.sum_(ad.mul(g, g))

        x = ad.Tensor(x0.copy(), requires_grad=True)
        y = ad.sum_(ad.sigmoid(x))
        (g,) = ad.backward(y, [x], higher_order=True)
        (gg,) = ad.backward(ad.sum_(ad.mul(g, g)), [x])
        fd = finite_difference_grads(lambda a: grad_norm_sq(a).item(), [x0.copy()])[0]
        assert max_rel_error(gg.data, fd) < 1e-5

    def test_leaky_relu_second_derivative_zero(self):
        # piecewise-linear: gradient-of-gradient contributes nothing but
        # must not blow up at or near the kink
        x = ad.Tensor(np.array([-1.0, 0.0, 1.0]), requires_grad=True)
        y = ad.sum_(ad.mul(ad.leaky_relu(x, 0.2), ad.leaky_relu(x, 0.2)))
        (g,) = ad.backward(y, [x], higher_order=True)
        (gg,) = ad.backward(ad.sum_(g), [x])
        assert np.all(np.isfinite(gg.data))

    def test_higher_order_through_conv(self):
        x0 = arr(1, 1, 4, 4)
        w0 = arr(1, 1, 3, 3)

        def penalty(xa):
            x = ad.Tensor(xa, requires_grad=True)
            out = ad.sum_(ad.power(ad.conv_nd(x, ad.Tensor(w0), 1, 1), 2.0))
            (g,) = ad.backward(out, [x], higher_order=True)
            return ad.power(ad.l2_norm(g) - 1.0, 2.0)

        x = ad.Tensor(x0.copy(), requires_grad=True)
        out = ad.sum_(ad.power(ad.conv_nd(x, ad.Tensor(w0), 1, 1), 2.0))
        (g,) = ad.backward(out, [x], higher_order=True)
        pen = ad.power(ad.l2_norm(g) - 1.0, 2.0)
        (gg,) = ad.backward(pen, [x])
        fd = finite_difference_grads(lambda a: penalty(a).item(), [x0.copy()])[0]
        assert max_rel_error(gg.data, fd) < 1e-4


class TestCheckpointIO:
    def test_round_trip(self, tmp_path):
        tensors = {"a.w": arr(3, 4).astype(np.float32),
                   "b.v": arr(5),
                   "c": np.float64(2.5) * np.ones(1)}
        meta = {"epoch": 3, "alpha": 0.125, "stage": "gan"}
        p = tmp_path / "ck.adp"
        ad.save_tensors(p, tensors, meta)
        back, meta2 = ad.load_tensors(p)
        assert meta2 == meta
        assert set(back) == set(tensors)
        for k in tensors:
            assert back[k].dtype == tensors[k].dtype
            assert np.array_equal(back[k], tensors[k])

    def test_magic(self, tmp_path):
        p = tmp_path / "ck.adp"
        ad.save_tensors(p, {"x": np.zeros(2, dtype=np.float32)})
        assert p.read_bytes()[:4] == b"ADP1"

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "bad.adp"
        p.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(FormatError):
            ad.load_tensors(p)

    def test_truncated_rejected(self, tmp_path):
        p = tmp_path / "ck.adp"
        ad.save_tensors(p, {"x": arr(64).astype(np.float32)})
        (tmp_path / "t.adp").write_bytes(p.read_bytes()[:-17])
        with pytest.raises(FormatError):
            ad.load_tensors(tmp_path / "t.adp")

    def test_deterministic_bytes(self, tmp_path):
        tensors = {"m.w": arr(4, 4), "a.b": arr(2)}
        ad.save_tensors(tmp_path / "1.adp", tensors, {"epoch": 1})
        ad.save_tensors(tmp_path / "2.adp", dict(reversed(tensors.items())),
                        {"epoch": 1})
        assert (tmp_path / "1.adp").read_bytes() == (tmp_path / "2.adp").read_bytes()
