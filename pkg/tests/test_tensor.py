import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contourseg import tensor as T
from contourseg.tensor import Tensor, gradcheck, relative_error


def naive_conv3d(x, w, b, stride=1, pad=0, dil=1):
    """Seven nested loops straight from the cross-correlation definition."""
    N, C, D, H, W = x.shape
    K, _, kd, kh, kw = w.shape
    xp = np.zeros((N, C, D + 2 * pad, H + 2 * pad, W + 2 * pad))
    xp[:, :, pad:pad + D, pad:pad + H, pad:pad + W] = x
    Do = (D + 2 * pad - dil * (kd - 1) - 1) // stride + 1
    Ho = (H + 2 * pad - dil * (kh - 1) - 1) // stride + 1
    Wo = (W + 2 * pad - dil * (kw - 1) - 1) // stride + 1
    out = np.zeros((N, K, Do, Ho, Wo))
    for n in range(N):
        for k in range(K):
            for d in range(Do):
                for h in range(Ho):
                    for q in range(Wo):
                        acc = b[k]
                        for c in range(C):
                            for i in range(kd):
                                for j in range(kh):
                                    for l in range(kw):
                                        acc += (w[k, c, i, j, l]
                                                * xp[n, c, d * stride + i * dil, h * stride + j * dil, q * stride + l * dil])
                        out[n, k, d, h, q] = acc
    return out


class TestConv3d:
    def test_scalar_product(self):
        out = T.conv3d(Tensor(np.full((1, 1, 1, 1, 1), 3.0)), Tensor(np.full((1, 1, 1, 1, 1), 2.0)),
                       Tensor([0.0]))
        assert out.shape == (1, 1, 1, 1, 1)
        assert out.item() == 6.0

    def test_identity_kernel(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((2, 1, 5, 4, 6))
        w = np.zeros((1, 1, 3, 3, 3))
        w[0, 0, 1, 1, 1] = 1.0
        out = T.conv3d(Tensor(x), Tensor(w), Tensor([0.0]), padding=1)
        np.testing.assert_array_equal(out.data, x)

    @pytest.mark.parametrize("stride,pad,dil", [(1, 0, 1), (1, 1, 1), (2, 1, 1), (1, 2, 2), (2, 0, 1)])
    def test_matches_naive_loops(self, stride, pad, dil):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((1, 2, 4, 4, 4))
        w = rng.standard_normal((3, 2, 3, 3, 3))
        b = rng.standard_normal(3)
        if dil * 2 + 1 > 4 + 2 * pad:
            pytest.skip("kernel does not fit")
        got = T.conv3d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=pad, dilation=dil).data
        ref = naive_conv3d(x, w, b, stride, pad, dil)
        assert got.shape == ref.shape
        np.testing.assert_allclose(got, ref, rtol=0, atol=1e-12)

    def test_output_extent_formula(self):
        x = Tensor(np.zeros((1, 1, 9, 8, 7)))
        w = Tensor(np.zeros((2, 1, 3, 3, 3)))
        out = T.conv3d(x, w, stride=2, padding=1, dilation=2)
        assert out.shape == (1, 2, (9 + 2 - 4 - 1) // 2 + 1, (8 + 2 - 4 - 1) // 2 + 1, (7 + 2 - 4 - 1) // 2 + 1)

    def test_channel_mismatch_is_descriptive(self):
        with pytest.raises(ValueError, match="channel mismatch"):
            T.conv3d(Tensor(np.zeros((1, 2, 3, 3, 3))), Tensor(np.zeros((1, 3, 1, 1, 1))))

    def test_kernel_must_fit(self):
        with pytest.raises(ValueError, match="does not fit"):
            T.conv3d(Tensor(np.zeros((1, 1, 2, 2, 2))), Tensor(np.zeros((1, 1, 3, 3, 3))))


class TestSoftmax:
    def test_symmetric(self):
        np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0]), axis=0).data, [0.5, 0.5])

    def test_extreme_logits_do_not_overflow(self):
        out = T.softmax(Tensor([1000.0, 0.0]), axis=0).data
        np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-12)

    def test_direct_evaluation(self):
        v = np.array([1.0, 2.0, 3.0])
        ref = np.exp(v) / np.exp(v).sum()
        out = T.softmax(Tensor(v), axis=0).data
        np.testing.assert_allclose(out, ref, rtol=1e-15)
        np.testing.assert_allclose(out, [0.09003057, 0.24472847, 0.66524096], atol=5e-9)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=2, max_size=8))
    def test_rows_sum_to_one(self, vals):
        out = T.softmax(Tensor(np.array(vals)), axis=0).data
        assert abs(out.sum() - 1.0) < 1e-12
        assert np.all(out >= 0) and np.all(out <= 1)

    def test_bad_axis(self):
        with pytest.raises(ValueError):
            T.softmax(Tensor(np.zeros((2, 2))), axis=3)


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor(np.random.default_rng(0).standard_normal((2, 3, 4)), requires_grad=True)
        x.sum().backward()
        np.testing.assert_array_equal(x.grad, np.ones((2, 3, 4)))

    def test_square_sum_gives_2x(self):
        data = np.random.default_rng(0).standard_normal((3, 5))
        x = Tensor(data, requires_grad=True)
        (x * x).sum().backward()
        np.testing.assert_array_equal(x.grad, 2 * data)

    def test_non_scalar_root_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            (x * 2).backward()

    def test_shared_subexpression_accumulates(self):
        x = Tensor([2.0], requires_grad=True)
        y = x * x
        (y + y * x).sum().backward()
        assert x.grad[0] == pytest.approx(2 * 2 + 3 * 4)

    def test_no_grad_records_nothing(self):
        x = Tensor([1.0], requires_grad=True)
        with T.no_grad():
            y = x * 3
        assert not y.requires_grad

    def test_non_finite_forward_is_an_error(self):
        with pytest.raises(T.NonFiniteError):
            T.exp(Tensor([1e4]))
        with pytest.raises(T.NonFiniteError):
            T.log(Tensor([0.0]))


def _rand(rng, shape, positive=False):
    v = rng.standard_normal(shape)
    return Tensor(np.abs(v) + 0.5 if positive else v, requires_grad=True)


def _small_shape(rng, ndim=5, lo=1, hi=3):
    return tuple(int(s) for s in rng.integers(lo, hi + 1, size=ndim))


# Each case: (name, builder) where builder(rng, trial) -> (fn, inputs).
def _case_elementwise(rng, i):
    shape = _small_shape(rng, 3, 1, 4)
    a, b = _rand(rng, shape), _rand(rng, shape, positive=True)
    weights = rng.standard_normal(shape)
    return (lambda: ((T.exp(a * 0.3) * b - a / b + T.log(b) + b ** 1.5
                      + T.maximum(a, b * 0.1) + T.sigmoid(a) + T.relu(a - 0.01)) * weights).sum()), [a, b]


def _case_broadcast(rng, i):
    a = _rand(rng, (3, 1, 4))
    b = _rand(rng, (1, 2, 4))
    c = _rand(rng, (4,))
    return (lambda: ((a + b) * c - b / (c * c + 1.0)).sum()), [a, b, c]


def _case_reductions(rng, i):
    a = _rand(rng, _small_shape(rng, 4, 2, 4))
    ax = int(rng.integers(1, 4))
    w = rng.standard_normal(a.shape[:ax] + a.shape[ax + 1:])
    return (lambda: (T.max_(a, axis=ax) * w).sum() + T.mean(a, axis=(0, ax)).sum() * 0.5
            + T.min_(a).sum()), [a]


def _case_softmax(rng, i):
    a = _rand(rng, (2, 4, 3))
    w = rng.standard_normal(a.shape)
    return (lambda: (T.softmax(a, axis=1) * w).sum() + (T.log_softmax(a, axis=2) * w).sum()), [a]


def _case_concat_split(rng, i):
    a, b = _rand(rng, (2, 3, 2)), _rand(rng, (2, 1, 2))
    w = rng.standard_normal((2, 4, 2))

    def fn():
        x = T.concat([a, b], axis=1) * w
        p, q = T.split(x, [1, 3], axis=1)
        return (p * p).sum() + (q * 2.0).sum()

    return fn, [a, b]


def _case_conv(rng, i):
    C, K = int(rng.integers(1, 3)), int(rng.integers(1, 3))
    k = int(rng.choice([1, 2, 3]))
    stride, dil = int(rng.integers(1, 3)), int(rng.integers(1, 3))
    pad = int(rng.integers(0, 2))
    size = max(dil * (k - 1) + 1 - 2 * pad, 1) + int(rng.integers(0, 3))
    x = _rand(rng, (1, C, size, size + 1, size))
    w = _rand(rng, (K, C, k, k, k))
    b = _rand(rng, (K,))
    out_shape = T.conv3d(x, w, b, stride=stride, padding=pad, dilation=dil).shape
    g = rng.standard_normal(out_shape)
    return (lambda: (T.conv3d(x, w, b, stride=stride, padding=pad, dilation=dil) * g).sum()), [x, w, b]


def _case_pools(rng, i):
    x = _rand(rng, (1, 2, 4, 4, 6))
    g1 = rng.standard_normal((1, 2, 2, 2, 3))
    g2 = rng.standard_normal((1, 2, 3, 3, 5))
    return (lambda: (T.max_pool3d(x, 2) * g1).sum() + (T.avg_pool3d(x, 2) * g1).sum()
            + (T.max_pool3d(x, 2, stride=1) * g2).sum()), [x]


def _case_upsample(rng, i):
    x = _rand(rng, (1, 2, 2, 3, 2))
    f = int(rng.integers(2, 4))
    g = rng.standard_normal((1, 2, 2 * f, 3 * f, 2 * f))
    return (lambda: (T.upsample3d(x, f, "trilinear") * g).sum()
            + (T.upsample3d(x, f, "nearest") * g * 0.5).sum()), [x]


def _case_instance_norm(rng, i):
    x = _rand(rng, (2, 3, 2, 3, 2))
    gamma, beta = _rand(rng, (3,)), _rand(rng, (3,))
    g = rng.standard_normal(x.shape)
    return (lambda: (T.instance_norm(x, gamma, beta) * g).sum()), [x, gamma, beta]


GRAD_CASES = {
    "elementwise": _case_elementwise,
    "broadcast": _case_broadcast,
    "reductions": _case_reductions,
    "softmax": _case_softmax,
    "concat_split": _case_concat_split,
    "conv3d": _case_conv,
    "pools": _case_pools,
    "upsample": _case_upsample,
    "instance_norm": _case_instance_norm,
}


@pytest.mark.parametrize("name", sorted(GRAD_CASES))
def test_gradients_match_finite_differences(name):
    rng = np.random.default_rng(sorted(GRAD_CASES).index(name))
    worst = 0.0
    for trial in range(20):
        fn, inputs = GRAD_CASES[name](rng, trial)
        errs = gradcheck(fn, inputs, h=1e-5)
        worst = max(worst, max(errs.values()))
    assert worst < 1e-6, f"{name}: worst relative error {worst:.3e}"


def test_backward_is_bitwise_deterministic():
    def run():
        rng = np.random.default_rng(3)
        x = Tensor(rng.standard_normal((1, 2, 4, 4, 4)), requires_grad=True)
        w = Tensor(rng.standard_normal((3, 2, 3, 3, 3)), requires_grad=True)
        y = T.instance_norm(T.relu(T.conv3d(x, w, padding=1)))
        loss = (T.softmax(T.upsample3d(T.max_pool3d(y), 2), axis=1) * y).sum()
        loss.backward()
        return loss.data.copy(), x.grad.copy(), w.grad.copy()

    a, b = run(), run()
    for u, v in zip(a, b):
        assert u.tobytes() == v.tobytes()


def test_relative_error_zero_for_zero_vectors():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
