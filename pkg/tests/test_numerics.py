import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import conv2d_loops
from pilotless import numerics as nx
from pilotless.gradcheck import check_ops
from pilotless.numerics import AdamState, ContractError, Tensor


def leaf(v):
    return Tensor(np.asarray(v, dtype=float), requires_grad=True)


class TestBackward:
    def test_square(self):
        t = leaf(3.0)
        (g,) = nx.backward(t * t, [t])
        assert g == pytest.approx(6.0)

    def test_tanh_at_zero(self):
        t = leaf(0.0)
        (g,) = nx.backward(nx.tanh(t), [t])
        assert g == pytest.approx(1.0)

    def test_softmax_jacobian_row(self):
        t = leaf([0.0, 0.0, 0.0])
        (g,) = nx.backward(nx.softmax(t)[0], [t])
        np.testing.assert_allclose(g, [2 / 9, -1 / 9, -1 / 9], atol=1e-15)

    def test_fanout_accumulates(self):
        t = leaf(1.3)
        (g,) = nx.backward(t + t, [t])
        assert g == pytest.approx(2.0)

    def test_root_grad_is_one(self):
        t = leaf([1.0, 2.0])
        root = nx.tsum(t * t)
        nx.backward(root)
        assert root.grad == pytest.approx(1.0)

    def test_non_scalar_root_rejected(self):
        t = leaf([1.0, 2.0])
        with pytest.raises(ContractError):
            nx.backward(t * 2.0)

    def test_unreachable_param_zero(self):
        a, b = leaf([1.0, 2.0]), leaf([[3.0]])
        ga, gb = nx.backward(nx.tsum(a), [a, b])
        np.testing.assert_array_equal(gb, np.zeros((1, 1)))

    def test_grad_shape_matches_value(self):
        a = leaf(np.ones((2, 3)))
        b = leaf(np.ones(3))
        nx.backward(nx.tsum(a * b), [a, b])
        assert a.grad.shape == a.value.shape and b.grad.shape == b.value.shape

    def test_relu_subgradient_zero_at_kink(self):
        t = leaf([0.0])
        (g,) = nx.backward(nx.tsum(nx.relu(t)), [t])
        assert g[0] == 0.0

    def test_repeated_backward_resets(self):
        t = leaf(2.0)
        f = lambda: t * t * t
        g1 = nx.backward(f(), [t])[0]
        g2 = nx.backward(f(), [t])[0]
        assert g1 == g2 == pytest.approx(12.0)

    def test_extreme_first_index_on_tie(self):
        t = leaf([1.0, 3.0, 3.0])
        (g,) = nx.backward(nx.tmax(t), [t])
        np.testing.assert_array_equal(g, [0, 1, 0])


class TestForwardValues:
    def test_conv2d_matches_loops(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((2, 6, 5, 3))
        w = rng.standard_normal((3, 3, 3, 4))
        b = rng.standard_normal(4)
        for dil in [(1, 1), (2, 1), (4, 1), (2, 2)]:
            got = nx.conv2d(Tensor(x), Tensor(w), Tensor(b), dilation=dil).value
            np.testing.assert_allclose(got, conv2d_loops(x, w, b, dil), atol=1e-12)

    def test_matmul_broadcast(self):
        rng = np.random.default_rng(0)
        a, b = rng.standard_normal((4, 2, 3)), rng.standard_normal((3, 5))
        np.testing.assert_allclose(nx.matmul(Tensor(a), Tensor(b)).value, a @ b)

    def test_sigmoid_extremes_finite(self):
        v = nx.sigmoid(Tensor(np.array([-800.0, 0.0, 800.0]))).value
        np.testing.assert_allclose(v, [0.0, 0.5, 1.0])


class TestAdam:
    def test_first_step(self):
        state = AdamState.zeros_like([np.array(1.0)], lr=5e-4)
        (p,), state = nx.adam_step([np.array(1.0)], [np.array(2.0)], state)
        assert p == pytest.approx(0.9995, abs=1e-9)
        assert state.t == 1

    def test_zero_gradient_fixed_point(self):
        p = [np.array([0.3, -1.2])]
        state = AdamState.zeros_like(p)
        for _ in range(5):
            p, state = nx.adam_step(p, [np.zeros(2)], state)
        np.testing.assert_array_equal(p[0], [0.3, -1.2])

    def test_two_steps_unit_gradient(self):
        p = [np.array(0.0)]
        state = AdamState.zeros_like(p, lr=1e-3)
        p1, state = nx.adam_step(p, [np.array(1.0)], state)
        p2, state = nx.adam_step(p1, [np.array(1.0)], state)
        assert p1[0] == pytest.approx(-1e-3, rel=1e-6)
        assert p2[0] - p1[0] == pytest.approx(-1e-3, rel=1e-6)
        assert state.t == 2

    def test_nan_rejected(self):
        state = AdamState.zeros_like([np.zeros(2)])
        with pytest.raises(FloatingPointError):
            nx.adam_step([np.zeros(2)], [np.array([np.nan, 0.0])], state)

    def test_shape_mismatch(self):
        state = AdamState.zeros_like([np.zeros(2)])
        with pytest.raises(ContractError):
            nx.adam_step([np.zeros(2)], [np.zeros(3)], state)

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        p, g = [rng.standard_normal(4)], [rng.standard_normal(4)]
        s = AdamState.zeros_like(p)
        a, sa = nx.adam_step(p, g, s)
        b, sb = nx.adam_step(p, g, s)
        assert a[0].tobytes() == b[0].tobytes() and sa.v[0].tobytes() == sb.v[0].tobytes()


class TestClipping:
    def test_clip_scales_to_max(self):
        grads = [np.array([3.0, 4.0])]
        out, norm, clipped = nx.clip_by_global_norm(grads, 1.0)
        assert norm == pytest.approx(5.0) and clipped
        assert nx.global_norm(out) == pytest.approx(1.0)

    def test_no_clip_below(self):
        out, norm, clipped = nx.clip_by_global_norm([np.array([0.1])], 10.0)
        assert not clipped and out[0][0] == 0.1


class TestFiniteDiff:
    def test_quadratic(self):
        t = leaf(3.0)
        assert nx.finite_diff_check(lambda: t * t, [t], eps=1e-5) < 1e-7

    def test_two_layer_tanh_bce(self):
        rng = np.random.default_rng(7)
        w1, w2 = leaf(rng.standard_normal((3, 5))), leaf(rng.standard_normal((5, 1)))
        x = rng.standard_normal((8, 3))
        y = rng.integers(0, 2, (8, 1)).astype(float)

        def f():
            p = nx.sigmoid(nx.matmul(nx.tanh(nx.matmul(Tensor(x), w1)), w2))
            return -nx.mean(y * nx.log(p) + (1 - y) * nx.log(1 - p))

        assert nx.finite_diff_check(f, [w1, w2], eps=1e-5) < 1e-5

    def test_report_fields(self):
        t = leaf([1.0, 2.0])
        rep = nx.finite_diff_check(lambda: nx.tsum(t * t), [t], report=True)
        assert rep.checked == 2 and rep.max_rel_error < 1e-7

    def test_detects_wrong_gradient(self):
        t = leaf(1.0)
        # a hand-rolled op with a deliberately wrong derivative
        bad = lambda: nx._make(t.value ** 2, (t,), lambda g: (g * 3.0,))
        assert nx.finite_diff_check(bad, [t]) > 0.1

    def test_every_primitive(self):
        for r in check_ops(seed=11):
            assert r.ok, (r.name, r.max_rel_error)


bounded = arrays(np.float64, st.integers(2, 6), elements=st.floats(-3, 3))


class TestProperties:
    @settings(max_examples=40, deadline=None)
    @given(bounded)
    def test_smooth_composites(self, v):
        t = leaf(v)
        f = lambda: nx.mean(nx.log(nx.sigmoid(nx.tanh(t) * 2.0) + 0.1) * nx.softmax(t))
        assert nx.finite_diff_check(f, [t]) < 1e-4

    @settings(max_examples=40, deadline=None)
    @given(bounded)
    def test_relu_off_kink(self, v):
        v = np.where(np.abs(v) < 1e-3, 0.5, v)
        t = leaf(v)
        assert nx.finite_diff_check(lambda: nx.tsum(nx.relu(t) * t), [t]) < 1e-4
