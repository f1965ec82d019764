import numpy as np
import pytest
from gradcheck import check

from acml import tensor as T
from acml.errors import InvalidSegmentIds, NonFiniteLoss, NonScalarLoss, ShapeMismatch

TOL = 1e-6


def r(rng, *shape):
    return rng.normal(size=shape)


class TestGradients:
    def test_elementwise_chain(self, rng):
        f = lambda a, b: T.tsum(T.gelu(a * b + a - b) + T.relu(a))
        assert check(f, [r(rng, 3, 4), r(rng, 3, 4)]) < TOL

    def test_broadcast_add(self, rng):
        f = lambda a, b: T.tsum((a + b) * (a + b))
        assert check(f, [r(rng, 3, 4), r(rng, 4)]) < TOL

    def test_matmul_transpose(self, rng):
        f = lambda a, b: T.tsum(T.exp(T.scale(a @ b.T, 0.3)))
        assert check(f, [r(rng, 3, 5), r(rng, 2, 5)]) < TOL

    def test_log(self, rng):
        f = lambda a: T.mean(T.log(a * a + 1.0))
        assert check(f, [r(rng, 4, 2)]) < TOL

    def test_softmaxes(self, rng):
        w = r(rng, 4, 6)
        f = lambda a: T.tsum(T.row_softmax(a) * T.row_log_softmax(T.scale(a, 2.0)) * w)
        assert check(f, [r(rng, 4, 6)]) < TOL

    def test_l2_normalize(self, rng):
        w = r(rng, 3, 5)
        f = lambda a: T.tsum(T.l2_normalize_rows(a) * w)
        assert check(f, [r(rng, 3, 5)]) < TOL

    def test_gather_and_segment_sum(self, rng):
        idx = np.array([0, 2, 2, 1, 0])
        seg = np.array([0, 0, 1, 2, 2])
        w = r(rng, 3, 4)
        f = lambda a: T.tsum(T.segment_sum(T.gather_rows(a, idx), seg, 3) * w)
        assert check(f, [r(rng, 3, 4)]) < TOL

    def test_sum_rows(self, rng):
        w = r(rng, 4)
        f = lambda a: T.tsum(T.sum_rows(a) * w)
        assert check(f, [r(rng, 4, 3)]) < TOL

    def test_masked_losses(self, rng):
        y = (rng.random((5, 2)) > 0.5).astype(float)
        m = rng.random((5, 2)) > 0.3
        assert check(lambda a: T.masked_bce_with_logits(a, y, m), [r(rng, 5, 2)]) < TOL
        assert check(lambda a: T.masked_mse(a, y, m), [r(rng, 5, 2)]) < TOL

    def test_shared_input_accumulates(self, rng):
        f = lambda a: T.tsum(a @ a.T)
        assert check(f, [r(rng, 3, 3)]) < TOL


class TestMaskedLoss:
    def test_masked_entries_are_ignored(self, rng):
        x = r(rng, 6, 3)
        m = rng.random((6, 3)) > 0.4
        y1 = np.where(m, 1.0, np.nan)
        y2 = np.where(m, 1.0, 123.0)
        a = T.masked_bce_with_logits(T.Tensor(x, dtype=np.float64), y1, m).item()
        b = T.masked_bce_with_logits(T.Tensor(x, dtype=np.float64), y2, m).item()
        assert a == b and np.isfinite(a)

    def test_bce_hand_value(self):
        out = T.masked_bce_with_logits(T.Tensor([[0.0]], dtype=np.float64), [[1.0]], [[True]])
        assert out.item() == pytest.approx(np.log(2.0))

    def test_mse_hand_value(self):
        out = T.masked_mse(T.Tensor([[1.0, 3.0]], dtype=np.float64), [[0.0, 0.0]], [[True, False]])
        assert out.item() == 1.0


class TestAdamW:
    def test_first_step_hand_value(self):
        # bias-corrected first step moves by lr * sign(g), plus lr * wd * theta
        p = {"w": T.Tensor([1.0], requires_grad=True, dtype=np.float64)}
        opt = T.AdamW(p, lr=1e-3, weight_decay=1e-3)
        p["w"].grad = np.array([0.5])
        opt.step()
        assert p["w"].data[0] == pytest.approx(0.998999, abs=1e-8)

    def test_zero_lr_is_noop(self, rng):
        p = {"w": T.Tensor(r(rng, 3), requires_grad=True)}
        before = p["w"].data.copy()
        opt = T.AdamW(p, lr=0.0)
        for _ in range(3):
            p["w"].grad = r(rng, 3).astype(np.float32)
            opt.step()
        np.testing.assert_array_equal(p["w"].data, before)

    def test_decay_without_gradient_signal(self):
        p = {"w": T.Tensor([2.0], requires_grad=True, dtype=np.float64)}
        opt = T.AdamW(p, lr=0.1, weight_decay=0.5)
        p["w"].grad = np.array([0.0])
        opt.step()
        assert p["w"].data[0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)


class TestErrors:
    def test_non_scalar_backward(self):
        with pytest.raises(NonScalarLoss):
            T.backward(T.Tensor(np.ones(3), requires_grad=True))

    def test_non_finite_backward(self):
        x = T.Tensor([np.inf], requires_grad=True)
        with pytest.raises(NonFiniteLoss):
            T.backward(T.tsum(x))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            T.Tensor(np.ones((2, 3))) + T.Tensor(np.ones((4,)))

    def test_unsorted_segments(self):
        with pytest.raises(InvalidSegmentIds):
            T.segment_sum(np.ones((3, 2)), [1, 0, 1], 2)

    def test_no_grad_builds_no_tape(self):
        x = T.Tensor([1.0, 2.0], requires_grad=True)
        with T.no_grad():
            y = T.tsum(x * x)
        assert not y.requires_grad


def test_rng_streams_are_reproducible_and_distinct():
    a = T.rng(3, 5).random(4)
    np.testing.assert_array_equal(a, T.rng(3, 5).random(4))
    assert not np.array_equal(a, T.rng(3, 6).random(4))
    assert not np.array_equal(a, T.rng(4, 5).random(4))


def test_seeded_init_is_deterministic():
    a = T.seeded_init((4, 3), "glorot", seed=1, stream=2)
    b = T.seeded_init((4, 3), "glorot", seed=1, stream=2)
    np.testing.assert_array_equal(a.data, b.data)
    assert np.abs(a.data).max() <= np.sqrt(6 / 7)
