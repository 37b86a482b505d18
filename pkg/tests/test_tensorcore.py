import copy

import numpy as np
import pytest

from ppgsleep import tensorcore as tc
from ppgsleep.errors import ConsistencyError, EmptyBatchError, ShapeError
from ppgsleep.tensorcore import ParamStore, Tensor, adam_step, masked_softmax_ce

from fdcheck import fd_gradient, rel_error


def t64(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


class TestConv1d:
    def test_direct_summation_case(self):
        # cross-correlation of [1,2,3] with [1,0,-1], valid: 1*1 + 2*0 + 3*(-1)
        x = t64(np.array([1.0, 2.0, 3.0]).reshape(3, 1))
        w = t64(np.array([1.0, 0.0, -1.0]).reshape(3, 1, 1))
        y = tc.conv1d(x, w, padding="valid")
        assert y.data.shape == (1, 1)
        assert y.data.ravel()[0] == -2.0

    def test_identity_kernel(self):
        x = t64(np.random.default_rng(0).standard_normal((11, 3)))
        w = t64(np.eye(3).reshape(1, 3, 3))
        y = tc.conv1d(x, w, padding="valid")
        np.testing.assert_array_equal(y.data, x.data)

    def test_same_padding_preserves_length(self):
        x = t64(np.random.default_rng(1).standard_normal((2, 40, 3)))
        w = t64(np.random.default_rng(2).standard_normal((5, 3, 4)))
        assert tc.conv1d(x, w, padding="same").data.shape == (2, 40, 4)
        assert tc.conv1d(x, w, dilation=4, padding="same").data.shape == (2, 40, 4)

    def test_kernel_wider_than_input(self):
        x = t64(np.zeros((4, 1)))
        w = t64(np.zeros((5, 1, 1)))
        with pytest.raises(ShapeError):
            tc.conv1d(x, w, padding="valid")

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            tc.conv1d(t64(np.zeros((8, 2))), t64(np.zeros((3, 3, 1))))

    @pytest.mark.parametrize("dilation", [1, 2, 4, 8, 16, 32])
    @pytest.mark.parametrize("padding", ["same", "valid"])
    def test_gradients_vs_finite_differences(self, dilation, padding):
        rng = np.random.default_rng(dilation)
        length = 12 + (3 - 1) * dilation
        x = rng.standard_normal((2, length, 3))
        w = rng.standard_normal((3, 3, 4))
        b = rng.standard_normal(4)

        def scalar():
            y = tc.conv1d(Tensor(x), Tensor(w), Tensor(b),
                          dilation=dilation, padding=padding)
            return float((y.data * proj).sum())

        # fixed random projection makes the output scalar
        proj = np.random.default_rng(99).standard_normal(
            tc.conv1d(Tensor(x), Tensor(w), Tensor(b),
                      dilation=dilation, padding=padding).data.shape)

        xt, wt, bt = t64(x, True), t64(w, True), t64(b, True)
        y = tc.conv1d(xt, wt, bt, dilation=dilation, padding=padding)
        y.grad = proj.copy()
        y._backward_fn()
        for arr, tensor in ((x, xt), (w, wt), (b, bt)):
            fd = fd_gradient(scalar, arr)
            assert rel_error(tensor.grad, fd) < 1e-4


class TestMaxPool:
    def test_definition(self):
        y = tc.maxpool1d(t64(np.array([1.0, 3.0, 2.0, 5.0]).reshape(4, 1)))
        assert y.data.ravel().tolist() == [3.0, 5.0]

    def test_odd_length_rejected(self):
        with pytest.raises(ShapeError):
            tc.maxpool1d(t64(np.zeros((5, 1))))

    def test_tie_routes_gradient_to_first(self):
        x = t64(np.ones((4, 2)), grad=True)
        y = tc.maxpool1d(x)
        np.testing.assert_array_equal(y.data, np.ones((2, 2)))
        loss = tc.dense(tc.reshape(y, (4,)), t64(np.ones((4, 1))))
        loss.backward()
        # gradient lands on the first element of each tied pair
        np.testing.assert_array_equal(x.grad, np.array([[1, 1], [0, 0], [1, 1], [0, 0.0]]))

    def test_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((2, 8, 3))  # ties have measure zero
        proj = rng.standard_normal((2, 4, 3))
        xt = t64(x, True)
        y = tc.maxpool1d(xt)
        y.grad = proj.copy()
        y._backward_fn()
        fd = fd_gradient(lambda: float((tc.maxpool1d(Tensor(x)).data * proj).sum()), x)
        assert rel_error(xt.grad, fd) < 1e-4


class TestDense:
    def test_identity(self):
        x = np.random.default_rng(3).standard_normal((5, 4))
        y = tc.dense(t64(x), t64(np.eye(4)), t64(np.zeros(4)))
        np.testing.assert_allclose(y.data, x)

    def test_scalar_affine(self):
        y = tc.dense(t64([[3.0]]), t64([[2.0]]), t64([1.0]))
        assert y.data.ravel()[0] == 7.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            tc.dense(t64(np.zeros((2, 3))), t64(np.zeros((4, 5))))

    def test_gradients_vs_finite_differences(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((2, 6, 5))
        w = rng.standard_normal((5, 3))
        b = rng.standard_normal(3)
        proj = rng.standard_normal((2, 6, 3))
        xt, wt, bt = t64(x, True), t64(w, True), t64(b, True)
        y = tc.dense(xt, wt, bt)
        y.grad = proj.copy()
        y._backward_fn()
        for arr, tensor in ((x, xt), (w, wt), (b, bt)):
            fd = fd_gradient(
                lambda: float((tc.dense(Tensor(x), Tensor(w), Tensor(b)).data * proj).sum()),
                arr)
            assert rel_error(tensor.grad, fd) < 1e-4


class TestSoftmaxAndLoss:
    def test_softmax_rows_sum_to_one(self):
        x = np.random.default_rng(5).standard_normal((3, 7, 4)) * 30
        p = tc.softmax(t64(x)).data
        np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-6)
        assert np.isfinite(p).all()

    def test_uniform_logits_give_ln4(self):
        logits = t64(np.zeros((2, 5, 4)))
        labels = np.random.default_rng(0).integers(0, 4, (2, 5))
        loss = masked_softmax_ce(logits, labels, np.ones((2, 5), bool))
        assert abs(float(loss.data) - np.log(4.0)) < 1e-12

    def test_saturated_correct_class(self):
        logits = np.zeros((1, 3, 4))
        logits[0, 1] = [10.0, 0.0, 0.0, 0.0]
        valid = np.zeros((1, 3), bool)
        valid[0, 1] = True
        labels = np.zeros((1, 3), np.int64)
        loss = masked_softmax_ce(t64(logits), labels, valid)
        # analytic: -log softmax = log(1 + 3*exp(-10))
        assert abs(float(loss.data) - np.log1p(3 * np.exp(-10.0))) < 1e-12
        assert float(loss.data) < 2e-4

    def test_loss_nonnegative(self):
        rng = np.random.default_rng(8)
        logits = t64(rng.standard_normal((4, 9, 4)))
        labels = rng.integers(0, 4, (4, 9))
        loss = masked_softmax_ce(logits, labels, rng.random((4, 9)) < 0.7)
        assert float(loss.data) >= 0.0

    def test_appending_invalid_positions_is_neutral(self):
        rng = np.random.default_rng(21)
        logits = rng.standard_normal((2, 6, 4))
        labels = rng.integers(0, 4, (2, 6))
        valid = np.ones((2, 6), bool)
        base = masked_softmax_ce(t64(logits, True), labels, valid)

        pad_logits = np.concatenate([logits, rng.standard_normal((2, 5, 4))], axis=1)
        pad_labels = np.concatenate([labels, np.full((2, 5), -1)], axis=1)
        pad_valid = np.concatenate([valid, np.zeros((2, 5), bool)], axis=1)
        padded = masked_softmax_ce(t64(pad_logits, True), pad_labels, pad_valid)
        assert abs(float(base.data) - float(padded.data)) < 1e-9

        lt = t64(logits, True)
        masked_softmax_ce(lt, labels, valid).backward()
        pt = t64(pad_logits, True)
        masked_softmax_ce(pt, pad_labels, pad_valid).backward()
        assert np.abs(lt.grad - pt.grad[:, :6]).max() < 1e-9
        assert np.abs(pt.grad[:, 6:]).max() == 0.0

    def test_empty_batch_rejected(self):
        with pytest.raises(EmptyBatchError):
            masked_softmax_ce(t64(np.zeros((1, 4, 4))), np.zeros((1, 4), int),
                              np.zeros((1, 4), bool))

    def test_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(13)
        logits = rng.standard_normal((2, 5, 4))
        labels = rng.integers(0, 4, (2, 5))
        valid = rng.random((2, 5)) < 0.7
        lt = t64(logits, True)
        masked_softmax_ce(lt, labels, valid).backward()
        fd = fd_gradient(
            lambda: float(masked_softmax_ce(Tensor(logits), labels, valid).data), logits)
        assert rel_error(lt.grad, fd) < 1e-4

    def test_deterministic(self):
        rng = np.random.default_rng(17)
        logits = rng.standard_normal((3, 8, 4)).astype(np.float32)
        labels = rng.integers(0, 4, (3, 8))
        valid = rng.random((3, 8)) < 0.8
        a = masked_softmax_ce(Tensor(logits), labels, valid)
        b = masked_softmax_ce(Tensor(logits), labels, valid)
        assert float(a.data) == float(b.data)


class TestFiniteness:
    def test_ops_map_finite_to_finite(self):
        rng = np.random.default_rng(23)
        x = Tensor(rng.standard_normal((2, 16, 3)).astype(np.float32) * 1e3)
        w = Tensor(rng.standard_normal((3, 3, 5)).astype(np.float32))
        h = tc.relu(tc.conv1d(x, w, padding="same"))
        h = tc.maxpool1d(h)
        h = tc.softmax(h)
        assert np.isfinite(h.data).all()


class TestAdam:
    def _store(self, theta=0.0, dtype=np.float64):
        store = ParamStore()
        store.add("theta", np.full((3,), theta, dtype=dtype))
        return store

    def test_zero_gradient_fresh_store_is_identity(self):
        store = self._store(1.5)
        adam_step(store, {"theta": np.zeros(3)})
        np.testing.assert_array_equal(store["theta"].data, np.full(3, 1.5))
        assert store.step == 1

    def test_zero_gradient_decays_moments(self):
        store = self._store()
        store.m["theta"][:] = 1.0
        store.v["theta"][:] = 1.0
        adam_step(store, {"theta": np.zeros(3)})
        np.testing.assert_allclose(store.m["theta"], 0.9)
        np.testing.assert_allclose(store.v["theta"], 0.999)

    def test_first_step_hand_value(self):
        # theta=0, g=1, t=1: mhat=1, vhat=1, delta = -lr / (1 + eps)
        store = self._store()
        adam_step(store, {"theta": np.ones(3)}, lr=0.00025)
        expected = -0.00025 / (1.0 + 1e-8)
        np.testing.assert_allclose(store["theta"].data, expected, rtol=1e-12)

    def test_determinism_bit_for_bit(self):
        rng = np.random.default_rng(3)
        g = {"theta": rng.standard_normal(3).astype(np.float32)}
        a = ParamStore()
        a.add("theta", rng.standard_normal(3).astype(np.float32))
        b = copy.deepcopy(a)
        for _ in range(5):
            adam_step(a, g)
            adam_step(b, g)
        assert a["theta"].data.tobytes() == b["theta"].data.tobytes()
        assert a.m["theta"].tobytes() == b.m["theta"].tobytes()

    def test_missing_gradient_rejected(self):
        store = self._store()
        with pytest.raises(ConsistencyError):
            adam_step(store, {})

    def test_shape_mismatch_rejected(self):
        store = self._store()
        with pytest.raises(ConsistencyError):
            adam_step(store, {"theta": np.zeros(4)})

    def test_duplicate_name_rejected(self):
        store = self._store()
        with pytest.raises(ConsistencyError):
            store.add("theta", np.zeros(1))
