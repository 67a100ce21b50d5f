import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from irisauth.errors import ContractViolation
from irisauth.nn import ops
from irisauth.nn.tensor import GradTape, ParamSet, Tensor


class TestConv2d:
    def test_all_ones_valid(self):
        x = Tensor(np.ones((1, 1, 3, 3)))
        k = Tensor(np.ones((1, 1, 2, 2)))
        out = ops.conv2d(x, k, Tensor(np.zeros(1)), 1, ops.PadMode.VALID)
        assert out.data.shape == (1, 1, 2, 2)
        assert np.array_equal(out.data, np.full((1, 1, 2, 2), 4.0, np.float32))

    def test_identity_kernel_same(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(2, 1, 5, 7)).astype(np.float32))
        k = Tensor(np.ones((1, 1, 1, 1)))
        out = ops.conv2d(x, k, Tensor(np.zeros(1)), 1, ops.PadMode.SAME)
        assert np.array_equal(out.data, x.data)

    def test_valid_output_extent(self):
        x = Tensor(np.zeros((1, 1, 4, 4)))
        k = Tensor(np.zeros((1, 1, 3, 3)))
        out = ops.conv2d(x, k, Tensor(np.zeros(1)), 1, ops.PadMode.VALID)
        assert out.data.shape[-2:] == (2, 2)

    @pytest.mark.parametrize("kernel", [1, 3, 5, 7])
    def test_same_stride1_preserves_shape(self, kernel):
        x = Tensor(np.zeros((1, 2, 9, 11)))
        k = Tensor(np.zeros((3, 2, kernel, kernel)))
        out = ops.conv2d(x, k, Tensor(np.zeros(3)), 1, ops.PadMode.SAME)
        assert out.data.shape == (1, 3, 9, 11)

    def test_channel_mismatch_names_axis(self):
        x = Tensor(np.zeros((1, 2, 4, 4)))
        k = Tensor(np.zeros((1, 3, 2, 2)))
        with pytest.raises(ContractViolation, match="Cin"):
            ops.conv2d(x, k, Tensor(np.zeros(1)), 1, ops.PadMode.VALID)

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.normal(size=(2, 3, 6, 6)).astype(np.float32))
        k = Tensor(rng.normal(size=(4, 3, 3, 3)).astype(np.float32))
        b = Tensor(rng.normal(size=4).astype(np.float32))
        a = ops.conv2d(x, k, b, 2, ops.PadMode.SAME).data
        c = ops.conv2d(x, k, b, 2, ops.PadMode.SAME).data
        assert np.array_equal(a, c)

    def test_kernel_larger_than_input_rejected(self):
        x = Tensor(np.zeros((1, 1, 2, 2)))
        k = Tensor(np.zeros((1, 1, 3, 3)))
        with pytest.raises(ContractViolation):
            ops.conv2d(x, k, Tensor(np.zeros(1)), 1, ops.PadMode.VALID)

    def test_bad_stride_rejected(self):
        x = Tensor(np.zeros((1, 1, 4, 4)))
        k = Tensor(np.zeros((1, 1, 2, 2)))
        with pytest.raises(ContractViolation):
            ops.conv2d(x, k, Tensor(np.zeros(1)), 0, ops.PadMode.VALID)


class TestAdaptivePooling:
    def test_hand_quadrants(self):
        x = Tensor(np.arange(1, 17, dtype=np.float32).reshape(1, 4, 4))
        out = ops.adaptive_avg_pool2d(x, 2, 2)
        assert np.array_equal(out.data[0], np.array([[3.5, 5.5], [11.5, 13.5]],
                                                    np.float32))

    def test_constant_exact(self):
        x = Tensor(np.full((2, 3, 7, 5), 0.1, np.float32))
        out = ops.adaptive_avg_pool2d(x, 3, 2)
        assert np.array_equal(out.data, np.full((2, 3, 3, 2), np.float32(0.1)))

    def test_identity_when_same_size(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.normal(size=(1, 4, 4)).astype(np.float32))
        out = ops.adaptive_avg_pool2d(x, 4, 4)
        assert np.array_equal(out.data, x.data)

    def test_global_mean_when_out_is_one(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.normal(size=(1, 6, 9)).astype(np.float32))
        out = ops.adaptive_avg_pool2d(x, 1, 1)
        expected = np.float32(x.data.mean(dtype=np.float64))
        assert out.data.reshape(()) == expected

    def test_oversize_output_rejected(self):
        x = Tensor(np.zeros((1, 3, 3)))
        with pytest.raises(ContractViolation):
            ops.adaptive_avg_pool2d(x, 4, 2)

    def test_1d_examples(self):
        x = Tensor(np.array([1.0, 2.0, 3.0, 4.0]))
        assert np.array_equal(ops.adaptive_avg_pool1d(x, 1).data, [2.5])
        assert np.array_equal(ops.adaptive_avg_pool1d(x, 2).data, [1.5, 3.5])
        assert np.array_equal(ops.adaptive_avg_pool1d(x, 4).data, x.data)


class TestLinear:
    def test_identity_weight(self):
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
        out = ops.linear(x, Tensor(np.eye(2)), Tensor(np.zeros(2)))
        assert np.array_equal(out.data, x.data)

    def test_zero_weight_gives_bias(self):
        x = Tensor(np.ones((3, 4)))
        b = np.array([1.0, -2.0], np.float32)
        out = ops.linear(x, Tensor(np.zeros((2, 4))), Tensor(b))
        assert np.array_equal(out.data, np.tile(b, (3, 1)))

    def test_hand_example(self):
        out = ops.linear(Tensor(np.array([[1.0, 2.0]])),
                         Tensor(np.array([[3.0, 4.0], [5.0, 6.0]])),
                         Tensor(np.array([0.0, 1.0])))
        assert np.array_equal(out.data, np.array([[11.0, 18.0]], np.float32))

    def test_dimension_mismatch(self):
        with pytest.raises(ContractViolation):
            ops.linear(Tensor(np.zeros((1, 3))), Tensor(np.zeros((2, 4))),
                       Tensor(np.zeros(2)))


class TestRelu:
    def test_examples(self):
        assert np.array_equal(ops.relu(Tensor([-1.0, 2.0])).data, [0.0, 2.0])
        assert np.array_equal(ops.relu(Tensor(np.zeros(4))).data, np.zeros(4))
        x = np.array([0.5, 3.0, 0.0], np.float32)
        assert np.array_equal(ops.relu(Tensor(x)).data, x)

    def test_gradient_zero_at_zero(self):
        x = Tensor(np.array([0.0, -1.0, 2.0]), requires_grad=True)
        with GradTape() as tape:
            loss = ops.tsum(ops.relu(x))
        tape.backward(loss)
        assert np.array_equal(x.grad, [0.0, 0.0, 1.0])


class TestLogSoftmax:
    def test_symmetry(self):
        out = ops.log_softmax(Tensor(np.array([[0.0, 0.0]])))
        assert np.allclose(out.data, -np.log(2), atol=1e-7)

    def test_large_logits_no_overflow(self):
        out = ops.log_softmax(Tensor(np.array([[1000.0, 1000.0]])))
        assert np.all(np.isfinite(out.data))
        assert np.allclose(out.data, -np.log(2), atol=1e-7)

    def test_rows_normalize(self):
        rng = np.random.default_rng(4)
        out = ops.log_softmax(Tensor(rng.normal(size=(5, 7)).astype(np.float32)))
        sums = np.exp(out.data.astype(np.float64)).sum(axis=1)
        assert np.allclose(sums, 1.0, atol=1e-6)

    @given(st.floats(min_value=-8.0, max_value=8.0))
    @settings(max_examples=40, deadline=None)
    def test_shift_invariance(self, c):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(3, 6)).astype(np.float32)
        base = ops.log_softmax(Tensor(x)).data
        shifted = ops.log_softmax(Tensor(x + np.float32(c))).data
        assert np.allclose(base, shifted, atol=1e-6)


class TestCrossEntropy:
    def test_uniform_logits(self):
        for c in (2, 5, 11):
            loss = ops.cross_entropy(Tensor(np.zeros((3, c))), np.zeros(3, np.int64))
            assert np.isclose(float(loss.data), np.log(c), atol=1e-6)

    def test_saturated_correct(self):
        logits = np.full((1, 4), -40.0, np.float32)
        logits[0, 2] = 40.0
        loss = ops.cross_entropy(Tensor(logits), np.array([2]))
        assert float(loss.data) < 1e-6

    def test_hand_value(self):
        loss = ops.cross_entropy(Tensor(np.array([[1.0, 2.0]])), np.array([1]))
        assert np.isclose(float(loss.data), 0.313262, atol=1e-6)

    def test_out_of_range_target(self):
        with pytest.raises(ContractViolation):
            ops.cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, 3]))

    def test_gradient_formula(self):
        rng = np.random.default_rng(6)
        x = Tensor(rng.normal(size=(4, 5)).astype(np.float32), requires_grad=True)
        t = np.array([0, 2, 4, 1])
        with GradTape() as tape:
            loss = ops.cross_entropy(x, t)
        tape.backward(loss)
        soft = ops.softmax_np(x.data, axis=1).astype(np.float64)
        soft[np.arange(4), t] -= 1.0
        assert np.allclose(x.grad, soft / 4.0, atol=1e-6)


class TestSmoothL1:
    def test_zero_when_equal(self):
        x = Tensor(np.array([1.0, -2.0]))
        assert float(ops.smooth_l1(x, x).data) == 0.0

    def test_quadratic_branch(self):
        loss = ops.smooth_l1(Tensor([0.5]), Tensor([0.0]), beta=1.0)
        assert np.isclose(float(loss.data), 0.125, atol=1e-7)

    def test_linear_branch(self):
        loss = ops.smooth_l1(Tensor([2.0]), Tensor([0.0]), beta=1.0)
        assert np.isclose(float(loss.data), 1.5, atol=1e-7)

    def test_bad_beta(self):
        with pytest.raises(ContractViolation):
            ops.smooth_l1(Tensor([1.0]), Tensor([0.0]), beta=0.0)


class TestBCEWithLogits:
    def test_logit_zero(self):
        for target in (0.0, 1.0):
            loss = ops.binary_cross_entropy_with_logits(
                Tensor([0.0]), Tensor([target]))
            assert np.isclose(float(loss.data), np.log(2), atol=1e-7)

    def test_saturated_correct(self):
        loss = ops.binary_cross_entropy_with_logits(Tensor([40.0]), Tensor([1.0]))
        assert float(loss.data) < 1e-6

    def test_target_out_of_range(self):
        with pytest.raises(ContractViolation):
            ops.binary_cross_entropy_with_logits(Tensor([0.0]), Tensor([1.5]))


class TestGradTape:
    def test_requires_scalar_loss(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with GradTape() as tape:
            y = ops.relu(x)
        with pytest.raises(ContractViolation):
            tape.backward(y)

    def test_unused_params_get_zero_grads(self):
        params = ParamSet()
        used = params.add("used", np.ones(2))
        unused = params.add("unused", np.ones(3))
        with GradTape() as tape:
            loss = ops.tsum(ops.mul_const(used, 2.0))
        tape.backward(loss, params)
        assert np.array_equal(used.grad, [2.0, 2.0])
        assert np.array_equal(unused.grad, np.zeros(3))

    def test_gradients_accumulate_across_uses(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        with GradTape() as tape:
            loss = ops.add(ops.tsum(x), ops.tsum(x))
        tape.backward(loss)
        assert np.array_equal(x.grad, [2.0, 2.0])

    def test_no_recording_outside_tape(self):
        x = Tensor(np.ones(2), requires_grad=True)
        out = ops.relu(x)
        assert out.requires_grad in (False, True)  # no tape: nothing recorded
        with GradTape() as tape:
            pass
        assert len(tape) == 0


class TestStructuralOps:
    def test_gather_rows_scatter_add(self):
        x = Tensor(np.arange(6, dtype=np.float32).reshape(3, 2), requires_grad=True)
        idx = np.array([0, 0, 2])
        with GradTape() as tape:
            loss = ops.tsum(ops.gather_rows(x, idx))
        tape.backward(loss)
        assert np.array_equal(x.grad, [[2.0, 2.0], [0.0, 0.0], [1.0, 1.0]])

    def test_concat_rows_roundtrip(self):
        a = Tensor(np.ones((2, 3)))
        b = Tensor(np.zeros((1, 3)))
        out = ops.concat_rows([a, b])
        assert out.data.shape == (3, 3)
        assert np.array_equal(out.data[:2], a.data)

    def test_roi_crop_rejects_empty(self):
        x = Tensor(np.zeros((1, 1, 4, 4)))
        with pytest.raises(ContractViolation):
            ops.roi_crop(x, 0, 2, 2, 0, 3)

    def test_upsample_matches_matrix(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.normal(size=(1, 1, 3, 3)).astype(np.float32))
        out = ops.upsample_bilinear(x, 6, 6)
        rm = ops.interp_matrix(3, 6)
        cm = ops.interp_matrix(3, 6)
        expected = (rm @ x.data[0, 0].astype(np.float64) @ cm.T).astype(np.float32)
        assert np.allclose(out.data[0, 0], expected, atol=1e-7)
