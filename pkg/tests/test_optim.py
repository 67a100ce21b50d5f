import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from irisauth.errors import ContractViolation, GradientError
from irisauth.nn.tensor import ParamSet
from irisauth.optim import (
    Optimizer, OptimHyper, OptState, adam_step, amsgrad_step, clip_gradients,
)


def make_param(value):
    params = ParamSet()
    t = params.add("w", np.asarray(value, dtype=np.float32))
    return params, t, OptState.for_params(params)


class TestAMSGrad:
    def test_hand_computed_single_step(self):
        params, t, state = make_param([0.0])
        amsgrad_step(params, {"w": np.ones(1, np.float32)}, state, OptimHyper(lr=0.1))
        # m=0.1, v=0.001, vhat=0.001 -> step = 0.1*0.1/sqrt(0.001)
        assert np.isclose(t.data[0], -0.31622776, atol=1e-6)
        assert np.isclose(state.m["w"][0], 0.1, atol=1e-7)
        assert np.isclose(state.v["w"][0], 0.001, atol=1e-9)
        assert np.isclose(state.v_hat["w"][0], 0.001, atol=1e-9)

    def test_zero_gradient_is_noop(self):
        params, t, state = make_param([1.5, -2.0])
        amsgrad_step(params, {"w": np.zeros(2, np.float32)}, state, OptimHyper())
        assert np.array_equal(t.data, np.array([1.5, -2.0], np.float32))

    def test_vhat_never_decreases(self):
        params, _, state = make_param(np.zeros(4))
        rng = np.random.default_rng(0)
        prev = state.v_hat["w"].copy()
        for _ in range(200):
            g = rng.normal(size=4).astype(np.float32)
            amsgrad_step(params, {"w": g}, state, OptimHyper(lr=1e-3))
            assert np.all(state.v_hat["w"] >= prev)
            assert np.all(state.v_hat["w"] >= state.v["w"] - 1e-12)
            prev = state.v_hat["w"].copy()

    def test_quadratic_convergence(self):
        params, t, state = make_param([1.0])
        h = OptimHyper(lr=1e-2)
        for _ in range(2000):
            g = 2.0 * t.data
            amsgrad_step(params, {"w": g}, state, h)
            if abs(float(t.data[0])) < 1e-2:
                break
        assert abs(float(t.data[0])) < 1e-2

    def test_nan_gradient_names_parameter(self):
        params, _, state = make_param([0.0])
        with pytest.raises(GradientError, match="'w'"):
            amsgrad_step(params, {"w": np.array([np.nan], np.float32)},
                         state, OptimHyper())

    def test_shape_mismatch(self):
        params, _, state = make_param([0.0, 0.0])
        with pytest.raises(ContractViolation):
            amsgrad_step(params, {"w": np.zeros(3, np.float32)}, state, OptimHyper())


class TestAdam:
    def test_hand_computed_single_step(self):
        params, t, state = make_param([0.0])
        adam_step(params, {"w": np.ones(1, np.float32)}, state, OptimHyper(lr=0.1))
        # bias-corrected m_hat = 1, v_hat = 1 -> step = lr/(1+eps)
        assert np.isclose(t.data[0], -0.1, atol=1e-6)

    def test_zero_gradient_is_noop(self):
        params, t, state = make_param([[3.0, 4.0]])
        adam_step(params, {"w": np.zeros((1, 2), np.float32)}, state, OptimHyper())
        assert np.array_equal(t.data, np.array([[3.0, 4.0]], np.float32))

    def test_constant_gradient_step_approaches_lr(self):
        params, t, state = make_param([0.0])
        h = OptimHyper(lr=1e-2)
        for _ in range(500):
            adam_step(params, {"w": np.ones(1, np.float32)}, state, h)
        last = float(t.data[0])
        adam_step(params, {"w": np.ones(1, np.float32)}, state, h)
        step = abs(float(t.data[0]) - last)
        assert np.isclose(step, h.lr, rtol=1e-3)


class TestSharedBehavior:
    @given(st.integers(min_value=0, max_value=2**31 - 1))
    @settings(max_examples=20, deadline=None)
    def test_determinism(self, seed):
        rng1 = np.random.default_rng(seed)
        rng2 = np.random.default_rng(seed)
        pa, ta, sa = make_param(np.zeros(3))
        pb, tb, sb = make_param(np.zeros(3))
        for _ in range(10):
            ga = rng1.normal(size=3).astype(np.float32)
            gb = rng2.normal(size=3).astype(np.float32)
            amsgrad_step(pa, {"w": ga}, sa, OptimHyper())
            amsgrad_step(pb, {"w": gb}, sb, OptimHyper())
        assert np.array_equal(ta.data, tb.data)

    def test_hyper_validation(self):
        with pytest.raises(ContractViolation):
            OptimHyper(lr=0.0)
        with pytest.raises(ContractViolation):
            OptimHyper(beta1=1.0)
        with pytest.raises(ContractViolation):
            OptimHyper(epsilon=0.0)

    def test_clip_gradients(self):
        grads = {"a": np.array([3.0], np.float32), "b": np.array([4.0], np.float32)}
        clipped = clip_gradients(grads, 1.0)
        total = np.sqrt(sum(float(np.sum(g**2)) for g in clipped.values()))
        assert np.isclose(total, 1.0, atol=1e-6)
        # already within bound: untouched
        same = clip_gradients(grads, 10.0)
        assert same is grads

    def test_optimizer_wrapper_reads_grad_slots(self):
        params = ParamSet()
        t = params.add("w", np.zeros(2))
        opt = Optimizer(params, OptimHyper(lr=0.1), kind="amsgrad")
        t.grad = np.ones(2, np.float32)
        opt.step()
        assert np.all(t.data < 0)

    def test_unknown_kind(self):
        params, _, _ = make_param([0.0])
        with pytest.raises(ContractViolation):
            Optimizer(params, OptimHyper(), kind="sgd")

    def test_state_checkpoint_roundtrip(self):
        params, _, state = make_param(np.zeros(3))
        for i in range(5):
            amsgrad_step(params, {"w": np.full(3, i + 1.0, np.float32)},
                         state, OptimHyper())
        arrays = state.arrays()
        restored = OptState.from_arrays(arrays, t=state.t)
        assert restored.t == state.t
        assert np.array_equal(restored.m["w"], state.m["w"])
        assert np.array_equal(restored.v_hat["w"], state.v_hat["w"])
