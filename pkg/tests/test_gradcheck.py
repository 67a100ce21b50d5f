import numpy as np

from irisauth.gradsuite import SUITE_NAMES, run_suite
from irisauth.nn import ops
from irisauth.nn.gradcheck import finite_difference_check
from irisauth.nn.tensor import GradTape, Tensor, active_tape


def test_quick_suite_passes():
    results = run_suite(seeds=2)
    assert [r.name for r in results] == SUITE_NAMES
    for r in results:
        assert r.passed, str(r)


def test_failure_is_reported_not_raised():
    # hand-built op with a deliberately wrong backward closure
    x = Tensor(np.array([1.0, 2.0], np.float32))

    def broken_double():
        out = Tensor(x.data * 2.0)
        tape = active_tape()
        if tape is not None and x.requires_grad:
            out.requires_grad = True
            tape.record((x,), out, lambda g, needs: (g * 3.0,))  # wrong: 3 != 2
        return ops.tsum(out) if not out.requires_grad else _sum_on_tape(out)

    def _sum_on_tape(out):
        return ops.tsum(out)

    result = finite_difference_check(broken_double, {"x": x}, name="broken")
    assert not result.passed
    assert result.max_rel_error > 0.3


def test_per_tensor_errors_reported():
    x = Tensor(np.ones((2, 3), np.float32))
    w = Tensor(np.ones((4, 3), np.float32) * 0.5)
    b = Tensor(np.zeros(4, np.float32))
    result = finite_difference_check(
        lambda: ops.tsum(ops.linear(x, w, b)), {"x": x, "w": w, "b": b})
    assert set(result.per_tensor) == {"x", "w", "b"}
    assert result.passed


def test_report_string_mentions_tolerance():
    x = Tensor(np.ones(3, np.float32))
    result = finite_difference_check(lambda: ops.tsum(x), {"x": x}, name="sum")
    text = str(result)
    assert "sum" in text and "1.0e-03" in text
