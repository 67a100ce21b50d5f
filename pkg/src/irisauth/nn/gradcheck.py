"""Finite-difference verification of tape gradients.

The checker perturbs every element of the selected tensors by +/-eps,
recomputes the scalar objective, and compares the central difference
against the gradient produced by tape replay.  Failure is reported, not
raised, so suites can aggregate results.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from irisauth.nn.tensor import GradTape, Tensor


@dataclass
class GradCheckResult:
    """Outcome of one finite-difference comparison."""

    name: str
    max_rel_error: float
    tolerance: float
    passed: bool
    per_tensor: dict[str, float] = field(default_factory=dict)

    def __str__(self) -> str:
        state = "ok" if self.passed else "FAIL"
        return (f"[{state}] {self.name}: max rel error "
                f"{self.max_rel_error:.3e} (tol {self.tolerance:.1e})")


def _rel_error(analytic: float, numeric: float) -> float:
    # Relative error with a unit floor, so near-zero gradients are judged
    # on absolute scale rather than blowing up on float32 noise.
    return abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))


def finite_difference_check(
    fn: Callable[[], Tensor],
    wrt: dict[str, Tensor],
    epsilon: float = 1e-3,
    tolerance: float = 1e-3,
    name: str = "gradcheck",
    fn_value: Callable[[], float] | None = None,
) -> GradCheckResult:
    """Compare tape gradients of ``fn()`` against central differences.

    ``fn`` must rebuild the scalar objective from the tensors in ``wrt``
    on every call (closures over those exact Tensor objects); elements
    are perturbed in place between evaluations.  ``fn_value`` may supply
    the same objective at float64 precision for the difference quotient;
    float32 scalars lose enough bits to dominate the error budget on
    large projected outputs.
    """
    for t in wrt.values():
        t.requires_grad = True
        t.grad = None
    with GradTape() as tape:
        loss = fn()
    tape.backward(loss)
    value = fn_value if fn_value is not None else (lambda: float(fn().data))

    per_tensor: dict[str, float] = {}
    worst = 0.0
    for label, t in wrt.items():
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        t_max = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + np.float32(epsilon)
            f_plus = value()
            flat[i] = orig - np.float32(epsilon)
            f_minus = value()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            err = _rel_error(float(analytic.reshape(-1)[i]), numeric)
            if err > t_max:
                t_max = err
        per_tensor[label] = t_max
        worst = max(worst, t_max)
    return GradCheckResult(
        name=name,
        max_rel_error=worst,
        tolerance=tolerance,
        passed=worst < tolerance,
        per_tensor=per_tensor,
    )


def make_projection(shape, rng: np.random.Generator) -> np.ndarray:
    """Fixed random weight field for reducing an op output to a scalar.

    A plain sum hides sign and permutation errors; projecting against a
    fixed weight field makes every element observable.  Draw the weights
    once, outside the objective closure, so repeated evaluations see the
    same function.
    """
    return rng.uniform(-1.0, 1.0, size=shape).astype(np.float32)


def project(out: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar objective <out, weights> built from tape ops."""
    from irisauth.nn import ops

    return ops.tsum(ops.mul_const(out, weights))
