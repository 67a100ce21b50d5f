"""Parameter update rules: AMSGrad (primary) and Adam (baseline).

AMSGrad follows its original formulation without bias correction and
keeps a running elementwise maximum of the second moment, so the
effective step size never grows.  Adam keeps the usual bias correction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from irisauth.errors import ContractViolation, GradientError
from irisauth.nn.tensor import ParamSet

__all__ = [
    "OptimHyper", "OptState", "amsgrad_step", "adam_step",
    "clip_gradients", "Optimizer",
]


@dataclass(frozen=True)
class OptimHyper:
    """Optimizer hyperparameters; betas/epsilon are conventional defaults."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0:
            raise ContractViolation(f"lr must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ContractViolation(
                f"betas must lie in [0,1), got {self.beta1}, {self.beta2}")
        if self.epsilon <= 0:
            raise ContractViolation(f"epsilon must be positive, got {self.epsilon}")


@dataclass
class OptState:
    """Per-parameter moments plus the shared step counter.

    ``v_hat`` (the running max of ``v``) is only advanced by AMSGrad;
    Adam leaves it untouched.
    """

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    v_hat: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_params(cls, params: ParamSet) -> "OptState":
        state = cls()
        for name, tensor in params.items():
            state.m[name] = np.zeros_like(tensor.data)
            state.v[name] = np.zeros_like(tensor.data)
            state.v_hat[name] = np.zeros_like(tensor.data)
        return state

    def arrays(self) -> dict[str, np.ndarray]:
        """Flat view for checkpointing (``m.<name>`` etc. plus step count)."""
        out: dict[str, np.ndarray] = {}
        for name in self.m:
            out[f"m.{name}"] = self.m[name]
            out[f"v.{name}"] = self.v[name]
            out[f"v_hat.{name}"] = self.v_hat[name]
        return out

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], t: int) -> "OptState":
        state = cls(t=t)
        for key, arr in arrays.items():
            slot, _, name = key.partition(".")
            if slot == "m":
                state.m[name] = arr
            elif slot == "v":
                state.v[name] = arr
            elif slot == "v_hat":
                state.v_hat[name] = arr
        return state


def _check_step_args(params: ParamSet, grads: dict[str, np.ndarray],
                     state: OptState) -> None:
    for name, tensor in params.items():
        if name not in grads:
            raise ContractViolation(f"missing gradient for parameter {name!r}")
        g = grads[name]
        if g.shape != tensor.data.shape:
            raise ContractViolation(
                f"gradient shape {g.shape} != parameter shape "
                f"{tensor.data.shape} for {name!r}")
        if name not in state.m:
            raise ContractViolation(f"optimizer state missing slot for {name!r}")
        if not np.all(np.isfinite(g)):
            raise GradientError(f"non-finite gradient for parameter {name!r}")


def amsgrad_step(params: ParamSet, grads: dict[str, np.ndarray],
                 state: OptState, h: OptimHyper) -> tuple[ParamSet, OptState]:
    """One AMSGrad update, in place; returns (params, state) for chaining.

    m <- b1*m + (1-b1)*g; v <- b2*v + (1-b2)*g^2; vhat <- max(vhat, v);
    theta <- theta - lr * m / (sqrt(vhat) + eps).  No bias correction.
    """
    _check_step_args(params, grads, state)
    state.t += 1
    for name, tensor in params.items():
        g = grads[name].astype(np.float32, copy=False)
        m = state.m[name]
        v = state.v[name]
        m *= h.beta1
        m += (1.0 - h.beta1) * g
        v *= h.beta2
        v += (1.0 - h.beta2) * (g * g)
        np.maximum(state.v_hat[name], v, out=state.v_hat[name])
        tensor.data -= (h.lr * m / (np.sqrt(state.v_hat[name]) + h.epsilon)).astype(np.float32)
    return params, state


def adam_step(params: ParamSet, grads: dict[str, np.ndarray],
              state: OptState, h: OptimHyper) -> tuple[ParamSet, OptState]:
    """One bias-corrected Adam update, in place."""
    _check_step_args(params, grads, state)
    state.t += 1
    bc1 = 1.0 - h.beta1 ** state.t
    bc2 = 1.0 - h.beta2 ** state.t
    for name, tensor in params.items():
        g = grads[name].astype(np.float32, copy=False)
        m = state.m[name]
        v = state.v[name]
        m *= h.beta1
        m += (1.0 - h.beta1) * g
        v *= h.beta2
        v += (1.0 - h.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        tensor.data -= (h.lr * m_hat / (np.sqrt(v_hat) + h.epsilon)).astype(np.float32)
    return params, state


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    """Scale all gradients down so their global L2 norm is at most max_norm."""
    if max_norm <= 0:
        raise ContractViolation(f"max_norm must be positive, got {max_norm}")
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g.astype(np.float64) ** 2))
    norm = float(np.sqrt(total))
    if norm <= max_norm:
        return grads
    scale = np.float32(max_norm / norm)
    return {name: g * scale for name, g in grads.items()}


_STEP_FNS = {"amsgrad": amsgrad_step, "adam": adam_step}


class Optimizer:
    """Loop-friendly wrapper: reads grads from the ParamSet's slots."""

    def __init__(self, params: ParamSet, hyper: OptimHyper,
                 kind: str = "amsgrad", clip_norm: float | None = None):
        if kind not in _STEP_FNS:
            raise ContractViolation(
                f"unknown optimizer {kind!r}; expected one of {sorted(_STEP_FNS)}")
        self.params = params
        self.hyper = hyper
        self.kind = kind
        self.clip_norm = clip_norm
        self.state = OptState.for_params(params)

    def step(self) -> None:
        grads = self.params.grads()
        if self.clip_norm is not None:
            grads = clip_gradients(grads, self.clip_norm)
        _STEP_FNS[self.kind](self.params, grads, self.state, self.hyper)

    def zero_grads(self) -> None:
        self.params.zero_grads()
