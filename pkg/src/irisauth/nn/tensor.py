"""Dense float32 tensor, named parameter sets, and the gradient tape.

Every array that flows through the network is a ``Tensor``: a float32
ndarray plus a gradient slot.  Operations from :mod:`irisauth.nn.ops`
record themselves on the innermost active :class:`GradTape`; replaying
the tape backward fills the ``grad`` slot of every tensor that
influenced the loss.
"""

from __future__ import annotations

from typing import Callable, Iterator, Sequence

import numpy as np

from irisauth.errors import ContractViolation

__all__ = ["Tensor", "ParamSet", "GradTape", "astensor"]


class Tensor:
    """A float32 array with an optional gradient slot.

    ``data`` is always a C-contiguous ``np.float32`` array.  ``grad``
    starts out ``None`` and is populated (or accumulated into) by
    :meth:`GradTape.backward`.
    """

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float32)
        # ascontiguousarray would promote 0-d scalars to 1-d; keep rank.
        if arr.ndim > 0 and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.data.shape}, requires_grad={self.requires_grad})"


def astensor(x) -> Tensor:
    """Wrap ``x`` in a Tensor unless it already is one."""
    return x if isinstance(x, Tensor) else Tensor(x)


class ParamSet:
    """Ordered collection of named learnable tensors.

    Declaration order is preserved; checkpoints serialize parameters in
    this order.  All tensors have ``requires_grad=True``.
    """

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}

    def add(self, name: str, data) -> Tensor:
        if name in self._tensors:
            raise ContractViolation(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=True, name=name)
        self._tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._tensors.items())

    def tensors(self) -> Iterator[Tensor]:
        return iter(self._tensors.values())

    def zero_grads(self) -> None:
        for t in self._tensors.values():
            t.zero_grad()

    def grads(self) -> dict[str, np.ndarray]:
        """Current gradients, substituting zeros for empty slots."""
        return {
            name: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in self._tensors.items()
        }

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self._tensors.items()}

    def copy(self) -> "ParamSet":
        out = ParamSet()
        for name, t in self._tensors.items():
            out.add(name, t.data.copy())
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        """Overwrite parameter values in place from ``arrays``."""
        missing = [n for n in self._tensors if n not in arrays]
        if missing:
            raise ContractViolation(f"missing arrays for parameters {missing}")
        for name, t in self._tensors.items():
            src = np.asarray(arrays[name], dtype=np.float32)
            if src.shape != t.data.shape:
                raise ContractViolation(
                    f"shape mismatch for parameter {name!r}: "
                    f"{src.shape} != {t.data.shape}"
                )
            t.data = np.ascontiguousarray(src)


# Innermost-last stack of active tapes.  Ops record onto _TAPES[-1].
_TAPES: list["GradTape"] = []


class _Node:
    __slots__ = ("inputs", "output", "backward")

    def __init__(self, inputs: tuple[Tensor, ...], output: Tensor,
                 backward: Callable[[np.ndarray, tuple[bool, ...]], Sequence[np.ndarray | None]]):
        self.inputs = inputs
        self.output = output
        self.backward = backward


class GradTape:
    """Ordered record of executed operations for reverse-mode replay.

    Use as a context manager around the forward computation, then call
    :meth:`backward` on the scalar loss.  Tensors are confined to one
    tape/worker at a time; nothing here is thread-safe by design.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "GradTape":
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _TAPES.remove(self)

    def record(self, inputs: tuple[Tensor, ...], output: Tensor, backward) -> None:
        self._nodes.append(_Node(inputs, output, backward))
        self._produced.add(id(output))

    def __len__(self) -> int:
        return len(self._nodes)

    def _needs_grad(self, t: Tensor) -> bool:
        return t.requires_grad or id(t) in self._produced

    def backward(self, loss: Tensor, params: ParamSet | None = None) -> None:
        """Replay the tape in reverse, accumulating into ``grad`` slots.

        ``loss`` must be a scalar (0-d) tensor produced on this tape.
        When ``params`` is given, every parameter ends up with a gradient
        array: zeros if it never influenced the loss.
        """
        if loss.data.ndim != 0:
            raise ContractViolation(
                f"backward requires a scalar loss, got shape {loss.data.shape}"
            )
        flowing: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float32)}
        for node in reversed(self._nodes):
            out_grad = flowing.get(id(node.output))
            if out_grad is None:
                continue
            needs = tuple(self._needs_grad(t) for t in node.inputs)
            if not any(needs):
                continue
            input_grads = node.backward(out_grad, needs)
            for t, g in zip(node.inputs, input_grads):
                if g is None:
                    continue
                key = id(t)
                if key in flowing:
                    flowing[key] = flowing[key] + g
                else:
                    flowing[key] = g
        # Deposit into grad slots of leaf tensors that asked for gradients.
        seen: set[int] = set()
        for node in self._nodes:
            for t in node.inputs:
                if id(t) in seen or not t.requires_grad:
                    continue
                seen.add(id(t))
                g = flowing.get(id(t))
                if g is None:
                    continue
                g = np.asarray(g, dtype=np.float32).reshape(t.data.shape)
                if t.grad is None:
                    t.grad = g.copy()
                else:
                    t.grad = t.grad + g
        if params is not None:
            for t in params.tensors():
                if t.grad is None:
                    t.grad = np.zeros_like(t.data)


def active_tape() -> GradTape | None:
    """The innermost active tape, or None outside any recording scope."""
    return _TAPES[-1] if _TAPES else None
