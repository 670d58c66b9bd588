"""Tensor and tape for reverse-mode differentiation.

Operations only record themselves while a :class:`Tape` is active::

    with Tape() as tape:
        loss = ops.sum(ops.mul(x, x))
    tape.backward(loss)

Outside a tape every op is a plain numpy computation with no graph kept,
which is what inference and evaluation use.
"""

from __future__ import annotations

import contextvars
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Operand shapes are incompatible for an operation."""


class ContractError(RuntimeError):
    """A precondition of the differentiation machinery was violated."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
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
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # Operator sugar; implementations live in ops.
    def __add__(self, other):
        from . import ops
        return ops.add(self, as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, as_tensor(other))

    def __rsub__(self, other):
        from . import ops
        return ops.sub(as_tensor(other), self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.mul(self, as_tensor(-1.0))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Node:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: BackwardFn
    op: str


_ACTIVE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar("ecgsal_tape", default=None)


class Tape:
    """Ordered record of differentiable operations.

    Nodes are appended in execution order, which is a topological order of
    the graph; :meth:`backward` walks them once in reverse.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)


def active_tape() -> Tape | None:
    return _ACTIVE.get()


def record(out: Tensor, inputs: Sequence[Tensor], fn: BackwardFn, op: str) -> Tensor:
    """Attach ``fn`` as the backward rule of ``out`` if any input needs a gradient."""
    tape = _ACTIVE.get()
    if tape is None or not any(t.requires_grad for t in inputs):
        return out
    out.requires_grad = True
    tape.nodes.append(Node(out, tuple(inputs), fn, op))
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``.grad`` on every gradient-requiring tensor reachable from ``loss``.

    Gradients accumulate into existing ``.grad`` arrays, so call
    :meth:`Tensor.zero_grad` (or an optimizer's ``zero_grad``) between steps.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires a gradient")

    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    owners: dict[int, Tensor] = {id(loss): loss}
    produced: set[int] = set()

    for node in reversed(tape.nodes):
        key = id(node.out)
        produced.add(key)
        g = pending.pop(key, None)
        if g is None:
            continue
        node.out.grad = g if node.out.grad is None else node.out.grad + g
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            k = id(inp)
            if k in pending:
                pending[k] = pending[k] + gi
            else:
                pending[k] = gi
                owners[k] = inp

    for k, g in pending.items():
        t = owners[k]
        if k in produced:
            continue
        t.grad = g.copy() if t.grad is None else t.grad + g
