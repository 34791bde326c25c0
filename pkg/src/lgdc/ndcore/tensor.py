"""Dense float64 tensors with a tape-based reverse-mode contract.

Every differentiable operation is a ``Function`` subclass. ``Function.apply``
runs the numpy forward pass and, when any input requires a gradient, links a
``Node`` to the result and appends it to the active ``GradTape`` (if one is
open). Nodes carry a global sequence number, so append order is a topological
order and ``backward`` walks reachable nodes in reverse sequence, each once.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from contextvars import ContextVar
from typing import Any, Iterator, Sequence

import numpy as np

from lgdc.core.exceptions import DetachedGraph, NonFiniteValue, NotScalar

_grad_enabled: ContextVar[bool] = ContextVar("grad_enabled", default=True)
_active_tape: ContextVar["GradTape | None"] = ContextVar("active_tape", default=None)
_sequence = itertools.count()


def _as_array(data: Any) -> np.ndarray:
    return np.ascontiguousarray(data, dtype=np.float64)


def check_finite(array: np.ndarray, where: str) -> None:
    if not np.isfinite(array).all():
        raise NonFiniteValue(f"non-finite values produced by {where}")


class Tensor:
    """Row-major float64 array with an optional gradient store."""

    __array_priority__ = 1000  # numpy defers mixed arithmetic to Tensor

    def __init__(self, data: Any, requires_grad: bool = False, _node: "Node | None" = None):
        self.data = _as_array(data)
        check_finite(self.data, "tensor construction")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node = _node

    # -- construction helpers -------------------------------------------------

    @classmethod
    def zeros(cls, shape: Sequence[int], requires_grad: bool = False) -> "Tensor":
        return cls(np.zeros(tuple(shape)), requires_grad=requires_grad)

    @classmethod
    def ones(cls, shape: Sequence[int], requires_grad: bool = False) -> "Tensor":
        return cls(np.ones(tuple(shape)), requires_grad=requires_grad)

    @staticmethod
    def wrap(value: Any) -> "Tensor":
        return value if isinstance(value, Tensor) else Tensor(value)

    # -- introspection --------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def node(self) -> "Node | None":
        return self._node

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.size != 1:
            raise NotScalar(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operators (defined in ops, bound lazily) -------------------------------

    def __add__(self, other):
        from lgdc.ndcore import ops

        return ops.add(self, Tensor.wrap(other))

    def __radd__(self, other):
        from lgdc.ndcore import ops

        return ops.add(Tensor.wrap(other), self)

    def __sub__(self, other):
        from lgdc.ndcore import ops

        return ops.sub(self, Tensor.wrap(other))

    def __rsub__(self, other):
        from lgdc.ndcore import ops

        return ops.sub(Tensor.wrap(other), self)

    def __mul__(self, other):
        from lgdc.ndcore import ops

        return ops.mul(self, Tensor.wrap(other))

    def __rmul__(self, other):
        from lgdc.ndcore import ops

        return ops.mul(Tensor.wrap(other), self)

    def __truediv__(self, other):
        from lgdc.ndcore import ops

        return ops.div(self, Tensor.wrap(other))

    def __neg__(self):
        from lgdc.ndcore import ops

        return ops.mul(self, Tensor(-1.0))

    def __matmul__(self, other):
        from lgdc.ndcore import ops

        return ops.matmul(self, Tensor.wrap(other))

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        from lgdc.ndcore import ops

        return ops.sum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: int) -> "Tensor":
        from lgdc.ndcore import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes: int) -> "Tensor":
        from lgdc.ndcore import ops

        return ops.transpose(self, axes or None)

    @property
    def T(self) -> "Tensor":
        return self.transpose()


class Node:
    """One recorded operation: the function that produced a tensor and its inputs."""

    __slots__ = ("function", "inputs", "seq")

    def __init__(self, function: "Function", inputs: tuple[Tensor, ...]):
        self.function = function
        self.inputs = inputs
        self.seq = next(_sequence)

    @property
    def op(self) -> str:
        return type(self.function).__name__

    def __repr__(self) -> str:
        return f"Node({self.op}, seq={self.seq})"


class GradTape:
    """Append-only record of operations executed while the tape is open."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._token = None

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def ops(self) -> list[str]:
        return [node.op for node in self.nodes]

    def __len__(self) -> int:
        return len(self.nodes)

    def __enter__(self) -> "GradTape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb) -> None:
        if self._token is not None:
            _active_tape.reset(self._token)
            self._token = None

    def backward(self, loss: Tensor) -> None:
        if loss.node is not None and all(node is not loss.node for node in self.nodes):
            raise DetachedGraph("loss was not produced on this tape")
        backward(loss)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording; results are plain constants."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def is_grad_enabled() -> bool:
    return _grad_enabled.get()


class Function:
    """Base class for differentiable operations.

    Subclasses implement ``forward`` on numpy arrays (saving whatever the
    backward pass needs on ``self``) and ``backward`` returning one gradient
    (or ``None``) per input.
    """

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs: Any) -> Tensor:
        function = cls()
        out = function.forward(*(t.data for t in inputs), **kwargs)
        out = _as_array(out)
        check_finite(out, cls.__name__)
        needs_grad = is_grad_enabled() and any(t.requires_grad for t in inputs)
        if not needs_grad:
            return Tensor(out)
        node = Node(function, inputs)
        tape = _active_tape.get()
        if tape is not None:
            tape.record(node)
        return Tensor(out, requires_grad=True, _node=node)


def _accumulate(store: dict[int, tuple[Tensor, np.ndarray]], tensor: Tensor, grad: np.ndarray) -> None:
    key = id(tensor)
    if key in store:
        store[key] = (tensor, store[key][1] + grad)
    else:
        store[key] = (tensor, grad)


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires-grad tensor reachable from ``loss``.

    Gradients accumulate (``+=``) into existing ``grad`` stores, so a tensor
    used by several branches, or across several losses, sums its parts.
    """
    if loss.size != 1:
        raise NotScalar(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.node is None:
        if not loss.requires_grad:
            raise DetachedGraph("loss does not depend on any tensor that requires grad")
        seed = np.ones_like(loss.data)
        loss.grad = seed if loss.grad is None else loss.grad + seed
        return

    # reachable producers, each once
    produced: list[Tensor] = []
    seen: set[int] = set()
    stack = [loss]
    while stack:
        tensor = stack.pop()
        node = tensor.node
        if node is None or id(node) in seen:
            continue
        seen.add(id(node))
        produced.append(tensor)
        stack.extend(t for t in node.inputs if t.requires_grad)
    produced.sort(key=lambda t: t.node.seq, reverse=True)

    pending: dict[int, tuple[Tensor, np.ndarray]] = {id(loss): (loss, np.ones_like(loss.data))}
    for tensor in produced:
        entry = pending.pop(id(tensor), None)
        if entry is None:
            continue
        grad = entry[1]
        tensor.grad = grad if tensor.grad is None else tensor.grad + grad
        node = tensor.node
        for inp, inp_grad in zip(node.inputs, node.function.backward(grad)):
            if inp_grad is None or not inp.requires_grad:
                continue
            _accumulate(pending, inp, inp_grad)

    # what is left are leaves
    for leaf, grad in pending.values():
        leaf.grad = grad if leaf.grad is None else leaf.grad + grad
