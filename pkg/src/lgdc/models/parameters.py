from __future__ import annotations

import hashlib
from collections import OrderedDict
from typing import Iterator

import numpy as np

from lgdc.core.exceptions import CheckpointError, ShapeMismatch
from lgdc.ndcore import Tensor


class ParameterStore:
    """Named trainable tensors shared by every branch of the network.

    Registration order is fixed; initialisation, optimiser state and
    checkpoint layout all follow it.
    """

    def __init__(self):
        self._params: OrderedDict[str, Tensor] = OrderedDict()

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already registered")
        tensor = Tensor(value, requires_grad=True)
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for tensor in self._params.values():
            tensor.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {
            name: (t.grad if t.grad is not None else np.zeros_like(t.data)) for name, t in self._params.items()
        }

    def state_dict(self) -> OrderedDict[str, np.ndarray]:
        return OrderedDict((name, t.data.copy()) for name, t in self._params.items())

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        missing = [name for name in self._params if name not in state]
        if strict and missing:
            raise CheckpointError(f"checkpoint is missing parameters: {', '.join(missing)}")
        for name, tensor in self._params.items():
            if name not in state:
                continue
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != tensor.shape:
                raise ShapeMismatch(f"parameter {name}: checkpoint shape {value.shape} != model shape {tensor.shape}")
            tensor.data = value.copy()
            tensor.grad = None

    def digest(self) -> str:
        """sha256 over names, shapes and little-endian payloads."""
        h = hashlib.sha256()
        for name, tensor in self._params.items():
            h.update(name.encode("utf-8"))
            h.update(np.asarray(tensor.shape, dtype="<u4").tobytes())
            h.update(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())
        return h.hexdigest()


def kaiming_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, scale: float = 1.0) -> np.ndarray:
    return rng.normal(0.0, scale * np.sqrt(2.0 / fan_in), size=shape)
