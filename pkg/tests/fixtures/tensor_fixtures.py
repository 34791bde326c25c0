"""
Random inputs and the finite-difference oracle.
"""
from typing import Callable

import numpy as np
import pytest

from lgdc.ndcore import Tensor


def central_difference(loss_fn: Callable[[], float], tensor: Tensor, index: tuple, eps: float = 1e-5) -> float:
    """d loss / d tensor[index] by central differences; ``loss_fn`` reruns the forward pass."""
    original = tensor.data[index]
    tensor.data[index] = original + eps
    plus = loss_fn()
    tensor.data[index] = original - eps
    minus = loss_fn()
    tensor.data[index] = original
    return (plus - minus) / (2.0 * eps)


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


@pytest.fixture
def rng():
    """Seeded generator, fresh per test."""
    return np.random.default_rng(1234)


@pytest.fixture
def finite_difference():
    """Central-difference helper: ``finite_difference(loss_fn, tensor, index)``."""
    return central_difference


@pytest.fixture
def rel_err():
    return relative_error
