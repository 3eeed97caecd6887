"""Named parameter storage and the SGD update."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import Tensor


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32, gain: float = 1.0) -> np.ndarray:
    """Fan-in scaled Gaussian init, std = gain * sqrt(1 / fan_in).

    gain sqrt(2) is the ReLU correction; for the tanh stages here gain 1
    keeps activations out of saturation and the initial embedding scale
    compatible with the hinge margin.
    """
    if fan_in < 1:
        raise ValueError("fan_in must be positive")
    return (rng.standard_normal(shape) * (gain / np.sqrt(fan_in))).astype(dtype)


class ParamStore:
    """Named parameter tensors with paired gradient accumulators.

    Every parameter carries a zero-initialized gradient buffer of identical
    shape; buffers are re-zeroed by :func:`sgd_step` after each update.
    Both Siamese branches hold the same store object, so weight sharing is
    physical rather than synchronized.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        if self.dtype not in (np.float32, np.float64):
            raise ValueError("ParamStore supports float32 or float64 only")
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, values: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"parameter {name!r} already registered")
        t = Tensor(np.asarray(values, dtype=self.dtype).copy(), requires_grad=True, tag=f"param:{name}")
        t.zero_grad()
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Copies of the current parameter values keyed by name."""
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, values in arrays.items():
            p = self._params[name]
            arr = np.asarray(values, dtype=self.dtype)
            if arr.shape != p.data.shape:
                raise ValueError(f"parameter {name!r}: shape {arr.shape} != {p.data.shape}")
            p.data = arr.copy()

    def total_parameters(self) -> int:
        return sum(p.data.size for p in self._params.values())


def sgd_step(params: ParamStore, lr: float) -> None:
    """p <- p - lr * grad(p) for every parameter, then zero all gradients."""
    for _, p in params.items():
        if p.grad is None:
            p.zero_grad()
        p.data = (p.data - lr * p.grad).astype(p.data.dtype, copy=False)
        p.zero_grad()
