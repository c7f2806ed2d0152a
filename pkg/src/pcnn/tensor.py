"""Dense float64 tensor with reverse-mode gradient taping.

The op set lives in :mod:`pcnn.ops`; this module owns the value type, the
tape, and the finite-difference oracle used to cross-check every analytic
gradient in the test suite.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

__all__ = ["Tensor", "GradTape", "backward", "finite_difference_gradient"]


class Tensor:
    """Immutable dense array of 64-bit floats.

    ``data`` is stored row-major and must not be mutated once the tensor has
    entered a taped computation. ``grad`` is populated by a tape's backward
    pass for tensors created with ``requires_grad=True``.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    @staticmethod
    def zeros(shape, requires_grad: bool = False, name: str | None = None) -> "Tensor":
        return Tensor(np.zeros(shape), requires_grad=requires_grad, name=name)

    @staticmethod
    def ones(shape, requires_grad: bool = False, name: str | None = None) -> "Tensor":
        return Tensor(np.ones(shape), requires_grad=requires_grad, name=name)


def as_tensor(value) -> Tensor:
    """Wrap scalars/arrays as constant tensors; pass tensors through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


_STATE = threading.local()


def _tape_stack() -> list["GradTape"]:
    stack = getattr(_STATE, "tapes", None)
    if stack is None:
        stack = []
        _STATE.tapes = stack
    return stack


def active_tape() -> "GradTape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class GradTape:
    """Ordered record of executed ops for one forward pass.

    Ops append ``(output, inputs, pull_back)`` entries in execution order, so
    the record is already a topological order of the graph; replaying it in
    reverse implements reverse-mode differentiation. A tape is single-writer:
    one forward pass, one backward call, then it is consumed.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._produced: set[int] = set()
        self._consumed = False
        self._active = False

    def __enter__(self) -> "GradTape":
        if self._consumed or self._active:
            raise RuntimeError("GradTape cannot be reused")
        self._active = True
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("GradTape exited out of order")
        stack.pop()
        self._active = False

    def record(self, output: Tensor, inputs: Sequence[Tensor], pull_back: Callable) -> None:
        """pull_back(grad_out) must return one gradient array (or None) per input."""
        self._records.append((output, tuple(inputs), pull_back))
        self._produced.add(id(output))

    def watches(self, t: Tensor) -> bool:
        return id(t) in self._produced

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        """Replay the tape in reverse from a scalar loss.

        Returns the gradient for every ``requires_grad`` leaf that
        contributed to ``loss``, and mirrors each one onto ``leaf.grad``.
        The tape is consumed afterwards.
        """
        if self._consumed:
            raise RuntimeError("GradTape already consumed")
        if self._active:
            raise RuntimeError("backward() must run outside the tape's with-block")
        if loss.data.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.shape}")
        if id(loss) not in self._produced:
            raise ValueError("loss tensor was not produced on this tape")

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[Tensor, np.ndarray] = {}
        for output, inputs, pull_back in reversed(self._records):
            g_out = grads.pop(id(output), None)
            if g_out is None:
                continue
            g_inputs = pull_back(g_out)
            for t, g in zip(inputs, g_inputs):
                if g is None:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g
                if t.requires_grad and id(t) not in self._produced:
                    leaves[t] = grads[key]

        for t, g in leaves.items():
            t.grad = np.asarray(g, dtype=np.float64).reshape(t.shape)
        self._records.clear()
        self._produced.clear()
        self._consumed = True
        return leaves


def backward(tape: GradTape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Run the tape's reverse pass; see :meth:`GradTape.backward`."""
    return tape.backward(loss)


def finite_difference_gradient(
    f: Callable[[], float] | Callable[[dict], float],
    params: dict[str, Tensor],
    eps: float = 1e-6,
) -> dict[str, np.ndarray]:
    """Central-difference gradients of a scalar function, one coordinate at a time.

    ``f`` is re-evaluated with each parameter entry perturbed in place by
    +/- ``eps``; values are restored exactly afterwards. ``f`` may take the
    params dict or no arguments (closing over the tensors directly).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")

    def call() -> float:
        try:
            return float(f(params))  # type: ignore[call-arg]
        except TypeError:
            return float(f())  # type: ignore[call-arg]

    out: dict[str, np.ndarray] = {}
    for name, t in params.items():
        flat = t.data.reshape(-1)
        grad = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = call()
            flat[i] = orig - eps
            lo = call()
            flat[i] = orig
            grad[i] = (hi - lo) / (2.0 * eps)
        out[name] = grad.reshape(t.shape)
    return out
