"""Reverse-mode tape built on numpy arrays.

Every operation in :mod:`aspun.autodiff.ops` produces a :class:`Tensor`
holding references to its parents and a closure that maps the output
gradient to parent gradients.  ``backward()`` on a scalar walks this DAG
once in reverse topological order, accumulating gradients additively at
fan-out points.

The graph is single-writer: one thread builds and differentiates a given
graph.  Recording can be suspended per-thread with :func:`no_grad`, and a
debug mode (:func:`set_debug_nan_checks`) raises at the first op whose
output contains a non-finite value.
"""

import threading
from contextlib import contextmanager

import numpy as np

from ..errors import ShapeError

_STATE = threading.local()


def grad_enabled() -> bool:
    return getattr(_STATE, "grad_enabled", True)


@contextmanager
def no_grad():
    """Suspend graph recording on the current thread."""
    previous = grad_enabled()
    _STATE.grad_enabled = False
    try:
        yield
    finally:
        _STATE.grad_enabled = previous


def set_debug_nan_checks(enabled: bool):
    """Toggle per-op finiteness checks (off by default; forward-pass only)."""
    _STATE.debug_nan = bool(enabled)


def debug_nan_checks_enabled() -> bool:
    return getattr(_STATE, "debug_nan", False)


class Tensor:
    """N-dimensional float array participating in reverse-mode differentiation.

    ``data`` is row-major float64 unless float32 is passed explicitly.
    ``grad`` is populated (same shape as ``data``) by ``backward()`` on
    every tensor with ``requires_grad`` reachable from the loss.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None

    # Basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() requires a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Operator sugar (delegates to ops to keep the tape logic in one place).

    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops

        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    # Differentiation ------------------------------------------------------

    def backward(self):
        """Populate ``grad`` on every reachable tensor with requires_grad.

        The loss must be scalar.  Each graph node is visited exactly once,
        in reverse topological order; gradients accumulate additively when
        a tensor feeds several consumers.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() requires a scalar loss, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen and (parent._parents or parent.requires_grad):
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            for parent, grad in zip(node._parents, node._backward(node.grad)):
                if grad is None or not parent.requires_grad:
                    continue
                if grad.shape != parent.data.shape:
                    raise ShapeError(
                        f"internal: gradient shape {grad.shape} does not match "
                        f"parent shape {parent.data.shape}"
                    )
                parent.grad = grad if parent.grad is None else parent.grad + grad


def as_tensor(value, dtype=None) -> Tensor:
    """Wrap scalars and arrays as constant tensors; pass tensors through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=False, dtype=dtype)


def make_result(data: np.ndarray, parents: tuple, backward_fn, op_name: str) -> Tensor:
    """Assemble an op output, recording the tape edge when grads are on."""
    if debug_nan_checks_enabled() and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by op '{op_name}'")
    requires = grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=requires)
    if requires:
        out._parents = parents
        out._backward = backward_fn
    return out
