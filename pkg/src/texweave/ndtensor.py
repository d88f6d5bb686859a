"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph is an implicit DAG: every operation returns a fresh ``Tensor``
holding references to its inputs and a closure that propagates gradients.
``backward`` materializes the tape (a :class:`Graph`) by topological order
and runs the closures in reverse, visiting each node exactly once.  Graphs
are rebuilt on every forward pass; finished tensors are immutable values.

Everything is 64-bit.  ``log``, ``sqrt`` and division are clamped at
``EPS`` so losses stay finite at saturated predictions.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

EPS = 1e-8

_node_ids = itertools.count()


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


class Tensor:
    """A value node: n-d float64 data, an optional gradient, and its provenance."""

    __slots__ = ("data", "grad", "node_id", "op", "parents", "_backward")

    def __init__(self, data, op: str = "leaf", parents: tuple = (),
                 backward: Callable[[], None] | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags.c_contiguous:  # ascontiguousarray would promote 0-d to 1-d
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.node_id = next(_node_ids)
        self.op = op
        self.parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """A leaf copy holding the same values, cut off from the graph."""
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r})"

    # Operator sugar; all semantics live in the module-level functions.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Graph:
    """Tape view of everything reachable from a root, inputs before outputs."""

    __slots__ = ("nodes",)

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def trace(cls, root: Tensor) -> "Graph":
        # Iterative postorder DFS; graphs can exceed the recursion limit.
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node.parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)


def backward(root: Tensor) -> None:
    """Populate ``grad`` on every ancestor of a scalar root with d(root)/d(node)."""
    if root.size != 1:
        raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
    graph = Graph.trace(root)
    for node in graph.nodes:
        node.grad = np.zeros_like(node.data)
    root.grad = np.ones_like(root.data)
    for node in reversed(graph.nodes):
        if node._backward is not None:
            node._backward()


def as_tensor(value) -> Tensor:
    """Wrap scalars / arrays as leaf tensors; pass tensors through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


def _check_elementwise(a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    raise ShapeError(f"elementwise op needs matching shapes or a scalar, "
                     f"got {a.shape} and {b.shape}")


def _accumulate(parent: Tensor, contribution: np.ndarray) -> None:
    # Scalar operands absorb the summed gradient of the broadcast result.
    if parent.shape != contribution.shape:
        contribution = np.sum(contribution).reshape(parent.shape)
    parent.grad += contribution


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a, b)
    out = Tensor(a.data + b.data, "add", (a, b))

    def back():
        _accumulate(a, out.grad)
        _accumulate(b, out.grad)

    out._backward = back
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a, b)
    out = Tensor(a.data - b.data, "sub", (a, b))

    def back():
        _accumulate(a, out.grad)
        _accumulate(b, -out.grad)

    out._backward = back
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a, b)
    out = Tensor(a.data * b.data, "mul", (a, b))

    def back():
        _accumulate(a, out.grad * b.data)
        _accumulate(b, out.grad * a.data)

    out._backward = back
    return out


def div(a, b) -> Tensor:
    """Elementwise division with the denominator magnitude clamped at EPS."""
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a, b)
    safe = np.where(np.abs(b.data) < EPS, np.copysign(EPS, b.data), b.data)
    out = Tensor(a.data / safe, "div", (a, b))

    def back():
        _accumulate(a, out.grad / safe)
        _accumulate(b, -out.grad * a.data / (safe * safe))

    out._backward = back
    return out


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(-a.data, "neg", (a,))

    def back():
        _accumulate(a, -out.grad)

    out._backward = back
    return out


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.exp(a.data), "exp", (a,))

    def back():
        _accumulate(a, out.grad * out.data)

    out._backward = back
    return out


def log(a) -> Tensor:
    """Natural log, argument clamped below at EPS."""
    a = as_tensor(a)
    clamped = np.maximum(a.data, EPS)
    out = Tensor(np.log(clamped), "log", (a,))

    def back():
        _accumulate(a, out.grad / clamped)

    out._backward = back
    return out


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.sqrt(np.maximum(a.data, 0.0)), "sqrt", (a,))

    def back():
        _accumulate(a, out.grad * 0.5 / np.sqrt(np.maximum(a.data, EPS)))

    out._backward = back
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # Split formulation avoids overflow in exp for large |x|.
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(s, "sigmoid", (a,))

    def back():
        _accumulate(a, out.grad * out.data * (1.0 - out.data))

    out._backward = back
    return out


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.tanh(a.data), "tanh", (a,))

    def back():
        _accumulate(a, out.grad * (1.0 - out.data * out.data))

    out._backward = back
    return out


def square(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data * a.data, "square", (a,))

    def back():
        _accumulate(a, out.grad * 2.0 * a.data)

    out._backward = back
    return out


def absval(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.abs(a.data), "abs", (a,))

    def back():
        _accumulate(a, out.grad * np.sign(a.data))

    out._backward = back
    return out


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient passes only through the interior."""
    a = as_tensor(a)
    out = Tensor(np.clip(a.data, lo, hi), "clip", (a,))

    def back():
        mask = (a.data >= lo) & (a.data <= hi)
        _accumulate(a, out.grad * mask)

    out._backward = back
    return out


_UNARY = {"neg": neg, "exp": exp, "log": log, "sqrt": sqrt, "sigmoid": sigmoid,
          "tanh": tanh, "square": square, "abs": absval}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op: str, a, b=None) -> Tensor:
    """Dispatch an elementwise op by name (handy for parametrized checks)."""
    if op in _UNARY:
        if b is not None:
            raise ValueError(f"{op} is unary")
        return _UNARY[op](a)
    if op in _BINARY:
        if b is None:
            raise ValueError(f"{op} is binary")
        return _BINARY[op](a, b)
    raise ValueError(f"unknown elementwise op {op!r}")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data, "matmul", (a, b))

    def back():
        a.grad += out.grad @ b.data.T
        b.grad += a.data.T @ out.grad

    out._backward = back
    return out


def reduce(op: str, a, axes: Sequence[int] | None = None) -> Tensor:
    """Sum or mean over the given axes (all axes when None)."""
    a = as_tensor(a)
    if op not in ("sum", "mean"):
        raise ValueError(f"unknown reduce op {op!r}")
    ndim = a.data.ndim
    if axes is None:
        axes_t = tuple(range(ndim))
    else:
        axes_t = tuple(int(ax) for ax in axes)
        for ax in axes_t:
            if not 0 <= ax < ndim:
                raise ShapeError(f"axis {ax} invalid for shape {a.shape}")
        if len(set(axes_t)) != len(axes_t):
            raise ShapeError(f"duplicate axes {axes_t}")
    count = int(np.prod([a.shape[ax] for ax in axes_t])) if axes_t else 1
    result = np.add.reduce(a.data, axis=axes_t) if axes_t else a.data.copy()
    if op == "mean":
        result = result / count
    out = Tensor(result, op, (a,))

    def back():
        g = out.grad
        for ax in sorted(axes_t):
            g = np.expand_dims(g, ax)
        g = np.broadcast_to(g, a.shape)
        a.grad += g / count if op == "mean" else g

    out._backward = back
    return out


def reduce_sum(a, axes=None) -> Tensor:
    return reduce("sum", a, axes)


def reduce_mean(a, axes=None) -> Tensor:
    return reduce("mean", a, axes)


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.size:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}")
    out = Tensor(a.data.reshape(shape), "reshape", (a,))

    def back():
        a.grad += out.grad.reshape(a.shape)

    out._backward = back
    return out


def permute(a, axes: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    axes = tuple(int(ax) for ax in axes)
    if sorted(axes) != list(range(a.data.ndim)):
        raise ShapeError(f"axes {axes} is not a permutation for shape {a.shape}")
    out = Tensor(np.transpose(a.data, axes), "permute", (a,))
    inverse = np.argsort(axes)

    def back():
        a.grad += np.transpose(out.grad, inverse)

    out._backward = back
    return out


def transpose(a) -> Tensor:
    return permute(a, (1, 0))


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ShapeError("concat needs at least one tensor")
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis),
                 "concat", tuple(parts))
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def back():
        for p, start, stop in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * out.grad.ndim
            idx[axis] = slice(start, stop)
            p.grad += out.grad[tuple(idx)]

    out._backward = back
    return out


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of `length` entries along one axis."""
    a = as_tensor(a)
    if not 0 <= axis < a.data.ndim:
        raise ShapeError(f"axis {axis} invalid for shape {a.shape}")
    if start < 0 or start + length > a.shape[axis]:
        raise ShapeError(f"slice [{start}:{start + length}] out of range "
                         f"for axis {axis} of shape {a.shape}")
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = Tensor(a.data[idx], "narrow", (a,))

    def back():
        a.grad[idx] += out.grad

    out._backward = back
    return out


def index_select(a, axis: int, indices: Sequence[int]) -> Tensor:
    """Gather entries along one axis (duplicates allowed)."""
    a = as_tensor(a)
    if not 0 <= axis < a.data.ndim:
        raise ShapeError(f"axis {axis} invalid for shape {a.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    out = Tensor(np.take(a.data, idx, axis=axis), "index_select", (a,))

    def back():
        moved = np.moveaxis(a.grad, axis, 0)
        np.add.at(moved, idx, np.moveaxis(out.grad, axis, 0))

    out._backward = back
    return out


def _correlate_valid(stack: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    """Valid cross-correlation of [H,W,C] with [K,k,k] -> [H',W',C,K]."""
    k = kernels.shape[1]
    windows = np.lib.stride_tricks.sliding_window_view(stack, (k, k), axis=(0, 1))
    return np.einsum("hwcij,kij->hwck", windows, kernels, optimize=True)


def conv2d_same(image, kernels) -> Tensor:
    """Correlate every kernel with every channel at "same" size.

    Input [H,W,C] with K kernels of odd support k gives [H,W,C*K], output
    channel c*K + j holding kernel j applied to image channel c.  Borders
    use reflect padding (edge pixel not repeated), so averaging kernels
    keep constant images constant.  Differentiable in the image only; the
    kernels are treated as constants.
    """
    image = as_tensor(image)
    kern = np.asarray(kernels.data if isinstance(kernels, Tensor) else kernels,
                      dtype=np.float64)
    if image.data.ndim != 3:
        raise ShapeError(f"conv2d_same needs an [H,W,C] image, got {image.shape}")
    if kern.ndim != 3 or kern.shape[1] != kern.shape[2]:
        raise ShapeError(f"kernels must be [K,k,k], got {kern.shape}")
    if kern.shape[0] == 0:
        raise ShapeError("empty kernel set")
    k = kern.shape[1]
    if k % 2 == 0:
        raise ShapeError(f"kernel support must be odd, got {k}")
    h, w, c = image.shape
    pad = k // 2

    # Reflect-pad via an index map so the backward pass is a scatter-add.
    src = np.pad(np.arange(h * w).reshape(h, w), pad, mode="reflect") if pad else \
        np.arange(h * w).reshape(h, w)
    padded = image.data.reshape(h * w, c)[src.ravel()].reshape(h + 2 * pad,
                                                               w + 2 * pad, c)
    resp = _correlate_valid(padded, kern)  # [H,W,C,K]
    out = Tensor(resp.reshape(h, w, c * kern.shape[0]), "conv2d_same", (image,))

    def back():
        g = out.grad.reshape(h, w, c, kern.shape[0])
        # d(padded): full correlation of the output grad with flipped kernels.
        gz = np.pad(g, ((k - 1, k - 1), (k - 1, k - 1), (0, 0), (0, 0)))
        windows = np.lib.stride_tricks.sliding_window_view(gz, (k, k), axis=(0, 1))
        dpad = np.einsum("hwckij,kij->hwc", windows, kern[:, ::-1, ::-1],
                         optimize=True)
        dimg = np.zeros((h * w, c))
        np.add.at(dimg, src.ravel(), dpad.reshape(-1, c))
        image.grad += dimg.reshape(h, w, c)

    out._backward = back
    return out
