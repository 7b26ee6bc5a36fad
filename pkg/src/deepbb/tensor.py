"""A small dense-tensor engine with reverse-mode differentiation.

Only what the steering models need: valid 2-D cross-correlation, fully
connected layers, three elementwise activations, reshape and constant
scaling. Everything is float64 and shapes must match exactly.

Usage::

    g = Graph()
    x = g.leaf(frame, requires_grad=True)
    y = dense(reshape(x, (-1,)), g.leaf(w), g.leaf(b))
    g.backward(np.ones(y.shape))
    x.grad
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError, StateError

ACTIVATIONS = ("relu", "tanh", "atan_scaled")


class Tensor:
    """Dense float64 array plus an optional gradient slot.

    ``graph`` is the tape the tensor was recorded on, or None for a
    constant. Ops record onto the graph of their inputs.
    """

    __slots__ = ("data", "grad", "requires_grad", "graph")

    def __init__(self, data, requires_grad: bool = False, graph: "Graph | None" = None):
        arr = np.array(data, dtype=np.float64, order="C")
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if any(d <= 0 for d in arr.shape):
            raise ShapeError(f"tensor dimensions must be positive, got {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.graph = graph

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Graph:
    """Tape of recorded ops in execution (hence topological) order.

    A graph holds the activations of one forward pass. Recording new ops
    after a backward pass invalidates the gradients it produced.
    """

    nodes: list[Node] = field(default_factory=list)
    leaves: list[Tensor] = field(default_factory=list)
    _backward_done: bool = False

    def leaf(self, data, requires_grad: bool = False) -> Tensor:
        t = Tensor(data, requires_grad=requires_grad, graph=self)
        self.leaves.append(t)
        return t

    def record(self, node: Node) -> None:
        if self._backward_done:
            for t in self._all_tensors():
                t.grad = None
            self._backward_done = False
        self.nodes.append(node)

    def _all_tensors(self):
        yield from self.leaves
        for n in self.nodes:
            yield n.output

    def reset(self) -> None:
        self.nodes.clear()
        self.leaves.clear()
        self._backward_done = False

    def backward(self, seed, output: Tensor | None = None) -> None:
        """Propagate ``seed`` (same shape as ``output``) back to every leaf.

        ``output`` defaults to the last recorded tensor. Leaf gradients are
        overwritten, not accumulated across calls.
        """
        if not self.nodes:
            raise StateError("backward called before any forward op was recorded")
        if output is None:
            output = self.nodes[-1].output
        if output.graph is not self:
            raise StateError("output tensor was not produced on this graph")
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != output.shape:
            raise ShapeError(f"seed shape {seed.shape} != output shape {output.shape}")

        for t in self._all_tensors():
            t.grad = None
        output.grad = seed.copy()
        for node in reversed(self.nodes):
            g_out = node.output.grad
            if g_out is None:
                continue
            for inp, g in zip(node.inputs, node.backward_fn(g_out)):
                if g is None or not inp.requires_grad:
                    continue
                inp.grad = g.copy() if inp.grad is None else inp.grad + g
        for t in self.leaves:
            if t.requires_grad and t.grad is None:
                t.grad = np.zeros_like(t.data)
        self._backward_done = True


def _graph_of(*tensors: Tensor) -> Graph | None:
    g = None
    for t in tensors:
        if t.graph is None:
            continue
        if g is None:
            g = t.graph
        elif t.graph is not g:
            raise StateError("inputs belong to different graphs")
    return g


def _emit(op: str, inputs: tuple[Tensor, ...], out: np.ndarray, backward_fn) -> Tensor:
    graph = _graph_of(*inputs)
    needs = any(t.requires_grad for t in inputs)
    result = Tensor.__new__(Tensor)
    result.data = out
    result.grad = None
    result.requires_grad = needs and graph is not None
    result.graph = graph
    if result.requires_grad:
        graph.record(Node(op, inputs, result, backward_fn))
    return result


def conv2d(input: Tensor, kernel: Tensor, stride: int = 1, bias: Tensor | None = None) -> Tensor:
    """Valid cross-correlation of a [C,H,W] input with [F,C,kh,kw] kernels."""
    if input.data.ndim != 3 or kernel.data.ndim != 4:
        raise ShapeError(f"conv2d expects [C,H,W] and [F,C,kh,kw], got {input.shape} and {kernel.shape}")
    if not isinstance(stride, (int, np.integer)) or stride < 1:
        raise ShapeError(f"stride must be a positive int, got {stride!r}")
    C, H, W = input.shape
    F, Ck, kh, kw = kernel.shape
    if Ck != C:
        raise ShapeError(f"channel mismatch: input has {C}, kernel expects {Ck}")
    if kh > H or kw > W:
        raise ShapeError(f"kernel {kh}x{kw} larger than input {H}x{W}")
    if bias is not None and bias.shape != (F,):
        raise ShapeError(f"bias shape {bias.shape} != ({F},)")

    x, k = input.data, kernel.data
    windows = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    Ho, Wo = windows.shape[1], windows.shape[2]
    # im2col: one row per output position, columns ordered (c, i, j) like the kernel
    cols = windows.transpose(1, 2, 0, 3, 4).reshape(Ho * Wo, C * kh * kw)
    kmat = k.reshape(F, -1)
    out = (kmat @ cols.T).reshape(F, Ho, Wo)
    if bias is not None:
        out = out + bias.data[:, None, None]

    def backward(g):
        gmat = g.reshape(F, -1)
        dk = (gmat @ cols).reshape(k.shape)
        dcols = (gmat.T @ kmat).reshape(Ho, Wo, C, kh, kw).transpose(2, 3, 4, 0, 1)
        dx = np.zeros_like(x)
        for i in range(kh):
            for j in range(kw):
                dx[:, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += dcols[:, i, j]
        grads = [dx, dk]
        if bias is not None:
            grads.append(g.sum(axis=(1, 2)))
        return grads

    inputs = (input, kernel) if bias is None else (input, kernel, bias)
    return _emit("conv2d", inputs, np.ascontiguousarray(out), backward)


def dense(input: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """out[m] = sum_n weights[m, n] * input[n] + bias[m]."""
    if input.data.ndim != 1 or weights.data.ndim != 2 or bias.data.ndim != 1:
        raise ShapeError(f"dense expects [N], [M,N], [M]; got {input.shape}, {weights.shape}, {bias.shape}")
    M, N = weights.shape
    if input.shape[0] != N or bias.shape[0] != M:
        raise ShapeError(f"dense dimension mismatch: input {input.shape}, weights {weights.shape}, bias {bias.shape}")
    x, w = input.data, weights.data
    out = w @ x + bias.data

    def backward(g):
        return w.T @ g, np.outer(g, x), g

    return _emit("dense", (input, weights, bias), out, backward)


def activation(input: Tensor, kind: str) -> Tensor:
    """Elementwise relu, tanh or atan_scaled (2*atan(y), radians)."""
    x = input.data
    if kind == "relu":
        out = np.maximum(x, 0.0)
        deriv = (x > 0).astype(np.float64)
    elif kind == "tanh":
        out = np.tanh(x)
        deriv = 1.0 - out * out
    elif kind == "atan_scaled":
        out = 2.0 * np.arctan(x)
        deriv = 2.0 / (1.0 + x * x)
    else:
        raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")
    return _emit(kind, (input,), out, lambda g: (g * deriv,))


def relu(input: Tensor) -> Tensor:
    return activation(input, "relu")


def reshape(input: Tensor, shape: tuple[int, ...]) -> Tensor:
    src_shape = input.shape
    try:
        out = input.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    return _emit("reshape", (input,), out, lambda g: (g.reshape(src_shape),))


def scale(input: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return _emit("scale", (input,), input.data * factor, lambda g: (g * factor,))
