"""Dense tensor type and the reverse-mode graph that carries gradients."""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_grad_enabled = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Node:
    """One executed op: its inputs, the id of its output and the closure computing input grads.

    The output is tracked by id rather than by reference so that tensor and
    node do not form a cycle; graphs are then freed as soon as the loss is.
    """

    __slots__ = ("name", "inputs", "needs_grad", "output_id", "backward_fn", "consumed")

    def __init__(self, name: str, inputs: Sequence["Tensor"], backward_fn: Callable):
        self.name = name
        self.inputs = tuple(inputs)
        # frozen at record time so toggling requires_grad later cannot leak grads
        self.needs_grad = tuple(t.requires_grad for t in self.inputs)
        self.output_id: int | None = None
        self.backward_fn = backward_fn
        self.consumed = False

    def __repr__(self) -> str:
        return f"Node({self.name})"


class Tensor:
    """N-d float array with an optional gradient buffer.

    Image-like data uses N x C x H x W layout. Values are float32 unless a
    float64 array is passed in (the gradient checker runs in float64).
    """

    __slots__ = ("data", "grad", "requires_grad", "node", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.node: Node | None = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{tag})"

    # -- arithmetic sugar (delegates to ops) ------------------------------
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.add(self, ops.neg(_as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        from . import ops

        return ops.add(ops.neg(self), other)

    def __neg__(self):
        from . import ops

        return ops.neg(self)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def sum(self) -> "Tensor":
        from . import ops

        return ops.sum(self)

    def mean(self) -> "Tensor":
        from . import ops

        return ops.mean(self)

    def reshape(self, *shape) -> "Tensor":
        from . import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def backward(self, grad=None) -> "ComputationRecord":
        return backward(self, grad)


def _as_tensor(x, dtype) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


def make_result(data: np.ndarray, name: str, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap an op's output and attach a graph node when any input needs grads."""
    out = Tensor(data, dtype=data.dtype)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        node = Node(name, inputs, backward_fn)
        node.output_id = id(out)
        out.node = node
    return out


class ComputationRecord:
    """Executed ops reachable from a loss, in forward execution order."""

    def __init__(self, nodes: list[Node]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, out: Tensor) -> "ComputationRecord":
        order: list[Node] = []
        seen: set[int] = set()
        if out.node is None:
            return cls(order)
        stack: list[tuple[Node, bool]] = [(out.node, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for t in node.inputs:
                if t.node is not None and id(t.node) not in seen:
                    stack.append((t.node, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def op_names(self) -> list[str]:
        return [n.name for n in self.nodes]


def backward(loss: Tensor, grad=None) -> ComputationRecord:
    """Populate ``.grad`` of every requires_grad leaf reachable from ``loss``.

    Leaf gradients accumulate into existing buffers. Each recorded graph may be
    replayed only once; a second call raises ``RuntimeError``.
    """
    if grad is None:
        if loss.size != 1:
            raise ValueError(f"backward() without a seed gradient needs a scalar loss, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    else:
        grad = np.asarray(grad, dtype=loss.dtype).reshape(loss.shape)
    if not loss.requires_grad:
        raise RuntimeError("loss does not depend on any tensor that requires grad")

    record = ComputationRecord.from_output(loss)
    if any(n.consumed for n in record.nodes):
        raise RuntimeError("graph already consumed by a previous backward(); re-run the forward pass")

    if loss.node is None:
        _accumulate_leaf(loss, grad)
        return record

    grads: dict[int, np.ndarray] = {id(loss): grad}
    for node in reversed(record.nodes):
        g_out = grads.pop(node.output_id, None)
        node.consumed = True
        if g_out is None:
            continue
        in_grads = node.backward_fn(g_out)
        for t, g, needed in zip(node.inputs, in_grads, node.needs_grad):
            if g is None or not needed:
                continue
            if t.node is None:
                _accumulate_leaf(t, g)
            elif id(t) in grads:
                grads[id(t)] = grads[id(t)] + g
            else:
                grads[id(t)] = g
        node.backward_fn = _spent
    return record


def _spent(_):
    raise RuntimeError("graph already consumed")


def _accumulate_leaf(t: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=t.dtype).reshape(t.shape)
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad = t.grad + g
