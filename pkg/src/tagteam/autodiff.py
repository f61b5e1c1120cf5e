"""Reverse-mode automatic differentiation over dense numpy arrays.

The tagger rebuilds one small expression graph per sentence (sequence
lengths vary), so graphs are built eagerly: constructing a node computes
its value right away and records closures that can recompute the value
or push an adjoint to the parents. Only the operations the model needs
exist; shapes are validated at build time.

``set_debug(True)`` additionally checks every computed value for
NaN/Inf and every adjoint for shape agreement. Leave it off in training
loops; the oracle tests switch it on.
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

_DEBUG = False


def set_debug(enabled: bool) -> None:
    global _DEBUG
    _DEBUG = bool(enabled)


class GraphError(ValueError):
    """Shape mismatch or graph misuse, reported with the offending op."""


class Node:
    """One vertex of an expression graph.

    ``value`` caches the forward result; ``grad`` caches the adjoint
    after :func:`backward`. Leaves may carry a ``name`` so gradients can
    be reported per trainable tensor and values rebound in
    :func:`evaluate`.
    """

    __slots__ = ("op", "value", "parents", "grad", "name", "_fwd", "_bwd")

    def __init__(self, op, value, parents=(), name=None, fwd=None, bwd=None):
        self.op = op
        self.value = value
        self.parents = tuple(parents)
        self.grad = None
        self.name = name
        self._fwd = fwd
        self._bwd = bwd

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __add__(self, other: "Node") -> "Node":
        return add(self, other)

    def __sub__(self, other: "Node") -> "Node":
        return sub(self, other)

    def __mul__(self, other: "Node") -> "Node":
        return mul(self, other)

    def __matmul__(self, other: "Node") -> "Node":
        return matmul(self, other)

    def __getitem__(self, key) -> "Node":
        return take(self, key)

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"<Node {self.op}{tag} shape={np.shape(self.value)}>"


def _as_float_array(value) -> np.ndarray:
    arr = np.asarray(value)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    return arr


def _check_value(value: np.ndarray, op: str) -> None:
    if _DEBUG and not np.all(np.isfinite(value)):
        raise GraphError(f"{op}: non-finite value encountered")


def _node(op: str, parents: tuple, fwd: Callable, bwd) -> Node:
    try:
        value = fwd()
    except ValueError as exc:  # numpy's own shape complaints
        raise GraphError(f"{op}: {exc}") from exc
    _check_value(value, op)
    return Node(op, value, parents, fwd=fwd, bwd=bwd)


def leaf(value, name: str | None = None) -> Node:
    """An input node. Named leaves are trainable/bindable; anonymous
    ones act as constants."""
    return Node("input", _as_float_array(value), name=name)


def constant(value) -> Node:
    return leaf(value)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _require_broadcastable(op: str, a: Node, b: Node) -> None:
    try:
        np.broadcast_shapes(a.value.shape, b.value.shape)
    except ValueError:
        raise GraphError(
            f"{op}: shapes {a.value.shape} and {b.value.shape} do not broadcast"
        ) from None


def add(a: Node, b: Node) -> Node:
    _require_broadcastable("add", a, b)
    out = _node("add", (a, b), lambda: a.value + b.value, None)
    out._bwd = lambda g: (
        _unbroadcast(g, a.value.shape),
        _unbroadcast(g, b.value.shape),
    )
    return out


def sub(a: Node, b: Node) -> Node:
    _require_broadcastable("sub", a, b)
    out = _node("sub", (a, b), lambda: a.value - b.value, None)
    out._bwd = lambda g: (
        _unbroadcast(g, a.value.shape),
        _unbroadcast(-g, b.value.shape),
    )
    return out


def mul(a: Node, b: Node) -> Node:
    _require_broadcastable("mul", a, b)
    out = _node("mul", (a, b), lambda: a.value * b.value, None)
    out._bwd = lambda g: (
        _unbroadcast(g * b.value, a.value.shape),
        _unbroadcast(g * a.value, b.value.shape),
    )
    return out


def matmul(a: Node, b: Node) -> Node:
    if a.value.ndim not in (1, 2) or b.value.ndim not in (1, 2):
        raise GraphError(
            f"matmul: only 1-D/2-D operands, got {a.value.shape} @ {b.value.shape}"
        )
    if a.value.shape[-1] != b.value.shape[0]:
        raise GraphError(
            f"matmul: inner dimensions differ, {a.value.shape} @ {b.value.shape}"
        )
    out = _node("matmul", (a, b), lambda: a.value @ b.value, None)

    def bwd(g):
        av, bv = a.value, b.value
        if av.ndim == 2 and bv.ndim == 2:
            return g @ bv.T, av.T @ g
        if av.ndim == 2 and bv.ndim == 1:
            return np.outer(g, bv), av.T @ g
        if av.ndim == 1 and bv.ndim == 2:
            return bv @ g, np.outer(av, g)
        return g * bv, g * av

    out._bwd = bwd
    return out


def transpose(a: Node) -> Node:
    if a.value.ndim != 2:
        raise GraphError(f"transpose: expected a matrix, got shape {a.value.shape}")
    out = _node("transpose", (a,), lambda: a.value.T, None)
    out._bwd = lambda g: (g.T,)
    return out


def reshape(a: Node, shape: tuple[int, ...]) -> Node:
    if int(np.prod(shape)) != a.value.size:
        raise GraphError(f"reshape: cannot view {a.value.shape} as {shape}")
    out = _node("reshape", (a,), lambda: a.value.reshape(shape), None)
    out._bwd = lambda g: (g.reshape(a.value.shape),)
    return out


def concat(nodes: list[Node], axis: int = 0) -> Node:
    if not nodes:
        raise GraphError("concat: needs at least one input")
    out = _node(
        "concat", tuple(nodes), lambda: np.concatenate([n.value for n in nodes], axis=axis), None
    )

    def bwd(g):
        sizes = [n.value.shape[axis] for n in nodes]
        cuts = np.cumsum(sizes)[:-1]
        return tuple(np.split(g, cuts, axis=axis))

    out._bwd = bwd
    return out


def _normalize_key(key):
    if isinstance(key, (list, np.ndarray)):
        return np.asarray(key)
    if isinstance(key, tuple):
        return tuple(np.asarray(k) if isinstance(k, (list, np.ndarray)) else k for k in key)
    return key


def _is_advanced(key) -> bool:
    if isinstance(key, np.ndarray):
        return True
    if isinstance(key, tuple):
        return any(isinstance(k, np.ndarray) for k in key)
    return False


def take(a: Node, key) -> Node:
    """Indexing/slicing with numpy semantics; scatter-add on backward."""
    key = _normalize_key(key)
    out = _node("slice", (a,), lambda: np.asarray(a.value[key]), None)

    def bwd(g):
        gz = np.zeros_like(a.value)
        if _is_advanced(key):
            np.add.at(gz, key, g)
        else:
            gz[key] += g
        return (gz,)

    out._bwd = bwd
    return out


def sigmoid(a: Node) -> Node:
    def fwd():
        x = a.value
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out

    out = _node("sigmoid", (a,), fwd, None)
    out._bwd = lambda g: (g * out.value * (1.0 - out.value),)
    return out


def tanh(a: Node) -> Node:
    out = _node("tanh", (a,), lambda: np.tanh(a.value), None)
    out._bwd = lambda g: (g * (1.0 - out.value * out.value),)
    return out


def maximum(a: Node, b: Node) -> Node:
    """Elementwise max; ties send the whole subgradient to ``a``."""
    if a.value.shape != b.value.shape:
        raise GraphError(f"maximum: shapes {a.value.shape} vs {b.value.shape}")
    out = _node("maximum", (a, b), lambda: np.maximum(a.value, b.value), None)

    def bwd(g):
        left = a.value >= b.value
        return g * left, g * ~left

    out._bwd = bwd
    return out


def max_over(a: Node, axis: int) -> Node:
    """Max along one axis; ties route to the lowest index."""
    out = _node("max", (a,), lambda: np.max(a.value, axis=axis), None)

    def bwd(g):
        idx = np.argmax(a.value, axis=axis)
        gz = np.zeros_like(a.value)
        np.put_along_axis(gz, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis)
        return (gz,)

    out._bwd = bwd
    return out


def sum_over(a: Node, axis: int | None = None) -> Node:
    out = _node("sum", (a,), lambda: np.sum(a.value, axis=axis), None)

    def bwd(g):
        if axis is None:
            return (np.ones_like(a.value) * g,)
        return (np.broadcast_to(np.expand_dims(g, axis), a.value.shape),)

    out._bwd = bwd
    return out


def softmax(a: Node, axis: int = -1) -> Node:
    def fwd():
        shifted = a.value - np.max(a.value, axis=axis, keepdims=True)
        ex = np.exp(shifted)
        return ex / np.sum(ex, axis=axis, keepdims=True)

    out = _node("softmax", (a,), fwd, None)

    def bwd(g):
        y = out.value
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    out._bwd = bwd
    return out


def logsumexp(a: Node, axis: int | None = None) -> Node:
    def fwd():
        m = np.max(a.value, axis=axis, keepdims=True)
        res = np.log(np.sum(np.exp(a.value - m), axis=axis, keepdims=True)) + m
        if axis is None:
            return res.reshape(())
        return np.squeeze(res, axis=axis)

    out = _node("logsumexp", (a,), fwd, None)

    def bwd(g):
        if axis is None:
            w = np.exp(a.value - out.value)
            return (w * g,)
        expanded = np.expand_dims(out.value, axis)
        w = np.exp(a.value - expanded)
        return (w * np.expand_dims(g, axis),)

    out._bwd = bwd
    return out


def topo_order(root: Node) -> list[Node]:
    """Parents-first ordering of every node reachable from ``root``."""
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
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
            stack.append((parent, False))
    return order


def evaluate(root: Node, bindings: Mapping[str, np.ndarray] | None = None) -> np.ndarray:
    """Recompute the graph, optionally rebinding named leaves first.

    Pure: two calls with identical bindings return bit-identical values.
    """
    for node in topo_order(root):
        if node._fwd is None:
            if bindings and node.name in bindings:
                value = _as_float_array(bindings[node.name])
                if value.shape != node.value.shape:
                    raise GraphError(
                        f"evaluate: binding {node.name!r} has shape {value.shape}, "
                        f"leaf expects {node.value.shape}"
                    )
                node.value = value
        else:
            node.value = node._fwd()
        _check_value(node.value, node.op)
    return root.value


def backward(root: Node, leaves: Mapping[str, Node] | None = None) -> dict[str, np.ndarray]:
    """Adjoints of a scalar root with respect to every named leaf.

    With an explicit ``leaves`` map, leaves absent from the graph get
    zero adjoints.
    """
    if root.value is None:
        raise GraphError("backward: forward pass has not produced a value yet")
    if np.size(root.value) != 1:
        raise GraphError(f"backward: root must be scalar, got shape {np.shape(root.value)}")
    order = topo_order(root)
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node.grad is None or node._bwd is None:
            continue
        parent_grads = node._bwd(node.grad)
        for parent, pg in zip(node.parents, parent_grads):
            if pg is None:
                continue
            if _DEBUG and np.shape(pg) != parent.value.shape:
                raise GraphError(
                    f"{node.op}: adjoint shape {np.shape(pg)} != value shape {parent.value.shape}"
                )
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.value)
            parent.grad += pg

    if leaves is not None:
        return {
            name: (n.grad if n.grad is not None else np.zeros_like(n.value))
            for name, n in leaves.items()
        }
    grads: dict[str, np.ndarray] = {}
    for node in order:
        if node._fwd is None and node.name is not None:
            grads[node.name] = node.grad if node.grad is not None else np.zeros_like(node.value)
    return grads


def finite_diff_check(
    loss_fn: Callable[[Mapping[str, np.ndarray]], Node],
    params: Mapping[str, np.ndarray],
    eps: float = 1e-5,
    floor: float = 1e-4,
) -> float:
    """Max relative error between backward() and central differences.

    ``loss_fn`` must build a scalar graph whose named leaves match the
    keys of ``params``. The relative error denominator is floored at
    ``floor`` so coordinates where both gradients vanish compare by
    absolute difference instead of blowing up.
    """
    if eps <= 0:
        raise ValueError("finite_diff_check: eps must be positive")
    root = loss_fn(params)
    repeat = loss_fn(params)
    if not np.array_equal(np.asarray(root.value), np.asarray(repeat.value)):
        raise GraphError(
            "finite_diff_check: loss is not deterministic; freeze the dropout "
            "mask (or other randomness) before checking gradients"
        )
    analytic = backward(root)
    worst = 0.0
    for name, base in params.items():
        base = np.asarray(base, dtype=np.float64)
        grad = analytic.get(name)
        grad = np.zeros_like(base) if grad is None else np.asarray(grad)
        flat_grad = grad.reshape(-1)
        for j in range(base.size):
            probe = dict(params)
            bumped = base.copy()
            bumped.flat[j] = base.flat[j] + eps
            probe[name] = bumped
            f_plus = float(loss_fn(probe).value)
            bumped = base.copy()
            bumped.flat[j] = base.flat[j] - eps
            probe[name] = bumped
            f_minus = float(loss_fn(probe).value)
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(flat_grad[j])
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    return worst
