"""Dense float64 matrices with a reverse-mode differentiation tape.

Every value is a 2-D ``numpy`` array. Vectors are stored as ``1 x k`` rows
(batched states stack one row per sequence) or as ``k x 1`` columns for
parameters such as biases. Each operation returns a new :class:`Node` that
remembers its parents and a closure that pushes its gradient back to them.

Creation order is recorded through a global counter, so sorting the reachable
nodes by id gives a valid topological order for :func:`backward`.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

_ids = itertools.count()


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(RuntimeError):
    """An operation was called outside its contract."""


def as_matrix(x) -> np.ndarray:
    """Coerce scalars and 1-D arrays to float64 matrices (1-D becomes a row)."""
    a = np.array(x, dtype=np.float64)
    if a.ndim == 0:
        return a.reshape(1, 1)
    if a.ndim == 1:
        return a.reshape(1, -1)
    if a.ndim != 2:
        raise DimensionError(f"expected at most 2 dimensions, got shape {a.shape}")
    return a


class Node:
    """One value on the tape together with its accumulated gradient."""

    __slots__ = ("value", "grad", "op", "parents", "requires_grad", "id", "_backward")

    def __init__(
        self,
        value,
        parents: Sequence["Node"] = (),
        op: str = "const",
        backward: Callable[[np.ndarray], None] | None = None,
        requires_grad: bool | None = None,
    ):
        self.value = as_matrix(value)
        self.grad = np.zeros_like(self.value)
        self.op = op
        self.parents = tuple(parents)
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in self.parents)
        self.requires_grad = requires_grad
        self.id = next(_ids)
        self._backward = backward

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def item(self) -> float:
        if self.value.size != 1:
            raise ContractError(f"item() needs a 1x1 node, got {self.shape}")
        return float(self.value[0, 0])

    def __repr__(self) -> str:
        return f"Node(op={self.op}, shape={self.shape})"

    # operator sugar, used sparingly in model code
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return hadamard(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Node):
    """A trainable leaf. ``value`` may be replaced by optimizers between tapes."""

    __slots__ = ("name",)

    def __init__(self, name: str, value):
        super().__init__(value, op="param", requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def const(x) -> Node:
    if isinstance(x, Node):
        return x
    return Node(x, op="const", requires_grad=False)


def _node(x) -> Node:
    return x if isinstance(x, Node) else const(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    for axis in (0, 1):
        if shape[axis] == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Node, b: Node, what: str) -> None:
    for x, y in zip(a.shape, b.shape):
        if x != y and x != 1 and y != 1:
            raise DimensionError(f"{what}: shapes {a.shape} and {b.shape} do not match")


def _acc(parent: Node, g: np.ndarray) -> None:
    if parent.requires_grad:
        parent.grad = parent.grad + _unbroadcast(g, parent.shape)


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Node:
    a, b = _node(a), _node(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")

    def backward(g):
        _acc(a, g @ b.value.T)
        _acc(b, a.value.T @ g)

    return Node(a.value @ b.value, (a, b), "matmul", backward)


def transpose(a) -> Node:
    a = _node(a)
    return Node(a.value.T.copy(), (a,), "transpose", lambda g: _acc(a, g.T))


def concat_cols(nodes: Sequence[Node]) -> Node:
    nodes = [_node(n) for n in nodes]
    rows = {n.shape[0] for n in nodes}
    if len(rows) != 1:
        raise DimensionError(f"concat_cols: row counts {[n.shape for n in nodes]}")
    widths = np.cumsum([0] + [n.shape[1] for n in nodes])

    def backward(g):
        for n, lo, hi in zip(nodes, widths[:-1], widths[1:]):
            _acc(n, g[:, lo:hi])

    return Node(np.concatenate([n.value for n in nodes], axis=1), nodes, "concat", backward)


def column(a, j: int) -> Node:
    a = _node(a)

    def backward(g):
        full = np.zeros_like(a.value)
        full[:, j : j + 1] = g
        _acc(a, full)

    return Node(a.value[:, j : j + 1].copy(), (a,), "column", backward)


def take_rows(a, idx) -> Node:
    a = _node(a)
    idx = np.asarray(idx, dtype=np.intp)

    def backward(g):
        full = np.zeros_like(a.value)
        np.add.at(full, idx, g)
        _acc(a, full)

    return Node(a.value[idx], (a,), "take_rows", backward)


def pick(a, rows, cols) -> Node:
    """Gather ``a[rows[k], cols[k]]`` into a ``k x 1`` column."""
    a = _node(a)
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)

    def backward(g):
        full = np.zeros_like(a.value)
        np.add.at(full, (rows, cols), g[:, 0])
        _acc(a, full)

    return Node(a.value[rows, cols].reshape(-1, 1), (a,), "pick", backward)


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Node:
    a, b = _node(a), _node(b)
    _check_broadcast(a, b, "add")

    def backward(g):
        _acc(a, g)
        _acc(b, g)

    return Node(a.value + b.value, (a, b), "add", backward)


def sub(a, b) -> Node:
    a, b = _node(a), _node(b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        _acc(a, g)
        _acc(b, -g)

    return Node(a.value - b.value, (a, b), "sub", backward)


def hadamard(a, b) -> Node:
    a, b = _node(a), _node(b)
    _check_broadcast(a, b, "hadamard")

    def backward(g):
        _acc(a, g * b.value)
        _acc(b, g * a.value)

    return Node(a.value * b.value, (a, b), "hadamard", backward)


def scale(a, c: float) -> Node:
    a = _node(a)
    c = float(c)
    return Node(a.value * c, (a,), "scale", lambda g: _acc(a, g * c))


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Node:
    a = _node(a)
    y = _stable_sigmoid(a.value)
    return Node(y, (a,), "sigmoid", lambda g: _acc(a, g * y * (1.0 - y)))


def tanh(a) -> Node:
    a = _node(a)
    y = np.tanh(a.value)
    return Node(y, (a,), "tanh", lambda g: _acc(a, g * (1.0 - y * y)))


def relu(a) -> Node:
    a = _node(a)
    on = a.value > 0
    return Node(np.where(on, a.value, 0.0), (a,), "relu", lambda g: _acc(a, g * on))


def identity(a) -> Node:
    return _node(a)


def log(a) -> Node:
    a = _node(a)
    return Node(np.log(a.value), (a,), "log", lambda g: _acc(a, g / a.value))


def clamp_min(a, floor: float) -> Node:
    """``max(a, floor)``; gradient passes only where ``a > floor``."""
    a = _node(a)
    keep = a.value > floor
    return Node(np.where(keep, a.value, floor), (a,), "clamp_min", lambda g: _acc(a, g * keep))


_UNARY = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu, "identity": identity}
_BINARY = {"add": add, "sub": sub, "hadamard": hadamard}


def elementwise(op: str, *args) -> Node:
    """Dispatch by name: unary activations, binary arithmetic, or ``scale(a, c)``."""
    if op in _UNARY:
        (a,) = args
        return _UNARY[op](a)
    if op in _BINARY:
        a, b = args
        return _BINARY[op](a, b)
    if op == "scale":
        a, c = args
        return scale(a, c)
    raise ValueError(f"unknown elementwise op {op!r}")


# ---------------------------------------------------------------- reductions


def total(a) -> Node:
    a = _node(a)
    return Node(a.value.sum().reshape(1, 1), (a,), "sum", lambda g: _acc(a, np.full_like(a.value, g[0, 0])))


def mean(a) -> Node:
    a = _node(a)
    n = a.value.size
    return Node(
        a.value.mean().reshape(1, 1),
        (a,),
        "mean",
        lambda g: _acc(a, np.full_like(a.value, g[0, 0] / n)),
    )


def softmax_rows(a, mask: np.ndarray | None = None) -> Node:
    """Row-wise softmax. Entries where ``mask`` is False get probability 0."""
    a = _node(a)
    x = a.value
    if mask is None:
        shifted = x - x.max(axis=1, keepdims=True)
        e = np.exp(shifted)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise DimensionError(f"softmax mask {mask.shape} vs input {x.shape}")
        if not mask.any(axis=1).all():
            raise ContractError("softmax row with every entry masked")
        masked = np.where(mask, x, -np.inf)
        shifted = np.where(mask, x - masked.max(axis=1, keepdims=True), 0.0)
        e = np.where(mask, np.exp(shifted), 0.0)
    y = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        _acc(a, y * (g - (g * y).sum(axis=1, keepdims=True)))

    return Node(y, (a,), "softmax", backward)


# ---------------------------------------------------------------- driver


def _reachable(root: Node) -> list[Node]:
    seen: dict[int, Node] = {}
    stack = [root]
    while stack:
        n = stack.pop()
        if n.id in seen or not n.requires_grad:
            continue
        seen[n.id] = n
        stack.extend(n.parents)
    return sorted(seen.values(), key=lambda n: n.id, reverse=True)


def backward(root: Node) -> None:
    """Accumulate ``d root / d node`` into ``grad`` of every reachable node.

    Interior nodes start from zero because they are fresh; parameters keep
    whatever they already hold, so callers reset them between steps.
    """
    if root.shape != (1, 1):
        raise ContractError(f"backward needs a 1x1 root, got {root.shape}")
    root.grad = root.grad + 1.0
    for n in _reachable(root):
        if n._backward is not None:
            n._backward(n.grad)


def zero_grads(params: Iterable[Node]) -> None:
    for p in params:
        p.zero_grad()


def finite_diff_grad(
    loss_fn: Callable[[], object],
    param: Node,
    epsilon: float = 1e-5,
    entries: Iterable[tuple[int, int]] | None = None,
) -> np.ndarray:
    """Central-difference estimate of ``d loss / d param``, one entry at a time.

    ``loss_fn`` rebuilds the computation from the current ``param.value`` and
    returns a float or a 1x1 node. The parameter value is restored bit-exactly.
    When ``entries`` is given only those positions are estimated; the rest of
    the returned matrix stays zero.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")

    def evaluate() -> float:
        out = loss_fn()
        return out.item() if isinstance(out, Node) else float(out)

    original = param.value
    work = original.copy()
    grad = np.zeros_like(original)
    try:
        for idx in entries if entries is not None else np.ndindex(*original.shape):
            idx = tuple(idx)
            base = work[idx]
            work[idx] = base + epsilon
            param.value = work
            up = evaluate()
            work[idx] = base - epsilon
            param.value = work
            down = evaluate()
            work[idx] = base
            grad[idx] = (up - down) / (2.0 * epsilon)
    finally:
        param.value = original
    return grad
