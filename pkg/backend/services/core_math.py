"""Dense float64 matrices and a reverse-mode compute tape.

Every model in this package is written against the primitives below. Each
primitive computes its forward value with numpy and, when the tape is recording,
stores a closure that maps the output adjoint to the adjoints of its inputs.
`backward` replays those closures in exact reverse order of recording.

Values on the tape are read-only arrays; parameters are swapped for new
matrices by the optimizers rather than mutated in place.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import ContractError, DimensionError, EvaluationError

logger = logging.getLogger(__name__)

Adjoint = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]
Operand = Union["Node", float, int]


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


class Matrix:
    """Immutable row-major 2-D array of 64-bit floats."""

    __slots__ = ("_data",)

    def __init__(self, data) -> None:
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise DimensionError(f"Matrix needs at most 2 dimensions, got shape {arr.shape}")
        self._data = _frozen(np.ascontiguousarray(arr))

    @classmethod
    def wrap(cls, arr: np.ndarray) -> "Matrix":
        """Adopt an existing 2-D float64 array without copying."""
        if arr.ndim != 2 or arr.dtype != np.float64:
            return cls(arr)
        obj = cls.__new__(cls)
        obj._data = _frozen(arr)
        return obj

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "Matrix":
        return cls.wrap(np.zeros((rows, cols)))

    @classmethod
    def identity(cls, n: int) -> "Matrix":
        return cls.wrap(np.eye(n))

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def rows(self) -> int:
        return self._data.shape[0]

    @property
    def cols(self) -> int:
        return self._data.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self._data.shape

    def tolist(self) -> List[List[float]]:
        return self._data.tolist()

    def __repr__(self) -> str:
        return f"Matrix({self.rows}x{self.cols})"


@dataclass
class Parameter:
    """Trainable tensor with its accumulated gradient."""

    name: str
    value: Matrix
    grad: Matrix = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.grad is None:
            self.grad = Matrix.zeros(*self.value.shape)
        elif self.grad.shape != self.value.shape:
            raise DimensionError(
                f"gradient shape {self.grad.shape} differs from value shape {self.value.shape} for {self.name}"
            )

    @property
    def shape(self) -> Tuple[int, int]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = Matrix.zeros(*self.value.shape)

    def accumulate(self, delta: np.ndarray) -> None:
        self.grad = Matrix.wrap(self.grad.data + delta)

    def assign(self, arr: np.ndarray) -> None:
        if arr.shape != self.value.shape:
            raise DimensionError(f"cannot assign shape {arr.shape} to {self.name} of shape {self.value.shape}")
        self.value = Matrix.wrap(np.array(arr, dtype=np.float64))


class Node:
    """Value produced on a tape; supports +, -, *, @ and .T."""

    __slots__ = ("tape", "index", "value", "op", "parents", "adjoint", "param", "requires_grad")

    def __init__(
        self,
        tape: "ComputeTape",
        value: np.ndarray,
        op: str,
        parents: Tuple["Node", ...] = (),
        adjoint: Optional[Adjoint] = None,
        param: Optional[Parameter] = None,
    ) -> None:
        self.tape = tape
        self.index = -1
        self.value = value
        self.op = op
        self.parents = parents
        self.adjoint = adjoint
        self.param = param
        self.requires_grad = param is not None or any(p.requires_grad for p in parents)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.value.shape

    @property
    def rows(self) -> int:
        return self.value.shape[0]

    @property
    def cols(self) -> int:
        return self.value.shape[1]

    @property
    def matrix(self) -> Matrix:
        return Matrix.wrap(self.value)

    @property
    def T(self) -> "Node":
        return transpose(self)

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise ContractError(f"item() needs a 1x1 value, got {self.value.shape}")
        return float(self.value[0, 0])

    def numpy(self) -> np.ndarray:
        return self.value

    def __add__(self, other: Operand) -> "Node":
        if isinstance(other, Node):
            return elementwise("add", self, other)
        return affine(self, 1.0, float(other))

    __radd__ = __add__

    def __sub__(self, other: Operand) -> "Node":
        if isinstance(other, Node):
            return elementwise("sub", self, other)
        return affine(self, 1.0, -float(other))

    def __rsub__(self, other: Operand) -> "Node":
        return affine(self, -1.0, float(other))

    def __mul__(self, other: Operand) -> "Node":
        if isinstance(other, Node):
            return elementwise("mul", self, other)
        return affine(self, float(other), 0.0)

    __rmul__ = __mul__

    def __neg__(self) -> "Node":
        return affine(self, -1.0, 0.0)

    def __matmul__(self, other: "Node") -> "Node":
        return matmul(self, other)

    def __repr__(self) -> str:
        return f"Node({self.op}, {self.rows}x{self.cols}, #{self.index})"


class ComputeTape:
    """Ordered record of the primitives applied during one forward pass.

    With ``record=False`` the tape only evaluates values (inference mode) and
    refuses to run a backward pass.
    """

    def __init__(self, record: bool = True) -> None:
        self.record = record
        self.nodes: List[Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def ops(self) -> List[str]:
        return [n.op for n in self.nodes]

    def constant(self, data) -> Node:
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        return self._push(_frozen(arr), "constant")

    def watch(self, param: Parameter) -> Node:
        """Leaf node whose adjoint is accumulated into ``param.grad``."""
        return self._push(param.value.data, "param", param=param)

    def _push(
        self,
        value: np.ndarray,
        op: str,
        parents: Tuple[Node, ...] = (),
        adjoint: Optional[Adjoint] = None,
        param: Optional[Parameter] = None,
    ) -> Node:
        for p in parents:
            if p.tape is not self:
                raise ContractError(f"operand of {op} belongs to a different tape")
        if op not in ("constant", "param") and not np.isfinite(value).all():
            raise EvaluationError(f"non-finite value produced by {op}")
        if not self.record:
            return Node(self, value, op)
        node = Node(self, value, op, parents, adjoint, param)
        if not node.requires_grad:
            node.adjoint = None
            node.parents = ()
        node.index = len(self.nodes)
        self.nodes.append(node)
        return node


def _tape_of(*nodes: Node) -> ComputeTape:
    return nodes[0].tape


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------


def matmul(a: Node, b: Node) -> Node:
    if a.cols != b.rows:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    av, bv = a.value, b.value

    def adjoint(g: np.ndarray):
        return g @ bv.T, av.T @ g

    return _tape_of(a)._push(_frozen(av @ bv), "matmul", (a, b), adjoint)


def transpose(a: Node) -> Node:
    return _tape_of(a)._push(_frozen(np.ascontiguousarray(a.value.T)), "transpose", (a,), lambda g: (g.T,))


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function branching on the sign of x so exp never overflows."""
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


_UNARY = {"tanh", "sigmoid", "exp", "log", "abs", "relu", "sqrt"}
_BINARY = {"add", "sub", "mul", "div"}


def elementwise(op: str, *inputs: Node) -> Node:
    """Pointwise tanh | sigmoid | exp | log | abs | relu | sqrt | add | sub | mul | div."""
    if op in _UNARY:
        if len(inputs) != 1:
            raise ContractError(f"{op} takes one operand, got {len(inputs)}")
        (x,) = inputs
        xv = x.value
        if op == "tanh":
            y = np.tanh(xv)
            adjoint = lambda g: (g * (1.0 - y * y),)
        elif op == "sigmoid":
            y = stable_sigmoid(xv)
            adjoint = lambda g: (g * y * (1.0 - y),)
        elif op == "exp":
            y = np.exp(xv)
            adjoint = lambda g: (g * y,)
        elif op == "log":
            if (xv <= 0).any():
                raise ContractError("log of a non-positive value")
            y = np.log(xv)
            adjoint = lambda g: (g / xv,)
        elif op == "abs":
            y = np.abs(xv)
            adjoint = lambda g: (g * np.sign(xv),)
        elif op == "relu":
            y = np.maximum(xv, 0.0)
            adjoint = lambda g: (g * (xv > 0),)
        else:
            if (xv < 0).any():
                raise ContractError("sqrt of a negative value")
            y = np.sqrt(xv)
            adjoint = lambda g: (g * 0.5 / y,)
        return _tape_of(x)._push(_frozen(y), op, (x,), adjoint)

    if op in _BINARY:
        if len(inputs) != 2:
            raise ContractError(f"{op} takes two operands, got {len(inputs)}")
        a, b = inputs
        if a.shape != b.shape:
            raise DimensionError(f"{op} shape mismatch: {a.shape} vs {b.shape}")
        av, bv = a.value, b.value
        if op == "add":
            y = av + bv
            adjoint = lambda g: (g, g)
        elif op == "sub":
            y = av - bv
            adjoint = lambda g: (g, -g)
        elif op == "mul":
            y = av * bv
            adjoint = lambda g: (g * bv, g * av)
        else:
            y = av / bv
            adjoint = lambda g: (g / bv, -g * av / (bv * bv))
        return _tape_of(a)._push(_frozen(y), op, (a, b), adjoint)

    raise ContractError(f"unknown elementwise op: {op}")


def tanh(x: Node) -> Node:
    return elementwise("tanh", x)


def sigmoid(x: Node) -> Node:
    return elementwise("sigmoid", x)


def log(x: Node) -> Node:
    return elementwise("log", x)


def relu(x: Node) -> Node:
    return elementwise("relu", x)


def softmax(x: Node, axis: int = 1) -> Node:
    """Normalized exponentials along ``axis`` with max-subtraction."""
    if axis not in (0, 1):
        raise ContractError(f"softmax axis must be 0 or 1, got {axis}")
    if x.shape[axis] == 0:
        raise DimensionError(f"softmax over an empty axis of shape {x.shape}")
    shifted = x.value - x.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def adjoint(g: np.ndarray):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _tape_of(x)._push(_frozen(y), "softmax", (x,), adjoint)


def affine(x: Node, scale: float, shift: float = 0.0) -> Node:
    """scale * x + shift with constant scalars."""
    y = x.value * scale + shift if shift else x.value * scale
    return _tape_of(x)._push(_frozen(y), "affine", (x,), lambda g: (g * scale,))


def expand(x: Node, rows: int, cols: int) -> Node:
    """Broadcast a 1×c, r×1 or 1×1 value to rows×cols."""
    r, c = x.shape
    if (r not in (1, rows)) or (c not in (1, cols)):
        raise DimensionError(f"cannot expand {x.shape} to {(rows, cols)}")
    y = np.broadcast_to(x.value, (rows, cols)).copy()

    def adjoint(g: np.ndarray):
        out = g
        if r == 1 and rows != 1:
            out = out.sum(axis=0, keepdims=True)
        if c == 1 and cols != 1:
            out = out.sum(axis=1, keepdims=True)
        return (out,)

    return _tape_of(x)._push(_frozen(y), "expand", (x,), adjoint)


def reduce_sum(x: Node, axis: Optional[int] = None) -> Node:
    """Sum over everything (1×1), over rows (axis=0, 1×c) or columns (axis=1, r×1)."""
    shape = x.shape
    if axis is None:
        y = np.array([[x.value.sum()]])
    elif axis in (0, 1):
        y = x.value.sum(axis=axis, keepdims=True)
    else:
        raise ContractError(f"reduce_sum axis must be None, 0 or 1, got {axis}")
    return _tape_of(x)._push(_frozen(y), "sum", (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def gather_rows(table: Node, ids: Sequence[int]) -> Node:
    """Embedding lookup: rows of ``table`` at 0-based ``ids``."""
    idx = np.asarray(ids, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= table.rows):
        raise DimensionError(f"row index out of range for table of shape {table.shape}")
    shape = table.shape

    def adjoint(g: np.ndarray):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _tape_of(table)._push(_frozen(table.value[idx]), "gather", (table,), adjoint)


def concat(nodes: Sequence[Node], axis: int = 1) -> Node:
    if not nodes:
        raise ContractError("concat needs at least one operand")
    other = 1 - axis
    if len({n.shape[other] for n in nodes}) != 1:
        raise DimensionError(f"concat shape mismatch: {[n.shape for n in nodes]}")
    sizes = [n.shape[axis] for n in nodes]
    bounds = np.cumsum(sizes)[:-1]

    def adjoint(g: np.ndarray):
        return tuple(np.split(g, bounds, axis=axis))

    y = np.concatenate([n.value for n in nodes], axis=axis)
    return _tape_of(*nodes)._push(_frozen(y), "concat", tuple(nodes), adjoint)


def slice_rows(x: Node, start: int, stop: int) -> Node:
    shape = x.shape

    def adjoint(g: np.ndarray):
        out = np.zeros(shape)
        out[start:stop] = g
        return (out,)

    return _tape_of(x)._push(_frozen(x.value[start:stop].copy()), "slice_rows", (x,), adjoint)


def slice_cols(x: Node, start: int, stop: int) -> Node:
    shape = x.shape

    def adjoint(g: np.ndarray):
        out = np.zeros(shape)
        out[:, start:stop] = g
        return (out,)

    return _tape_of(x)._push(_frozen(x.value[:, start:stop].copy()), "slice_cols", (x,), adjoint)


def reshape(x: Node, rows: int, cols: int) -> Node:
    if rows * cols != x.rows * x.cols:
        raise DimensionError(f"cannot reshape {x.shape} to {(rows, cols)}")
    shape = x.shape
    return _tape_of(x)._push(
        _frozen(x.value.reshape(rows, cols).copy()), "reshape", (x,), lambda g: (g.reshape(shape),)
    )


def clip(x: Node, lo: float, hi: float) -> Node:
    """Clamp to [lo, hi]; the adjoint is zero where the clamp is active."""
    xv = x.value
    inside = (xv > lo) & (xv < hi)
    return _tape_of(x)._push(_frozen(np.clip(xv, lo, hi)), "clip", (x,), lambda g: (g * inside,))


def batch_outer(w: Node, v: Node) -> Node:
    """Row-wise outer product flattened: out[b, n*d + j] = w[b, n] * v[b, j]."""
    if w.rows != v.rows:
        raise DimensionError(f"batch_outer row mismatch: {w.shape} vs {v.shape}")
    wv, vv = w.value, v.value
    batch, n = wv.shape
    d = vv.shape[1]
    y = (wv[:, :, None] * vv[:, None, :]).reshape(batch, n * d)

    def adjoint(g: np.ndarray):
        g3 = g.reshape(batch, n, d)
        return np.einsum("bnd,bd->bn", g3, vv), np.einsum("bnd,bn->bd", g3, wv)

    return _tape_of(w)._push(_frozen(y), "batch_outer", (w, v), adjoint)


def batch_weighted_sum(w: Node, m: Node) -> Node:
    """Attention read: out[b, j] = sum_n w[b, n] * m[b, n*d + j]."""
    batch, n = w.shape
    if m.rows != batch or m.cols % n:
        raise DimensionError(f"batch_weighted_sum shape mismatch: {w.shape} vs {m.shape}")
    d = m.cols // n
    wv = w.value
    m3 = m.value.reshape(batch, n, d)
    y = np.einsum("bn,bnd->bd", wv, m3)

    def adjoint(g: np.ndarray):
        dw = np.einsum("bd,bnd->bn", g, m3)
        dm = (wv[:, :, None] * g[:, None, :]).reshape(batch, n * d)
        return dw, dm

    return _tape_of(w)._push(_frozen(y), "batch_weighted_sum", (w, m), adjoint)


def layer_norm(x: Node, gamma: Node, beta: Node, eps: float = 1e-5) -> Node:
    """Row-wise layer normalization composed from primitives."""
    rows, cols = x.shape
    mean = expand(affine(reduce_sum(x, axis=1), 1.0 / cols), rows, cols)
    centered = x - mean
    var = affine(reduce_sum(centered * centered, axis=1), 1.0 / cols, eps)
    ones = x.tape.constant(np.ones((rows, 1)))
    inv_std = expand(elementwise("div", ones, elementwise("sqrt", var)), rows, cols)
    normed = centered * inv_std
    return normed * expand(gamma, rows, cols) + expand(beta, rows, cols)


def dropout(x: Node, rate: float, rng: Optional[np.random.Generator]) -> Node:
    """Inverted dropout; identity when no generator is given or rate is 0."""
    if rng is None or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * x.tape.constant(keep)


# ---------------------------------------------------------------------------
# Adjoint pass and gradient check
# ---------------------------------------------------------------------------


def backward(tape: ComputeTape, loss: Node) -> None:
    """Accumulate d(loss)/d(param) into every Parameter watched on ``tape``."""
    if loss.tape is not tape:
        raise ContractError("loss node was not produced on this tape")
    if not tape.record:
        raise ContractError("backward needs a recording tape")
    if loss.shape != (1, 1):
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")

    grads = {loss.index: np.ones((1, 1))}
    for node in reversed(tape.nodes[: loss.index + 1]):
        g = grads.pop(node.index, None)
        if g is None:
            continue
        if node.param is not None:
            node.param.accumulate(g)
            continue
        if node.adjoint is None:
            continue
        for parent, pg in zip(node.parents, node.adjoint(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(parent.index)
            grads[parent.index] = pg if prev is None else prev + pg


def grad_check(
    loss_fn: Callable[[ComputeTape], Node],
    params: Sequence[Parameter],
    eps: float = 1e-5,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``loss_fn`` builds a scalar loss on the tape it is given, reading the
    current values of ``params``.
    """
    if eps <= 0:
        raise ContractError(f"eps must be positive, got {eps}")

    for p in params:
        p.zero_grad()
    tape = ComputeTape()
    loss = loss_fn(tape)
    if not np.isfinite(loss.item()):
        raise EvaluationError("objective is not finite at the check point")
    backward(tape, loss)

    def evaluate() -> float:
        value = loss_fn(ComputeTape(record=False)).item()
        if not np.isfinite(value):
            raise EvaluationError("objective is not finite at a perturbed point")
        return value

    worst = 0.0
    for p in params:
        analytic = p.grad.data
        base = p.value.data.copy()
        for idx in np.ndindex(*base.shape):
            shifted = base.copy()
            shifted[idx] = base[idx] + eps
            p.assign(shifted)
            f_plus = evaluate()
            shifted[idx] = base[idx] - eps
            p.assign(shifted)
            f_minus = evaluate()
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = analytic[idx]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
        p.assign(base)

    logger.debug("grad_check over %d parameters: max relative error %.3e", len(params), worst)
    return worst
