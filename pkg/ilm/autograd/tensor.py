"""
Dense tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array. Every op that involves a tensor requiring
gradients records its inputs and a local gradient rule; `backward` walks the
resulting graph in reverse topological order exactly once per node.
"""
from contextlib import contextmanager
from contextvars import ContextVar
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import DimensionError, NonFiniteError, UsageError

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]
GradRule = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_DEFAULT_DTYPE = np.float64
_GRAD_ENABLED: ContextVar[bool] = ContextVar("ilm_grad_enabled", default=True)


# ==================== Global switches ====================
def get_default_dtype():
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise UsageError(f"unsupported dtype {dtype}; use float32 or float64")
    _DEFAULT_DTYPE = dtype.type


@contextmanager
def default_dtype(dtype) -> Iterator[None]:
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


@contextmanager
def no_grad() -> Iterator[None]:
    """
    Ops inside this block record no graph (evaluation, beam search).

    The flag lives in a context variable: a block entered on a worker thread
    leaves every other thread recording.
    """
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED.get()


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.isfinite(data).all():
        raise NonFiniteError(op)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ==================== Tensor ====================
class Tensor:
    """
    Immutable n-dimensional array with an optional gradient rule.

    Leaves are created directly; non-leaf tensors are produced by ops and keep
    references to their inputs (`_parents`) plus the rule mapping an output
    gradient to input gradients (`_rule`).
    """

    __slots__ = ("data", "requires_grad", "grad", "op", "name", "_parents", "_rule")

    def __init__(self, data: ArrayLike, requires_grad: bool = False, dtype=None, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype.kind == "f":
                dtype = data.dtype
            else:
                dtype = _DEFAULT_DTYPE
        self.data = np.array(data, dtype=dtype)
        self.data.flags.writeable = False
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.op = "leaf"
        self.name = name
        self._parents: Tuple["Tensor", ...] = ()
        self._rule: Optional[GradRule] = None

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], rule: GradRule, op: str) -> "Tensor":
        _check_finite(data, op)
        out = cls.__new__(cls)
        out.data = data
        out.data.flags.writeable = False
        out.grad = None
        out.op = op
        out.name = None
        track = _GRAD_ENABLED.get() and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(parents) if track else ()
        out._rule = rule if track else None
        return out

    # --- introspection ---
    @property
    def shape(self) -> Tuple[int, ...]:
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

    @property
    def is_leaf(self) -> bool:
        return self._rule is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # --- operators ---
    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return div(self, other)

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return div(other, self)

    def __neg__(self) -> "Tensor":
        return mul(self, -1.0)

    def __pow__(self, exponent: float) -> "Tensor":
        return power(self, exponent)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, index) -> "Tensor":
        return take(self, index)

    # --- method forms ---
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self) -> "Tensor":
        return transpose(self, None)

    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)

    def sqrt(self) -> "Tensor":
        return sqrt(self)


def as_tensor(value: ArrayLike, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(value, dtype=dtype)


# ==================== Graph and backward ====================
class Graph:
    """Topologically ordered nodes reachable from an output tensor."""

    def __init__(self, output: Tensor):
        self.output = output
        self.nodes: List[Tensor] = self._toposort(output)

    @staticmethod
    def _toposort(output: Tensor) -> List[Tensor]:
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._parents):
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def leaves(self) -> List[Tensor]:
        return [node for node in self.nodes if node.is_leaf and node.requires_grad]

    def __len__(self) -> int:
        return len(self.nodes)


class GradientMap:
    """Gradients keyed by tensor identity, with zeros for disconnected leaves."""

    def __init__(self):
        self._grads: Dict[int, np.ndarray] = {}
        self._tensors: Dict[int, Tensor] = {}

    def _set(self, tensor: Tensor, grad: np.ndarray) -> None:
        self._grads[id(tensor)] = grad
        self._tensors[id(tensor)] = tensor

    def __getitem__(self, tensor: Tensor) -> np.ndarray:
        return self._grads[id(tensor)]

    def get(self, tensor: Tensor) -> np.ndarray:
        return self._grads.get(id(tensor), np.zeros_like(tensor.data))

    def __contains__(self, tensor: Tensor) -> bool:
        return id(tensor) in self._grads

    def items(self) -> Iterator[Tuple[Tensor, np.ndarray]]:
        for key, grad in self._grads.items():
            yield self._tensors[key], grad

    def __len__(self) -> int:
        return len(self._grads)


def backward(loss: Tensor, params: Optional[Iterable[Tensor]] = None) -> GradientMap:
    """
    Reverse-mode sweep from a scalar loss.

    Gradients are written to `.grad` of every requires_grad leaf reached (and
    of every tensor in `params`, zero when not on the path) and returned as a
    GradientMap. Gradients are recomputed from scratch on every call, so two
    calls over the same graph return identical values.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    result = GradientMap()
    graph = Graph(loss)
    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}

    for node in reversed(graph.nodes):
        grad = grads.get(id(node))
        if grad is None:
            continue
        if node.is_leaf:
            if node.requires_grad:
                node.grad = grad
                result._set(node, grad)
            continue
        del grads[id(node)]
        parent_grads = node._rule(grad)
        for parent, parent_grad in zip(node._parents, parent_grads):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + parent_grad
            else:
                grads[key] = parent_grad

    if params is not None:
        for param in params:
            if param not in result:
                zero = np.zeros_like(param.data)
                param.grad = zero
                result._set(param, zero)
    return result


# ==================== Elementwise arithmetic ====================
def _binary_operands(a: ArrayLike, b: ArrayLike) -> Tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _binary_operands(a, b)
    _check_broadcast(a, b, "add")

    def rule(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)

    return Tensor._from_op(a.data + b.data, (a, b), rule, "add")


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _binary_operands(a, b)
    _check_broadcast(a, b, "sub")

    def rule(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None)

    return Tensor._from_op(a.data - b.data, (a, b), rule, "sub")


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _binary_operands(a, b)
    _check_broadcast(a, b, "mul")

    def rule(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return Tensor._from_op(a.data * b.data, (a, b), rule, "mul")


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _binary_operands(a, b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data

    def rule(g):
        return (_unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None)

    return Tensor._from_op(out, (a, b), rule, "div")


def power(a: Tensor, exponent: float) -> Tensor:
    out = a.data ** exponent

    def rule(g):
        return (g * exponent * a.data ** (exponent - 1),)

    return Tensor._from_op(out, (a,), rule, "pow")


# ==================== Matrix product ====================
def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """
    Matrix product over the last two axes (leading axes broadcast).
    Gradient rules: dA = G·Bᵀ, dB = Aᵀ·G.
    """
    a, b = _binary_operands(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs matrices, got shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")

    def rule(g):
        grad_a = grad_b = None
        if a.requires_grad:
            grad_a = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            grad_b = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return grad_a, grad_b

    return Tensor._from_op(a.data @ b.data, (a, b), rule, "matmul")


# ==================== Unary functions ====================
def _require_nonempty(x: Tensor, op: str) -> None:
    if x.size == 0:
        raise DimensionError(f"{op} on an empty tensor")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor._from_op(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    _require_nonempty(x, "log")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    return Tensor._from_op(out, (x,), lambda g: (g / x.data,), "log")


def sqrt(x: Tensor) -> Tensor:
    with np.errstate(invalid="ignore"):
        out = np.sqrt(x.data)
    return Tensor._from_op(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return Tensor._from_op(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return Tensor._from_op(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)) computed without overflow."""
    data = x.data
    out = np.maximum(data, 0.0) + np.log1p(np.exp(-np.abs(data)))
    sig = 0.5 * (1.0 + np.tanh(0.5 * data))
    return Tensor._from_op(out, (x,), lambda g: (g * sig,), "softplus")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh approximation of GELU."""
    data = x.data
    inner = _GELU_C * (data + 0.044715 * data ** 3)
    t = np.tanh(inner)
    out = 0.5 * data * (1.0 + t)

    def rule(g):
        d_inner = _GELU_C * (1.0 + 3.0 * 0.044715 * data ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * data * (1.0 - t * t) * d_inner),)

    return Tensor._from_op(out, (x,), rule, "gelu")


# ==================== Reductions ====================
def _normalize_axes(axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def rule(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor._from_op(np.asarray(out), (x,), rule, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, x.ndim)
    count = 1
    for a in axes:
        count *= x.shape[a]
    if count == 0:
        raise DimensionError("mean over an empty axis")
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def rule(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return Tensor._from_op(np.asarray(out), (x,), rule, "mean")


# ==================== Shape manipulation ====================
def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {x.shape} into {shape}")
    return Tensor._from_op(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes: Optional[Tuple[int, ...]] = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))
    out = np.transpose(x.data, axes)
    return Tensor._from_op(out, (x,), lambda g: (np.transpose(g, inverse),), "transpose")


def take(x: Tensor, index) -> Tensor:
    """Basic and advanced indexing; gradient scatters back with np.add.at."""
    if isinstance(index, Tensor):
        index = index.data.astype(np.int64)
    out = x.data[index]

    def rule(g):
        grad = np.zeros_like(x.data)
        np.add.at(grad, index, g)
        return (grad,)

    return Tensor._from_op(np.array(out), (x,), rule, "take")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise DimensionError("concat of an empty list")
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise DimensionError(f"concat: {str(e)}")
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def rule(g):
        grads = []
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if not t.requires_grad:
                grads.append(None)
                continue
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            grads.append(g[tuple(sl)])
        return tuple(grads)

    return Tensor._from_op(out, tensors, rule, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise DimensionError("stack of an empty list")
    tensors = [as_tensor(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis % (t.ndim + 1)] + (1,) + t.shape[axis % (t.ndim + 1):]) for t in tensors]
    return concat(expanded, axis=axis)


def pad_rows(x: Tensor, length: int) -> Tensor:
    """Right-pad the first axis of a 2-D tensor with zero rows up to `length`."""
    missing = length - x.shape[0]
    if missing < 0:
        raise DimensionError(f"cannot pad {x.shape[0]} rows down to {length}")
    if missing == 0:
        return x
    filler = Tensor(np.zeros((missing,) + x.shape[1:], dtype=x.dtype))
    return concat([x, filler], axis=0)
