"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

A ``Tensor`` wraps an array in the current precision (float32 unless a ``precision``
block says otherwise). Operations on tensors that require gradients record their
parents and a backward closure; ``backward(loss)`` walks the recorded nodes in
reverse topological order once and deposits gradients on the leaves.
"""

import hashlib
from contextlib import contextmanager
from contextvars import ContextVar
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from errors import ContractError, DomainError, NormalizationError, ParameterError, ShapeError
from logger import get_logger

logger = get_logger("ecglab.autodiff")

_dtype: ContextVar = ContextVar("ecglab_dtype", default=np.float32)
_grad_enabled: ContextVar = ContextVar("ecglab_grad_enabled", default=True)


def current_dtype():
    return _dtype.get()


@contextmanager
def precision(dtype):
    token = _dtype.set(np.dtype(dtype).type)
    try:
        yield
    finally:
        _dtype.reset(token)


@contextmanager
def no_grad():
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


class Tensor:
    # numpy defers mixed expressions to the reflected Tensor operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=current_dtype())
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.grad: Optional[np.ndarray] = None
        self.op = "leaf"
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        req = ", requires_grad=True" if self.requires_grad else ""
        nm = f", name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{req}{nm})"

    # operators -------------------------------------------------------------

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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return slice_(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_axis(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_axis(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(data, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    out = Tensor(data)
    out.op = op
    if _grad_enabled.get() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# elementwise -----------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return _node(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return _node(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return _node(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    if np.any(b.data == 0):
        raise DomainError(f"div: denominator of shape {b.shape} contains zeros")
    out = a.data / b.data

    def backward(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return _node(out, (a, b), backward, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError(f"log: input of shape {a.shape} has non-positive entries (min {a.data.min():.3g})")
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise DomainError(f"sqrt: input of shape {a.shape} has negative entries (min {a.data.min():.3g})")
    out = np.sqrt(a.data)

    def backward(g):
        # unbounded at 0; callers clamp first
        with np.errstate(divide="ignore"):
            return (g * 0.5 / out,)

    return _node(out, (a,), backward, "sqrt")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _node(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def abs_(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def clamp_min(a, floor: float) -> Tensor:
    a = as_tensor(a)
    keep = a.data > floor
    return _node(np.where(keep, a.data, floor), (a,), lambda g: (g * keep,), "clamp_min")


# structural ------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(out, (a, b), backward, "matmul")


def transpose(a, axes: Optional[Sequence[int]] = None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        if a.ndim < 2:
            raise ShapeError(f"transpose: needs at least 2 dims, got shape {a.shape}")
        axes = list(range(a.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), "transpose")


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from None
    return _node(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def sum_axis(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(out, (a,), backward, "sum")


def mean_axis(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return sum_axis(a, axis, keepdims) * (1.0 / count)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise ShapeError(f"concat: shapes {shapes} do not agree off axis {axis}") from None
    cuts = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _node(out, tensors, lambda g: tuple(np.split(g, cuts, axis=axis)), "concat")


def _is_basic(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def slice_(a, index) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data[index]
    except IndexError as e:
        raise ShapeError(f"slice: index {index!r} invalid for shape {a.shape}: {e}") from None
    basic = _is_basic(index)

    def backward(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _node(np.array(out), (a,), backward, "slice")


# row-wise ---------------------------------------------------------------------


def l2_normalize_rows(a) -> Tensor:
    a = as_tensor(a)
    norm = np.sqrt((a.data * a.data).sum(axis=-1, keepdims=True))
    if np.any(norm == 0):
        rows = np.flatnonzero(norm.reshape(-1) == 0).tolist()
        raise NormalizationError(f"l2_normalize_rows: zero vector at row(s) {rows}")
    out = a.data / norm

    def backward(g):
        return ((g - out * (g * out).sum(axis=-1, keepdims=True)) / norm,)

    return _node(out, (a,), backward, "l2_normalize")


def softmax_rows(a) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)
    return _node(out, (a,), lambda g: (out * (g - (g * out).sum(axis=-1, keepdims=True)),), "softmax")


def log_softmax_rows(a) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    probs = np.exp(out)
    return _node(out, (a,), lambda g: (g - probs * g.sum(axis=-1, keepdims=True),), "log_softmax")


def _cofactors(m: np.ndarray) -> np.ndarray:
    a = [[m[..., i, j] for j in range(3)] for i in range(3)]
    c = np.empty_like(m)
    c[..., 0, 0] = a[1][1] * a[2][2] - a[1][2] * a[2][1]
    c[..., 0, 1] = -(a[1][0] * a[2][2] - a[1][2] * a[2][0])
    c[..., 0, 2] = a[1][0] * a[2][1] - a[1][1] * a[2][0]
    c[..., 1, 0] = -(a[0][1] * a[2][2] - a[0][2] * a[2][1])
    c[..., 1, 1] = a[0][0] * a[2][2] - a[0][2] * a[2][0]
    c[..., 1, 2] = -(a[0][0] * a[2][1] - a[0][1] * a[2][0])
    c[..., 2, 0] = a[0][1] * a[1][2] - a[0][2] * a[1][1]
    c[..., 2, 1] = -(a[0][0] * a[1][2] - a[0][2] * a[1][0])
    c[..., 2, 2] = a[0][0] * a[1][1] - a[0][1] * a[1][0]
    return c


def det3(a) -> Tensor:
    """Batched 3x3 determinant by cofactor expansion along the first row."""
    a = as_tensor(a)
    if a.ndim < 2 or a.shape[-2:] != (3, 3):
        raise ShapeError(f"det3: expected (..., 3, 3), got {a.shape}")
    cof = _cofactors(a.data)
    m = a.data
    out = m[..., 0, 0] * cof[..., 0, 0] + m[..., 0, 1] * cof[..., 0, 1] + m[..., 0, 2] * cof[..., 0, 2]
    return _node(out, (a,), lambda g: (np.asarray(g)[..., None, None] * cof,), "det3")


# composites ------------------------------------------------------------------


def layer_norm_rows(x, gain=None, bias=None, eps: float = 1e-5) -> Tensor:
    x = as_tensor(x)
    centered = x - x.mean(axis=-1, keepdims=True)
    var = (centered * centered).mean(axis=-1, keepdims=True)
    out = centered / sqrt(var + eps)
    if gain is not None:
        out = out * gain
    if bias is not None:
        out = out + bias
    return out


def scaled_dot_attention(q, k, v, mask=None) -> Tensor:
    """softmax(q kᵀ / sqrt(d)) v over the last two axes; leading axes are batch/heads."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention: q {q.shape}, k {k.shape}, v {v.shape} are not compatible")
    scores = matmul(q, transpose(k)) * (1.0 / np.sqrt(q.shape[-1]))
    if mask is not None:
        scores = scores + np.where(np.asarray(mask, dtype=bool), 0.0, -1e9)
    return matmul(softmax_rows(scores), v)


# backward --------------------------------------------------------------------


def _topo_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires grad."""
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        shape = getattr(loss, "shape", type(loss).__name__)
        raise ContractError(f"backward needs a scalar loss, got shape {shape}")
    if not loss.requires_grad:
        return
    pending: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=parent.data.dtype).reshape(parent.shape)
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg


# parameters ------------------------------------------------------------------


class Graph:
    """Named parameter registry for one model or group of models."""

    def __init__(self, name: str = "graph"):
        self.name = name
        self.frozen = False
        self._params: Dict[str, Tensor] = {}

    def param(self, name: str, value) -> Tensor:
        if name in self._params:
            raise ParameterError(f"parameter '{name}' already registered in {self.name}")
        tensor = Tensor(np.array(value), requires_grad=not self.frozen, name=name)
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self):
        return len(self._params)

    def items(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self._params.items())

    def names(self) -> List[str]:
        return list(self._params)

    def parameters(self) -> List[Tensor]:
        return list(self._params.values())

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def freeze(self):
        self.frozen = True
        for p in self._params.values():
            p.requires_grad = False
            p.grad = None
        logger.debug("graph frozen", extra={"graph": self.name, "n_params": len(self._params)})

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True):
        missing = [n for n in self._params if n not in state]
        if strict and missing:
            raise ParameterError(f"{self.name}: state is missing parameter(s) {', '.join(missing)}")
        for name, p in self._params.items():
            if name not in state:
                continue
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ShapeError(f"{self.name}.{name}: stored shape {value.shape} != parameter shape {p.shape}")
            p.data = value.astype(p.data.dtype, copy=True)

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name, p in self._params.items():
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(p.data).tobytes())
        return digest.hexdigest()

    @contextmanager
    def cast(self, dtype):
        """Temporarily hold every parameter in ``dtype``; restores the original arrays on exit."""
        saved = {name: p.data for name, p in self._params.items()}
        for p in self._params.values():
            p.data = p.data.astype(dtype)
        try:
            yield self
        finally:
            for name, p in self._params.items():
                p.data = saved[name]


# gradient checking -------------------------------------------------------------


def grad_check(fn: Callable[..., Tensor], inputs: Sequence, h: float = 1e-3, coords: Optional[int] = None, seed=0):
    """Largest relative error between backward and central differences over ``inputs``.

    Runs in float64. ``coords`` limits the number of checked coordinates per input
    (chosen with ``seed``); by default every coordinate is checked.
    """
    with precision(np.float64):
        arrays = [np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64) for x in inputs]
        leaves = [Tensor(x, requires_grad=True) for x in arrays]
        out = fn(*leaves)
        if not isinstance(out, Tensor) or out.data.size != 1:
            raise ContractError(f"grad_check needs a scalar-valued function, got shape {getattr(out, 'shape', None)}")
        backward(out)
        analytic = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]

        rng = np.random.default_rng(seed)
        worst = 0.0
        with no_grad():
            for k, x in enumerate(arrays):
                flat = x.reshape(-1)
                picks = np.arange(flat.size)
                if coords is not None and coords < flat.size:
                    picks = np.sort(rng.choice(flat.size, size=coords, replace=False))
                for i in picks:
                    original = flat[i]
                    flat[i] = original + h
                    plus = fn(*[Tensor(a) for a in arrays]).item()
                    flat[i] = original - h
                    minus = fn(*[Tensor(a) for a in arrays]).item()
                    flat[i] = original
                    numeric = (plus - minus) / (2 * h)
                    exact = float(analytic[k].reshape(-1)[i])
                    err = abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-8)
                    worst = max(worst, err)
    return worst
