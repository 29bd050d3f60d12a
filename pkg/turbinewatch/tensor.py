"""
Minimal reverse mode automatic differentiation on numpy arrays.

Every primitive is a `Function` subclass with a `forward` on raw arrays and a
`backward` that maps the output gradient to one gradient per input. Calling
`Function.apply` records the graph whenever an input requires a gradient;
`Tensor.backward` walks that graph once in reverse topological order.

Everything is float64. A primitive that produces a non finite value raises
`NumericException` naming itself.
"""
from collections.abc import Mapping
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union
import math

import numpy as np
from scipy import special

from turbinewatch.exceptions import NumericException, UsageException

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]


class Tensor:
    __slots__ = ("data", "grad", "_ctx", "requires_grad")
    # numpy operands defer to the reflected Tensor operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        self.data: np.ndarray = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self._ctx: Optional[Function] = None
        self.requires_grad = requires_grad

    def __repr__(self) -> str:
        s = f"Tensor({np.round(self.data, 4)}"
        if self._ctx is not None:
            s += f", grad_fn={type(self._ctx).__name__}"
        return s + ")"

    @staticmethod
    def ensure(value: ArrayLike) -> "Tensor":
        if isinstance(value, Tensor):
            return value
        return Tensor(value)

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
    def T(self) -> "Tensor":
        return self.swapaxes(-2, -1)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.size != 1:
            raise UsageException(f"item() needs a single value, tensor has shape {self.shape}")
        return float(self.data.reshape(()))

    def __add__(self, other: ArrayLike) -> "Tensor":
        return Add.apply(self, Tensor.ensure(other))

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return Add.apply(Tensor.ensure(other), self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return Sub.apply(self, Tensor.ensure(other))

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return Sub.apply(Tensor.ensure(other), self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return Mul.apply(self, Tensor.ensure(other))

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return Mul.apply(Tensor.ensure(other), self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return Div.apply(self, Tensor.ensure(other))

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return Div.apply(Tensor.ensure(other), self)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return MatMul.apply(self, Tensor.ensure(other))

    def __rmatmul__(self, other: ArrayLike) -> "Tensor":
        return MatMul.apply(Tensor.ensure(other), self)

    def __neg__(self) -> "Tensor":
        return Neg.apply(self)

    def __pow__(self, exponent: float) -> "Tensor":
        return Pow.apply(self, exponent=float(exponent))

    def __getitem__(self, index) -> "Tensor":
        return GetItem.apply(self, index=index)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        out = self.sum(axis=axis, keepdims=keepdims)
        return out * (out.size / self.size)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return Reshape.apply(self, shape=shape)

    def transpose(self, *axes) -> "Tensor":
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        return Transpose.apply(self, axes=axes)

    def swapaxes(self, a: int, b: int) -> "Tensor":
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(*axes)

    def exp(self) -> "Tensor":
        return Exp.apply(self)

    def log(self) -> "Tensor":
        return Log.apply(self)

    def tanh(self) -> "Tensor":
        return Tanh.apply(self)

    def sigmoid(self) -> "Tensor":
        return Sigmoid.apply(self)

    def relu(self) -> "Tensor":
        return Relu.apply(self)

    def softmax(self, axis: int = -1) -> "Tensor":
        return Softmax.apply(self, axis=axis)

    def backward(self):
        """Accumulates d(self)/d(leaf) into `grad` of every leaf that requires it."""
        if self.size != 1:
            raise UsageException(f"backward needs a scalar, got shape {self.shape}")

        pending: Dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(_topological_order(self)):
            grad = pending.pop(id(node), None)
            if grad is None:
                continue

            if node._ctx is None:
                node.grad = grad if node.grad is None else node.grad + grad
                continue

            for parent, parent_grad in zip(node._ctx.parents, node._ctx.backward(grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue

                parent_grad = _undo_broadcast(parent.shape, parent_grad)
                if id(parent) in pending:
                    pending[id(parent)] = pending[id(parent)] + parent_grad
                else:
                    pending[id(parent)] = parent_grad


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]

    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue

        if id(node) in visited:
            continue
        visited.add(id(node))

        stack.append((node, True))
        if node._ctx is not None:
            for parent in node._ctx.parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

    return order


def _undo_broadcast(shape: Tuple[int, ...], grad: np.ndarray) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)

    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)

    return grad


class Function:
    def __init__(self, *parents: Tensor):
        self.parents = parents

    @classmethod
    def apply(cls, *parents: Tensor, **options) -> Tensor:
        fn = cls(*parents)
        with np.errstate(all="ignore"):
            data = fn.forward(*[p.data for p in parents], **options)

        if not np.all(np.isfinite(data)):
            raise NumericException(f"non-finite value produced by {cls.__name__.lower()}")

        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._ctx = fn
        return out

    def forward(self, *args, **options) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError


class Add(Function):
    def forward(self, x, y):
        return x + y

    def backward(self, grad):
        return grad, grad


class Sub(Function):
    def forward(self, x, y):
        return x - y

    def backward(self, grad):
        return grad, -grad


class Mul(Function):
    def forward(self, x, y):
        self.x, self.y = x, y
        return x * y

    def backward(self, grad):
        return grad * self.y, grad * self.x


class Div(Function):
    def forward(self, x, y):
        self.x, self.y = x, y
        return x / y

    def backward(self, grad):
        return grad / self.y, -grad * self.x / self.y**2


class Neg(Function):
    def forward(self, x):
        return -x

    def backward(self, grad):
        return (-grad,)


class Pow(Function):
    def forward(self, x, exponent: float):
        self.x, self.exponent = x, exponent
        return x**exponent

    def backward(self, grad):
        return (grad * self.exponent * self.x ** (self.exponent - 1),)


class MatMul(Function):
    def forward(self, x, y):
        if x.ndim < 2 or y.ndim < 2 or x.shape[-1] != y.shape[-2]:
            raise UsageException(f"cannot multiply {x.shape} by {y.shape}")
        self.x, self.y = x, y
        return x @ y

    def backward(self, grad):
        return grad @ np.swapaxes(self.y, -1, -2), np.swapaxes(self.x, -1, -2) @ grad


class Sum(Function):
    def forward(self, x, axis, keepdims: bool):
        self.shape = x.shape
        self.kept = np.sum(x, axis=axis, keepdims=True).shape
        return np.sum(x, axis=axis, keepdims=keepdims)

    def backward(self, grad):
        return (np.broadcast_to(grad.reshape(self.kept), self.shape).copy(),)


class Reshape(Function):
    def forward(self, x, shape):
        self.shape = x.shape
        return x.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.shape),)


class Transpose(Function):
    def forward(self, x, axes):
        self.axes = axes
        return np.transpose(x, axes)

    def backward(self, grad):
        return (np.transpose(grad, np.argsort(self.axes)),)


class GetItem(Function):
    def forward(self, x, index):
        self.shape, self.index = x.shape, index
        return x[index]

    def backward(self, grad):
        out = np.zeros(self.shape)
        np.add.at(out, self.index, grad)
        return (out,)


class Concat(Function):
    def forward(self, *xs, axis: int):
        self.axis = axis
        self.bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]
        return np.concatenate(xs, axis=axis)

    def backward(self, grad):
        return np.split(grad, self.bounds, axis=self.axis)


class Exp(Function):
    def forward(self, x):
        self.out = np.exp(x)
        return self.out

    def backward(self, grad):
        return (grad * self.out,)


class Log(Function):
    def forward(self, x):
        self.x = x
        return np.log(x)

    def backward(self, grad):
        return (grad / self.x,)


class Tanh(Function):
    def forward(self, x):
        self.out = np.tanh(x)
        return self.out

    def backward(self, grad):
        return (grad * (1.0 - self.out**2),)


class Sigmoid(Function):
    def forward(self, x):
        self.out = special.expit(x)
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1.0 - self.out),)


class Relu(Function):
    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, 0.0)

    def backward(self, grad):
        return (grad * self.mask,)


class Softmax(Function):
    def forward(self, x, axis: int):
        self.axis = axis
        self.out = special.softmax(x, axis=axis)
        return self.out

    def backward(self, grad):
        inner = np.sum(grad * self.out, axis=self.axis, keepdims=True)
        return (self.out * (grad - inner),)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    expanded = []
    for t in tensors:
        position = axis if axis >= 0 else t.ndim + 1 + axis
        expanded.append(t.reshape(t.shape[:position] + (1,) + t.shape[position:]))
    return concat(expanded, axis=axis)


class ParameterSet(Mapping):
    """Named parameters in insertion order."""

    def __init__(self, items: Optional[Iterable[Tuple[str, ArrayLike]]] = None):
        self._params: Dict[str, Tensor] = {}
        for name, value in items or []:
            self.add(name, value)

    def add(self, name: str, value: ArrayLike):
        if name in self._params:
            raise UsageException(f"duplicate parameter {name!r}")
        self._params[name] = Tensor(Tensor.ensure(value).data.copy())

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def __repr__(self) -> str:
        shapes = ", ".join(f"{k}={v.shape}" for k, v in self._params.items())
        return f"ParameterSet({shapes})"

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: t.data for name, t in self._params.items()}

    def count(self) -> int:
        return sum(t.size for t in self._params.values())


LossFunction = Callable[[Mapping], Tensor]


def value_and_grad(loss_fn: LossFunction, params: ParameterSet) -> Tuple[float, Dict[str, Tensor]]:
    leaves = {name: Tensor(t.data, requires_grad=True) for name, t in params.items()}
    loss = loss_fn(leaves)

    if loss.size != 1:
        raise UsageException(f"loss must be a scalar, got shape {loss.shape}")

    loss.backward()
    grads = {
        name: Tensor(leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data))
        for name, leaf in leaves.items()
    }
    return loss.item(), grads


def grad(loss_fn: LossFunction, params: ParameterSet) -> Dict[str, Tensor]:
    return value_and_grad(loss_fn, params)[1]


def glorot(g: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return g.uniform(-limit, limit, size=(fan_in, fan_out))


def attention_weights(q: Tensor, k: Tensor) -> Tensor:
    if q.shape[-1] != k.shape[-1] or q.shape[:-2] != k.shape[:-2]:
        raise UsageException(f"query {q.shape} and key {k.shape} do not match")
    return (q @ k.T / math.sqrt(q.shape[-1])).softmax(axis=-1)


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(Q Kt / sqrt(d_k)) V"""
    if k.shape[:-1] != v.shape[:-1]:
        raise UsageException(f"key {k.shape} and value {v.shape} do not match")
    return attention_weights(q, k) @ v


def positional_encoding(length: int, d: int) -> Tensor:
    if d % 2 != 0:
        raise UsageException(f"positional encoding needs an even width, got {d}")

    position = np.arange(length)[:, None]
    rate = 10000.0 ** (np.arange(0, d, 2) / d)
    pe = np.empty((length, d))
    pe[:, 0::2] = np.sin(position / rate)
    pe[:, 1::2] = np.cos(position / rate)
    return Tensor(pe)


def lstm_cell(
    x: Tensor, h: Tensor, c: Tensor, w_x: Tensor, w_h: Tensor, b: Tensor
) -> Tuple[Tensor, Tensor]:
    """
    One step of a standard LSTM. The 4H gate columns of w_x, w_h and b are
    ordered input, forget, candidate, output.
    """
    hidden = h.shape[-1]
    if (
        w_x.shape != (x.shape[-1], 4 * hidden)
        or w_h.shape != (hidden, 4 * hidden)
        or b.shape != (4 * hidden,)
        or c.shape != h.shape
    ):
        raise UsageException(
            f"lstm shapes x={x.shape} h={h.shape} c={c.shape} "
            f"w_x={w_x.shape} w_h={w_h.shape} b={b.shape}"
        )

    z = x @ w_x + h @ w_h + b
    i = z[..., :hidden].sigmoid()
    f = z[..., hidden : 2 * hidden].sigmoid()
    g = z[..., 2 * hidden : 3 * hidden].tanh()
    o = z[..., 3 * hidden :].sigmoid()

    c_next = f * c + i * g
    return o * c_next.tanh(), c_next


def reparam_sample(mu: Tensor, logvar: Tensor, noise: ArrayLike) -> Tensor:
    noise = Tensor.ensure(noise)
    if mu.shape != logvar.shape or mu.shape != noise.shape:
        raise UsageException(
            f"mu {mu.shape}, logvar {logvar.shape} and noise {noise.shape} differ"
        )
    return mu + (logvar * 0.5).exp() * noise
