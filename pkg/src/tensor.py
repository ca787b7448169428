# /cooking_vit/src/tensor.py

import logging
import math
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import erf

# Set up logging for this module
logger = logging.getLogger(__name__)

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class ContractError(ValueError):
    """Raised when an operation is called outside its contract."""


class NumericalError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


class _Mode(threading.local):
    def __init__(self):
        self.dtype = np.float32
        self.grad_enabled = True


_mode = _Mode()


def get_default_dtype():
    return _mode.dtype


@contextmanager
def precision(dtype: Union[str, type]):
    """
    Switches the dtype new tensors are created with for the current thread.

    float32 is the training precision; float64 is used for finite-difference
    verification.
    """
    previous = _mode.dtype
    _mode.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _mode.dtype = previous


@contextmanager
def no_grad():
    """Disables graph recording for the current thread."""
    previous = _mode.grad_enabled
    _mode.grad_enabled = False
    try:
        yield
    finally:
        _mode.grad_enabled = previous


class Tensor:
    """
    Dense n-dimensional array with an optional gradient record.

    Data lives in a contiguous row-major numpy array. Results of tracked
    operations keep references to their parents and a backward rule; a call to
    `backward` on a scalar walks that graph once and accumulates gradients.
    """

    __slots__ = ('data', 'requires_grad', 'grad', '_parents', '_backward', '_op')

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        array = np.asarray(data, dtype=dtype or _mode.dtype)
        # ascontiguousarray would promote a 0-d scalar to shape (1,)
        self.data = array if array.flags.c_contiguous else np.ascontiguousarray(array)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: Tuple['Tensor', ...] = ()
        self._backward: Optional[Callable] = None
        self._op = ''

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad}, op='{self._op}')"

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

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> 'Tensor':
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    # Operator sugar, all routed through the functional ops below.
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
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def backward(self):
        backward(self)


TensorLike = Union[Tensor, np.ndarray, float, int]


def as_tensor(value: TensorLike) -> Tensor:
    if isinstance(value, Tensor):
        return value
    if isinstance(value, np.ndarray):
        return Tensor(value, dtype=value.dtype if value.dtype.kind == 'f' else None)
    return Tensor(value)


def _operands(a: TensorLike, b: TensorLike) -> Tuple[Tensor, Tensor]:
    """Wraps a binary op's operands; a plain number or array takes its tensor partner's dtype."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, Tensor(b, dtype=a.dtype)
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return Tensor(a, dtype=b.dtype), b
    return as_tensor(a), as_tensor(b)


def _result(data: np.ndarray, parents: Sequence[Tensor], op: str, rule: Callable) -> Tensor:
    """Wraps an op output, checks it is finite and records the backward rule."""
    if not np.all(np.isfinite(data)):
        logger.error(f"Operation '{op}' produced non-finite values.")
        raise NumericalError(f"Operation '{op}' produced NaN or Inf values.")
    out = Tensor(data, dtype=data.dtype)
    if _mode.grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = rule
        out._op = op
    return out


def _check_broadcast(a: Tuple[int, ...], b: Tuple[int, ...], op: str):
    # Only scalars and leading batch dimensions broadcast.
    if a == b or len(a) == 0 or len(b) == 0:
        return
    short, long_ = (a, b) if len(a) < len(b) else (b, a)
    if long_[len(long_) - len(short):] != short:
        logger.error(f"Shape mismatch in '{op}': {a} vs {b}")
        raise DimensionError(f"Shape mismatch in '{op}': {a} vs {b}")


def _reduce_to(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sums a broadcast gradient back down to the operand's shape."""
    if grad.shape == shape:
        return grad
    if len(shape) == 0:
        return np.asarray(grad.sum(), dtype=grad.dtype)
    lead = grad.ndim - len(shape)
    return grad.sum(axis=tuple(range(lead)))


# --- Elementwise arithmetic ---

def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _operands(a, b)
    _check_broadcast(a.shape, b.shape, 'add')

    def rule(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _result(a.data + b.data, (a, b), 'add', rule)


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _operands(a, b)
    _check_broadcast(a.shape, b.shape, 'sub')

    def rule(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return _result(a.data - b.data, (a, b), 'sub', rule)


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _operands(a, b)
    _check_broadcast(a.shape, b.shape, 'mul')

    def rule(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), 'mul', rule)


def div(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _operands(a, b)
    _check_broadcast(a.shape, b.shape, 'div')

    def rule(g):
        return (_reduce_to(g / b.data, a.shape),
                _reduce_to(-g * a.data / (b.data * b.data), b.shape))

    return _result(a.data / b.data, (a, b), 'div', rule)


def power(a: TensorLike, exponent: float) -> Tensor:
    a = as_tensor(a)

    def rule(g):
        return (g * exponent * a.data ** (exponent - 1.0),)

    return _result(a.data ** exponent, (a,), 'pow', rule)


def exp(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)

    def rule(g):
        return (g * y,)

    return _result(y, (a,), 'exp', rule)


def log(a: TensorLike) -> Tensor:
    a = as_tensor(a)

    def rule(g):
        return (g / a.data,)

    return _result(np.log(a.data), (a,), 'log', rule)


# --- Reductions and shape ops ---

def tsum(a: TensorLike, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def rule(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), 'sum', rule)


def mean(a: TensorLike, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a: TensorLike, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)

    def rule(g):
        return (g.reshape(a.shape),)

    return _result(a.data.reshape(shape), (a,), 'reshape', rule)


def transpose(a: TensorLike, axes: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def rule(g):
        return (np.ascontiguousarray(g.transpose(inverse)),)

    return _result(np.ascontiguousarray(a.data.transpose(axes)), (a,), 'transpose', rule)


def swap_last(a: TensorLike) -> Tensor:
    """Transposes the last two axes."""
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes[-2], axes[-1] = axes[-1], axes[-2]
    return transpose(a, axes)


def getitem(a: TensorLike, index) -> Tensor:
    a = as_tensor(a)

    def rule(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _result(np.array(a.data[index]), (a,), 'getitem', rule)


def concat(tensors: Iterable[TensorLike], axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def rule(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, 'concat', rule)


def expand(a: TensorLike, leading: Sequence[int]) -> Tensor:
    """Repeats a tensor along new leading batch dimensions."""
    a = as_tensor(a)
    shape = tuple(leading) + a.shape

    def rule(g):
        return (_reduce_to(g, a.shape),)

    return _result(np.broadcast_to(a.data, shape).copy(), (a,), 'expand', rule)


# --- Linear algebra ---

def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    """
    Matrix product over the last two axes.

    `b` is either a plain matrix shared by every leading index of `a`, or it
    carries exactly the same leading batch dimensions as `a`.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        logger.error(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
        raise DimensionError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        logger.error(f"matmul batch mismatch: {a.shape} @ {b.shape}")
        raise DimensionError(f"matmul batch mismatch: {a.shape} @ {b.shape}")

    def rule(g):
        grad_a = g @ np.swapaxes(b.data, -1, -2)
        grad_b = np.swapaxes(a.data, -1, -2) @ g
        if b.ndim == 2 and grad_b.ndim > 2:
            grad_b = grad_b.reshape(-1, *b.shape).sum(axis=0)
        return grad_a, grad_b

    return _result(a.data @ b.data, (a, b), 'matmul', rule)


def linear(x: TensorLike, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    out = matmul(x, weight)
    return add(out, bias) if bias is not None else out


# --- Activations and normalizations ---

def softmax(x: TensorLike, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def rule(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (x,), 'softmax', rule)


def log_softmax(x: TensorLike, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    probs = np.exp(y)

    def rule(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return _result(y, (x,), 'log_softmax', rule)


def gelu(x: TensorLike) -> Tensor:
    """Exact GELU: x * Phi(x), with Phi the standard normal CDF."""
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))
    cdf = cdf.astype(x.dtype, copy=False)

    def rule(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return _result(x.data * cdf, (x,), 'gelu', rule)


def layer_norm(x: TensorLike, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalizes over the last axis with the population variance."""
    x = as_tensor(x)
    if gamma.shape != x.shape[-1:] or beta.shape != x.shape[-1:]:
        logger.error(f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match {x.shape}")
        raise DimensionError(f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std

    def rule(g):
        dxhat = g * gamma.data
        dx = inv_std * (dxhat
                        - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, _reduce_to(g * xhat, gamma.shape), _reduce_to(g, beta.shape)

    return _result(xhat * gamma.data + beta.data, (x, gamma, beta), 'layer_norm', rule)


def dropout(x: TensorLike, rate: float, rng: np.random.Generator) -> Tensor:
    x = as_tensor(x)
    if rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)

    def rule(g):
        return (g * keep,)

    return _result(x.data * keep, (x,), 'dropout', rule)


# --- Reverse-mode engine ---

class GradGraph:
    """
    Topologically ordered record of the operations reachable from a root.

    Built by an iterative depth-first walk over parent links, so every node's
    inputs precede it in `nodes`.
    """

    def __init__(self, root: Tensor):
        self.root = root
        self.nodes: List[Tensor] = []
        seen = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                self.nodes.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

    def __len__(self):
        return len(self.nodes)

    def release(self):
        """Drops parent links and backward rules so the graph can be freed."""
        for node in self.nodes:
            node._parents = ()
            node._backward = None


def backward(loss: Tensor):
    """
    Populates `.grad` on every reachable leaf with requires_grad set.

    Gradients accumulate by summation, so a leaf used twice receives the sum
    of both contributions. The graph is released afterwards.
    """
    if loss.size != 1:
        logger.error(f"backward called on a non-scalar tensor of shape {loss.shape}")
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        logger.error("backward called on a tensor that does not require gradients")
        raise ContractError("backward called on a tensor that does not require gradients")

    graph = GradGraph(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            # Leaf: keep the gradient.
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    graph.release()
    logger.debug(f"Backward pass completed over {len(graph)} nodes.")


def numeric_gradient(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    numeric = np.zeros_like(x.data, dtype=np.float64)
    base = x.data.astype(np.float64)
    with no_grad(), precision('float64'):
        for idx in np.ndindex(base.shape):
            shifted = base.copy()
            shifted[idx] += h
            f_plus = f(Tensor(shifted)).item()
            shifted[idx] -= 2.0 * h
            f_minus = f(Tensor(shifted)).item()
            numeric[idx] = (f_plus - f_minus) / (2.0 * h)
    return numeric


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """
    Compares backward output against central differences in 64-bit mode.

    Returns the max relative error, with denominator
    max(|analytic|, |numeric|, 1e-8) per coordinate.
    """
    with precision('float64'):
        leaf = Tensor(x.data.astype(np.float64), requires_grad=True)
        loss = f(leaf)
        backward(loss)
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
    numeric = numeric_gradient(f, leaf, h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    error = float(np.max(np.abs(analytic - numeric) / denom))
    logger.debug(f"grad_check over {x.size} coordinates: max relative error {error:.3e}")
    return error
