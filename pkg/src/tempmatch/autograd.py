"""Small reverse-mode automatic differentiation engine on top of numpy.

Every :class:`Tensor` wraps a float64 ``ndarray``. Operations record their
parents and a backward rule; :meth:`Tensor.backward` walks the recorded tape
in reverse topological order and accumulates gradients by summation.

The graph is rebuilt on every forward pass, so a training step is simply::

    loss = model(batch)
    loss.backward()
    optimizer.step()
    optimizer.zero_grad()

Forward values are read-only arrays. Any op that would produce NaN or Inf
raises :class:`~tempmatch.errors.NumericalError` instead.
"""

import contextlib
import itertools
import math
import threading

import numpy as np

from .errors import DimensionError, DomainError, NumericalError, OutOfRangeError

_node_ids = itertools.count()
_state = threading.local()


def _grad_enabled():
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording the graph (per thread)."""
    previous = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


def _check_finite(arr, op):
    if not np.isfinite(arr).all():
        raise NumericalError(f"{op} produced non-finite values")


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A node in the computation graph.

    Parameters
    ----------
    data : array_like
        Values; always copied to a fresh float64 array.
    requires_grad : bool
        Whether gradients should be accumulated into ``.grad``.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False):
        arr = np.array(data, dtype=np.float64)
        _check_finite(arr, "tensor construction")
        arr.flags.writeable = False
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_node_ids)
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    @classmethod
    def _from_op(cls, arr, parents, backward, op):
        _check_finite(arr, op)
        out = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        if arr.flags.writeable:
            arr.flags.writeable = False
        out.data = arr
        out.grad = None
        out.node_id = next(_node_ids)
        out._op = op
        out.requires_grad = _grad_enabled() and any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # -- array-like conveniences -------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise DimensionError("item() needs a single-element tensor")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self._op})"

    def zero_grad(self):
        self.grad = None

    # -- autodiff -----------------------------------------------------------
    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every reachable ``.grad``."""
        if grad is None:
            if self.data.size != 1:
                raise DimensionError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        grad = np.broadcast_to(np.asarray(grad, dtype=np.float64), self.shape)
        if not self.requires_grad:
            return
        pending = {self.node_id: grad.copy()}
        for node in reversed(topological_order(self)):
            g = pending.pop(node.node_id, None)
            if g is None:
                continue
            _check_finite(g, f"backward of {node._op}")
            node.grad = g.copy() if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.node_id in pending:
                    pending[parent.node_id] = pending[parent.node_id] + pg
                else:
                    pending[parent.node_id] = pg

    # -- operators ------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self)


def topological_order(root):
    """Nodes reachable from ``root``, parents before children.

    Iterative DFS, so deep graphs do not hit the recursion limit. Each node
    appears exactly once.
    """
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in seen:
            continue
        seen.add(node.node_id)
        stack.append((node, True))
        for p in node._parents:
            if p.node_id not in seen:
                stack.append((p, False))
    return order


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data):
    return Tensor(data, requires_grad=True)


# -- elementwise ----------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._from_op(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._from_op(a.data * b.data, (a, b), backward, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    if np.any(b.data == 0):
        raise DomainError("division by zero")
    out = a.data / b.data

    def backward(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))

    return Tensor._from_op(out, (a, b), backward, "div")


def div_scalar(a, s):
    s = float(s)
    if s == 0.0:
        raise DomainError("division by zero")
    return mul(a, 1.0 / s)


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from exc


def exp(a):
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log of non-positive input")
    return Tensor._from_op(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return Tensor._from_op(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def clamp(a, lo=None, hi=None):
    """Clip ``a`` to [lo, hi]; gradient passes only strictly inside the range."""
    a = as_tensor(a)
    mask = np.ones(a.shape, dtype=bool)
    out = a.data
    if lo is not None:
        mask &= a.data > lo
        out = np.maximum(out, lo)
    if hi is not None:
        mask &= a.data < hi
        out = np.minimum(out, hi)
    return Tensor._from_op(out, (a,), lambda g: (g * mask,), "clamp")


def clamp_min(a, lo):
    """max(a, lo) elementwise; gradient passes only where a > lo."""
    return clamp(a, lo=lo)


def _stable_sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    a = as_tensor(a)
    out = _stable_sigmoid(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


# -- reductions and shape ops -----------------------------------------------------

def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._from_op(np.asarray(out), (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = math.prod(a.shape[ax] for ax in axes)
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {a.shape} to {shape}") from exc
    return Tensor._from_op(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Tensor._from_op(np.transpose(a.data, axes), (a,),
                           lambda g: (np.transpose(g, inverse),), "transpose")


def swap_last(a):
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def getitem(a, index):
    a = as_tensor(a)

    def backward(g):
        full = np.zeros(a.shape)
        np.add.at(full, index, g)
        return (full,)

    return Tensor._from_op(a.data[index], (a,), backward, "getitem")


def detach(a):
    """Pass values forward; block every gradient."""
    a = as_tensor(a)
    out = Tensor.__new__(Tensor)
    out.data = a.data
    out.grad = None
    out.requires_grad = False
    out.node_id = next(_node_ids)
    out._parents = ()
    out._backward = None
    out._op = "detach"
    return out


# -- linear algebra -------------------------------------------------------------

def matmul(a, b):
    """Matrix product with numpy batch broadcasting on leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul needs operands with at least 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(f"matmul: batch dimensions differ, {a.shape} @ {b.shape}") from exc

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._from_op(out, (a, b), backward, "matmul")


# -- normalisation and probability -------------------------------------------------

def softmax(z, beta=1.0, axis=-1):
    """exp(z/beta) / sum(exp(z/beta)) along ``axis``.

    ``beta`` may be a positive float or a tensor broadcastable against ``z``
    (with ``axis`` kept as a singleton). Differentiable in both arguments.
    """
    z = as_tensor(z)
    if z.ndim == 0 or z.shape[axis] < 1:
        raise DimensionError("softmax needs at least one element")
    beta = as_tensor(beta)
    if np.any(beta.data <= 0):
        raise DomainError("softmax temperature must be positive")
    shifted = z.data - z.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted / beta.data)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        gs = out * (g - (g * out).sum(axis=axis, keepdims=True))
        gz = _unbroadcast(gs / beta.data, z.shape)
        gb = _unbroadcast(-gs * shifted / beta.data ** 2, beta.shape)
        return gz, gb

    return Tensor._from_op(out, (z, beta), backward, "softmax")


def log_softmax(z, axis=-1):
    z = as_tensor(z)
    shifted = z.data - z.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return Tensor._from_op(out, (z,), backward, "log_softmax")


def l2_normalize(f, axis=-1, eps=1e-8):
    """f / max(||f||, eps) along ``axis``."""
    f = as_tensor(f)
    norm = np.sqrt((f.data ** 2).sum(axis=axis, keepdims=True))
    denom = np.maximum(norm, eps)
    out = f.data / denom
    active = norm > eps

    def backward(g):
        radial = (g * out).sum(axis=axis, keepdims=True)
        return (np.where(active, g - out * radial, g) / denom,)

    return Tensor._from_op(out, (f,), backward, "l2_normalize")


def global_average_pool(x):
    """Mean over the trailing two (spatial) axes: (..., C, h, w) -> (..., C)."""
    x = as_tensor(x)
    if x.ndim < 3:
        raise DimensionError("global_average_pool expects (..., C, h, w)")
    return mean(x, axis=(-2, -1))


# -- interpolation ----------------------------------------------------------------

def bilinear_corners(h, w, point):
    """Four (row, col, weight) neighbours of a continuous ``point`` on an h x w lattice."""
    row, col = float(point[0]), float(point[1])
    if not (0.0 <= row <= h - 1 and 0.0 <= col <= w - 1):
        raise OutOfRangeError(f"point {point} outside grid of shape {(h, w)}")
    r0 = min(int(math.floor(row)), max(h - 2, 0))
    c0 = min(int(math.floor(col)), max(w - 2, 0))
    t, u = row - r0, col - c0
    r1, c1 = min(r0 + 1, h - 1), min(c0 + 1, w - 1)
    return (
        (r0, c0, (1 - t) * (1 - u)),
        (r0, c1, (1 - t) * u),
        (r1, c0, t * (1 - u)),
        (r1, c1, t * u),
    )


def bilinear_sample(grid, point):
    """Sample ``grid`` of shape (h, w) or (h, w, D) at continuous (row, col)."""
    grid = as_tensor(grid)
    if grid.ndim not in (2, 3):
        raise DimensionError("bilinear_sample expects an (h, w) or (h, w, D) grid")
    h, w = grid.shape[:2]
    corners = bilinear_corners(h, w, point)
    out = np.zeros(grid.shape[2:])
    for r, c, wt in corners:
        if wt:
            out = out + wt * grid.data[r, c]

    def backward(g):
        full = np.zeros(grid.shape)
        for r, c, wt in corners:
            full[r, c] += wt * g
        return (full,)

    return Tensor._from_op(out, (grid,), backward, "bilinear_sample")
