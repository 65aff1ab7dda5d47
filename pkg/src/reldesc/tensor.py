"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every op records its parents and a closure mapping the upstream gradient
to one gradient per parent. ``Tensor.backward`` walks the recorded graph
in reverse topological order, visiting each node once. Leaf tensors with
``requires_grad`` accumulate into ``.grad``; intermediate gradients are
dropped after use.
"""

from contextlib import contextmanager

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError

COSINE_EPS = 1e-12
_MASK_FILL = -1e30

_grad_enabled = True


@contextmanager
def no_grad():
    """Run forward passes without recording a graph (evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled():
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # graph traversal -----------------------------------------------------

    def backward(self, grad=None):
        if self.data.size != 1 and grad is None:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        if grad is None:
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # operator sugar ------------------------------------------------------

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
        if isinstance(other, Tensor):
            raise NotImplementedError("division by a tensor is not needed by the model")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def _topological_order(root):
    order = []
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
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name=None):
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def _result(data, parents, backward):
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return _result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return _result(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def log(x):
    return _result(np.log(x.data), (x,), lambda g: (g / x.data,))


def exp(x):
    y = np.exp(x.data)
    return _result(y, (x,), lambda g: (g * y,))


def relu(x):
    # subgradient 0 at exactly 0
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def gelu(x):
    return _result(kernels.gelu(x.data), (x,), lambda g: (kernels.gelu_backward(x.data, g),))


# ---------------------------------------------------------------------------
# reductions


def tsum(x, axis=None, keepdims=False):
    y = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(y, (x,), backward)


def mean(x, axis=None, keepdims=False):
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis, keepdims), 1.0 / float(n))


def logsumexp(x, axis=-1, keepdims=False):
    if x.shape[axis] == 0:
        raise DimensionError(f"logsumexp over an empty axis of shape {x.shape}")
    moved = np.moveaxis(x.data, axis, -1)
    flat = moved.reshape(-1, moved.shape[-1])
    lse = kernels.logsumexp_rows(flat).reshape(moved.shape[:-1])
    lse_k = np.expand_dims(lse, axis)
    y = lse_k if keepdims else lse

    def backward(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        return (gk * np.exp(x.data - lse_k),)

    return _result(y, (x,), backward)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(x, shape):
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None):
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return _result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def swapaxes(x, a1, a2):
    axes = list(range(x.ndim))
    axes[a1], axes[a2] = axes[a2], axes[a1]
    return transpose(x, tuple(axes))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        y = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"concat along axis {axis}: incompatible shapes {shapes}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(y, tensors, backward)


def index(x, key):
    """Basic or advanced indexing (slice-row, position gather)."""
    y = x.data[key]

    def backward(g):
        out = np.zeros_like(x.data)
        np.add.at(out, key, g)
        return (out,)

    return _result(np.array(y, dtype=np.float64), (x,), backward)


def embedding(weight, ids):
    """Gather rows of a [vocab x d] table; result shape is ids.shape + (d,)."""
    ids = np.asarray(ids, dtype=np.int64)
    if weight.ndim != 2:
        raise DimensionError(f"embedding table must be 2-D, got {weight.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise DimensionError(f"embedding ids out of range for table {weight.shape}")
    y = weight.data[ids]

    def backward(g):
        flat = g.reshape(-1, weight.shape[1])
        return (kernels.scatter_add_rows(weight.shape[0], ids.reshape(-1), flat),)

    return _result(y, (weight,), backward)


# ---------------------------------------------------------------------------
# linear algebra and normalisation


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    try:
        y = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul batch extents differ: {a.shape} x {b.shape}") from None

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (
            None if ga is None else _unbroadcast(ga, a.shape),
            None if gb is None else _unbroadcast(gb, b.shape),
        )

    return _result(y, (a, b), backward)


def layer_norm(x, gamma, beta, eps=1e-5):
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm affine params {gamma.shape}/{beta.shape} vs width {d}")
    flat = x.data.reshape(-1, d)
    y, xhat, rstd = kernels.layernorm_rows(flat, gamma.data, beta.data, eps)

    def backward(g):
        dx, dg, db = kernels.layernorm_rows_backward(g.reshape(-1, d), xhat, rstd, gamma.data)
        return dx.reshape(x.shape), dg, db

    return _result(y.reshape(x.shape), (x, gamma, beta), backward)


def softmax(x, axis=-1):
    if x.ndim == 0 or x.shape[axis] == 0:
        raise DimensionError(f"softmax over an empty axis of shape {x.shape}")
    moved = np.moveaxis(x.data, axis, -1)
    shp = moved.shape
    y_m = kernels.softmax_rows(moved.reshape(-1, shp[-1]))
    y = np.moveaxis(y_m.reshape(shp), -1, axis)

    def backward(g):
        gm = np.moveaxis(g, axis, -1).reshape(-1, shp[-1])
        dx = kernels.softmax_rows_backward(y_m, gm)
        return (np.moveaxis(dx.reshape(shp), -1, axis),)

    return _result(y, (x,), backward)


def log_softmax(x, axis=-1):
    return sub(x, logsumexp(x, axis=axis, keepdims=True))


def cosine(u, v, axis=-1, eps=COSINE_EPS):
    """Cosine similarity along ``axis`` as a dot product of unit vectors.

    Operands broadcast. Where either norm is below ``eps`` the result is 0
    and no gradient flows.
    """
    u, v = as_tensor(u), as_tensor(v)
    _check_broadcast(u, v, "cosine")
    if u.shape[axis] < 1:
        raise DimensionError("cosine over an empty axis")
    nu = np.sqrt((u.data * u.data).sum(axis=axis, keepdims=True))
    nv = np.sqrt((v.data * v.data).sum(axis=axis, keepdims=True))
    ok = (nu >= eps) & (nv >= eps)
    su = np.where(nu >= eps, nu, 1.0)
    sv = np.where(nv >= eps, nv, 1.0)
    uh = u.data / su
    vh = v.data / sv
    c = np.where(ok, (uh * vh).sum(axis=axis, keepdims=True), 0.0)
    y = np.squeeze(c, axis=axis)

    def backward(g):
        gk = np.expand_dims(g, axis) * ok
        gu = gk * (vh - c * uh) / su
        gv = gk * (uh - c * vh) / sv
        return _unbroadcast(gu, u.shape), _unbroadcast(gv, v.shape)

    return _result(y, (u, v), backward)


def scaled_dot_product_attention(q, k, v, key_mask=None, return_weights=False):
    """Attention over the last two axes: q [..., Lq, dk], k [..., Lk, dk], v [..., Lk, dv].

    ``key_mask`` is a boolean array broadcastable to [..., Lq, Lk]; False
    entries get exactly zero weight.
    """
    dk = q.shape[-1]
    scores = matmul(q, swapaxes(k, -1, -2)) * (1.0 / np.sqrt(dk))
    if key_mask is not None:
        bias = np.where(key_mask, 0.0, _MASK_FILL)
        scores = add(scores, Tensor(bias))
    weights = softmax(scores, axis=-1)
    out = matmul(weights, v)
    if return_weights:
        return out, weights
    return out
