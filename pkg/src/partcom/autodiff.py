"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every op records its parents and a closure that pushes the output gradient
back to them. ``Tensor.backward`` walks the graph in reverse topological
order. Data lives in numpy arrays; leading axes broadcast like numpy.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

NORM_EPSILON = 1e-12


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf reached an op that rejects it."""


class DegenerateVectorError(ValueError):
    """A vector norm fell below ``NORM_EPSILON``."""


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents: Sequence["Tensor"] = ()):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = tuple(_parents)
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return detach(self)

    # -- operator sugar ---------------------------------------------------
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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    # -- reverse pass -----------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable node."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar root, got shape {self.shape}")
        order = _topological_order(self)
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    # gradient buffers are never mutated in place, so they may be shared
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def _make(data: np.ndarray, parents: Iterable[Tensor], backward) -> Tensor:
    parents = tuple(parents)
    needs = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, _parents=parents if needs else ())
    if needs:
        out._backward = backward
    return out


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def gradients(root: Tensor, leaves: Sequence[Tensor]) -> list[np.ndarray]:
    """Backpropagate from ``root``; unreachable leaves get zero gradients."""
    for leaf in leaves:
        leaf.grad = None
    root.backward()
    return [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data / b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    def backward(g):
        _accumulate(a, g * c)

    return _make(a.data * c, (a,), backward)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)

    def backward(g):
        _accumulate(a, g * (out > 0))

    return _make(out, (a,), backward)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def backward(g):
        _accumulate(a, g * out)

    return _make(out, (a,), backward)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NonFiniteError("log of a non-positive value")

    def backward(g):
        _accumulate(a, g / a.data)

    return _make(np.log(a.data), (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def backward(g):
        _accumulate(a, g * 0.5 / out)

    return _make(out, (a,), backward)


def detach(a: Tensor) -> Tensor:
    """Stop-gradient: same values, no path back to ``a``."""
    return Tensor(a.data.copy(), requires_grad=False)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    def backward(g):
        _accumulate(a, g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), backward)


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    def backward(g):
        _accumulate(a, np.swapaxes(g, -1, -2))

    return _make(np.swapaxes(a.data, -1, -2), (a,), backward)


def getitem(a: Tensor, index) -> Tensor:
    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        _accumulate(a, full)

    return _make(a.data[index], (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accumulate(t, piece)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _expand(g: np.ndarray, shape, axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def backward(g):
        _accumulate(a, _expand(g, a.shape, axis, keepdims))

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])

    def backward(g):
        _accumulate(a, _expand(g, a.shape, axis, keepdims) / n)

    return _make(np.mean(a.data, axis=axis, keepdims=keepdims), (a,), backward)


def tmax(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Max along one axis; the gradient goes to the first maximal entry."""
    idx = np.argmax(a.data, axis=axis)
    idx_k = np.expand_dims(idx, axis)
    out = np.take_along_axis(a.data, idx_k, axis=axis)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx_k, g, axis=axis)
        _accumulate(a, full)

    return _make(out if keepdims else np.squeeze(out, axis=axis), (a,), backward)


def logsumexp(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    m = np.max(a.data, axis=axis, keepdims=True)
    shifted = np.exp(a.data - m)
    s = shifted.sum(axis=axis, keepdims=True)
    out = np.log(s) + m

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, g * shifted / s)

    return _make(out if keepdims else np.squeeze(out, axis=axis), (a,), backward)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            if b.ndim == 2:
                k, n = b.shape
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
            _accumulate(b, gb)

    return _make(a.data @ b.data, (a, b), backward)


def affine(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` over the last axis."""
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


# ---------------------------------------------------------------------------
# normalisation / similarity
# ---------------------------------------------------------------------------

def _check_finite(a: Tensor, op: str) -> None:
    if not np.all(np.isfinite(a.data)):
        raise NonFiniteError(f"{op}: non-finite input")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    _check_finite(a, "softmax")
    e = np.exp(a.data - a.data.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        _accumulate(a, out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _make(out, (a,), backward)


def softmax_columns(a: Tensor) -> Tensor:
    """Softmax down each column of a (..., r, c) tensor."""
    return softmax(a, axis=-2)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    _check_finite(a, "log_softmax")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def backward(g):
        _accumulate(a, g - p * g.sum(axis=axis, keepdims=True))

    return _make(out, (a,), backward)


def squared_norm(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    return tsum(mul(a, a), axis=axis, keepdims=keepdims)


def squared_distance(a: Tensor, b: Tensor) -> Tensor:
    """Squared L2 distance along the last axis (broadcasting)."""
    return squared_norm(sub(a, b), axis=-1)


def l2_normalize(a: Tensor, axis: int = -1, eps: float | None = None) -> Tensor:
    """Unit-normalise along ``axis``.

    With ``eps=None`` a norm below ``NORM_EPSILON`` raises; otherwise the
    smooth norm sqrt(|a|^2 + eps^2) is used so zero rows stay finite.
    """
    sq = (a.data ** 2).sum(axis=axis, keepdims=True)
    if eps is None:
        norm = np.sqrt(sq)
        if np.any(norm <= NORM_EPSILON):
            raise DegenerateVectorError("cannot normalise a (near) zero vector")
    else:
        norm = np.sqrt(sq + eps * eps)
    out = a.data / norm

    def backward(g):
        _accumulate(a, (g - a.data * (g * a.data).sum(axis=axis, keepdims=True) / (norm * norm)) / norm)

    return _make(out, (a,), backward)


def cosine_matrix(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise cosine similarities between rows: (..., n, d) x (m, d) -> (..., n, m)."""
    return matmul(l2_normalize(a), transpose(l2_normalize(b)))


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity of two 1xd (or d) vectors, returned as a scalar tensor."""
    a, b = _wrap(a), _wrap(b)
    if a.size != b.size:
        raise ShapeError(f"cosine_similarity shape mismatch: {a.shape} vs {b.shape}")
    a2 = reshape(a, (1, a.size))
    b2 = reshape(b, (1, b.size))
    return reshape(cosine_matrix(a2, b2), ())


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

def numerical_gradient(fn: Callable[[], Tensor], param: Tensor, h: float = 1e-5,
                       indices: np.ndarray | None = None) -> np.ndarray:
    """Central finite differences of the scalar ``fn()`` wrt ``param.data``.

    With ``indices`` (flat positions) only those entries are probed; the rest stay 0.
    """
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in (range(flat.size) if indices is None else indices):
        orig = flat[i]
        flat[i] = orig + h
        plus = fn().item()
        flat[i] = orig - h
        minus = fn().item()
        flat[i] = orig
        gflat[i] = (plus - minus) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error, guarded for all-zero gradients."""
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / denom)


def check_gradients(fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5) -> list[float]:
    """Relative error between backprop and finite differences for each param."""
    analytic = gradients(fn(), params)
    return [relative_error(g, numerical_gradient(fn, p, h)) for g, p in zip(analytic, params)]
