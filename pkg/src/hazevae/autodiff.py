"""Define-by-run reverse-mode differentiation over float64 numpy arrays.

Every operation on a :class:`Tensor` that depends on a gradient-carrying
input records a closure computing the vector-Jacobian product. Calling
:meth:`Tensor.backward` on a scalar walks the recorded graph once in reverse
topological order, accumulates into the ``grad`` of every reachable leaf and
then releases the graph; a second call on the same graph raises.

Also hosts the Adam optimizer used by the trainer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

LEAKY_SLOPE = 0.2

_Backward = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class GraphConsumedError(RuntimeError):
    """Raised when backward reaches a node whose graph was already differentiated."""


class Tensor:
    """Dense float64 array node in a computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False, *, _parents: tuple = (),
                 _backward: _Backward | None = None, _op: str = "leaf"):
        arr = np.asarray(data, dtype=np.float64)
        if any(n <= 0 for n in arr.shape):
            raise ValueError(f"tensor extents must be positive, got shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward
        self._op = _op
        self._consumed = False

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
    def is_leaf(self) -> bool:
        return self._backward is None and not self._consumed

    def item(self) -> float:
        if self.data.size != 1:
            _raise_not_scalar(self.shape)
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        """Same values, cut off from the graph."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # operator sugar; numbers become scale/shift, never broadcast arrays
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else shift(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else shift(self, -other)

    def __rsub__(self, other):
        return shift(neg(self), other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not a primitive")
        return scale(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return tsum(self)

    def mean(self):
        return mean(self)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
        if self.data.size != 1 or self.ndim > 1:
            _raise_not_scalar(self.shape)
        if self._consumed:
            raise GraphConsumedError("backward already ran on this graph; rebuild it with a new forward pass")
        if self._backward is None:
            if self.requires_grad:
                _accumulate_leaf(self, np.ones_like(self.data))
            return

        order = _topological(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if node._backward is None:
                if g is not None and node.requires_grad:
                    _accumulate_leaf(node, g)
                continue
            if g is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        for node in order:
            if node._backward is not None:
                node._consumed = True
                node._backward = None
                node._parents = ()


def _raise_not_scalar(shape):
    raise ValueError(f"expected a scalar tensor, got shape {shape}")


def _accumulate_leaf(leaf: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=np.float64).reshape(leaf.shape)
    if leaf.grad is None:
        leaf.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        leaf.grad += g


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        if node._consumed:
            raise GraphConsumedError(f"node {node!r} belongs to a graph that was already differentiated")
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward: _Backward, op: str) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, _parents=parents, _backward=backward, _op=op)
    return Tensor(data, _op=op)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# primitives


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("add", a, b)
    return _result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("subtract", a, b)
    return _result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("multiply", a, b)
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: shape mismatch {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        return (g @ bd.T if a.requires_grad else None,
                ad.T @ g if b.requires_grad else None)

    return _result(ad @ bd, (a, b), backward, "matmul")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def scale(a, c: float) -> Tensor:
    """Multiply by a constant scalar."""
    a = as_tensor(a)
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,), "scale")


def shift(a, c: float) -> Tensor:
    """Add a constant scalar."""
    a = as_tensor(a)
    c = float(c)
    return _result(a.data + c, (a,), lambda g: (g,), "shift")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):  # NaN passes through and is caught by the loss finiteness checks
        raise ValueError(f"log: non-positive input (min {np.min(a.data)!r})")
    ad = a.data
    return _result(np.log(ad), (a,), lambda g: (g / ad,), "log")


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _result(ad * ad, (a,), lambda g: (2.0 * g * ad,), "square")


def tsum(a) -> Tensor:
    """Sum of every element, as a 0-d tensor."""
    a = as_tensor(a)
    shape = a.shape
    return _result(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape),), "sum")


def mean(a) -> Tensor:
    a = as_tensor(a)
    shape, n = a.shape, a.size
    return _result(np.asarray(a.data.mean()), (a,), lambda g: (np.broadcast_to(g / n, shape),), "mean")


def leaky_relu(a, slope: float = LEAKY_SLOPE) -> Tensor:
    a = as_tensor(a)
    factor = np.where(a.data > 0, 1.0, slope)
    return _result(a.data * factor, (a,), lambda g: (g * factor,), "leaky_relu")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes only where the input is strictly inside."""
    a = as_tensor(a)
    inside = (a.data > lo) & (a.data < hi)
    return _result(np.clip(a.data, lo, hi), (a,), lambda g: (np.where(inside, g, 0.0),), "clip")


def add_row(x, b) -> Tensor:
    """Add vector ``b`` (length n) to every row of ``x`` (m x n)."""
    x, b = as_tensor(x), as_tensor(b)
    if x.ndim != 2 or b.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ValueError(f"broadcast-add: shape mismatch {x.shape} vs {b.shape}")
    return _result(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)), "add_row")


def pairwise_sqdist(x, y) -> Tensor:
    """``out[i, j] = ||x_i - y_j||^2`` for row sets x (m x L) and y (n x L)."""
    x, y = as_tensor(x), as_tensor(y)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ValueError(f"pairwise-squared-distance: shape mismatch {x.shape} vs {y.shape}")
    diff = x.data[:, None, :] - y.data[None, :, :]
    out = np.einsum("ijk,ijk->ij", diff, diff)

    def backward(g):
        gd = 2.0 * g[:, :, None] * diff
        return gd.sum(axis=1), -gd.sum(axis=0)

    return _result(out, (x, y), backward, "pairwise_sqdist")


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    parts = tuple(as_tensor(p) for p in parts)
    if not parts:
        raise ValueError("concat_rows: nothing to concatenate")
    width = parts[0].shape[1:]
    for p in parts:
        if p.ndim != 2 or p.shape[1:] != width:
            raise ValueError(f"concat_rows: shape mismatch {parts[0].shape} vs {p.shape}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def backward(g):
        return tuple(g[bounds[k]:bounds[k + 1]] for k in range(len(parts)))

    return _result(np.concatenate([p.data for p in parts], axis=0), parts, backward, "concat_rows")


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError:
        raise ValueError(f"reshape: cannot view {old} as {tuple(shape)}") from None
    return _result(out, (a,), lambda g: (g.reshape(old),), "reshape")


# ---------------------------------------------------------------------------
# gradient helpers


def grad(loss: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of scalar ``loss`` w.r.t. each tensor in ``wrt``.

    Clears ``wrt`` grads first; tensors the loss does not reach get zeros.
    """
    for p in wrt:
        p.grad = None
    loss.backward()
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in wrt]


# ---------------------------------------------------------------------------
# Adam


class NonFiniteGradientError(ValueError):
    pass


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError(f"Adam eps must be positive, got {self.eps}")
        if self.t < 0:
            raise ValueError(f"Adam step counter must be >= 0, got {self.t}")
        if len(self.m) != len(self.v):
            raise ValueError("Adam moment lists differ in length")
        for a, b in zip(self.m, self.v):
            if a.shape != b.shape:
                raise ValueError(f"Adam moment shapes differ: {a.shape} vs {b.shape}")

    @classmethod
    def for_params(cls, params: Iterable[Tensor], **hyper) -> "AdamState":
        params = list(params)
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params], **hyper)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState) -> None:
    """Apply one bias-corrected Adam update in place.

    Raises :class:`NonFiniteGradientError` before touching anything if any
    gradient entry is NaN or infinite.
    """
    if not (len(params) == len(grads) == len(state.m)):
        raise ValueError(f"Adam: {len(params)} params, {len(grads)} grads, {len(state.m)} moment slots")
    for k, (p, g, m) in enumerate(zip(params, grads, state.m)):
        if p.shape != np.shape(g) or p.shape != m.shape:
            raise ValueError(f"Adam: slot {k} shape mismatch {p.shape} vs {np.shape(g)}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"Adam: non-finite gradient in slot {k} (shape {p.shape})")

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    step = state.lr / (1.0 - b1 ** state.t)
    inv_bc2 = 1.0 / (1.0 - b2 ** state.t)
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.ascontiguousarray(g, dtype=np.float64)
        if _fused_adam is not None and p.data.flags.c_contiguous and p.data.flags.writeable:
            _fused_adam(p.data.reshape(-1), g.reshape(-1), m.reshape(-1), v.reshape(-1),
                        b1, b2, step, inv_bc2, state.eps)
        else:
            _numpy_adam(p.data, g, m, v, b1, b2, step, inv_bc2, state.eps)


def _numpy_adam(p, g, m, v, b1, b2, step, inv_bc2, eps):
    tmp = np.multiply(g, 1.0 - b1)
    m *= b1
    m += tmp
    np.multiply(g, g, out=tmp)
    tmp *= 1.0 - b2
    v *= b2
    v += tmp
    # p -= (m / (sqrt(v / bc2) + eps)) * step
    np.multiply(v, inv_bc2, out=tmp)
    np.sqrt(tmp, out=tmp)
    tmp += eps
    np.divide(m, tmp, out=tmp)
    tmp *= step
    p -= tmp


try:  # same arithmetic in one pass; the numpy path above is the fallback
    import numba

    @numba.njit(cache=True)
    def _fused_adam(p, g, m, v, b1, b2, step, inv_bc2, eps):
        c1 = 1.0 - b1
        c2 = 1.0 - b2
        for k in range(p.size):
            gk = g[k]
            mk = m[k] * b1 + gk * c1
            vk = v[k] * b2 + (gk * gk) * c2
            m[k] = mk
            v[k] = vk
            p[k] -= (mk / (np.sqrt(vk * inv_bc2) + eps)) * step
except ImportError:  # pragma: no cover
    _fused_adam = None


def numeric_grad(f: Callable[[], float], x: np.ndarray, index, h: float = 1e-5) -> float:
    """Central difference of ``f`` w.r.t. ``x[index]`` (``x`` is perturbed in place then restored)."""
    orig = x[index]
    x[index] = orig + h
    fp = f()
    x[index] = orig - h
    fm = f()
    x[index] = orig
    return (fp - fm) / (2.0 * h)


def relative_error(a: float, b: float, floor: float = 1e-4) -> float:
    """``|a - b| / max(|a|, |b|, floor)``; the floor keeps near-zero gradients from dividing by ~0."""
    return abs(a - b) / max(abs(a), abs(b), floor)


__all__ = [
    "AdamState", "GraphConsumedError", "LEAKY_SLOPE", "NonFiniteGradientError", "Tensor",
    "adam_step", "add", "add_row", "as_tensor", "clip", "concat_rows", "exp", "grad",
    "leaky_relu", "log", "matmul", "mean", "mul", "neg", "numeric_grad", "pairwise_sqdist",
    "relative_error", "reshape", "scale", "shift", "sigmoid", "square", "sub", "tanh", "tsum",
]
