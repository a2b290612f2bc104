"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every primitive records its inputs and an adjoint closure on the output
tensor. ``backward`` sorts the recorded graph topologically (the tape) and
replays adjoints in reverse. Broadcasting is deliberately narrow: equal
shapes, a single-element operand, or a row vector against a matrix.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable tape recording in the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64, order="C", copy=True)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._op = "leaf"
        self._consumed = False

    @classmethod
    def _result(cls, data: np.ndarray, parents: Sequence["Tensor"], backward, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out._consumed = False
        out._op = op
        if grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

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

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data) if self.requires_grad else None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self._op}{rg})"

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
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# tape and backward

@dataclass
class Tape:
    """Topologically ordered operations reachable from a loss."""

    nodes: list[Tensor] = field(default_factory=list)

    @classmethod
    def from_loss(cls, loss: Tensor) -> "Tape":
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(loss, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        return cls(order)

    def ops(self) -> list[str]:
        return [n._op for n in self.nodes]


def backward(loss: Tensor) -> None:
    if loss.data.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss is detached from every differentiable input")
    if loss._consumed:
        raise RuntimeError("backward already ran on this loss; recompute the forward pass")
    tape = Tape.from_loss(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        node.grad = g
        for p, gp in zip(node._parents, node._backward(g)):
            if gp is None or not p.requires_grad:
                continue
            key = id(p)
            prev = grads.get(key)
            grads[key] = gp if prev is None else prev + gp
    loss._consumed = True


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------------------
# broadcasting helpers

def _check_broadcast(sa: tuple, sb: tuple, op: str) -> None:
    if sa == sb:
        return
    if int(np.prod(sa)) == 1 or int(np.prod(sb)) == 1:
        return
    for small, big in ((sa, sb), (sb, sa)):
        if len(big) == 2 and (small == (big[1],) or small == (1, big[1])):
            return
    raise DimensionError(f"{op}: cannot broadcast shapes {sa} and {sb}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if int(np.prod(shape)) == 1:
        return np.full(shape, g.sum())
    return g.sum(axis=0).reshape(shape)


# ---------------------------------------------------------------------------
# primitives

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def _bw(g):
        a2 = ad.reshape(1, -1) if ad.ndim == 1 else ad
        b2 = bd.reshape(-1, 1) if bd.ndim == 1 else bd
        g2 = g.reshape(a2.shape[0], b2.shape[1])
        ga = (g2 @ b2.T).reshape(ad.shape) if a.requires_grad else None
        gb = (a2.T @ g2).reshape(bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._result(ad @ bd, (a, b), _bw, "matmul")


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product of (B, m, k) and (B, k, n)."""
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise DimensionError(f"bmm: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def _bw(g):
        ga = np.matmul(g, bd.transpose(0, 2, 1)) if a.requires_grad else None
        gb = np.matmul(ad.transpose(0, 2, 1), g) if b.requires_grad else None
        return ga, gb

    return Tensor._result(np.matmul(ad, bd), (a, b), _bw, "bmm")


def swap_last(a: Tensor) -> Tensor:
    """Transpose the last two axes of a 3-D tensor."""
    if a.ndim != 3:
        raise DimensionError(f"swap_last needs a 3-D tensor, got shape {a.shape}")
    return Tensor._result(np.ascontiguousarray(a.data.transpose(0, 2, 1)), (a,),
                          lambda g: (g.transpose(0, 2, 1),), "swap_last")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"transpose needs a matrix, got shape {a.shape}")
    return Tensor._result(np.ascontiguousarray(a.data.T), (a,), lambda g: (g.T,), "transpose")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape
    return Tensor._result(a.data + b.data, (a, b),
                          lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "sub")
    sa, sb = a.shape, b.shape
    return Tensor._result(a.data - b.data, (a, b),
                          lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "mul")
    ad, bd = a.data, b.data

    def _bw(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._result(ad * bd, (a, b), _bw, "mul")


def neg(a: Tensor) -> Tensor:
    return Tensor._result(-a.data, (a,), lambda g: (-g,), "neg")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return Tensor._result(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return Tensor._result(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,), "relu")


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return Tensor._result(y, (a,), lambda g: (g * y,), "exp")


def log(a: Tensor) -> Tensor:
    x = a.data
    return Tensor._result(np.log(x), (a,), lambda g: (g / x,), "log")


def square(a: Tensor) -> Tensor:
    x = a.data
    return Tensor._result(x * x, (a,), lambda g: (2.0 * g * x,), "square")


_UNARY = {"sigmoid": sigmoid, "relu": relu, "exp": exp, "log": log, "neg": neg, "square": square}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(a, kind: str, b=None) -> Tensor:
    """Dispatch an entrywise primitive by name."""
    if kind in _UNARY:
        if b is not None:
            raise TypeError(f"{kind} takes one operand")
        return _UNARY[kind](as_tensor(a))
    if kind in _BINARY:
        if b is None:
            raise TypeError(f"{kind} takes two operands")
        return _BINARY[kind](a, b)
    raise ValueError(f"unknown elementwise kind {kind!r}")


def softmax_rows(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis, max-shifted. ``mask`` (bool, same shape) excludes entries.

    Excluded entries come out exactly 0; a row with every entry excluded is all zeros.
    """
    x = a.data
    if x.ndim < 1 or x.shape[-1] == 0:
        raise DimensionError(f"softmax_rows needs a non-empty row dimension, got shape {x.shape}")
    if mask is None:
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=-1, keepdims=True)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise DimensionError(f"softmax_rows: mask shape {mask.shape} != input shape {x.shape}")
        mx = np.where(mask, x, -np.inf).max(axis=-1, keepdims=True)
        mx = np.where(np.isfinite(mx), mx, 0.0)
        e = np.exp(np.where(mask, x - mx, -np.inf))
        s = e.sum(axis=-1, keepdims=True)
        y = e / np.where(s > 0, s, 1.0)

    def _bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return Tensor._result(y, (a,), _bw, "softmax_rows")


def logsumexp_rows(a: Tensor) -> Tensor:
    x = a.data
    if x.ndim != 2 or x.shape[1] == 0:
        raise DimensionError(f"logsumexp_rows needs a non-empty matrix, got shape {x.shape}")
    mx = x.max(axis=1, keepdims=True)
    e = np.exp(x - mx)
    s = e.sum(axis=1, keepdims=True)
    y = (np.log(s) + mx)[:, 0]
    p = e / s
    return Tensor._result(y, (a,), lambda g: (g[:, None] * p,), "logsumexp_rows")


def reduce(a: Tensor, kind: str) -> Tensor:
    """``mean_rows`` / ``sum_rows`` collapse dim 0; ``sum_all`` gives a scalar."""
    x = a.data
    if x.size == 0 or (kind != "sum_all" and (x.ndim != 2 or x.shape[0] == 0)):
        raise DimensionError(f"reduce({kind}): empty or non-matrix input of shape {x.shape}")
    shape = x.shape
    if kind == "sum_all":
        return Tensor._result(np.array(x.sum()), (a,), lambda g: (np.full(shape, float(g)),), "sum_all")
    if kind == "sum_rows":
        return Tensor._result(x.sum(axis=0), (a,),
                              lambda g: (np.broadcast_to(g, shape).copy(),), "sum_rows")
    if kind == "mean_rows":
        m = shape[0]
        return Tensor._result(x.sum(axis=0) / m, (a,),
                              lambda g: (np.broadcast_to(g / m, shape).copy(),), "mean_rows")
    raise ValueError(f"unknown reduce kind {kind!r}")


def sum_all(a: Tensor) -> Tensor:
    return reduce(a, "sum_all")


def concat_rows(*parts: Tensor) -> Tensor:
    if not parts:
        raise DimensionError("concat_rows needs at least one operand")
    cols = {p.shape[1] if p.ndim == 2 else None for p in parts}
    if len(cols) != 1 or None in cols:
        raise DimensionError(f"concat_rows: column mismatch among shapes {[p.shape for p in parts]}")
    sizes = [p.shape[0] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def _bw(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return Tensor._result(np.concatenate([p.data for p in parts], axis=0), parts, _bw, "concat_rows")


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    shape = a.shape

    def _bw(g):
        ga = np.zeros(shape)
        ga[start:stop] = g
        return (ga,)

    return Tensor._result(a.data[start:stop].copy(), (a,), _bw, "slice_rows")


def split_rows(a: Tensor, p: int) -> tuple[Tensor, Tensor]:
    if not 0 <= p <= a.shape[0]:
        raise DimensionError(f"split_rows: split point {p} outside [0, {a.shape[0]}]")
    return slice_rows(a, 0, p), slice_rows(a, p, a.shape[0])


def take_rows(a: Tensor, idx) -> Tensor:
    """Gather rows (or entries of a vector) by integer index."""
    idx = np.asarray(idx, dtype=np.intp)
    shape = a.shape

    def _bw(g):
        ga = np.zeros(shape)
        np.add.at(ga, idx, g)
        return (ga,)

    return Tensor._result(a.data[idx], (a,), _bw, "take_rows")


def gather(a: Tensor, flat_index) -> Tensor:
    """out[...] = a.ravel()[flat_index]; index -1 yields 0 and receives no gradient."""
    flat_index = np.asarray(flat_index, dtype=np.intp)
    valid = flat_index >= 0
    src = a.data.ravel()
    out = np.where(valid, src[np.where(valid, flat_index, 0)], 0.0)
    shape, size = a.shape, a.size

    def _bw(g):
        ga = np.bincount(flat_index[valid], weights=g[valid], minlength=size)
        return (ga.reshape(shape),)

    return Tensor._result(out, (a,), _bw, "gather")


def neighbor_sum(a: Tensor, index) -> Tensor:
    """out[v] = sum of rows a[index[v, k]] over k, skipping -1 padding.

    Each output coordinate is summed in ascending order of the summands'
    values, so the result does not depend on how the rows of ``a`` or the
    slots of ``index`` are ordered (exact permutation equivariance).
    """
    index = np.asarray(index, dtype=np.intp)
    if index.ndim != 2:
        raise DimensionError(f"neighbor_sum: index must be 2-D, got shape {index.shape}")
    x = a.data
    if x.ndim != 2:
        raise DimensionError(f"neighbor_sum needs a matrix, got shape {x.shape}")
    valid = index >= 0
    if index.shape[1] == 0:
        out = np.zeros((index.shape[0], x.shape[1]))
    else:
        vals = np.where(valid[:, :, None], x[np.where(valid, index, 0)], 0.0)
        vals.sort(axis=1)
        out = vals[:, 0, :].copy()
        for k in range(1, vals.shape[1]):
            out += vals[:, k, :]
    rows = np.nonzero(valid)[0]
    cols = index[valid]
    shape = x.shape

    def _bw(g):
        ga = np.zeros(shape)
        np.add.at(ga, cols, g[rows])
        return (ga,)

    return Tensor._result(out, (a,), _bw, "neighbor_sum")


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return Tensor._result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def detach(a: Tensor) -> Tensor:
    """Same values, no gradient path."""
    return Tensor(a.data, requires_grad=False)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    x = a.data
    if x.ndim != 2:
        raise DimensionError(f"layer_norm needs a matrix, got shape {x.shape}")
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gain.data

    def _bw(g):
        dxh = g * gd
        dx = inv * (dxh - dxh.mean(axis=1, keepdims=True)
                    - xhat * (dxh * xhat).mean(axis=1, keepdims=True))
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return Tensor._result(xhat * gd + bias.data, (a, gain, bias), _bw, "layer_norm")


# ---------------------------------------------------------------------------
# finite-difference oracle

def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Max over coordinates of |analytic - central difference| / (|central difference| + 1e-8).

    ``f`` is called with ``x`` itself; the finite-difference probes perturb
    ``x.data`` in place and restore it afterwards, so ``f`` may also close
    over ``x`` (e.g. a model parameter).
    """
    if not x.requires_grad:
        raise ValueError("grad_check needs x.requires_grad=True")
    x.zero_grad()
    loss = f(x)
    if loss.requires_grad:
        backward(loss)
        analytic = x.grad.copy()
    else:
        analytic = np.zeros_like(x.data)
    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    nflat = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(x).item()
            flat[i] = orig - h
            fm = f(x).item()
            flat[i] = orig
            nflat[i] = (fp - fm) / (2.0 * h)
    x.zero_grad()
    if flat.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / (np.abs(numeric) + 1e-8)))
