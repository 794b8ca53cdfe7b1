"""A small reverse-mode differentiation engine over float64 numpy arrays.

Each op records its inputs and a backward closure on the output tensor.
``backward`` walks the recorded graph from a scalar loss in reverse
topological order and accumulates gradients into every reachable tensor
that requires them.
"""

from contextlib import contextmanager
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import kernels

# op name -> multiplier applied to that op's backward output; a test hook for negative controls
_FAULTS: dict = {}

OP_NAMES = (
    "add", "sub", "neg", "scale", "mul", "matmul", "transpose", "exp", "log",
    "tanh", "softplus", "gather_rows", "pick", "concat", "lse", "log_matmul",
    "logaddexp", "sum", "mean",
)


@contextmanager
def corrupt_backward(op: str, factor: float = 1.5):
    """Scale the gradient produced by ``op``'s backward rule while the context is active."""
    if op not in OP_NAMES:
        raise ValueError(f"unknown op {op!r}")
    _FAULTS[op] = factor
    try:
        yield
    finally:
        _FAULTS.pop(op, None)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.op = "leaf"
        self.name = name
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        label = self.name or self.op
        return f"Tensor({label}, shape={self.shape})"

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def _accumulate(self, g: np.ndarray):
        if not self.requires_grad:
            return
        if g.shape != self.data.shape:
            raise RuntimeError(f"gradient shape {g.shape} != value shape {self.data.shape} in {self!r}")
        self.grad += g

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __neg__ = lambda self: neg(self)
    __matmul__ = lambda self, other: matmul(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, op: str, parents: Sequence[Tensor], rule) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite value produced by {op}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out.name = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out._parents = tuple(parents)
    if out.requires_grad:
        factor = _FAULTS.get(op)
        if factor is None:
            out._backward = rule
        else:
            out._backward = lambda g: rule(g * factor)
    else:
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    # supported patterns: scalar, bias row (k,), and reduced column (n, 1)
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum())
    if len(shape) == 1 and g.ndim == 2 and g.shape[1] == shape[0]:
        return g.sum(axis=0)
    if len(shape) == 2 and g.ndim == 2 and shape == (g.shape[0], 1):
        return g.sum(axis=1, keepdims=True)
    raise ValueError(f"cannot reduce gradient {g.shape} to {shape}")


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    sa, sb = a.shape, b.shape
    if sa == sb or sa == () or sb == ():
        return
    if len(sa) == 2 and len(sb) == 1 and sa[1] == sb[0]:
        return
    if len(sb) == 2 and len(sa) == 1 and sb[1] == sa[0]:
        return
    if len(sa) == 2 and len(sb) == 2 and sa[0] == sb[0] and 1 in (sa[1], sb[1]):
        return
    raise ValueError(f"{op}: shape mismatch {sa} vs {sb}")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def rule(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return _node(a.data + b.data, "add", (a, b), rule)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def rule(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(-g, b.shape))

    return _node(a.data - b.data, "sub", (a, b), rule)


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, "neg", (a,), lambda g: a._accumulate(-g))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _node(a.data * c, "scale", (a,), lambda g: a._accumulate(g * c))


def mul(a, b) -> Tensor:
    """Elementwise product."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def rule(g):
        a._accumulate(_unbroadcast(g * b.data, a.shape))
        b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, "mul", (a, b), rule)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ValueError(f"matmul: shape mismatch {a.shape} x {b.shape}")

    def rule(g):
        if a.ndim == 1:
            a._accumulate(b.data @ g)
            b._accumulate(np.outer(a.data, g))
        else:
            a._accumulate(g @ b.data.T)
            b._accumulate(a.data.T @ g)

    return _node(a.data @ b.data, "matmul", (a, b), rule)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ValueError("transpose needs a matrix")
    return _node(a.data.T.copy(), "transpose", (a,), lambda g: a._accumulate(g.T))


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)
    return _node(out_data, "exp", (a,), lambda g: a._accumulate(g * out_data))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise FloatingPointError("log of a non-positive value")
    return _node(np.log(a.data), "log", (a,), lambda g: a._accumulate(g / a.data))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _node(t, "tanh", (a,), lambda g: a._accumulate(g * (1.0 - t * t)))


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out_data = np.logaddexp(0.0, x)
    sig = np.exp(x - out_data)
    return _node(out_data, "softplus", (a,), lambda g: a._accumulate(g * sig))


def gather_rows(a: Tensor, index) -> Tensor:
    """Select rows ``a[index]``; the gradient scatters back into those rows only."""
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= a.shape[0]):
        raise IndexError("gather_rows index out of range")

    def rule(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        a._accumulate(full)

    return _node(a.data[index].copy(), "gather_rows", (a,), rule)


def pick(a: Tensor, index) -> Tensor:
    """Per-row column selection ``a[n, index[n]]`` on an (n, k) tensor."""
    index = np.asarray(index, dtype=np.int64)
    if a.ndim != 2 or index.shape != (a.shape[0],):
        raise ValueError(f"pick: need (n, k) tensor and n indices, got {a.shape}, {index.shape}")
    if index.size and (index.min() < 0 or index.max() >= a.shape[1]):
        raise IndexError("pick index out of range")
    rows = np.arange(a.shape[0])

    def rule(g):
        full = np.zeros_like(a.data)
        full[rows, index] = g
        a._accumulate(full)

    return _node(a.data[rows, index].copy(), "pick", (a,), rule)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def rule(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            t._accumulate(np.take(g, np.arange(lo, hi), axis=axis))

    return _node(data, "concat", tensors, rule)


def lse(a: Tensor, axis: int = -1, keepdims: bool = True) -> Tensor:
    """Log-sum-exp along ``axis``; the gradient is the softmax along that axis."""
    out_keep = kernels.lse(a.data, axis=axis, keepdims=True)
    soft = np.exp(a.data - out_keep)
    out_data = out_keep if keepdims else np.squeeze(out_keep, axis=axis)

    def rule(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(g * soft)

    return _node(out_data, "lse", (a,), rule)


def log_matmul(a: Tensor, b: Tensor) -> Tensor:
    """``out[n, j] = lse_i(a[n, i] + b[i, j])``: a matrix product in the log domain."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"log_matmul: shape mismatch {a.shape} x {b.shape}")
    out_data = kernels.log_matmul(a.data, b.data)

    def rule(g):
        # w[n, i, j] = exp(a[n,i] + b[i,j] - out[n,j]) sums to 1 over i
        w = np.exp(a.data[:, :, None] + b.data[None, :, :] - out_data[:, None, :])
        gw = w * g[:, None, :]
        a._accumulate(gw.sum(axis=2))
        b._accumulate(gw.sum(axis=0))

    return _node(out_data, "log_matmul", (a, b), rule)


def logaddexp(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"logaddexp: shape mismatch {a.shape} vs {b.shape}")
    out_data = np.logaddexp(a.data, b.data)

    def rule(g):
        a._accumulate(g * np.exp(a.data - out_data))
        b._accumulate(g * np.exp(b.data - out_data))

    return _node(out_data, "logaddexp", (a, b), rule)


def sum(a: Tensor, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    out_data = np.asarray(a.data.sum(axis=axis))

    def rule(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape).copy())

    return _node(out_data, "sum", (a,), rule)


def mean(a: Tensor, axis: Optional[int] = None) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]
    out_data = np.asarray(a.data.mean(axis=axis))

    def rule(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g / count, a.shape).copy())

    return _node(out_data, "mean", (a,), rule)


# composites

def log_softmax(g: Tensor) -> Tensor:
    return sub(g, lse(g, axis=-1, keepdims=True))


def log_row_normalize(L: Tensor) -> Tensor:
    if L.ndim != 2:
        raise ValueError("log_row_normalize needs a matrix")
    return sub(L, lse(L, axis=1, keepdims=True))


def kld(log_p: Tensor, log_q: Tensor) -> Tensor:
    """Row-wise KL(p || q) from log-probabilities; masses at or below the floor are dropped."""
    if log_p.shape != log_q.shape:
        raise ValueError(f"kld: mismatched shapes {log_p.shape} vs {log_q.shape}")
    p = exp(log_p)
    keep = Tensor((p.data > kernels.PROB_FLOOR).astype(np.float64))
    terms = mul(mul(p, sub(log_p, log_q)), keep)
    return sum(terms, axis=-1)


def jsd(log_a: Tensor, log_b: Tensor) -> Tensor:
    """Row-wise Jensen-Shannon divergence in nats."""
    if log_a.shape != log_b.shape:
        raise ValueError(f"jsd: mismatched shapes {log_a.shape} vs {log_b.shape}")
    log_m = sub(logaddexp(log_a, log_b), Tensor(kernels.LOG2))
    return scale(add(kld(log_a, log_m), kld(log_b, log_m)), 0.5)


# graph traversal

def topological_order(root: Tensor) -> list:
    """Nodes reachable from ``root``, each after all of its inputs."""
    order, seen = [], set()
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
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, params: Optional[Iterable[Tensor]] = None) -> Optional[list]:
    """Populate ``.grad`` on every tensor reachable from the scalar ``loss``.

    Gradients are reset before accumulation, so calling this twice on the
    same graph gives identical results. If ``params`` is given, returns
    their gradients in order; parameters the loss does not reach get zeros.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    params = None if params is None else list(params)
    order = topological_order(loss)
    for node in order:
        if node.requires_grad:
            node.grad = np.zeros_like(node.data)
    if params is not None:
        for p in params:
            p.grad = np.zeros_like(p.data)
    if loss.requires_grad:
        loss.grad = np.ones_like(loss.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)
    if params is None:
        return None
    return [p.grad for p in params]
