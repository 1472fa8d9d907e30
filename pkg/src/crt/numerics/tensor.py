"""Define-by-run reverse-mode differentiation over float64 numpy arrays."""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

_node_ids = itertools.count()

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class DiffArray:
    """A dense float64 array that records the ops producing it.

    Leaves created by the user carry ``requires_grad``; intermediate results
    keep references to their parents and a closure mapping the output
    gradient to one gradient per parent.
    """

    __slots__ = ("values", "grad", "requires_grad", "op", "node_id", "_parents", "_backward")
    __array_priority__ = 1000

    def __init__(self, values, requires_grad: bool = False, *, op: str = "leaf",
                 parents: tuple = (), backward: BackwardFn | None = None):
        values = np.asarray(values, dtype=np.float64)
        if not np.isfinite(values).all():
            raise FloatingPointError(f"{op}: non-finite values produced (shape {values.shape})")
        self.values = values
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = op
        self.node_id = next(_node_ids)
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def detach(self) -> "DiffArray":
        return DiffArray(self.values.copy())

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.values)

    def item(self) -> float:
        return float(self.values)

    def numpy(self) -> np.ndarray:
        return self.values

    def __repr__(self) -> str:
        return f"DiffArray(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        backward(self)

    # operator sugar
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return mul(self, -1.0)
    def __matmul__(self, other): return matmul(self, other)
    def __pow__(self, p): return power(self, p)
    def __getitem__(self, idx): return slice_(self, idx)

    @property
    def T(self) -> "DiffArray":
        return transpose(self)


def as_diff(x) -> DiffArray:
    return x if isinstance(x, DiffArray) else DiffArray(x)


def _make(values, op: str, parents: tuple[DiffArray, ...], backward: BackwardFn) -> DiffArray:
    if any(p.requires_grad for p in parents):
        return DiffArray(values, True, op=op, parents=parents, backward=backward)
    return DiffArray(values, op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op: str, a: DiffArray, b: DiffArray) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b) -> DiffArray:
    a, b = as_diff(a), as_diff(b)
    _check_broadcast("add", a, b)
    return _make(a.values + b.values, "add", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> DiffArray:
    a, b = as_diff(a), as_diff(b)
    _check_broadcast("sub", a, b)
    return _make(a.values - b.values, "sub", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> DiffArray:
    a, b = as_diff(a), as_diff(b)
    _check_broadcast("mul", a, b)
    return _make(a.values * b.values, "mul", (a, b),
                 lambda g: (_unbroadcast(g * b.values, a.shape),
                            _unbroadcast(g * a.values, b.shape)))


def div(a, b) -> DiffArray:
    a, b = as_diff(a), as_diff(b)
    _check_broadcast("div", a, b)
    out = a.values / b.values
    return _make(out, "div", (a, b),
                 lambda g: (_unbroadcast(g / b.values, a.shape),
                            _unbroadcast(-g * out / b.values, b.shape)))


def exp(x) -> DiffArray:
    x = as_diff(x)
    out = np.exp(x.values)
    return _make(out, "exp", (x,), lambda g: (g * out,))


def log(x) -> DiffArray:
    x = as_diff(x)
    if (x.values <= 0).any():
        raise FloatingPointError("log: non-positive input")
    return _make(np.log(x.values), "log", (x,), lambda g: (g / x.values,))


def power(x, p: float) -> DiffArray:
    x = as_diff(x)
    p = float(p)
    return _make(x.values ** p, "power", (x,), lambda g: (g * p * x.values ** (p - 1.0),))


def relu(x) -> DiffArray:
    x = as_diff(x)
    mask = x.values > 0
    return _make(x.values * mask, "relu", (x,), lambda g: (g * mask,))


def tanh(x) -> DiffArray:
    x = as_diff(x)
    out = np.tanh(x.values)
    return _make(out, "tanh", (x,), lambda g: (g * (1.0 - out * out),))


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x) -> DiffArray:
    """Exact GELU, x * Phi(x)."""
    x = as_diff(x)
    cdf = 0.5 * (1.0 + erf(x.values * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x.values ** 2)
    return _make(x.values * cdf, "gelu", (x,), lambda g: (g * (cdf + x.values * pdf),))


# ---------------------------------------------------------------------------
# reductions and shape ops

def _expand_reduced(g: np.ndarray, shape, axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum_(x, axis=None, keepdims: bool = False) -> DiffArray:
    x = as_diff(x)
    return _make(x.values.sum(axis=axis, keepdims=keepdims), "sum", (x,),
                 lambda g: (_expand_reduced(g, x.shape, axis, keepdims).copy(),))


def mean(x, axis=None, keepdims: bool = False) -> DiffArray:
    x = as_diff(x)
    out = x.values.mean(axis=axis, keepdims=keepdims)
    count = x.values.size // max(out.size, 1) if x.values.size else 1
    return _make(out, "mean", (x,),
                 lambda g: (_expand_reduced(g, x.shape, axis, keepdims) / count,))


def reshape(x, shape) -> DiffArray:
    x = as_diff(x)
    return _make(x.values.reshape(shape), "reshape", (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None) -> DiffArray:
    x = as_diff(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))
    return _make(x.values.transpose(axes), "transpose", (x,), lambda g: (g.transpose(inverse),))


def swapaxes(x, a: int, b: int) -> DiffArray:
    axes = list(range(as_diff(x).ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return transpose(x, tuple(axes))


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def slice_(x, idx) -> DiffArray:
    x = as_diff(x)
    basic = _is_basic_index(idx)

    def back(g):
        gx = np.zeros_like(x.values)
        if basic:
            gx[idx] += g
        else:
            np.add.at(gx, idx, g)
        return (gx,)

    return _make(x.values[idx], "slice", (x,), back)


def concat(xs: Sequence, axis: int = 0) -> DiffArray:
    xs = [as_diff(x) for x in xs]
    try:
        out = np.concatenate([x.values for x in xs], axis=axis)
    except ValueError:
        raise ValueError(f"concat: incompatible shapes {[x.shape for x in xs]} on axis {axis}") from None
    splits = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return _make(out, "concat", tuple(xs), lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(xs: Sequence, axis: int = 0) -> DiffArray:
    xs = [as_diff(x) for x in xs]
    axis = axis % (xs[0].ndim + 1)
    return concat([reshape(x, x.shape[:axis] + (1,) + x.shape[axis:]) for x in xs], axis=axis)


def take_rows(x, idx: np.ndarray) -> DiffArray:
    """Per-batch row gather: ``out[b, k] = x[b, idx[b, k]]`` for x of shape (B, N, ...)."""
    x = as_diff(x)
    idx = np.asarray(idx, dtype=np.intp)
    if idx.ndim != 2 or idx.shape[0] != x.shape[0]:
        raise ValueError(f"take_rows: index shape {idx.shape} incompatible with {x.shape}")
    rows = np.arange(x.shape[0])[:, None]

    def back(g):
        gx = np.zeros_like(x.values)
        np.add.at(gx, (rows, idx), g)
        return (gx,)

    return _make(x.values[rows, idx], "take_rows", (x,), back)


def embedding(table, idx: np.ndarray) -> DiffArray:
    """Row lookup ``table[idx]`` with scatter-add backward."""
    table = as_diff(table)
    idx = np.asarray(idx, dtype=np.intp)

    def back(g):
        gt = np.zeros_like(table.values)
        np.add.at(gt, idx, g)
        return (gt,)

    return _make(table.values[idx], "embedding", (table,), back)


# ---------------------------------------------------------------------------
# linear algebra and neural-network primitives

def matmul(a, b) -> DiffArray:
    a, b = as_diff(a), as_diff(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    try:
        out = a.values @ b.values
    except ValueError:
        raise ValueError(f"matmul: batch shapes {a.shape} and {b.shape} do not broadcast") from None

    def back(g):
        ga = g @ np.swapaxes(b.values, -1, -2)
        gb = np.swapaxes(a.values, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, "matmul", (a, b), back)


def conv1d(x, w, padding: int | None = None) -> DiffArray:
    """Stride-1 cross-correlation in channels-last layout.

    x is (B, T, C_in), w is (K, C_in, C_out); 'same' padding (K // 2 each
    side) by default. out[b, t] = sum_k xpad[b, t + k] @ w[k].
    """
    x, w = as_diff(x), as_diff(w)
    if x.ndim != 3 or w.ndim != 3 or x.shape[2] != w.shape[1]:
        raise ValueError(f"conv1d: input {x.shape} incompatible with weight {w.shape}")
    B, T, C = x.shape
    K, _, O = w.shape
    pad = K // 2 if padding is None else padding
    Tp = T + 2 * pad
    T_out = Tp - K + 1
    if T_out < 1:
        raise ValueError(f"conv1d: kernel {K} longer than padded input {Tp}")
    xp = np.zeros((B, Tp, C))
    xp[:, pad:pad + T] = x.values
    xflat = xp.reshape(B * Tp, C)
    wcat = w.values.transpose(1, 0, 2).reshape(C, K * O)
    y = (xflat @ wcat).reshape(B, Tp, K, O)
    out = y[:, 0:T_out, 0].copy()
    for k in range(1, K):
        out += y[:, k:k + T_out, k]

    def back(g):
        G = np.zeros((B, Tp, K, O))
        for k in range(K):
            G[:, k:k + T_out, k] = g
        G = G.reshape(B * Tp, K * O)
        gw = (xflat.T @ G).reshape(C, K, O).transpose(1, 0, 2)
        gx = (G @ wcat.T).reshape(B, Tp, C)[:, pad:pad + T]
        return gx, gw

    return _make(out, "conv1d", (x, w), back)


def layer_norm(x, gamma=None, beta=None, eps: float = 1e-5) -> DiffArray:
    """Normalise over the last axis, then apply the optional affine (gamma, beta)."""
    x = as_diff(x)
    D = x.shape[-1]
    mu = x.values.mean(axis=-1, keepdims=True)
    xc = x.values - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    parents = [x]
    out = xhat
    if gamma is not None:
        gamma = as_diff(gamma)
        if gamma.shape != (D,):
            raise ValueError(f"layer_norm: gamma shape {gamma.shape} != ({D},)")
        parents.append(gamma)
        out = out * gamma.values
    if beta is not None:
        beta = as_diff(beta)
        if beta.shape != (D,):
            raise ValueError(f"layer_norm: beta shape {beta.shape} != ({D},)")
        parents.append(beta)
        out = out + beta.values

    def back(g):
        gxhat = g * gamma.values if gamma is not None else g
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        grads = [gx]
        lead = tuple(range(g.ndim - 1))
        if gamma is not None:
            grads.append((g * xhat).sum(axis=lead))
        if beta is not None:
            grads.append(g.sum(axis=lead))
        return grads

    return _make(out, "layer_norm", tuple(parents), back)


def softmax(x, axis: int = -1) -> DiffArray:
    x = as_diff(x)
    z = x.values - x.values.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return _make(out, "softmax", (x,),
                 lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def log_softmax(x, axis: int = -1) -> DiffArray:
    x = as_diff(x)
    z = x.values - x.values.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    soft = np.exp(out)
    return _make(out, "log_softmax", (x,),
                 lambda g: (g - soft * g.sum(axis=axis, keepdims=True),))


def logsumexp(x, axis=None) -> DiffArray:
    """log(sum(exp(x))) with max subtraction."""
    x = as_diff(x)
    m = x.values.max(axis=axis, keepdims=True)
    s = np.exp(x.values - m)
    total = s.sum(axis=axis, keepdims=True)
    out = np.log(total) + m
    weights = s / total
    if axis is None:
        out = out.reshape(())
    else:
        out = np.squeeze(out, axis=axis)
    return _make(out, "logsumexp", (x,),
                 lambda g: (_expand_reduced(g, x.shape, axis, False) * weights
                            if axis is not None else g * weights,))


def cosine_similarity(a, b, axis: int = -1) -> DiffArray:
    """x.y / (|x||y|) along ``axis`` with broadcasting; zero-norm vectors are an error."""
    a, b = as_diff(a), as_diff(b)
    _check_broadcast("cosine_similarity", a, b)
    na = np.sqrt((a.values ** 2).sum(axis=axis, keepdims=True))
    nb = np.sqrt((b.values ** 2).sum(axis=axis, keepdims=True))
    if (na == 0).any() or (nb == 0).any():
        raise ValueError("cosine_similarity: zero-norm vector")
    dot = (a.values * b.values).sum(axis=axis, keepdims=True)
    sim = dot / (na * nb)

    def back(g):
        g = np.expand_dims(g, axis)
        ga = g * (b.values / (na * nb) - sim * a.values / na ** 2)
        gb = g * (a.values / (na * nb) - sim * b.values / nb ** 2)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(np.squeeze(sim, axis=axis), "cosine_similarity", (a, b), back)


# ---------------------------------------------------------------------------
# backward pass

def _topological_order(root: DiffArray) -> list[DiffArray]:
    """Iterative DFS post-order; raises if a cycle is found."""
    order: list[DiffArray] = []
    state: dict[int, int] = {}  # 1 = on stack, 2 = done
    stack = [(root, iter(root._parents))]
    state[id(root)] = 1
    while stack:
        node, parents = stack[-1]
        for parent in parents:
            if not parent.requires_grad:
                continue
            s = state.get(id(parent))
            if s == 1:
                raise RuntimeError(f"backward: cycle detected at node {parent.node_id} ({parent.op})")
            if s is None:
                state[id(parent)] = 1
                stack.append((parent, iter(parent._parents)))
                break
        else:
            stack.pop()
            state[id(node)] = 2
            order.append(node)
    return order


def backward(loss: DiffArray) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf."""
    if loss.values.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("backward: loss does not depend on any requires_grad array")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            if not np.isfinite(g).all():
                raise FloatingPointError(f"backward: non-finite gradient at leaf {node.node_id}")
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.asarray(pg, dtype=np.float64)


def forward_op(op: str, inputs: Sequence, **kwargs) -> DiffArray:
    """Apply a registered op by name."""
    try:
        fn = OPS[op]
    except KeyError:
        raise ValueError(f"unknown op {op!r}; registered: {sorted(OPS)}") from None
    return fn(*inputs, **kwargs)


OPS: dict[str, Callable[..., DiffArray]] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "matmul": matmul,
    "conv1d": conv1d,
    "layer_norm": layer_norm,
    "softmax": softmax,
    "log_softmax": log_softmax,
    "logsumexp": logsumexp,
    "gelu": gelu,
    "relu": relu,
    "tanh": tanh,
    "sum": sum_,
    "mean": mean,
    "concat": lambda *xs, axis=0: concat(xs, axis=axis),
    "slice": slice_,
    "transpose": transpose,
    "reshape": reshape,
    "take_rows": take_rows,
    "embedding": embedding,
    "exp": exp,
    "log": log,
    "power": power,
    "cosine_similarity": cosine_similarity,
}
