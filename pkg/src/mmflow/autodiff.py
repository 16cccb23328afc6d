"""Reverse-mode differentiation over numpy arrays.

Values are float64 arrays wrapped in :class:`Var`. Each operation records its
parents and a vector-Jacobian product; :func:`backward` walks the recorded
graph in reverse topological order. Granularity is whole-tensor ops, which
keeps the Python overhead per training step small.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import NotScalar
from .kernels import segment_sum as _segsum


class Var:
    __slots__ = ("value", "parents", "vjp", "name")

    def __init__(self, value, parents=(), vjp=None, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.vjp = vjp
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, name={self.name!r})"

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
        if isinstance(other, Var):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)


def const(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def param(value, name: str) -> Var:
    return Var(value, name=name)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Var:
    a, b = const(a), const(b)
    sa, sb = a.shape, b.shape
    return Var(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Var:
    a, b = const(a), const(b)
    sa, sb = a.shape, b.shape
    return Var(a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Var:
    a, b = const(a), const(b)
    av, bv = a.value, b.value
    return Var(av * bv, (a, b), lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def neg(a) -> Var:
    return Var(-a.value, (a,), lambda g: (-g,))


def reciprocal(a) -> Var:
    r = 1.0 / a.value
    return Var(r, (a,), lambda g: (-g * r * r,))


def exp(a) -> Var:
    e = np.exp(a.value)
    return Var(e, (a,), lambda g: (g * e,))


def log(a) -> Var:
    av = a.value
    return Var(np.log(av), (a,), lambda g: (g / av,))


def square(a) -> Var:
    av = a.value
    return Var(av * av, (a,), lambda g: (2.0 * g * av,))


def sqrt(a, eps: float = 0.0) -> Var:
    """``sqrt(a + eps)``; the derivative at an exact zero is taken as 0."""
    r = np.sqrt(a.value + eps)
    safe = np.where(r > 0, r, 1.0)
    return Var(r, (a,), lambda g: (np.where(r > 0, 0.5 * g / safe, 0.0),))


def sigmoid(a) -> Var:
    s = expit(a.value)
    return Var(s, (a,), lambda g: (g * s * (1.0 - s),))


def silu(a) -> Var:
    av = a.value
    s = expit(av)
    return Var(av * s, (a,), lambda g: (g * s * (1.0 + av * (1.0 - s)),))


# ---------------------------------------------------------------------------
# linear algebra and reductions


def matmul(a, b) -> Var:
    a, b = const(a), const(b)
    av, bv = a.value, b.value

    if bv.ndim == 2:
        # fold leading axes so numpy issues one GEMM instead of a batched loop
        a2 = av.reshape(-1, av.shape[-1])

        def vjp(g):
            g2 = g.reshape(-1, g.shape[-1])
            return (g2 @ bv.T).reshape(av.shape), a2.T @ g2

        return Var((a2 @ bv).reshape(av.shape[:-1] + (bv.shape[1],)), (a, b), vjp)

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape)
        gb = _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)
        return ga, gb

    return Var(av @ bv, (a, b), vjp)


def sum(a, axis=None, keepdims: bool = False) -> Var:  # noqa: A001 - mirrors numpy
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Var(a.value.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Var:
    n = a.value.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(sum(a, axis, keepdims), 1.0 / max(int(n), 1))


def reshape(a, shape) -> Var:
    old = a.shape
    return Var(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes) -> Var:
    inv = np.argsort(axes)
    return Var(np.transpose(a.value, axes), (a,), lambda g: (np.transpose(g, inv),))


def concat(parts, axis: int = -1) -> Var:
    parts = [const(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, cuts, axis=axis))

    return Var(np.concatenate([p.value for p in parts], axis=axis), tuple(parts), vjp)


def getitem(a, key) -> Var:
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, key, g)
        return (out,)

    return Var(a.value[key], (a,), vjp)


def take(a, index) -> Var:
    """Gather rows ``a[index]`` along axis 0."""
    index = np.asarray(index, dtype=np.int64)
    n = a.shape[0]
    return Var(a.value[index], (a,), lambda g: (_segsum(g, index, n),))


def segment_sum(a, index, n: int) -> Var:
    """Scatter-add rows of ``a`` into ``n`` buckets."""
    index = np.asarray(index, dtype=np.int64)
    return Var(_segsum(a.value, index, n), (a,), lambda g: (g[index],))


def log_softmax(a, axis: int = -1) -> Var:
    z = a.value - a.value.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    p = np.exp(out)
    return Var(out, (a,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


# ---------------------------------------------------------------------------
# backward pass


def _toposort(root: Var) -> list[Var]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Var, params: dict) -> dict:
    """Gradients of scalar ``loss`` w.r.t. each ``Var`` in ``params`` (zeros if unreachable)."""
    if loss.value.size != 1:
        raise NotScalar(f"loss has shape {loss.value.shape}")
    grads = {id(loss): np.ones_like(loss.value)}
    for node in reversed(_toposort(loss)):
        g = grads.pop(id(node), None) if node.vjp is not None else grads.get(id(node))
        if g is None or node.vjp is None:
            continue
        for p, gp in zip(node.parents, node.vjp(g)):
            if gp is None or (p.vjp is None and p.name is None):
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + gp
            else:
                grads[key] = gp
    return {name: grads.get(id(v), np.zeros_like(v.value)).reshape(v.shape) for name, v in params.items()}


# ---------------------------------------------------------------------------
# finite-difference verification


@dataclass
class GradCheckReport:
    deviations: dict = field(default_factory=dict)  # block -> max relative deviation
    tol: float = 1e-4

    @property
    def failed(self) -> list[str]:
        return [k for k, v in self.deviations.items() if not v < self.tol]

    @property
    def ok(self) -> bool:
        return not self.failed

    @property
    def worst(self) -> float:
        return max(self.deviations.values(), default=0.0)


def grad_check(f, params: dict, h: float = 1e-5, tol: float = 1e-4, eps: float = 1e-6,
               analytic: dict | None = None, max_entries: int | None = None,
               rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f`` against central differences.

    ``f`` maps a dict of ``Var`` leaves to a scalar ``Var``. ``analytic`` may
    supply precomputed gradients (used to test the checker itself). With
    ``max_entries`` only that many randomly chosen entries per block are probed.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    if analytic is None:
        leaves = {k: param(v, k) for k, v in base.items()}
        analytic = backward(f(leaves), leaves)
    rng = rng or np.random.default_rng(0)

    def evaluate(vals):
        return float(f({k: Var(v) for k, v in vals.items()}).value)

    report = GradCheckReport(tol=tol)
    for name, arr in base.items():
        flat_idx = np.arange(arr.size)
        if max_entries is not None and arr.size > max_entries:
            flat_idx = rng.choice(arr.size, size=max_entries, replace=False)
        worst = 0.0
        for i in flat_idx:
            idx = np.unravel_index(i, arr.shape)
            old = arr[idx]
            arr[idx] = old + h
            fp = evaluate(base)
            arr[idx] = old - h
            fm = evaluate(base)
            arr[idx] = old
            fd = (fp - fm) / (2 * h)
            a = analytic[name][idx]
            worst = max(worst, abs(a - fd) / (abs(a) + eps))
        report.deviations[name] = worst
    return report
