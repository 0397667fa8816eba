"""Minimal define-by-run reverse-mode differentiation over dense float64 arrays.

Every primitive returns a :class:`Tensor`. When any input requires gradients
(and recording is enabled) the output remembers its parents and a closure
mapping the output adjoint to input adjoints. :func:`backward` replays those
closures in reverse execution order.
"""

from __future__ import annotations

import itertools
import math
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

LOG_FLOOR = 1e-12

_seq = itertools.count()
_local = threading.local()


class ShapeError(ValueError):
    """Raised when a primitive receives operands of incompatible shape."""


def is_grad_enabled() -> bool:
    return getattr(_local, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = is_grad_enabled()
    _local.enabled = False
    try:
        yield
    finally:
        _local.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_seq", "name", "_adj")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._seq = next(_seq)
        self.name = name
        self._adj = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._seq = next(_seq)
    out.name = None
    out._adj = None
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    sa, sb = a.data.shape, b.data.shape
    if sa == sb:
        return
    try:
        np.broadcast_shapes(sa, sb)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {sa} and {sb}") from None


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)
    sa, sb = a.data.shape, b.data.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)
    ad, bd = a.data, b.data

    def back(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return _make(ad * bd, (a, b), back)


def neg(x) -> Tensor:
    x = as_tensor(x)
    return _make(-x.data, (x,), lambda g: (-g,))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = 0.5 * (np.tanh(0.5 * x.data) + 1.0)
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),))


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,))


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0.0):
        raise ValueError(f"log: non-positive input (min {x.data.min()!r}); clamp before logging")
    xd = x.data
    return _make(np.log(xd), (x,), lambda g: (g / xd,))


def clamp_min(x, floor: float) -> Tensor:
    """max(x, floor); entries at or below the floor receive no gradient."""
    x = as_tensor(x)
    keep = x.data > floor
    return _make(np.where(keep, x.data, floor), (x,), lambda g: (g * keep,))


def safe_log(x) -> Tensor:
    """log(max(x, 1e-12)), the form used wherever a probability is logged."""
    return log(clamp_min(x, LOG_FLOOR))


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("minimum", a, b)
    take_a = a.data <= b.data
    sa, sb = a.shape, b.shape

    def back(g):
        return _unbroadcast(g * take_a, sa), _unbroadcast(g * ~take_a, sb)

    return _make(np.minimum(a.data, b.data), (a, b), back)


def stop_gradient(x) -> Tensor:
    """Identity in the forward pass; blocks every adjoint into ``x``."""
    x = as_tensor(x)
    out = Tensor(x.data)
    out.name = "stop_gradient"
    return out


# ---------------------------------------------------------------------------
# linear algebra and reductions
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    k_b = bd.shape[0] if bd.ndim == 1 else bd.shape[-2]
    if ad.ndim == 0 or bd.ndim == 0 or ad.shape[-1] != k_b:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = ad @ bd

    if bd.ndim == 1:
        def back(g):
            ga = g[..., None] * bd if a.requires_grad else None
            gb = ad.reshape(-1, k_b).T @ g.reshape(-1) if b.requires_grad else None
            return ga, gb
    elif ad.ndim == 1:
        def back(g):
            return bd @ g, np.outer(ad, g)
    elif bd.ndim == 2:
        def back(g):
            ga = g @ bd.T if a.requires_grad else None
            gb = ad.reshape(-1, k_b).T @ g.reshape(-1, g.shape[-1]) if b.requires_grad else None
            return ga, gb
    else:
        def back(g):
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
            gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
            return ga, gb

    return _make(out, (a, b), back)


def sum(x, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    shape = x.shape

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).copy(),)

    return _make(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), back)


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {old} into {tuple(shape)}") from None
    return _make(out, (x,), lambda g: (g.reshape(old),))


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    try:
        out = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError:
        shapes = " and ".join(str(x.shape) for x in xs)
        raise ShapeError(f"concat: incompatible shapes {shapes}") from None
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return _make(out, xs, lambda g: tuple(np.split(g, bounds, axis=axis)))


def slice_last(x, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def back(g):
        full = np.zeros(shape)
        full[..., start:stop] = g
        return (full,)

    return _make(x.data[..., start:stop], (x,), back)


def getitem(x, idx) -> Tensor:
    """Basic or integer-array indexing; repeated indices accumulate adjoints."""
    x = as_tensor(x)
    shape = x.shape

    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(i, (int, slice)) or i is Ellipsis for i in parts)

    def back(g):
        full = np.zeros(shape)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(np.asarray(x.data[idx]), (x,), back)


def stack(xs: Sequence, axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    shapes = {x.shape for x in xs}
    if len(shapes) != 1:
        raise ShapeError(f"stack: incompatible shapes {' and '.join(map(str, shapes))}")
    out = np.stack([x.data for x in xs], axis=axis)
    n = len(xs)
    return _make(out, xs, lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


def masked_softmax(x, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis; entries where ``mask`` is False get exactly 0."""
    x = as_tensor(x)
    if mask is None:
        z = x.data - x.data.max(axis=-1, keepdims=True)
        e = np.exp(z)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise ShapeError(f"masked_softmax: incompatible shapes {x.shape} and {mask.shape}")
        z = np.where(mask, x.data, -np.inf)
        z = z - z.max(axis=-1, keepdims=True)
        e = np.where(mask, np.exp(z), 0.0)
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (x,), back)


def scatter_add(probs, index: np.ndarray, size: int) -> Tensor:
    """Add ``probs[..., i]`` into slot ``index[..., i]`` of a zero vector of length ``size``."""
    probs = as_tensor(probs)
    index = np.asarray(index, dtype=np.int64)
    if index.shape != probs.shape:
        raise ShapeError(f"scatter_add: incompatible shapes {probs.shape} and {index.shape}")
    if index.size and (index.min() < 0 or index.max() >= size):
        raise IndexError(f"scatter_add: index out of range for size {size}")
    if probs.ndim == 1:
        out = np.zeros(size)
        np.add.at(out, index, probs.data)
        return _make(out, (probs,), lambda g: (g[index],))
    rows = np.arange(probs.shape[0])[:, None]
    out = np.zeros((probs.shape[0], size))
    np.add.at(out, (rows, index), probs.data)
    return _make(out, (probs,), lambda g: (g[rows, index],))


# ---------------------------------------------------------------------------
# recurrent composites (hand-written adjoints, checked against lstm_step)
# ---------------------------------------------------------------------------


def _cell_forward(z: np.ndarray, c: np.ndarray, H: int):
    s = np.tanh(0.5 * z[..., : 3 * H])
    s += 1.0
    s *= 0.5
    g = np.tanh(z[..., 3 * H :])
    c_new = s[..., H : 2 * H] * c
    c_new += s[..., :H] * g
    tc = np.tanh(c_new)
    return s, g, c_new, tc, s[..., 2 * H :] * tc


def _cell_backward(gh, gc, s, g, c_prev, tc, H: int):
    """Adjoint of one cell: returns d(pre-activation) and d(previous cell)."""
    dc = gh * s[..., 2 * H :]
    dc *= 1.0 - tc * tc
    dc += gc
    dz = np.empty(s.shape[:-1] + (4 * H,))
    dz[..., :H] = dc * g
    dz[..., H : 2 * H] = dc * c_prev
    dz[..., 2 * H : 3 * H] = gh * tc
    dz[..., : 3 * H] *= s * (1.0 - s)
    dz[..., 3 * H :] = dc * s[..., :H] * (1.0 - g * g)
    return dz, dc * s[..., H : 2 * H]


def _t(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def lstm_cell(x_proj, h, c, Wh) -> Tensor:
    """One LSTM step; returns ``[h_new, c_new]`` concatenated on the last axis.

    ``x_proj`` is the input projection plus bias, gates ordered i, f, o, g.
    """
    x_proj, h, c, Wh = (as_tensor(t) for t in (x_proj, h, c, Wh))
    H = h.shape[-1]
    if x_proj.shape[-1] != 4 * H or Wh.shape != (H, 4 * H) or c.shape != h.shape:
        raise ShapeError(f"lstm_cell: incompatible shapes {x_proj.shape} and {Wh.shape}")
    hd, cd, Wd = h.data, c.data, Wh.data
    s, g, c_new, tc, h_new = _cell_forward(x_proj.data + hd @ Wd, cd, H)

    def back(gout):
        dz, dc_prev = _cell_backward(gout[..., :H], gout[..., H:], s, g, cd, tc, H)
        return dz, dz @ Wd.T, dc_prev, hd.T @ dz

    return _make(np.concatenate([h_new, c_new], axis=-1), (x_proj, h, c, Wh), back)


def lstm_sequence(x_proj, Wh) -> Tensor:
    """Run an LSTM from zero state along axis -2 of ``x_proj``.

    ``x_proj`` is (B, L, 4H) with ``Wh`` (H, 4H), or (D, B, L, 4H) with ``Wh``
    (D, H, 4H) to run D independent recurrences at once. Returns hidden
    states then cell states at every position, shape (..., L, 2H).
    """
    x_proj, Wh = as_tensor(x_proj), as_tensor(Wh)
    H = Wh.shape[-2]
    if x_proj.ndim != Wh.ndim + 1 or x_proj.shape[-1] != 4 * H or Wh.shape[-1] != 4 * H:
        raise ShapeError(f"lstm_sequence: incompatible shapes {x_proj.shape} and {Wh.shape}")
    xd, Wd = x_proj.data, Wh.data
    lead, L = xd.shape[:-2], xd.shape[-2]
    hs = np.zeros(lead + (L + 1, H))
    cs = np.zeros(lead + (L + 1, H))
    ss = np.empty(lead + (L, 3 * H))
    gs = np.empty(lead + (L, H))
    tcs = np.empty(lead + (L, H))
    for t in range(L):
        s, g, c_new, tc, h_new = _cell_forward(xd[..., t, :] + hs[..., t, :] @ Wd, cs[..., t, :], H)
        ss[..., t, :], gs[..., t, :], tcs[..., t, :] = s, g, tc
        hs[..., t + 1, :], cs[..., t + 1, :] = h_new, c_new
    WdT = _t(Wd)

    def back(gout):
        dx = np.empty_like(xd)
        dW = np.zeros_like(Wd)
        dh = 0.0
        dc = 0.0
        for t in range(L - 1, -1, -1):
            dz, dc = _cell_backward(
                gout[..., t, :H] + dh, gout[..., t, H:] + dc,
                ss[..., t, :], gs[..., t, :], cs[..., t, :], tcs[..., t, :], H,
            )
            dx[..., t, :] = dz
            dh = dz @ WdT
            dW += _t(hs[..., t, :]) @ dz
        return dx, dW

    return _make(np.concatenate([hs[..., 1:, :], cs[..., 1:, :]], axis=-1), (x_proj, Wh), back)


# ---------------------------------------------------------------------------
# graph replay
# ---------------------------------------------------------------------------


class Graph:
    """Recorded operations reachable from an output, in execution order."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def trace(cls, output: Tensor) -> "Graph":
        seen = {id(output)}
        stack_ = [output]
        nodes = []
        while stack_:
            node = stack_.pop()
            nodes.append(node)
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    seen.add(id(p))
                    stack_.append(p)
        nodes.sort(key=lambda n: n._seq)
        return cls(nodes)

    def __len__(self) -> int:
        return len(self.nodes)

    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if n.is_leaf]


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every leaf reachable from the scalar ``loss``.

    Leaf gradients accumulate across calls; call ``zero_grad`` between steps.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    nodes = Graph.trace(loss).nodes
    for node in nodes:
        node._adj = None
    loss._adj = np.ones_like(loss.data)
    for node in reversed(nodes):
        g = node._adj
        if g is None:
            continue
        node._adj = None
        if node._backward is None:
            node.grad = np.array(g, copy=True) if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            p._adj = pg if p._adj is None else p._adj + pg


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------


def grad_check(
    f: Callable[[], Tensor | Sequence[Tensor]],
    params: Iterable[Tensor],
    epsilon: float = 1e-6,
) -> float | list[float]:
    """Max relative error between backprop gradients and central differences.

    ``f`` is called with no arguments and must read the current ``params``
    values; entries are perturbed in place and restored. When ``f`` returns
    a sequence of scalars, each is checked against the same perturbed
    evaluations and a list of errors comes back.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError(f"grad_check: epsilon {epsilon} outside [1e-7, 1e-3]")
    params = list(params)
    out = f()
    single = isinstance(out, Tensor)
    outs = [out] if single else list(out)
    if not all(isinstance(o, Tensor) for o in outs):
        raise TypeError("grad_check: f must return a Tensor or a sequence of Tensors")
    analytic = []
    for o in outs:
        if not math.isfinite(o.item()):
            raise ValueError("grad_check: f returned a non-finite value")
        for p in params:
            p.grad = None
        backward(o)
        analytic.append([np.zeros(p.shape) if p.grad is None else p.grad.reshape(-1).copy() for p in params])
    for p in params:
        p.grad = None

    def values() -> np.ndarray:
        with no_grad():
            v = f()
        v = np.array([v.item()] if isinstance(v, Tensor) else [t.item() for t in v])
        if not np.all(np.isfinite(v)):
            raise ValueError("grad_check: f returned a non-finite value")
        return v

    worst = np.zeros(len(outs))
    for j, p in enumerate(params):
        flat = p.data.reshape(-1)
        ga = np.stack([a[j].reshape(-1) for a in analytic])  # (outputs, entries)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = values()
            flat[i] = orig - epsilon
            down = values()
            flat[i] = orig
            num = (up - down) / (2.0 * epsilon)
            a = ga[:, i]
            err = np.abs(a - num) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(num)))
            worst = np.maximum(worst, err)
    return float(worst[0]) if single else worst.tolist()
