"""Reverse-mode automatic differentiation over flat float64 tensors.

A :class:`Tape` records primitive operations as they execute; :func:`grad`
replays the records backwards to produce exact reverse-mode gradients.
The engine is deliberately small: float64 only, numpy-style broadcasting
restricted to leading-batch axes and singleton expansion, no higher-order
derivatives, no control-flow tricks. Gaussian sampling inside objectives
is reparameterized by the callers: noise is drawn off-tape and only the
mean/scale transforms are recorded.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import log_ndtr as _log_ndtr
from scipy.special import ndtr as _ndtr

from .errors import NumericError

__all__ = [
    "Tape",
    "Tensor",
    "grad",
    "finite_difference_check",
    "add",
    "sub",
    "mul",
    "matmul",
    "exp",
    "log",
    "tanh",
    "sqrt",
    "tsum",
    "tmean",
    "logsumexp",
    "affine",
    "gather",
    "concat",
    "reshape",
    "slice_cols",
    "normal_cdf",
    "normal_log_cdf",
]

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class Tape:
    """Ordered record of primitive ops; one output node per op."""

    __slots__ = ("_records", "_n_nodes")

    def __init__(self):
        self._records: List[Tuple[int, Tuple[Optional[int], ...], Callable]] = []
        self._n_nodes = 0

    def _new_node(self) -> int:
        nid = self._n_nodes
        self._n_nodes += 1
        return nid

    def leaf(self, data) -> "Tensor":
        """Register a differentiable input."""
        return Tensor(np.asarray(data, dtype=np.float64), tape=self, _node=self._new_node())

    def _record(self, parents: Tuple[Optional[int], ...], vjp: Callable) -> int:
        out = self._new_node()
        self._records.append((out, parents, vjp))
        return out


class Tensor:
    """A float64 array, optionally attached to a tape node."""

    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape: Optional[Tape] = None, _node: Optional[int] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.node = _node

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, recorded={self.node is not None})"

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tape_of(*tensors: Tensor) -> Optional[Tape]:
    tape = None
    for t in tensors:
        if t.tape is not None:
            if tape is not None and tape is not t.tape:
                raise ValueError("operands recorded on different tapes")
            tape = t.tape
    return tape


def _check_broadcast(sa: Tuple[int, ...], sb: Tuple[int, ...]) -> None:
    for da, db in zip(reversed(sa), reversed(sb)):
        if da != db and da != 1 and db != 1:
            raise ValueError(f"shapes {sa} and {sb} are not broadcast-compatible")


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _emit(tape: Optional[Tape], data: np.ndarray, parents, vjp) -> Tensor:
    if tape is None:
        return Tensor(data)
    node = tape._record(tuple(p.node for p in parents), vjp)
    return Tensor(data, tape=tape, _node=node)


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a.shape, b.shape)
    tape = _tape_of(a, b)
    out = a.data + b.data
    sa, sb = a.shape, b.shape

    def vjp(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _emit(tape, out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a.shape, b.shape)
    tape = _tape_of(a, b)
    out = a.data - b.data
    sa, sb = a.shape, b.shape

    def vjp(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _emit(tape, out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a.shape, b.shape)
    tape = _tape_of(a, b)
    out = a.data * b.data
    ad, bd = a.data, b.data
    sa, sb = a.shape, b.shape

    def vjp(g):
        return _unbroadcast(g * bd, sa), _unbroadcast(g * ad, sb)

    return _emit(tape, out, (a, b), vjp)


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.data.ndim > 2 or b.data.ndim > 2:
        raise ValueError("matmul supports 1-D and 2-D operands only")
    tape = _tape_of(a, b)
    out = a.data @ b.data
    ad, bd = a.data, b.data

    def vjp(g):
        if ad.ndim == 2 and bd.ndim == 2:
            return g @ bd.T, ad.T @ g
        if ad.ndim == 2 and bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        if ad.ndim == 1 and bd.ndim == 2:
            return g @ bd.T, np.outer(ad, g)
        return g * bd, g * ad

    return _emit(tape, out, (a, b), vjp)


def exp(a) -> Tensor:
    a = _lift(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    if not np.all(np.isfinite(out)):
        raise NumericError("exp overflowed", term=float(np.max(a.data)))

    def vjp(g):
        return (g * out,)

    return _emit(a.tape, out, (a,), vjp)


def log(a) -> Tensor:
    a = _lift(a)
    if np.any(a.data <= 0.0):
        raise NumericError("log requires strictly positive input", term=float(np.min(a.data)))
    out = np.log(a.data)
    ad = a.data

    def vjp(g):
        return (g / ad,)

    return _emit(a.tape, out, (a,), vjp)


def tanh(a) -> Tensor:
    a = _lift(a)
    out = np.tanh(a.data)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return _emit(a.tape, out, (a,), vjp)


def sqrt(a) -> Tensor:
    a = _lift(a)
    if np.any(a.data < 0.0):
        raise NumericError("sqrt requires non-negative input", term=float(np.min(a.data)))
    out = np.sqrt(a.data)

    def vjp(g):
        return (g / (2.0 * out),)

    return _emit(a.tape, out, (a,), vjp)


def tsum(a, axis: Optional[int] = None) -> Tensor:
    a = _lift(a)
    out = np.sum(a.data, axis=axis)
    shape = a.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _emit(a.tape, out, (a,), vjp)


def tmean(a, axis: Optional[int] = None) -> Tensor:
    a = _lift(a)
    out = np.mean(a.data, axis=axis)
    shape = a.shape
    count = a.data.size if axis is None else shape[axis]

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g / count, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis) / count, shape).copy(),)

    return _emit(a.tape, out, (a,), vjp)


def logsumexp(a, axis: Optional[int] = None) -> Tensor:
    """Max-shift stabilized log(sum(exp(a)))."""
    a = _lift(a)
    hi = np.max(a.data, axis=axis, keepdims=True)
    shifted = np.exp(a.data - hi)
    total = np.sum(shifted, axis=axis, keepdims=True)
    out_k = hi + np.log(total)
    out = out_k if axis is None and a.data.ndim == 0 else np.squeeze(out_k, axis=axis) if axis is not None else out_k.reshape(())
    soft = shifted / total

    def vjp(g):
        if axis is None:
            return (soft * g,)
        return (soft * np.expand_dims(g, axis),)

    return _emit(a.tape, out, (a,), vjp)


def affine(x, w, b) -> Tensor:
    """x @ w + b for a (batch, in) input; the workhorse network layer."""
    x, w, b = _lift(x), _lift(w), _lift(b)
    tape = _tape_of(x, w, b)
    out = x.data @ w.data + b.data
    xd, wd = x.data, w.data

    def vjp(g):
        gb = g.sum(axis=0) if g.ndim == 2 else g
        if xd.ndim == 2:
            return g @ wd.T, xd.T @ g, gb
        return g @ wd.T, np.outer(xd, g), gb

    return _emit(tape, out, (x, w, b), vjp)


def gather(a, index) -> Tensor:
    """Pick one entry per row: out[i] = a[i, index[i]] (or a[index] for 1-D)."""
    a = _lift(a)
    idx = np.asarray(index)
    if idx.dtype.kind not in "iu":
        raise ValueError("gather index must be integer-valued")
    shape = a.shape
    if a.data.ndim == 2:
        rows = np.arange(shape[0])
        out = a.data[rows, idx]

        def vjp(g):
            ga = np.zeros(shape)
            np.add.at(ga, (rows, idx), g)
            return (ga,)

    elif a.data.ndim == 1:
        out = a.data[idx]

        def vjp(g):
            ga = np.zeros(shape)
            np.add.at(ga, idx, g)
            return (ga,)

    else:
        raise ValueError("gather supports 1-D and 2-D tensors only")
    return _emit(a.tape, out, (a,), vjp)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [_lift(t) for t in tensors]
    tape = _tape_of(*ts)
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _emit(tape, out, tuple(ts), vjp)


def reshape(a, shape) -> Tensor:
    a = _lift(a)
    out = a.data.reshape(shape)
    orig = a.shape

    def vjp(g):
        return (g.reshape(orig),)

    return _emit(a.tape, out, (a,), vjp)


def slice_cols(a, start: int, stop: int) -> Tensor:
    """Contiguous slice along the last axis."""
    a = _lift(a)
    out = a.data[..., start:stop].copy()
    shape = a.shape

    def vjp(g):
        ga = np.zeros(shape)
        ga[..., start:stop] = g
        return (ga,)

    return _emit(a.tape, out, (a,), vjp)


def normal_cdf(a) -> Tensor:
    """Standard normal CDF; the smooth link for threshold models."""
    a = _lift(a)
    out = _ndtr(a.data)
    ad = a.data

    def vjp(g):
        return (g * np.exp(-0.5 * ad * ad - _HALF_LOG_2PI),)

    return _emit(a.tape, out, (a,), vjp)


def normal_log_cdf(a) -> Tensor:
    """log of the standard normal CDF, stable in the lower tail."""
    a = _lift(a)
    out = _log_ndtr(a.data)
    ad = a.data

    def vjp(g):
        return (g * np.exp(-0.5 * ad * ad - _HALF_LOG_2PI - out),)

    return _emit(a.tape, out, (a,), vjp)


def grad(output: Tensor, wrt: Iterable[Tensor]) -> List[np.ndarray]:
    """Exact reverse-mode gradients of a recorded scalar output.

    Replaying the same tape yields bit-identical gradients: the backward
    walk is a fixed reverse traversal of the recorded op list.
    """
    wrt = list(wrt)
    if output.tape is None or output.node is None:
        raise ValueError("output is not recorded on a tape")
    if output.data.size != 1:
        raise ValueError(f"grad requires a scalar output, got shape {output.shape}")
    tape = output.tape
    for t in wrt:
        if t.tape is not tape or t.node is None:
            raise ValueError("a wrt tensor is not a node on the output's tape")

    adjoint = {output.node: np.ones_like(output.data)}
    for out_id, parents, vjp in reversed(tape._records):
        g = adjoint.get(out_id)
        if g is None:
            continue
        contribs = vjp(g)
        for pid, contrib in zip(parents, contribs):
            if pid is None or contrib is None:
                continue
            acc = adjoint.get(pid)
            adjoint[pid] = contrib if acc is None else acc + contrib
    return [adjoint.get(t.node, np.zeros_like(t.data)) for t in wrt]


def finite_difference_check(f: Callable[[Tensor], Tensor], x: np.ndarray, step: float) -> float:
    """Max relative error between reverse-mode and central differences.

    ``f`` maps a leaf tensor to a recorded scalar; it is re-invoked with
    perturbed plain inputs for the central differences, so any randomness
    inside must be frozen by the caller (common random numbers).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=np.float64)

    tape = Tape()
    leaf = tape.leaf(x)
    out = f(leaf)
    if not np.all(np.isfinite(out.data)):
        raise NumericError("objective returned a non-finite value", term=out.data)
    (g,) = grad(out, [leaf])

    def value_at(v: np.ndarray) -> float:
        t = Tape()
        val = f(t.leaf(v)).data
        if not np.all(np.isfinite(val)):
            raise NumericError("objective returned a non-finite value", term=val)
        return float(val.reshape(()))

    worst = 0.0
    flat = x.reshape(-1)
    for i in range(flat.size):
        bump = np.zeros_like(flat)
        bump[i] = step
        hi = value_at((flat + bump).reshape(x.shape))
        lo = value_at((flat - bump).reshape(x.shape))
        central = (hi - lo) / (2.0 * step)
        err = abs(g.reshape(-1)[i] - central) / (abs(central) + 1e-12)
        worst = max(worst, err)
    return worst
