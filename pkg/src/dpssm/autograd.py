"""Minimal tape-based reverse-mode differentiation over numpy arrays.

Operations executed inside ``with Tape() as tape:`` are recorded when any
input requires a gradient; ``tape.backward(out)`` replays the records in
reverse and accumulates ``.grad`` on leaf variables.

    w = Var(np.ones(3), requires_grad=True)
    with Tape() as tape:
        loss = ops.sum(ops.square(w * 2.0))
    tape.backward(loss)
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import numeric, ssm

_ACTIVE: list["Tape"] = []


class Var:
    __slots__ = ("data", "grad", "requires_grad", "name", "_produced")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._produced = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Var(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __rtruediv__(self, o): return div(o, self)
    def __neg__(self): return mul(self, -1.0)
    def __matmul__(self, o): return matmul(self, o)
    def __getitem__(self, idx): return getitem(self, idx)


@dataclass
class _Record:
    out: Var
    inputs: tuple[Var, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def backward(self, out: Var, grad: np.ndarray | None = None) -> None:
        if not out._produced or not self.records:
            raise RuntimeError("nothing recorded on this tape for the given output")
        grads: dict[int, np.ndarray] = {
            id(out): np.ones_like(out.data) if grad is None else np.asarray(grad, dtype=np.float64)}
        for rec in reversed(self.records):
            g = grads.pop(id(rec.out), None)
            if g is None:
                continue
            for inp, ig in zip(rec.inputs, rec.backward(g)):
                if ig is None or not inp.requires_grad:
                    continue
                if inp._produced:
                    key = id(inp)
                    grads[key] = grads[key] + ig if key in grads else ig
                else:
                    inp.grad = ig.copy() if inp.grad is None else inp.grad + ig


def current_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _make(data: np.ndarray, inputs: Sequence[Var], backward) -> Var:
    if not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite values produced")
    out = Var(data)
    tape = current_tape()
    if tape is not None and any(v.requires_grad for v in inputs):
        out.requires_grad = True
        out._produced = True
        tape.records.append(_Record(out, tuple(inputs), backward))
    return out


def unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# --------------------------------------------------------------------------
# elementwise

def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return _make(a.data / b.data, (a, b),
                 lambda g: (unbroadcast(g / b.data, a.shape),
                            unbroadcast(-g * a.data / b.data ** 2, b.shape)))


def exp(a) -> Var:
    a = as_var(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Var:
    a = as_var(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def square(a) -> Var:
    a = as_var(a)
    return _make(a.data ** 2, (a,), lambda g: (2.0 * g * a.data,))


def sqrt(a) -> Var:
    a = as_var(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (0.5 * g / out,))


def abs(a) -> Var:  # noqa: A001
    a = as_var(a)
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def sigmoid(a) -> Var:
    a = as_var(a)
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),))


def silu(a) -> Var:
    a = as_var(a)
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(a.data * s, (a,), lambda g: (g * (s + a.data * s * (1.0 - s)),))


def softplus(a) -> Var:
    a = as_var(a)
    out = np.logaddexp(0.0, a.data)
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(out, (a,), lambda g: (g * s,))


def leaky_relu(a, slope: float = 0.2) -> Var:
    a = as_var(a)
    m = np.where(a.data > 0, 1.0, slope)
    return _make(a.data * m, (a,), lambda g: (g * m,))


# --------------------------------------------------------------------------
# reductions and shape

def sum(a, axis=None, keepdims: bool = False) -> Var:  # noqa: A001
    a = as_var(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)
    return _make(np.asarray(out), (a,), back)


def mean(a, axis=None, keepdims: bool = False) -> Var:
    a = as_var(a)
    count = a.data.size / np.asarray(np.sum(a.data, axis=axis, keepdims=keepdims)).size
    return mul(sum(a, axis, keepdims), 1.0 / count)


def reshape(a, shape) -> Var:
    a = as_var(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes) -> Var:
    a = as_var(a)
    inv = np.argsort(axes)
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def getitem(a, idx) -> Var:
    a = as_var(a)

    def back(g):
        out = np.zeros_like(a.data)
        out[idx] += g
        return (out,)
    return _make(a.data[idx], (a,), back)


def concat(vs: Sequence, axis: int = 0) -> Var:
    vs = [as_var(v) for v in vs]
    sizes = np.cumsum([v.shape[axis] for v in vs])[:-1]
    return _make(np.concatenate([v.data for v in vs], axis=axis), vs,
                 lambda g: tuple(np.split(g, sizes, axis=axis)))


def matmul(a, b) -> Var:
    a, b = as_var(a), as_var(b)

    def back(g):
        if b.ndim == 1:
            ga = np.multiply.outer(g, b.data)
            gb = np.tensordot(a.data, g, axes=(tuple(range(a.ndim - 1)), tuple(range(g.ndim))))
            return ga, gb
        if a.ndim == 1:
            return g @ b.data.T, np.outer(a.data, g)
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)
    return _make(a.data @ b.data, (a, b), back)


# --------------------------------------------------------------------------
# image ops

def conv2d(x, w, b=None, stride: int = 1, padding: int | str = "same", groups: int = 1) -> Var:
    x, w = as_var(x), as_var(w)
    pad = (w.shape[2] - 1) // 2 if padding == "same" else int(padding)
    inputs = (x, w) if b is None else (x, w, as_var(b))
    out = numeric.conv2d_raw(x.data, w.data, None if b is None else inputs[2].data, stride, pad, groups)

    def back(g):
        gx = numeric.conv2d_grad_input(g, w.data, x.shape, stride, pad, groups) if x.requires_grad else None
        gw = numeric.conv2d_grad_weight(g, x.data, w.shape, stride, pad, groups) if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(1, 2))
    return _make(out, inputs, back)


def pixel_shuffle(x, r: int) -> Var:
    x = as_var(x)
    return _make(numeric.pixel_shuffle(x.data, r), (x,), lambda g: (numeric.pixel_unshuffle(g, r),))


def pixel_unshuffle(x, r: int) -> Var:
    x = as_var(x)
    return _make(numeric.pixel_unshuffle(x.data, r), (x,), lambda g: (numeric.pixel_shuffle(g, r),))


def spectral_l1(d, method: str = "auto") -> Var:
    """Mean over bins (and leading axes) of |DFT2(d)|."""
    d = as_var(d)
    z = numeric.dft2(d.data, method)
    mag = np.abs(z)
    count = mag.size

    def back(g):
        unit = np.where(mag > 0, z / np.where(mag > 0, mag, 1.0), 0.0)
        return (float(g) * np.real(numeric.idft2_unnormalized(unit, method)) / count,)
    return _make(np.asarray(mag.mean()), (d,), back)


def log_softmax(a, axis: int = -1) -> Var:
    a = as_var(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    p = np.exp(out)
    return _make(out, (a,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


# --------------------------------------------------------------------------
# selective scan

def selective_scan(x, delta, A, B, C, D, mode: str = "exact", method: str = "parallel",
                   workers: int | None = None) -> Var:
    """Differentiable wrapper over :mod:`dpssm.ssm` (gradients from ``scan_backward``)."""
    x, delta, A, B, C, D = (as_var(v) for v in (x, delta, A, B, C, D))
    params = ssm.SsmParams(A.data, D.data)
    inputs = ssm.ScanInputs(x.data, delta.data, B.data, C.data)
    res = ssm.scan(params, inputs, mode=mode, method=method, return_states=True, workers=workers)

    def back(g):
        gr = ssm.scan_backward(params, inputs, g, mode=mode, states=res.states,
                               method=method, workers=workers)
        return gr.x, gr.delta, gr.A, gr.B, gr.C, gr.D
    return _make(res.y, (x, delta, A, B, C, D), back)
