"""Diagonal selective state space model: discretization, scans and gradients.

Shapes follow the Mamba convention::

    x, delta : (batch, L, D_inner)
    B, C     : (batch, L, N)
    A        : (D_inner, N), strictly negative
    D        : (D_inner,)

The recurrence per lane (batch b, channel d) is

    h_i = exp(delta_i * A) * h_{i-1} + Bbar_i * x_i
    y_i = <C_i, h_i> + D * x_i
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

SERIES_THRESHOLD = 1e-8
_GRAD_SERIES_THRESHOLD = 1e-3


@dataclass
class SsmParams:
    A: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=np.float64)
        self.D = np.asarray(self.D, dtype=np.float64)
        if self.A.ndim != 2 or self.D.shape != (self.A.shape[0],):
            raise ValueError(f"A must be (D_inner, N) and D (D_inner,), got {self.A.shape}, {self.D.shape}")

    @property
    def d_inner(self) -> int:
        return self.A.shape[0]

    @property
    def state_dim(self) -> int:
        return self.A.shape[1]

    @classmethod
    def s4d_real(cls, d_inner: int, state_dim: int) -> "SsmParams":
        """a_{d,n} = -(n+1), D = 1."""
        A = -np.tile(np.arange(1, state_dim + 1, dtype=np.float64), (d_inner, 1))
        return cls(A, np.ones(d_inner))


@dataclass
class ScanInputs:
    x: np.ndarray
    delta: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        for name in ("x", "delta", "B", "C"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))


@dataclass
class ScanOutput:
    y: np.ndarray
    h_last: np.ndarray | None = None
    states: np.ndarray | None = None  # (batch, L, D_inner, N) when requested


@dataclass
class ScanGrads:
    x: np.ndarray
    delta: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    h0: np.ndarray | None = None


def validate(params: SsmParams, inputs: ScanInputs) -> tuple[int, int, int, int]:
    x, dt, B, C = inputs.x, inputs.delta, inputs.B, inputs.C
    if x.ndim != 3:
        raise ValueError(f"x must be (batch, L, D_inner), got {x.shape}")
    b, L, d = x.shape
    n = params.state_dim
    if L < 1:
        raise ValueError("sequence length must be >= 1")
    if d != params.d_inner:
        raise ValueError(f"x has D_inner={d}, params have {params.d_inner}")
    if dt.shape != x.shape:
        raise ValueError(f"delta shape {dt.shape} != x shape {x.shape}")
    if B.shape != (b, L, n) or C.shape != (b, L, n):
        raise ValueError(f"B and C must be {(b, L, n)}, got {B.shape}, {C.shape}")
    if not np.all(dt > 0):
        raise ValueError("delta must be strictly positive")
    return b, L, d, n


# --------------------------------------------------------------------------
# discretization

def _zoh_gain(dA: np.ndarray, delta: np.ndarray, A: np.ndarray, mode: str) -> np.ndarray:
    """Bbar / B, elementwise: expm1(delta*a)/a, or delta for the Euler form."""
    if mode == "simplified":
        return np.broadcast_to(delta, dA.shape).copy()
    if mode != "exact":
        raise ValueError(f"unknown ZOH mode {mode!r}")
    small = np.abs(dA) < SERIES_THRESHOLD
    safe_a = np.where(small, 1.0, A)
    exact = np.expm1(dA) / safe_a
    series = delta * (1.0 + 0.5 * dA)
    return np.where(small, series, exact)


def discretize_zoh(A, delta, B, mode: str = "exact") -> tuple[np.ndarray, np.ndarray]:
    """Zero-order-hold discretization of a diagonal system, elementwise.

    Returns ``(Abar, Bbar)`` with ``Abar = exp(delta*A)`` and
    ``Bbar = (exp(delta*A) - 1)/A * B``. For ``|delta*A| < 1e-8`` the
    second-order series ``delta*B*(1 + delta*A/2)`` is used instead.
    ``mode="simplified"`` gives the Euler form ``Bbar = delta*B``.
    """
    A = np.asarray(A, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if not np.all(delta > 0):
        raise ValueError("delta must be strictly positive")
    dA = delta * A
    return np.exp(dA), _zoh_gain(dA, delta, A, mode) * B


def _discretize_inputs(params: SsmParams, inputs: ScanInputs, mode: str):
    """Per-step transition (Abar) and drive (Bbar * x), both (batch, L, D_inner, N)."""
    dt = inputs.delta[..., None]
    A = params.A
    dA = dt * A
    abar = np.exp(dA)
    gain = _zoh_gain(dA, dt, A, mode)
    bx = gain * inputs.B[:, :, None, :] * inputs.x[..., None]
    return abar, bx, gain


def _readout(states: np.ndarray, C: np.ndarray, D: np.ndarray, x: np.ndarray) -> np.ndarray:
    # fixed summation order over N keeps results independent of batching
    y = D * x
    for n in range(states.shape[-1]):
        y = y + C[:, :, None, n] * states[..., n]
    return y


# --------------------------------------------------------------------------
# linear recurrence kernels

def recurrence_sequential(a: np.ndarray, b: np.ndarray, h0: np.ndarray | None = None) -> np.ndarray:
    """h_i = a_i * h_{i-1} + b_i along axis 1."""
    out = np.empty_like(b)
    h = np.zeros_like(b[:, 0]) if h0 is None else h0
    for i in range(b.shape[1]):
        h = a[:, i] * h + b[:, i]
        out[:, i] = h
    return out


def combine(p, q):
    """Associative operator for the affine maps h -> a*h + b: apply p, then q."""
    a1, b1 = p
    a2, b2 = q
    return a2 * a1, a2 * b1 + b2


def blelloch_scan(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Work-efficient up/down-sweep scan over axis 0 of (L, ...) arrays.

    Returns the inclusive recurrence h_i = a_i * h_{i-1} + b_i with h_0 = 0.
    Non-power-of-two lengths are padded with the identity element (1, 0).
    """
    L = b.shape[0]
    P = 1 << (L - 1).bit_length()
    aa = np.ones((P,) + b.shape[1:])
    bb = np.zeros_like(aa)
    aa[:L] = a
    bb[:L] = b

    step = 2
    while step <= P:
        a_r, b_r = aa[step - 1::step], bb[step - 1::step]
        a_l, b_l = aa[step // 2 - 1::step], bb[step // 2 - 1::step]
        b_r += a_r * b_l
        a_r *= a_l
        step *= 2

    aa[P - 1] = 1.0
    bb[P - 1] = 0.0
    step = P
    while step >= 2:
        a_r, b_r = aa[step - 1::step], bb[step - 1::step]
        a_l, b_l = aa[step // 2 - 1::step], bb[step // 2 - 1::step]
        ta, tb = a_l.copy(), b_l.copy()
        a_l[...] = a_r
        b_l[...] = b_r
        b_r *= ta
        b_r += tb
        a_r *= ta
        step //= 2

    # exclusive prefix -> inclusive state
    return a * bb[:L] + b


def default_workers() -> int:
    """Worker count from ``DPSSM_THREADS``; a comma list (as used by bench-scan) means its maximum."""
    try:
        return max(1, *(int(v) for v in os.environ.get("DPSSM_THREADS", "1").split(",") if v.strip()))
    except ValueError:
        return 1


def recurrence_parallel(a: np.ndarray, b: np.ndarray, h0: np.ndarray | None = None,
                        workers: int | None = None) -> np.ndarray:
    """Same contract as :func:`recurrence_sequential` for (batch, L, D, N) arrays.

    Lanes (batch x D) are split across ``workers`` threads; each lane runs a
    Blelloch scan. Results do not depend on the worker count.
    """
    bsz, L, d, n = b.shape
    if h0 is not None:
        b = b.copy()
        b[:, 0] = a[:, 0] * h0 + b[:, 0]
    # sequence-major, one column per (batch, channel, state) lane
    la = a.transpose(1, 0, 2, 3).reshape(L, bsz * d * n)
    lb = b.transpose(1, 0, 2, 3).reshape(L, bsz * d * n)
    lanes = bsz * d
    workers = default_workers() if workers is None else max(1, int(workers))
    workers = min(workers, lanes)
    if workers == 1:
        h = blelloch_scan(la, lb)
    else:
        bounds = np.linspace(0, lanes, workers + 1).astype(int) * n
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda s: blelloch_scan(la[:, s[0]:s[1]], lb[:, s[0]:s[1]]),
                                  zip(bounds[:-1], bounds[1:])))
        h = np.concatenate(parts, axis=1)
    return h.reshape(L, bsz, d, n).transpose(1, 0, 2, 3)


# --------------------------------------------------------------------------
# scans

def _scan(params, inputs, h0, mode, return_states, recurrence):
    b, L, d, n = validate(params, inputs)
    abar, bx, _ = _discretize_inputs(params, inputs, mode)
    if h0 is not None:
        h0 = np.broadcast_to(np.asarray(h0, dtype=np.float64), (b, d, n))
    states = recurrence(abar, bx, h0)
    y = _readout(states, inputs.C, params.D, inputs.x)
    if not np.all(np.isfinite(y)):
        raise FloatingPointError("non-finite scan output")
    return ScanOutput(y=y, h_last=states[:, -1].copy(), states=states if return_states else None)


def scan_sequential(params: SsmParams, inputs: ScanInputs, h0=None, mode: str = "exact",
                    return_states: bool = False) -> ScanOutput:
    """Reference step-by-step recurrence."""
    return _scan(params, inputs, h0, mode, return_states, recurrence_sequential)


def scan_parallel(params: SsmParams, inputs: ScanInputs, h0=None, mode: str = "exact",
                  return_states: bool = False, workers: int | None = None) -> ScanOutput:
    """Blelloch-scan evaluation of the same recurrence as :func:`scan_sequential`."""
    def rec(a, b, h):
        return recurrence_parallel(a, b, h, workers)
    return _scan(params, inputs, h0, mode, return_states, rec)


def scan(params, inputs, h0=None, mode="exact", method="sequential", return_states=False, workers=None):
    if method == "sequential":
        return scan_sequential(params, inputs, h0, mode, return_states)
    if method == "parallel":
        return scan_parallel(params, inputs, h0, mode, return_states, workers)
    raise ValueError(f"unknown scan method {method!r}")


# --------------------------------------------------------------------------
# reverse mode

def _zoh_gain_grads(dA, delta, A, mode):
    """d(gain)/d(delta) and d(gain)/d(A) for the gain of :func:`_zoh_gain`."""
    if mode == "simplified":
        return np.ones_like(dA), np.zeros_like(dA)
    e = np.exp(dA)
    d_delta = e
    small = np.abs(dA) < _GRAD_SERIES_THRESHOLD
    safe_a = np.where(small, 1.0, A)
    exact = (delta * e - np.expm1(dA) / safe_a) / safe_a
    # gain = delta + a delta^2/2 + a^2 delta^3/6 + a^3 delta^4/24 + ...
    series = delta ** 2 * (0.5 + dA / 3.0 + dA ** 2 / 8.0)
    return d_delta, np.where(small, series, exact)


def scan_backward(params: SsmParams, inputs: ScanInputs, upstream: np.ndarray, h0=None,
                  mode: str = "exact", states: np.ndarray | None = None,
                  method: str = "sequential", workers: int | None = None) -> ScanGrads:
    """Analytic gradients of sum(upstream * y) w.r.t. every scan input.

    ``states`` are the cached hidden states from a forward pass with
    ``return_states=True``; they are recomputed when omitted.
    """
    b, L, d, n = validate(params, inputs)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != inputs.x.shape:
        raise ValueError(f"upstream shape {upstream.shape} != y shape {inputs.x.shape}")
    dt = inputs.delta[..., None]
    A = params.A
    dA = dt * A
    abar = np.exp(dA)
    gain = _zoh_gain(dA, dt, A, mode)
    if states is None:
        bx = gain * inputs.B[:, :, None, :] * inputs.x[..., None]
        h0b = None if h0 is None else np.broadcast_to(np.asarray(h0, dtype=np.float64), (b, d, n))
        states = recurrence_sequential(abar, bx, h0b)
    elif states.shape != (b, L, d, n):
        raise ValueError(f"cached states have shape {states.shape}, expected {(b, L, d, n)}")

    x, Bm, Cm = inputs.x, inputs.B, inputs.C
    gx = params.D * upstream
    gD = np.sum(upstream * x, axis=(0, 1))
    gC = np.einsum("bld,bldn->bln", upstream, states)

    # dL/dh_i = C_i dy_i + Abar_{i+1} dL/dh_{i+1}
    drive = Cm[:, :, None, :] * upstream[..., None]
    a_next = np.concatenate([abar[:, 1:], np.zeros_like(abar[:, :1])], axis=1)
    rev = (slice(None), slice(None, None, -1))
    if method == "parallel":
        g = recurrence_parallel(a_next[rev], drive[rev], None, workers)[rev]
    else:
        g = recurrence_sequential(a_next[rev], drive[rev])[rev]

    h_prev = np.concatenate([np.zeros_like(states[:, :1]) if h0 is None else
                             np.broadcast_to(np.asarray(h0, dtype=np.float64), (b, d, n))[:, None],
                             states[:, :-1]], axis=1)
    g_abar = g * h_prev
    g_bx = g
    bmat = Bm[:, :, None, :]
    gx = gx + np.sum(g_bx * gain * bmat, axis=-1)
    g_gain = g_bx * bmat * x[..., None]
    gB = np.sum(g_bx * gain * x[..., None], axis=2)

    dgain_ddelta, dgain_dA = _zoh_gain_grads(dA, dt, A, mode)
    gdelta = np.sum(g_abar * abar * A + g_gain * dgain_ddelta, axis=-1)
    gA = np.sum(g_abar * abar * dt + g_gain * dgain_dA, axis=(0, 1))
    gh0 = None
    if h0 is not None:
        gh0 = abar[:, 0] * g[:, 0]
    return ScanGrads(x=gx, delta=gdelta, A=gA, B=gB, C=gC, D=gD, h0=gh0)
