"""Dense array kernels shared by every other module.

Arrays are plain ``numpy.ndarray`` in float64, laid out (C, H, W) for images.
Convolution follows the deep-learning convention (cross-correlation, zero
padding). All public functions raise ``FloatingPointError`` rather than return
NaN or Inf.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DTYPE = np.float64


def check_finite(arr: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {what}")
    return arr


def as_image(arr) -> np.ndarray:
    """Ingest an array as a (C, H, W) image with C in {1, 3}, clamped to [0, 1]."""
    img = np.asarray(arr, dtype=DTYPE)
    if img.ndim == 2:
        img = img[None]
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise ValueError(f"expected image of shape (1|3, H, W), got {img.shape}")
    check_finite(img, "image")
    return np.clip(img, 0.0, 1.0)


# --------------------------------------------------------------------------
# convolution

@dataclass
class Conv2dKernel:
    weight: np.ndarray  # (C_out, C_in // groups, k, k)
    bias: np.ndarray | None = None
    stride: int = 1
    padding: int | str = "same"
    groups: int = 1

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=DTYPE)
        if self.weight.ndim != 4 or self.weight.shape[2] != self.weight.shape[3]:
            raise ValueError(f"kernel weight must be (C_out, C_in, k, k), got {self.weight.shape}")
        if self.weight.shape[2] % 2 != 1:
            raise ValueError("kernel size must be odd")
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=DTYPE)

    @property
    def size(self) -> int:
        return self.weight.shape[2]

    @property
    def pad(self) -> int:
        if self.padding == "same":
            return (self.size - 1) // 2
        return int(self.padding)


def conv_output_size(n: int, k: int, pad: int, stride: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def _window(xp: np.ndarray, i: int, j: int, ho: int, wo: int, stride: int) -> np.ndarray:
    return xp[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride]


def _check_conv_shapes(x, w, groups):
    if x.ndim != 3:
        raise ValueError(f"conv2d input must be (C, H, W), got {x.shape}")
    c_in = x.shape[0]
    if c_in % groups or w.shape[0] % groups or w.shape[1] * groups != c_in:
        raise ValueError(f"conv2d shape mismatch: input {x.shape}, weight {w.shape}, groups={groups}")


def conv2d_raw(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None,
               stride: int = 1, pad: int = 0, groups: int = 1) -> np.ndarray:
    _check_conv_shapes(x, w, groups)
    c_out, cpg, k, _ = w.shape
    _, h, wd = x.shape
    ho, wo = conv_output_size(h, k, pad, stride), conv_output_size(wd, k, pad, stride)
    if ho < 1 or wo < 1:
        raise ValueError("conv2d output would be empty")
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad))) if pad else x
    out = np.zeros((c_out, ho, wo), dtype=DTYPE)
    opg = c_out // groups
    depthwise = groups > 1 and cpg == 1 and opg == 1
    for i in range(k):
        for j in range(k):
            patch = _window(xp, i, j, ho, wo, stride)
            if groups == 1:
                out += np.tensordot(w[:, :, i, j], patch, axes=(1, 0))
            elif depthwise:
                out += w[:, 0, i, j][:, None, None] * patch
            else:
                for g in range(groups):
                    out[g * opg:(g + 1) * opg] += np.tensordot(
                        w[g * opg:(g + 1) * opg, :, i, j], patch[g * cpg:(g + 1) * cpg], axes=(1, 0))
    if b is not None:
        out += b[:, None, None]
    return out


def conv2d_grad_input(g: np.ndarray, w: np.ndarray, in_shape, stride: int = 1,
                      pad: int = 0, groups: int = 1) -> np.ndarray:
    c_out, cpg, k, _ = w.shape
    c_in, h, wd = in_shape
    _, ho, wo = g.shape
    dxp = np.zeros((c_in, h + 2 * pad, wd + 2 * pad), dtype=DTYPE)
    opg = c_out // groups
    depthwise = groups > 1 and cpg == 1 and opg == 1
    for i in range(k):
        for j in range(k):
            view = _window(dxp, i, j, ho, wo, stride)
            if groups == 1:
                view += np.tensordot(w[:, :, i, j], g, axes=(0, 0))
            elif depthwise:
                view += w[:, 0, i, j][:, None, None] * g
            else:
                for gi in range(groups):
                    view[gi * cpg:(gi + 1) * cpg] += np.tensordot(
                        w[gi * opg:(gi + 1) * opg, :, i, j], g[gi * opg:(gi + 1) * opg], axes=(0, 0))
    if pad:
        return dxp[:, pad:pad + h, pad:pad + wd]
    return dxp


def conv2d_grad_weight(g: np.ndarray, x: np.ndarray, w_shape, stride: int = 1,
                       pad: int = 0, groups: int = 1) -> np.ndarray:
    c_out, cpg, k, _ = w_shape
    _, ho, wo = g.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad))) if pad else x
    dw = np.zeros(w_shape, dtype=DTYPE)
    opg = c_out // groups
    depthwise = groups > 1 and cpg == 1 and opg == 1
    for i in range(k):
        for j in range(k):
            patch = _window(xp, i, j, ho, wo, stride)
            if groups == 1:
                dw[:, :, i, j] = np.tensordot(g, patch, axes=([1, 2], [1, 2]))
            elif depthwise:
                dw[:, 0, i, j] = np.sum(g * patch, axis=(1, 2))
            else:
                for gi in range(groups):
                    dw[gi * opg:(gi + 1) * opg, :, i, j] = np.tensordot(
                        g[gi * opg:(gi + 1) * opg], patch[gi * cpg:(gi + 1) * cpg], axes=([1, 2], [1, 2]))
    return dw


def conv2d(x: np.ndarray, kernel: Conv2dKernel) -> np.ndarray:
    """Cross-correlate a (C_in, H, W) array with ``kernel`` (zero padding)."""
    x = np.asarray(x, dtype=DTYPE)
    out = conv2d_raw(x, kernel.weight, kernel.bias, kernel.stride, kernel.pad, kernel.groups)
    return check_finite(out, "conv2d output")


# --------------------------------------------------------------------------
# Fourier transforms

def is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft_radix2(x: np.ndarray) -> np.ndarray:
    """Iterative decimation-in-time FFT along the last axis (length must be 2^k)."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if not is_pow2(n):
        raise ValueError(f"radix-2 FFT needs a power-of-two length, got {n}")
    lead = x.shape[:-1]
    a = x[..., _bit_reverse_indices(n)]
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)
        a = a.reshape(*lead, n // size, size)
        even = a[..., :half]
        odd = a[..., half:] * tw
        a = np.concatenate([even + odd, even - odd], axis=-1)
        size *= 2
    return a.reshape(*lead, n)


def dft_naive(x: np.ndarray) -> np.ndarray:
    """O(n^2) DFT along the last axis."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    k = np.arange(n)
    mat = np.exp(-2j * np.pi * np.outer(k, k) / n)
    return x @ mat.T


def _dft_axis(x: np.ndarray, method: str) -> np.ndarray:
    n = x.shape[-1]
    if method == "fft" or (method == "auto" and is_pow2(n)):
        return fft_radix2(x)
    if method in ("auto", "naive"):
        return dft_naive(x)
    raise ValueError(f"unknown DFT method {method!r}")


def dft2(x: np.ndarray, method: str = "auto") -> np.ndarray:
    """Unnormalized 2-D DFT over the last two axes.

    ``method`` is ``"auto"`` (radix-2 where the axis length allows, naive
    otherwise), ``"fft"`` or ``"naive"``.
    """
    x = np.asarray(x)
    if x.ndim < 2 or x.shape[-1] < 1 or x.shape[-2] < 1:
        raise ValueError(f"dft2 needs at least a 2-D array, got {x.shape}")
    out = _dft_axis(x, method)
    out = np.swapaxes(_dft_axis(np.swapaxes(out, -1, -2), method), -1, -2)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite values in dft2 output")
    return out


def idft2_unnormalized(z: np.ndarray, method: str = "auto") -> np.ndarray:
    """Sum_k z_k exp(+i...), the adjoint of :func:`dft2`."""
    return np.conj(dft2(np.conj(z), method))


# --------------------------------------------------------------------------
# pooling and sub-pixel rearrangement

def global_avg_pool(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 3 or x.shape[1] * x.shape[2] < 1:
        raise ValueError(f"global_avg_pool needs (C, H, W) with H*W >= 1, got {x.shape}")
    return x.mean(axis=(1, 2), keepdims=True)


def pixel_shuffle(x: np.ndarray, r: int) -> np.ndarray:
    c, h, w = x.shape
    if c % (r * r):
        raise ValueError(f"channel count {c} not divisible by r^2={r * r}")
    co = c // (r * r)
    return x.reshape(co, r, r, h, w).transpose(0, 3, 1, 4, 2).reshape(co, h * r, w * r)


def pixel_unshuffle(x: np.ndarray, r: int) -> np.ndarray:
    c, h, w = x.shape
    if h % r or w % r:
        raise ValueError(f"spatial size {h}x{w} not divisible by r={r}")
    return x.reshape(c, h // r, r, w // r, r).transpose(0, 2, 4, 1, 3).reshape(c * r * r, h // r, w // r)
