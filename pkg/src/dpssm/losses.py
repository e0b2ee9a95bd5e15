"""Training loss and image-quality metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .numeric import dft2

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


@dataclass(frozen=True)
class LossConfig:
    lambda1: float = 1.0
    lambda2: float = 0.5
    lambda3: float = 0.001

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ValueError("loss weights must be non-negative")


def _check_same(a_shape, b_shape):
    if tuple(a_shape) != tuple(b_shape):
        raise ValueError(f"shape mismatch: {tuple(a_shape)} vs {tuple(b_shape)}")


def total_loss_var(target, pred, cfg: LossConfig = LossConfig()):
    """Differentiable L1 + L2 + spectral-L1 loss; returns ``(total, terms)`` as Vars."""
    target, pred = ag.as_var(target), ag.as_var(pred)
    _check_same(target.shape, pred.shape)
    diff = pred - target
    l1 = ag.mean(ag.abs(diff))
    l2 = ag.mean(ag.square(diff))
    lfft = ag.spectral_l1(diff)
    total = l1 * cfg.lambda1 + l2 * cfg.lambda2 + lfft * cfg.lambda3
    return total, {"l1": l1, "l2": l2, "fft": lfft}


def total_loss(target, pred, cfg: LossConfig = LossConfig()) -> float:
    return float(total_loss_var(target, pred, cfg)[0].data)


def loss_terms(target, pred, cfg: LossConfig = LossConfig()) -> dict[str, float]:
    total, terms = total_loss_var(target, pred, cfg)
    out = {k: float(v.data) for k, v in terms.items()}
    out["total"] = float(total.data)
    return out


def psnr(target, pred, max_val: float = 1.0) -> float:
    """PSNR over all channels jointly, capped at 100 dB."""
    target, pred = np.asarray(target, dtype=np.float64), np.asarray(pred, dtype=np.float64)
    _check_same(target.shape, pred.shape)
    mse = float(np.mean((target - pred) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(max_val ** 2 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable valid correlation over the last two axes
    k = g.size
    h, w = img.shape[-2:]
    rows = sum(g[i] * img[..., i:i + h - k + 1, :] for i in range(k))
    return sum(g[j] * rows[..., :, j:j + w - k + 1] for j in range(k))


def _as_chw(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x[None] if x.ndim == 2 else x


def ssim(target, pred, data_range: float = 1.0) -> float:
    """Windowed SSIM (11x11 Gaussian, sigma 1.5), averaged over valid windows and channels."""
    x, y = _as_chw(target), _as_chw(pred)
    _check_same(x.shape, y.shape)
    if min(x.shape[-2:]) < SSIM_WINDOW:
        raise ValueError(f"SSIM needs H, W >= {SSIM_WINDOW}, got {x.shape[-2:]}")
    g = gaussian_window()
    c1, c2 = (SSIM_K1 * data_range) ** 2, (SSIM_K2 * data_range) ** 2
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ssim_var(target, pred, data_range: float = 1.0):
    """Differentiable SSIM for (C, H, W) inputs, same definition as :func:`ssim`."""
    x, y = ag.as_var(target), ag.as_var(pred)
    _check_same(x.shape, y.shape)
    c = x.shape[0]
    g = gaussian_window()
    w = np.broadcast_to(np.outer(g, g), (c, 1, SSIM_WINDOW, SSIM_WINDOW)).copy()

    def filt(v):
        return ag.conv2d(v, w, None, 1, 0, groups=c)
    c1, c2 = (SSIM_K1 * data_range) ** 2, (SSIM_K2 * data_range) ** 2
    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    num = (2.0 * mx * my + c1) * (2.0 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return ag.mean(num / den)


# --------------------------------------------------------------------------
# frequency analysis

def radial_bins(h: int, w: int, n_bins: int) -> np.ndarray:
    """Band index of every DFT bin by normalized radial frequency in [0, 1]."""
    fy = np.minimum(np.arange(h), h - np.arange(h)) / h
    fx = np.minimum(np.arange(w), w - np.arange(w)) / w
    r = np.sqrt(fy[:, None] ** 2 + fx[None, :] ** 2) / math.sqrt(0.5)
    return np.minimum((r * n_bins).astype(int), n_bins - 1)


def spectrum_gap(target, pred, n_bins: int = 16) -> dict[str, np.ndarray]:
    """Radially averaged |mean |DFT(target)| - mean |DFT(pred)||, one value per band.

    Returns ``freq`` (band centers), ``gap`` and ``count`` (DFT bins per band).
    """
    x, y = _as_chw(target), _as_chw(pred)
    _check_same(x.shape, y.shape)
    sx = np.abs(dft2(x)).mean(axis=0)
    sy = np.abs(dft2(y)).mean(axis=0)
    band = radial_bins(x.shape[-2], x.shape[-1], n_bins)
    diff = np.abs(sx - sy)
    count = np.bincount(band.ravel(), minlength=n_bins)
    total = np.bincount(band.ravel(), weights=diff.ravel(), minlength=n_bins)
    gap = np.where(count > 0, total / np.maximum(count, 1), 0.0)
    freq = (np.arange(n_bins) + 0.5) / n_bins
    return {"freq": freq, "gap": gap, "count": count}
