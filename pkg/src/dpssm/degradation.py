"""Synthetic degradations following the composite formation model

    I = clamp01( Q( (alpha * J + beta * gamma) (*) K ) + eta )

where alpha is illumination, gamma an additive artifact pattern weighted by
beta, K a normalized blur kernel, Q a uniform quantizer and eta Gaussian noise.
Everything is deterministic given the spec's seed.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from .numeric import as_image

ARTIFACTS = ("none", "rain", "snow", "haze")
BLURS = ("delta", "box", "gaussian", "motion")
CLASS_LABELS = ("lowlight", "haze", "rain", "snow", "blur", "noise", "jpeg")


@dataclass
class DegradationSpec:
    label: str = "identity"
    seed: int = 0
    alpha: float = 1.0
    alpha_end: float | None = None  # horizontal ramp alpha -> alpha_end when set
    beta: float = 0.0
    artifact: str = "none"
    artifact_density: float = 0.0  # streaks / flakes per pixel
    artifact_length: float = 9.0
    artifact_angle: float = 0.0  # degrees from vertical
    artifact_radius: float = 1.5
    blur: str = "delta"
    blur_size: int = 1
    blur_sigma: float = 0.0
    blur_angle: float = 0.0
    quant_levels: int = 256
    noise_sigma: float = 0.0

    def validate(self) -> "DegradationSpec":
        for a in (self.alpha,) + (() if self.alpha_end is None else (self.alpha_end,)):
            if not 0.0 < a <= 1.0:
                raise ValueError(f"alpha must lie in (0, 1], got {a}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if self.artifact not in ARTIFACTS:
            raise ValueError(f"unknown artifact {self.artifact!r}")
        if self.blur not in BLURS:
            raise ValueError(f"unknown blur {self.blur!r}")
        if not 2 <= int(self.quant_levels) <= 256:
            raise ValueError(f"quant_levels must be in [2, 256], got {self.quant_levels}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationSpec":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown DegradationSpec fields: {sorted(unknown)}")
        return cls(**d).validate()


@dataclass
class LabeledSample:
    clean: np.ndarray
    degraded: np.ndarray
    spec: DegradationSpec
    source: int = -1  # index into the clean-image list, -1 if unknown


# --------------------------------------------------------------------------
# components

def blur_kernel(spec: DegradationSpec) -> np.ndarray:
    if spec.blur == "delta":
        k = np.ones((1, 1))
    elif spec.blur == "box":
        s = int(spec.blur_size) | 1
        k = np.ones((s, s))
    elif spec.blur == "gaussian":
        if spec.blur_sigma <= 0:
            return np.ones((1, 1))
        r = int(math.ceil(3.0 * spec.blur_sigma))
        ax = np.arange(-r, r + 1)
        g = np.exp(-(ax ** 2) / (2.0 * spec.blur_sigma ** 2))
        k = np.outer(g, g)
    else:  # motion
        length = max(1, int(spec.blur_size))
        r = length // 2
        k = np.zeros((2 * r + 1, 2 * r + 1))
        th = math.radians(spec.blur_angle)
        for t in np.linspace(-(length - 1) / 2, (length - 1) / 2, 4 * length):
            k[int(round(r - t * math.sin(th))), int(round(r + t * math.cos(th)))] += 1.0
    return k / k.sum()


def illumination(spec: DegradationSpec, h: int, w: int) -> np.ndarray:
    if spec.alpha_end is None:
        return np.full((h, w), float(spec.alpha))
    return np.tile(np.linspace(spec.alpha, spec.alpha_end, w), (h, 1))


def _rngs(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    a, b = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(a), np.random.default_rng(b)


def artifact_pattern(spec: DegradationSpec, h: int, w: int) -> np.ndarray:
    """Additive artifact field gamma(x) in [0, 1], shared by all channels."""
    if spec.artifact == "none":
        return np.zeros((h, w))
    if spec.artifact == "haze":
        return np.ones((h, w))
    rng, _ = _rngs(spec.seed)
    g = np.zeros((h, w))
    count = int(round(spec.artifact_density * h * w))
    if spec.artifact == "rain":
        th = math.radians(spec.artifact_angle)
        dy, dx = math.cos(th), math.sin(th)
        steps = np.linspace(0.0, spec.artifact_length, max(2, int(2 * spec.artifact_length)))
        for _ in range(count):
            y0, x0 = rng.uniform(0, h), rng.uniform(0, w)
            ys = np.round(y0 + steps * dy).astype(int)
            xs = np.round(x0 + steps * dx).astype(int)
            ok = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
            g[ys[ok], xs[ok]] = 1.0
    else:  # snow
        yy, xx = np.mgrid[0:h, 0:w]
        for _ in range(count):
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            rad = spec.artifact_radius * rng.uniform(0.6, 1.4)
            g[(yy - cy) ** 2 + (xx - cx) ** 2 <= rad ** 2] = 1.0
    return g


def blur(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Per-channel cross-correlation with half-sample symmetric padding."""
    if abs(kernel.sum() - 1.0) > 1e-12:
        raise ValueError("blur kernel must sum to 1")
    kh, kw = kernel.shape
    ry, rx = kh // 2, kw // 2
    if ry == 0 and rx == 0:
        return img * kernel[0, 0]
    c, h, w = img.shape
    if ry > h or rx > w:
        raise ValueError("blur kernel larger than the image")
    xp = np.pad(img, ((0, 0), (ry, ry), (rx, rx)), mode="symmetric")
    out = np.zeros_like(img)
    for i in range(kh):
        for j in range(kw):
            if kernel[i, j] != 0.0:
                out += kernel[i, j] * xp[:, i:i + h, j:j + w]
    return out


def quantize(v: np.ndarray, levels: int) -> np.ndarray:
    q = int(levels) - 1
    return np.round(np.clip(v, 0.0, 1.0) * q) / q


# --------------------------------------------------------------------------
# pipeline

def formation(J: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Pre-quantization field (alpha*J + beta*gamma) blurred by K."""
    spec.validate()
    J = as_image(J)
    _, h, w = J.shape
    field = illumination(spec, h, w) * J + spec.beta * artifact_pattern(spec, h, w)
    return blur(field, blur_kernel(spec))


def degrade(J: np.ndarray, spec: DegradationSpec, clamp: bool = True) -> np.ndarray:
    """Apply the full formation model; noise is added after quantization."""
    out = quantize(formation(J, spec), spec.quant_levels)
    if spec.noise_sigma > 0:
        _, noise_rng = _rngs(spec.seed)
        out = out + noise_rng.normal(0.0, spec.noise_sigma, size=out.shape)
    return np.clip(out, 0.0, 1.0) if clamp else out


# --------------------------------------------------------------------------
# corpora

DEFAULT_RECIPES: list[dict] = [
    {"label": "lowlight", "alpha": [0.2, 0.5]},
    {"label": "haze", "artifact": "haze", "alpha": [0.5, 0.7], "beta": [0.3, 0.5]},
    {"label": "rain", "artifact": "rain", "beta": [0.4, 0.8], "artifact_density": [0.002, 0.006],
     "artifact_length": [5.0, 11.0], "artifact_angle": [-20.0, 20.0]},
    {"label": "snow", "artifact": "snow", "beta": [0.6, 1.0], "artifact_density": [0.002, 0.008],
     "artifact_radius": [1.0, 2.0]},
    {"label": "blur", "blur": "gaussian", "blur_sigma": [1.0, 2.5]},
    {"label": "noise", "noise_sigma": [0.05, 0.2]},
    {"label": "jpeg", "quant_levels": [8, 24]},
]

THREE_CLASS_RECIPES: list[dict] = [
    {"label": "noise", "noise_sigma": 0.2},
    {"label": "lowlight", "alpha": 0.4},
    {"label": "blur", "blur": "gaussian", "blur_sigma": 2.0},
]

_INT_FIELDS = {"seed", "blur_size", "quant_levels"}


def sample_spec(recipe: dict, rng: np.random.Generator) -> DegradationSpec:
    """Draw a spec from a recipe; two-element lists are uniform ranges."""
    if "label" not in recipe:
        raise ValueError("recipe needs a 'label'")
    kw = {}
    for key, val in recipe.items():
        if isinstance(val, (list, tuple)):
            lo, hi = val
            kw[key] = int(rng.integers(int(lo), int(hi) + 1)) if key in _INT_FIELDS else float(rng.uniform(lo, hi))
        else:
            kw[key] = val
    kw["seed"] = int(rng.integers(0, 2 ** 31 - 1))
    return DegradationSpec.from_dict(kw)


def make_corpus(clean_images: Sequence[np.ndarray], class_recipes: Sequence[dict], count: int,
                seed: int) -> list[LabeledSample]:
    """Balanced labeled corpus: sample ``i`` uses recipe ``i % len(recipes)``.

    Each sample draws from its own generator seeded by ``(seed, i)``, so
    samples are independent of generation order.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    if count == 0:
        return []
    if not clean_images or not class_recipes:
        raise ValueError("make_corpus needs at least one clean image and one recipe")
    out = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        recipe = class_recipes[i % len(class_recipes)]
        src = int(rng.integers(len(clean_images)))
        clean = as_image(clean_images[src])
        spec = sample_spec(recipe, rng)
        out.append(LabeledSample(clean=clean, degraded=degrade(clean, spec), spec=spec, source=src))
    return out


def make_clean_images(n: int, size: int, seed: int, channels: int = 3) -> list[np.ndarray]:
    """Smooth synthetic scenes (gradients, rectangles, sinusoidal texture) in [0, 1]."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    imgs = []
    for _ in range(n):
        img = np.empty((channels, size, size))
        for c in range(channels):
            base = rng.uniform(0.3, 0.7) + 0.25 * rng.uniform(-1, 1) * xx + 0.25 * rng.uniform(-1, 1) * yy
            fy, fx = rng.uniform(2, 6, size=2)
            base += 0.1 * np.sin(2 * np.pi * (fy * yy + fx * xx) + rng.uniform(0, 2 * np.pi))
            img[c] = base
        for _ in range(int(rng.integers(2, 5))):
            y0, x0 = rng.integers(0, size - 4, size=2)
            hh, ww = rng.integers(3, size // 2, size=2)
            img[:, y0:y0 + hh, x0:x0 + ww] += rng.uniform(-0.3, 0.3, size=(channels, 1, 1))
        imgs.append(np.clip(img, 0.0, 1.0))
    return imgs
