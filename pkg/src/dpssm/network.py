"""U-shaped restoration network built from degradation-prompted scan blocks.

Layout for widths (w, 2w, 4w): 3x3 stem, three encoder levels each followed by
a pixel-unshuffle downsample, a bottleneck at 8w, a mirrored decoder with
pixel-shuffle upsampling and concat + 1x1 skip fusion, a refinement level, and
a zero-initialized 3x3 head whose output is added to the input image.
"""
from __future__ import annotations

import math

import numpy as np

from . import autograd as ag
from .extractor import ExtractorNet, extract
from .modulation import DEFAULT_EMBED_DIM, ModulationHeads, delta_stats
from .nn import Conv2d, LayerNorm2d, Linear, Module
from .io import FormatError, load_weights, save_weights
from .numeric import as_image


class ShapeError(ValueError):
    pass


def heb(F, alpha):
    """F + alpha * (F - per-channel mean of F)."""
    F = ag.as_var(F)
    return F + ag.as_var(alpha) * (F - ag.mean(F, axis=(1, 2), keepdims=True))


def _inv_softplus(y: np.ndarray) -> np.ndarray:
    return y + np.log(-np.expm1(-y))


class DpssBlock(Module):
    """norm -> expand -> depthwise conv -> SiLU -> modulated scan -> gate -> project -> residual -> HEB."""

    def __init__(self, channels: int, state_dim: int, d_emb: int, rng: np.random.Generator,
                 expand: int = 2, scan_method: str = "parallel"):
        super().__init__()
        e = expand * channels
        self.channels, self.inner, self.state_dim = channels, e, state_dim
        self.scan_method = scan_method
        self.norm = self.child("norm", LayerNorm2d(channels))
        self.in_proj = self.child("in_proj", Conv2d(channels, 2 * e, 1, rng))
        self.dwconv = self.child("dwconv", Conv2d(e, e, 3, rng, groups=e))
        # step size starts input-independent: zero weight, bias = softplus^-1 of a log-uniform dt
        self.dt_proj = self.child("dt_proj", Linear(e, e, None, zero=True))
        dt = np.exp(rng.uniform(np.log(1e-3), np.log(1e-1), size=e))
        self.dt_proj.bias.data = _inv_softplus(dt)
        self.B_proj = self.child("B_proj", Linear(e, state_dim, rng, bias=False))
        self.C_proj = self.child("C_proj", Linear(e, state_dim, rng, bias=False))
        self.A_log = self.param("A_log", np.log(np.tile(np.arange(1, state_dim + 1, dtype=float), (e, 1))))
        self.D = self.param("D", np.ones(e))
        self.heads = self.child("heads", ModulationHeads(e, state_dim, d_emb))
        self.out_proj = self.child("out_proj", Conv2d(e, channels, 1, rng))
        self.heb_alpha = self.param("heb_alpha", np.array(0.0))

    def __call__(self, x, E_d, trace: list | None = None):
        c, h, w = x.shape
        e, L = self.inner, h * w
        p = self.in_proj(self.norm(x))
        u, z = p[:e], p[e:]
        u = ag.silu(self.dwconv(u))
        seq = ag.reshape(ag.transpose(ag.reshape(u, (e, L)), (1, 0)), (1, L, e))
        delta = ag.softplus(self.dt_proj(seq))
        Bm, Cm = self.B_proj(seq), self.C_proj(seq)
        a_delta, a_B, a_C = self.heads(E_d)
        delta_dp = delta * a_delta
        if trace is not None:
            trace.append(delta_dp.data[0].copy())
        A = -ag.exp(self.A_log)
        y = ag.selective_scan(seq, delta_dp, A, Bm * a_B, Cm * a_C, self.D, method=self.scan_method)
        y = ag.reshape(ag.transpose(ag.reshape(y, (L, e)), (1, 0)), (e, h, w))
        y = y * ag.silu(z)
        return heb(x + self.out_proj(y), self.heb_alpha)


class Level(Module):
    def __init__(self, channels, n_blocks, state_dim, d_emb, rng, scan_method):
        super().__init__()
        self.blocks = [self.child(str(i), DpssBlock(channels, state_dim, d_emb, rng, scan_method=scan_method))
                       for i in range(n_blocks)]

    def __call__(self, x, E_d, trace=None):
        for b in self.blocks:
            x = b(x, E_d, trace)
        return x


class Downsample(Module):
    def __init__(self, c, rng):
        super().__init__()
        if c % 2:
            raise ValueError("downsampling needs an even channel count")
        self.conv = self.child("conv", Conv2d(c, c // 2, 1, rng, bias=False))

    def __call__(self, x):
        return ag.pixel_unshuffle(self.conv(x), 2)


class Upsample(Module):
    def __init__(self, c, rng):
        super().__init__()
        self.conv = self.child("conv", Conv2d(c, 2 * c, 1, rng, bias=False))

    def __call__(self, x):
        return ag.pixel_shuffle(self.conv(x), 2)


class DpmambaNet(Module):
    def __init__(self, widths=(8, 16, 32), blocks_per_stage: int = 1, state_dim: int = 8,
                 d_emb: int = DEFAULT_EMBED_DIM, in_channels: int = 3, seed: int = 0,
                 scan_method: str = "parallel"):
        super().__init__()
        w1, w2, w3 = widths
        if w2 != 2 * w1 or w3 != 2 * w2:
            raise ValueError(f"stage widths must double, got {widths}")
        self.widths, self.blocks_per_stage, self.state_dim = tuple(widths), blocks_per_stage, state_dim
        self.d_emb, self.in_channels = d_emb, in_channels
        rng = np.random.default_rng(seed)
        wb = 2 * w3

        def level(c):
            return Level(c, blocks_per_stage, state_dim, d_emb, rng, scan_method)
        self.stem = self.child("stem", Conv2d(in_channels, w1, 3, rng))
        self.enc1 = self.child("enc1", level(w1))
        self.down1 = self.child("down1", Downsample(w1, rng))
        self.enc2 = self.child("enc2", level(w2))
        self.down2 = self.child("down2", Downsample(w2, rng))
        self.enc3 = self.child("enc3", level(w3))
        self.down3 = self.child("down3", Downsample(w3, rng))
        self.latent = self.child("latent", level(wb))
        self.up3 = self.child("up3", Upsample(wb, rng))
        self.fuse3 = self.child("fuse3", Conv2d(2 * w3, w3, 1, rng))
        self.dec3 = self.child("dec3", level(w3))
        self.up2 = self.child("up2", Upsample(w3, rng))
        self.fuse2 = self.child("fuse2", Conv2d(2 * w2, w2, 1, rng))
        self.dec2 = self.child("dec2", level(w2))
        self.up1 = self.child("up1", Upsample(w2, rng))
        self.fuse1 = self.child("fuse1", Conv2d(2 * w1, w1, 1, rng))
        self.dec1 = self.child("dec1", level(w1))
        self.refine = self.child("refine", level(w1))
        self.head = self.child("head", Conv2d(w1, in_channels, 3, rng, zero=True))

    @property
    def n_dpss_layers(self) -> int:
        return 8 * self.blocks_per_stage

    def check_input(self, shape) -> None:
        c, h, w = shape
        if c != self.in_channels:
            raise ShapeError(f"expected {self.in_channels} channels, got {c}")
        if h % 8 or w % 8:
            raise ShapeError(f"H and W must be divisible by 8, got {h}x{w}")

    def __call__(self, image, E_d, trace: list | None = None):
        image = ag.as_var(image)
        self.check_input(image.shape)
        E_d = ag.as_var(E_d)
        if E_d.shape != (self.d_emb,):
            raise ShapeError(f"embedding must have shape ({self.d_emb},), got {E_d.shape}")
        f1 = self.enc1(self.stem(image), E_d, trace)
        f2 = self.enc2(self.down1(f1), E_d, trace)
        f3 = self.enc3(self.down2(f2), E_d, trace)
        x = self.latent(self.down3(f3), E_d, trace)
        x = self.dec3(self.fuse3(ag.concat([self.up3(x), f3], axis=0)), E_d, trace)
        x = self.dec2(self.fuse2(ag.concat([self.up2(x), f2], axis=0)), E_d, trace)
        x = self.dec1(self.fuse1(ag.concat([self.up1(x), f1], axis=0)), E_d, trace)
        x = self.refine(x, E_d, trace)
        return image + self.head(x)


def forward(net: DpmambaNet, image, E_d) -> np.ndarray:
    out = net(image, E_d).data
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite network output")
    return out


class Restorer:
    """Frozen extractor feeding a restoration network; the unit the CLI loads and saves."""

    def __init__(self, net: DpmambaNet, extractor: ExtractorNet):
        if extractor.d_emb != net.d_emb:
            raise ValueError("extractor and network embedding sizes differ")
        self.net, self.extractor = net, extractor.freeze()

    def embed(self, image) -> np.ndarray:
        return extract(image, self.extractor)

    def restore(self, image) -> np.ndarray:
        image = as_image(image)
        self.net.check_input(image.shape)
        return forward(self.net, image, self.embed(image))

    def trace_deltas(self, image) -> list[np.ndarray]:
        image = as_image(image)
        trace: list[np.ndarray] = []
        self.net(image, self.embed(image), trace)
        return trace

    def delta_stats(self, corpus, fraction: float = 0.2):
        return delta_stats(self, corpus, fraction)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {f"net.{k}": v for k, v in self.net.state_dict().items()}
        out.update({f"extractor.{k}": v for k, v in self.extractor.state_dict().items()})
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        split: dict[str, dict] = {"net": {}, "extractor": {}}
        for k, v in state.items():
            head, _, rest = k.partition(".")
            if head not in split:
                raise KeyError(f"unexpected tensor {k}")
            split[head][rest] = v
        self.net.load_state_dict(split["net"])
        self.extractor.load_state_dict(split["extractor"])

    def config(self) -> dict:
        n, e = self.net, self.extractor
        return {"widths": list(n.widths), "blocks_per_stage": n.blocks_per_stage, "state_dim": n.state_dim,
                "d_emb": n.d_emb, "in_channels": n.in_channels, "extractor_width": e.width, "theta": e.theta}


def build_restorer(cfg: dict, seed: int = 0) -> Restorer:
    """Fresh (identity-at-init) restorer from a run config or a weight-file config."""
    net = DpmambaNet(tuple(cfg.get("widths", (8, 16, 32))), cfg.get("blocks_per_stage", 1),
                     cfg.get("state_dim", 8), cfg.get("d_emb", DEFAULT_EMBED_DIM),
                     cfg.get("in_channels", 3), seed=seed)
    ext = ExtractorNet(cfg.get("extractor_width", 8), net.d_emb, cfg.get("theta", 0.7),
                       np.random.default_rng([seed, 1]), net.in_channels)
    return Restorer(net, ext)


def save_restorer(path, restorer: Restorer):
    return save_weights(path, restorer.state_dict(), restorer.config())


def load_restorer(path) -> Restorer:
    tensors, cfg = load_weights(path)
    if cfg is None:
        raise FormatError(f"{path}: weight file has no model config")
    restorer = build_restorer(cfg)
    try:
        restorer.load_state_dict(tensors)
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: weights do not match the stored config ({exc})") from exc
    return restorer
