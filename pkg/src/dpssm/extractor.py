"""Degradation extractor: multi-scale central-difference convolutions.

Each :class:`MultiScaleBlock` sums four CDC branches (kernel 1, 3, 5, 7) and a
plain 3x3 branch. A CDC branch is an ordinary convolution whose center tap is
reduced by ``theta * sum(w)``, so the whole block folds into one 7x7 kernel for
inference (:func:`reparameterize`).
"""
from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tape, Var
from .losses import ssim_var
from .modulation import DEFAULT_EMBED_DIM
from .nn import Conv2d, Linear, Module
from .numeric import as_image, conv2d_raw
from .optim import AdamW

BRANCH_SIZES = (1, 3, 5, 7)
MERGED_SIZE = max(BRANCH_SIZES)
DEFAULT_THETA = 0.7
LPIPS_STANDIN_WEIGHT = 0.1


def cdc_kernel(w: np.ndarray, theta: float) -> np.ndarray:
    """Plain-convolution kernel equivalent to a CDC with weights ``w``."""
    k = w.shape[-1]
    out = w.copy()
    out[:, :, k // 2, k // 2] -= theta * w.sum(axis=(2, 3))
    return out


def pad_kernel(w: np.ndarray, size: int) -> np.ndarray:
    p = (size - w.shape[-1]) // 2
    return np.pad(w, ((0, 0), (0, 0), (p, p), (p, p)))


class CdcConv(Conv2d):
    def __init__(self, c_in, c_out, k, rng, theta: float = DEFAULT_THETA, stride: int = 1):
        if not 0.0 <= theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        super().__init__(c_in, c_out, k, rng, stride=stride)
        self.theta = theta
        self._center = np.zeros((1, 1, k, k))
        self._center[0, 0, k // 2, k // 2] = 1.0

    def effective_kernel(self) -> np.ndarray:
        return cdc_kernel(self.weight.data, self.theta)

    def __call__(self, x):
        s = ag.sum(self.weight, axis=(2, 3), keepdims=True)
        w = self.weight - s * (self.theta * self._center)
        return ag.conv2d(x, w, self.bias, self.stride, "same")


def cdc_forward(x: np.ndarray, conv: CdcConv) -> np.ndarray:
    return conv(np.asarray(x, dtype=np.float64)).data


class MultiScaleBlock(Module):
    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, stride: int = 1,
                 theta: float = DEFAULT_THETA, sizes=BRANCH_SIZES):
        super().__init__()
        self.stride = stride
        self.branches = [self.child(f"cdc{k}", CdcConv(c_in, c_out, k, rng, theta, stride)) for k in sizes]
        self.vanilla = self.child("conv3", Conv2d(c_in, c_out, 3, rng, stride=stride))

    def __call__(self, x):
        out = self.vanilla(x)
        for br in self.branches:
            out = out + br(x)
        return out


class ReparamConv(Conv2d):
    """Single merged kernel standing in for a :class:`MultiScaleBlock`."""

    def __init__(self, weight: np.ndarray, bias: np.ndarray, stride: int = 1):
        Module.__init__(self)
        self.stride, self.groups, self.k = stride, 1, weight.shape[-1]
        self.weight = self.param("weight", weight)
        self.bias = self.param("bias", bias)


def reparameterize(block: MultiScaleBlock) -> ReparamConv:
    size = max([MERGED_SIZE, block.vanilla.k] + [b.k for b in block.branches])
    weight = pad_kernel(block.vanilla.weight.data, size)
    bias = block.vanilla.bias.data.copy()
    for br in block.branches:
        if br.weight.shape[:2] != block.vanilla.weight.shape[:2] or br.stride != block.stride:
            raise ValueError("incompatible branch shapes")
        weight = weight + pad_kernel(br.effective_kernel(), size)
        bias = bias + br.bias.data
    return ReparamConv(weight, bias, block.stride)


class ExtractorNet(Module):
    """stem 3x3 -> two stride-2 multi-scale blocks -> global average pool -> linear."""

    def __init__(self, width: int = 8, d_emb: int = DEFAULT_EMBED_DIM, theta: float = DEFAULT_THETA,
                 rng: np.random.Generator | None = None, in_channels: int = 3):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        self.width, self.d_emb, self.theta, self.in_channels = width, d_emb, theta, in_channels
        self.merged = False
        self.stem = self.child("stem", Conv2d(in_channels, width, 3, rng))
        self.block1 = self.child("block1", MultiScaleBlock(width, width, rng, 2, theta))
        self.block2 = self.child("block2", MultiScaleBlock(width, 2 * width, rng, 2, theta))
        self.head = self.child("head", Linear(2 * width, d_emb, rng))

    def __call__(self, image):
        x = ag.leaky_relu(self.stem(image))
        x = ag.leaky_relu(self.block1(x))
        x = ag.leaky_relu(self.block2(x))
        pooled = ag.mean(x, axis=(1, 2))
        return self.head(pooled)

    def reparameterized(self) -> "ExtractorNet":
        """Copy of this network with both blocks folded into single 7x7 convolutions."""
        out = copy.deepcopy(self)
        for name in ("block1", "block2"):
            fused = reparameterize(getattr(self, name))
            setattr(out, name, fused)
            out._children[name] = fused
        out.merged = True
        return out

    def freeze(self) -> "ExtractorNet":
        for p in self.parameters():
            p.requires_grad = False
        return self


def extract(image: np.ndarray, net: ExtractorNet) -> np.ndarray:
    image = as_image(image)
    if image.shape[0] != net.in_channels:
        raise ValueError(f"extractor expects {net.in_channels} channels, got {image.shape[0]}")
    e = net(image).data
    if e.shape != (net.d_emb,):
        raise ValueError(f"embedding has shape {e.shape}, expected ({net.d_emb},)")
    return e


# --------------------------------------------------------------------------
# reconstruction pre-training

class ContentEncoder(Module):
    """Small trainable content branch; output keeps the clean image as 3 extra channels."""

    def __init__(self, width: int, rng, in_channels: int = 3):
        super().__init__()
        self.conv1 = self.child("conv1", Conv2d(in_channels, width, 3, rng))
        self.conv2 = self.child("conv2", Conv2d(width, width, 3, rng))

    def __call__(self, clean):
        h = self.conv2(ag.leaky_relu(self.conv1(clean)))
        return ag.concat([clean, h], axis=0)


class Reconstructor(Module):
    """Decoder whose features get a per-channel scale/shift from the embedding (FiLM)."""

    def __init__(self, channels: int, d_emb: int, rng, out_channels: int = 3):
        super().__init__()
        self.channels = channels
        self.film = self.child("film", Linear(d_emb, 2 * channels, rng, zero=True))
        self.conv1 = self.child("conv1", Conv2d(channels, channels, 3, rng))
        self.conv2 = self.child("conv2", Conv2d(channels, out_channels, 3, rng))

    def __call__(self, E_c, E_d):
        ss = ag.reshape(self.film(E_d), (2 * self.channels, 1, 1))
        scale, shift = ss[:self.channels], ss[self.channels:]
        h = E_c * (scale + 1.0) + shift
        h = ag.leaky_relu(self.conv1(h))
        return self.conv2(h)


def reconstruction_loss_var(I_D, I_hat, lambda_p: float = LPIPS_STANDIN_WEIGHT):
    I_D, I_hat = ag.as_var(I_D), ag.as_var(I_hat)
    if I_D.shape != I_hat.shape:
        raise ValueError(f"shape mismatch: {I_D.shape} vs {I_hat.shape}")
    l1 = ag.mean(ag.abs(I_hat - I_D))
    if lambda_p == 0:
        return l1, {"l1": l1}
    perc = 1.0 - ssim_var(I_D, I_hat)
    return l1 + perc * lambda_p, {"l1": l1, "ssim_term": perc}


def reconstruct_objective(E_c, E_d, reconstructor: Reconstructor, I_D,
                          lambda_p: float = LPIPS_STANDIN_WEIGHT) -> tuple[np.ndarray, float]:
    """Reconstruct the degraded image from content and degradation codes.

    Loss is L1 plus ``lambda_p * (1 - SSIM)`` (SSIM stands in for LPIPS).
    """
    I_hat = reconstructor(E_c, E_d)
    loss, _ = reconstruction_loss_var(I_D, I_hat, lambda_p)
    return I_hat.data, float(loss.data)


@dataclass
class PretrainResult:
    extractor: ExtractorNet
    losses: list[float]


def pretrain_extractor(samples, width: int = 8, d_emb: int = DEFAULT_EMBED_DIM, steps: int = 200,
                       seed: int = 0, lr: float = 2e-3, theta: float = DEFAULT_THETA,
                       lambda_p: float = LPIPS_STANDIN_WEIGHT) -> PretrainResult:
    """Train extractor + content encoder + reconstructor on ``samples``; return the frozen extractor.

    ``samples`` are :class:`~dpssm.degradation.LabeledSample`. One sample per
    step, visited in a seeded order.
    """
    if not samples:
        raise ValueError("pre-training needs at least one sample")
    rng = np.random.default_rng(seed)
    channels = samples[0].clean.shape[0]
    extractor = ExtractorNet(width, d_emb, theta, rng, channels)
    encoder = ContentEncoder(width, rng, channels)
    recon = Reconstructor(width + channels, d_emb, rng, channels)
    named = {}
    for prefix, mod in (("extractor", extractor), ("encoder", encoder), ("recon", recon)):
        named.update({f"{prefix}.{k}": v for k, v in mod.named_parameters().items()})
    opt = AdamW(named, lr=lr)
    losses = []
    order = rng.permutation(np.arange(max(steps, 1)) % len(samples))
    for step in range(steps):
        s = samples[int(order[step])]
        opt.zero_grad()
        with Tape() as tape:
            E_d = extractor(s.degraded)
            I_hat = recon(encoder(s.clean), E_d)
            loss, _ = reconstruction_loss_var(s.degraded, I_hat, lambda_p)
        tape.backward(loss)
        opt.step()
        losses.append(float(loss.data))
    return PretrainResult(extractor.freeze(), losses)


# --------------------------------------------------------------------------
# linear probe

def linear_probe(embeddings: np.ndarray, labels, iters: int = 1000, lr: float = 0.5,
                 test_fraction: float = 0.3, seed: int = 0, weight_decay: float = 1e-3) -> dict:
    """Softmax-regression probe on frozen embeddings; reports held-out accuracy.

    A single-class input is reported as accuracy 1.0 with ``degenerate=True``.
    """
    X = np.asarray(embeddings, dtype=np.float64)
    labels = [str(l) for l in labels]
    if X.ndim != 2 or X.shape[0] != len(labels) or not labels:
        raise ValueError("embeddings must be (n_samples, dim) with one label per row")
    classes = sorted(set(labels))
    if len(classes) < 2:
        return {"accuracy": 1.0, "degenerate": True, "classes": classes,
                "per_class": {classes[0]: 1.0}, "confusion": [[len(labels)]]}
    y = np.array([classes.index(l) for l in labels])
    rng = np.random.default_rng(seed)
    test = np.zeros(len(y), dtype=bool)
    for c in range(len(classes)):
        idx = rng.permutation(np.flatnonzero(y == c))
        test[idx[:max(1, int(round(test_fraction * idx.size)))]] = True
    mu, sd = X[~test].mean(axis=0), X[~test].std(axis=0) + 1e-8
    Z = (X - mu) / sd
    Xtr, ytr = Z[~test], y[~test]
    W = np.zeros((Z.shape[1], len(classes)))
    b = np.zeros(len(classes))
    onehot = np.eye(len(classes))[ytr]
    for _ in range(iters):
        logits = Xtr @ W + b
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        g = (p - onehot) / len(ytr)
        W -= lr * (Xtr.T @ g + weight_decay * W)
        b -= lr * g.sum(axis=0)
    pred = np.argmax(Z[test] @ W + b, axis=1)
    truth = y[test]
    conf = np.zeros((len(classes), len(classes)), dtype=int)
    for t, p_ in zip(truth, pred):
        conf[t, p_] += 1
    per_class = {c: float(conf[i, i] / max(conf[i].sum(), 1)) for i, c in enumerate(classes)}
    return {"accuracy": float(np.mean(pred == truth)), "degenerate": False, "classes": classes,
            "per_class": per_class, "confusion": conf.tolist()}
