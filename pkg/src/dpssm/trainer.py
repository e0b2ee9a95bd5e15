"""Desk-scale training experiments.

``train_toy1d`` pits a modulated scan model against an otherwise identical
model whose modulation heads stay at zero, on a 1-D mixed-degradation task
(noise / blur / dimming). ``overfit_2d`` is an end-to-end smoke test of the
2-D network and its gradients.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tape
from .extractor import ExtractorNet
from .losses import LossConfig, psnr, total_loss_var
from .modulation import ModulationHeads, summarize_deltas
from .network import DpmambaNet, Restorer, _inv_softplus
from .nn import Linear, Module
from .optim import AdamW, OptimState, adamw_step, cosine_lr  # noqa: F401  (re-exported)

log = logging.getLogger(__name__)

TOY_CLASSES = ("noise", "blur", "dim")


class DivergenceError(FloatingPointError):
    pass


# --------------------------------------------------------------------------
# 1-D task

@dataclass
class Toy1dTask:
    length: int = 128
    noise_sigma: float = 0.3
    blur_width: int = 9
    dim_factor: float = 0.3
    d_emb: int = 16
    seed: int = 7
    projection: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        rng = np.random.default_rng([self.seed, 0xE4B])
        self.projection = rng.normal(size=(len(TOY_CLASSES), self.d_emb))

    def clean(self, rng: np.random.Generator, n: int) -> np.ndarray:
        t = np.arange(self.length)
        out = np.zeros((n, self.length))
        for i in range(n):
            for _ in range(int(rng.integers(1, 4))):
                cycles = rng.uniform(1.0, 8.0)
                out[i] += rng.uniform(0.3, 1.0) * np.sin(2 * np.pi * cycles * t / self.length + rng.uniform(0, 2 * np.pi))
        return out

    def degrade(self, clean: np.ndarray, labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        out = clean.copy()
        noise = rng.normal(0.0, self.noise_sigma, size=clean.shape)
        k = np.ones(self.blur_width) / self.blur_width
        r = self.blur_width // 2
        for i, lab in enumerate(labels):
            name = TOY_CLASSES[lab]
            if name == "noise":
                out[i] = clean[i] + noise[i]
            elif name == "blur":
                out[i] = np.convolve(np.pad(clean[i], r, mode="symmetric"), k, mode="valid")
            else:
                out[i] = self.dim_factor * clean[i]
        return out

    def batch(self, rng: np.random.Generator, per_class: int):
        labels = np.repeat(np.arange(len(TOY_CLASSES)), per_class)
        clean = self.clean(rng, labels.size)
        return self.degrade(clean, labels, rng), clean, labels

    def embed(self, labels: np.ndarray) -> np.ndarray:
        return self.projection[labels]


class Toy1dModel(Module):
    def __init__(self, d_inner: int = 8, state_dim: int = 8, d_emb: int = 16, seed: int = 0,
                 selective: bool = True):
        super().__init__()
        self.selective = selective
        rng = np.random.default_rng(seed)
        self.d_inner = d_inner
        self.in_w = self.param("in_w", rng.normal(size=d_inner))
        self.in_b = self.param("in_b", 0.1 * rng.normal(size=d_inner))
        self.dt_proj = self.child("dt_proj", Linear(d_inner, d_inner, None, zero=True))
        self.dt_proj.bias.data = _inv_softplus(np.exp(rng.uniform(np.log(0.01), np.log(0.3), size=d_inner)))
        self.B_proj = self.child("B_proj", Linear(d_inner, state_dim, rng, bias=False))
        self.C_proj = self.child("C_proj", Linear(d_inner, state_dim, rng, bias=False))
        self.A_log = self.param("A_log", np.log(np.tile(np.arange(1, state_dim + 1, dtype=float), (d_inner, 1))))
        self.D = self.param("D", np.ones(d_inner))
        self.heads = self.child("heads", ModulationHeads(d_inner, state_dim, d_emb))
        self.out = self.child("out", Linear(d_inner, 1, None, zero=True))

    def __call__(self, signal, E_d, trace: list | None = None):
        s = ag.as_var(signal)
        b, L = s.shape
        u = ag.reshape(s, (b, L, 1)) * self.in_w + self.in_b
        delta = ag.softplus(self.dt_proj(u))
        a_d, a_b, a_c = self.heads(E_d)
        e, n = self.d_inner, self.heads.state_dim
        delta_dp = delta * ag.reshape(a_d, (b, 1, e))
        if trace is not None:
            trace.append(delta_dp.data.copy())
        A = -ag.exp(self.A_log)
        y = ag.selective_scan(u, delta_dp, A, self.B_proj(u) * ag.reshape(a_b, (b, 1, n)),
                              self.C_proj(u) * ag.reshape(a_c, (b, 1, n)), self.D)
        return s + ag.reshape(self.out(y), (b, L))

    def trainable(self, modulated: bool) -> dict:
        named = self.named_parameters()
        skip = () if modulated else ("heads.",)
        if not self.selective:
            skip += ("dt_proj.weight",)
        return {k: v for k, v in named.items() if not k.startswith(skip)}


def _mse(pred: np.ndarray, target: np.ndarray) -> float:
    return float(np.mean((pred - target) ** 2))


def train_toy1d(seed: int = 7, steps: int = 2000, per_class: int = 4, held_out_per_class: int = 100,
                lr_max: float = 3e-3, lr_min: float = 3e-5, weight_decay: float = 1e-4,
                d_inner: int = 8, state_dim: int = 8, task: Toy1dTask | None = None,
                selective: bool = True) -> dict:
    """Train modulated and fixed models on identical minibatches; report held-out MSE.

    Raises :class:`DivergenceError` if either loss becomes non-finite.
    """
    task = task or Toy1dTask(seed=seed)
    models = {"modulated": Toy1dModel(d_inner, state_dim, task.d_emb, seed, selective),
              "fixed": Toy1dModel(d_inner, state_dim, task.d_emb, seed, selective)}
    opts = {k: AdamW(m.trainable(k == "modulated"), lr=lr_max, weight_decay=weight_decay)
            for k, m in models.items()}
    data_rng = np.random.default_rng([seed, 1])
    history = {k: [] for k in models}
    for step in range(steps):
        noisy, clean, labels = task.batch(data_rng, per_class)
        E_d = task.embed(labels)
        lr = cosine_lr(step, steps, lr_max, lr_min)
        for name, model in models.items():
            opts[name].zero_grad()
            try:
                with Tape() as tape:
                    pred = model(noisy, E_d)
                    loss = ag.mean(ag.square(pred - clean))
            except FloatingPointError as exc:
                raise DivergenceError(f"{name} model diverged at step {step}: {exc}") from exc
            if not np.isfinite(loss.data):
                raise DivergenceError(f"{name} model loss is {loss.data} at step {step}")
            tape.backward(loss)
            opts[name].step(lr)
            history[name].append(float(loss.data))

    eval_rng = np.random.default_rng([seed, 2])
    noisy, clean, labels = task.batch(eval_rng, held_out_per_class)
    E_d = task.embed(labels)
    report: dict = {"seed": seed, "steps": steps}
    for name, model in models.items():
        trace: list = []
        pred = model(noisy, E_d, trace).data
        report[f"mse_{name}"] = _mse(pred, clean)
        report[f"mse_{name}_per_class"] = {c: _mse(pred[labels == i], clean[labels == i])
                                           for i, c in enumerate(TOY_CLASSES)}
        if name == "modulated":
            per_label = {c: {0: [trace[0][labels == i]]} for i, c in enumerate(TOY_CLASSES)}
            report["delta_stats_per_class"] = summarize_deltas(per_label)
    report["mse_identity"] = _mse(noisy, clean)
    report["final_train_loss"] = {k: v[-1] if v else None for k, v in history.items()}
    report["loss_history"] = history
    return report


# --------------------------------------------------------------------------
# 2-D overfit smoke test

def overfit_2d(net: DpmambaNet, samples, steps: int = 500, lr: float = 2e-3,
               extractor: ExtractorNet | None = None, loss_cfg: LossConfig = LossConfig(),
               window: int = 50) -> dict:
    """Fit ``net`` to a couple of (degraded, clean) pairs; return the PSNR trajectory.

    ``psnr[t]`` is the mean training PSNR before update ``t``; the last entry is
    measured after the final update.
    """
    extractor = extractor or ExtractorNet(d_emb=net.d_emb, rng=np.random.default_rng(0),
                                          in_channels=net.in_channels)
    restorer = Restorer(net, extractor)
    embeds = [restorer.embed(s.degraded) for s in samples]
    opt = AdamW(net.named_parameters(), lr=lr)
    psnrs, losses = [], []
    for step in range(steps + 1):
        outs = []
        if step == steps:
            outs = [net(s.degraded, e).data for s, e in zip(samples, embeds)]
        else:
            opt.zero_grad()
            total = 0.0
            for s, e in zip(samples, embeds):
                with Tape() as tape:
                    out = net(s.degraded, e)
                    loss, _ = total_loss_var(s.clean, out, loss_cfg)
                    loss = loss * (1.0 / len(samples))
                tape.backward(loss)
                total += float(loss.data)
                outs.append(out.data)
            if not np.isfinite(total):
                raise DivergenceError(f"overfit loss non-finite at step {step}")
            losses.append(total)
            opt.step(cosine_lr(step, steps, lr, lr * 0.1))
        psnrs.append(float(np.mean([psnr(s.clean, o) for s, o in zip(samples, outs)])))
    monotone = True
    if len(losses) >= 2 * window:
        smooth = np.convolve(losses, np.ones(window) / window, mode="valid")
        monotone = bool(np.all(np.diff(smooth[::window]) <= 0))
        if not monotone:
            log.warning("smoothed overfit loss is not monotone")
    return {"psnr": psnrs, "loss": losses, "psnr_init": psnrs[0], "psnr_final": psnrs[-1],
            "smoothed_loss_monotone": monotone}
