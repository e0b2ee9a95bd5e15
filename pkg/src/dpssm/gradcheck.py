"""Finite-difference checks for the scan backward pass, the loss and a micro network.

Tensor-level relative error is ``max|analytic - numeric| / max|numeric|``.
Per-coordinate checks use ``|a - n| / max(|a|, |n|)`` and only sample
coordinates whose gradient is large enough for central differences in f64 to
resolve (see ``RESOLVABLE``).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autograd import Tape, Var
from .losses import LossConfig, total_loss, total_loss_var
from .network import DpmambaNet
from .ssm import ScanInputs, SsmParams, scan_backward, scan_sequential

FD_STEP = 1e-5
SCAN_TOL = 1e-4
LOSS_TOL = 1e-4
NET_TOL = 1e-3
# coordinates with |grad| below this fraction of the largest |grad| sit under the
# central-difference noise floor (~eps * |f| / h) and are not sampled
RESOLVABLE = 1e-5


def tensor_rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = float(np.max(np.abs(numeric))) if numeric.size else 0.0
    diff = float(np.max(np.abs(analytic - numeric))) if numeric.size else 0.0
    return diff / scale if scale > 0 else diff


def central_diff(f: Callable[[], float], arr: np.ndarray, h: float = FD_STEP, index=None) -> np.ndarray | float:
    """Central difference of ``f`` w.r.t. ``arr`` (mutated in place and restored)."""
    def one(i):
        old = arr[i]
        arr[i] = old + h
        fp = f()
        arr[i] = old - h
        fm = f()
        arr[i] = old
        return (fp - fm) / (2 * h)
    if index is not None:
        return one(index)
    out = np.zeros_like(arr)
    for i in np.ndindex(arr.shape):
        out[i] = one(i)
    return out


# --------------------------------------------------------------------------
# scan

@dataclass
class ScanProblem:
    params: SsmParams
    inputs: ScanInputs
    h0: np.ndarray
    upstream: np.ndarray


def random_scan_problem(seed: int, L: int | None = None, N: int | None = None, d: int | None = None,
                        batch: int = 1) -> ScanProblem:
    rng = np.random.default_rng(seed)
    L = L or int(rng.integers(1, 17))
    N = N or int(rng.integers(1, 5))
    d = d or int(rng.integers(1, 4))
    params = SsmParams(A=-rng.uniform(0.1, 3.0, size=(d, N)), D=rng.normal(size=d))
    inputs = ScanInputs(x=rng.normal(size=(batch, L, d)), delta=rng.uniform(0.01, 1.0, size=(batch, L, d)),
                        B=rng.normal(size=(batch, L, N)), C=rng.normal(size=(batch, L, N)))
    return ScanProblem(params, inputs, rng.normal(size=(batch, d, N)), rng.normal(size=(batch, L, d)))


def check_scan_grads(prob: ScanProblem, mode: str = "exact", h: float = FD_STEP) -> dict[str, float]:
    """Relative error of every analytic scan gradient against central differences."""
    p, x, up, h0 = prob.params, prob.inputs, prob.upstream, prob.h0.copy()

    def f():
        return float(np.sum(scan_sequential(p, x, h0, mode).y * up))

    g = scan_backward(p, x, up, h0, mode)
    targets = {"x": x.x, "delta": x.delta, "A": p.A, "B": x.B, "C": x.C, "D": p.D, "h0": h0}
    return {k: tensor_rel_err(getattr(g, k), central_diff(f, arr, h)) for k, arr in targets.items()}


# --------------------------------------------------------------------------
# loss

def check_loss_grad(seed: int, shape=(3, 8, 8), cfg: LossConfig = LossConfig(), h: float = FD_STEP) -> float:
    """Relative error of d(total_loss)/d(pred).

    Predictions are kept at least 10 h away from the target so the L1 kink
    is never straddled by the difference stencil.
    """
    rng = np.random.default_rng(seed)
    target = rng.uniform(size=shape)
    off = rng.uniform(0.01, 0.2, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    pred = target + off
    p = Var(pred, requires_grad=True)
    with Tape() as tape:
        loss, _ = total_loss_var(target, p, cfg)
    tape.backward(loss)
    num = central_diff(lambda: total_loss(target, pred, cfg), pred, h)
    return tensor_rel_err(p.grad, num)


# --------------------------------------------------------------------------
# micro network

MICRO_WIDTHS = (2, 4, 8)
MICRO_SIZE = 8
MICRO_EMB = 8


def micro_net(seed: int = 0, perturb: float = 0.1) -> DpmambaNet:
    """Tiny network with every parameter perturbed away from its (partly zero) init.

    At init the head is zero, which would make every upstream gradient zero.
    """
    net = DpmambaNet(MICRO_WIDTHS, 1, state_dim=2, d_emb=MICRO_EMB, in_channels=3, seed=seed,
                     scan_method="sequential")
    rng = np.random.default_rng([seed, 99])
    for v in net.parameters():
        v.data = v.data + perturb * rng.normal(size=v.data.shape)
    return net


def check_micro_net(seed: int = 0, n_coords: int = 32, h: float = FD_STEP,
                    cfg: LossConfig = LossConfig()) -> list[dict]:
    """FD spot checks on randomly chosen resolvable parameter coordinates."""
    rng = np.random.default_rng([seed, 7])
    net = micro_net(seed)
    image = rng.uniform(size=(3, MICRO_SIZE, MICRO_SIZE))
    target = np.clip(image + 0.1 * rng.normal(size=image.shape), 0, 1)
    E_d = rng.normal(size=MICRO_EMB)

    def f():
        return total_loss(target, net(image, E_d).data, cfg)

    net.zero_grad()
    with Tape() as tape:
        loss, _ = total_loss_var(target, net(image, E_d), cfg)
    tape.backward(loss)
    named = net.named_parameters()
    grads = {k: (v.grad if v.grad is not None else np.zeros_like(v.data)) for k, v in named.items()}
    gmax = max(float(np.max(np.abs(g))) for g in grads.values())
    pool = [(k, tuple(int(i) for i in idx)) for k, g in grads.items()
            for idx in np.argwhere(np.abs(g) >= RESOLVABLE * gmax)]
    if not pool:
        raise RuntimeError("micro net has no resolvable gradient coordinates")
    picks = rng.choice(len(pool), size=min(n_coords, len(pool)), replace=False)
    out = []
    for j in picks:
        name, idx = pool[int(j)]
        a = float(grads[name][idx])
        n = float(central_diff(f, named[name].data, h, idx))
        out.append({"param": name, "index": [int(i) for i in idx], "analytic": a, "numeric": n,
                    "rel_err": abs(a - n) / max(abs(a), abs(n))})
    return out


def run_grad_check(seed: int = 7, n_instances: int = 20, n_coords: int = 32) -> dict:
    """Everything ``dpssm grad-check`` reports; ``ok`` is true iff all tolerances hold."""
    scan_max: dict[str, float] = {}
    for i in range(n_instances):
        for k, v in check_scan_grads(random_scan_problem(seed * 1000 + i)).items():
            scan_max[k] = max(scan_max.get(k, 0.0), v)
    loss_err = max(check_loss_grad(seed * 1000 + i) for i in range(n_instances))
    coords = check_micro_net(seed, n_coords)
    net_err = max(c["rel_err"] for c in coords)
    failures = [f"scan.{k}" for k, v in scan_max.items() if not v <= SCAN_TOL]
    if not loss_err <= LOSS_TOL:
        failures.append("total_loss")
    failures += [f"net.{c['param']}{c['index']}" for c in coords if not c["rel_err"] <= NET_TOL]
    return {"seed": seed, "scan_max_rel_err": scan_max, "total_loss_max_rel_err": loss_err,
            "micro_net_max_rel_err": net_err, "micro_net_coords": coords,
            "tolerances": {"scan": SCAN_TOL, "total_loss": LOSS_TOL, "micro_net": NET_TOL},
            "failures": failures, "ok": not failures}
