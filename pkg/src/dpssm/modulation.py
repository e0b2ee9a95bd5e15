"""Degradation-conditioned modulation of the scan parameters (delta, B, C).

A degradation embedding ``E_d`` is mapped by three exponential linear heads to
positive modulation vectors; delta is scaled per channel, B and C per state.
Heads start at zero so every alpha is exactly 1 and the modulated scan reduces
to the vanilla one.
"""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterable, Protocol

import numpy as np

from . import autograd as ag
from .nn import Linear, Module
from .ssm import ScanInputs, ScanOutput, SsmParams, scan

DEFAULT_EMBED_DIM = 512


class ModulationHeads(Module):
    def __init__(self, d_inner: int, state_dim: int, d_emb: int = DEFAULT_EMBED_DIM,
                 rng: np.random.Generator | None = None):
        super().__init__()
        self.d_inner, self.state_dim, self.d_emb = d_inner, state_dim, d_emb
        zero = rng is None
        self.delta = self.child("delta", Linear(d_emb, d_inner, rng, zero=zero))
        self.B = self.child("B", Linear(d_emb, state_dim, rng, zero=zero))
        self.C = self.child("C", Linear(d_emb, state_dim, rng, zero=zero))

    def __call__(self, E_d):
        """Return Vars ``(alpha_delta, alpha_B, alpha_C)``; differentiable on a tape."""
        E_d = ag.as_var(E_d)
        if E_d.shape[-1] != self.d_emb:
            raise ValueError(f"embedding dim {E_d.shape[-1]} != heads dim {self.d_emb}")
        if E_d.ndim == 2:
            # row by row: a batched matmul may round differently from a single row
            rows = [self(ag.getitem(E_d, i)) for i in range(E_d.shape[0])]
            return tuple(ag.concat([ag.reshape(r[k], (1, -1)) for r in rows], axis=0) for k in range(3))
        return ag.exp(self.delta(E_d)), ag.exp(self.B(E_d)), ag.exp(self.C(E_d))

    def alphas(self, E_d) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        a_d, a_b, a_c = self(np.asarray(E_d, dtype=np.float64))
        return a_d.data, a_b.data, a_c.data


@dataclass
class ModulatedScanInputs(ScanInputs):
    alpha_delta: np.ndarray | None = None
    alpha_B: np.ndarray | None = None
    alpha_C: np.ndarray | None = None


def _seq_broadcast(alpha: np.ndarray) -> np.ndarray:
    # (width,) -> (1, 1, width); (batch, width) -> (batch, 1, width)
    return alpha[None, None, :] if alpha.ndim == 1 else alpha[:, None, :]


def modulate(heads: ModulationHeads, E_d, inputs: ScanInputs) -> ModulatedScanInputs:
    """Scale delta, B and C by the modulation vectors computed from ``E_d``."""
    a_d, a_b, a_c = heads.alphas(E_d)
    if inputs.delta.shape[-1] != heads.d_inner or inputs.B.shape[-1] != heads.state_dim:
        raise ValueError("scan inputs do not match the modulation heads' widths")
    return ModulatedScanInputs(
        x=inputs.x,
        delta=_seq_broadcast(a_d) * inputs.delta,
        B=_seq_broadcast(a_b) * inputs.B,
        C=_seq_broadcast(a_c) * inputs.C,
        alpha_delta=a_d, alpha_B=a_b, alpha_C=a_c,
    )


def dp_scan(params: SsmParams, inputs: ScanInputs, E_d, heads: ModulationHeads,
            mode: str = "exact", method: str = "sequential", return_states: bool = False,
            workers: int | None = None) -> ScanOutput:
    """Modulate, discretize with the modulated step, then scan."""
    mod = modulate(heads, E_d, inputs)
    return scan(params, mod, mode=mode, method=method, return_states=return_states, workers=workers)


# --------------------------------------------------------------------------
# step-size statistics

class DeltaTracer(Protocol):
    def trace_deltas(self, image: np.ndarray) -> list[np.ndarray]: ...


STATS_COLUMNS = ("degradation_label", "layer_index", "mean", "p10", "p50", "p90")


def early_layers(n_layers: int, fraction: float = 0.2) -> list[int]:
    """Indices of the first ``fraction`` of layers (at least one)."""
    return list(range(max(1, math.ceil(fraction * n_layers))))


def summarize_deltas(per_label: dict[str, dict[int, list[np.ndarray]]]) -> list[dict]:
    rows = []
    for label in sorted(per_label):
        for layer in sorted(per_label[label]):
            vals = np.concatenate([np.ravel(v) for v in per_label[label][layer]])
            p10, p50, p90 = np.percentile(vals, [10, 50, 90])
            rows.append({"degradation_label": label, "layer_index": layer, "mean": float(vals.mean()),
                         "p10": float(p10), "p50": float(p50), "p90": float(p90)})
    return rows


def delta_stats(model: DeltaTracer, corpus: Iterable, fraction: float = 0.2) -> list[dict]:
    """Per-label statistics of the modulated step size in the early DPSS layers.

    ``corpus`` yields ``(image, label)`` pairs or objects with ``.degraded`` and
    ``.spec.label``. Images are visited in order and aggregated per label.
    """
    per_label: dict[str, dict[int, list[np.ndarray]]] = OrderedDict()
    seen = 0
    for item in corpus:
        if isinstance(item, tuple):
            image, label = item
        else:
            image, label = item.degraded, item.spec.label
        deltas = model.trace_deltas(image)
        layers = early_layers(len(deltas), fraction)
        bucket = per_label.setdefault(label, {})
        for li in layers:
            bucket.setdefault(li, []).append(deltas[li])
        seen += 1
    if not seen:
        raise ValueError("delta_stats needs a non-empty corpus")
    return summarize_deltas(per_label)
