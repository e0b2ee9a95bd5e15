"""Sequential vs parallel scan timing with a correctness gate, and scan op counts.

Every configuration is first checked against the sequential recurrence; a
configuration whose output disagrees is reported in ``rejected`` and never
gets a timing row.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .ssm import ScanInputs, SsmParams, scan_parallel, scan_sequential

log = logging.getLogger(__name__)

BENCH_COLUMNS = ("L", "d_inner", "N", "method", "workers", "reps", "median_ns_per_elem",
                 "p95_ns_per_elem", "max_rel_err", "speedup_vs_sequential")
MIN_REPS = 20
CHECK_TOL = 1e-10

ScanFn = Callable[[SsmParams, ScanInputs, int], np.ndarray]


def _seq(params, inputs, workers):
    return scan_sequential(params, inputs).y


def _par(params, inputs, workers):
    return scan_parallel(params, inputs, workers=workers).y


DEFAULT_IMPLS: dict[str, ScanFn] = {"sequential": _seq, "parallel": _par}


def random_problem(L: int, d_inner: int, N: int, seed: int = 0, batch: int = 1):
    rng = np.random.default_rng([seed, L, d_inner, N])
    params = SsmParams.s4d_real(d_inner, N)
    inputs = ScanInputs(x=rng.normal(size=(batch, L, d_inner)),
                        delta=np.exp(rng.uniform(np.log(1e-3), np.log(1e-1), size=(batch, L, d_inner))),
                        B=rng.normal(size=(batch, L, N)), C=rng.normal(size=(batch, L, N)))
    return params, inputs


def rel_err(ref: np.ndarray, got: np.ndarray) -> float:
    if ref.shape != got.shape or not np.all(np.isfinite(got)):
        return float("inf")
    return float(np.max(np.abs(ref - got)) / max(np.max(np.abs(ref)), 1e-300))


def op_counts(L: int, d_inner: int, N: int) -> dict:
    """Element-operation counts for the scan stage.

    The recurrence h_i = a_i h_{i-1} + b_i costs one multiply and one add per
    (position, channel, state). A bi-directional scan runs it twice; the
    degradation-prompted single scan instead adds one multiply per (position,
    state) to modulate C.
    """
    single = 2 * L * d_inner * N
    bi = 2 * single
    c_mod = L * N
    return {"L": L, "d_inner": d_inner, "N": N, "single_scan_ops": single, "bi_scan_ops": bi,
            "c_modulation_ops": c_mod, "ratio_bi_over_single": bi / single,
            "ratio_bi_over_single_plus_cmod": bi / (single + c_mod)}


@dataclass
class BenchResult:
    rows: list[dict] = field(default_factory=list)
    rejected: list[dict] = field(default_factory=list)
    op_counts: list[dict] = field(default_factory=list)


def _time(fn, reps: int, warmup: int) -> np.ndarray:
    for _ in range(warmup):
        fn()
    out = np.empty(reps)
    for r in range(reps):
        t0 = time.perf_counter_ns()
        fn()
        out[r] = time.perf_counter_ns() - t0
    return out


def bench_scan(lengths, d_inner: int = 16, N: int = 16, threads=(1,), reps: int = MIN_REPS,
               warmup: int = 2, seed: int = 0, impls: dict[str, ScanFn] | None = None,
               tol: float = CHECK_TOL) -> BenchResult:
    """Time each implementation at each length (and worker count for non-sequential ones).

    ``impls`` maps a method name to ``fn(params, inputs, workers) -> y``; the
    entry named ``sequential`` is the reference and is timed once per length.
    """
    if reps < MIN_REPS:
        raise ValueError(f"need at least {MIN_REPS} timed repetitions, got {reps}")
    impls = dict(DEFAULT_IMPLS if impls is None else impls)
    if "sequential" not in impls:
        raise ValueError("impls must include the 'sequential' reference")
    res = BenchResult()
    for L in lengths:
        params, inputs = random_problem(int(L), d_inner, N, seed)
        elems = int(L) * d_inner * N
        ref = scan_sequential(params, inputs).y
        res.op_counts.append(op_counts(int(L), d_inner, N))
        seq_median = None
        for name, fn in impls.items():
            for w in ((1,) if name == "sequential" else threads):
                err = rel_err(ref, np.asarray(fn(params, inputs, w)))
                if not err <= tol:
                    log.error("bench %s L=%d workers=%d failed correctness (rel err %.3g)", name, L, w, err)
                    res.rejected.append({"L": int(L), "method": name, "workers": w, "max_rel_err": err})
                    continue
                ns = _time(lambda: fn(params, inputs, w), reps, warmup) / elems
                med = float(np.median(ns))
                if name == "sequential":
                    seq_median = med
                res.rows.append({"L": int(L), "d_inner": d_inner, "N": N, "method": name, "workers": w,
                                 "reps": reps, "median_ns_per_elem": med,
                                 "p95_ns_per_elem": float(np.percentile(ns, 95)), "max_rel_err": err,
                                 "speedup_vs_sequential": None})
        for row in res.rows:
            if row["L"] == int(L) and seq_median is not None:
                row["speedup_vs_sequential"] = seq_median / row["median_ns_per_elem"]
    return res
