"""PNG figures written next to the CSV/JSON reports. Uses the non-interactive Agg backend."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {"figure.figsize": (5.0, 3.4), "figure.dpi": 110, "axes.grid": True, "grid.alpha": 0.3,
         "font.size": 9, "axes.spines.top": False, "axes.spines.right": False}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_bench(rows: list[dict], path) -> Path:
    """Median ns/element against L, one line per (method, workers)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        keys = sorted({(r["method"], r["workers"]) for r in rows})
        for method, w in keys:
            sel = sorted((r for r in rows if (r["method"], r["workers"]) == (method, w)), key=lambda r: r["L"])
            label = method if method == "sequential" else f"{method} x{w}"
            ax.errorbar([r["L"] for r in sel], [r["median_ns_per_elem"] for r in sel],
                        yerr=[[0] * len(sel), [r["p95_ns_per_elem"] - r["median_ns_per_elem"] for r in sel]],
                        marker="o", capsize=2, label=label)
        ax.set_xscale("log", base=2)
        ax.set_yscale("log")
        ax.set_xlabel("sequence length L")
        ax.set_ylabel("ns / element (median, bar to p95)")
        if keys:
            ax.legend(frameon=False)
        return _save(fig, path)


def plot_delta_stats(rows: list[dict], path) -> Path:
    """Per-label p10/p50/p90 of the step size, grouped by layer."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        labels = sorted({r["degradation_label"] for r in rows})
        layers = sorted({int(r["layer_index"]) for r in rows})
        width = 0.8 / max(len(layers), 1)
        for j, layer in enumerate(layers):
            for i, lab in enumerate(labels):
                r = next((r for r in rows if r["degradation_label"] == lab and int(r["layer_index"]) == layer), None)
                if r is None:
                    continue
                x = i + (j - (len(layers) - 1) / 2) * width
                ax.vlines(x, r["p10"], r["p90"], color=f"C{j}", lw=2)
                ax.plot(x, r["p50"], "o", color=f"C{j}", label=f"layer {layer}" if i == 0 else None)
                ax.plot(x, r["mean"], "x", color="k", ms=4)
        ax.set_xticks(range(len(labels)), labels)
        ax.set_yscale("log")
        ax.set_ylabel("step size (p10 - p90, o median, x mean)")
        if layers:
            ax.legend(frameon=False)
        return _save(fig, path)


def plot_spectrum_gap(gap: dict, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(np.asarray(gap["freq"]), np.asarray(gap["gap"]), marker=".")
        ax.set_xlabel("normalized radial frequency")
        ax.set_ylabel("mean |F(target) - F(pred)|")
        return _save(fig, path)


def plot_curves(curves: dict[str, list[float]], path, ylabel: str, logy: bool = False) -> Path:
    """Training curves (toy 1-D losses, overfit PSNR) against step."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name, ys in curves.items():
            ax.plot(np.arange(len(ys)), ys, lw=1, label=name)
        ax.set_xlabel("step")
        ax.set_ylabel(ylabel)
        if logy:
            ax.set_yscale("log")
        if curves:
            ax.legend(frameon=False)
        return _save(fig, path)
