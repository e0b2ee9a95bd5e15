import numpy as np

from dpssm.plotting import plot_bench, plot_curves, plot_delta_stats, plot_spectrum_gap

PNG = b"\x89PNG\r\n\x1a\n"


def test_figures_written(tmp_path):
    bench = [{"L": L, "method": m, "workers": 1, "median_ns_per_elem": 10.0 + L / 100, "p95_ns_per_elem": 12.0 + L / 100}
             for L in (8, 64) for m in ("sequential", "parallel")]
    stats = [{"degradation_label": lab, "layer_index": 0, "p10": 0.1, "p50": 0.5, "p90": 1.0, "mean": 0.6}
             for lab in ("noise", "blur")]
    paths = [plot_bench(bench, tmp_path / "b.png"),
             plot_delta_stats(stats, tmp_path / "d.png"),
             plot_spectrum_gap({"freq": np.linspace(0, 1, 5), "gap": np.arange(5.0)}, tmp_path / "s.png"),
             plot_curves({"a": [3.0, 2.0, 1.0]}, tmp_path / "c.png", "loss", logy=True),
             plot_curves({}, tmp_path / "e.png", "loss")]
    for p in paths:
        assert p.read_bytes()[:8] == PNG
