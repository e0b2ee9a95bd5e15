import math

import numpy as np
import pytest

from dpssm.modulation import (DEFAULT_EMBED_DIM, ModulationHeads, delta_stats, dp_scan, early_layers, modulate,
                              summarize_deltas)
from dpssm.ssm import ScanInputs, SsmParams, discretize_zoh, scan_sequential


def problem(seed, b=1, L=7, d=3, n=4):
    rng = np.random.default_rng(seed)
    params = SsmParams(-rng.uniform(0.2, 3, size=(d, n)), rng.normal(size=d))
    inputs = ScanInputs(rng.normal(size=(b, L, d)), rng.uniform(0.01, 0.5, size=(b, L, d)),
                        rng.normal(size=(b, L, n)), rng.normal(size=(b, L, n)))
    return params, inputs


def set_heads(heads, log_delta=0.0, log_B=0.0, log_C=0.0):
    heads.delta.bias.data[:] = log_delta
    heads.B.bias.data[:] = log_B
    heads.C.bias.data[:] = log_C
    return heads


def test_default_embedding_dim():
    assert DEFAULT_EMBED_DIM == 512
    assert ModulationHeads(3, 4).d_emb == 512


def test_zero_init_is_identity_bitwise():
    p, x = problem(0)
    heads = ModulationHeads(3, 4, 16)
    E = np.random.default_rng(1).normal(size=16)
    for a in heads.alphas(E):
        assert np.all(a == 1.0)
    mod = modulate(heads, E, x)
    for k in ("delta", "B", "C"):
        assert np.array_equal(getattr(mod, k), getattr(x, k))
    assert np.array_equal(dp_scan(p, x, E, heads).y, scan_sequential(p, x).y)


def test_alpha_delta_two_doubles_step():
    heads = set_heads(ModulationHeads(1, 1, 4), log_delta=math.log(2))
    x = ScanInputs(np.ones((1, 1, 1)), np.full((1, 1, 1), 0.1), np.ones((1, 1, 1)), np.ones((1, 1, 1)))
    mod = modulate(heads, np.zeros(4), x)
    abar, _ = discretize_zoh(-1.0, mod.delta[0, 0, 0], 1.0)
    assert abar == pytest.approx(math.exp(-0.2), rel=1e-15)


def test_alpha_B_to_zero_collapses_to_skip():
    p, x = problem(2)
    heads = set_heads(ModulationHeads(3, 4, 4), log_B=-745.0)  # exp underflows to the smallest subnormal
    y = dp_scan(p, x, np.zeros(4), heads).y
    assert np.allclose(y, p.D * x.x, atol=1e-300)


def test_positivity_of_modulated_delta():
    p, x = problem(3)
    heads = ModulationHeads(3, 4, 8, rng=np.random.default_rng(0))
    mod = modulate(heads, 5 * np.random.default_rng(1).normal(size=8), x)
    assert np.all(mod.delta > 0)


def test_linear_in_B_at_fixed_delta():
    p, x = problem(4)
    base = scan_sequential(p, x).y - p.D * x.x
    for t in (0.5, 3.0, 17.0):
        scaled = ScanInputs(x.x, x.delta, t * x.B, x.C)
        got = scan_sequential(p, scaled).y - p.D * x.x
        assert np.max(np.abs(got - t * base)) <= 1e-10 * max(1.0, np.max(np.abs(t * base)))


def test_C_modulation_leaves_states_unchanged():
    p, x = problem(5)
    h1 = dp_scan(p, x, np.zeros(4), ModulationHeads(3, 4, 4), return_states=True).states
    h2 = dp_scan(p, x, np.zeros(4), set_heads(ModulationHeads(3, 4, 4), log_C=1.3), return_states=True).states
    assert np.array_equal(h1, h2)


def test_batch_commutes_bitwise():
    p, x = problem(6, b=2)
    heads = ModulationHeads(3, 4, 8, rng=np.random.default_rng(2))
    E = np.random.default_rng(3).normal(size=(2, 8))
    full = dp_scan(p, x, E, heads).y
    for i in range(2):
        xi = ScanInputs(x.x[i:i + 1], x.delta[i:i + 1], x.B[i:i + 1], x.C[i:i + 1])
        assert np.array_equal(dp_scan(p, xi, E[i], heads).y, full[i:i + 1])


def test_trained_heads_give_different_delta_distributions():
    p, x = problem(7)
    heads = ModulationHeads(3, 4, 8, rng=np.random.default_rng(4))
    rng = np.random.default_rng(5)
    d1 = modulate(heads, rng.normal(size=8), x).delta
    d2 = modulate(heads, rng.normal(size=8), x).delta
    assert not np.allclose(d1, d2)


def test_heads_reject_wrong_widths():
    _, x = problem(8)
    with pytest.raises(ValueError):
        modulate(ModulationHeads(5, 4, 4), np.zeros(4), x)
    with pytest.raises(ValueError):
        ModulationHeads(3, 4, 4)(np.zeros(5))


def test_early_layers():
    assert early_layers(8) == [0, 1]
    assert early_layers(1) == [0]
    assert early_layers(10, 0.2) == [0, 1]
    assert early_layers(3, 0.01) == [0]


class FakeTracer:
    def __init__(self, table):
        self.table = table

    def trace_deltas(self, image):
        return self.table[float(image.ravel()[0])]


def test_delta_stats_single_image_and_identity():
    tracer = FakeTracer({0.0: [np.arange(1.0, 11.0), np.zeros(3)] + [np.zeros(2)] * 3})
    rows = delta_stats(tracer, [(np.zeros((1, 2, 2)), "noise")])
    assert len(rows) == 1
    r = rows[0]
    vals = np.arange(1.0, 11.0)
    assert (r["mean"], r["p50"]) == (vals.mean(), np.median(vals))
    assert r["p10"] == pytest.approx(np.percentile(vals, 10))
    with pytest.raises(ValueError):
        delta_stats(tracer, [])


def test_summarize_deltas_columns():
    rows = summarize_deltas({"b": {0: [np.ones(4)]}, "a": {1: [np.full(2, 3.0)], 0: [np.zeros(1)]}})
    assert [(r["degradation_label"], r["layer_index"]) for r in rows] == [("a", 0), ("a", 1), ("b", 0)]
