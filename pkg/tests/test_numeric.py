import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpssm.numeric import (Conv2dKernel, as_image, check_finite, conv2d, conv2d_grad_input,
                           conv2d_grad_weight, conv2d_raw, dft2, dft_naive, fft_radix2,
                           global_avg_pool, idft2_unnormalized, pixel_shuffle, pixel_unshuffle)


def direct_conv(x, w, b, stride, pad, groups):
    """Nested-loop cross-correlation with zero padding."""
    c_in, h, wd = x.shape
    c_out, cg, k, _ = w.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((c_out, ho, wo))
    og = c_out // groups
    for o in range(c_out):
        g = o // og
        for i in range(ho):
            for j in range(wo):
                s = 0.0 if b is None else b[o]
                for ci in range(cg):
                    for u in range(k):
                        for v in range(k):
                            yy, xx = i * stride + u - pad, j * stride + v - pad
                            if 0 <= yy < h and 0 <= xx < wd:
                                s += w[o, ci, u, v] * x[g * cg + ci, yy, xx]
                out[o, i, j] = s
    return out


def test_identity_kernel():
    x = np.random.default_rng(0).normal(size=(1, 5, 6))
    out = conv2d(x, Conv2dKernel(np.ones((1, 1, 1, 1)), np.zeros(1)))
    assert np.array_equal(out, x)


def test_box_on_constant_interior():
    x = np.full((1, 6, 6), 0.37)
    out = conv2d(x, Conv2dKernel(np.full((1, 1, 3, 3), 1 / 9)))
    assert np.allclose(out[:, 1:-1, 1:-1], 0.37, atol=1e-15)
    assert not np.allclose(out[0, 0, 0], 0.37)


def test_random_3x3_matches_direct_sum():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 4, 4))
    w = rng.normal(size=(1, 1, 3, 3))
    b = rng.normal(size=1)
    assert np.max(np.abs(conv2d(x, Conv2dKernel(w, b)) - direct_conv(x, w, b, 1, 1, 1))) <= 1e-12


@pytest.mark.parametrize("c_in,c_out,k,stride,pad,groups", [
    (3, 4, 3, 1, 1, 1), (4, 4, 3, 2, 1, 4), (4, 6, 5, 2, 2, 2), (2, 3, 1, 1, 0, 1), (3, 2, 7, 1, 3, 1)])
def test_conv_general_matches_direct(c_in, c_out, k, stride, pad, groups):
    rng = np.random.default_rng(c_in * 10 + k)
    x = rng.normal(size=(c_in, 9, 8))
    w = rng.normal(size=(c_out, c_in // groups, k, k))
    b = rng.normal(size=c_out)
    got = conv2d_raw(x, w, b, stride, pad, groups)
    assert np.allclose(got, direct_conv(x, w, b, stride, pad, groups), atol=1e-12)


@pytest.mark.parametrize("stride,pad,groups", [(1, 1, 1), (2, 1, 1), (1, 1, 3), (2, 2, 3)])
def test_conv_gradients_are_adjoint(stride, pad, groups):
    # <g, conv(x, w)> is bilinear, so the gradients follow from its directional derivatives
    rng = np.random.default_rng(2)
    x = rng.normal(size=(3, 7, 6))
    w = rng.normal(size=(6, 3 // groups, 3, 3))
    y = conv2d_raw(x, w, None, stride, pad, groups)
    g = rng.normal(size=y.shape)
    dx, dw = rng.normal(size=x.shape), rng.normal(size=w.shape)
    lhs_x = np.sum(g * conv2d_raw(dx, w, None, stride, pad, groups))
    lhs_w = np.sum(g * conv2d_raw(x, dw, None, stride, pad, groups))
    gx = conv2d_grad_input(g, w, x.shape, stride, pad, groups)
    gw = conv2d_grad_weight(g, x, w.shape, stride, pad, groups)
    assert np.isclose(lhs_x, np.sum(gx * dx), rtol=1e-12)
    assert np.isclose(lhs_w, np.sum(gw * dw), rtol=1e-12)


def test_conv_rejects_bad_groups():
    with pytest.raises(ValueError):
        conv2d_raw(np.zeros((3, 4, 4)), np.zeros((4, 2, 3, 3)), None, 1, 1, 2)


def test_dft_zero_and_constant():
    assert np.all(dft2(np.zeros((1, 4, 4))) == 0)
    X = dft2(np.full((1, 4, 4), 0.25))
    assert np.isclose(X[0, 0, 0], 16 * 0.25)
    rest = X.copy()
    rest[0, 0, 0] = 0
    assert np.max(np.abs(rest)) < 1e-14


def test_parseval_8x8():
    x = np.random.default_rng(3).normal(size=(1, 8, 8))
    X = dft2(x)
    assert abs(np.sum(x ** 2) - np.sum(np.abs(X) ** 2) / 64) <= 1e-9 * np.sum(x ** 2)


@pytest.mark.parametrize("n", [1, 2, 4, 16, 64])
def test_fft_radix2_matches_naive_and_numpy(n):
    x = np.random.default_rng(n).normal(size=(3, n)) + 1j * np.random.default_rng(n + 1).normal(size=(3, n))
    assert np.allclose(fft_radix2(x), dft_naive(x), atol=1e-10)
    assert np.allclose(fft_radix2(x), np.fft.fft(x, axis=-1), atol=1e-10)


def test_fft_rejects_non_pow2():
    with pytest.raises(ValueError):
        fft_radix2(np.zeros(6))


@pytest.mark.parametrize("shape", [(1, 8, 8), (3, 6, 8), (2, 5, 7)])
def test_dft2_methods_agree_and_invert(shape):
    x = np.random.default_rng(4).normal(size=shape)
    ref = np.fft.fft2(x)
    assert np.allclose(dft2(x, "naive"), ref, atol=1e-10)
    assert np.allclose(dft2(x), ref, atol=1e-10)
    assert np.allclose(idft2_unnormalized(dft2(x)).real / (shape[1] * shape[2]), x, atol=1e-12)


def test_global_avg_pool():
    assert np.all(global_avg_pool(np.full((1, 3, 3), 2.5)) == 2.5)
    assert global_avg_pool(np.array([[[0.0, 2.0], [0.0, 2.0]]]))[0, 0, 0] == 1.0
    x = np.stack([np.full((2, 2), 1.0), np.full((2, 2), -3.0)])
    assert np.array_equal(global_avg_pool(x).ravel(), [1.0, -3.0])


def test_pixel_shuffle_laws():
    x = np.random.default_rng(5).normal(size=(4, 2, 2))
    assert np.array_equal(pixel_shuffle(x, 1), x)
    y = pixel_shuffle(x, 2)
    assert y.shape == (1, 4, 4)
    # out[c, h*r + i, w*r + j] = in[c*r*r + i*r + j, h, w]
    for i in range(2):
        for j in range(2):
            assert np.array_equal(y[0, i::2, j::2], x[i * 2 + j])
    z = np.random.default_rng(6).normal(size=(8, 3, 5))
    assert np.array_equal(pixel_unshuffle(pixel_shuffle(z, 2), 2), z)


def test_pixel_shuffle_errors():
    with pytest.raises(ValueError):
        pixel_shuffle(np.zeros((3, 2, 2)), 2)
    with pytest.raises(ValueError):
        pixel_unshuffle(np.zeros((1, 3, 4)), 2)


def test_as_image_and_finiteness():
    assert as_image(np.full((4, 4), 2.0)).max() == 1.0
    with pytest.raises(ValueError):
        as_image(np.zeros((2, 4, 4)))
    with pytest.raises(FloatingPointError):
        check_finite(np.array([1.0, np.nan]))


@settings(max_examples=25, deadline=None)
@given(c=st.integers(1, 3), h=st.integers(1, 4), w=st.integers(1, 4), r=st.sampled_from([1, 2, 3]),
       seed=st.integers(0, 1000))
def test_shuffle_roundtrip_property(c, h, w, r, seed):
    x = np.random.default_rng(seed).normal(size=(c, h * r, w * r))
    assert np.array_equal(pixel_shuffle(pixel_unshuffle(x, r), r), x)
