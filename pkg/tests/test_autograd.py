import numpy as np
import pytest

from dpssm import autograd as ag
from dpssm.autograd import Tape, Var
from dpssm.gradcheck import central_diff, tensor_rel_err


def check(fn, *arrays, tol=1e-6, h=1e-6):
    """Compare tape gradients of sum(R * fn(*vars)) against central differences."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    out0 = fn(*[Var(a) for a in arrays]).data
    R = np.random.default_rng(0).normal(size=out0.shape)
    vs = [Var(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        loss = ag.sum(fn(*vs) * R)
    tape.backward(loss)

    def f():
        return float(np.sum(fn(*[Var(a) for a in arrays]).data * R))
    for v, a in zip(vs, arrays):
        num = central_diff(f, a, h)
        assert tensor_rel_err(v.grad, num) <= tol


rng = np.random.default_rng(42)
M = rng.normal(size=(3, 4))
P = rng.uniform(0.5, 2.0, size=(3, 4))


@pytest.mark.parametrize("fn,args", [
    (lambda a, b: a + b, (M, rng.normal(size=(4,)))),
    (lambda a, b: a - b, (M, rng.normal(size=(3, 1)))),
    (lambda a, b: a * b, (M, rng.normal(size=(3, 4)))),
    (lambda a, b: a / b, (M, P)),
    (ag.exp, (M,)),
    (ag.log, (P,)),
    (ag.square, (M,)),
    (ag.sqrt, (P,)),
    (ag.abs, (P * np.sign(M),)),
    (ag.sigmoid, (M,)),
    (ag.silu, (M,)),
    (ag.softplus, (M * 5,)),
    (lambda a: ag.leaky_relu(a, 0.2), (P * np.sign(M),)),
    (lambda a: ag.sum(a, axis=1, keepdims=True), (M,)),
    (lambda a: ag.mean(a, axis=0), (M,)),
    (lambda a: ag.reshape(a, (2, 6)), (M,)),
    (lambda a: ag.transpose(a, (1, 0)), (M,)),
    (lambda a: ag.getitem(a, (slice(1, 3), [0, 2])), (M,)),
    (lambda a, b: ag.concat([a, b], axis=0), (M, rng.normal(size=(2, 4)))),
    (ag.matmul, (M, rng.normal(size=(4, 2)))),
    (ag.matmul, (rng.normal(size=(3,)), M)),
    (lambda a, b: ag.matmul(a, b), (rng.normal(size=(2, 5, 3)), M)),
    (lambda a: ag.log_softmax(a, axis=1), (M,)),
])
def test_elementwise_and_shape_ops(fn, args):
    check(fn, *args)


@pytest.mark.parametrize("stride,padding,groups", [(1, "same", 1), (2, 1, 1), (1, "same", 2), (1, 0, 1)])
def test_conv2d_grad(stride, padding, groups):
    x = rng.normal(size=(4, 6, 6))
    w = rng.normal(size=(2, 4 // groups, 3, 3))
    b = rng.normal(size=2)
    check(lambda x, w, b: ag.conv2d(x, w, b, stride, padding, groups), x, w, b)


def test_pixel_shuffle_grads():
    check(lambda a: ag.pixel_shuffle(a, 2), rng.normal(size=(8, 2, 3)))
    check(lambda a: ag.pixel_unshuffle(a, 2), rng.normal(size=(2, 4, 6)))


@pytest.mark.parametrize("shape", [(1, 4, 4), (2, 3, 5)])
def test_spectral_l1_grad(shape):
    check(ag.spectral_l1, rng.normal(size=shape))


def test_selective_scan_grad():
    b, L, d, n = 1, 6, 2, 3
    r = np.random.default_rng(3)
    args = (r.normal(size=(b, L, d)), r.uniform(0.05, 0.5, size=(b, L, d)), -r.uniform(0.5, 2, size=(d, n)),
            r.normal(size=(b, L, n)), r.normal(size=(b, L, n)), r.normal(size=d))
    check(lambda *a: ag.selective_scan(*a, method="sequential"), *args)
    check(lambda *a: ag.selective_scan(*a, method="parallel"), *args)


def test_fanout_accumulates():
    a = Var(np.array([2.0, 3.0]), requires_grad=True)
    with Tape() as tape:
        out = ag.sum(a * a + a)
    tape.backward(out)
    assert np.array_equal(a.grad, 2 * a.data + 1)


def test_no_tape_no_graph_and_nonfinite_raises():
    a = Var(np.ones(2), requires_grad=True)
    out = a * 2
    assert not out._produced
    with pytest.raises(FloatingPointError), np.errstate(invalid="ignore"):
        ag.log(Var(np.array([-1.0])))
    with Tape() as tape:
        pass
    with pytest.raises(RuntimeError):
        tape.backward(out)


def test_unbroadcast_shapes():
    g = np.ones((2, 3, 4))
    assert ag.unbroadcast(g, (4,)).shape == (4,)
    assert np.all(ag.unbroadcast(g, (3, 1)) == 8)
