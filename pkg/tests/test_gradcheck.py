import numpy as np
import pytest

from rnaligner.errors import NumericError, UsageError
from rnaligner.gradcheck import grad_check
from rnaligner.tensor import (
    Graph, Tensor, apply_op, accumulate_grad, conv2d, layer_norm, log,
    matmul, parameter, sigmoid, softmax, tanh, tsum,
)


def test_quadratic_is_machine_precise():
    p = parameter(np.array([0.3, -1.2, 2.0]))
    err = grad_check(lambda ps: tsum(ps[0] * ps[0]), [p], eps=1e-5)
    assert err < 1e-8


def test_corrupted_gradient_is_flagged():
    # custom op whose backward is deliberately 1% off
    def bad_square(t):
        def grad_fn(out):
            accumulate_grad(t, out.grad * 2.0 * t.data * 1.01)
        return apply_op(t.data * t.data, (t,), grad_fn)

    p = parameter(np.array([0.7, -0.4]))
    err = grad_check(lambda ps: tsum(bad_square(ps[0])), [p], eps=1e-5)
    assert 5e-3 < err < 5e-2


def test_composite_network_block():
    rng = np.random.default_rng(9)
    w = parameter(rng.uniform(-0.5, 0.5, size=(4, 3)))
    b = parameter(rng.uniform(-0.5, 0.5, size=(3,)))
    gain = parameter(np.ones(3))
    bias = parameter(np.zeros(3))
    x = Tensor(rng.normal(size=(5, 4)))

    def f(ps):
        h = layer_norm(tanh(matmul(x, ps[0]) + ps[1]), ps[2], ps[3])
        return tsum(sigmoid(h) * h)

    assert grad_check(f, [w, b, gain, bias], eps=1e-5) <= 1e-4


def test_conv_and_softmax_path():
    rng = np.random.default_rng(10)
    k = parameter(rng.uniform(-0.5, 0.5, size=(3, 3, 1, 2)))
    x = Tensor(rng.normal(size=(5, 4, 1)))

    def f(ps):
        fm = conv2d(x, ps[0], stride_t=2, stride_f=2)
        flat = tsum(fm, axis=(0, 1))
        probs = softmax(flat * 0.3)
        return tsum(probs * log(probs))

    assert grad_check(f, [k], eps=1e-5) <= 1e-4


def test_non_finite_f_aborts_with_coordinate():
    p = parameter(np.array([1e-9]))
    with pytest.raises(NumericError, match="coordinate"):
        grad_check(lambda ps: tsum(log(ps[0])), [p], eps=1e-5)


def test_bad_eps_rejected():
    p = parameter(np.array([1.0]))
    with pytest.raises(UsageError):
        grad_check(lambda ps: tsum(ps[0]), [p], eps=0.0)
