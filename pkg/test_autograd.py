"""
Pruebas del motor de diferenciacion automatica
"""

import numpy as np
import pytest

from app.autograd import ops
from app.autograd.gradcheck import grad_check
from app.autograd.tensor import Tape, Tensor, backward, no_grad
from app.core.errors import NonFiniteError, ShapeError, TapeError


def test_tape_computes_product_rule():
    """d/dx sum(x * y) = y"""
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    y = Tensor([4.0, 5.0, 6.0], requires_grad=True)
    with Tape() as tape:
        loss = ops.sum(ops.mul(x, y))
    tape.backward(loss)
    np.testing.assert_allclose(x.grad, y.data)
    np.testing.assert_allclose(y.grad, x.data)


def test_backward_twice_accumulates():
    """Dos backward sin zero_grad suman los gradientes"""
    x = Tensor([1.0, -2.0], requires_grad=True)
    with Tape() as tape:
        loss = ops.sum(ops.scale(x, 3.0))
    tape.backward(loss)
    tape.backward(loss)
    np.testing.assert_allclose(x.grad, [6.0, 6.0])


def test_reused_input_accumulates_paths():
    """x usado dos veces: d/dx sum(x * x) = 2x"""
    x = Tensor([0.5, -1.5, 2.0], requires_grad=True)
    with Tape():
        loss = ops.sum(ops.mul(x, x))
    backward(loss)
    np.testing.assert_allclose(x.grad, 2 * x.data)


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        out = ops.scale(x, 2.0)
    with pytest.raises(TapeError):
        tape.backward(out)


def test_backward_rejects_foreign_tensor():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape():
        loss = ops.sum(x)
    with Tape() as other:
        pass
    with pytest.raises(TapeError):
        other.backward(loss)


def test_no_implicit_broadcasting():
    a = Tensor(np.ones((2, 3)))
    b = Tensor(np.ones(3))
    with pytest.raises(ShapeError):
        ops.add(a, b)


def test_add_bias_declares_axis():
    x = Tensor(np.zeros((2, 3, 4)))
    bias = Tensor([1.0, 2.0, 3.0])
    out = ops.add_bias(x, bias, axis=1)
    np.testing.assert_allclose(out.data[:, 1, :], 2.0)
    with pytest.raises(ShapeError):
        ops.add_bias(x, bias, axis=2)


def test_non_finite_output_raises():
    x = Tensor([1.0, -1.0])
    with pytest.raises(NonFiniteError):
        ops.div(x, Tensor([0.0, 1.0]))


def test_tensor_rejects_nan_and_empty():
    with pytest.raises(NonFiniteError):
        Tensor([np.nan])
    with pytest.raises(TapeError):
        Tensor(np.zeros((0, 3)))


def test_no_grad_records_nothing():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        with no_grad():
            ops.sum(ops.mul(x, x))
    assert tape.records == []


def test_relu_subgradient_at_zero_is_zero():
    x = Tensor([0.0, 1.0, -1.0], requires_grad=True)
    with Tape() as tape:
        loss = ops.sum(ops.relu(x))
    tape.backward(loss)
    np.testing.assert_allclose(x.grad, [0.0, 1.0, 0.0])


def test_l2_norm_of_zero_vector_has_zero_gradient():
    x = Tensor(np.zeros((1, 4)), requires_grad=True)
    with Tape() as tape:
        loss = ops.sum(ops.l2_norm(x, axis=-1))
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, np.zeros((1, 4)))


def test_einsum_requires_explicit_output():
    a = Tensor(np.ones((2, 3)))
    b = Tensor(np.ones((3, 4)))
    with pytest.raises(ShapeError):
        ops.einsum("ij,jk", a, b)
    out = ops.einsum("ij,jk->ik", a, b)
    np.testing.assert_allclose(out.data, np.full((2, 4), 3.0))


def test_softmax_rows_sum_to_one(rng):
    x = Tensor(rng.normal(size=(4, 5)))
    out = ops.softmax(x, axis=1)
    np.testing.assert_allclose(out.data.sum(axis=1), np.ones(4), rtol=1e-6)


def test_conv2d_matches_direct_loop(rng, f64):
    """Convolucion por ventanas contra la suma explicita"""
    x = rng.normal(size=(2, 3, 6, 6))
    w = rng.normal(size=(4, 3, 3, 3))
    out = ops.conv2d(Tensor(x), Tensor(w), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    h = ops.conv_output_size(6, 3, 2, 1)
    expected = np.zeros((2, 4, h, h))
    for i in range(h):
        for j in range(h):
            patch = xp[:, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3]
            expected[:, :, i, j] = np.einsum("bchw,ochw->bo", patch, w)
    np.testing.assert_allclose(out, expected, rtol=1e-10)


@pytest.mark.parametrize("fn", [
    lambda x: ops.sum(ops.sigmoid(x)),
    lambda x: ops.sum(ops.mul(ops.softmax(x, axis=1), ops.softmax(x, axis=1))),
    lambda x: ops.sum(ops.l2_norm(x, axis=1)),
    lambda x: ops.sum(ops.sqrt(ops.add_scalar(ops.squared_norm(x, axis=0), 1.0))),
    lambda x: ops.sum(ops.einsum("ij,kj->ik", x, ops.transpose(ops.reshape(x, (3, 4)), (0, 1)))),
])
def test_grad_check_on_composed_functions(fn, rng, f64):
    """Gradientes de la cinta contra diferencias finitas centrales"""
    x = Tensor(rng.normal(size=(3, 4)))
    report = grad_check(fn, x)
    assert report.passed, report
    assert report.checked > 0


def test_grad_check_detects_wrong_rule(rng, f64):
    """Una regla escalada por 1.1 debe fallar el chequeo"""
    from app.autograd.tensor import BACKWARD_RULES, override_backward

    original = BACKWARD_RULES["sigmoid"]

    def broken(g, rec):
        return tuple(None if d is None else 1.1 * d for d in original(g, rec))

    x = Tensor(rng.normal(size=(5,)))
    with override_backward("sigmoid", broken):
        report = grad_check(lambda t: ops.sum(ops.sigmoid(t)), x)
    assert not report.passed
    assert BACKWARD_RULES["sigmoid"] is original


def test_grad_check_requires_float64(rng):
    from app.autograd.gradcheck import grad_check_param

    x = Tensor(rng.normal(size=(3,)).astype(np.float32), requires_grad=True)
    with pytest.raises(TapeError):
        grad_check_param(lambda: ops.sum(x), x)
