"""
Pruebas de capas, capsulas y enrutamiento
"""

import numpy as np
import pytest

from app.autograd import ops
from app.autograd.tensor import Tape, Tensor
from app.core.errors import ShapeError
from app.nn.capsules import CapsuleSet, predict, primary_capsules, route, squash
from app.nn.init import glorot_limit, init_parameters
from app.nn.layers import BatchNormLayer, ConvLayer, DenseLayer


# =========================
# Capas
# =========================
def test_conv_layer_output_size():
    conv = ConvLayer(3, 8, kernel=5, stride=1, padding=2)
    init_parameters(conv, 0)
    out = conv(Tensor(np.zeros((2, 3, 16, 16))))
    assert out.shape == (2, 8, 16, 16)
    assert conv.output_size(16) == 16


def test_glorot_init_is_deterministic_and_bounded():
    a, b = DenseLayer(10, 6), DenseLayer(10, 6)
    init_parameters(a, 7)
    init_parameters(b, 7)
    np.testing.assert_array_equal(a.weight.data, b.weight.data)
    assert np.abs(a.weight.data).max() <= glorot_limit(10, 6)
    np.testing.assert_array_equal(a.bias.data, np.zeros(6))


def test_batchnorm_train_normalizes_and_tracks_running_stats(rng):
    bn = BatchNormLayer(3, momentum=0.9, epsilon=1e-5)
    x = rng.normal(loc=2.0, scale=3.0, size=(8, 3, 4, 4))
    out = bn(Tensor(x)).data
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), np.zeros(3), atol=1e-5)
    np.testing.assert_allclose(out.var(axis=(0, 2, 3)), np.ones(3), atol=1e-3)
    mu = x.mean(axis=(0, 2, 3))
    var = x.var(axis=(0, 2, 3))
    np.testing.assert_allclose(bn.running_mean.data, 0.1 * mu, rtol=1e-5)
    np.testing.assert_allclose(bn.running_var.data, 0.9 + 0.1 * var, rtol=1e-5)


def test_batchnorm_eval_uses_running_stats(rng):
    bn = BatchNormLayer(2)
    bn.running_mean.data = np.array([1.0, -1.0], dtype=np.float32)
    bn.running_var.data = np.array([4.0, 1.0], dtype=np.float32)
    bn.eval()
    x = rng.normal(size=(3, 2, 2, 2)).astype(np.float32)
    out = bn(Tensor(x)).data
    expected = (x - np.array([1.0, -1.0]).reshape(1, 2, 1, 1)) / np.sqrt(
        np.array([4.0, 1.0]).reshape(1, 2, 1, 1) + bn.epsilon
    )
    np.testing.assert_allclose(out, expected, rtol=1e-5)
    # evaluacion no toca las estadisticas
    np.testing.assert_array_equal(bn.running_mean.data, [1.0, -1.0])


def test_dense_layer_rejects_wrong_width():
    layer = DenseLayer(4, 2, activation="relu")
    with pytest.raises(ShapeError):
        layer(Tensor(np.zeros((3, 5))))


# =========================
# Squash y capsulas primarias
# =========================
def test_squash_lengths_in_unit_interval_and_direction_kept(rng):
    s = rng.normal(scale=5.0, size=(4, 6, 8))
    v = squash(Tensor(s)).data
    lengths = np.linalg.norm(v, axis=-1)
    assert np.all(lengths >= 0) and np.all(lengths < 1)
    sq = (s * s).sum(axis=-1)
    np.testing.assert_allclose(lengths, sq / (1 + sq), rtol=1e-4)
    cos = (v * s).sum(-1) / (lengths * np.sqrt(sq))
    np.testing.assert_allclose(cos, np.ones_like(cos), rtol=1e-5)


def test_squash_of_zero_vector_is_zero():
    v = squash(Tensor(np.zeros((1, 2, 4)))).data
    np.testing.assert_array_equal(v, np.zeros((1, 2, 4)))


def test_primary_capsules_count(rng):
    fmap = Tensor(rng.normal(size=(2, 8, 3, 3)))
    caps = primary_capsules(fmap, caps_dim=4)
    assert caps.activities.shape == (2, 2 * 3 * 3, 4)
    assert caps.lengths.shape == (2, 18)


def test_primary_capsules_rejects_indivisible_channels(rng):
    with pytest.raises(ShapeError):
        primary_capsules(Tensor(rng.normal(size=(1, 6, 3, 3))), caps_dim=4)


# =========================
# Enrutamiento
# =========================
def _random_caps(rng, b=2, n_in=5, d=4):
    return CapsuleSet(squash(Tensor(rng.normal(size=(b, n_in, d)))))


def test_routing_couplings_sum_to_one(rng):
    caps = _random_caps(rng)
    W = Tensor(rng.normal(scale=0.5, size=(5, 3, 6, 4)))
    out = route(caps, W, iterations=3)
    assert out.activities.shape == (2, 3, 6)
    assert len(out.routing.couplings) == 3
    for c in out.routing.couplings:
        np.testing.assert_allclose(c.sum(axis=2), np.ones((2, 5)), rtol=1e-5)
    assert np.all(out.lengths.data < 1)


def test_single_iteration_routing_is_uniform_average(rng, f64):
    """Con una ronda: v_j = squash((1/J) sum_i u_hat_ij)"""
    caps = _random_caps(rng)
    W = rng.normal(scale=0.5, size=(5, 3, 6, 4))
    out = route(caps, Tensor(W), iterations=1).activities.data
    u_hat = np.einsum("ijed,bid->bije", W, caps.activities.data)
    s = u_hat.sum(axis=1) / 3
    sq = (s * s).sum(-1, keepdims=True)
    expected = sq / (1 + sq) * s / np.sqrt(sq + 1e-8)
    np.testing.assert_allclose(out, expected, rtol=1e-10)


def test_routing_rejects_zero_iterations(rng):
    with pytest.raises(ShapeError):
        route(_random_caps(rng), Tensor(np.zeros((5, 3, 6, 4))), iterations=0)


def test_detached_agreement_still_trains_transforms(rng, f64):
    caps = _random_caps(rng)
    W = Tensor(rng.normal(scale=0.5, size=(5, 3, 6, 4)), requires_grad=True)
    with Tape() as tape:
        loss = ops.sum(route(caps, W, iterations=3, detach_agreement=True).lengths)
    tape.backward(loss)
    assert W.grad is not None and np.any(W.grad != 0)


def test_predict_breaks_ties_to_lowest_index():
    assert predict(np.array([0.2, 0.7, 0.7])) == 1
    np.testing.assert_array_equal(predict(np.array([[0.5, 0.5], [0.1, 0.9]])), [0, 1])


def test_squash_reference_lengths():
    s = np.zeros((1, 2, 3))
    s[0, 0] = [1.0, 0.0, 0.0]
    s[0, 1] = [0.0, 3.0, 0.0]
    lengths = np.linalg.norm(squash(Tensor(s)).data, axis=-1)
    np.testing.assert_allclose(lengths[0], [0.5, 0.9], rtol=1e-6)


def test_single_capsule_routing_ignores_iterations(rng, f64):
    caps = _random_caps(rng, b=1, n_in=1, d=3)
    W = rng.normal(size=(1, 1, 4, 3))
    u = W[0, 0] @ caps.activities.data[0, 0]
    sq = u @ u
    expected = sq / (1 + sq) * u / np.sqrt(sq + 1e-8)
    for iterations in (1, 2, 5):
        out = route(caps, Tensor(W), iterations=iterations).activities.data[0, 0]
        np.testing.assert_allclose(out, expected, rtol=1e-10)


def test_agreeing_capsules_increase_coupling(f64):
    """Dos capsulas identicas que predicen la salida 0: su acoplamiento crece en cada ronda"""
    u = np.array([[[1.0, 0.0], [1.0, 0.0]]])
    W = np.zeros((2, 2, 2, 2))
    W[:, 0] = np.eye(2) * 2.0
    W[:, 1] = np.array([[0.0, 0.0], [0.0, 1.0]])
    out = route(CapsuleSet(Tensor(u)), Tensor(W), iterations=4)
    coupling = [c[0, :, 0] for c in out.routing.couplings]
    for before, after in zip(coupling, coupling[1:]):
        assert np.all(after > before)


def test_routing_is_equivariant_to_output_permutation(rng, f64):
    caps = _random_caps(rng)
    W = rng.normal(scale=0.5, size=(5, 3, 6, 4))
    perm = np.array([2, 0, 1])
    v = route(caps, Tensor(W), iterations=3).activities.data
    v_perm = route(caps, Tensor(W[:, perm]), iterations=3).activities.data
    np.testing.assert_allclose(v_perm, v[:, perm], rtol=1e-10, atol=1e-12)


def test_zero_features_give_zero_primary_lengths():
    caps = primary_capsules(Tensor(np.zeros((1, 8, 2, 2))), caps_dim=4)
    np.testing.assert_array_equal(caps.lengths.data, np.zeros((1, 8)))


@pytest.mark.parametrize("norm", [50.0, 5000.0, 1e6])
def test_squash_length_stays_below_one_in_float32(norm):
    s = np.zeros((1, 3, 2), dtype=np.float32)
    s[0, :, 0] = norm
    s[0, 1, 1] = -norm
    v = squash(Tensor(s)).data
    assert v.dtype == np.float32
    lengths = CapsuleSet(Tensor(v)).lengths.data
    assert np.all(lengths < 1.0)


def test_capped_squash_keeps_gradient_finite(rng):
    W = Tensor(rng.normal(size=(2, 2, 3, 3)).astype(np.float32) * 1e3, requires_grad=True)
    caps = CapsuleSet(squash(Tensor(rng.normal(size=(1, 2, 3)).astype(np.float32))))
    with Tape() as tape:
        loss = ops.sum(route(caps, W, iterations=2).lengths)
    tape.backward(loss)
    assert np.all(np.isfinite(W.grad))
