import dataclasses

import numpy as np
import pytest

from chain_lora import lora
from chain_lora.linalg import make_rng
from chain_lora.model import (
    Batch,
    Layer,
    LoraLinearModel,
    accuracy,
    backward,
    forward,
    frozen_forward,
    loss,
    merged_copy,
    minibatches,
)
from tests.conftest import random_batch, random_model


@pytest.mark.invariant
def test_merge_equivalence_over_random_models():
    rng = make_rng(11)
    for trial in range(100):
        dims = tuple(int(n) for n in rng.integers(2, 7, size=3))
        m = random_model(rng, dims=dims, activation=("identity", "relu", "tanh")[trial % 3])
        x = rng.standard_normal((4, dims[0]))
        np.testing.assert_allclose(forward(m, x), forward(merged_copy(m), x), rtol=0, atol=1e-10)


def test_single_layer_forward_formula(rng):
    m = random_model(rng, dims=(4, 3), activation="identity")
    layer = m.layers[0]
    x = rng.standard_normal((5, 4))
    s = lora.scale(layer.adapter)
    expected = x @ layer.weight.T + s * (x @ layer.adapter.a.T) @ layer.adapter.b.T
    np.testing.assert_allclose(forward(m, x), expected, atol=1e-12)


@pytest.mark.invariant
def test_zero_start_equals_frozen_loss_exactly(rng):
    base = random_model(rng, dims=(6, 5, 4))
    fresh = {i: lora.init_adapter(rng, l.out_dim, l.in_dim, 2, 8.0) for i, l in enumerate(base.layers)}
    m = base.with_adapters(fresh)
    batch = random_batch(rng, m, n=7)
    bare = LoraLinearModel(tuple(Layer(l.weight, activation=l.activation) for l in m.layers))
    assert loss(m, batch) == loss(bare, batch)
    np.testing.assert_array_equal(forward(m, batch.inputs), frozen_forward(m, batch.inputs))


def _numeric_grad(m, batch, i, factor, h=1e-5):
    ad = m.layers[i].adapter
    p = getattr(ad, factor)
    out = np.zeros_like(p)
    for idx in np.ndindex(p.shape):
        plus, minus = p.copy(), p.copy()
        plus[idx] += h
        minus[idx] -= h
        lp = loss(m.with_adapters({i: lora.LoraAdapter(**{**_fields(ad), factor: plus})}), batch)
        lm = loss(m.with_adapters({i: lora.LoraAdapter(**{**_fields(ad), factor: minus})}), batch)
        out[idx] = (lp - lm) / (2 * h)
    return out


def _fields(ad):
    return {"a": ad.a, "b": ad.b, "alpha": ad.alpha}


@pytest.mark.invariant
@pytest.mark.parametrize("loss_kind", ["mse", "softmax_cross_entropy"])
def test_gradients_match_finite_differences(loss_kind):
    rng = make_rng(21 if loss_kind == "mse" else 22)
    for trial in range(20):
        m = random_model(rng, dims=(4, 5, 3), activation=("tanh", "identity")[trial % 2], loss_kind=loss_kind)
        batch = random_batch(rng, m, n=5)
        _, grads = backward(m, batch)
        for i in m.adapters():
            for factor, analytic in (("a", grads[i].grad_a), ("b", grads[i].grad_b)):
                numeric = _numeric_grad(m, batch, i, factor)
                np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-8)


def test_backward_loss_matches_loss(rng):
    m = random_model(rng)
    batch = random_batch(rng, m)
    value, grads = backward(m, batch)
    assert value == pytest.approx(loss(m, batch), abs=1e-15)
    assert set(grads) == {0, 1}


def test_frozen_layers_get_no_gradient(rng):
    m = random_model(rng)
    m = LoraLinearModel((Layer(m.layers[0].weight, activation="tanh"), m.layers[1]))
    _, grads = backward(m, random_batch(rng, m))
    assert set(grads) == {1}


def test_weights_are_read_only(rng):
    m = random_model(rng)
    with pytest.raises(ValueError):
        m.layers[0].weight[0, 0] = 1.0


def test_masked_mse_ignores_unobserved_entries():
    m = LoraLinearModel((Layer(np.zeros((2, 2))),))
    targets = np.array([[1.0, 5.0], [2.0, 7.0]])
    mask = np.array([[1.0, 0.0], [1.0, 0.0]])
    batch = Batch(inputs=np.eye(2), targets=targets, mask=mask)
    assert loss(m, batch) == pytest.approx(0.5 * (1.0 + 4.0) / 2)


def test_cross_entropy_of_uniform_logits():
    m = LoraLinearModel((Layer(np.zeros((4, 3))),), loss_kind="softmax_cross_entropy")
    batch = Batch(inputs=np.ones((2, 3)), targets=np.array([0, 3]))
    assert loss(m, batch) == pytest.approx(np.log(4.0))


def test_cross_entropy_rejects_bad_class():
    m = LoraLinearModel((Layer(np.zeros((2, 3))),), loss_kind="softmax_cross_entropy")
    with pytest.raises(ValueError, match="class index"):
        loss(m, Batch(inputs=np.ones((1, 3)), targets=np.array([2])))


def test_accuracy():
    w = np.array([[1.0, 0.0], [0.0, 1.0]])
    m = LoraLinearModel((Layer(w),), loss_kind="softmax_cross_entropy")
    batch = Batch(inputs=np.array([[2.0, 0.0], [0.0, 2.0], [1.0, 0.0]]), targets=np.array([0, 1, 1]))
    assert accuracy(m, batch) == pytest.approx(2 / 3)


def test_layer_dimension_mismatch():
    with pytest.raises(ValueError, match="does not feed"):
        LoraLinearModel((Layer(np.zeros((3, 2))), Layer(np.zeros((2, 4)))))


def test_input_width_checked(rng):
    m = random_model(rng, dims=(4, 3))
    with pytest.raises(ValueError):
        forward(m, np.ones((2, 5)))


def test_minibatches_partition_with_partial_tail(rng):
    batch = Batch(inputs=np.arange(10.0).reshape(10, 1), targets=np.zeros((10, 1)))
    parts = list(minibatches(batch, 4, rng))
    assert [p.size for p in parts] == [4, 4, 2]
    seen = np.sort(np.concatenate([p.inputs[:, 0] for p in parts]))
    np.testing.assert_array_equal(seen, np.arange(10.0))


def test_merged_copy_drops_adapters(rng):
    merged = merged_copy(random_model(rng))
    assert merged.adapters() == {}


def _hidden_preactivation(m, x):
    first = LoraLinearModel((dataclasses.replace(m.layers[0], activation="identity"),))
    return forward(first, x)


@pytest.mark.invariant
def test_relu_gradients_match_finite_differences():
    rng = make_rng(23)
    checked = 0
    while checked < 20:
        m = random_model(rng, dims=(4, 5, 3), activation="relu")
        batch = random_batch(rng, m, n=5)
        # central differences straddle a kink when a hidden unit sits at zero
        if np.min(np.abs(_hidden_preactivation(m, batch.inputs))) < 1e-3:
            continue
        _, grads = backward(m, batch)
        for i in m.adapters():
            for factor, analytic in (("a", grads[i].grad_a), ("b", grads[i].grad_b)):
                numeric = _numeric_grad(m, batch, i, factor)
                np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-8)
        checked += 1


def test_backward_by_hand_on_a_scalar_model():
    # W = 0, B = 0, A = 2, alpha = r = 1: prediction 0, residual 1 against target -1
    ad = lora.adapter_from_factors(np.array([[0.0]]), np.array([[2.0]]), 1.0)
    m = LoraLinearModel((Layer(weight=np.array([[0.0]]), adapter=ad),))
    value, grads = backward(m, Batch(inputs=np.array([[1.0]]), targets=np.array([[-1.0]])))
    assert value == 0.5
    np.testing.assert_array_equal(grads[0].grad_b, [[2.0]])
    np.testing.assert_array_equal(grads[0].grad_a, [[0.0]])


@pytest.mark.invariant
def test_zero_b_gives_exactly_zero_grad_a(rng):
    base = random_model(rng, dims=(6, 5, 4))
    m = base.with_adapters({i: lora.init_adapter(rng, l.out_dim, l.in_dim, 2, 8.0) for i, l in enumerate(base.layers)})
    _, grads = backward(m, random_batch(rng, m, n=7))
    for g in grads.values():
        assert not np.any(g.grad_a)
        assert np.any(g.grad_b)
