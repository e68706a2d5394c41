import numpy as np
import pytest

from chain_lora import lora
from chain_lora.model import forward, loss
from chain_lora.schema import TaskSpec
from chain_lora.tasks import best_rank_loss, generate_task, tail_energy, truncated_adapter


def _spec(**kw):
    base = dict(dims=12, n_layers=2, target_delta_rank=3, n_train=40, n_eval=30, n_test=30, seed=5)
    return TaskSpec(**{**base, **kw})


def test_same_spec_same_task():
    a, b = generate_task(_spec()), generate_task(_spec())
    np.testing.assert_array_equal(a.train.inputs, b.train.inputs)
    np.testing.assert_array_equal(a.test.targets, b.test.targets)
    for da, db in zip(a.delta_star, b.delta_star):
        np.testing.assert_array_equal(da, db)


def test_different_seed_different_task():
    a, b = generate_task(_spec(seed=1)), generate_task(_spec(seed=2))
    assert not np.array_equal(a.train.inputs, b.train.inputs)


def test_teacher_student_shapes_and_exact_delta_rank():
    bundle = generate_task(_spec())
    assert len(bundle.model.layers) == 2
    assert bundle.train.inputs.shape == (40, 12)
    assert bundle.train.targets.shape == (40, 12)
    assert bundle.model.adapters() == {}
    for delta, student, teacher in zip(bundle.delta_star, bundle.model.layers, bundle.teacher.layers):
        assert np.linalg.matrix_rank(delta) == 3
        np.testing.assert_allclose(teacher.weight - student.weight, delta, atol=1e-12)
    assert bundle.model.layers[-1].activation == "identity"


def test_noise_free_targets_are_teacher_outputs():
    bundle = generate_task(_spec())
    np.testing.assert_allclose(forward(bundle.teacher, bundle.eval.inputs), bundle.eval.targets, atol=1e-12)


def test_classification_labels_are_teacher_argmax():
    bundle = generate_task(_spec(kind="synthetic_classification", n_classes=4))
    assert bundle.model.out_dim == 4
    assert bundle.model.loss_kind == "softmax_cross_entropy"
    labels = np.argmax(forward(bundle.teacher, bundle.train.inputs), axis=1)
    np.testing.assert_array_equal(bundle.train.targets, labels)


def test_classification_rank_cannot_exceed_class_count():
    with pytest.raises(ValueError, match="exceeds n_classes 3"):
        _spec(kind="synthetic_classification", n_classes=3, target_delta_rank=4)
    # the same rank is fine for regression, where the output layer is dims wide
    assert _spec(target_delta_rank=4).target_delta_rank == 4


def test_classification_delta_has_the_requested_rank():
    bundle = generate_task(_spec(kind="synthetic_classification", n_classes=4, target_delta_rank=4))
    assert np.linalg.matrix_rank(bundle.delta_star[-1], tol=1e-10) == 4


def test_completion_samples_are_matrix_columns():
    bundle = generate_task(_spec(kind="matrix_completion", dims=10, target_delta_rank=2))
    target = bundle.delta_star[0]
    assert np.linalg.matrix_rank(target) == 2
    for j in (0, 4, 9):
        e = np.zeros((1, 10))
        e[0, j] = 1.0
        np.testing.assert_allclose(forward(bundle.teacher, e)[0], bundle.train.targets[j], atol=1e-14)


def test_completion_masks_are_disjoint_with_requested_sizes():
    spec = _spec(kind="matrix_completion", dims=10, observed_fraction=0.5, eval_fraction=0.2, test_fraction=0.1)
    bundle = generate_task(spec)
    masks = [bundle.train.mask, bundle.eval.mask, bundle.test.mask]
    assert [int(m.sum()) for m in masks] == [50, 20, 10]
    assert np.max(sum(masks)) == 1.0


def test_completion_student_starts_at_zero():
    bundle = generate_task(_spec(kind="matrix_completion", dims=8, target_delta_rank=2))
    assert not np.any(bundle.model.layers[0].weight)
    assert loss(bundle.model, bundle.train) > 0


def test_completion_too_small_for_fractions():
    with pytest.raises(ValueError, match="too small"):
        generate_task(_spec(kind="matrix_completion", dims=2, target_delta_rank=1,
                            eval_fraction=0.1, test_fraction=0.1))


def test_fractions_exceeding_one_rejected():
    with pytest.raises(ValueError):
        _spec(kind="matrix_completion", observed_fraction=0.8, eval_fraction=0.2, test_fraction=0.1)


def test_tail_energy_of_diagonal():
    delta = np.diag([3.0, 2.0, 1.0])
    assert tail_energy(delta, 1) == pytest.approx(0.5 * (4.0 + 1.0))
    assert tail_energy(delta, 3) == 0.0


def test_truncated_adapter_is_best_approximation():
    delta = np.diag([3.0, 2.0, 1.0])
    ad = truncated_adapter(delta, 2, alpha=16.0)
    np.testing.assert_allclose(lora.effective_delta(ad), np.diag([3.0, 2.0, 0.0]), atol=1e-12)


def test_best_rank_loss_reaches_zero_at_true_rank():
    bundle = generate_task(_spec(n_layers=1, activation="identity", target_delta_rank=4))
    assert best_rank_loss(bundle, 4) == pytest.approx(0.0, abs=1e-20)


def test_best_rank_loss_matches_tail_energy():
    bundle = generate_task(_spec(n_layers=1, activation="identity", target_delta_rank=6, n_eval=4000))
    expected = tail_energy(bundle.delta_star[0], 2)
    assert best_rank_loss(bundle, 2) == pytest.approx(expected, rel=0.1)
