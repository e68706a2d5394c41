# ═══════════════════════════════════════════════════════════════════════════════
# Synthetic Tasks
# ═══════════════════════════════════════════════════════════════════════════════
# Desk-scale stand-ins for fine-tuning data: a frozen "pretrained" student, a
# teacher that differs from it by a known low-rank update on every layer, and
# train/eval/test splits drawn from the teacher. Because the optimal update is
# known, the best loss any rank-r adapter can reach is computable exactly.

"""
Task generation from a validated :class:`~chain_lora.schema.TaskSpec`.

Every draw comes from one generator seeded with ``spec.seed``, so a spec fixes
the whole task. Pretrained weights are ``N(0, 1/k)`` and each layer's update is
``ΔW* = delta_scale·P·Q/sqrt(r)`` with ``P ~ N(0, 1)`` (``d×r``) and
``Q ~ N(0, 1/k)`` (``r×k``), exactly rank ``r`` with probability one.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import lora
from .linalg import DenseMatrix, SeededRng, gaussian, make_rng
from .model import Batch, Layer, LoraLinearModel, forward, loss
from .schema import TaskSpec

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TaskBundle:
    """
    ``model`` is the frozen student without adapters. ``delta_star`` holds the
    true update per layer and ``teacher`` the model that generated the targets.
    """

    spec: TaskSpec
    model: LoraLinearModel
    train: Batch
    eval: Batch
    test: Batch
    delta_star: tuple[DenseMatrix, ...]
    teacher: LoraLinearModel


def _low_rank(rng: SeededRng, d: int, k: int, rank: int, scale: float) -> DenseMatrix:
    p = gaussian(rng, d, rank, 1.0)
    q = gaussian(rng, rank, k, 1.0 / math.sqrt(k))
    return scale * (p @ q) / math.sqrt(rank)


def _teacher_student(spec: TaskSpec, rng: SeededRng, out_dims: list[int], loss_kind) -> tuple:
    layers, teacher_layers, deltas = [], [], []
    k = spec.dims
    for i, d in enumerate(out_dims):
        activation = spec.activation if i < len(out_dims) - 1 else "identity"
        w = gaussian(rng, d, k, 1.0 / math.sqrt(k))
        delta = _low_rank(rng, d, k, spec.target_delta_rank, spec.delta_scale)
        layers.append(Layer(weight=w, activation=activation))
        teacher_layers.append(Layer(weight=w + delta, activation=activation))
        deltas.append(delta)
        k = d
    return (
        LoraLinearModel(tuple(layers), loss_kind=loss_kind),
        LoraLinearModel(tuple(teacher_layers), loss_kind=loss_kind),
        tuple(deltas),
    )


def _regression_split(spec: TaskSpec, rng: SeededRng, teacher: LoraLinearModel, n: int) -> Batch:
    x = rng.standard_normal((n, spec.dims))
    y = forward(teacher, x)
    if spec.noise_std > 0:
        y = y + rng.normal(0.0, spec.noise_std, size=y.shape)
    return Batch(inputs=x, targets=y)


def _classification_split(spec: TaskSpec, rng: SeededRng, teacher: LoraLinearModel, n: int) -> Batch:
    x = rng.standard_normal((n, spec.dims))
    logits = forward(teacher, x)
    if spec.noise_std > 0:
        logits = logits + rng.normal(0.0, spec.noise_std, size=logits.shape)
    return Batch(inputs=x, targets=np.argmax(logits, axis=1).astype(np.int64))


def _completion(spec: TaskSpec, rng: SeededRng) -> TaskBundle:
    d = k = spec.dims
    target = _low_rank(rng, d, k, spec.target_delta_rank, spec.delta_scale)
    n_entries = d * k
    counts = [round(f * n_entries) for f in (spec.observed_fraction, spec.eval_fraction, spec.test_fraction)]
    if min(counts) < 1:
        raise ValueError(f"dims {d} too small for the requested entry fractions (split sizes {counts})")
    order = rng.permutation(n_entries)
    bounds = np.cumsum([0, *counts])
    # one sample per input coordinate: row j predicts column j of W
    inputs = np.eye(k)
    targets = target.T.copy()
    masks = []
    for lo, hi in zip(bounds, bounds[1:]):
        flat = np.zeros(n_entries)
        flat[order[lo:hi]] = 1.0
        masks.append(flat.reshape(d, k).T.copy())
    train, eval_, test = (Batch(inputs=inputs, targets=targets, mask=m) for m in masks)
    model = LoraLinearModel((Layer(weight=np.zeros((d, k))),))
    teacher = LoraLinearModel((Layer(weight=target),))
    return TaskBundle(spec, model, train, eval_, test, (target,), teacher)


def generate_task(spec: TaskSpec) -> TaskBundle:
    """
    Build the student, teacher and the three splits for ``spec``.

    Raises:
        ValueError: ``target_delta_rank`` larger than the layer dimensions, or
            entry fractions too small to give every split an entry.
    """
    if spec.target_delta_rank > spec.dims:
        raise ValueError(f"target_delta_rank {spec.target_delta_rank} exceeds dims {spec.dims}")
    rng = make_rng(spec.seed)
    if spec.kind == "matrix_completion":
        bundle = _completion(spec, rng)
    else:
        classify = spec.kind == "synthetic_classification"
        out_dims = [spec.dims] * spec.n_layers
        if classify:
            out_dims[-1] = spec.n_classes
        model, teacher, deltas = _teacher_student(
            spec, rng, out_dims, "softmax_cross_entropy" if classify else "mse"
        )
        split = _classification_split if classify else _regression_split
        bundle = TaskBundle(
            spec,
            model,
            split(spec, rng, teacher, spec.n_train),
            split(spec, rng, teacher, spec.n_eval),
            split(spec, rng, teacher, spec.n_test),
            deltas,
            teacher,
        )
    logger.debug(
        "generated %s task: dims %d, %d layers, delta rank %d",
        spec.kind, spec.dims, len(bundle.model.layers), spec.target_delta_rank,
    )
    return bundle


# ═══════════════════════════════════════════════════════════════════════════════
# Best Low-Rank Reference
# ═══════════════════════════════════════════════════════════════════════════════

def tail_energy(delta: DenseMatrix, rank: int) -> float:
    """½ Σ_{i>rank} σ_i²: the expected squared error left by the best rank-``rank`` fit under N(0, I) inputs."""
    s = np.linalg.svd(delta, compute_uv=False)
    return 0.5 * float(np.sum(s[rank:] ** 2))


def truncated_adapter(delta: DenseMatrix, rank: int, alpha: float = 16.0) -> lora.LoraAdapter:
    """Adapter whose effective delta is the best rank-``rank`` approximation of ``delta``."""
    u, s, vt = np.linalg.svd(delta, full_matrices=False)
    b = u[:, :rank] * s[:rank] * (rank / alpha)
    return lora.adapter_from_factors(b, vt[:rank], alpha)


def best_rank_loss(bundle: TaskBundle, rank: int, split: str = "eval") -> float:
    """
    Loss on ``split`` of the student carrying, on every layer, the truncated
    SVD of that layer's true update. For a single linear layer this is the
    best any rank-``rank`` adapter can do in expectation.
    """
    adapters = {
        i: truncated_adapter(delta, min(rank, *delta.shape)) for i, delta in enumerate(bundle.delta_star)
    }
    return loss(bundle.model.with_adapters(adapters), getattr(bundle, split))
