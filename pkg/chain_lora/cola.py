# ═══════════════════════════════════════════════════════════════════════════════
# Chain of LoRA Training Driver
# ═══════════════════════════════════════════════════════════════════════════════
# Tune the current adapters with AdamW; at each knot tie the knot (merge every
# adapter into its frozen weight) and extend the chain (fresh zero-delta
# adapters of the next segment's rank, optimizer state reset). Repeat until the
# epoch budget is spent.

"""
Residual low-rank training: chains of LoRA adapters.

A run is split into segments by its knots. Within a segment only the current
adapters train; at a knot their scaled deltas are folded into the frozen
weights and new adapters start from an exact zero delta, so the function the
model computes is unchanged by the knot and training resumes from the same
point with a fresh low-rank budget. After the run the frozen weights equal the
pretrained weights plus the sum of every merged delta.

Also here: the analytic training-FLOPs ledger used for rank step-down
comparisons, the epoch-splitting helper for chains of a given length, and the
relative-gain arithmetic used when reporting results against a baseline.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import lora, optim
from .linalg import SeededRng, frobenius_norm
from .model import Batch, Layer, LoraLinearModel, accuracy, backward, loss, minibatches
from .optim import AdamWHyper, AdamWState
from .schema import ColaSchedule, OptimizerConfig

logger = logging.getLogger(__name__)

__all__ = [
    "ColaSchedule",
    "DivergenceError",
    "FlopsReport",
    "KnotEvent",
    "RunTrace",
    "StepRecord",
    "even_knots",
    "extend_chain",
    "inject_adapters",
    "relative_gain",
    "run_cola",
    "step_down_schedule",
    "tie_knot",
    "training_flops",
]


# ═══════════════════════════════════════════════════════════════════════════════
# Run Trace
# ═══════════════════════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class StepRecord:
    global_step: int
    epoch: int
    segment: int
    lr: float
    train_loss: float


@dataclass(frozen=True)
class KnotEvent:
    """
    What happened at one knot: the size of the merged update and the eval loss
    immediately before the merge and immediately after the new adapters were
    attached (equal up to rounding), plus the largest optimizer moment right
    after the reset (exactly 0).
    """

    step: int
    epoch: int
    segment: int
    merged_delta_frobenius: float
    eval_loss_before: float
    eval_loss_after: float
    moment_norm_after_reset: float


@dataclass(eq=False)
class RunTrace:
    steps: list[StepRecord] = field(default_factory=list)
    eval_losses: list[float] = field(default_factory=list)
    eval_accuracy: list[float] = field(default_factory=list)
    knot_events: list[KnotEvent] = field(default_factory=list)
    step_evals: dict[int, float] = field(default_factory=dict)
    flops_total: float = 0.0
    final_model: LoraLinearModel | None = None

    @property
    def final_eval(self) -> float:
        return self.eval_losses[-1] if self.eval_losses else math.nan

    def to_rows(self) -> list[dict[str, float | int]]:
        return [
            {
                "global_step": s.global_step,
                "epoch": s.epoch,
                "segment": s.segment,
                "lr": s.lr,
                "train_loss": s.train_loss,
                "eval_loss": self.step_evals.get(s.global_step),
            }
            for s in self.steps
        ]


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss; ``trace`` holds the run up to that step."""

    def __init__(self, message: str, trace: RunTrace):
        super().__init__(message)
        self.trace = trace


# ═══════════════════════════════════════════════════════════════════════════════
# Tie a Knot / Extend the Chain
# ═══════════════════════════════════════════════════════════════════════════════

def inject_adapters(
    model: LoraLinearModel,
    rng: SeededRng,
    rank: int,
    alpha: float,
    init_std: float = lora.DEFAULT_INIT_STD,
    layers: Sequence[int] | None = None,
) -> LoraLinearModel:
    """Attach fresh zero-delta adapters to ``layers`` (default: every layer)."""
    targets = range(len(model.layers)) if layers is None else layers
    adapters = {}
    for i in targets:
        if not 0 <= i < len(model.layers):
            raise ValueError(f"adapter layer {i} out of range for a {len(model.layers)}-layer model")
        w = model.layers[i].weight
        adapters[i] = lora.init_adapter(rng, w.shape[0], w.shape[1], rank, alpha, init_std)
    return model.with_adapters(adapters)


def tie_knot(model: LoraLinearModel) -> LoraLinearModel:
    """Merge every live adapter into its frozen weight and mark it consumed."""
    if not model.adapters():
        raise ValueError("tie_knot needs live adapters")
    layers = []
    for layer in model.layers:
        ad = layer.live_adapter
        if ad is None:
            layers.append(layer)
        else:
            layers.append(Layer(weight=lora.merge_into(layer.weight, ad), adapter=ad,
                                activation=layer.activation, consumed=True))
    return replace(model, layers=tuple(layers))


def extend_chain(
    model: LoraLinearModel,
    rng: SeededRng,
    new_rank: int,
    state: AdamWState,
    init_std: float = lora.DEFAULT_INIT_STD,
) -> tuple[LoraLinearModel, AdamWState]:
    """
    Replace every consumed adapter by a fresh rank-``new_rank`` one and reset
    ``state`` onto the new factors.

    Raises:
        ValueError: a live adapter is still present (``tie_knot`` has not run
            for this segment) or ``new_rank`` is out of range for a layer.
    """
    if model.adapters():
        raise ValueError("extend_chain called before tie_knot: live adapters are still attached")
    fresh = {
        i: lora.reinit(layer.adapter, rng, new_rank, init_std)
        for i, layer in enumerate(model.layers)
        if layer.consumed and layer.adapter is not None
    }
    if not fresh:
        raise ValueError("extend_chain found no consumed adapters to replace")
    return model.with_adapters(fresh), optim.reset(state, fresh)


def _delta_norm(before: LoraLinearModel) -> float:
    total = 0.0
    for ad in before.adapters().values():
        total += frobenius_norm(lora.effective_delta(ad)) ** 2
    return math.sqrt(total)


# ═══════════════════════════════════════════════════════════════════════════════
# Algorithm Driver
# ═══════════════════════════════════════════════════════════════════════════════

def _knot_steps(schedule: ColaSchedule, steps_per_epoch: int, total_steps: int) -> list[int]:
    if schedule.knot_unit == "epoch":
        return [k * steps_per_epoch for k in schedule.knots]
    bad = [k for k in schedule.knots if not 1 <= k <= total_steps - 1]
    if bad:
        raise ValueError(f"step knots {bad} fall outside [1, {total_steps - 1}]")
    return list(schedule.knots)


def _segment_schedules(hyper: AdamWHyper, schedule: ColaSchedule, knots: list[int], total_steps: int):
    """(first global step, LrSchedule) per segment."""
    if not schedule.restart_lr_at_knots:
        shared = optim.schedule_for(hyper, total_steps)
        return [(0, shared)] * (len(knots) + 1)
    bounds = [0, *knots, total_steps]
    return [(lo, optim.schedule_for(hyper, hi - lo)) for lo, hi in zip(bounds, bounds[1:])]


def run_cola(
    model: LoraLinearModel,
    train: Batch,
    schedule: ColaSchedule,
    optcfg: OptimizerConfig,
    rng: SeededRng,
    *,
    lr: float,
    batch_size: int,
    eval_batch: Batch | None = None,
    eval_every: int | None = None,
) -> RunTrace:
    """
    Train ``model`` along ``schedule`` and return the full trace.

    The model must already carry adapters of the first segment's rank on the
    layers to be adapted (see :func:`inject_adapters`). Each epoch is one
    shuffled pass over ``train``; the learning rate decays linearly over the
    whole run (or over each segment when ``restart_lr_at_knots`` is set). Eval
    loss is recorded at the end of every epoch on ``eval_batch`` (``train``
    when omitted); with ``eval_every`` it is also recorded every that many
    global steps in ``trace.step_evals``. The trained model is attached as
    ``trace.final_model``.

    Raises:
        ValueError: adapters missing or of the wrong rank, knots out of range,
            ``eval_every`` not positive.
        DivergenceError: a non-finite training loss.
    """
    adapters = model.adapters()
    if not adapters:
        raise ValueError("run_cola needs a model with adapters on the layers to train")
    first_rank = schedule.rank_per_segment[0]
    wrong = {i: ad.rank for i, ad in adapters.items() if ad.rank != first_rank}
    if wrong:
        raise ValueError(f"adapters {wrong} do not match the first segment rank {first_rank}")
    if train.size < 1:
        raise ValueError("training set is empty")
    if eval_every is not None and eval_every < 1:
        raise ValueError(f"eval_every must be positive, got {eval_every}")

    evaluate_on = train if eval_batch is None else eval_batch
    classify = model.loss_kind == "softmax_cross_entropy"
    steps_per_epoch = math.ceil(train.size / batch_size)
    total_steps = schedule.total_epochs * steps_per_epoch
    knots = _knot_steps(schedule, steps_per_epoch, total_steps)
    hyper = AdamWHyper(lr0=lr, beta1=optcfg.beta1, beta2=optcfg.beta2, eps=optcfg.eps,
                       weight_decay=optcfg.weight_decay)
    lr_schedules = _segment_schedules(hyper, schedule, knots, total_steps)

    trace = RunTrace()
    trace.flops_total = training_flops(
        schedule, _model_dims(model), train.size, batch_size
    ).total
    state = optim.init_state(adapters, hyper)
    segment, t = 0, 0

    for epoch in range(1, schedule.total_epochs + 1):
        for mb in minibatches(train, batch_size, rng):
            seg_start, lr_sched = lr_schedules[segment]
            lr_t = optim.lr_at(lr_sched, t - seg_start)
            value, grads = backward(model, mb)
            t += 1
            trace.steps.append(StepRecord(t, epoch, segment, lr_t, value))
            finite_grads = all(np.all(np.isfinite(g.grad_a)) and np.all(np.isfinite(g.grad_b)) for g in grads.values())
            if not (math.isfinite(value) and finite_grads):
                trace.final_model = model
                logger.error("non-finite training loss at step %d (epoch %d, segment %d)", t, epoch, segment)
                raise DivergenceError(f"training diverged at step {t}: loss {value}", trace)
            params, state = optim.step(state, model.adapters(), grads, lr_t)
            model = model.with_adapters(params)

            if segment < len(knots) and t == knots[segment]:
                before = loss(model, evaluate_on)
                delta = _delta_norm(model)
                model = tie_knot(model)
                segment += 1
                model, state = extend_chain(
                    model, rng, schedule.rank_per_segment[segment], state, schedule.init_std
                )
                after = loss(model, evaluate_on)
                trace.knot_events.append(
                    KnotEvent(t, epoch, segment, delta, before, after, optim.moment_norm(state))
                )
                logger.info(
                    "knot %d at step %d (epoch %d): merged |dW|_F=%.4g, next rank %d",
                    segment, t, epoch, delta, schedule.rank_per_segment[segment],
                )

            if eval_every and t % eval_every == 0:
                trace.step_evals[t] = loss(model, evaluate_on)

        trace.eval_losses.append(loss(model, evaluate_on))
        if classify:
            trace.eval_accuracy.append(accuracy(model, evaluate_on))
        logger.debug("epoch %d: eval loss %.6g", epoch, trace.eval_losses[-1])

    trace.final_model = model
    return trace


# ═══════════════════════════════════════════════════════════════════════════════
# Schedules
# ═══════════════════════════════════════════════════════════════════════════════

def even_knots(total_epochs: int, chain_length: int) -> list[int]:
    """Split ``total_epochs`` into ``chain_length`` segments, earlier ones longer."""
    if not 1 <= chain_length <= total_epochs:
        raise ValueError(f"chain length {chain_length} must lie in [1, {total_epochs}]")
    base, extra = divmod(total_epochs, chain_length)
    knots, at = [], 0
    for i in range(chain_length - 1):
        at += base + (1 if i < extra else 0)
        knots.append(at)
    return knots


def step_down_schedule(
    total_epochs: int,
    first_rank: int,
    second_rank: int,
    knot: int,
    alpha: float = 16.0,
) -> ColaSchedule:
    return ColaSchedule(
        total_epochs=total_epochs,
        knots=[knot],
        rank_per_segment=[first_rank, second_rank],
        alpha=alpha,
    )


# ═══════════════════════════════════════════════════════════════════════════════
# Training FLOPs Ledger
# ═══════════════════════════════════════════════════════════════════════════════
# Multiply-add pairs count as 2 FLOPs and a backward pass costs twice the
# forward pass. Only differences and ratios are meaningful.

@dataclass(frozen=True)
class FlopsReport:
    total: float
    saved_vs_fixed_rank: float


def _model_dims(model: LoraLinearModel) -> list[tuple[int, int, bool]]:
    return [(layer.out_dim, layer.in_dim, layer.adapter is not None) for layer in model.layers]


def _samples_per_segment(schedule: ColaSchedule, dataset_size: int, batch_size: int) -> list[int]:
    sizes = [min(batch_size, dataset_size - s) for s in range(0, dataset_size, batch_size)]
    per_step = sizes * schedule.total_epochs
    knots = _knot_steps(schedule, len(sizes), len(per_step))
    bounds = [0, *knots, len(per_step)]
    return [sum(per_step[lo:hi]) for lo, hi in zip(bounds, bounds[1:])]


def _train_flops_per_sample(model_dims: Sequence[tuple[int, int, bool]], rank: int) -> int:
    forward = 0
    for d, k, adapted in model_dims:
        forward += 2 * d * k
        if adapted:
            forward += 2 * rank * k + 2 * d * rank
    return 3 * forward


def training_flops(
    schedule: ColaSchedule,
    model_dims: Sequence[tuple[int, int, bool]],
    dataset_size: int,
    batch_size: int,
) -> FlopsReport:
    """
    Analytic training cost of ``schedule``.

    ``model_dims`` lists ``(d, k, adapted)`` per layer. The frozen path costs
    the same at every rank; the adapter path is linear in the segment's rank.
    ``saved_vs_fixed_rank`` compares against keeping the first segment's rank
    for the whole run, so a constant-rank chain saves exactly 0.
    """
    if dataset_size < 1 or batch_size < 1:
        raise ValueError(f"dataset_size and batch_size must be positive, got {dataset_size}, {batch_size}")
    samples = _samples_per_segment(schedule, dataset_size, batch_size)
    total = sum(n * _train_flops_per_sample(model_dims, r) for n, r in zip(samples, schedule.rank_per_segment))
    fixed = sum(samples) * _train_flops_per_sample(model_dims, schedule.rank_per_segment[0])
    return FlopsReport(total=float(total), saved_vs_fixed_rank=float(fixed - total))


# ═══════════════════════════════════════════════════════════════════════════════
# Result Comparison
# ═══════════════════════════════════════════════════════════════════════════════

def relative_gain(baseline: float, ours: float) -> float:
    """Percentage gain of ``ours`` over ``baseline``, rounded to two decimals."""
    if not baseline > 0:
        raise ValueError(f"baseline must be positive, got {baseline}")
    return round((ours - baseline) / baseline * 100.0, 2)


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample standard deviation (0.0 for a single value)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("mean_std needs at least one value")
    return float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0
