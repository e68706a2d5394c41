# ═══════════════════════════════════════════════════════════════════════════════
# Experiment Schema
# ═══════════════════════════════════════════════════════════════════════════════
# The validated shapes of everything that crosses the file boundary: the task
# description, the chain schedule, optimizer hyperparameters, a full experiment
# config, the Frank-Wolfe demo config, and the result rows written back out.

"""
Pydantic models for configuration and results.

Every model forbids unknown keys, so a typo in a config file fails loudly with
the dotted path of the offending key. ``Literal`` fields pin the enumerations
(task kinds, methods, activations, step modes) so downstream code never sees
an unexpected value.

Defaults are a desk-scale fine-tuning protocol: 1000/500/1000
train/eval/test examples, 5 epochs, rank 8 with alpha 16, the learning-rate
grid {1e-3, 8e-4, 5e-4, 1e-4, 5e-5}, batch sizes {4, 8}, five seeds.
"""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

DEFAULT_LR_GRID = [1e-3, 8e-4, 5e-4, 1e-4, 5e-5]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# ═══════════════════════════════════════════════════════════════════════════════
# Task Description
# ═══════════════════════════════════════════════════════════════════════════════

class TaskSpec(_Strict):
    """
    A synthetic task.

    teacher_student: ``n_layers`` square layers of width ``dims``; the teacher
    adds an exact rank-``target_delta_rank`` ΔW* to every layer, targets are
    the teacher's outputs plus Gaussian noise.
    matrix_completion: recover a rank-``target_delta_rank`` ``dims×dims``
    matrix from the entries under disjoint train/eval/test masks; the split
    sizes are set by the three fraction fields, the ``n_*`` counts are unused.
    synthetic_classification: labels are the argmax of a teacher network's
    ``n_classes`` logits; trained with softmax cross-entropy.
    """

    kind: Literal["teacher_student", "matrix_completion", "synthetic_classification"] = "teacher_student"
    dims: int = Field(64, ge=1)
    n_layers: int = Field(2, ge=1)
    activation: Literal["identity", "relu", "tanh"] = "tanh"
    n_classes: int = Field(8, ge=2)
    target_delta_rank: int = Field(8, ge=1)
    delta_scale: float = Field(1.0, gt=0)
    noise_std: float = Field(0.0, ge=0)
    n_train: int = Field(1000, ge=1)
    n_eval: int = Field(500, ge=1)
    n_test: int = Field(1000, ge=1)
    observed_fraction: float = Field(0.5, gt=0, lt=1)
    eval_fraction: float = Field(0.1, gt=0, lt=1)
    test_fraction: float = Field(0.1, gt=0, lt=1)
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _feasible(self) -> "TaskSpec":
        if self.target_delta_rank > self.dims:
            raise ValueError(f"target_delta_rank {self.target_delta_rank} exceeds dims {self.dims}")
        if self.kind == "synthetic_classification" and self.target_delta_rank > self.n_classes:
            raise ValueError(
                f"target_delta_rank {self.target_delta_rank} exceeds n_classes {self.n_classes}"
                " (the output layer is n_classes wide)"
            )
        if self.observed_fraction + self.eval_fraction + self.test_fraction > 1:
            raise ValueError("observed_fraction + eval_fraction + test_fraction must not exceed 1")
        return self


# ═══════════════════════════════════════════════════════════════════════════════
# Chain Schedule and Optimizer
# ═══════════════════════════════════════════════════════════════════════════════

class ColaSchedule(_Strict):
    """
    Knots and per-segment ranks of one chain.

    ``knots`` are epoch indices (``knot_unit: epoch``, the knot fires after
    that epoch) or global step indices (``knot_unit: step``). An empty knot
    list is plain LoRA. ``rank_per_segment`` has one entry per segment, so
    ``len(knots) + 1`` entries.
    """

    total_epochs: int = Field(5, ge=1)
    knots: list[int] = Field(default_factory=list)
    rank_per_segment: list[int] = Field(default_factory=lambda: [8])
    alpha: float = Field(16.0, gt=0)
    knot_unit: Literal["epoch", "step"] = "epoch"
    init_std: float = Field(0.02, gt=0)
    restart_lr_at_knots: bool = False

    @model_validator(mode="after")
    def _consistent(self) -> "ColaSchedule":
        if any(b <= a for a, b in zip(self.knots, self.knots[1:])):
            raise ValueError(f"knots must be strictly increasing, got {self.knots}")
        if self.knot_unit == "epoch" and any(not 1 <= k <= self.total_epochs - 1 for k in self.knots):
            raise ValueError(f"epoch knots must lie in [1, {self.total_epochs - 1}], got {self.knots}")
        if self.knot_unit == "step" and any(k < 1 for k in self.knots):
            raise ValueError(f"step knots must be positive, got {self.knots}")
        if len(self.rank_per_segment) != len(self.knots) + 1:
            raise ValueError(
                f"{len(self.knots)} knots need {len(self.knots) + 1} segment ranks, "
                f"got {len(self.rank_per_segment)}"
            )
        if any(r < 1 for r in self.rank_per_segment):
            raise ValueError(f"segment ranks must be positive, got {self.rank_per_segment}")
        return self

    @property
    def chain_length(self) -> int:
        return len(self.knots) + 1

    def baseline(self) -> "ColaSchedule":
        """The single-adapter LoRA schedule with this schedule's first rank."""
        return self.model_copy(update={"knots": [], "rank_per_segment": [self.rank_per_segment[0]]})

    def descriptor(self) -> str:
        ranks = ",".join(str(r) for r in self.rank_per_segment)
        knots = ",".join(str(k) for k in self.knots)
        return f"cola({ranks})@[{knots}]{self.knot_unit[0]}" if self.knots else f"lora({ranks})"


class OptimizerConfig(_Strict):
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    weight_decay: float = Field(0.0, ge=0)


# ═══════════════════════════════════════════════════════════════════════════════
# Experiment and Demo Configs
# ═══════════════════════════════════════════════════════════════════════════════

class ExperimentConfig(_Strict):
    task: TaskSpec = Field(default_factory=TaskSpec)
    methods: list[Literal["lora_baseline", "cola"]] = Field(default_factory=lambda: ["lora_baseline", "cola"])
    schedule: ColaSchedule = Field(default_factory=ColaSchedule)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    lr_grid: list[float] = Field(default_factory=lambda: list(DEFAULT_LR_GRID))
    batch_sizes: list[Literal[4, 8]] = Field(default_factory=lambda: [4, 8])
    seeds: list[int] = Field(default_factory=lambda: [1, 2, 3, 4, 5])
    adapter_layers: list[int] | None = None
    # extra eval-loss measurement every N global steps; None records per-epoch evals only
    eval_every: int | None = Field(None, ge=1)
    output_dir: str = "results"
    jobs: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _nonempty(self) -> "ExperimentConfig":
        for name in ("methods", "lr_grid", "batch_sizes", "seeds"):
            if not getattr(self, name):
                raise ValueError(f"{name} must not be empty")
        if any(not lr > 0 for lr in self.lr_grid):
            raise ValueError(f"learning rates must be positive, got {self.lr_grid}")
        if any(s < 0 for s in self.seeds):
            raise ValueError(f"seeds must be nonnegative, got {self.seeds}")
        return self

    def schedule_for(self, method: str) -> ColaSchedule:
        return self.schedule.baseline() if method == "lora_baseline" else self.schedule


class FwDemoConfig(_Strict):
    """Frank-Wolfe run over a trace-norm ball plus its convergence check."""

    objective: Literal["quadratic", "linear", "matrix_completion"] = "quadratic"
    dims: int = Field(20, ge=1)
    cols: int | None = Field(None, ge=1)
    radius: float = Field(1.0, gt=0)
    target_scale: float = Field(0.5, gt=0)
    target_rank: int = Field(3, ge=1)
    horizon: int = Field(10_000, ge=1)
    step_mode: Literal["theorem", "harmonic", "custom"] = "theorem"
    steps: list[float] = Field(default_factory=list)
    oracle_tol: float = Field(1e-9, gt=0)
    oracle_max_iter: int = Field(500, ge=1)
    oracle_eps: float = Field(0.0, ge=0)
    gradient_noise_std: float = Field(0.0, ge=0)
    observed_fraction: float = Field(0.5, gt=0, le=1)
    batch_entries: int | None = Field(None, ge=1)
    stochastic: bool = False
    seed: int = Field(0, ge=0)
    output_dir: str = "results/fw"

    @model_validator(mode="after")
    def _steps(self) -> "FwDemoConfig":
        if self.step_mode == "custom" and len(self.steps) < self.horizon:
            raise ValueError(f"custom step mode needs {self.horizon} steps, got {len(self.steps)}")
        if any(not 0 < eta <= 1 for eta in self.steps):
            raise ValueError("custom steps must lie in (0, 1]")
        return self


# ═══════════════════════════════════════════════════════════════════════════════
# Result Records
# ═══════════════════════════════════════════════════════════════════════════════

class ResultRow(_Strict):
    """One training run (one config, seed and grid point)."""

    task: str
    method: str
    schedule: str
    seed: int
    lr: float
    batch_size: int
    eval: float
    test: float
    flops: float
    wall_time: float
    status: Literal["ok", "diverged"] = "ok"
