# ═══════════════════════════════════════════════════════════════════════════════
# AdamW Base Optimizer
# ═══════════════════════════════════════════════════════════════════════════════
# Decoupled-weight-decay Adam over the adapter factors of a model, a linear
# learning-rate decay, and the full state reset performed when the chain is
# extended.

"""
AdamW over LoRA adapter factors.

State is kept per trainable matrix, keyed by ``(layer_index, "a" | "b")``.
One update with gradient ``g`` at step ``t`` (1-based, after increment) is

    m ← β₁·m + (1−β₁)·g
    v ← β₂·v + (1−β₂)·g²
    m̂ = m / (1−β₁ᵗ),  v̂ = v / (1−β₂ᵗ)
    p ← p − lr·(m̂ / (√v̂ + eps) + weight_decay·p)

:func:`step` and :func:`reset` are pure: they return new state objects and
leave their inputs untouched. The learning-rate schedule is indexed by the
global step and does not restart at knots unless the caller builds a
per-segment schedule.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal, Mapping

import numpy as np

from .linalg import DenseMatrix
from .lora import LoraAdapter
from .model import GradSet

ParamKey = tuple[int, Literal["a", "b"]]


@dataclass(frozen=True)
class AdamWHyper:
    """Hyperparameters shared by every trainable matrix; ``lr0`` is the peak rate."""

    lr0: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self) -> None:
        if not self.lr0 >= 0:
            raise ValueError(f"lr0 must be nonnegative, got {self.lr0}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError(f"betas must lie in [0, 1), got ({self.beta1}, {self.beta2})")
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if not self.weight_decay >= 0:
            raise ValueError(f"weight_decay must be nonnegative, got {self.weight_decay}")


@dataclass(frozen=True, eq=False)
class AdamWState:
    """First and second moments per ``(layer, factor)`` plus the completed step count."""

    hyper: AdamWHyper
    m: dict[ParamKey, DenseMatrix] = field(default_factory=dict)
    v: dict[ParamKey, DenseMatrix] = field(default_factory=dict)
    step_count: int = 0


@dataclass(frozen=True)
class LrSchedule:
    """Linear decay from ``lr0`` to 0 over ``total_steps``."""

    lr0: float
    total_steps: int
    kind: Literal["linear_decay"] = "linear_decay"

    def __post_init__(self) -> None:
        if self.total_steps < 1:
            raise ValueError(f"total_steps must be positive, got {self.total_steps}")


# ═══════════════════════════════════════════════════════════════════════════════
# State Binding
# ═══════════════════════════════════════════════════════════════════════════════

def _param_matrices(params: Mapping[int, LoraAdapter]) -> dict[ParamKey, DenseMatrix]:
    out: dict[ParamKey, DenseMatrix] = {}
    for i in sorted(params):
        out[(i, "a")] = params[i].a
        out[(i, "b")] = params[i].b
    return out


def init_state(params: Mapping[int, LoraAdapter], hyper: AdamWHyper) -> AdamWState:
    """Zero moments shaped like ``params``, step count 0."""
    mats = _param_matrices(params)
    return AdamWState(
        hyper=hyper,
        m={key: np.zeros_like(p) for key, p in mats.items()},
        v={key: np.zeros_like(p) for key, p in mats.items()},
        step_count=0,
    )


def reset(state: AdamWState, params: Mapping[int, LoraAdapter] | None = None) -> AdamWState:
    """
    Forget all optimizer history.

    Moments go back to zero and the step counter to 0; hyperparameters are
    kept. When ``params`` is given the state is re-bound to those matrices,
    which is how a rank step-down re-shapes the moments.
    """
    if params is not None:
        return init_state(params, state.hyper)
    return AdamWState(
        hyper=state.hyper,
        m={key: np.zeros_like(x) for key, x in state.m.items()},
        v={key: np.zeros_like(x) for key, x in state.v.items()},
        step_count=0,
    )


def moment_norm(state: AdamWState) -> float:
    """Largest absolute moment entry (0.0 right after a reset)."""
    values = [float(np.max(np.abs(x))) for x in (*state.m.values(), *state.v.values()) if x.size]
    return max(values, default=0.0)


# ═══════════════════════════════════════════════════════════════════════════════
# Update Rule
# ═══════════════════════════════════════════════════════════════════════════════

def _adamw_update(
    p: DenseMatrix,
    g: DenseMatrix,
    m: DenseMatrix,
    v: DenseMatrix,
    hyper: AdamWHyper,
    t: int,
    lr_t: float,
) -> tuple[DenseMatrix, DenseMatrix, DenseMatrix]:
    # decoupled decay: weight_decay multiplies p, not g
    m = hyper.beta1 * m + (1.0 - hyper.beta1) * g
    v = hyper.beta2 * v + (1.0 - hyper.beta2) * (g * g)
    m_hat = m / (1.0 - hyper.beta1**t)
    v_hat = v / (1.0 - hyper.beta2**t)
    p = p - lr_t * (m_hat / (np.sqrt(v_hat) + hyper.eps) + hyper.weight_decay * p)
    return p, m, v


def step(
    state: AdamWState,
    params: Mapping[int, LoraAdapter],
    grads: GradSet,
    lr_t: float,
) -> tuple[dict[int, LoraAdapter], AdamWState]:
    """
    One AdamW update of every adapter in ``params``.

    Returns the updated adapters and the new state.

    Raises:
        ValueError: negative ``lr_t``; a gradient, parameter or moment shape
            that does not line up; a non-finite gradient (the message names the
            layer and factor).
    """
    if not lr_t >= 0:
        raise ValueError(f"learning rate must be nonnegative, got {lr_t}")
    if set(grads) != set(params):
        raise ValueError(f"gradients for layers {sorted(grads)} but parameters for {sorted(params)}")

    t = state.step_count + 1
    new_m, new_v = dict(state.m), dict(state.v)
    updated: dict[int, LoraAdapter] = {}
    for i in sorted(params):
        ad, gr = params[i], grads[i]
        factors = {}
        for name, p, g in (("a", ad.a, gr.grad_a), ("b", ad.b, gr.grad_b)):
            key: ParamKey = (i, name)
            if key not in state.m:
                raise ValueError(f"optimizer state is not bound to layer {i} factor {name}")
            if g.shape != p.shape or state.m[key].shape != p.shape:
                raise ValueError(
                    f"layer {i} factor {name}: parameter {p.shape}, gradient {g.shape}, "
                    f"moment {state.m[key].shape}"
                )
            if not np.all(np.isfinite(g)):
                raise ValueError(f"non-finite gradient in layer {i} factor {name}")
            factors[name], new_m[key], new_v[key] = _adamw_update(
                p, g, state.m[key], state.v[key], state.hyper, t, lr_t
            )
        updated[i] = replace(ad, a=factors["a"], b=factors["b"])
    return updated, AdamWState(hyper=state.hyper, m=new_m, v=new_v, step_count=t)


# ═══════════════════════════════════════════════════════════════════════════════
# Learning-Rate Schedule
# ═══════════════════════════════════════════════════════════════════════════════

def lr_at(s: LrSchedule, t: int) -> float:
    """``lr0·max(0, 1 − t/total_steps)``."""
    if t < 0:
        raise ValueError(f"step index must be nonnegative, got {t}")
    return s.lr0 * max(0.0, 1.0 - t / s.total_steps)


def schedule_for(hyper: AdamWHyper, total_steps: int) -> LrSchedule:
    """Linear-decay schedule starting at ``hyper.lr0``; a zero-step span is widened to one step."""
    return LrSchedule(lr0=hyper.lr0, total_steps=max(1, int(total_steps)))
