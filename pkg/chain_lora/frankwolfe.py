# ═══════════════════════════════════════════════════════════════════════════════
# Frank-Wolfe over the Trace-Norm Ball
# ═══════════════════════════════════════════════════════════════════════════════
# The idealized form of chained low-rank training: every step asks a linear
# oracle for a rank-one vertex of the trace-norm ball and moves the iterate a
# convex-combination step towards it, so each step adds at most one rank-one
# term. The run records the Frank-Wolfe gap at every iterate and the summary
# checks the averaged gap against the nonconvex convergence bound
# 2·sqrt(M·beta)·D/sqrt(T) + eps.

"""
Stochastic Frank-Wolfe on ``K = {W : ‖W‖_* ≤ radius}``.

Sign convention for the gap: ``g_t = max_{V∈K} ⟨∇L(W_t), W_t − V⟩``, which
is nonnegative on ``K`` and zero exactly at first-order stationary points.
Since the minimizing vertex is ``V = −radius·u₁v₁ᵀ`` this equals
``⟨∇L(W_t), W_t⟩ + radius·σ₁(∇L(W_t))``.

The oracle solves its linear problem only approximately (power iteration).
Its error is certified as ``radius × residual`` and the largest certified
error of a run is added to the bound's ``eps``.

Iterates are kept dense; alongside them the run keeps the list of rank-one
atoms ``(coefficient, u, v)`` whose sum is the iterate.
"""

from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .linalg import (
    ConvergenceError,
    DenseMatrix,
    SeededRng,
    SingularTriple,
    dot,
    ensure_finite,
    frobenius_norm,
    make_rng,
    nuclear_norm,
    top_singular_pair,
)
from .schema import FwDemoConfig

logger = logging.getLogger(__name__)

StepMode = Literal["theorem", "harmonic", "custom"]

# nuclear-norm slack accepted by membership checks
BALL_SLACK = 1e-8
_RESCALE_BELOW = 1e-100


# ═══════════════════════════════════════════════════════════════════════════════
# Feasible Set and Run Configuration
# ═══════════════════════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class TraceNormBall:
    radius: float
    d: int
    k: int

    def __post_init__(self) -> None:
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        if self.d < 1 or self.k < 1:
            raise ValueError(f"ball dimensions must be positive, got ({self.d}, {self.k})")

    @property
    def diameter(self) -> float:
        """Largest Frobenius distance between two points of the ball."""
        return 2.0 * self.radius

    def contains(self, w: DenseMatrix, slack: float = BALL_SLACK) -> bool:
        return w.shape == (self.d, self.k) and nuclear_norm(w) <= self.radius * (1.0 + slack)


@dataclass(frozen=True)
class FwConfig:
    """
    ``beta`` is the smoothness constant, ``value_bound`` the bound ``M`` on
    the objective's range over the ball. ``steps`` is only read in custom mode.
    """

    horizon: int
    beta: float = 1.0
    value_bound: float = 1.0
    oracle_eps: float = 0.0
    step_mode: StepMode = "theorem"
    steps: Sequence[float] = ()
    oracle_tol: float = 1e-9
    oracle_max_iter: int = 500
    warm_start: bool = True

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if not (self.beta > 0 and self.value_bound > 0):
            raise ValueError(f"beta and value_bound must be positive, got {self.beta}, {self.value_bound}")
        if not self.oracle_eps >= 0:
            raise ValueError(f"oracle_eps must be nonnegative, got {self.oracle_eps}")
        if self.step_mode == "custom":
            if len(self.steps) < self.horizon:
                raise ValueError(f"custom step mode needs {self.horizon} steps, got {len(self.steps)}")
            if any(not 0 < eta <= 1 for eta in self.steps):
                raise ValueError("custom steps must lie in (0, 1]")


def theorem_step(cfg: FwConfig, diameter: float) -> float:
    """Unclamped constant step sqrt(M) / (D·sqrt(beta·T))."""
    return math.sqrt(cfg.value_bound) / (diameter * math.sqrt(cfg.beta * cfg.horizon))


def step_size(cfg: FwConfig, diameter: float, t: int) -> float:
    """Step for iteration ``t`` (1-based)."""
    if cfg.step_mode == "theorem":
        return min(1.0, theorem_step(cfg, diameter))
    if cfg.step_mode == "harmonic":
        return 2.0 / (t + 1)
    return float(cfg.steps[t - 1])


def theorem_rhs(cfg: FwConfig, diameter: float, eps: float) -> float:
    return 2.0 * math.sqrt(cfg.value_bound * cfg.beta) * diameter / math.sqrt(cfg.horizon) + eps


# ═══════════════════════════════════════════════════════════════════════════════
# Linear Minimization Oracle and Gap
# ═══════════════════════════════════════════════════════════════════════════════

@dataclass(frozen=True, eq=False)
class OracleAnswer:
    """
    ``vertex`` is ``None`` when the gradient is exactly zero: every point of
    the ball is a minimizer and the iterate should stay where it is.
    """

    vertex: DenseMatrix | None
    triple: SingularTriple
    certified_eps: float


def _check_grad(ball: TraceNormBall, grad: DenseMatrix) -> None:
    if grad.shape != (ball.d, ball.k):
        raise ValueError(f"gradient shape {grad.shape} does not match the ball ({ball.d}, {ball.k})")
    ensure_finite(grad, "gradient")


def _leading_triple(grad: DenseMatrix, tol: float, max_iter: int, start=None) -> SingularTriple:
    try:
        return top_singular_pair(grad, tol=tol, max_iter=max_iter, start=start)
    except ConvergenceError as exc:
        logger.debug("oracle accepting unconverged power iteration: %s", exc)
        return exc.triple


def lmo(
    ball: TraceNormBall,
    grad: DenseMatrix,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    start: DenseMatrix | None = None,
) -> OracleAnswer:
    """
    Approximate ``argmin_{V∈K} ⟨V, grad⟩`` as ``−radius·u₁v₁ᵀ``.

    An oracle call that runs out of iterations still answers with its last
    estimate; the residual it reports ends up in ``certified_eps``.

    Raises:
        ValueError: gradient of the wrong shape or not finite.
    """
    _check_grad(ball, grad)
    triple = _leading_triple(grad, tol, max_iter, start)
    if triple.sigma == 0.0:
        return OracleAnswer(vertex=None, triple=triple, certified_eps=0.0)
    vertex = -ball.radius * np.outer(triple.u, triple.v)
    return OracleAnswer(vertex=vertex, triple=triple, certified_eps=ball.radius * triple.residual)


def fw_gap(
    ball: TraceNormBall,
    w: DenseMatrix,
    grad: DenseMatrix,
    tol: float = 1e-10,
    max_iter: int = 10_000,
) -> float:
    """``⟨grad, w⟩ + radius·σ₁(grad)``."""
    if not ball.contains(w):
        raise ValueError(
            f"iterate outside the trace-norm ball: ‖w‖_* = {nuclear_norm(w):.6g} > {ball.radius}"
        )
    _check_grad(ball, grad)
    sigma = _leading_triple(grad, tol, max_iter).sigma
    return dot(grad, w) + ball.radius * sigma


# ═══════════════════════════════════════════════════════════════════════════════
# Objectives
# ═══════════════════════════════════════════════════════════════════════════════

class Objective(ABC):
    """Exact loss for traces, exact or stochastic gradients for the steps."""

    shape: tuple[int, int]

    @abstractmethod
    def loss(self, w: DenseMatrix) -> float: ...

    @abstractmethod
    def gradient(self, w: DenseMatrix, rng: SeededRng | None = None) -> DenseMatrix:
        """Exact gradient when ``rng`` is None, otherwise a stochastic estimate."""

    @abstractmethod
    def constants(self, ball: TraceNormBall) -> tuple[float, float]:
        """``(beta, M)``: smoothness and a bound on the loss range over ``ball``."""


class QuadraticObjective(Objective):
    """½‖W − W*‖²_F, with optional additive Gaussian gradient noise."""

    def __init__(self, target: DenseMatrix, noise_std: float = 0.0):
        if noise_std < 0:
            raise ValueError(f"noise_std must be nonnegative, got {noise_std}")
        self.target = np.array(target, dtype=np.float64)
        self.noise_std = float(noise_std)
        self.shape = self.target.shape

    def loss(self, w: DenseMatrix) -> float:
        return 0.5 * frobenius_norm(w - self.target) ** 2

    def gradient(self, w: DenseMatrix, rng: SeededRng | None = None) -> DenseMatrix:
        g = w - self.target
        if rng is not None and self.noise_std > 0:
            g = g + rng.normal(0.0, self.noise_std, size=g.shape)
        return g

    def constants(self, ball: TraceNormBall) -> tuple[float, float]:
        sigma1 = float(np.linalg.svd(self.target, compute_uv=False)[0])
        r = ball.radius
        return 1.0, 0.5 * (r * r + 2.0 * r * sigma1 + frobenius_norm(self.target) ** 2)


class LinearObjective(Objective):
    """⟨C, W⟩. Any positive beta is valid; the range over the ball is 2·radius·σ₁(C)."""

    def __init__(self, c: DenseMatrix, noise_std: float = 0.0):
        self.c = np.array(c, dtype=np.float64)
        self.noise_std = float(noise_std)
        self.shape = self.c.shape

    def loss(self, w: DenseMatrix) -> float:
        return dot(self.c, w)

    def gradient(self, w: DenseMatrix, rng: SeededRng | None = None) -> DenseMatrix:
        if rng is not None and self.noise_std > 0:
            return self.c + rng.normal(0.0, self.noise_std, size=self.c.shape)
        return self.c.copy()

    def constants(self, ball: TraceNormBall) -> tuple[float, float]:
        sigma1 = float(np.linalg.svd(self.c, compute_uv=False)[0])
        return 1.0, max(2.0 * ball.radius * sigma1, np.finfo(float).tiny)


class MatrixCompletionObjective(Objective):
    """
    ½ Σ over observed entries of (W_ij − M_ij)².

    Stochastic gradients sample ``batch_entries`` observed entries uniformly
    with replacement and rescale by ``n_observed / batch_entries``, which keeps
    the estimate unbiased.
    """

    def __init__(self, target: DenseMatrix, mask: DenseMatrix, batch_entries: int | None = None):
        self.target = np.array(target, dtype=np.float64)
        self.mask = np.array(mask, dtype=np.float64)
        if self.mask.shape != self.target.shape:
            raise ValueError(f"mask {self.mask.shape} does not match target {self.target.shape}")
        self.observed = np.argwhere(self.mask > 0)
        if len(self.observed) == 0:
            raise ValueError("matrix completion needs at least one observed entry")
        if batch_entries is not None and batch_entries < 1:
            raise ValueError(f"batch_entries must be positive, got {batch_entries}")
        self.batch_entries = batch_entries
        self.shape = self.target.shape

    def loss(self, w: DenseMatrix) -> float:
        return 0.5 * float(np.sum(self.mask * (w - self.target) ** 2))

    def gradient(self, w: DenseMatrix, rng: SeededRng | None = None) -> DenseMatrix:
        if rng is None or self.batch_entries is None:
            return self.mask * (w - self.target)
        picks = self.observed[rng.integers(0, len(self.observed), size=self.batch_entries)]
        g = np.zeros_like(w)
        rows, cols = picks[:, 0], picks[:, 1]
        np.add.at(g, (rows, cols), w[rows, cols] - self.target[rows, cols])
        return g * (len(self.observed) / self.batch_entries)

    def constants(self, ball: TraceNormBall) -> tuple[float, float]:
        observed_norm = frobenius_norm(self.mask * self.target)
        return 1.0, 0.5 * (ball.radius + observed_norm) ** 2

    def relative_error(self, w: DenseMatrix) -> float:
        """‖W − M‖_F / ‖M‖_F over all entries, observed or not."""
        return frobenius_norm(w - self.target) / frobenius_norm(self.target)


@dataclass(frozen=True)
class FwConstants:
    beta: float
    value_bound: float
    diameter: float


def quadratic_constants(objective: QuadraticObjective, ball: TraceNormBall) -> FwConstants:
    """beta = 1, M = ½(r² + 2r·σ₁(W*) + ‖W*‖²_F), D = 2r."""
    beta, bound = objective.constants(ball)
    return FwConstants(beta=beta, value_bound=bound, diameter=ball.diameter)


# ═══════════════════════════════════════════════════════════════════════════════
# Algorithm Driver
# ═══════════════════════════════════════════════════════════════════════════════

Atom = tuple[float, np.ndarray, np.ndarray]


@dataclass(eq=False)
class FwTrace:
    """
    ``losses`` and ``atom_counts`` have ``T + 1`` entries (the start and every
    iterate after it); ``gaps``, ``etas`` and ``oracle_residuals`` have ``T``.
    """

    losses: list[float] = field(default_factory=list)
    gaps: list[float] = field(default_factory=list)
    etas: list[float] = field(default_factory=list)
    oracle_residuals: list[float] = field(default_factory=list)
    atom_counts: list[int] = field(default_factory=list)
    atoms: list[Atom] = field(default_factory=list)
    iterates: list[DenseMatrix] = field(default_factory=list)
    final_w: DenseMatrix | None = None
    certified_eps: float = 0.0
    bound: float = math.nan
    step_clamped: bool = False

    @property
    def horizon(self) -> int:
        return len(self.gaps)

    @property
    def average_gap(self) -> float:
        return float(np.mean(self.gaps)) if self.gaps else 0.0

    def to_rows(self) -> list[dict[str, float | int]]:
        return [
            {"t": t + 1, "loss": self.losses[t], "gap": g, "eta": eta, "oracle_residual": res}
            for t, (g, eta, res) in enumerate(zip(self.gaps, self.etas, self.oracle_residuals))
        ]


def _atoms_of(w: DenseMatrix) -> list[Atom]:
    u, s, vt = np.linalg.svd(w, full_matrices=False)
    return [(float(s[i]), u[:, i].copy(), vt[i].copy()) for i in range(len(s)) if s[i] > 1e-12]


def run_fw(
    objective: Objective,
    ball: TraceNormBall,
    cfg: FwConfig,
    rng: SeededRng,
    *,
    w1: DenseMatrix | None = None,
    stochastic: bool = False,
    keep_iterates: bool = False,
) -> FwTrace:
    """
    Run ``cfg.horizon`` Frank-Wolfe steps from ``w1`` (default: the zero matrix).

    Steps follow the (possibly stochastic) gradient; the recorded gap always
    uses the exact gradient, evaluated against the step's own oracle vertex
    for exact runs and with a separate exact oracle call for stochastic ones.

    Raises:
        ValueError: ``w1`` outside the ball, objective shape mismatch, or a
            non-finite gradient.
    """
    if objective.shape != (ball.d, ball.k):
        raise ValueError(f"objective shape {objective.shape} does not match the ball ({ball.d}, {ball.k})")
    w = np.zeros((ball.d, ball.k)) if w1 is None else np.array(w1, dtype=np.float64)
    if not ball.contains(w):
        raise ValueError(f"starting point outside the trace-norm ball: ‖w1‖_* = {nuclear_norm(w):.6g}")

    trace = FwTrace()
    raw = theorem_step(cfg, ball.diameter)
    if cfg.step_mode == "theorem" and raw > 1.0:
        trace.step_clamped = True
        logger.warning("theorem step size %.4g clamped to 1 (horizon %d too short)", raw, cfg.horizon)

    atoms = _atoms_of(w) if w1 is not None else []
    trace.losses.append(objective.loss(w))
    trace.atom_counts.append(len(atoms))
    if keep_iterates:
        trace.iterates.append(w.copy())

    # atom coefficients are stored divided by a shared running factor
    scale = 1.0
    start = None
    worst_eps = 0.0
    for t in range(1, cfg.horizon + 1):
        exact = objective.gradient(w)
        step_grad = objective.gradient(w, rng) if stochastic else exact
        answer = lmo(ball, step_grad, cfg.oracle_tol, cfg.oracle_max_iter, start if cfg.warm_start else None)
        worst_eps = max(worst_eps, answer.certified_eps)
        if stochastic:
            gap_answer = lmo(ball, exact, cfg.oracle_tol, cfg.oracle_max_iter)
            worst_eps = max(worst_eps, gap_answer.certified_eps)
        else:
            gap_answer = answer
        target = gap_answer.vertex if gap_answer.vertex is not None else w
        trace.gaps.append(dot(exact, w - target))
        trace.oracle_residuals.append(answer.triple.residual)

        eta = step_size(cfg, ball.diameter, t)
        trace.etas.append(eta)
        if answer.vertex is not None:
            start = answer.triple.v
            w = (1.0 - eta) * w + eta * answer.vertex
            if eta >= 1.0:
                atoms, scale = [], 1.0
            else:
                scale *= 1.0 - eta
                if scale < _RESCALE_BELOW:
                    atoms, scale = [(c * scale, u, v) for c, u, v in atoms], 1.0
            atoms.append((-ball.radius * eta / scale, answer.triple.u.copy(), answer.triple.v.copy()))

        trace.losses.append(objective.loss(w))
        trace.atom_counts.append(len(atoms))
        if keep_iterates:
            trace.iterates.append(w.copy())

    trace.final_w = w
    trace.atoms = [(c * scale, u, v) for c, u, v in atoms]
    trace.certified_eps = cfg.oracle_eps + worst_eps
    trace.bound = theorem_rhs(cfg, ball.diameter, trace.certified_eps)
    logger.info(
        "frank-wolfe: T=%d average gap %.4g, bound %.4g, final loss %.6g",
        cfg.horizon, trace.average_gap, trace.bound, trace.losses[-1],
    )
    return trace


# ═══════════════════════════════════════════════════════════════════════════════
# Bound Verification
# ═══════════════════════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class TheoremReport:
    lhs: float
    rhs: float
    passed: bool


def verify_theorem_bound(trace: FwTrace, cfg: FwConfig, diameter: float) -> TheoremReport:
    """Averaged gap against 2·sqrt(M·beta)·D/sqrt(T) + eps, with relative slack 1e-6."""
    lhs = trace.average_gap
    rhs = theorem_rhs(cfg, diameter, trace.certified_eps)
    return TheoremReport(lhs=lhs, rhs=rhs, passed=lhs <= rhs * (1.0 + 1e-6))


# ═══════════════════════════════════════════════════════════════════════════════
# Demo Instances
# ═══════════════════════════════════════════════════════════════════════════════

def planted_matrix(rng: SeededRng, d: int, k: int, rank: int, nuclear: float) -> DenseMatrix:
    """Random rank-``rank`` ``d×k`` matrix with trace norm exactly ``nuclear``."""
    rank = min(rank, d, k)
    u, _, vt = np.linalg.svd(rng.standard_normal((d, k)), full_matrices=False)
    s = rng.uniform(0.5, 1.5, size=rank)
    s *= nuclear / s.sum()
    return (u[:, :rank] * s) @ vt[:rank]


def build_demo(cfg: FwDemoConfig) -> tuple[Objective, TraceNormBall, FwConfig, SeededRng]:
    """
    Objective, ball and run config for a demo config, plus the generator the
    run should continue with. Constants come from the objective itself.
    """
    rng = make_rng(cfg.seed)
    d, k = cfg.dims, cfg.cols or cfg.dims
    ball = TraceNormBall(cfg.radius, d, k)
    nuclear = cfg.target_scale * cfg.radius
    objective: Objective
    if cfg.objective == "quadratic":
        objective = QuadraticObjective(planted_matrix(rng, d, k, cfg.target_rank, nuclear), cfg.gradient_noise_std)
    elif cfg.objective == "linear":
        objective = LinearObjective(rng.standard_normal((d, k)), cfg.gradient_noise_std)
    else:
        target = planted_matrix(rng, d, k, cfg.target_rank, nuclear)
        mask = (rng.random((d, k)) < cfg.observed_fraction).astype(np.float64)
        if not mask.any():
            mask[0, 0] = 1.0
        objective = MatrixCompletionObjective(target, mask, cfg.batch_entries)
    beta, bound = objective.constants(ball)
    run_cfg = FwConfig(
        horizon=cfg.horizon,
        beta=beta,
        value_bound=bound,
        oracle_eps=cfg.oracle_eps,
        step_mode=cfg.step_mode,
        steps=tuple(cfg.steps),
        oracle_tol=cfg.oracle_tol,
        oracle_max_iter=cfg.oracle_max_iter,
    )
    return objective, ball, run_cfg, rng
