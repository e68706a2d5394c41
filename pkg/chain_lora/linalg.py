# ═══════════════════════════════════════════════════════════════════════════════
# Dense Matrix Arithmetic and Seeded Randomness
# ═══════════════════════════════════════════════════════════════════════════════
# Every other module in the lab talks in 2-D float64 numpy arrays. This module
# owns the shape contracts for them, the seeded random stream, and the
# top-singular-pair extraction that the Frank-Wolfe oracle is built on.

"""
Dense real matrix helpers for the Chain-of-LoRA lab.

Conventions:
- A ``DenseMatrix`` is a 2-D ``numpy.float64`` array. Vectors that belong to a
  singular triple are 1-D arrays.
- ``SeededRng`` is a ``numpy.random.Generator`` backed by PCG64. The bit
  generator algorithm is fixed and documented by numpy, so a given seed
  produces the same stream on every platform.
- Shape violations raise ``ValueError`` naming both shapes.

Power iteration (not a full SVD) is the production path for the top singular
pair; the full decomposition is only used for feasibility checks
(``nuclear_norm``) and by the test suite as an oracle.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

logger = logging.getLogger(__name__)

DenseMatrix = NDArray[np.float64]
SeededRng = np.random.Generator

# Fixed seed for the power-iteration start vector, so the oracle is a pure
# function of its input matrix.
_POWER_START_SEED = 0x5EED_C01A

_MAX_SEED = 2**64 - 1


class ConvergenceError(RuntimeError):
    """Power iteration stopped at ``max_iter`` above the requested tolerance.

    The last estimate is attached so callers can decide to accept it (the
    Frank-Wolfe oracle does, folding the residual into its certified epsilon)
    or abort.
    """

    def __init__(self, message: str, residual: float, iterations: int, triple: "SingularTriple"):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.triple = triple


@dataclass(frozen=True, eq=False)
class SingularTriple:
    """Top singular value with unit left/right vectors and the final residual."""

    sigma: float
    u: NDArray[np.float64]
    v: NDArray[np.float64]
    residual: float = 0.0


# ═══════════════════════════════════════════════════════════════════════════════
# Construction and Seeded Randomness
# ═══════════════════════════════════════════════════════════════════════════════

def as_matrix(values: ArrayLike) -> DenseMatrix:
    """Coerce ``values`` into a fresh 2-D float64 array (lists of rows accepted)."""
    m = np.array(values, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {m.shape}")
    return m


def make_rng(seed: int) -> SeededRng:
    """PCG64 generator for ``seed``; every random draw in the lab starts here."""
    if not 0 <= int(seed) <= _MAX_SEED:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.PCG64(int(seed)))


def spawn(rng: SeededRng, n: int) -> list[SeededRng]:
    """Independent child streams (seed-sequence spawning) for parallel work."""
    return list(rng.spawn(n))


def gaussian(rng: SeededRng, rows: int, cols: int, std: float) -> DenseMatrix:
    """``rows×cols`` matrix of independent ``N(0, std²)`` entries."""
    if not std > 0:
        raise ValueError(f"gaussian std must be positive, got {std}")
    if rows < 1 or cols < 1:
        raise ValueError(f"gaussian shape must be positive, got ({rows}, {cols})")
    return rng.standard_normal((rows, cols)) * std


# ═══════════════════════════════════════════════════════════════════════════════
# Elementwise and Product Arithmetic
# ═══════════════════════════════════════════════════════════════════════════════

def _require_same_shape(a: DenseMatrix, b: DenseMatrix, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def matmul(a: DenseMatrix, b: DenseMatrix) -> DenseMatrix:
    """Matrix product ``a·b``; the error names both shapes on mismatch."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: dimension mismatch {a.shape} x {b.shape}")
    return a @ b


def add_scaled(a: DenseMatrix, b: DenseMatrix, s: float) -> DenseMatrix:
    """Return ``a + s*b`` as a new matrix."""
    _require_same_shape(a, b, "add_scaled")
    return a + s * b


def frobenius_norm(m: DenseMatrix) -> float:
    """sqrt of the sum of squared entries."""
    return float(np.sqrt(np.sum(m * m)))


def dot(a: DenseMatrix, b: DenseMatrix) -> float:
    """Frobenius inner product."""
    _require_same_shape(a, b, "dot")
    return float(np.sum(a * b))


def ensure_finite(m: DenseMatrix, what: str) -> None:
    if not np.all(np.isfinite(m)):
        raise ValueError(f"non-finite entries in {what}")


# ═══════════════════════════════════════════════════════════════════════════════
# Spectral Helpers
# ═══════════════════════════════════════════════════════════════════════════════

def nuclear_norm(m: DenseMatrix) -> float:
    """Sum of singular values (trace norm), from a full SVD."""
    return float(np.linalg.svd(m, compute_uv=False).sum())


def numerical_rank(m: DenseMatrix, tol: float = 1e-10) -> int:
    """Number of singular values above ``tol``."""
    return int(np.count_nonzero(np.linalg.svd(m, compute_uv=False) > tol))


def _unit(n: int) -> NDArray[np.float64]:
    e = np.zeros(n)
    e[0] = 1.0
    return e


def _canonical_sign(u: NDArray[np.float64], v: NDArray[np.float64]) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    # largest-magnitude entry of v is positive
    if v[np.argmax(np.abs(v))] < 0:
        return -u, -v
    return u, v


def top_singular_pair(
    m: DenseMatrix,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    start: Sequence[float] | NDArray[np.float64] | None = None,
) -> SingularTriple:
    """
    Leading singular triple of ``m`` by power iteration on ``mᵀm``.

    The start vector is drawn from a fixed-seed stream unless ``start`` is
    given (warm starts from a previous oracle call are allowed). Each sweep
    sets ``v ← mᵀm v / ‖mᵀm v‖``, ``σ = ‖m v‖`` and ``u = m v / σ``, so
    ``m v = σ u`` holds exactly and the reported residual is the other half
    of the pair identity, ``‖mᵀu − σ v‖₂``. Iteration stops once the residual
    is at most ``tol·σ``.

    Zero matrix convention: ``σ = 0`` and ``u = e₁``, ``v = e₁``.

    Raises:
        ValueError: ``tol`` not positive or ``m`` not 2-D.
        ConvergenceError: residual still above ``tol·σ`` after ``max_iter``
            sweeps; the exception carries the last estimate.
    """
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    if m.ndim != 2:
        raise ValueError(f"top_singular_pair expects a matrix, got shape {m.shape}")

    rows, cols = m.shape
    if not np.any(m):
        return SingularTriple(0.0, _unit(rows), _unit(cols), 0.0)

    v = None if start is None else np.array(start, dtype=np.float64)
    if v is not None and v.shape != (cols,):
        raise ValueError(f"start vector has shape {v.shape}, expected ({cols},)")
    if v is None or not np.any(v):
        v = make_rng(_POWER_START_SEED).standard_normal(cols)
    v = v / np.linalg.norm(v)

    gram = m.T @ m
    sigma, u, residual = 0.0, _unit(rows), np.inf
    for iteration in range(1, max_iter + 1):
        w = gram @ v
        w_norm = np.linalg.norm(w)
        if w_norm == 0.0:
            # start vector in the null space; cycle through basis vectors
            v = np.zeros(cols)
            v[(iteration - 1) % cols] = 1.0
            continue
        v = w / w_norm
        mv = m @ v
        sigma = float(np.linalg.norm(mv))
        u = mv / sigma
        residual = float(np.linalg.norm(m.T @ u - sigma * v))
        if residual <= tol * sigma:
            u, v = _canonical_sign(u, v)
            return SingularTriple(sigma, u, v, residual)

    u, v = _canonical_sign(u, v)
    triple = SingularTriple(sigma, u, v, residual)
    raise ConvergenceError(
        f"power iteration did not converge after {max_iter} iterations "
        f"(residual {residual:.3e}, sigma {sigma:.6e})",
        residual=residual,
        iterations=max_iter,
        triple=triple,
    )
