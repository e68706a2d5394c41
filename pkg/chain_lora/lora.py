# ═══════════════════════════════════════════════════════════════════════════════
# LoRA Adapter Lifecycle
# ═══════════════════════════════════════════════════════════════════════════════
# An adapter is the pair (A, B) plus its rank and alpha. It is created with a
# zero B so it starts as an exact no-op, merged into the frozen weight when a
# knot is tied, and replaced by a fresh (possibly lower-rank) adapter when the
# chain is extended.

"""
LoRA adapters as immutable values.

Shapes follow the weight they adapt: for a frozen ``W`` of shape ``d×k`` the
adapter holds ``A`` (``r×k``, Gaussian init) and ``B`` (``d×r``, zero init).
The update it represents is ``ΔW = (alpha/r)·B·A``; the ``alpha/r`` scale is
applied in exactly one place, :func:`effective_delta`, so the merged weight
and the adapter forward pass agree by construction.

Adapters carry no bias term.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .linalg import DenseMatrix, SeededRng, add_scaled, gaussian, matmul

logger = logging.getLogger(__name__)

DEFAULT_INIT_STD = 0.02


@dataclass(frozen=True, eq=False)
class LoraAdapter:
    """
    Low-rank update ``(alpha/rank)·B·A`` for one ``d×k`` layer.

    ``a`` is ``rank×k`` and ``b`` is ``d×rank``; construction fails if the
    two factors disagree on the rank or the rank exceeds ``min(d, k)``.
    """

    a: DenseMatrix
    b: DenseMatrix
    alpha: float

    def __post_init__(self) -> None:
        if self.a.ndim != 2 or self.b.ndim != 2:
            raise ValueError(f"adapter factors must be matrices, got A{self.a.shape} B{self.b.shape}")
        if self.a.shape[0] != self.b.shape[1]:
            raise ValueError(f"adapter rank mismatch: A{self.a.shape} vs B{self.b.shape}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        _check_rank(self.rank, self.d, self.k)

    @property
    def rank(self) -> int:
        return self.a.shape[0]

    @property
    def d(self) -> int:
        return self.b.shape[0]

    @property
    def k(self) -> int:
        return self.a.shape[1]


def _check_rank(rank: int, d: int, k: int, warn: bool = False) -> None:
    if not 1 <= rank <= min(d, k):
        raise ValueError(f"rank {rank} out of range [1, {min(d, k)}] for a {d}x{k} layer")
    if warn and rank == min(d, k):
        logger.warning("adapter rank %d is not smaller than min(d, k) for a %dx%d layer", rank, d, k)


def scale(ad: LoraAdapter) -> float:
    return ad.alpha / ad.rank


def init_adapter(
    rng: SeededRng,
    d: int,
    k: int,
    rank: int,
    alpha: float,
    init_std: float = DEFAULT_INIT_STD,
) -> LoraAdapter:
    """Gaussian ``A``, zero ``B``: the effective delta of the result is exactly zero."""
    _check_rank(rank, d, k, warn=True)
    return LoraAdapter(a=gaussian(rng, rank, k, init_std), b=np.zeros((d, rank)), alpha=float(alpha))


def adapter_from_factors(b: DenseMatrix, a: DenseMatrix, alpha: float) -> LoraAdapter:
    return LoraAdapter(a=np.array(a, dtype=np.float64), b=np.array(b, dtype=np.float64), alpha=float(alpha))


def effective_delta(ad: LoraAdapter) -> DenseMatrix:
    return scale(ad) * matmul(ad.b, ad.a)


def merge_into(w: DenseMatrix, ad: LoraAdapter) -> DenseMatrix:
    """Return ``w + effective_delta(ad)``; ``w`` itself is left untouched."""
    if w.shape != (ad.d, ad.k):
        raise ValueError(f"merge_into: weight {w.shape} does not match adapter ({ad.d}, {ad.k})")
    return add_scaled(w, effective_delta(ad), 1.0)


def reinit(
    ad: LoraAdapter,
    rng: SeededRng,
    new_rank: int,
    init_std: float = DEFAULT_INIT_STD,
) -> LoraAdapter:
    """Fresh adapter for the same layer, rank ``new_rank``, same alpha."""
    return init_adapter(rng, ad.d, ad.k, new_rank, ad.alpha, init_std)
