# ═══════════════════════════════════════════════════════════════════════════════
# Desk-Scale LoRA Models
# ═══════════════════════════════════════════════════════════════════════════════
# A model is an ordered stack of frozen dense layers, some of which carry a LoRA
# adapter. Only adapter factors are trainable: the backward pass returns
# gradients for (A, B) on adapted layers and nothing for the frozen weights.

"""
Stacks of dense layers with LoRA injection, exact losses and analytic gradients.

Data layout is row-per-sample: an input batch ``X`` is ``n×k`` and a layer with
frozen weight ``W`` (``d×k``) and adapter ``(A, B)`` computes

    Z = X·Wᵀ + s·(X·Aᵀ)·Bᵀ,   H = act(Z),   s = alpha/rank.

With ``G = ∂L/∂Z`` the adapter gradients are

    ∂L/∂B = s·Gᵀ·(X·Aᵀ)        (d×r)
    ∂L/∂A = s·(G·B)ᵀ·X         (r×k)

and the signal passed to the previous layer is ``G·W + s·(G·B)·A``.

Losses are batch means so learning rates carry over between batch sizes:
``mse`` is the mean of ½‖pred − target‖² (optionally over masked entries
only) and ``softmax_cross_entropy`` the mean negative log-likelihood of
integer class targets. The ReLU derivative at 0 is taken as 0.

Models and batches are values: nothing here mutates its arguments, and the
frozen weight arrays are stored read-only.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator, Literal, Mapping

import numpy as np
from numpy.typing import NDArray

from . import lora
from .linalg import DenseMatrix, SeededRng, matmul
from .lora import LoraAdapter

Activation = Literal["identity", "relu", "tanh"]
LossKind = Literal["mse", "softmax_cross_entropy"]

_ACTIVATIONS = ("identity", "relu", "tanh")
_LOSSES = ("mse", "softmax_cross_entropy")


# ═══════════════════════════════════════════════════════════════════════════════
# Domain Types
# ═══════════════════════════════════════════════════════════════════════════════

def _frozen_copy(w: DenseMatrix) -> DenseMatrix:
    w = np.array(w, dtype=np.float64)
    w.setflags(write=False)
    return w


@dataclass(frozen=True, eq=False)
class Layer:
    """
    One dense layer: frozen ``weight`` (``d×k``), optional adapter, activation.

    ``consumed`` marks an adapter whose delta has already been merged into
    ``weight`` by a knot; a consumed adapter no longer contributes to the
    forward pass and only records the shape and alpha that the next link of
    the chain starts from.
    """

    weight: DenseMatrix
    adapter: LoraAdapter | None = None
    activation: Activation = "identity"
    consumed: bool = False

    def __post_init__(self) -> None:
        w = self.weight
        if not isinstance(w, np.ndarray) or w.flags.writeable or w.dtype != np.float64:
            object.__setattr__(self, "weight", _frozen_copy(self.weight))
        if self.weight.ndim != 2:
            raise ValueError(f"layer weight must be a matrix, got shape {self.weight.shape}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.adapter is not None and (self.adapter.d, self.adapter.k) != self.weight.shape:
            raise ValueError(
                f"adapter ({self.adapter.d}, {self.adapter.k}) does not match weight {self.weight.shape}"
            )

    @property
    def live_adapter(self) -> LoraAdapter | None:
        return None if self.consumed else self.adapter

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass(frozen=True, eq=False)
class LoraLinearModel:
    layers: tuple[Layer, ...]
    loss_kind: LossKind = "mse"

    def __post_init__(self) -> None:
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ValueError("a model needs at least one layer")
        if self.loss_kind not in _LOSSES:
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")
        for i, (prev, nxt) in enumerate(zip(self.layers, self.layers[1:])):
            if prev.out_dim != nxt.in_dim:
                raise ValueError(
                    f"layer {i} output dim {prev.out_dim} does not feed layer {i + 1} input dim {nxt.in_dim}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def adapted_layers(self) -> list[int]:
        """Indices of layers that carry an adapter (live or consumed)."""
        return [i for i, layer in enumerate(self.layers) if layer.adapter is not None]

    def adapters(self) -> dict[int, LoraAdapter]:
        """Live adapters keyed by layer index."""
        return {i: layer.adapter for i, layer in enumerate(self.layers) if layer.live_adapter is not None}

    def with_adapters(self, adapters: Mapping[int, LoraAdapter]) -> "LoraLinearModel":
        layers = list(self.layers)
        for i, ad in adapters.items():
            layers[i] = replace(layers[i], adapter=ad, consumed=False)
        return replace(self, layers=tuple(layers))

    def frozen_weights(self) -> list[DenseMatrix]:
        return [layer.weight for layer in self.layers]


@dataclass(frozen=True, eq=False)
class Batch:
    """
    ``inputs`` is ``n×in_dim``. ``targets`` is ``n×out_dim`` (mse) or a length-n
    integer array of class indices (cross-entropy). ``mask``, if present, is a
    0/1 matrix shaped like the regression targets selecting observed entries.
    """

    inputs: DenseMatrix
    targets: NDArray
    mask: DenseMatrix | None = None

    def __post_init__(self) -> None:
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise ValueError(f"batch inputs must be a non-empty matrix, got shape {self.inputs.shape}")
        if self.targets.shape[0] != self.inputs.shape[0]:
            raise ValueError(f"{self.inputs.shape[0]} inputs but {self.targets.shape[0]} targets")
        if self.mask is not None and self.mask.shape != self.targets.shape:
            raise ValueError(f"mask shape {self.mask.shape} does not match targets {self.targets.shape}")

    @property
    def size(self) -> int:
        return self.inputs.shape[0]

    def take(self, rows: NDArray[np.intp]) -> "Batch":
        return Batch(
            inputs=self.inputs[rows],
            targets=self.targets[rows],
            mask=None if self.mask is None else self.mask[rows],
        )


@dataclass(frozen=True, eq=False)
class AdapterGrad:
    grad_a: DenseMatrix
    grad_b: DenseMatrix


GradSet = dict[int, AdapterGrad]


# ═══════════════════════════════════════════════════════════════════════════════
# Activations
# ═══════════════════════════════════════════════════════════════════════════════

def _activate(z: DenseMatrix, kind: Activation) -> DenseMatrix:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(z: DenseMatrix, h: DenseMatrix, kind: Activation) -> DenseMatrix:
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - h * h
    return np.ones_like(z)


# ═══════════════════════════════════════════════════════════════════════════════
# Forward Pass and Losses
# ═══════════════════════════════════════════════════════════════════════════════

@dataclass
class _LayerCache:
    x: DenseMatrix
    xa: DenseMatrix | None
    z: DenseMatrix
    h: DenseMatrix


@dataclass
class _ForwardCache:
    layers: list[_LayerCache] = field(default_factory=list)


def _check_input(m: LoraLinearModel, x: DenseMatrix) -> None:
    if x.ndim != 2 or x.shape[1] != m.in_dim:
        raise ValueError(f"input shape {x.shape} does not match model input dim {m.in_dim}")


def _forward(m: LoraLinearModel, x: DenseMatrix, cache: _ForwardCache | None = None) -> DenseMatrix:
    _check_input(m, x)
    h = x
    for layer in m.layers:
        z = matmul(h, layer.weight.T)
        xa = None
        ad = layer.live_adapter
        if ad is not None:
            xa = matmul(h, ad.a.T)
            z = z + lora.scale(ad) * matmul(xa, ad.b.T)
        out = _activate(z, layer.activation)
        if cache is not None:
            cache.layers.append(_LayerCache(x=h, xa=xa, z=z, h=out))
        h = out
    return h


def forward(m: LoraLinearModel, x: DenseMatrix) -> DenseMatrix:
    return _forward(m, x)


def frozen_forward(m: LoraLinearModel, x: DenseMatrix) -> DenseMatrix:
    """Forward pass with every adapter ignored."""
    bare = replace(m, layers=tuple(replace(layer, adapter=None, consumed=False) for layer in m.layers))
    return _forward(bare, x)


def merged_copy(m: LoraLinearModel) -> LoraLinearModel:
    """Deployment view: every live adapter merged into its weight and dropped."""
    layers = []
    for layer in m.layers:
        ad = layer.live_adapter
        weight = layer.weight if ad is None else lora.merge_into(layer.weight, ad)
        layers.append(Layer(weight=weight, adapter=None, activation=layer.activation))
    return replace(m, layers=tuple(layers))


def _class_targets(m: LoraLinearModel, batch: Batch) -> NDArray[np.intp]:
    y = np.asarray(batch.targets)
    if y.ndim != 1 or not np.issubdtype(y.dtype, np.integer):
        raise ValueError("softmax_cross_entropy needs a 1-D integer array of class indices")
    if y.min() < 0 or y.max() >= m.out_dim:
        raise ValueError(f"class index out of range [0, {m.out_dim}): min {y.min()}, max {y.max()}")
    return y


def _log_softmax(logits: DenseMatrix) -> DenseMatrix:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _loss_and_signal(m: LoraLinearModel, pred: DenseMatrix, batch: Batch) -> tuple[float, DenseMatrix]:
    """Mean loss and its gradient with respect to ``pred``."""
    n = batch.size
    if m.loss_kind == "mse":
        if batch.targets.shape != pred.shape:
            raise ValueError(f"targets {batch.targets.shape} do not match predictions {pred.shape}")
        diff = pred - batch.targets
        if batch.mask is not None:
            diff = diff * batch.mask
        return float(0.5 * np.sum(diff * diff) / n), diff / n

    y = _class_targets(m, batch)
    log_probs = _log_softmax(pred)
    rows = np.arange(n)
    value = float(-np.mean(log_probs[rows, y]))
    signal = np.exp(log_probs)
    signal[rows, y] -= 1.0
    return value, signal / n


def loss(m: LoraLinearModel, batch: Batch) -> float:
    value, _ = _loss_and_signal(m, forward(m, batch.inputs), batch)
    return value


def accuracy(m: LoraLinearModel, batch: Batch) -> float:
    y = _class_targets(m, batch)
    return float(np.mean(np.argmax(forward(m, batch.inputs), axis=1) == y))


# ═══════════════════════════════════════════════════════════════════════════════
# Backward Pass
# ═══════════════════════════════════════════════════════════════════════════════

def backward(m: LoraLinearModel, batch: Batch) -> tuple[float, GradSet]:
    """
    Loss and adapter gradients for ``batch``.

    Gradients are returned only for layers with a live adapter; frozen weights
    get no gradient storage at all.
    """
    cache = _ForwardCache()
    pred = _forward(m, batch.inputs, cache)
    value, signal = _loss_and_signal(m, pred, batch)

    grads: GradSet = {}
    for i in range(len(m.layers) - 1, -1, -1):
        layer, c = m.layers[i], cache.layers[i]
        dz = signal * _activation_grad(c.z, c.h, layer.activation)
        ad = layer.live_adapter
        if ad is not None:
            s = lora.scale(ad)
            dz_b = matmul(dz, ad.b)
            grads[i] = AdapterGrad(
                grad_a=s * matmul(dz_b.T, c.x),
                grad_b=s * matmul(dz.T, c.xa),
            )
        if i > 0:
            signal = matmul(dz, layer.weight)
            if ad is not None:
                signal = signal + s * matmul(dz_b, ad.a)
    return value, grads


# ═══════════════════════════════════════════════════════════════════════════════
# Minibatching
# ═══════════════════════════════════════════════════════════════════════════════

def minibatches(batch: Batch, batch_size: int, rng: SeededRng) -> Iterator[Batch]:
    """One shuffled epoch over ``batch``; the final partial batch is kept."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be positive, got {batch_size}")
    order = rng.permutation(batch.size)
    for start in range(0, batch.size, batch_size):
        yield batch.take(order[start:start + batch_size])
