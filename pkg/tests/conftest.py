from __future__ import annotations

import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest

from chain_lora import lora
from chain_lora.linalg import make_rng
from chain_lora.model import Batch, Layer, LoraLinearModel


def pytest_configure(config):
    config.addinivalue_line("markers", "invariant: acceptance-grade property of the library")
    config.addinivalue_line("markers", "slow: long-running experiment check")


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture
def svd_top():
    """Dense SVD oracle for the leading singular triple."""

    def top(m):
        u, s, vt = np.linalg.svd(m)
        return s[0], u[:, 0], vt[0]

    return top


def random_model(
    rng,
    dims=(5, 4, 3),
    rank=2,
    alpha=4.0,
    activation="tanh",
    loss_kind="mse",
    b_std=0.3,
):
    """Random model with nonzero adapters on every layer; ``dims`` lists widths from input to output."""
    layers = []
    for i, (k, d) in enumerate(zip(dims, dims[1:])):
        r = min(rank, d, k)
        ad = lora.adapter_from_factors(rng.standard_normal((d, r)) * b_std, rng.standard_normal((r, k)), alpha)
        act = activation if i < len(dims) - 2 else "identity"
        layers.append(Layer(weight=rng.standard_normal((d, k)) / np.sqrt(k), adapter=ad, activation=act))
    return LoraLinearModel(tuple(layers), loss_kind=loss_kind)


def random_batch(rng, model, n=6):
    x = rng.standard_normal((n, model.in_dim))
    if model.loss_kind == "mse":
        return Batch(inputs=x, targets=rng.standard_normal((n, model.out_dim)))
    return Batch(inputs=x, targets=rng.integers(0, model.out_dim, size=n))


@pytest.fixture
def model_factory(rng):
    return lambda **kw: random_model(rng, **kw)


class ReferenceAdamW:
    """Scalar-loop AdamW used to check the vectorized update entry by entry."""

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.lr, self.beta1, self.beta2, self.eps, self.wd = lr, beta1, beta2, eps, weight_decay
        self.m, self.v, self.t = {}, {}, 0

    def step(self, params, grads):
        self.t += 1
        out = {}
        for key, p in params.items():
            g = grads[key]
            m = self.m.setdefault(key, [0.0] * p.size)
            v = self.v.setdefault(key, [0.0] * p.size)
            flat, gflat = list(p.ravel()), list(g.ravel())
            for j in range(len(flat)):
                m[j] = self.beta1 * m[j] + (1 - self.beta1) * gflat[j]
                v[j] = self.beta2 * v[j] + (1 - self.beta2) * gflat[j] ** 2
                m_hat = m[j] / (1 - self.beta1 ** self.t)
                v_hat = v[j] / (1 - self.beta2 ** self.t)
                flat[j] = flat[j] - self.lr * (m_hat / (v_hat ** 0.5 + self.eps) + self.wd * flat[j])
            out[key] = np.array(flat).reshape(p.shape)
        return out


@pytest.fixture
def reference_adamw():
    return ReferenceAdamW
