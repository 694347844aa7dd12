"""Gradients of the expected size loss with respect to pixel probabilities.

Two routes are provided. :func:`exact_grad_wrt_probs` enumerates all ``2^V``
outcomes and is only usable on tiny grids. :func:`single_sample_grad` is the
flip estimator: for a sampled mask ``y`` it returns
``y_i * (l(s, g(y)) - l(s, g(y with pixel i negated)))`` at every pixel, which
is unbiased for the derivative with respect to ``p_i``. It never divides by
``p_i`` or ``1 - p_i``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridError
from .sizefn import flip_size_table, flip_size_table_fast
from .stochastic import DEFAULT_NOISE, NoiseSpec, all_sizes, logistic_pdf, sample_mask


@dataclass(frozen=True)
class EstimatorConfig:
    n_samples: int = 1
    use_fast_flip_table: bool = True

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")


def exact_grad_wrt_probs(probs, gt_size: float) -> np.ndarray:
    """Sum over masks y of P(y) / P(y_i) * l(s, g(y)) * y_i, for every pixel i."""
    p = np.asarray(probs, dtype=np.float64)
    v = p.size
    losses = (gt_size - all_sizes(p.shape)) ** 2.0
    # axis j of the reshaped table is bit (v - 1 - j), i.e. pixel v - 1 - j
    table = losses.reshape((2,) * v)
    flat_p = p.ravel()
    grad = np.empty(v)
    for i in range(v):
        t = np.moveaxis(table, v - 1 - i, 0).reshape(2, -1)
        others = np.ones(1)
        # remaining axes in order are pixels v-1, ..., 0 without i
        for j in range(v - 1, -1, -1):
            if j != i:
                others = np.multiply.outer(others, [1.0 - flat_p[j], flat_p[j]]).ravel()
        grad[i] = others @ (t[1] - t[0])
    return grad.reshape(p.shape)


def flip_estimate(mask, gt_size: float, fast: bool = True) -> np.ndarray:
    """Per-pixel flip estimate for one given mask sample."""
    y = np.asarray(mask)
    table = flip_size_table_fast(y) if fast else flip_size_table(y)
    base_loss = (gt_size - table.base_size) ** 2.0
    flip_loss = (gt_size - table.flipped_sizes) ** 2.0
    return y * (base_loss - flip_loss)


def sample_grad_and_loss(probs, gt_size: float, rng: np.random.Generator,
                         config: EstimatorConfig = EstimatorConfig()) -> tuple[np.ndarray, float]:
    """Averaged flip estimate plus the mean size loss of the sampled masks."""
    p = np.asarray(probs, dtype=np.float64)
    total = np.zeros(p.shape)
    loss = 0.0
    for _ in range(config.n_samples):
        y = sample_mask(p, rng)
        table = flip_size_table_fast(y) if config.use_fast_flip_table else flip_size_table(y)
        base_loss = (gt_size - table.base_size) ** 2.0
        total += y * (base_loss - (gt_size - table.flipped_sizes) ** 2.0)
        loss += base_loss
    return total / config.n_samples, loss / config.n_samples


def single_sample_grad(probs, gt_size: float, rng: np.random.Generator,
                       config: EstimatorConfig = EstimatorConfig()) -> np.ndarray:
    """Mean of ``config.n_samples`` independent flip estimates."""
    return sample_grad_and_loss(probs, gt_size, rng, config)[0]


def chain_to_logits(grad_probs, logits, spec: NoiseSpec = DEFAULT_NOISE) -> np.ndarray:
    g = np.asarray(grad_probs, dtype=np.float64)
    a = np.asarray(logits, dtype=np.float64)
    if g.shape != a.shape:
        raise GridError(f"dimension mismatch: {g.shape} vs {a.shape}")
    return g * logistic_pdf(a, spec)
