"""Stochastic binarisation of logits.

Subtracting logistic noise ``Z`` before the sign turns every pixel into an
independent Bernoulli variable with ``P(Y_i = +1) = F_Z(a_i)``. For tiny grids
(V <= 20) the expected size loss is enumerated exactly over all ``2^V`` masks.

Random streams are numpy ``Generator`` objects over the counter-based Philox
bit generator, seeded through ``SeedSequence``; independent substreams come
from ``Generator.spawn``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import expit

from .dtransform import chebyshev_dt_stack
from .grid import as_logits
from .sizefn import saturated_size

LOGIT_CLAMP = 30.0
MAX_ENUM_PIXELS = 20


@dataclass(frozen=True)
class NoiseSpec:
    mean: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("noise scale must be positive")


DEFAULT_NOISE = NoiseSpec()


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def split_rng(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    return rng.spawn(n)


def logistic_cdf(a, spec: NoiseSpec = DEFAULT_NOISE):
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError("logistic_cdf needs finite input")
    out = expit((a - spec.mean) / spec.scale)
    return float(out) if out.ndim == 0 else out


def logistic_pdf(a, spec: NoiseSpec = DEFAULT_NOISE):
    """Derivative of :func:`logistic_cdf` with respect to ``a``."""
    p = logistic_cdf(a, spec)
    return p * (1.0 - p) / spec.scale


def prob_map(logits, spec: NoiseSpec = DEFAULT_NOISE) -> np.ndarray:
    a = np.clip(as_logits(logits), -LOGIT_CLAMP, LOGIT_CLAMP)
    return logistic_cdf(a, spec)


def sample_mask(probs, rng: np.random.Generator) -> np.ndarray:
    """Draw one mask; consumes exactly V uniforms in row-major order."""
    p = np.asarray(probs, dtype=np.float64)
    u = rng.random(p.size).reshape(p.shape)
    return np.where(u < p, 1, -1).astype(np.int8)


def _check_enumerable(shape) -> int:
    v = int(np.prod(shape))
    if v > MAX_ENUM_PIXELS:
        raise ValueError(f"exact enumeration refused for V={v} > {MAX_ENUM_PIXELS}")
    return v


def all_masks(shape) -> np.ndarray:
    """Every ±1 mask of ``shape``; mask ``k`` has pixel ``i`` (row-major) set iff bit ``i`` of ``k`` is 1."""
    v = _check_enumerable(shape)
    bits = (np.arange(2 ** v)[:, None] >> np.arange(v)[None, :]) & 1
    return (2 * bits - 1).astype(np.int8).reshape((2 ** v,) + tuple(shape))


@lru_cache(maxsize=32)
def _all_sizes(shape: tuple[int, int]) -> np.ndarray:
    v = _check_enumerable(shape)
    sizes = np.empty(2 ** v, dtype=np.int64)
    chunk = 1 << 15
    for start in range(0, 2 ** v, chunk):
        k = np.arange(start, min(start + chunk, 2 ** v))
        fg = ((k[:, None] >> np.arange(v)[None, :]) & 1).astype(bool).reshape((-1,) + shape)
        d = chebyshev_dt_stack(fg).reshape(k.size, -1).max(axis=1)
        sz = 2 * d
        sz[fg.reshape(k.size, -1).all(axis=1)] = saturated_size(shape)
        sizes[start:start + k.size] = sz
    sizes.flags.writeable = False
    return sizes


def all_sizes(shape) -> np.ndarray:
    """Object size of every mask from :func:`all_masks`, same ordering."""
    return _all_sizes(tuple(int(x) for x in shape))


def outcome_probs(probs) -> np.ndarray:
    """Probability of every mask from :func:`all_masks`."""
    p = np.asarray(probs, dtype=np.float64).ravel()
    _check_enumerable(np.shape(probs))
    out = np.ones(1)
    for pi in p:
        out = np.concatenate([out * (1.0 - pi), out * pi])
    return out


def expected_loss_exact(probs, gt_size: float) -> float:
    """Sum over all 2^V masks of P(mask) * (s - g(mask))^2."""
    p = np.asarray(probs, dtype=np.float64)
    losses = (gt_size - all_sizes(p.shape)) ** 2
    return float(outcome_probs(p) @ losses)


def expected_loss_mc(probs, gt_size: float, n: int, rng: np.random.Generator) -> tuple[float, float]:
    """Monte-Carlo mean of the size loss and its standard error (any V)."""
    p = np.asarray(probs, dtype=np.float64)
    u = rng.random((n,) + p.shape)
    fg = u < p
    sizes = 2 * chebyshev_dt_stack(fg).reshape(n, -1).max(axis=1)
    sizes[fg.reshape(n, -1).all(axis=1)] = saturated_size(p.shape)
    losses = (gt_size - sizes) ** 2.0
    return float(losses.mean()), float(losses.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
