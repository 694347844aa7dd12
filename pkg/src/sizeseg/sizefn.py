"""Object size functional and its single-pixel-flip tables.

The size of a mask is twice the largest Chebyshev distance from a foreground
pixel to the background. A mask without background has no finite distances;
its size is fixed at ``2 * max(H, W)``, which bounds every size reachable on the
grid and keeps the functional total and monotone.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .dtransform import chebyshev_dt, chebyshev_dt_stack
from .grid import BACKGROUND, as_mask


class FlipSizeTable(NamedTuple):
    base_size: int
    flipped_sizes: np.ndarray  # [r, c] -> size with pixel (r, c) negated


def saturated_size(shape) -> int:
    return 2 * max(shape)


def object_size(mask) -> int:
    m = as_mask(mask)
    if not np.any(m == BACKGROUND):
        return saturated_size(m.shape)
    return 2 * int(chebyshev_dt(m).max())


def flip_size_table(mask) -> FlipSizeTable:
    """Reference table: one full size evaluation per flipped pixel."""
    m = as_mask(mask)
    flipped = np.empty(m.shape, dtype=np.int64)
    work = m.copy()
    for r in range(m.shape[0]):
        for c in range(m.shape[1]):
            work[r, c] = -work[r, c]
            flipped[r, c] = object_size(work)
            work[r, c] = -work[r, c]
    return FlipSizeTable(object_size(m), flipped)


def _window_sum(a: np.ndarray, radius: int) -> np.ndarray:
    """Sum of ``a`` over the clipped (2*radius+1)^2 window around each pixel."""
    h, w = a.shape
    ii = np.zeros((h + 1, w + 1), dtype=np.int64)
    ii[1:, 1:] = a.cumsum(0).cumsum(1)
    r = np.arange(h)
    c = np.arange(w)
    r0 = np.clip(r - radius, 0, h)[:, None]
    r1 = np.clip(r + radius + 1, 0, h)[:, None]
    c0 = np.clip(c - radius, 0, w)[None, :]
    c1 = np.clip(c + radius + 1, 0, w)[None, :]
    return ii[r1, c1] - ii[r0, c1] - ii[r1, c0] + ii[r0, c0]


def flip_size_table_fast(mask, dt: np.ndarray | None = None) -> FlipSizeTable:
    """Same table as :func:`flip_size_table`, computed without V transforms.

    Foreground -> background at ``i``: distances become ``min(d_j, δ(j, i))``.
    The maximum is unchanged if any maximiser lies at distance >= max from
    ``i``; otherwise it is taken directly from that pointwise minimum.

    Background -> foreground at ``b``: a pixel can exceed the current maximum
    ``M`` only if ``b`` is the sole background pixel within distance ``M`` of
    it. Those candidate ``b`` are located with window counts; every other
    background flip leaves the size unchanged. Candidates are re-transformed
    in one batched sweep.
    """
    m = as_mask(mask)
    h, w = m.shape
    fg = m > 0
    bg = ~fg
    if not bg.any():
        # every flip leaves exactly one background pixel
        rr, cc = np.divmod(np.arange(h * w), w)
        rr, cc = rr.reshape(h, w), cc.reshape(h, w)
        far = np.maximum(np.maximum(rr, h - 1 - rr), np.maximum(cc, w - 1 - cc))
        return FlipSizeTable(saturated_size(m.shape), 2 * far.astype(np.int64))
    if dt is None:
        dt = chebyshev_dt(m)
    dt = np.asarray(dt, dtype=np.int64)
    top = int(dt.max())
    base = 2 * top
    flipped = np.full(m.shape, base, dtype=np.int64)

    rows, cols = np.divmod(np.arange(h * w), w)
    d_flat = dt.ravel()

    # foreground -> background
    fi = np.flatnonzero(fg)
    if fi.size:
        arg = np.flatnonzero(d_flat == top)
        reach = np.maximum(np.abs(rows[fi, None] - rows[None, arg]),
                           np.abs(cols[fi, None] - cols[None, arg])).max(axis=1)
        hit = fi[reach < top]
        if hit.size:
            delta = np.maximum(np.abs(rows[hit, None] - rows[None, :]),
                               np.abs(cols[hit, None] - cols[None, :]))
            flipped.flat[hit] = 2 * np.minimum(delta, d_flat[None, :]).max(axis=1)

    # background -> foreground
    bgi = bg.astype(np.int64)
    count = _window_sum(bgi, top)
    lone = count == 1
    if lone.any():
        rsum = _window_sum(bgi * rows.reshape(h, w), top)
        csum = _window_sum(bgi * cols.reshape(h, w), top)
        cand = np.unique(rsum[lone] * w + csum[lone])
        stack = np.broadcast_to(fg, (cand.size, h, w)).copy()
        stack.reshape(cand.size, -1)[np.arange(cand.size), cand] = True
        d_new = chebyshev_dt_stack(stack).reshape(cand.size, -1).max(axis=1)
        sizes = 2 * d_new
        full = stack.reshape(cand.size, -1).all(axis=1)
        sizes[full] = saturated_size(m.shape)
        flipped.flat[cand] = sizes
    return FlipSizeTable(base, flipped)
