"""A small reverse-mode differentiation engine over numpy arrays.

Only the operations needed by the segmentation network are provided:
2-D convolution (zero padding, optional stride), ReLU, addition, nearest
neighbour 2x upsampling and a summed BCE-with-logits loss. Tensors carry
float64 data laid out as (N, C, H, W).
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_backward", "name")

    def __init__(self, data, parents=(), name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def __add__(self, other):
        return add(self, other)

    def backward(self, seed=None):
        """Propagate ``seed`` (default ones, for scalar losses) to every ancestor.

        Passing a per-element seed injects an upstream gradient directly, e.g.
        an estimated loss gradient with respect to network logits.
        """
        order, seen = [], set()

        def visit(t):
            if id(t) in seen:
                return
            seen.add(id(t))
            for p in t._parents:
                visit(p)
            order.append(t)

        visit(self)
        for t in order:
            t.grad = None
        seed = np.ones_like(self.data) if seed is None else np.asarray(seed, dtype=np.float64)
        if seed.shape != self.data.shape:
            raise ValueError(f"seed shape {seed.shape} does not match {self.data.shape}")
        self.grad = seed.copy()
        for t in reversed(order):
            if t._backward is not None and t.grad is not None:
                t._backward(t.grad)


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data, (a, b))

    def backward(g):
        a._accumulate(g)
        b._accumulate(g)
    out._backward = backward
    return out


def relu(x: Tensor) -> Tensor:
    on = x.data > 0
    out = Tensor(np.where(on, x.data, 0.0), (x,))
    out._backward = lambda g: x._accumulate(g * on)
    return out


def upsample2x(x: Tensor) -> Tensor:
    out = Tensor(x.data.repeat(2, axis=2).repeat(2, axis=3), (x,))

    def backward(g):
        n, c, h, w = x.data.shape
        x._accumulate(g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)))
    out._backward = backward
    return out


def _im2col(xp, kh, kw, stride, ho, wo):
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    n, c = xp.shape[:2]
    # (N, C, Ho, Wo, kh, kw) -> (N, C*kh*kw, Ho*Wo)
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(n, c * kh * kw, ho * wo)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1) -> Tensor:
    """Zero-padded 'same' convolution (odd kernels); stride 2 halves H and W.

    Images are processed one at a time so a sample's output does not depend on
    what else is in the batch.
    """
    n, c, h, wd = x.data.shape
    cout, cin, kh, kw = w.data.shape
    if cin != c:
        raise ValueError(f"conv expects {cin} input channels, got {c}")
    ph, pw = kh // 2, kw // 2
    ho = (h + 2 * ph - kh) // stride + 1
    wo = (wd + 2 * pw - kw) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    wm = w.data.reshape(cout, -1)
    out_data = np.empty((n, cout, ho * wo))
    for i in range(n):
        out_data[i] = wm @ cols[i]
    if b is not None:
        out_data += b.data[None, :, None]
    parents = (x, w) if b is None else (x, w, b)
    out = Tensor(out_data.reshape(n, cout, ho, wo), parents)

    def backward(g):
        g = g.reshape(n, cout, ho * wo)
        gw = np.zeros_like(wm)
        dcols = np.empty_like(cols)
        for i in range(n):
            gw += g[i] @ cols[i].T
            dcols[i] = wm.T @ g[i]
        w._accumulate(gw.reshape(w.data.shape))
        if b is not None:
            b._accumulate(g.sum(axis=(0, 2)))
        dcols = dcols.reshape(n, c, kh, kw, ho, wo)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, i, j]
        x._accumulate(dxp[:, :, ph:ph + h, pw:pw + wd])
    out._backward = backward
    return out


def bce_with_logits_sum(logits: Tensor, target01: np.ndarray) -> Tensor:
    """Scalar sum of ``a (1 - t) + log(1 + exp(-a))`` over all elements."""
    a = logits.data
    t = np.asarray(target01, dtype=np.float64)
    value = np.sum(a * (1.0 - t) + np.logaddexp(0.0, -a))
    out = Tensor(value, (logits,))
    out._backward = lambda g: logits._accumulate(g * (expit(a) - t))
    return out
