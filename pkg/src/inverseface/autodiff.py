"""Minimal dense-tensor reverse-mode differentiation.

Just enough ops for a small convolutional regressor: conv2d, affine, relu
and reshape.  Values are numpy arrays (float32 for training; tests may build
float64 graphs for finite-difference checks).  Backward propagates through a
topologically sorted tape; gradients accumulate into .grad.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self, seed) -> None:
        """Reverse sweep seeding d(output)/d(self) = seed."""
        seed = np.asarray(seed, dtype=self.data.dtype)
        if seed.shape != self.data.shape:
            raise ValueError("seed gradient shape mismatch")
        topo: list[Tensor] = []
        visited = set()

        def visit(node):
            if id(node) in visited or not node.requires_grad:
                return
            visited.add(id(node))
            for p in node._parents:
                visit(p)
            topo.append(node)

        visit(self)
        self._accumulate(seed)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def relu(x: Tensor) -> Tensor:
    active = x.data > 0

    def backward(grad):
        if x.requires_grad:
            x._accumulate(grad * active)

    return Tensor(x.data * active, parents=(x,), backward=backward)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.data.shape

    def backward(grad):
        if x.requires_grad:
            x._accumulate(grad.reshape(old))

    return Tensor(x.data.reshape(shape), parents=(x,), backward=backward)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x (B, I) @ w (I, O) + b (O,)"""

    def backward(grad):
        if w.requires_grad:
            w._accumulate(x.data.T @ grad)
        if b.requires_grad:
            b._accumulate(grad.sum(axis=0))
        if x.requires_grad:
            x._accumulate(grad @ w.data.T)

    return Tensor(x.data @ w.data + b.data, parents=(x, w, b), backward=backward)


def _conv_geometry(h, w, k, stride):
    return (h - k) // stride + 1, (w - k) // stride + 1


def _offset_slices(k, stride, ho, wo):
    for ky in range(k):
        for kx in range(k):
            yield (slice(ky, ky + (ho - 1) * stride + 1, stride),
                   slice(kx, kx + (wo - 1) * stride + 1, stride))


def _im2col(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    """(B, C, H, W) -> (B, C*k*k, Ho*Wo) patch matrix, one strided slice per
    kernel offset (avoids gather copies)."""
    bsz, c, h, w = x.shape
    ho, wo = _conv_geometry(h, w, k, stride)
    cols = np.empty((bsz, c, k * k, ho, wo), dtype=x.dtype)
    for o, (sy, sx) in enumerate(_offset_slices(k, stride, ho, wo)):
        cols[:, :, o] = x[:, :, sy, sx]
    return cols.reshape(bsz, c * k * k, ho * wo)


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int) -> Tensor:
    """Valid (unpadded) strided convolution.

    x: (B, C, H, W); w: (O, C, k, k); b: (O,).  Returns (B, O, Ho, Wo).
    """
    bsz, c, h, wdt = x.data.shape
    o, c2, k, k2 = w.data.shape
    if c != c2 or k != k2:
        raise ValueError("kernel shape does not match input channels")
    ho, wo = _conv_geometry(h, wdt, k, stride)
    cols = _im2col(x.data, k, stride)                    # (B, C*k*k, P)
    wmat = w.data.reshape(o, c * k * k)
    out = np.matmul(wmat, cols)                          # (B, O, P)
    out += b.data[:, None]
    out = out.reshape(bsz, o, ho, wo)

    def backward(grad):
        gmat = grad.reshape(bsz, o, ho * wo)
        if w.requires_grad:
            dw = np.matmul(gmat, cols.transpose(0, 2, 1)).sum(axis=0)
            w._accumulate(dw.reshape(o, c, k, k))
        if b.requires_grad:
            b._accumulate(gmat.sum(axis=(0, 2)))
        if x.requires_grad:
            dcols = np.matmul(wmat.T, gmat)              # (B, C*k*k, P)
            dcols = dcols.reshape(bsz, c, k * k, ho, wo)
            dx = np.zeros_like(x.data)
            for oi, (sy, sx) in enumerate(_offset_slices(k, stride, ho, wo)):
                dx[:, :, sy, sx] += dcols[:, :, oi]
            x._accumulate(dx)

    return Tensor(out, parents=(x, w, b), backward=backward)
