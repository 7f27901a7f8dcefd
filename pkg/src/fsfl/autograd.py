"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Tensors hold contiguous float64 data. Every operation that receives at least
one ``requires_grad`` input records a backward closure, so calling
``backward()`` on a scalar loss fills the ``grad`` buffer of every leaf.
The graph is rebuilt on every forward pass (define-by-run).
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import as_strided


class Tensor:
    """A float64 array plus an optional gradient buffer and graph linkage."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = None

    def accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Backpropagate from a scalar; fills ``grad`` on requires_grad leaves."""
        if self.data.size != 1:
            raise ValueError(
                f"backward() requires a scalar, got shape {self.data.shape}"
            )
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _node(data: np.ndarray, parents: tuple, backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back onto ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def assert_finite(x, what: str = "tensor"):
    """Raise on NaN/Inf; non-finite values are an error state, not data."""
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values detected in {what}")
    return x


# ---------------------------------------------------------------------------
# elementwise / linear algebra
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.shape))

    return _node(out_data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise multiply with numpy broadcasting (covers filter scaling)."""
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.shape))

    return _node(out_data, (a, b), backward)


def dense(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map: (B, N) x (M, N)^T -> (B, M), plus optional bias (M,)."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(
            f"dense shape mismatch: input {x.shape} vs weight {weight.shape}"
        )
    out_data = x.data @ weight.data.T
    if bias is not None:
        out_data = out_data + bias.data

    def backward(g):
        if x.requires_grad:
            x.accumulate(g @ weight.data)
        if weight.requires_grad:
            weight.accumulate(g.T @ x.data)
        if bias is not None and bias.requires_grad:
            bias.accumulate(g.sum(axis=0))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _node(out_data, parents, backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out_data = np.where(mask, x.data, 0.0)

    def backward(g):
        if x.requires_grad:
            x.accumulate(g * mask)

    return _node(out_data, (x,), backward)


def flatten(x: Tensor) -> Tensor:
    """Collapse all but the batch dimension."""
    shape = x.shape
    out_data = x.data.reshape(shape[0], -1)

    def backward(g):
        if x.requires_grad:
            x.accumulate(g.reshape(shape))

    return _node(out_data, (x,), backward)


def tensor_sum(x: Tensor) -> Tensor:
    out_data = np.array(x.data.sum())

    def backward(g):
        if x.requires_grad:
            x.accumulate(np.broadcast_to(g, x.shape).astype(np.float64))

    return _node(out_data, (x,), backward)


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar projection sum(x * weights); weights are constants."""
    w = np.asarray(weights, dtype=np.float64)
    out_data = np.array((x.data * w).sum())

    def backward(g):
        if x.requires_grad:
            x.accumulate(g * w)

    return _node(out_data, (x,), backward)


# ---------------------------------------------------------------------------
# convolution / pooling
# ---------------------------------------------------------------------------

def _conv_windows(xp: np.ndarray, kh: int, kw: int, stride: int,
                  oh: int, ow: int) -> np.ndarray:
    b, c = xp.shape[0], xp.shape[1]
    s0, s1, s2, s3 = xp.strides
    return as_strided(
        xp,
        shape=(b, c, oh, ow, kh, kw),
        strides=(s0, s1, s2 * stride, s3 * stride, s2, s3),
        writeable=False,
    )


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution, NCHW input, (M, C, KH, KW) filters."""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ValueError(
            f"conv2d expects 4-D input/filters, got {x.shape} and {weight.shape}"
        )
    b, c, h, w = x.shape
    m, cf, kh, kw = weight.shape
    if c != cf:
        raise ValueError(
            f"conv2d channel mismatch: input {x.shape} vs filter {weight.shape}"
        )
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ValueError(
            f"conv2d output would be empty: input {x.shape}, kernel {kh}x{kw}, "
            f"stride {stride}, padding {padding}"
        )

    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    win = _conv_windows(xp, kh, kw, stride, oh, ow)
    # (B,OH,OW,M) <- (B,C,OH,OW,KH,KW) . (M,C,KH,KW)
    out_data = np.tensordot(win, weight.data, axes=([1, 4, 5], [1, 2, 3]))
    out_data = np.ascontiguousarray(out_data.transpose(0, 3, 1, 2))
    if bias is not None:
        out_data += bias.data[None, :, None, None]

    def backward(g):
        if weight.requires_grad:
            # (M,C,KH,KW) <- (B,M,OH,OW) . (B,C,OH,OW,KH,KW)
            dw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
            weight.accumulate(dw)
        if bias is not None and bias.requires_grad:
            bias.accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            # (B,OH,OW,C,KH,KW) <- (B,M,OH,OW) . (M,C,KH,KW)
            dcols = np.tensordot(g, weight.data, axes=([1], [0]))
            dcols = dcols.transpose(0, 3, 4, 5, 1, 2)  # (B,C,KH,KW,OH,OW)
            hp, wp = h + 2 * padding, w + 2 * padding
            dxp = np.zeros((b, c, hp, wp))
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + stride * oh:stride,
                        j:j + stride * ow:stride] += dcols[:, :, i, j]
            if padding:
                dxp = dxp[:, :, padding:hp - padding, padding:wp - padding]
            x.accumulate(dxp)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _node(out_data, parents, backward)


def max_pool2d(x: Tensor, kernel: int = 2) -> Tensor:
    """Non-overlapping max pooling (stride == kernel); dims must divide."""
    b, c, h, w = x.shape
    if h % kernel or w % kernel:
        raise ValueError(
            f"max_pool2d: spatial dims {h}x{w} not divisible by kernel {kernel}"
        )
    oh, ow = h // kernel, w // kernel
    patches = x.data.reshape(b, c, oh, kernel, ow, kernel)
    patches = patches.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, oh, ow, kernel * kernel)
    idx = patches.argmax(axis=-1)
    out_data = np.take_along_axis(patches, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        if x.requires_grad:
            dpatch = np.zeros((b, c, oh, ow, kernel * kernel))
            np.put_along_axis(dpatch, idx[..., None], g[..., None], axis=-1)
            dx = dpatch.reshape(b, c, oh, ow, kernel, kernel)
            dx = dx.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)
            x.accumulate(dx)

    return _node(out_data, (x,), backward)


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

def batch_norm2d(x: Tensor, gamma: Tensor, beta: Tensor,
                 running_mean: np.ndarray, running_var: np.ndarray,
                 training: bool, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over (B, H, W).

    In training mode the batch statistics (population variance) normalize the
    input and the gradient flows through them; in eval mode the running
    buffers act as constants. Running-buffer maintenance is the caller's job.
    """
    if training:
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
    else:
        mu, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None, None]) * inv_std[None, :, None, None]
    out_data = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backward(g):
        if gamma.requires_grad:
            gamma.accumulate((g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            beta.accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gscaled = g * gamma.data[None, :, None, None]
            if training:
                n = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
                s1 = gscaled.sum(axis=(0, 2, 3), keepdims=True)
                s2 = (gscaled * xhat).sum(axis=(0, 2, 3), keepdims=True)
                dx = (gscaled - s1 / n - xhat * s2 / n) * inv_std[None, :, None, None]
            else:
                dx = gscaled * inv_std[None, :, None, None]
            x.accumulate(dx)

    return _node(out_data, (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy over the batch; labels are class indices."""
    y = np.asarray(labels)
    b, k = logits.shape
    if y.shape != (b,):
        raise ValueError(f"labels shape {y.shape} does not match batch {b}")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    logsumexp = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    out_data = np.array((logsumexp - z[np.arange(b), y]).mean())

    def backward(g):
        if logits.requires_grad:
            probs = np.exp(z - zmax)
            probs /= probs.sum(axis=1, keepdims=True)
            probs[np.arange(b), y] -= 1.0
            logits.accumulate(g * probs / b)

    return _node(out_data, (logits,), backward)
