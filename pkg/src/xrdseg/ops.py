"""Differentiable operations on 4-D ``(N, C, H, W)`` tensors.

Convolutions are lowered to a single matrix product through an im2col
gather (``sliding_window_view``), which keeps the accumulation order fixed
for a given shape so repeated runs are bit-reproducible.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError, NumericError, ShapeError
from .tensor import Tensor, as_tensor, is_grad_enabled, make_result

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _require_4d(x: Tensor, what: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{what} must be 4-D (N, C, H, W), got shape {x.shape}",
                         dim="ndim", expected=4, got=x.ndim)


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Gather sliding windows into a ``(C*kh*kw, N*Ho*Wo)`` column matrix.

    Channel-major columns keep the innermost copy along contiguous image
    rows, which is several times faster than a pixel-major layout.
    """
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, ho, wo = win.shape[:4]
    return win.transpose(1, 4, 5, 0, 2, 3).reshape(c * kh * kw, n * ho * wo)


def _from_cnhw(m: np.ndarray, c: int, n: int, h: int, w: int) -> np.ndarray:
    return np.ascontiguousarray(m.reshape(c, n, h, w).transpose(1, 0, 2, 3))


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``weight`` has shape ``(Cout, Cin, kh, kw)``; output spatial extent is
    ``(H + 2*padding - kh) // stride + 1``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    _require_4d(x, "conv2d input")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d weight must be 4-D, got {weight.shape}",
                         dim="weight.ndim", expected=4, got=weight.ndim)
    if stride < 1 or padding < 0:
        raise ShapeError(f"invalid stride={stride} / padding={padding}", dim="stride")
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise ShapeError(f"conv2d: weight expects Cin={wcin}, input has C={cin}",
                         dim="Cin", expected=wcin, got=cin)
    if kh > h + 2 * padding:
        raise ShapeError(f"conv2d: kernel height {kh} exceeds padded input height {h + 2 * padding}",
                         dim="H", expected=kh, got=h + 2 * padding)
    if kw > w + 2 * padding:
        raise ShapeError(f"conv2d: kernel width {kw} exceeds padded input width {w + 2 * padding}",
                         dim="W", expected=kw, got=w + 2 * padding)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise ShapeError(f"conv2d: bias shape {bias.shape} != ({cout},)",
                             dim="Cout", expected=cout, got=bias.shape)

    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    cols = _im2col(x.data, kh, kw, stride, padding)
    wmat = weight.data.reshape(cout, -1)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = _from_cnhw(out, cout, n, ho, wo)

    def backward(g: np.ndarray):
        gc = g.transpose(1, 0, 2, 3).reshape(cout, -1)
        dx = dw = db = None
        if x.requires_grad and stride == 1 and padding <= min(kh, kw) - 1:
            # full correlation of the output gradient with the flipped, channel-swapped kernel
            wflip = weight.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(cin, -1)
            gp = np.pad(g, ((0, 0), (0, 0), (kh - 1 - padding, kh - 1 - padding),
                            (kw - 1 - padding, kw - 1 - padding)))
            dx = _from_cnhw(wflip @ _im2col(gp, kh, kw, 1, 0), cin, n, h, w)
        elif x.requires_grad:
            dcols = (wmat.T @ gc).reshape(cin, kh, kw, n, ho, wo)
            dxp = np.zeros((n, cin, h + 2 * padding, w + 2 * padding), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                        dcols[:, i, j].transpose(1, 0, 2, 3)
            dx = dxp[:, :, padding:padding + h, padding:padding + w] if padding else dxp
        if weight.requires_grad:
            dw = (gc @ cols.T).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            db = gc.sum(axis=1)
        return dx, dw, db

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward)


def conv2d_transposed(x: Tensor, weight: Tensor, bias: Tensor | None = None,
                      stride: int = 2) -> Tensor:
    """Transposed convolution with a 2x2 kernel and stride 2 (spatial doubling).

    ``weight`` has shape ``(Cin, Cout, 2, 2)``.  Each input pixel scatters a
    2x2 block, so windows never overlap and the op is the exact adjoint of a
    stride-2, 2x2 ``conv2d``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    _require_4d(x, "conv2d_transposed input")
    if weight.ndim != 4 or weight.shape[2:] != (2, 2) or stride != 2:
        raise ShapeError(f"conv2d_transposed supports only (Cin, Cout, 2, 2) kernels with stride 2, "
                         f"got weight {weight.shape}, stride {stride}", dim="kernel")
    n, cin, h, w = x.shape
    wcin, cout = weight.shape[:2]
    if wcin != cin:
        raise ShapeError(f"conv2d_transposed: weight expects Cin={wcin}, input has C={cin}",
                         dim="Cin", expected=wcin, got=cin)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise ShapeError(f"conv2d_transposed: bias shape {bias.shape} != ({cout},)",
                             dim="Cout", expected=cout, got=bias.shape)

    xm = x.data.transpose(0, 2, 3, 1).reshape(-1, cin)
    wmat = weight.data.reshape(cin, cout * 4)
    blocks = (xm @ wmat).reshape(n, h, w, cout, 2, 2)
    out = blocks.transpose(0, 3, 1, 4, 2, 5).reshape(n, cout, 2 * h, 2 * w)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def backward(g: np.ndarray):
        gb = g.reshape(n, cout, h, 2, w, 2).transpose(0, 2, 4, 1, 3, 5).reshape(-1, cout * 4)
        dx = dw = db = None
        if x.requires_grad:
            dx = np.ascontiguousarray((gb @ wmat.T).reshape(n, h, w, cin).transpose(0, 3, 1, 2))
        if weight.requires_grad:
            dw = (xm.T @ gb).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            db = g.sum(axis=(0, 2, 3))
        return dx, dw, db

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2.

    Ties route the gradient to the first element of the window in row-major
    order.
    """
    x = as_tensor(x)
    _require_4d(x, "maxpool2 input")
    n, c, h, w = x.shape
    if h % 2:
        raise ShapeError(f"maxpool2 needs even height, got H={h}", dim="H", expected="even", got=h)
    if w % 2:
        raise ShapeError(f"maxpool2 needs even width, got W={w}", dim="W", expected="even", got=w)
    win = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(g: np.ndarray):
        gw = np.zeros((n, c, h // 2, w // 2, 4), dtype=g.dtype)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        dx = gw.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (dx,)

    return make_result(np.ascontiguousarray(out), (x,), backward)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.dtype, copy=False)
    return make_result(out, (x,), lambda g: (g * mask,))


def concat(tensors: list[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along ``axis`` (channels by default)."""
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        for d in range(len(ref)):
            if d != axis and t.shape[d] != ref[d]:
                raise ShapeError(f"concat: shapes {ref} and {t.shape} differ on axis {d}",
                                 dim=f"axis{d}", expected=ref[d], got=t.shape[d])
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g: np.ndarray):
        return np.split(g, splits, axis=axis)

    return make_result(out, tensors, backward)


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor,
                running_mean: np.ndarray, running_var: np.ndarray,
                training: bool, momentum: float = BN_MOMENTUM, eps: float = BN_EPS) -> Tensor:
    """Per-channel batch normalization with affine transform.

    In training mode the batch statistics are used and ``running_mean`` /
    ``running_var`` are updated in place (running variance uses the
    unbiased estimate).  In eval mode the running statistics are used.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    _require_4d(x, "batchnorm2d input")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm2d: gamma/beta must have shape ({c},)", dim="C",
                         expected=c, got=(gamma.shape, beta.shape))
    g_ = gamma.data[None, :, None, None]
    b_ = beta.data[None, :, None, None]

    if training:
        m = n * h * w
        if m < 2:
            raise ShapeError("batchnorm2d in train mode needs N*H*W >= 2", dim="N*H*W",
                             expected=">=2", got=m)
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var * (m / (m - 1))
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
        out = g_ * xhat + b_

        def backward(g: np.ndarray):
            dgamma = (g * xhat).sum(axis=(0, 2, 3))
            dbeta = g.sum(axis=(0, 2, 3))
            dx = None
            if x.requires_grad:
                dxhat = g * g_
                dx = (inv_std[None, :, None, None] / m) * (
                    m * dxhat
                    - dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
                    - xhat * (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
                )
            return dx, dgamma, dbeta
    else:
        inv_std = 1.0 / np.sqrt(running_var + eps)
        xhat = (x.data - running_mean[None, :, None, None]) * inv_std[None, :, None, None]
        out = g_ * xhat + b_

        def backward(g: np.ndarray):
            dx = g * (g_ * inv_std[None, :, None, None]) if x.requires_grad else None
            return dx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return make_result(out.astype(x.dtype, copy=False), (x, gamma, beta), backward)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean per-pixel cross-entropy of a softmax over the channel axis.

    ``labels`` is an integer map of shape ``(N, H, W)`` with values in
    ``[0, C)``; for the segmentation network C is 2.
    """
    logits = as_tensor(logits)
    _require_4d(logits, "logits")
    n, c, h, w = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n, h, w):
        raise ShapeError(f"labels shape {labels.shape} != {(n, h, w)}", dim="labels",
                         expected=(n, h, w), got=labels.shape)
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        bad = labels[(labels < 0) | (labels >= c)].ravel()[0]
        raise DataError(f"label value {bad} outside [0, {c})")
    labels = labels.astype(np.intp, copy=False)

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    picked = np.take_along_axis(z, labels[:, None], axis=1)[:, 0]
    count = n * h * w
    loss = np.asarray((lse - picked).sum() / count, dtype=logits.dtype)
    if not np.isfinite(loss):
        raise NumericError("cross-entropy loss is not finite (diverging weights or non-finite input)")

    def backward(g: np.ndarray):
        p = np.exp(z - lse[:, None])
        np.put_along_axis(p, labels[:, None], np.take_along_axis(p, labels[:, None], axis=1) - 1, axis=1)
        return (p * (g / count),)

    return make_result(loss, (logits,), backward)


def argmax_classes(logits: np.ndarray) -> np.ndarray:
    """Per-pixel class index; ties resolve to the lower class."""
    return np.argmax(logits, axis=1)


__all__ = [
    "conv2d", "conv2d_transposed", "maxpool2", "relu", "concat", "batchnorm2d",
    "softmax_cross_entropy", "argmax_classes", "is_grad_enabled", "BN_EPS", "BN_MOMENTUM",
]
