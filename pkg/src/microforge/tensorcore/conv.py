"""Convolution primitives (im2col-based) and the fractionally-strided variant.

`conv2d` is cross-correlation: no kernel flip, summed over input channels.
Its two backward rules close over the same primitive set:

* input cotangent  = conv of the zero-inserted output cotangent with the
  spatially flipped, channel-swapped kernel;
* kernel cotangent = `conv2d_wgrad`, a batched correlation of input and
  output cotangent.

`deconv2d` is zero-insertion upsampling followed by a padded convolution, so
its gradient support falls out of the composition.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import NonIntegralOutput, ShapeMismatch
from .core import (
    Tensor,
    _apply,
    as_tensor,
    flip_hw,
    narrow,
    pad2d,
    swap01,
    zero_insert,
)


def _check_conv_args(x, k, stride, pad):
    if x.ndim != 4:
        raise ShapeMismatch(f"conv2d input must be (b, c, h, w), got {x.shape}")
    if k.ndim != 4 or k.shape[2] != k.shape[3]:
        raise ShapeMismatch(f"conv2d kernel must be (o, c, s, s), got {k.shape}")
    if x.shape[1] != k.shape[1]:
        raise ShapeMismatch(f"channel mismatch: input {x.shape[1]}, kernel {k.shape[1]}")
    if stride < 1 or pad < 0:
        raise ShapeMismatch(f"invalid stride {stride} or pad {pad}")
    s = k.shape[2]
    for extent in (x.shape[2], x.shape[3]):
        if (extent + 2 * pad - s) % stride != 0 or extent + 2 * pad < s:
            raise NonIntegralOutput(
                f"size {extent} with kernel {s}, stride {stride}, pad {pad} "
                "does not map to an integral output extent"
            )


def _im2col(x: np.ndarray, s: int, stride: int, pad: int):
    """Return (cols, out_h, out_w); cols is (b*out_h*out_w, s*s*c).

    Works channels-last internally: the window gather then copies contiguous
    s*c-float chunks instead of scattered scalars, which is the difference
    between memory-bandwidth speed and a pathological 6-D gather.
    """
    b, c, h, w = x.shape
    if pad:
        xt = np.zeros((b, h + 2 * pad, w + 2 * pad, c), dtype=x.dtype)
        xt[:, pad : pad + h, pad : pad + w] = x.transpose(0, 2, 3, 1)
    else:
        xt = np.ascontiguousarray(x.transpose(0, 2, 3, 1))
    windows = sliding_window_view(xt, (s, s), axis=(1, 2))[:, ::stride, ::stride]
    out_h, out_w = windows.shape[1], windows.shape[2]
    # (b, oh, ow, c, s, s) -> (b, oh, ow, s, s, c); innermost c is contiguous
    cols = np.ascontiguousarray(windows.transpose(0, 1, 2, 4, 5, 3))
    return cols.reshape(b * out_h * out_w, s * s * c), out_h, out_w


def _kernel_mat(k: np.ndarray) -> np.ndarray:
    """(o, c, s, s) -> (o, s*s*c) matching the im2col column order."""
    o, c, s, _ = k.shape
    return np.ascontiguousarray(k.transpose(0, 2, 3, 1)).reshape(o, s * s * c)


def _conv2d_raw(x: np.ndarray, k: np.ndarray, stride: int, pad: int) -> np.ndarray:
    b = x.shape[0]
    o, c, s, _ = k.shape
    cols, out_h, out_w = _im2col(x, s, stride, pad)
    out = cols @ _kernel_mat(k).T
    return np.ascontiguousarray(out.reshape(b, out_h, out_w, o).transpose(0, 3, 1, 2))


def _wgrad_raw(x: np.ndarray, gy: np.ndarray, stride: int, pad: int, s: int) -> np.ndarray:
    b, c = x.shape[0], x.shape[1]
    o = gy.shape[1]
    cols, out_h, out_w = _im2col(x, s, stride, pad)
    gmat = np.ascontiguousarray(gy.transpose(0, 2, 3, 1)).reshape(b * out_h * out_w, o)
    gk = (gmat.T @ cols).reshape(o, s, s, c)
    return np.ascontiguousarray(gk.transpose(0, 3, 1, 2))


def _input_grad(gy, k, stride: int, pad: int, in_h: int, in_w: int):
    """Cotangent w.r.t. the conv input, expressed with traced primitives."""
    s = k.shape[2]
    g = zero_insert(gy, stride)
    g = conv2d(g, swap01(flip_hw(k)), stride=1, pad=s - 1)
    if pad:
        g = narrow(g, 2, pad, in_h)
        g = narrow(g, 3, pad, in_w)
    return g


def conv2d(x, k, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of (b, c, h, w) input with an (o, c, s, s) kernel."""
    x, k = as_tensor(x), as_tensor(k)
    _check_conv_args(x, k, stride, pad)
    data = _conv2d_raw(x.data, k.data, stride, pad)
    s = k.shape[2]
    in_h, in_w = x.shape[2], x.shape[3]
    return _apply(
        "conv2d", data, (x, k),
        (
            lambda g: _input_grad(g, k, stride, pad, in_h, in_w),
            lambda g: conv2d_wgrad(x, g, stride, pad, s),
        ),
    )


def conv2d_wgrad(x, gy, stride: int, pad: int, s: int) -> Tensor:
    """Kernel-shaped correlation of a conv input with an output cotangent."""
    x, gy = as_tensor(x), as_tensor(gy)
    data = _wgrad_raw(x.data, gy.data, stride, pad, s)
    in_h, in_w = x.shape[2], x.shape[3]
    return _apply(
        "conv2d_wgrad", data, (x, gy),
        (
            lambda g: _input_grad(gy, g, stride, pad, in_h, in_w),
            lambda g: conv2d(x, g, stride, pad),
        ),
    )


def deconv2d(x, k, stride: int = 1) -> Tensor:
    """Fractionally-strided convolution: zero-insertion upsampling followed
    by a padded convolution.  Kernel layout is (c_in, c_out, s, s); the
    output extents are exactly `stride` times the input extents.
    """
    x, k = as_tensor(x), as_tensor(k)
    if x.ndim != 4:
        raise ShapeMismatch(f"deconv2d input must be (b, c, h, w), got {x.shape}")
    if k.ndim != 4 or k.shape[2] != k.shape[3]:
        raise ShapeMismatch(f"deconv2d kernel must be (c_in, c_out, s, s), got {k.shape}")
    if x.shape[1] != k.shape[0]:
        raise ShapeMismatch(f"channel mismatch: input {x.shape[1]}, kernel {k.shape[0]}")
    if stride not in (1, 2):
        raise ShapeMismatch(f"deconv2d stride must be 1 or 2, got {stride}")
    s = k.shape[2]
    up = zero_insert(x, stride)
    before = (s - 1) // 2
    after = s + stride - 2 - before
    up = pad2d(up, (before, after, before, after))
    return conv2d(up, swap01(k), stride=1, pad=0)
