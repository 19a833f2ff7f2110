"""Float32 tensor primitives for the reference CNN.

The five forward ops (conv2d, dense, relu, maxpool2d, softmax) plus the
hand-written backward passes the trainer needs. Conventions:

* activations are float32 in NCHW layout; dense activations are (N, D)
* every function is pure: inputs are never mutated, outputs are fresh
* shape problems raise DimensionError naming the offending axes
* convolution is cross-correlation with zero padding

Backward passes cover exactly what the reference CNN uses: stride-1
convolutions and non-overlapping max pooling.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError


def _as_f32(name: str, x: np.ndarray, ndim: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != ndim:
        raise DimensionError(f"{name} must have {ndim} axes, got {x.ndim}")
    return x


def _out_extent(extent: int, k: int, stride: int, padding: int, axis: str) -> int:
    span = extent + 2 * padding - k
    if span < 0:
        raise DimensionError(
            f"window {k} exceeds padded input {axis} {extent + 2 * padding}"
        )
    if span % stride != 0:
        raise DimensionError(
            f"{axis} {extent} with padding {padding}, window {k} does not tile "
            f"at stride {stride}"
        )
    return span // stride + 1


def conv2d(
    x: np.ndarray,
    kernel: np.ndarray,
    bias: np.ndarray,
    stride: int = 1,
    padding: int = 0,
) -> np.ndarray:
    """Cross-correlate (N,C,H,W) with (F,C,kh,kw) kernels, zero padding."""
    x = _as_f32("input", x, 4)
    kernel = _as_f32("kernel", kernel, 4)
    bias = _as_f32("bias", bias, 1)
    n, c, h, w = x.shape
    f, kc, kh, kw = kernel.shape
    if kc != c:
        raise DimensionError(
            f"kernel expects {kc} input channels, input has {c} (axis 1)"
        )
    if bias.shape[0] != f:
        raise DimensionError(f"bias has {bias.shape[0]} entries for {f} filters")
    if stride < 1 or padding < 0:
        raise DimensionError(f"bad stride {stride} or padding {padding}")
    ho = _out_extent(h, kh, stride, padding, "height")
    wo = _out_extent(w, kw, stride, padding, "width")
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # (n, c, ho, wo, kh, kw) x (f, c, kh, kw) -> (n, ho, wo, f)
    out = np.tensordot(win, kernel, axes=([1, 4, 5], [1, 2, 3]))
    out = np.moveaxis(out, 3, 1) + bias.reshape(1, f, 1, 1)
    assert out.shape == (n, f, ho, wo)
    return out


def conv2d_backward(
    x: np.ndarray,
    kernel: np.ndarray,
    grad_out: np.ndarray,
    padding: int = 0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of a stride-1 conv2d w.r.t. input, kernel, and bias."""
    x = _as_f32("input", x, 4)
    kernel = _as_f32("kernel", kernel, 4)
    grad_out = _as_f32("grad_out", grad_out, 4)
    f, c, kh, kw = kernel.shape
    grad_bias = grad_out.sum(axis=(0, 2, 3))
    xp = x
    if padding:
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    # (n, f, ho, wo) x (n, c, ho, wo, kh, kw) -> (f, c, kh, kw)
    grad_kernel = np.tensordot(grad_out, win, axes=([0, 2, 3], [0, 2, 3]))
    # full correlation of grad_out with the flipped, channel-swapped kernel
    flipped = kernel[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    grad_xp = conv2d(grad_out, flipped, np.zeros(c, np.float32), padding=kh - 1)
    h, w = x.shape[2], x.shape[3]
    grad_x = grad_xp[:, :, padding : padding + h, padding : padding + w]
    return np.ascontiguousarray(grad_x), grad_kernel, grad_bias


def dense(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine map (N,D) @ (D,K) + (K,)."""
    x = _as_f32("input", x, 2)
    weights = _as_f32("weights", weights, 2)
    bias = _as_f32("bias", bias, 1)
    if x.shape[1] != weights.shape[0]:
        raise DimensionError(
            f"input width {x.shape[1]} vs weight rows {weights.shape[0]} (axis 1)"
        )
    if bias.shape[0] != weights.shape[1]:
        raise DimensionError(
            f"bias has {bias.shape[0]} entries for {weights.shape[1]} outputs"
        )
    return x @ weights + bias


def dense_backward(
    x: np.ndarray, weights: np.ndarray, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of dense() w.r.t. input, weights, and bias."""
    grad_x = grad_out @ weights.T
    grad_w = x.T @ grad_out
    grad_b = grad_out.sum(axis=0)
    return grad_x, grad_w, grad_b


def relu(x: np.ndarray) -> np.ndarray:
    """Elementwise max(x, 0), any rank."""
    return np.maximum(np.asarray(x, dtype=np.float32), np.float32(0))


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Gradient of relu at the recorded input (zero where x <= 0)."""
    return np.where(x > 0, grad_out, np.float32(0))


def maxpool2d(x: np.ndarray, window: int = 2, stride: int = 2) -> np.ndarray:
    """Max over window x window patches of (N,C,H,W), stepped by stride."""
    x = _as_f32("input", x, 4)
    if window < 1 or stride < 1:
        raise DimensionError(f"bad window {window} or stride {stride}")
    n, c, h, w = x.shape
    if h < window or w < window:
        raise DimensionError(
            f"pool window {window} exceeds input {h}x{w} (axes 2, 3)"
        )
    win = sliding_window_view(x, (window, window), axis=(2, 3))[
        :, :, ::stride, ::stride
    ]
    return win.max(axis=(4, 5))


def maxpool2d_backward(
    x: np.ndarray, window: int, grad_out: np.ndarray
) -> np.ndarray:
    """Gradient of non-overlapping maxpool2d (stride == window, H,W divisible).

    Routes each window's gradient to the first occurrence of its maximum.
    """
    n, c, h, w = x.shape
    if h % window or w % window:
        raise DimensionError(
            f"pool backward needs H,W divisible by {window}, got {h}x{w}"
        )
    ho, wo = h // window, w // window
    xw = (
        x.reshape(n, c, ho, window, wo, window)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, ho, wo, window * window)
    )
    idx = xw.argmax(axis=-1)
    grad_win = np.zeros_like(xw)
    np.put_along_axis(grad_win, idx[..., None], grad_out[..., None], axis=-1)
    return (
        grad_win.reshape(n, c, ho, wo, window, window)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h, w)
    )


def flatten(x: np.ndarray) -> np.ndarray:
    """Collapse all non-batch axes: (N, ...) -> (N, D)."""
    x = np.asarray(x, dtype=np.float32)
    if x.ndim < 2:
        raise DimensionError(f"flatten needs a batch axis, got {x.ndim} axes")
    return x.reshape(x.shape[0], -1)


def softmax(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax of (N,K), stabilized by max subtraction."""
    x = _as_f32("input", x, 2)
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)
