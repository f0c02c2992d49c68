"""Forward/backward kernels for the layers used by the autoencoder.

All arrays are float64 in NCHW layout. Every forward function has a matching
``*_backward`` that returns exact gradients; nothing here keeps state.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import NumericError, StructuralError


def _check_finite(x, what):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {what}")


def _require_4d(x, what):
    if x.ndim != 4:
        raise StructuralError(f"{what} must be 4-D (batch, channels, height, width), got shape {x.shape}")


def conv_output_size(size, kernel, stride, padding):
    return (size + 2 * padding - kernel) // stride + 1


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _im2col(xp, kh, kw, stride, out_h, out_w):
    """(B, C, Hp, Wp) -> (B*out_h*out_w, C*kh*kw) patch matrix."""
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : stride * (out_h - 1) + 1 : stride, : stride * (out_w - 1) + 1 : stride]
    b, c = xp.shape[:2]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b * out_h * out_w, c * kh * kw)


def _check_conv_args(x, w, stride, padding):
    _require_4d(x, "conv input")
    if w.ndim != 4:
        raise StructuralError(f"conv kernel must be 4-D, got shape {w.shape}")
    if w.shape[2] % 2 == 0 or w.shape[3] % 2 == 0:
        raise StructuralError(f"kernel spatial size must be odd, got {w.shape[2:]}")
    if stride < 1 or padding < 0:
        raise StructuralError(f"invalid stride={stride} / padding={padding}")


def conv2d(x, w, b=None, stride=1, padding=1):
    """Cross-correlation ``y = x * w + b``.

    ``w`` has shape (out_channels, in_channels, kh, kw).
    """
    _check_conv_args(x, w, stride, padding)
    if x.shape[1] != w.shape[1]:
        raise StructuralError(f"input has {x.shape[1]} channels, kernel expects {w.shape[1]}")
    _check_finite(x, "conv2d input")
    bsz, _, h, wd = x.shape
    cout, _, kh, kw = w.shape
    oh = conv_output_size(h, kh, stride, padding)
    ow = conv_output_size(wd, kw, stride, padding)
    if oh < 1 or ow < 1:
        raise StructuralError(f"input {h}x{wd} too small for kernel {kh}x{kw}")
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    cols = _im2col(xp, kh, kw, stride, oh, ow)
    y = cols @ w.reshape(cout, -1).T
    y = y.reshape(bsz, oh, ow, cout).transpose(0, 3, 1, 2)
    if b is not None:
        y = y + b.reshape(1, -1, 1, 1)
    return np.ascontiguousarray(y)


def conv2d_input_grad(gy, w, input_shape, stride=1, padding=1):
    """Gradient of conv2d w.r.t. its input (the transposed convolution)."""
    bsz, cin, h, wd = input_shape
    _, _, kh, kw = w.shape
    oh, ow = gy.shape[2:]
    hp, wp = h + 2 * padding, wd + 2 * padding
    gxp = np.zeros((bsz, cin, hp, wp))
    for i in range(kh):
        for j in range(kw):
            # (B, O, oh, ow) x (O, C) -> (B, oh, ow, C)
            contrib = np.tensordot(gy, w[:, :, i, j], axes=([1], [0]))
            gxp[:, :, i : i + stride * (oh - 1) + 1 : stride, j : j + stride * (ow - 1) + 1 : stride] += contrib.transpose(
                0, 3, 1, 2
            )
    if padding:
        gxp = gxp[:, :, padding : padding + h, padding : padding + wd]
    return np.ascontiguousarray(gxp)


def conv2d_weight_grad(x, gy, kernel_shape, stride=1, padding=1):
    cout, cin, kh, kw = kernel_shape
    oh, ow = gy.shape[2:]
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    cols = _im2col(xp, kh, kw, stride, oh, ow)
    gmat = gy.transpose(0, 2, 3, 1).reshape(-1, cout)
    return (gmat.T @ cols).reshape(cout, cin, kh, kw)


def conv2d_backward(gy, x, w, stride=1, padding=1):
    """Return (grad_input, grad_weight, grad_bias)."""
    gx = conv2d_input_grad(gy, w, x.shape, stride, padding)
    gw = conv2d_weight_grad(x, gy, w.shape, stride, padding)
    gb = gy.sum(axis=(0, 2, 3))
    return gx, gw, gb


def conv_transpose2d(x, w, b=None, stride=2, padding=1, output_size=None):
    """Transposed convolution, the adjoint of :func:`conv2d` with the same kernel.

    ``w`` has shape (in_channels, out_channels, kh, kw), i.e. the kernel of the
    forward convolution it transposes. ``output_size`` pins the spatial size
    so that encoder/decoder shapes round-trip; by default it is the smallest
    size the matching forward convolution maps onto ``x``.
    """
    _check_conv_args(x, w, stride, padding)
    if x.shape[1] != w.shape[0]:
        raise StructuralError(f"input has {x.shape[1]} channels, kernel expects {w.shape[0]}")
    _check_finite(x, "conv_transpose2d input")
    bsz, _, h, wd = x.shape
    _, cout, kh, kw = w.shape
    if output_size is None:
        output_size = ((h - 1) * stride - 2 * padding + kh, (wd - 1) * stride - 2 * padding + kw)
    oh, ow = output_size
    if conv_output_size(oh, kh, stride, padding) != h or conv_output_size(ow, kw, stride, padding) != wd:
        raise StructuralError(f"output size {oh}x{ow} is not reachable from {h}x{wd} with stride {stride}")
    y = conv2d_input_grad(x, w, (bsz, cout, oh, ow), stride, padding)
    if b is not None:
        y = y + b.reshape(1, -1, 1, 1)
    return y


def conv_transpose2d_backward(gy, x, w, stride=2, padding=1):
    gx = conv2d(gy, w, None, stride, padding)
    # conv2d_weight_grad with the roles of input and output swapped
    gw = conv2d_weight_grad(gy, x, w.shape, stride, padding)
    gb = gy.sum(axis=(0, 2, 3))
    return gx, gw, gb


# ---------------------------------------------------------------------------
# batch normalisation
# ---------------------------------------------------------------------------

def batchnorm2d(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Per-channel batch normalisation.

    In training mode the batch statistics are used and the running buffers are
    updated in place. Returns ``(y, cache)``; ``cache`` is ``None`` in eval mode.
    """
    _require_4d(x, "batchnorm input")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise StructuralError(f"batchnorm has {gamma.shape[0]} channels, input has {c}")
    _check_finite(x, "batchnorm input")
    if training:
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        n = x.size // c
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        unbiased = var * n / max(n - 1, 1)
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(1, -1, 1, 1)) * inv_std.reshape(1, -1, 1, 1)
    y = xhat * gamma.reshape(1, -1, 1, 1) + beta.reshape(1, -1, 1, 1)
    cache = (xhat, inv_std, gamma) if training else None
    return y, cache


def batchnorm2d_backward(gy, cache):
    """Training-mode gradient; returns (grad_input, grad_gamma, grad_beta)."""
    xhat, inv_std, gamma = cache
    ggamma = (gy * xhat).sum(axis=(0, 2, 3))
    gbeta = gy.sum(axis=(0, 2, 3))
    n = gy.size // gy.shape[1]
    gxhat = gy * gamma.reshape(1, -1, 1, 1)
    gx = (
        inv_std.reshape(1, -1, 1, 1)
        / n
        * (n * gxhat - gxhat.sum(axis=(0, 2, 3), keepdims=True) - xhat * (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True))
    )
    return gx, ggamma, gbeta


def batchnorm2d_eval_backward(gy, gamma, running_var, eps=1e-5):
    """Input gradient of the eval-mode affine map (running statistics fixed)."""
    scale = gamma / np.sqrt(running_var + eps)
    return gy * scale.reshape(1, -1, 1, 1)


# ---------------------------------------------------------------------------
# pointwise
# ---------------------------------------------------------------------------

def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(gy, x):
    return gy * (x > 0)


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(gy, y):
    return gy * y * (1.0 - y)


def softmax(x, axis=1):
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(gy, y, axis=1):
    return y * (gy - (gy * y).sum(axis=axis, keepdims=True))


def activation(x, kind):
    """Apply ``relu``, ``sigmoid`` or ``softmax_channels``."""
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "softmax_channels":
        return softmax(x, axis=1)
    raise StructuralError(f"unknown activation {kind!r}")


def activation_backward(gy, x, y, kind):
    if kind == "relu":
        return relu_backward(gy, x)
    if kind == "sigmoid":
        return sigmoid_backward(gy, y)
    if kind == "softmax_channels":
        return softmax_backward(gy, y, axis=1)
    raise StructuralError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------------------
# resampling and concatenation
# ---------------------------------------------------------------------------

def bilinear_matrix(n_in, n_out):
    """(n_out, n_in) interpolation weights, half-pixel centres (align_corners=False)."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    a = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(a, (rows, lo), 1.0 - frac)
    np.add.at(a, (rows, hi), frac)
    return a


def bilinear_upsample(x, target_h, target_w):
    _require_4d(x, "upsample input")
    h, w = x.shape[2:]
    if target_h < h or target_w < w:
        raise StructuralError(f"target {target_h}x{target_w} smaller than input {h}x{w}")
    if (target_h, target_w) == (h, w):
        return x.copy()
    ah = bilinear_matrix(h, target_h)
    aw = bilinear_matrix(w, target_w)
    return np.ascontiguousarray(np.einsum("ph,bchw,qw->bcpq", ah, x, aw, optimize=True))


def bilinear_upsample_backward(gy, input_shape):
    h, w = input_shape[2:]
    th, tw = gy.shape[2:]
    if (th, tw) == (h, w):
        return gy.copy()
    ah = bilinear_matrix(h, th)
    aw = bilinear_matrix(w, tw)
    return np.ascontiguousarray(np.einsum("ph,bcpq,qw->bchw", ah, gy, aw, optimize=True))


def concat_channels(inputs):
    if not inputs:
        raise StructuralError("nothing to concatenate")
    for t in inputs:
        _require_4d(t, "concat input")
    b, _, h, w = inputs[0].shape
    for t in inputs[1:]:
        if t.shape[0] != b or t.shape[2:] != (h, w):
            raise StructuralError(f"cannot concatenate {inputs[0].shape} with {t.shape}")
    return np.concatenate(inputs, axis=1)


def concat_channels_backward(gy, channel_counts):
    """Split a gradient back into per-input pieces."""
    bounds = np.cumsum(channel_counts)[:-1]
    return [np.ascontiguousarray(g) for g in np.split(gy, bounds, axis=1)]
