"""Differentiable primitives with hand-derived backward passes."""

from typing import Optional

import numpy as np

from .exceptions import NonFiniteError, ShapeError
from .tensor import ArrayLike, Tensor, _result, _unbroadcast, as_tensor, sqrt


def linear(x: ArrayLike, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map ``x @ weight.T + bias`` over the last axis of ``x``."""
    x = as_tensor(x)
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear input has {x.shape[-1]} features, weight expects {weight.shape[1]}")
    flat = x.reshape(-1, x.shape[-1])
    out = flat @ weight.T
    if bias is not None:
        out = out + bias
    return out.reshape(x.shape[:-1] + (weight.shape[0],))


def softmax(logits: ArrayLike, axis: int = -1) -> Tensor:
    """
    Normalized exponential along ``axis``.

    Args:
        logits: Finite input values
        axis: Axis to normalize over

    Returns:
        Tensor of the same shape whose entries along ``axis`` sum to one

    Raises:
        NonFiniteError: If any logit is NaN or infinite
    """
    logits = as_tensor(logits)
    if not np.all(np.isfinite(logits.data)):
        raise NonFiniteError("softmax received non-finite logits")
    shifted = logits.data - logits.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (logits,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit variance, then scale and shift."""
    centered = x - x.mean(axis=-1, keepdims=True)
    variance = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / sqrt(variance + eps) * gamma + beta


def bilinear_sample(feature_map: ArrayLike, uv: ArrayLike) -> Tensor:
    """
    Sample a ``[C, H, W]`` feature map at continuous pixel coordinates.

    ``uv[..., 0]`` is the column (x) and ``uv[..., 1]`` the row (y); texel
    ``(i, j)`` sits at ``uv = (i, j)``. Corners outside ``[0, W-1] x [0, H-1]``
    contribute zero. Gradients flow to both the feature map and ``uv``.

    Args:
        feature_map: Tensor of shape ``[C, H, W]``
        uv: Coordinates of shape ``[..., 2]``

    Returns:
        Tensor of shape ``uv.shape[:-1] + (C,)``

    Raises:
        ShapeError: If the map is empty or ``uv`` does not end in 2
        NonFiniteError: If any coordinate is NaN or infinite
    """
    feature_map, uv = as_tensor(feature_map), as_tensor(uv)
    if feature_map.ndim != 3 or feature_map.size == 0:
        raise ShapeError(f"feature map must be a non-empty [C, H, W] array, got {feature_map.shape}")
    if uv.shape[-1:] != (2,):
        raise ShapeError(f"uv must end in a coordinate pair, got {uv.shape}")
    if not np.all(np.isfinite(uv.data)):
        raise NonFiniteError("bilinear_sample received non-finite coordinates")

    fmap = feature_map.data
    channels, height, width = fmap.shape
    points = uv.data.reshape(-1, 2)
    u, v = points[:, 0], points[:, 1]
    x0 = np.floor(u).astype(np.int64)
    y0 = np.floor(v).astype(np.int64)
    wx = u - x0
    wy = v - y0

    flat = fmap.reshape(channels, height * width)
    corners = []
    for dx, dy in ((0, 0), (1, 0), (0, 1), (1, 1)):
        xs, ys = x0 + dx, y0 + dy
        inside = (xs >= 0) & (xs <= width - 1) & (ys >= 0) & (ys <= height - 1)
        linear_index = np.clip(ys, 0, height - 1) * width + np.clip(xs, 0, width - 1)
        values = flat[:, linear_index].T * inside[:, None]
        corners.append((linear_index, inside, values))

    (i00, m00, f00), (i10, m10, f10), (i01, m01, f01), (i11, m11, f11) = corners
    w00 = (1.0 - wx) * (1.0 - wy)
    w10 = wx * (1.0 - wy)
    w01 = (1.0 - wx) * wy
    w11 = wx * wy
    out = (w00[:, None] * f00 + w10[:, None] * f10 + w01[:, None] * f01 + w11[:, None] * f11)

    def backward(g):
        g2 = g.reshape(-1, channels)
        grad_map = np.zeros((height * width, channels), dtype=fmap.dtype)
        for (index, inside, _), weight in zip(corners, (w00, w10, w01, w11)):
            np.add.at(grad_map, index[inside], g2[inside] * weight[inside, None])
        grad_map = grad_map.T.reshape(channels, height, width)

        du = (1.0 - wy)[:, None] * (f10 - f00) + wy[:, None] * (f11 - f01)
        dv = (1.0 - wx)[:, None] * (f01 - f00) + wx[:, None] * (f11 - f10)
        grad_uv = np.stack([(g2 * du).sum(axis=1), (g2 * dv).sum(axis=1)], axis=1)
        return grad_map, grad_uv.reshape(uv.shape)

    return _result(out.reshape(uv.shape[:-1] + (channels,)), (feature_map, uv), backward)


def conv2d(x: ArrayLike, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """
    Stride-1 "same" convolution of a ``[Cin, H, W]`` map with an odd square kernel.

    Args:
        x: Input map
        weight: Kernel of shape ``[Cout, Cin, k, k]``
        bias: Optional ``[Cout]`` offsets

    Returns:
        Tensor of shape ``[Cout, H, W]``
    """
    x = as_tensor(x)
    cout, cin, kh, kw = weight.shape
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"conv2d needs an odd square kernel, got {kh}x{kw}")
    if x.ndim != 3 or x.shape[0] != cin:
        raise ShapeError(f"conv2d input {x.shape} does not match {cin} input channels")
    _, height, width = x.shape
    pad = kh // 2
    padded = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
    w = weight.data

    out = np.zeros((cout, height * width), dtype=x.data.dtype)
    for dy in range(kh):
        for dx in range(kw):
            patch = padded[:, dy:dy + height, dx:dx + width].reshape(cin, -1)
            out += w[:, :, dy, dx] @ patch
    out = out.reshape(cout, height, width)
    if bias is not None:
        out = out + bias.data[:, None, None]

    def backward(g):
        g2 = g.reshape(cout, -1)
        grad_w = np.zeros_like(w)
        grad_padded = np.zeros_like(padded)
        for dy in range(kh):
            for dx in range(kw):
                patch = padded[:, dy:dy + height, dx:dx + width].reshape(cin, -1)
                grad_w[:, :, dy, dx] = g2 @ patch.T
                grad_padded[:, dy:dy + height, dx:dx + width] += (w[:, :, dy, dx].T @ g2).reshape(cin, height, width)
        grad_x = grad_padded[:, pad:pad + height, pad:pad + width]
        grads = [grad_x, grad_w]
        if bias is not None:
            grads.append(_unbroadcast(g.sum(axis=(1, 2)), bias.shape))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, backward)
