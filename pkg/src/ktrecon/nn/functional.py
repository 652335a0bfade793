"""Differentiable kernels on ``(B, C, T, H, W)`` feature volumes.

Convolutions act on the spatial axes only (temporal kernel extent 1), which
is what lets the network treat frames and pixels as separable batch axes.
"""
import numpy as np

from ..errors import OddSpatialDim, ShapeMismatch
from .tensor import as_tensor, make_result

# Largest attention-score block materialised at once (elements).
ATTENTION_BLOCK = 1 << 22


def _check5(x, op):
    if x.ndim != 5:
        raise ShapeMismatch(f"{op} expects a (B, C, T, H, W) tensor, got shape {x.shape}")


def _windows(xp, k, s):
    """Strided ``k x k`` patches over the last two axes, as a copy-free view."""
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(-2, -1))
    return win[..., ::s, ::s, :, :]


def _im2col(x, k, s, p):
    B, C, T, H, W = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (0, 0), (p, p), (p, p))) if p else x
    win = _windows(xp, k, s)  # B, C, T, Ho, Wo, k, k
    Ho, Wo = win.shape[3], win.shape[4]
    cols = win.transpose(0, 2, 3, 4, 1, 5, 6).reshape(B * T * Ho * Wo, C * k * k)
    return cols, Ho, Wo


def _col2im(dcols, shape, k, s, p, Ho, Wo):
    """Adjoint of :func:`_im2col`; ``dcols`` is ``(B*T*Ho*Wo, C*k*k)``."""
    B, C, T, H, W = shape
    d = dcols.reshape(B, T, Ho, Wo, C, k, k)
    out = np.zeros((B, T, H + 2 * p, W + 2 * p, C))
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + s * (Ho - 1) + 1:s, j:j + s * (Wo - 1) + 1:s, :] += d[..., i, j]
    out = out.transpose(0, 4, 1, 2, 3)
    if p:
        out = out[:, :, :, p:p + H, p:p + W]
    return np.ascontiguousarray(out)


def _conv_forward(x, w2, k, s, p):
    cols, Ho, Wo = _im2col(x, k, s, p)
    return cols @ w2.T, cols, Ho, Wo


def conv2d_spatial(x, weight, bias=None, stride=1, padding=1):
    """Cross-correlation over (H, W) with weight ``(Cout, Cin, 1, k, k)``."""
    x, weight = as_tensor(x), as_tensor(weight)
    _check5(x, "conv")
    Cout, Cin, kt, k, k2 = weight.shape
    if kt != 1 or k != k2 or Cin != x.shape[1]:
        raise ShapeMismatch(f"weight {weight.shape} incompatible with input {x.shape}")
    B, _, T, H, W = x.shape
    w2 = weight.data.reshape(Cout, Cin * k * k)
    y, cols, Ho, Wo = _conv_forward(x.data, w2, k, stride, padding)
    if bias is not None:
        y = y + bias.data
    out = y.reshape(B, T, Ho, Wo, Cout).transpose(0, 4, 1, 2, 3)
    out = np.ascontiguousarray(out)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gm = g.transpose(0, 2, 3, 4, 1).reshape(-1, Cout)
        gx = gw = gb = None
        if x.requires_grad:
            gx = _col2im(gm @ w2, x.shape, k, stride, padding, Ho, Wo)
        if weight.requires_grad:
            gw = (gm.T @ cols).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = gm.sum(axis=0)
        return (gx, gw) if bias is None else (gx, gw, gb)

    return make_result(out, parents, backward)


def conv_spatial(x, weight, bias=None):
    """1x3x3 convolution, zero padding 0x1x1, stride 1: shape preserving."""
    if weight.shape[-2:] != (3, 3):
        raise ShapeMismatch(f"conv_spatial needs a 1x3x3 kernel, got {weight.shape}")
    return conv2d_spatial(x, weight, bias, stride=1, padding=1)


def conv_down(x, weight, bias=None):
    """1x4x4 convolution with stride 2 and padding 1: halves H and W."""
    if x.shape[-1] % 2 or x.shape[-2] % 2:
        raise OddSpatialDim(f"conv_down needs even H and W, got {x.shape[-2:]}")
    if weight.shape[-2:] != (4, 4):
        raise ShapeMismatch(f"conv_down needs a 1x4x4 kernel, got {weight.shape}")
    return conv2d_spatial(x, weight, bias, stride=2, padding=1)


def conv_up(x, weight, bias=None, stride=2, padding=1):
    """Transposed 1x4x4 convolution with stride 2 and padding 1: doubles H and W.

    ``weight`` is ``(Cin, Cout, 1, k, k)``; this is the adjoint of the
    strided convolution with the same kernel.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    _check5(x, "conv_up")
    Cin, Cout, kt, k, _ = weight.shape
    if kt != 1 or Cin != x.shape[1]:
        raise ShapeMismatch(f"weight {weight.shape} incompatible with input {x.shape}")
    B, _, T, H, W = x.shape
    Hout = (H - 1) * stride + k - 2 * padding
    Wout = (W - 1) * stride + k - 2 * padding
    w2 = weight.data.reshape(Cin, Cout * k * k)
    xm = x.data.transpose(0, 2, 3, 4, 1).reshape(-1, Cin)
    out = _col2im(xm @ w2, (B, Cout, T, Hout, Wout), k, stride, padding, H, W)
    if bias is not None:
        out = out + bias.data[None, :, None, None, None]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gcols, _, _ = _im2col(g, k, stride, padding)
        gx = gw = gb = None
        if x.requires_grad:
            gx = (gcols @ w2.T).reshape(B, T, H, W, Cin).transpose(0, 4, 1, 2, 3)
            gx = np.ascontiguousarray(gx)
        if weight.requires_grad:
            gw = (xm.T @ gcols).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3, 4))
        return (gx, gw) if bias is None else (gx, gw, gb)

    return make_result(out, parents, backward)


def conv_pointwise(x, weight, bias=None):
    """1x1x1 convolution (channel mixing) with weight ``(Cout, Cin, 1, 1, 1)``."""
    x, weight = as_tensor(x), as_tensor(weight)
    _check5(x, "conv_pointwise")
    Cout, Cin = weight.shape[:2]
    if Cin != x.shape[1]:
        raise ShapeMismatch(f"weight {weight.shape} incompatible with input {x.shape}")
    w2 = weight.data.reshape(Cout, Cin)
    out = np.einsum("oc,bcthw->bothw", w2, x.data, optimize=True)
    if bias is not None:
        out = out + bias.data[None, :, None, None, None]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gx = gw = gb = None
        if x.requires_grad:
            gx = np.einsum("oc,bothw->bcthw", w2, g, optimize=True)
        if weight.requires_grad:
            gw = np.einsum("bothw,bcthw->oc", g, x.data, optimize=True).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3, 4))
        return (gx, gw) if bias is None else (gx, gw, gb)

    return make_result(out, parents, backward)


def group_norm(x, gamma, beta, groups, eps=1e-5):
    """Group normalization over (channels in group, T, H, W)."""
    x = as_tensor(x)
    _check5(x, "group_norm")
    B, C = x.shape[:2]
    if C % groups:
        raise ShapeMismatch(f"{C} channels cannot be split into {groups} groups")
    xg = x.data.reshape(B, groups, -1)
    n = xg.shape[-1]
    mu = xg.mean(axis=-1, keepdims=True)
    xc = xg - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xc * inv).reshape(x.shape)
    shape = (1, C, 1, 1, 1)
    out = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)

    def backward(g):
        ggamma = (g * xhat).sum(axis=(0, 2, 3, 4))
        gbeta = g.sum(axis=(0, 2, 3, 4))
        gx = None
        if x.requires_grad:
            dxhat = (g * gamma.data.reshape(shape)).reshape(B, groups, -1)
            xh = xhat.reshape(B, groups, -1)
            gx = inv / n * (n * dxhat - dxhat.sum(-1, keepdims=True)
                            - xh * (dxhat * xh).sum(-1, keepdims=True))
            gx = gx.reshape(x.shape)
        return gx, ggamma, gbeta

    return make_result(out, (x, gamma, beta), backward)


def softmax(x, axis=-1):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_result(y, (x,), backward)


def attention_weights(q, k):
    """Softmax attention matrix for ``(..., S, d)`` query and key arrays."""
    s = (q @ np.swapaxes(k, -1, -2)) / np.sqrt(q.shape[-1])
    s -= s.max(axis=-1, keepdims=True)
    np.exp(s, out=s)
    s /= s.sum(axis=-1, keepdims=True)
    return s


def _block_rows(n, h, S):
    return max(1, min(n, ATTENTION_BLOCK // max(1, h * S * S)))


def scaled_dot_product_attention(q, k, v):
    """Softmax(Q K^T / sqrt(d)) V on ``(N, heads, S, d)`` tensors.

    Score matrices are formed in blocks over ``N`` and recomputed during the
    backward pass instead of being stored.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if not (q.shape == k.shape and q.shape[:-1] == v.shape[:-1]):
        raise ShapeMismatch(f"q {q.shape}, k {k.shape}, v {v.shape} are incompatible")
    N, h, S, d = q.shape
    step = _block_rows(N, h, S)
    scale = 1.0 / np.sqrt(d)
    out = np.empty(v.shape)
    for i in range(0, N, step):
        sl = slice(i, i + step)
        out[sl] = attention_weights(q.data[sl], k.data[sl]) @ v.data[sl]

    def backward(g):
        gq, gk, gv = np.empty(q.shape), np.empty(k.shape), np.empty(v.shape)
        for i in range(0, N, step):
            sl = slice(i, i + step)
            a = attention_weights(q.data[sl], k.data[sl])
            gv[sl] = np.swapaxes(a, -1, -2) @ g[sl]
            da = g[sl] @ np.swapaxes(v.data[sl], -1, -2)
            da -= (da * a).sum(axis=-1, keepdims=True)
            da *= a
            da *= scale
            gq[sl] = da @ k.data[sl]
            gk[sl] = np.swapaxes(da, -1, -2) @ q.data[sl]
        return gq, gk, gv

    return make_result(out, (q, k, v), backward)


def linear(x, weight, bias=None):
    """``x @ weight + bias`` over the last axis; weight is ``(D_in, D_out)``."""
    out = x @ weight
    return out if bias is None else out + bias
