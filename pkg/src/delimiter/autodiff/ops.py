"""Layers used by the de-limiter networks, each with a hand-written backward.

All activations are laid out ``[batch, channel, time]``.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, as_tensor


class ShapeError(ValueError):
    """Incompatible tensor shapes for a layer."""


def _as3d(x: Tensor) -> Tensor:
    if x.ndim == 2:
        shape = x.shape
        return Tensor(x.data[np.newaxis], parents=(x,), backward_fn=lambda g: (g.reshape(shape),))
    if x.ndim != 3:
        raise ShapeError(f"expected [C, T] or [B, C, T], got {x.shape}")
    return x


def conv_output_length(t: int, kernel: int, stride=1, dilation=1, padding=(0, 0)) -> int:
    pl, pr = (padding, padding) if np.isscalar(padding) else padding
    return (t + pl + pr - dilation * (kernel - 1) - 1) // stride + 1


def _taps(xp, kernel, stride, dilation, t_out):
    """Strided views xp[..., k*d : k*d + s*(t_out-1) + 1 : s] for every tap k."""
    span = stride * (t_out - 1) + 1
    return [xp[..., k * dilation:k * dilation + span:stride] for k in range(kernel)]


def conv1d(x, weight, bias=None, stride=1, dilation=1, padding=0, groups=1) -> Tensor:
    """Cross-correlation. ``weight`` is ``[C_out, C_in // groups, K]``."""
    x, weight = _as3d(as_tensor(x)), as_tensor(weight)
    bias = None if bias is None else as_tensor(bias)
    b, c_in, t = x.shape
    c_out, c_per_group, kernel = weight.shape
    pl, pr = (padding, padding) if np.isscalar(padding) else padding
    if c_in % groups or c_out % groups or c_per_group != c_in // groups:
        raise ShapeError(f"conv1d: input channels {c_in}, weight {weight.shape}, groups {groups}")
    t_out = conv_output_length(t, kernel, stride, dilation, (pl, pr))
    if t_out < 1:
        raise ShapeError(f"conv1d: input length {t} too short for kernel {kernel}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pl, pr))) if pl or pr else x.data
    w = weight.data
    depthwise = groups == c_in and c_out == c_in and groups > 1
    pointwise = kernel == 1 and stride == 1 and groups == 1

    if pointwise:
        out = np.matmul(w[:, :, 0], xp[..., :t_out])
    elif depthwise:
        out = np.zeros((b, c_out, t_out))
        for k, tap in enumerate(_taps(xp, kernel, stride, dilation, t_out)):
            out += w[np.newaxis, :, 0, k, np.newaxis] * tap
    elif groups == 1:
        cols = np.stack(_taps(xp, kernel, stride, dilation, t_out), axis=-1)  # [B, C, T', K]
        cols = cols.transpose(0, 2, 1, 3).reshape(b, t_out, c_in * kernel)
        out = np.matmul(cols, w.reshape(c_out, -1).T).transpose(0, 2, 1)
    else:
        out = np.zeros((b, c_out, t_out))
        co_g = c_out // groups
        for gi in range(groups):
            xs = xp[:, gi * c_per_group:(gi + 1) * c_per_group]
            for k, tap in enumerate(_taps(xs, kernel, stride, dilation, t_out)):
                out[:, gi * co_g:(gi + 1) * co_g] += np.matmul(w[gi * co_g:(gi + 1) * co_g, :, k], tap)
    if bias is not None:
        out = out + bias.data[np.newaxis, :, np.newaxis]

    def backward(g):
        gx = np.zeros_like(xp)
        gw = np.zeros_like(w)
        if pointwise:
            gw[:, :, 0] = np.tensordot(g, xp[..., :t_out], axes=([0, 2], [0, 2]))
            gx[..., :t_out] = np.matmul(w[:, :, 0].T, g)
        elif depthwise:
            span = stride * (t_out - 1) + 1
            for k in range(kernel):
                sl = slice(k * dilation, k * dilation + span, stride)
                gw[:, 0, k] = (g * xp[..., sl]).sum(axis=(0, 2))
                gx[..., sl] += w[np.newaxis, :, 0, k, np.newaxis] * g
        elif groups == 1:
            taps = np.stack(_taps(xp, kernel, stride, dilation, t_out), axis=-1)
            gt = g.transpose(0, 2, 1).reshape(-1, c_out)                      # [B*T', O]
            cols2 = taps.transpose(0, 2, 1, 3).reshape(-1, c_in * kernel)     # [B*T', C*K]
            gw[:] = (gt.T @ cols2).reshape(w.shape)
            gcols = (gt @ w.reshape(c_out, -1)).reshape(b, t_out, c_in, kernel)
            span = stride * (t_out - 1) + 1
            for k in range(kernel):
                gx[..., k * dilation:k * dilation + span:stride] += gcols[..., k].transpose(0, 2, 1)
        else:
            co_g = c_out // groups
            span = stride * (t_out - 1) + 1
            for gi in range(groups):
                rows = slice(gi * co_g, (gi + 1) * co_g)
                chans = slice(gi * c_per_group, (gi + 1) * c_per_group)
                for k in range(kernel):
                    sl = slice(k * dilation, k * dilation + span, stride)
                    gw[rows, :, k] = np.tensordot(g[:, rows], xp[:, chans, sl], axes=([0, 2], [0, 2]))
                    gx[:, chans, sl] += np.matmul(w[rows, :, k].T, g[:, rows])
        gx = gx[..., pl:pl + t]
        gb = g.sum(axis=(0, 2)) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) + ((bias,) if bias is not None else ())
    return Tensor(out, parents=parents, backward_fn=backward)


def conv1d_transposed(x, weight, bias=None, stride=1) -> Tensor:
    """Overlap-add synthesis. ``weight`` is ``[C_in, C_out, K]``; output length ``(F-1)*stride + K``."""
    x, weight = _as3d(as_tensor(x)), as_tensor(weight)
    bias = None if bias is None else as_tensor(bias)
    b, c_in, frames = x.shape
    wc_in, c_out, kernel = weight.shape
    if wc_in != c_in:
        raise ShapeError(f"conv1d_transposed: input channels {c_in} vs weight {weight.shape}")
    t_out = (frames - 1) * stride + kernel
    w2 = weight.data.reshape(c_in, c_out * kernel)
    xt = x.data.transpose(0, 2, 1)                                  # [B, F, C_in]
    pieces = np.matmul(xt, w2).reshape(b, frames, c_out, kernel)
    out = np.zeros((b, c_out, t_out))
    span = stride * (frames - 1) + 1
    for k in range(kernel):
        out[..., k:k + span:stride] += pieces[..., k].transpose(0, 2, 1)
    if bias is not None:
        out += bias.data[np.newaxis, :, np.newaxis]

    def backward(g):
        gp = np.stack([g[..., k:k + span:stride] for k in range(kernel)], axis=-1)  # [B, O, F, K]
        gp = gp.transpose(0, 2, 1, 3).reshape(b, frames, c_out * kernel)
        gx = np.matmul(gp, w2.T).transpose(0, 2, 1)
        gw = np.tensordot(xt, gp, axes=([0, 1], [0, 1])).reshape(weight.shape)
        gb = g.sum(axis=(0, 2)) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) + ((bias,) if bias is not None else ())
    return Tensor(out, parents=parents, backward_fn=backward)


# -- activations ------------------------------------------------------------

_SIGMOID_LO = np.finfo(np.float64).tiny
_SIGMOID_HI = 1.0 - 2.0**-53


def relu(x) -> Tensor:
    x = as_tensor(x)
    on = x.data > 0
    return Tensor(np.where(on, x.data, 0.0), parents=(x,), backward_fn=lambda g: (g * on,))


def prelu(x, slope) -> Tensor:
    """``max(0, x) + slope * min(0, x)``; ``slope`` broadcasts against ``x``."""
    x, slope = as_tensor(x), as_tensor(slope)
    neg = x.data < 0
    if slope.data.size == 1:
        a = slope.data.reshape(())
    else:
        a = slope.data.reshape(1, -1, 1)
    out = np.where(neg, a * x.data, x.data)

    def backward(g):
        gx = np.where(neg, a * g, g)
        gs = np.where(neg, g * x.data, 0.0)
        if slope.data.size == 1:
            gs = np.array(gs.sum()).reshape(slope.shape)
        else:
            gs = gs.sum(axis=(0, 2)).reshape(slope.shape)
        return gx, gs

    return Tensor(out, parents=(x, slope), backward_fn=backward)


def sigmoid(x) -> Tensor:
    """Logistic function, clamped so outputs stay strictly inside (0, 1)."""
    x = as_tensor(x)
    s = np.clip(0.5 * (1.0 + np.tanh(0.5 * x.data)), _SIGMOID_LO, _SIGMOID_HI)
    return Tensor(s, parents=(x,), backward_fn=lambda g: (g * s * (1.0 - s),))


# -- normalisation -----------------------------------------------------------

NORM_KINDS = ("gln", "ln", "bn", "fgln")
_NORM_AXES = {"gln": (1, 2), "fgln": (2,), "ln": (1,), "bn": (0, 2)}
NORM_EPS = 1e-8


class RunningStats:
    """Per-channel running mean/variance for batch normalisation."""

    def __init__(self, channels, momentum=0.1):
        self.mean = np.zeros(channels)
        self.var = np.ones(channels)
        self.momentum = momentum


def normalize(kind, x, gain, bias, running: RunningStats | None = None, training=True, eps=NORM_EPS) -> Tensor:
    """Standardise ``x`` over the axes selected by ``kind`` then apply a per-channel affine.

    gln: all (channel, time) positions of each example; fgln: time, per
    channel and example; ln: channels, per time step; bn: (batch, time) per
    channel, with running statistics used when ``training`` is false.
    """
    kind = kind.lower()
    if kind not in _NORM_AXES:
        raise ValueError(f"unknown norm kind {kind!r}; expected one of {NORM_KINDS}")
    x, gain, bias = _as3d(as_tensor(x)), as_tensor(gain), as_tensor(bias)
    if gain.shape[-1] != x.shape[1] or bias.shape[-1] != x.shape[1]:
        raise ShapeError(f"norm: {x.shape[1]} channels vs gain {gain.shape}")
    axes = _NORM_AXES[kind]
    gm = gain.data.reshape(1, -1, 1)
    bm = bias.data.reshape(1, -1, 1)

    frozen = kind == "bn" and not training
    if frozen:
        if running is None:
            raise ValueError("batch norm inference needs running statistics")
        mean = running.mean.reshape(1, -1, 1)
        var = running.var.reshape(1, -1, 1)
    else:
        mean = x.data.mean(axis=axes, keepdims=True)
        var = ((x.data - mean) ** 2).mean(axis=axes, keepdims=True)
        if kind == "bn" and running is not None:
            m = running.momentum
            running.mean = (1 - m) * running.mean + m * mean.reshape(-1)
            running.var = (1 - m) * running.var + m * var.reshape(-1)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv
    out = gm * xhat + bm

    def backward(g):
        ggain = (g * xhat).sum(axis=(0, 2)).reshape(gain.shape)
        gbias = g.sum(axis=(0, 2)).reshape(bias.shape)
        dxhat = g * gm
        if frozen:
            gx = dxhat * inv
        else:
            gx = inv * (
                dxhat
                - dxhat.mean(axis=axes, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True)
            )
        return gx, ggain, gbias

    return Tensor(out, parents=(x, gain, bias), backward_fn=backward)


# -- objective ---------------------------------------------------------------

def neg_si_sdr(estimate, reference, cap_db=100.0) -> Tensor:
    """Batch mean of -SI-SDR, each example flattened over (channel, time).

    Examples whose SI-SDR reaches ``cap_db`` contribute ``-cap_db`` and no
    gradient.
    """
    est = _as3d(as_tensor(estimate))
    ref = np.asarray(reference.data if isinstance(reference, Tensor) else reference, dtype=np.float64)
    if ref.ndim == 2:
        ref = ref[np.newaxis]
    if ref.shape != est.shape:
        raise ShapeError(f"loss: estimate {est.shape} vs reference {ref.shape}")
    bsz = est.shape[0]
    e = est.data.reshape(bsz, -1)
    s = ref.reshape(bsz, -1)
    ss = np.einsum("bi,bi->b", s, s)
    if np.any(ss == 0):
        raise ValueError("SI-SDR loss undefined for an all-zero reference")
    es = np.einsum("bi,bi->b", e, s)
    alpha = (es / ss)[:, None]
    proj = es**2 / ss                               # ||alpha s||^2
    noise = alpha * s - e
    resid = np.einsum("bi,bi->b", noise, noise)
    with np.errstate(divide="ignore"):
        value = 10.0 * np.log10(proj / resid)
    value = np.where(resid == 0, np.inf, value)
    capped = value >= cap_db
    value = np.minimum(value, cap_db)
    loss = -value.mean()
    scale = 10.0 / np.log(10.0)

    def backward(g):
        safe_proj = np.where(capped, 1.0, proj)[:, None]
        safe_resid = np.where(capped, 1.0, resid)[:, None]
        d_proj = 2.0 * alpha * s
        d_resid = -2.0 * noise
        dvalue = scale * (d_proj / safe_proj - d_resid / safe_resid)
        dvalue[capped] = 0.0
        return (((-g / bsz) * dvalue).reshape(est.shape),)

    return Tensor(loss, parents=(est,), backward_fn=backward)
