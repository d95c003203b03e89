"""Forward/backward pairs for each layer of the detector.

Every array carries a leading batch axis.  Each ``*_forward`` returns its
output and a cache; the matching ``*_backward`` takes the upstream gradient
and the cache and returns the input gradient (when requested) and a dict of
parameter gradients.
"""

from __future__ import annotations

import numpy as np


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(x, axis=-1):
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x, axis=-1):
    shifted = x - x.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def _flat(x):
    return x.reshape(-1, x.shape[-1])


def _outer_sum(g, x):
    """sum_b g[b] @ x[b].T for B x O x T and B x I x T arrays."""
    return np.matmul(g, x.transpose(0, 2, 1)).sum(axis=0)


# -- channel mixing ---------------------------------------------------------


def channel_mixing(x, w, b):
    """ReLU of a 1x1 convolution across channels: ``max(0, w x + b)``.

    x is B x C x T, w is C x C, b has length C.
    """
    if x.shape[1] != w.shape[1] or w.shape[0] != b.shape[0]:
        raise ValueError(f"mixing shapes disagree: x {x.shape}, w {w.shape}, b {b.shape}")
    pre = np.matmul(w, x) + b[:, None]
    out = np.maximum(pre, 0.0)
    return out, (x, pre > 0)


def channel_mixing_backward(dout, cache, w, need_dx=False):
    x, mask = cache
    g = dout * mask
    grads = {"w": _outer_sum(g, x), "b": g.sum(axis=(0, 2))}
    dx = np.matmul(w.T, g) if need_dx else None
    return dx, grads


# -- strided convolution + normalization + ReLU ------------------------------


def _im2col(x, stride):
    # kernel 3, padding 1
    bsz, c, t = x.shape
    t_out = t // stride
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1)))
    cols = np.stack([xp[:, :, j : j + stride * t_out : stride] for j in range(3)], axis=2)
    return cols.reshape(bsz, c * 3, t_out)


def _col2im(dcols, shape, stride):
    bsz, c, t = shape
    t_out = dcols.shape[-1]
    dcols = dcols.reshape(bsz, c, 3, t_out)
    dxp = np.zeros((bsz, c, t + 2), dtype=dcols.dtype)
    for j in range(3):
        dxp[:, :, j : j + stride * t_out : stride] += dcols[:, :, j]
    return dxp[:, :, 1:-1]


def conv_block(x, w, gamma, beta, stride=2, training=True, running=None, eps=1e-5):
    """Conv (kernel 3, padding 1) -> normalization over time -> ReLU.

    In training mode each feature map of each segment is normalized with its
    own temporal mean and variance; otherwise ``running = (mean, var)`` is
    used.  Returns ``(out, cache, (batch_mean, batch_var))``.
    """
    if x.shape[-1] % stride:
        raise ValueError(f"temporal length {x.shape[-1]} not divisible by stride {stride}")
    if x.shape[1] * 3 != w.shape[1] * w.shape[2]:
        raise ValueError(f"conv weight {w.shape} does not fit input with {x.shape[1]} channels")
    cols = _im2col(x, stride)
    z = np.matmul(w.reshape(w.shape[0], -1), cols)
    if training:
        mean = z.mean(axis=2, keepdims=True)
        var = z.var(axis=2, keepdims=True)
    else:
        mean = running[0][None, :, None]
        var = running[1][None, :, None]
    inv_std = 1.0 / np.sqrt(var + eps)
    zhat = (z - mean) * inv_std
    pre = gamma[:, None] * zhat + beta[:, None]
    out = np.maximum(pre, 0.0)
    cache = (x.shape, cols, zhat, inv_std, pre > 0, stride, training)
    return out, cache, (mean[..., 0], var[..., 0])


def conv_block_backward(dout, cache, w, gamma, need_dx=True):
    shape, cols, zhat, inv_std, mask, stride, training = cache
    g = dout * mask
    grads = {"gamma": (g * zhat).sum(axis=(0, 2)), "beta": g.sum(axis=(0, 2))}
    dzhat = g * gamma[:, None]
    if training:
        n = zhat.shape[2]
        dz = inv_std / n * (
            n * dzhat - dzhat.sum(axis=2, keepdims=True) - zhat * (dzhat * zhat).sum(axis=2, keepdims=True)
        )
    else:
        dz = dzhat * inv_std
    w2 = w.reshape(w.shape[0], -1)
    grads["w"] = _outer_sum(dz, cols).reshape(w.shape)
    dx = _col2im(np.matmul(w2.T, dz), shape, stride) if need_dx else None
    return dx, grads


# -- bidirectional GRU -------------------------------------------------------


def _gru_scan(x, wz, bz, wh, bh):
    """One direction over B x T x F input; gates stacked as (update, reset, new).

    Per-step quantities are stored time-major (T x B x ...).
    """
    bsz, t_len, _ = x.shape
    n_h = wh.shape[1]
    x = np.ascontiguousarray(x.transpose(1, 0, 2))
    xp = x @ wz.T
    xp += bz
    hs = np.empty((t_len + 1, bsz, n_h), dtype=x.dtype)
    hs[0] = 0.0
    ur_all = np.empty((t_len, bsz, 2 * n_h), dtype=x.dtype)
    n_all = np.empty((t_len, bsz, n_h), dtype=x.dtype)
    hpn_all = np.empty_like(n_all)
    wh_t = wh.T
    for t in range(t_len):
        h = hs[t]
        hp = h @ wh_t
        hp += bh
        a = xp[t]
        ur = ur_all[t]
        np.add(a[:, : 2 * n_h], hp[:, : 2 * n_h], out=ur)
        ur *= 0.5
        np.tanh(ur, out=ur)
        ur += 1.0
        ur *= 0.5
        u = ur[:, :n_h]
        hpn = hpn_all[t]
        hpn[...] = hp[:, 2 * n_h :]
        n = n_all[t]
        np.multiply(ur[:, n_h:], hpn, out=n)
        n += a[:, 2 * n_h :]
        np.tanh(n, out=n)
        # h_t = n + u * (h_{t-1} - n)
        nxt = hs[t + 1]
        np.subtract(h, n, out=nxt)
        nxt *= u
        nxt += n
    if not np.all(np.isfinite(hs[-1])):
        raise FloatingPointError("non-finite GRU activations")
    return hs[1:].transpose(1, 0, 2), (x, hs, ur_all, n_all, hpn_all)


def _gru_scan_backward(dhs, cache, wz, wh):
    x, hs, ur_all, n_all, hpn_all = cache
    bsz, t_len, n_h = dhs.shape
    dhs = np.ascontiguousarray(dhs.transpose(1, 0, 2))
    da_all = np.empty((t_len, bsz, 3 * n_h), dtype=dhs.dtype)
    dhp_all = np.empty_like(da_all)
    dh = np.zeros((bsz, n_h), dtype=dhs.dtype)
    for t in range(t_len - 1, -1, -1):
        dh += dhs[t]
        ur, n, hpn = ur_all[t], n_all[t], hpn_all[t]
        u, r = ur[:, :n_h], ur[:, n_h:]
        da = da_all[t]
        dan = da[:, 2 * n_h :]
        np.multiply(dh, 1.0 - u, out=dan)
        dan *= 1.0 - n * n
        da[:, :n_h] = dh * (hs[t] - n)
        da[:, n_h : 2 * n_h] = dan * hpn
        da[:, : 2 * n_h] *= ur * (1.0 - ur)
        dhp = dhp_all[t]
        dhp[:, : 2 * n_h] = da[:, : 2 * n_h]
        np.multiply(dan, r, out=dhp[:, 2 * n_h :])
        dh = dh * u + dhp @ wh
    grads = {
        "wz": _flat(da_all).T @ _flat(x),
        "bz": da_all.sum(axis=(0, 1)),
        "wh": _flat(dhp_all).T @ _flat(hs[:-1]),
        "bh": dhp_all.sum(axis=(0, 1)),
    }
    return (da_all @ wz).transpose(1, 0, 2), grads


def bgru_forward(z, fwd, bwd):
    """Bidirectional GRU with zero initial state.

    z is B x T x F; ``fwd``/``bwd`` map ``wz, bz, wh, bh`` to arrays with
    ``wz`` of shape 3n_h x F and ``wh`` 3n_h x n_h.  Returns B x T x 2n_h,
    forward half first.
    """
    hf, cf = _gru_scan(z, fwd["wz"], fwd["bz"], fwd["wh"], fwd["bh"])
    hb, cb = _gru_scan(z[:, ::-1], bwd["wz"], bwd["bz"], bwd["wh"], bwd["bh"])
    return np.concatenate([hf, hb[:, ::-1]], axis=2), (cf, cb)


def bgru_backward(dh, cache, fwd, bwd):
    cf, cb = cache
    n_h = fwd["wh"].shape[1]
    dzf, gf = _gru_scan_backward(np.ascontiguousarray(dh[:, :, :n_h]), cf, fwd["wz"], fwd["wh"])
    dzb, gb = _gru_scan_backward(np.ascontiguousarray(dh[:, ::-1, n_h:]), cb, bwd["wz"], bwd["wh"])
    return dzf + dzb[:, ::-1], gf, gb


# -- additive attention --------------------------------------------------------


def additive_attention(h, wu, wa):
    """Per-class context vectors by softmax-over-time pooling.

    h is B x T x D.  Returns context ``c`` (B x D x K) and weights ``alpha``
    (B x T x K), each alpha column summing to one over time.
    """
    a = np.tanh(h @ wu)
    alpha = softmax(a @ wa, axis=1)
    c = np.matmul(h.transpose(0, 2, 1), alpha)
    return c, alpha, (h, a, alpha)


def additive_attention_backward(dc, cache, wu, wa):
    h, a, alpha = cache
    dalpha = np.matmul(h, dc)
    dh = np.matmul(alpha, dc.transpose(0, 2, 1))
    de = alpha * (dalpha - (alpha * dalpha).sum(axis=1, keepdims=True))
    grads = {"wa": _flat(a).T @ _flat(de)}
    dpre = (de @ wa.T) * (1.0 - a * a)
    grads["wu"] = _flat(h).T @ _flat(dpre)
    dh += dpre @ wu.T
    return dh, grads


# -- classification / localization heads --------------------------------------


def dense_heads(c, w_clf, b_clf, w_loc, b_loc, n_windows):
    """Affine maps from the flattened context (B x D*K) to logits and offsets."""
    bsz, _, k = c.shape
    flat = c.reshape(bsz, -1)
    s = (flat @ w_clf + b_clf).reshape(bsz, n_windows, k)
    y = (flat @ w_loc + b_loc).reshape(bsz, n_windows, 2)
    return s, y, flat


def dense_heads_backward(ds, dy, flat, c_shape, w_clf, w_loc):
    bsz = ds.shape[0]
    ds2, dy2 = ds.reshape(bsz, -1), dy.reshape(bsz, -1)
    grads = {"clf.w": flat.T @ ds2, "clf.b": ds2.sum(0), "loc.w": flat.T @ dy2, "loc.b": dy2.sum(0)}
    dflat = ds2 @ w_clf.T + dy2 @ w_loc.T
    return dflat.reshape(c_shape), grads


def depthwise_heads(c, blocks, slices, n_windows):
    """Windows of class k read only context column k.

    ``blocks[k]`` holds ``(w_clf, b_clf, w_loc, b_loc)`` with ``w_clf`` of
    shape D x (N_k*K); ``slices[k]`` is the window range of class k.
    """
    bsz, _, k_all = c.shape
    s = np.zeros((bsz, n_windows, k_all), dtype=c.dtype)
    y = np.zeros((bsz, n_windows, 2), dtype=c.dtype)
    for k, (w_clf, b_clf, w_loc, b_loc) in blocks.items():
        sl = slices[k]
        n_k = sl.stop - sl.start
        col = c[:, :, k]
        s[:, sl] = (col @ w_clf + b_clf).reshape(bsz, n_k, k_all)
        y[:, sl] = (col @ w_loc + b_loc).reshape(bsz, n_k, 2)
    return s, y


def depthwise_heads_backward(ds, dy, c, blocks, slices):
    bsz = c.shape[0]
    dc = np.zeros_like(c)
    grads = {}
    for k, (w_clf, _, w_loc, _) in blocks.items():
        sl = slices[k]
        ds_k = ds[:, sl].reshape(bsz, -1)
        dy_k = dy[:, sl].reshape(bsz, -1)
        col = c[:, :, k]
        grads[k] = {"clf.w": col.T @ ds_k, "clf.b": ds_k.sum(0), "loc.w": col.T @ dy_k, "loc.b": dy_k.sum(0)}
        dc[:, :, k] = ds_k @ w_clf.T + dy_k @ w_loc.T
    return dc, grads
