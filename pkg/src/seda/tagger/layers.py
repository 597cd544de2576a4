"""Forward/backward pairs for the grid tagger, in plain numpy.

Each ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
takes the upstream gradient and the cache and returns input and parameter
gradients.  Arrays are float64 throughout.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf, ndtr

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

# signed log-scale distance buckets: 0, ±1, ±2, ±3, ±4-7, ±8-15, ±16-31, ±32-63, ±64+
_MAGNITUDE_EDGES = np.array([1, 2, 3, 4, 8, 16, 32, 64])
N_DISTANCE_BUCKETS = 2 * len(_MAGNITUDE_EDGES) + 1


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    return ndtr(x) + x * np.exp(-0.5 * x * x) * _INV_SQRT_2PI


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def distance_buckets(n: int) -> np.ndarray:
    """Bucket id of the signed distance ``j - i`` for every cell ``(i, j)``."""
    idx = np.arange(n)
    dist = idx[None, :] - idx[:, None]
    magnitude = np.searchsorted(_MAGNITUDE_EDGES, np.abs(dist), side="right")
    return len(_MAGNITUDE_EDGES) + np.sign(dist) * magnitude


def region_ids(n: int) -> np.ndarray:
    """0 for the upper triangle (i < j), 1 for the diagonal and lower triangle."""
    idx = np.arange(n)
    return (idx[:, None] >= idx[None, :]).astype(np.int64)


def linear_forward(x, W, b):
    return x @ W + b, x


def linear_backward(dy, x, W):
    d_in, d_out = W.shape
    dW = x.reshape(-1, d_in).T @ dy.reshape(-1, d_out)
    db = dy.reshape(-1, d_out).sum(axis=0)
    return dy @ W.T, dW, db


def lstm_forward(x, Wx, Wh, b, reverse=False):
    """One LSTM direction over a sequence ``x`` of shape (N, d_in).

    Gate order in the stacked weights: input, forget, output, candidate.
    """
    n = x.shape[0]
    k = Wh.shape[0]
    xw = x @ Wx + b
    h = np.zeros(k)
    c = np.zeros(k)
    out = np.zeros((n, k))
    steps = []
    order = range(n - 1, -1, -1) if reverse else range(n)
    for t in order:
        z = xw[t] + h @ Wh
        i = sigmoid(z[:k])
        f = sigmoid(z[k : 2 * k])
        o = sigmoid(z[2 * k : 3 * k])
        g = np.tanh(z[3 * k :])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        steps.append((t, h, c, i, f, o, g, tc))
        h = o * tc
        c = c_new
        out[t] = h
    return out, (x, steps)


def lstm_backward(dout, cache, Wx, Wh):
    x, steps = cache
    k = Wh.shape[0]
    dxw = np.zeros((x.shape[0], 4 * k))
    dWh = np.zeros_like(Wh)
    dh_next = np.zeros(k)
    dc_next = np.zeros(k)
    for t, h_prev, c_prev, i, f, o, g, tc in reversed(steps):
        dh = dout[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = np.concatenate(
            [
                dc * g * i * (1.0 - i),
                dc * c_prev * f * (1.0 - f),
                dh * tc * o * (1.0 - o),
                dc * i * (1.0 - g * g),
            ]
        )
        dxw[t] = dz
        dWh += np.outer(h_prev, dz)
        dh_next = dz @ Wh.T
        dc_next = dc * f
    dWx = x.T @ dxw
    db = dxw.sum(axis=0)
    return dxw @ Wx.T, dWx, dWh, db


def standardize(h, eps):
    """Per-row standardization over elements; sigma below ``eps`` is clamped."""
    mu = h.mean(axis=-1, keepdims=True)
    centered = h - mu
    sigma = np.sqrt((centered * centered).mean(axis=-1, keepdims=True))
    clamped = sigma < eps
    sigma = np.where(clamped, eps, sigma)
    core = centered / sigma
    return core, (core, sigma, clamped)


def standardize_backward(dcore, cache):
    core, sigma, clamped = cache
    mean_d = dcore.mean(axis=-1, keepdims=True)
    mean_dc = (dcore * core).mean(axis=-1, keepdims=True)
    # a clamped sigma is a constant, so only the centering is differentiated
    mean_dc = np.where(clamped, 0.0, mean_dc)
    return (dcore - mean_d - core * mean_dc) / sigma


def cln_forward(H, Wg, bg, Wl, bl, eps=1e-6):
    """Conditional layer norm over all pairs: ``V[i, j] = gamma_i * core_j + lambda_i``.

    ``core_j`` standardizes ``h_j`` over its elements; gain and bias are
    affine in ``h_i``.
    """
    core, norm_cache = standardize(H, eps)
    gamma = H @ Wg + bg
    lam = H @ Wl + bl
    V = gamma[:, None, :] * core[None, :, :] + lam[:, None, :]
    return V, (H, core, gamma, norm_cache)


def cln_backward(dV, cache, Wg, Wl):
    H, core, gamma, norm_cache = cache
    dgamma = np.einsum("ijd,jd->id", dV, core)
    dlam = dV.sum(axis=1)
    dcore = np.einsum("ijd,id->jd", dV, gamma)
    dH = standardize_backward(dcore, norm_cache)
    dH += dgamma @ Wg.T + dlam @ Wl.T
    return dH, H.T @ dgamma, dgamma.sum(axis=0), H.T @ dlam, dlam.sum(axis=0)


def dconv_forward(C, K, kb, dilation):
    """3x3 dilated convolution over an (N, N, c_in) grid, zero padded to keep N x N."""
    n = C.shape[0]
    d = dilation
    P = np.pad(C, ((d, d), (d, d), (0, 0)))
    out = np.broadcast_to(kb, (n, n, K.shape[-1])).copy()
    for a in range(3):
        for b in range(3):
            out += P[a * d : a * d + n, b * d : b * d + n] @ K[a, b]
    return out, P


def dconv_backward(dout, P, K, dilation):
    n = dout.shape[0]
    d = dilation
    dP = np.zeros_like(P)
    dK = np.zeros_like(K)
    c_in = P.shape[-1]
    flat_out = dout.reshape(-1, dout.shape[-1])
    for a in range(3):
        for b in range(3):
            window = P[a * d : a * d + n, b * d : b * d + n]
            dK[a, b] = window.reshape(-1, c_in).T @ flat_out
            dP[a * d : a * d + n, b * d : b * d + n] += dout @ K[a, b].T
    return dP[d : d + n, d : d + n], dK, flat_out.sum(axis=0)


def biaffine_forward(s, o, U, W, b):
    """``y[i, j] = s_i^T U o_j + W [s_i; o_j] + b`` with U of shape (d, T, d)."""
    db = s.shape[1]
    sU = np.einsum("ia,akb->ikb", s, U)
    y = np.einsum("ikb,jb->ijk", sU, o)
    y += (s @ W[:db])[:, None, :] + (o @ W[db:])[None, :, :] + b
    return y, (s, o, sU)


def biaffine_backward(dy, cache, U, W):
    s, o, sU = cache
    db = s.shape[1]
    dy_o = np.einsum("ijk,jb->ikb", dy, o)
    dU = np.einsum("ia,ikb->akb", s, dy_o)
    row = dy.sum(axis=1)
    col = dy.sum(axis=0)
    ds = np.einsum("ikb,akb->ia", dy_o, U) + row @ W[:db].T
    do = np.einsum("ijk,ikb->jb", dy, sU) + col @ W[db:].T
    dW = np.concatenate([s.T @ row, o.T @ col])
    return ds, do, dU, dW, dy.sum(axis=(0, 1))


def cross_entropy(probs, gold, class_weight):
    """Weighted mean NLL over cells, and its gradient w.r.t. the logits."""
    n_tags = probs.shape[-1]
    flat = probs.reshape(-1, n_tags)
    g = gold.reshape(-1)
    if g.size and (g.min() < 0 or g.max() >= n_tags):
        raise ValueError(f"gold tag id outside [0, {n_tags})")
    w = class_weight[g]
    total = w.sum()
    picked = flat[np.arange(g.size), g]
    loss = float(-(w * np.log(np.maximum(picked, 1e-300))).sum() / total)
    dlogits = flat.copy()
    dlogits[np.arange(g.size), g] -= 1.0
    dlogits *= (w / total)[:, None]
    return loss, dlogits.reshape(probs.shape)
