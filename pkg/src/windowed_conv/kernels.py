"""Hot numeric kernels, each with a numba and a numpy implementation.

Convolutions are expressed as cross-correlations of a pre-padded input with
tap-flipped filters; callers in :mod:`windowed_conv.conv_net` handle the
padding and flipping. Every kernel accumulates in float64.

The public names at the bottom of the module dispatch on
:data:`windowed_conv._accel.HAS_NUMBA` (gemm-shaped kernels always use
numpy); the ``*_np`` and ``*_nb`` variants
stay importable so the benchmark and tests can compare them directly.
"""
from __future__ import annotations

import numpy as np

from ._accel import HAS_NUMBA, njit, prange

# ---------------------------------------------------------------- numpy path


def corr1d_forward_np(xpad, wf):
    b, _, tp = xpad.shape
    o, _, k = wf.shape
    t = tp - k + 1
    y = np.zeros((b, o, t))
    for m in range(k):
        y += np.matmul(wf[:, :, m], xpad[:, :, m : m + t])
    return y


def corr1d_grad_weight_np(xpad, g, k):
    t = g.shape[2]
    o, i = g.shape[1], xpad.shape[1]
    g2 = g.transpose(1, 0, 2).reshape(o, -1)
    xt = xpad.transpose(1, 0, 2)
    dw = np.empty((o, i, k))
    for m in range(k):
        dw[:, :, m] = g2 @ xt[:, :, m : m + t].reshape(i, -1).T
    return dw


def corr1d_grad_input_np(g, wf, tp):
    b, _, t = g.shape
    _, i, k = wf.shape
    dx = np.zeros((b, i, tp))
    for m in range(k):
        dx[:, :, m : m + t] += np.matmul(wf[:, :, m].T, g)
    return dx


def corr2d_forward_np(xpad, wf):
    b, i, hp, wp = xpad.shape
    o, _, k, _ = wf.shape
    h, w = hp - k + 1, wp - k + 1
    y = np.zeros((b, o, h * w))
    for ky in range(k):
        for kx in range(k):
            xs = xpad[:, :, ky : ky + h, kx : kx + w].reshape(b, i, h * w)
            y += np.matmul(wf[:, :, ky, kx], xs)
    return y.reshape(b, o, h, w)


def corr2d_grad_weight_np(xpad, g, k):
    _, o, h, w = g.shape
    i = xpad.shape[1]
    # fold the batch into the contraction so each tap is one gemm
    g2 = g.transpose(1, 0, 2, 3).reshape(o, -1)
    xt = xpad.transpose(1, 0, 2, 3)
    dw = np.empty((o, i, k, k))
    for ky in range(k):
        for kx in range(k):
            xs = xt[:, :, ky : ky + h, kx : kx + w].reshape(i, -1)
            dw[:, :, ky, kx] = g2 @ xs.T
    return dw


def corr2d_grad_input_np(g, wf, hp, wp):
    b, o, h, w = g.shape
    _, i, k, _ = wf.shape
    g2 = g.reshape(b, o, h * w)
    dx = np.zeros((b, i, hp, wp))
    for ky in range(k):
        for kx in range(k):
            contrib = np.matmul(wf[:, :, ky, kx].T, g2).reshape(b, i, h, w)
            dx[:, :, ky : ky + h, kx : kx + w] += contrib
    return dx


def gaussian_raster_np(px, py, cx, cy, sigma):
    # exp separates over the axes, so the image is a rank-|points| product.
    inv = 1.0 / (2.0 * sigma * sigma)
    ex = np.exp(-((cx[None, :] - px[:, None]) ** 2) * inv)
    ey = np.exp(-((cy[None, :] - py[:, None]) ** 2) * inv)
    return (ex.T @ ey) / (2.0 * np.pi * sigma * sigma)


def dense_prim_np(w):
    n = w.shape[0]
    parent = np.full(n, -1, dtype=np.int64)
    in_tree = np.zeros(n, dtype=bool)
    best = np.full(n, np.inf)
    best[0] = 0.0
    for _ in range(n):
        cand = np.where(in_tree, np.inf, best)
        u = int(np.argmin(cand))
        in_tree[u] = True
        row = w[u]
        upd = (~in_tree) & (row < best)
        best[upd] = row[upd]
        parent[upd] = u
    return parent


# ---------------------------------------------------------------- numba path


@njit(cache=True, parallel=True)
def corr1d_forward_nb(xpad, wf):
    nb, ni, tp = xpad.shape
    no, _, k = wf.shape
    t = tp - k + 1
    y = np.zeros((nb, no, t))
    for bo in prange(nb * no):
        b = bo // no
        o = bo % no
        for i in range(ni):
            for m in range(k):
                wv = wf[o, i, m]
                for s in range(t):
                    y[b, o, s] += wv * xpad[b, i, s + m]
    return y


# fastmath lets the scalar reductions vectorize; results stay deterministic
# for a fixed build and thread count.
@njit(cache=True, parallel=True, fastmath=True)
def corr1d_grad_weight_nb(xpad, g, k):
    nb, no, t = g.shape
    ni = xpad.shape[1]
    dw = np.zeros((no, ni, k))
    for oi in prange(no * ni):
        o = oi // ni
        i = oi % ni
        for m in range(k):
            acc = 0.0
            for b in range(nb):
                for s in range(t):
                    acc += g[b, o, s] * xpad[b, i, s + m]
            dw[o, i, m] = acc
    return dw


@njit(cache=True, parallel=True)
def corr1d_grad_input_nb(g, wf, tp):
    nb, no, t = g.shape
    _, ni, k = wf.shape
    dx = np.zeros((nb, ni, tp))
    for bi in prange(nb * ni):
        b = bi // ni
        i = bi % ni
        for o in range(no):
            for m in range(k):
                wv = wf[o, i, m]
                for s in range(t):
                    dx[b, i, s + m] += wv * g[b, o, s]
    return dx


@njit(cache=True, parallel=True)
def corr2d_forward_nb(xpad, wf):
    nb, ni, hp, wp = xpad.shape
    no, _, k, _ = wf.shape
    h = hp - k + 1
    w = wp - k + 1
    y = np.zeros((nb, no, h, w))
    for bo in prange(nb * no):
        b = bo // no
        o = bo % no
        for i in range(ni):
            for ky in range(k):
                for kx in range(k):
                    wv = wf[o, i, ky, kx]
                    for r in range(h):
                        for c in range(w):
                            y[b, o, r, c] += wv * xpad[b, i, r + ky, c + kx]
    return y


@njit(cache=True, parallel=True, fastmath=True)
def corr2d_grad_weight_nb(xpad, g, k):
    nb, no, h, w = g.shape
    ni = xpad.shape[1]
    dw = np.zeros((no, ni, k, k))
    for oi in prange(no * ni):
        o = oi // ni
        i = oi % ni
        for ky in range(k):
            for kx in range(k):
                acc = 0.0
                for b in range(nb):
                    for r in range(h):
                        for c in range(w):
                            acc += g[b, o, r, c] * xpad[b, i, r + ky, c + kx]
                dw[o, i, ky, kx] = acc
    return dw


@njit(cache=True, parallel=True)
def corr2d_grad_input_nb(g, wf, hp, wp):
    nb, no, h, w = g.shape
    _, ni, k, _ = wf.shape
    dx = np.zeros((nb, ni, hp, wp))
    for bi in prange(nb * ni):
        b = bi // ni
        i = bi % ni
        for o in range(no):
            for ky in range(k):
                for kx in range(k):
                    wv = wf[o, i, ky, kx]
                    for r in range(h):
                        for c in range(w):
                            dx[b, i, r + ky, c + kx] += wv * g[b, o, r, c]
    return dx


@njit(cache=True, parallel=True)
def gaussian_raster_nb(px, py, cx, cy, sigma):
    inv = 1.0 / (2.0 * sigma * sigma)
    norm = 1.0 / (2.0 * np.pi * sigma * sigma)
    n = px.shape[0]
    nx = cx.shape[0]
    ny = cy.shape[0]
    ex = np.empty((n, nx))
    ey = np.empty((n, ny))
    for p in range(n):
        for i in range(nx):
            d = cx[i] - px[p]
            ex[p, i] = np.exp(-d * d * inv)
        for j in range(ny):
            d = cy[j] - py[p]
            ey[p, j] = np.exp(-d * d * inv)
    img = np.zeros((nx, ny))
    # one pixel per iteration; no cross-pixel accumulation
    for i in prange(nx):
        for j in range(ny):
            s = 0.0
            for p in range(n):
                s += ex[p, i] * ey[p, j]
            img[i, j] = s * norm
    return img


@njit(cache=True)
def dense_prim_nb(w):
    n = w.shape[0]
    parent = np.full(n, -1, dtype=np.int64)
    in_tree = np.zeros(n, dtype=np.bool_)
    best = np.full(n, np.inf)
    best[0] = 0.0
    for _ in range(n):
        u = -1
        bu = np.inf
        for v in range(n):
            if not in_tree[v] and (u < 0 or best[v] < bu):
                u = v
                bu = best[v]
        in_tree[u] = True
        for v in range(n):
            if not in_tree[v] and w[u, v] < best[v]:
                best[v] = w[u, v]
                parent[v] = u
    return parent


# The weight-gradient reductions and the separable raster are a handful of
# large gemms, where BLAS beats the loop kernels (see benchmarks/); they
# stay on numpy even when numba is present.
corr1d_grad_weight = corr1d_grad_weight_np
corr2d_grad_weight = corr2d_grad_weight_np
gaussian_raster = gaussian_raster_np

if HAS_NUMBA:
    corr1d_forward = corr1d_forward_nb
    corr1d_grad_input = corr1d_grad_input_nb
    corr2d_forward = corr2d_forward_nb
    corr2d_grad_input = corr2d_grad_input_nb
    dense_prim = dense_prim_nb
else:
    corr1d_forward = corr1d_forward_np
    corr1d_grad_input = corr1d_grad_input_np
    corr2d_forward = corr2d_forward_np
    corr2d_grad_input = corr2d_grad_input_np
    dense_prim = dense_prim_np
