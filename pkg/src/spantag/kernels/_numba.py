"""Loop kernels compiled with numba; same contracts as the numpy path."""
import numpy as np
from numba import njit


@njit(cache=True)
def layer_norm_forward(x, gamma, beta, eps):
    n, d = x.shape
    y = np.empty((n, d))
    xhat = np.empty((n, d))
    inv_std = np.empty(n)
    for i in range(n):
        mu = 0.0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            c = x[i, j] - mu
            var += c * c
        var /= d
        r = 1.0 / np.sqrt(var + eps)
        inv_std[i] = r
        for j in range(d):
            h = (x[i, j] - mu) * r
            xhat[i, j] = h
            y[i, j] = h * gamma[j] + beta[j]
    return y, xhat, inv_std


@njit(cache=True)
def layer_norm_backward(dy, xhat, inv_std, gamma):
    n, d = dy.shape
    dx = np.empty((n, d))
    dgamma = np.zeros(d)
    dbeta = np.zeros(d)
    for i in range(n):
        s1 = 0.0
        s2 = 0.0
        for j in range(d):
            g = dy[i, j] * gamma[j]
            s1 += g
            s2 += g * xhat[i, j]
            dgamma[j] += dy[i, j] * xhat[i, j]
            dbeta[j] += dy[i, j]
        scale = inv_std[i] / d
        for j in range(d):
            dx[i, j] = scale * (d * dy[i, j] * gamma[j] - s1 - xhat[i, j] * s2)
    return dx, dgamma, dbeta


@njit(cache=True)
def _softmax_2d(x):
    n, m = x.shape
    out = np.empty((n, m))
    for i in range(n):
        mx = x[i, 0]
        for j in range(1, m):
            if x[i, j] > mx:
                mx = x[i, j]
        s = 0.0
        for j in range(m):
            e = np.exp(x[i, j] - mx)
            out[i, j] = e
            s += e
        for j in range(m):
            out[i, j] /= s
    return out


@njit(cache=True)
def _softmax_backward_2d(dp, p):
    n, m = p.shape
    out = np.empty((n, m))
    for i in range(n):
        s = 0.0
        for j in range(m):
            s += dp[i, j] * p[i, j]
        for j in range(m):
            out[i, j] = p[i, j] * (dp[i, j] - s)
    return out


def softmax_rows(x):
    x = np.ascontiguousarray(x)
    return _softmax_2d(x.reshape(-1, x.shape[-1])).reshape(x.shape)


def softmax_rows_backward(dp, p):
    shape = p.shape
    dp = np.ascontiguousarray(dp).reshape(-1, shape[-1])
    p = np.ascontiguousarray(p).reshape(-1, shape[-1])
    return _softmax_backward_2d(dp, p).reshape(shape)


@njit(cache=True)
def segment_max(x, starts, ends):
    m = starts.shape[0]
    d = x.shape[1]
    out = np.zeros((m, d))
    arg = np.full((m, d), -1, dtype=np.int64)
    for k in range(m):
        s = starts[k]
        e = ends[k]
        if e <= s:
            continue
        for j in range(d):
            best = x[s, j]
            bi = s
            for r in range(s + 1, e):
                if x[r, j] > best:
                    best = x[r, j]
                    bi = r
            out[k, j] = best
            arg[k, j] = bi
    return out, arg


@njit(cache=True)
def segment_max_backward(dout, arg, n_rows):
    m, d = dout.shape
    dx = np.zeros((n_rows, d))
    for k in range(m):
        for j in range(d):
            r = arg[k, j]
            if r >= 0:
                dx[r, j] += dout[k, j]
    return dx


@njit(cache=True)
def scatter_add_rows(n_rows, idx, src):
    d = src.shape[1]
    out = np.zeros((n_rows, d))
    for k in range(idx.shape[0]):
        r = idx[k]
        for j in range(d):
            out[r, j] += src[k, j]
    return out
