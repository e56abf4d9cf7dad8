"""Vectorised numpy kernels. Reference path and fallback when numba is off."""
import numpy as np


def layer_norm_forward(x, gamma, beta, eps):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    return xhat * gamma + beta, xhat, inv_std[..., 0]


def layer_norm_backward(dy, xhat, inv_std, gamma):
    d = xhat.shape[-1]
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    dx = (inv_std[:, None] / d) * (
        d * dxhat - dxhat.sum(axis=-1, keepdims=True) - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
    )
    return dx, dgamma, dbeta


def softmax_rows(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_rows_backward(dp, p):
    return p * (dp - (dp * p).sum(axis=-1, keepdims=True))


def segment_max(x, starts, ends):
    """Row-wise max of ``x[starts[k]:ends[k]]`` per window k; empty windows give zeros and index -1."""
    m = starts.shape[0]
    n, d = x.shape
    if m == 0:
        return np.zeros((0, d)), np.zeros((0, d), dtype=np.int64)
    rows = np.arange(n)
    mask = (rows[None, :] >= starts[:, None]) & (rows[None, :] < ends[:, None])
    masked = np.where(mask[:, :, None], x[None, :, :], -np.inf)
    arg = masked.argmax(axis=1)
    out = np.take_along_axis(masked, arg[:, None, :], axis=1)[:, 0, :]
    empty = ends <= starts
    out[empty] = 0.0
    arg[empty] = -1
    return out, arg.astype(np.int64)


def segment_max_backward(dout, arg, n_rows):
    d = dout.shape[1]
    dx = np.zeros((n_rows, d))
    k, col = np.nonzero(arg >= 0)
    np.add.at(dx, (arg[k, col], col), dout[k, col])
    return dx


def scatter_add_rows(n_rows, idx, src):
    out = np.zeros((n_rows, src.shape[1]))
    np.add.at(out, idx, src)
    return out
