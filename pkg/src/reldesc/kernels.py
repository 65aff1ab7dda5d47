"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is picked once at import time. Set ``RELDESC_DISABLE_NUMBA=1``
to force the numpy path (useful for debugging and for the benchmark).
Both paths operate on C-contiguous float64 arrays whose last axis is the
feature axis; callers reshape to 2-D before dispatching.
"""

import math
import os

import numpy as np

_FLAG = os.environ.get("RELDESC_DISABLE_NUMBA", "").strip().lower()
DISABLE_NUMBA = _FLAG in ("1", "true", "yes", "on")

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not DISABLE_NUMBA

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715


def backend():
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# numpy reference path


def np_softmax_rows(x):
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=1, keepdims=True)


def np_softmax_rows_backward(y, dy):
    s = (dy * y).sum(axis=1, keepdims=True)
    return y * (dy - s)


def np_logsumexp_rows(x):
    m = x.max(axis=1)
    return m + np.log(np.exp(x - m[:, None]).sum(axis=1))


def np_layernorm_rows(x, gamma, beta, eps):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gamma + beta, xhat, rstd[:, 0]


def np_layernorm_rows_backward(dy, xhat, rstd, gamma):
    n = xhat.shape[1]
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    g = dy * gamma
    dx = (rstd[:, None] / n) * (
        n * g - g.sum(axis=1, keepdims=True) - xhat * (g * xhat).sum(axis=1, keepdims=True)
    )
    return dx, dgamma, dbeta


def np_gelu(x):
    inner = _SQRT_2_OVER_PI * (x + _GELU_C * x ** 3)
    return 0.5 * x * (1.0 + np.tanh(inner))


def np_gelu_backward(x, dy):
    inner = _SQRT_2_OVER_PI * (x + _GELU_C * x ** 3)
    t = np.tanh(inner)
    dinner = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner)


def np_scatter_add_rows(n_rows, idx, src):
    out = np.zeros((n_rows, src.shape[1]))
    np.add.at(out, idx, src)
    return out


# ---------------------------------------------------------------------------
# numba path

if HAS_NUMBA:
    _jit = numba.njit(cache=True, fastmath=False)

    @_jit
    def nb_softmax_rows(x):
        n, d = x.shape
        out = np.empty_like(x)
        for i in range(n):
            m = x[i, 0]
            for j in range(1, d):
                if x[i, j] > m:
                    m = x[i, j]
            s = 0.0
            for j in range(d):
                e = math.exp(x[i, j] - m)
                out[i, j] = e
                s += e
            for j in range(d):
                out[i, j] /= s
        return out

    @_jit
    def nb_softmax_rows_backward(y, dy):
        n, d = y.shape
        out = np.empty_like(y)
        for i in range(n):
            s = 0.0
            for j in range(d):
                s += dy[i, j] * y[i, j]
            for j in range(d):
                out[i, j] = y[i, j] * (dy[i, j] - s)
        return out

    @_jit
    def nb_logsumexp_rows(x):
        n, d = x.shape
        out = np.empty(n)
        for i in range(n):
            m = x[i, 0]
            for j in range(1, d):
                if x[i, j] > m:
                    m = x[i, j]
            s = 0.0
            for j in range(d):
                s += math.exp(x[i, j] - m)
            out[i] = m + math.log(s)
        return out

    @_jit
    def nb_layernorm_rows(x, gamma, beta, eps):
        n, d = x.shape
        y = np.empty_like(x)
        xhat = np.empty_like(x)
        rstd = np.empty(n)
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
            r = 1.0 / math.sqrt(var + eps)
            rstd[i] = r
            for j in range(d):
                h = (x[i, j] - mu) * r
                xhat[i, j] = h
                y[i, j] = h * gamma[j] + beta[j]
        return y, xhat, rstd

    @_jit
    def nb_layernorm_rows_backward(dy, xhat, rstd, gamma):
        n, d = xhat.shape
        dx = np.empty_like(xhat)
        dgamma = np.zeros(d)
        dbeta = np.zeros(d)
        for i in range(n):
            sg = 0.0
            sgx = 0.0
            for j in range(d):
                g = dy[i, j] * gamma[j]
                sg += g
                sgx += g * xhat[i, j]
                dgamma[j] += dy[i, j] * xhat[i, j]
                dbeta[j] += dy[i, j]
            scale = rstd[i] / d
            for j in range(d):
                g = dy[i, j] * gamma[j]
                dx[i, j] = scale * (d * g - sg - xhat[i, j] * sgx)
        return dx, dgamma, dbeta

    @_jit
    def nb_gelu(x):
        flat_in = x.reshape(-1)
        flat_out = np.empty(flat_in.size)
        for k in range(flat_in.size):
            v = flat_in[k]
            inner = _SQRT_2_OVER_PI * (v + _GELU_C * v * v * v)
            flat_out[k] = 0.5 * v * (1.0 + math.tanh(inner))
        return flat_out.reshape(x.shape)

    @_jit
    def nb_gelu_backward(x, dy):
        fx = x.reshape(-1)
        fd = dy.reshape(-1)
        fo = np.empty(fx.size)
        for k in range(fx.size):
            v = fx[k]
            inner = _SQRT_2_OVER_PI * (v + _GELU_C * v * v * v)
            t = math.tanh(inner)
            dinner = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * v * v)
            fo[k] = fd[k] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner)
        return fo.reshape(x.shape)

    @_jit
    def nb_scatter_add_rows(n_rows, idx, src):
        out = np.zeros((n_rows, src.shape[1]))
        for i in range(idx.size):
            r = idx[i]
            for j in range(src.shape[1]):
                out[r, j] += src[i, j]
        return out


# ---------------------------------------------------------------------------
# dispatch


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


if USE_NUMBA:

    def softmax_rows(x):
        return nb_softmax_rows(_c(x))

    def softmax_rows_backward(y, dy):
        return nb_softmax_rows_backward(_c(y), _c(dy))

    def logsumexp_rows(x):
        return nb_logsumexp_rows(_c(x))

    def layernorm_rows(x, gamma, beta, eps):
        return nb_layernorm_rows(_c(x), _c(gamma), _c(beta), eps)

    def layernorm_rows_backward(dy, xhat, rstd, gamma):
        return nb_layernorm_rows_backward(_c(dy), _c(xhat), _c(rstd), _c(gamma))

    def gelu(x):
        return nb_gelu(_c(x))

    def gelu_backward(x, dy):
        return nb_gelu_backward(_c(x), _c(dy))

    def scatter_add_rows(n_rows, idx, src):
        return nb_scatter_add_rows(n_rows, np.ascontiguousarray(idx, dtype=np.int64), _c(src))

else:
    softmax_rows = np_softmax_rows
    softmax_rows_backward = np_softmax_rows_backward
    logsumexp_rows = np_logsumexp_rows
    layernorm_rows = np_layernorm_rows
    layernorm_rows_backward = np_layernorm_rows_backward
    gelu = np_gelu
    gelu_backward = np_gelu_backward
    scatter_add_rows = np_scatter_add_rows
