# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled fast paths for the hot training kernels.

Same function surface as kernels._numpy; fused float32/float64 loops over
flat C-contiguous buffers. Row-wise ops (softmax, layer_norm) treat all
leading axes as rows over the last axis.
"""

import numpy as np

cimport cython

from libc.math cimport erf, erff, exp, expf, sqrt, sqrtf

ctypedef fused real:
    float
    double

cdef double INV_SQRT2 = 0.7071067811865476
cdef double INV_SQRT_2PI = 0.3989422804014327

BACKEND = "compiled"


cdef void _gelu_fwd(real[::1] x, real[::1] out) noexcept nogil:
    cdef Py_ssize_t i
    cdef Py_ssize_t n = x.shape[0]
    cdef double v
    cdef float vf
    if real is float:
        for i in range(n):
            vf = x[i]
            out[i] = <real> (0.5 * vf * (1.0 + erff(vf * <float> INV_SQRT2)))
    else:
        for i in range(n):
            v = <double> x[i]
            out[i] = <real> (0.5 * v * (1.0 + erf(v * INV_SQRT2)))


cdef void _gelu_bwd(real[::1] x, real[::1] dy, real[::1] out) noexcept nogil:
    cdef Py_ssize_t i
    cdef Py_ssize_t n = x.shape[0]
    cdef double v, cdf, pdf
    cdef float vf, cdff, pdff
    if real is float:
        for i in range(n):
            vf = x[i]
            cdff = 0.5 * (1.0 + erff(vf * <float> INV_SQRT2))
            pdff = (<float> INV_SQRT_2PI) * expf(-0.5 * vf * vf)
            out[i] = <real> (dy[i] * (cdff + vf * pdff))
    else:
        for i in range(n):
            v = <double> x[i]
            cdf = 0.5 * (1.0 + erf(v * INV_SQRT2))
            pdf = INV_SQRT_2PI * exp(-0.5 * v * v)
            out[i] = <real> ((<double> dy[i]) * (cdf + v * pdf))


cdef void _softmax_fwd(real[::1] x, real[::1] out,
                       Py_ssize_t rows, Py_ssize_t cols) noexcept nogil:
    cdef Py_ssize_t i, j, base
    cdef double m, s, e
    cdef float mf, ef
    for i in range(rows):
        base = i * cols
        if real is float:
            mf = x[base]
            for j in range(1, cols):
                if x[base + j] > mf:
                    mf = x[base + j]
            s = 0.0
            for j in range(cols):
                ef = expf(x[base + j] - mf)
                out[base + j] = <real> ef
                s += <double> ef
            for j in range(cols):
                out[base + j] = <real> ((<double> out[base + j]) / s)
        else:
            m = <double> x[base]
            for j in range(1, cols):
                if (<double> x[base + j]) > m:
                    m = <double> x[base + j]
            s = 0.0
            for j in range(cols):
                e = exp((<double> x[base + j]) - m)
                out[base + j] = <real> e
                s += e
            for j in range(cols):
                out[base + j] = <real> ((<double> out[base + j]) / s)


cdef void _softmax_bwd(real[::1] y, real[::1] dy, real[::1] out,
                       Py_ssize_t rows, Py_ssize_t cols) noexcept nogil:
    cdef Py_ssize_t i, j, base
    cdef double inner
    for i in range(rows):
        base = i * cols
        inner = 0.0
        for j in range(cols):
            inner += (<double> y[base + j]) * (<double> dy[base + j])
        for j in range(cols):
            out[base + j] = <real> ((<double> y[base + j])
                                    * ((<double> dy[base + j]) - inner))


cdef void _layer_norm_fwd(real[::1] x, double eps, real[::1] xhat, real[::1] rstd,
                          Py_ssize_t rows, Py_ssize_t cols) noexcept nogil:
    cdef Py_ssize_t i, j, base
    cdef double mu, var, d, r
    for i in range(rows):
        base = i * cols
        mu = 0.0
        for j in range(cols):
            mu += <double> x[base + j]
        mu /= cols
        var = 0.0
        for j in range(cols):
            d = (<double> x[base + j]) - mu
            var += d * d
        var /= cols
        r = 1.0 / sqrt(var + eps)
        rstd[i] = <real> r
        for j in range(cols):
            xhat[base + j] = <real> (((<double> x[base + j]) - mu) * r)


cdef void _layer_norm_bwd(real[::1] xhat, real[::1] rstd, real[::1] dy,
                          real[::1] out, Py_ssize_t rows, Py_ssize_t cols) noexcept nogil:
    cdef Py_ssize_t i, j, base
    cdef double mean_dy, mean_dy_xhat, r
    for i in range(rows):
        base = i * cols
        mean_dy = 0.0
        mean_dy_xhat = 0.0
        for j in range(cols):
            mean_dy += <double> dy[base + j]
            mean_dy_xhat += (<double> dy[base + j]) * (<double> xhat[base + j])
        mean_dy /= cols
        mean_dy_xhat /= cols
        r = <double> rstd[i]
        for j in range(cols):
            out[base + j] = <real> (r * ((<double> dy[base + j]) - mean_dy
                                         - (<double> xhat[base + j]) * mean_dy_xhat))


cdef void _adamw(real[::1] p, real[::1] g, real[::1] m, real[::1] v,
                 double lr, double beta1, double beta2, double eps,
                 double weight_decay, double bc1, double bc2) noexcept nogil:
    cdef Py_ssize_t i
    cdef Py_ssize_t n = p.shape[0]
    cdef double mi, vi
    for i in range(n):
        mi = beta1 * (<double> m[i]) + (1.0 - beta1) * (<double> g[i])
        vi = beta2 * (<double> v[i]) + (1.0 - beta2) * (<double> g[i]) * (<double> g[i])
        m[i] = <real> mi
        v[i] = <real> vi
        p[i] = <real> ((<double> p[i]) - lr * ((mi / bc1) / (sqrt(vi / bc2) + eps)
                                               + weight_decay * (<double> p[i])))


def _rows_cols(a):
    cols = int(a.shape[a.ndim - 1])
    return a.size // cols, cols


def gelu_fwd(x):
    x = np.ascontiguousarray(x)
    out = np.empty_like(x)
    if x.dtype == np.float64:
        _gelu_fwd[cython.double](x.reshape(-1), out.reshape(-1))
    else:
        _gelu_fwd[cython.float](x.reshape(-1), out.reshape(-1))
    return out


def gelu_bwd(x, dy):
    x = np.ascontiguousarray(x)
    dy = np.ascontiguousarray(dy, dtype=x.dtype)
    out = np.empty_like(x)
    if x.dtype == np.float64:
        _gelu_bwd[cython.double](x.reshape(-1), dy.reshape(-1), out.reshape(-1))
    else:
        _gelu_bwd[cython.float](x.reshape(-1), dy.reshape(-1), out.reshape(-1))
    return out


def softmax_fwd(x):
    if x.shape[x.ndim - 1] == 0:
        raise ValueError("softmax over empty axis")
    x = np.ascontiguousarray(x)
    out = np.empty_like(x)
    rows, cols = _rows_cols(x)
    if x.dtype == np.float64:
        _softmax_fwd[cython.double](x.reshape(-1), out.reshape(-1), rows, cols)
    else:
        _softmax_fwd[cython.float](x.reshape(-1), out.reshape(-1), rows, cols)
    return out


def softmax_bwd(y, dy):
    y = np.ascontiguousarray(y)
    dy = np.ascontiguousarray(dy, dtype=y.dtype)
    out = np.empty_like(y)
    rows, cols = _rows_cols(y)
    if y.dtype == np.float64:
        _softmax_bwd[cython.double](y.reshape(-1), dy.reshape(-1), out.reshape(-1),
                                    rows, cols)
    else:
        _softmax_bwd[cython.float](y.reshape(-1), dy.reshape(-1), out.reshape(-1),
                                   rows, cols)
    return out


def layer_norm_fwd(x, eps):
    x = np.ascontiguousarray(x)
    xhat = np.empty_like(x)
    rstd = np.empty(x.shape[:x.ndim - 1], dtype=x.dtype)
    rows, cols = _rows_cols(x)
    if x.dtype == np.float64:
        _layer_norm_fwd[cython.double](x.reshape(-1), eps, xhat.reshape(-1),
                                       rstd.reshape(-1), rows, cols)
    else:
        _layer_norm_fwd[cython.float](x.reshape(-1), eps, xhat.reshape(-1),
                                      rstd.reshape(-1), rows, cols)
    return xhat, rstd


def layer_norm_bwd(xhat, rstd, dy):
    xhat = np.ascontiguousarray(xhat)
    rstd = np.ascontiguousarray(rstd, dtype=xhat.dtype)
    dy = np.ascontiguousarray(dy, dtype=xhat.dtype)
    out = np.empty_like(xhat)
    rows, cols = _rows_cols(xhat)
    if xhat.dtype == np.float64:
        _layer_norm_bwd[cython.double](xhat.reshape(-1), rstd.reshape(-1),
                                       dy.reshape(-1), out.reshape(-1), rows, cols)
    else:
        _layer_norm_bwd[cython.float](xhat.reshape(-1), rstd.reshape(-1),
                                      dy.reshape(-1), out.reshape(-1), rows, cols)
    return out


def adamw_update(p, g, m, v, step, lr, beta1, beta2, eps, weight_decay):
    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    g = np.ascontiguousarray(g, dtype=p.dtype)
    if p.dtype == np.float64:
        _adamw[cython.double](p.reshape(-1), g.reshape(-1), m.reshape(-1),
                              v.reshape(-1), lr, beta1, beta2, eps,
                              weight_decay, bc1, bc2)
    else:
        _adamw[cython.float](p.reshape(-1), g.reshape(-1), m.reshape(-1),
                             v.reshape(-1), lr, beta1, beta2, eps,
                             weight_decay, bc1, bc2)
