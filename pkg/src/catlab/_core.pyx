# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled response-model kernels; drop-in twin of catlab.kernels_py."""

from libc.math cimport exp, fabs, log, log1p

import numpy as np

PROB_EPS = 1e-7
BACKEND_NAME = "compiled"

cdef double _EPS = 1e-7


cdef inline double csig(double x) noexcept nogil:
    cdef double e = exp(-fabs(x))
    if x >= 0.0:
        return 1.0 / (1.0 + e)
    return e / (1.0 + e)


cdef inline double cbce(double y, double p) noexcept nogil:
    if p < _EPS:
        p = _EPS
    elif p > 1.0 - _EPS:
        p = 1.0 - _EPS
    return -(y * log(p) + (1.0 - y) * log1p(-p))


# -- 1PL response model -------------------------------------------------------

def irt_predict(double raw, object b_obj):
    cdef double[::1] b = np.ascontiguousarray(b_obj, dtype=np.float64)
    cdef Py_ssize_t n = b.shape[0], i
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef double theta = csig(raw)
    for i in range(n):
        o[i] = csig(theta - b[i])
    return out


def irt_loss_grad(double raw, object b_obj, object y_obj):
    cdef double[::1] b = np.ascontiguousarray(b_obj, dtype=np.float64)
    cdef double[::1] y = np.ascontiguousarray(y_obj, dtype=np.float64)
    cdef Py_ssize_t n = b.shape[0], i
    cdef double theta = csig(raw)
    cdef double loss = 0.0, resid = 0.0, p
    for i in range(n):
        p = csig(theta - b[i])
        loss += cbce(y[i], p)
        resid += p - y[i]
    loss /= n
    cdef double grad = (resid / n) * theta * (1.0 - theta)
    return loss, grad


def irt_inner(double raw, object b_obj, object y_obj, int k_steps, double lr):
    cdef double[::1] b = np.ascontiguousarray(b_obj, dtype=np.float64)
    cdef double[::1] y = np.ascontiguousarray(y_obj, dtype=np.float64)
    cdef Py_ssize_t n = b.shape[0], i
    cdef int s
    cdef double theta, resid, p
    for s in range(k_steps):
        theta = csig(raw)
        resid = 0.0
        for i in range(n):
            p = csig(theta - b[i])
            resid += p - y[i]
        raw -= lr * (resid / n) * theta * (1.0 - theta)
    return raw


# -- Neural diagnosis model ---------------------------------------------------

cdef void _ncdm_forward_item(
    double[::1] theta,
    double[:, ::1] q, double[:, ::1] hdiff, double[::1] hdisc,
    double[:, ::1] w1, double[::1] b1,
    double[:, ::1] w2, double[::1] b2,
    double[:, ::1] w3, double[::1] b3,
    Py_ssize_t i,
    double[::1] x, double[::1] f1, double[::1] f2, double* p_out,
) noexcept nogil:
    cdef Py_ssize_t k, j, m
    cdef Py_ssize_t kk = q.shape[1], h1 = w1.shape[0], h2 = w2.shape[0]
    cdef double acc
    for k in range(kk):
        x[k] = q[i, k] * (theta[k] - hdiff[i, k]) * hdisc[i]
    for j in range(h1):
        acc = b1[j]
        for k in range(kk):
            acc += w1[j, k] * x[k]
        f1[j] = csig(acc)
    for m in range(h2):
        acc = b2[m]
        for j in range(h1):
            acc += w2[m, j] * f1[j]
        f2[m] = csig(acc)
    acc = b3[0]
    for m in range(h2):
        acc += w3[0, m] * f2[m]
    p_out[0] = csig(acc)


def ncdm_predict(object raw_obj, object q_obj, object hdiff_obj, object hdisc_obj,
                 object w1_obj, object b1_obj, object w2_obj, object b2_obj,
                 object w3_obj, object b3_obj):
    cdef double[::1] raw = np.ascontiguousarray(raw_obj, dtype=np.float64)
    cdef double[:, ::1] q = np.ascontiguousarray(q_obj, dtype=np.float64)
    cdef double[:, ::1] hdiff = np.ascontiguousarray(hdiff_obj, dtype=np.float64)
    cdef double[::1] hdisc = np.ascontiguousarray(hdisc_obj, dtype=np.float64)
    cdef double[:, ::1] w1 = np.ascontiguousarray(w1_obj, dtype=np.float64)
    cdef double[::1] b1 = np.ascontiguousarray(b1_obj, dtype=np.float64)
    cdef double[:, ::1] w2 = np.ascontiguousarray(w2_obj, dtype=np.float64)
    cdef double[::1] b2 = np.ascontiguousarray(b2_obj, dtype=np.float64)
    cdef double[:, ::1] w3 = np.ascontiguousarray(w3_obj, dtype=np.float64)
    cdef double[::1] b3 = np.ascontiguousarray(b3_obj, dtype=np.float64)

    cdef Py_ssize_t n = q.shape[0], kk = q.shape[1], i
    theta_arr = np.empty(kk, dtype=np.float64)
    cdef double[::1] theta = theta_arr
    for i in range(kk):
        theta[i] = csig(raw[i])

    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    x_arr = np.empty(kk, dtype=np.float64)
    f1_arr = np.empty(w1.shape[0], dtype=np.float64)
    f2_arr = np.empty(w2.shape[0], dtype=np.float64)
    cdef double[::1] x = x_arr, f1 = f1_arr, f2 = f2_arr
    cdef double p
    for i in range(n):
        _ncdm_forward_item(theta, q, hdiff, hdisc, w1, b1, w2, b2, w3, b3, i, x, f1, f2, &p)
        o[i] = p
    return out


cdef double _ncdm_grad_accum(
    double[::1] theta,
    double[:, ::1] q, double[:, ::1] hdiff, double[::1] hdisc,
    double[:, ::1] w1, double[::1] b1,
    double[:, ::1] w2, double[::1] b2,
    double[:, ::1] w3, double[::1] b3,
    double[::1] y,
    double[::1] x, double[::1] f1, double[::1] f2,
    double[::1] d1, double[::1] d2,
    double[::1] dtheta,
) noexcept nogil:
    """Fill dtheta with d(mean loss)/d(theta); return the mean loss."""
    cdef Py_ssize_t n = q.shape[0], kk = q.shape[1]
    cdef Py_ssize_t h1 = w1.shape[0], h2 = w2.shape[0]
    cdef Py_ssize_t i, j, k, m
    cdef double p, d3, acc, loss = 0.0
    for k in range(kk):
        dtheta[k] = 0.0
    for i in range(n):
        _ncdm_forward_item(theta, q, hdiff, hdisc, w1, b1, w2, b2, w3, b3, i, x, f1, f2, &p)
        loss += cbce(y[i], p)
        d3 = (p - y[i]) / n
        for m in range(h2):
            d2[m] = d3 * w3[0, m] * f2[m] * (1.0 - f2[m])
        for j in range(h1):
            acc = 0.0
            for m in range(h2):
                acc += d2[m] * w2[m, j]
            d1[j] = acc * f1[j] * (1.0 - f1[j])
        for k in range(kk):
            acc = 0.0
            for j in range(h1):
                acc += d1[j] * w1[j, k]
            dtheta[k] += acc * q[i, k] * hdisc[i]
    return loss / n


def ncdm_loss_grad(object raw_obj, object q_obj, object hdiff_obj, object hdisc_obj,
                   object w1_obj, object b1_obj, object w2_obj, object b2_obj,
                   object w3_obj, object b3_obj, object y_obj):
    cdef double[::1] raw = np.ascontiguousarray(raw_obj, dtype=np.float64)
    cdef double[:, ::1] q = np.ascontiguousarray(q_obj, dtype=np.float64)
    cdef double[:, ::1] hdiff = np.ascontiguousarray(hdiff_obj, dtype=np.float64)
    cdef double[::1] hdisc = np.ascontiguousarray(hdisc_obj, dtype=np.float64)
    cdef double[:, ::1] w1 = np.ascontiguousarray(w1_obj, dtype=np.float64)
    cdef double[::1] b1 = np.ascontiguousarray(b1_obj, dtype=np.float64)
    cdef double[:, ::1] w2 = np.ascontiguousarray(w2_obj, dtype=np.float64)
    cdef double[::1] b2 = np.ascontiguousarray(b2_obj, dtype=np.float64)
    cdef double[:, ::1] w3 = np.ascontiguousarray(w3_obj, dtype=np.float64)
    cdef double[::1] b3 = np.ascontiguousarray(b3_obj, dtype=np.float64)
    cdef double[::1] y = np.ascontiguousarray(y_obj, dtype=np.float64)

    cdef Py_ssize_t kk = q.shape[1], k
    theta_arr = np.empty(kk, dtype=np.float64)
    cdef double[::1] theta = theta_arr
    for k in range(kk):
        theta[k] = csig(raw[k])

    x_arr = np.empty(kk, dtype=np.float64)
    f1_arr = np.empty(w1.shape[0], dtype=np.float64)
    f2_arr = np.empty(w2.shape[0], dtype=np.float64)
    d1_arr = np.empty(w1.shape[0], dtype=np.float64)
    d2_arr = np.empty(w2.shape[0], dtype=np.float64)
    dtheta_arr = np.empty(kk, dtype=np.float64)
    cdef double[::1] x = x_arr, f1 = f1_arr, f2 = f2_arr
    cdef double[::1] d1 = d1_arr, d2 = d2_arr, dtheta = dtheta_arr

    cdef double loss = _ncdm_grad_accum(theta, q, hdiff, hdisc, w1, b1, w2, b2, w3, b3,
                                        y, x, f1, f2, d1, d2, dtheta)
    grad = np.empty(kk, dtype=np.float64)
    cdef double[::1] g = grad
    for k in range(kk):
        g[k] = dtheta[k] * theta[k] * (1.0 - theta[k])
    return loss, grad


def ncdm_inner(object raw_obj, object q_obj, object hdiff_obj, object hdisc_obj,
               object w1_obj, object b1_obj, object w2_obj, object b2_obj,
               object w3_obj, object b3_obj, object y_obj, int k_steps, double lr):
    raw_arr = np.array(raw_obj, dtype=np.float64, copy=True)
    cdef double[::1] raw = raw_arr
    cdef double[:, ::1] q = np.ascontiguousarray(q_obj, dtype=np.float64)
    cdef double[:, ::1] hdiff = np.ascontiguousarray(hdiff_obj, dtype=np.float64)
    cdef double[::1] hdisc = np.ascontiguousarray(hdisc_obj, dtype=np.float64)
    cdef double[:, ::1] w1 = np.ascontiguousarray(w1_obj, dtype=np.float64)
    cdef double[::1] b1 = np.ascontiguousarray(b1_obj, dtype=np.float64)
    cdef double[:, ::1] w2 = np.ascontiguousarray(w2_obj, dtype=np.float64)
    cdef double[::1] b2 = np.ascontiguousarray(b2_obj, dtype=np.float64)
    cdef double[:, ::1] w3 = np.ascontiguousarray(w3_obj, dtype=np.float64)
    cdef double[::1] b3 = np.ascontiguousarray(b3_obj, dtype=np.float64)
    cdef double[::1] y = np.ascontiguousarray(y_obj, dtype=np.float64)

    cdef Py_ssize_t kk = q.shape[1], k
    cdef int s
    theta_arr = np.empty(kk, dtype=np.float64)
    x_arr = np.empty(kk, dtype=np.float64)
    f1_arr = np.empty(w1.shape[0], dtype=np.float64)
    f2_arr = np.empty(w2.shape[0], dtype=np.float64)
    d1_arr = np.empty(w1.shape[0], dtype=np.float64)
    d2_arr = np.empty(w2.shape[0], dtype=np.float64)
    dtheta_arr = np.empty(kk, dtype=np.float64)
    cdef double[::1] theta = theta_arr, x = x_arr, f1 = f1_arr, f2 = f2_arr
    cdef double[::1] d1 = d1_arr, d2 = d2_arr, dtheta = dtheta_arr

    for s in range(k_steps):
        for k in range(kk):
            theta[k] = csig(raw[k])
        _ncdm_grad_accum(theta, q, hdiff, hdisc, w1, b1, w2, b2, w3, b3,
                         y, x, f1, f2, d1, d2, dtheta)
        for k in range(kk):
            raw[k] -= lr * dtheta[k] * theta[k] * (1.0 - theta[k])
    return raw_arr
