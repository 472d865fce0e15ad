# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled training kernels.

Same contract and parameter layout as fedsim.kernels.pure; the per-sample
loops run without the GIL so client-training tasks parallelize on threads.
"""

from libc.math cimport exp, sqrt
from libc.stdint cimport int64_t

import numpy as np

name = "cython"

PROB_CLIP = 1e-12

cdef double _LO = 1e-12
cdef double _HI = 1.0 - 1e-12


cdef inline double _sigmoid(double z) noexcept nogil:
    cdef double e
    if z >= 0.0:
        e = exp(-z)
        return 1.0 / (1.0 + e)
    e = exp(z)
    return e / (1.0 + e)


cdef double _forward_one(const double[::1] theta,
                         Py_ssize_t d, Py_ssize_t h1, Py_ssize_t h2,
                         const double[:, ::1] X, Py_ssize_t row,
                         double[::1] a1, double[::1] a2) noexcept nogil:
    """Hidden activations for one sample; returns the raw sigmoid output."""
    cdef Py_ssize_t ob1 = h1 * d
    cdef Py_ssize_t ow2 = ob1 + h1
    cdef Py_ssize_t ob2 = ow2 + h2 * h1
    cdef Py_ssize_t ow3 = ob2 + h2
    cdef Py_ssize_t ob3 = ow3 + h2
    cdef Py_ssize_t i, j, base
    cdef double s
    for j in range(h1):
        s = theta[ob1 + j]
        base = j * d
        for i in range(d):
            s += theta[base + i] * X[row, i]
        a1[j] = s if s > 0.0 else 0.0
    for j in range(h2):
        s = theta[ob2 + j]
        base = ow2 + j * h1
        for i in range(h1):
            s += theta[base + i] * a1[i]
        a2[j] = s if s > 0.0 else 0.0
    s = theta[ob3]
    for j in range(h2):
        s += theta[ow3 + j] * a2[j]
    return _sigmoid(s)


cdef void _accumulate_gradient(const double[::1] theta,
                               Py_ssize_t d, Py_ssize_t h1, Py_ssize_t h2,
                               const double[:, ::1] X, Py_ssize_t row, double resid,
                               const double[::1] a1, const double[::1] a2,
                               double[::1] d1, double[::1] gacc) noexcept nogil:
    """Add one sample's backprop contributions (unscaled) into gacc."""
    cdef Py_ssize_t ob1 = h1 * d
    cdef Py_ssize_t ow2 = ob1 + h1
    cdef Py_ssize_t ob2 = ow2 + h2 * h1
    cdef Py_ssize_t ow3 = ob2 + h2
    cdef Py_ssize_t ob3 = ow3 + h2
    cdef Py_ssize_t i, j, base
    cdef double g
    gacc[ob3] += resid
    for j in range(h2):
        gacc[ow3 + j] += resid * a2[j]
    for i in range(h1):
        d1[i] = 0.0
    for j in range(h2):
        if a2[j] > 0.0:
            g = resid * theta[ow3 + j]
            gacc[ob2 + j] += g
            base = ow2 + j * h1
            for i in range(h1):
                gacc[base + i] += g * a1[i]
                d1[i] += g * theta[base + i]
    for i in range(h1):
        if a1[i] > 0.0:
            g = d1[i]
            gacc[ob1 + i] += g
            base = i * d
            for j in range(d):
                gacc[base + j] += g * X[row, j]


cdef void _train_impl(double[::1] theta,
                      Py_ssize_t d, Py_ssize_t h1, Py_ssize_t h2,
                      const double[:, ::1] X, const double[::1] y,
                      const int64_t[:, ::1] perms, Py_ssize_t batch_size,
                      int use_adam, double eta, double beta1, double beta2, double eps,
                      double[::1] a1, double[::1] a2, double[::1] d1,
                      double[::1] gacc, double[::1] mom, double[::1] vel) noexcept nogil:
    cdef Py_ssize_t n_params = theta.shape[0]
    cdef Py_ssize_t m = X.shape[0]
    cdef Py_ssize_t n_epochs = perms.shape[0]
    cdef Py_ssize_t e, start, stop, bi, row, k
    cdef double p, resid, inv, g, mhat, vhat
    cdef double b1t = 1.0
    cdef double b2t = 1.0
    for e in range(n_epochs):
        start = 0
        while start < m:
            stop = start + batch_size
            if stop > m:
                stop = m
            for k in range(n_params):
                gacc[k] = 0.0
            for bi in range(start, stop):
                row = <Py_ssize_t> perms[e, bi]
                p = _forward_one(theta, d, h1, h2, X, row, a1, a2)
                resid = p - y[row]
                _accumulate_gradient(theta, d, h1, h2, X, row, resid, a1, a2, d1, gacc)
            inv = 1.0 / <double> (stop - start)
            if use_adam:
                b1t *= beta1
                b2t *= beta2
                for k in range(n_params):
                    g = gacc[k] * inv
                    mom[k] = beta1 * mom[k] + (1.0 - beta1) * g
                    vel[k] = beta2 * vel[k] + (1.0 - beta2) * g * g
                    mhat = mom[k] / (1.0 - b1t)
                    vhat = vel[k] / (1.0 - b2t)
                    theta[k] -= eta * mhat / (sqrt(vhat) + eps)
            else:
                for k in range(n_params):
                    theta[k] -= eta * (gacc[k] * inv)
            start = stop


def _unpack_sizes(layer_sizes):
    d, h1, h2, out = (int(v) for v in layer_sizes)
    if out != 1:
        raise ValueError(f"output width must be 1, got {out}")
    n = h1 * d + h1 + h2 * h1 + h2 + h2 + 1
    return d, h1, h2, n


def predict_proba(theta, layer_sizes, X):
    d, h1, h2, n = _unpack_sizes(layer_sizes)
    cdef double[::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    if th.shape[0] != n:
        raise ValueError(f"theta has {th.shape[0]} values, expected {n}")
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    out_arr = np.empty(Xv.shape[0], dtype=np.float64)
    cdef double[::1] out = out_arr
    a1_arr = np.empty(h1, dtype=np.float64)
    a2_arr = np.empty(h2, dtype=np.float64)
    cdef double[::1] a1 = a1_arr
    cdef double[::1] a2 = a2_arr
    cdef Py_ssize_t dd = d, hh1 = h1, hh2 = h2
    cdef Py_ssize_t row, m = Xv.shape[0]
    cdef double p
    with nogil:
        for row in range(m):
            p = _forward_one(th, dd, hh1, hh2, Xv, row, a1, a2)
            if p < _LO:
                p = _LO
            elif p > _HI:
                p = _HI
            out[row] = p
    return out_arr


def batch_gradient(theta, layer_sizes, X, y):
    d, h1, h2, n = _unpack_sizes(layer_sizes)
    cdef double[::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    if th.shape[0] != n:
        raise ValueError(f"theta has {th.shape[0]} values, expected {n}")
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    grad_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] grad = grad_arr
    a1_arr = np.empty(h1, dtype=np.float64)
    a2_arr = np.empty(h2, dtype=np.float64)
    d1_arr = np.empty(h1, dtype=np.float64)
    cdef double[::1] a1 = a1_arr
    cdef double[::1] a2 = a2_arr
    cdef double[::1] d1 = d1_arr
    cdef Py_ssize_t dd = d, hh1 = h1, hh2 = h2
    cdef Py_ssize_t row, k, m = Xv.shape[0]
    cdef double p, inv
    with nogil:
        for row in range(m):
            p = _forward_one(th, dd, hh1, hh2, Xv, row, a1, a2)
            _accumulate_gradient(th, dd, hh1, hh2, Xv, row, p - yv[row], a1, a2, d1, grad)
        inv = 1.0 / <double> m
        for k in range(th.shape[0]):
            grad[k] *= inv
    return grad_arr


def train_epochs(theta, layer_sizes, X, y, perms, batch_size,
                 optimizer, eta, beta1=0.9, beta2=0.999, eps=1e-8):
    if optimizer not in ("adam", "sgd"):
        raise ValueError(f"unknown optimizer {optimizer!r}")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    d, h1, h2, n = _unpack_sizes(layer_sizes)
    theta_arr = np.array(theta, dtype=np.float64)
    if theta_arr.size != n:
        raise ValueError(f"theta has {theta_arr.size} values, expected {n}")
    cdef double[::1] th = theta_arr
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    # Index loops run unchecked; reject bad visit orders up front.
    from fedsim.kernels.pure import check_perms
    cdef const int64_t[:, ::1] pv = check_perms(perms, Xv.shape[0])
    a1_arr = np.empty(h1, dtype=np.float64)
    a2_arr = np.empty(h2, dtype=np.float64)
    d1_arr = np.empty(h1, dtype=np.float64)
    gacc_arr = np.empty(n, dtype=np.float64)
    mom_arr = np.zeros(n, dtype=np.float64)
    vel_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] a1 = a1_arr
    cdef double[::1] a2 = a2_arr
    cdef double[::1] d1 = d1_arr
    cdef double[::1] gacc = gacc_arr
    cdef double[::1] mom = mom_arr
    cdef double[::1] vel = vel_arr
    cdef Py_ssize_t dd = d, hh1 = h1, hh2 = h2, bs = int(batch_size)
    cdef int use_adam = 1 if optimizer == "adam" else 0
    cdef double c_eta = eta, c_b1 = beta1, c_b2 = beta2, c_eps = eps
    with nogil:
        _train_impl(th, dd, hh1, hh2, Xv, yv, pv, bs, use_adam,
                    c_eta, c_b1, c_b2, c_eps, a1, a2, d1, gacc, mom, vel)
    return theta_arr
