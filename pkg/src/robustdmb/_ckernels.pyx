# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-example kernels.

Arithmetic order here is mirrored line for line by ``_pure.py`` so that both
backends produce bit-identical floats.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, exp, log1p, fabs

cnp.import_array()

QUADRATIC = 0
LOGISTIC = 1
cdef double SLACK = 1.0 + 8.0 * 2.220446049250313e-16


cdef inline double _sqnorm(const double[::1] v) noexcept nogil:
    cdef Py_ssize_t k
    cdef double s = 0.0
    for k in range(v.shape[0]):
        s += v[k] * v[k]
    return s


cdef inline void _project(double[::1] w, double radius) noexcept nogil:
    cdef Py_ssize_t k
    cdef double n = sqrt(_sqnorm(w))
    cdef double scale
    # points a few ulps outside count as inside, so projecting twice is exact
    if n > radius * SLACK:
        scale = radius / n
        for k in range(w.shape[0]):
            w[k] = w[k] * scale


cdef inline double _quad_loss(const double[::1] w, const double[::1] z) noexcept nogil:
    cdef Py_ssize_t k
    cdef double s = 0.0, diff
    for k in range(w.shape[0]):
        diff = w[k] - z[k]
        s += diff * diff
    return 0.5 * s


cdef inline double _softplus(double a) noexcept nogil:
    # log(1 + exp(a)) without overflow
    if a > 0.0:
        return a + log1p(exp(-a))
    return log1p(exp(a))


cdef inline double _logit_margin(const double[::1] w, const double[::1] z) noexcept nogil:
    cdef Py_ssize_t k, d = w.shape[0]
    cdef double s = 0.0
    for k in range(d):
        s += w[k] * z[k]
    return z[d] * s


cdef inline double _logistic_loss(const double[::1] w, const double[::1] z) noexcept nogil:
    return _softplus(-_logit_margin(w, z))


cdef inline void _add_grad(int kind, const double[::1] w, const double[::1] z,
                           double[::1] out) noexcept nogil:
    cdef Py_ssize_t k, d = w.shape[0]
    cdef double coef, m
    if kind == 0:
        for k in range(d):
            out[k] = out[k] + (w[k] - z[k])
    else:
        m = _logit_margin(w, z)
        # d/dw softplus(-y w.x) = -y x sigmoid(-m)
        if m >= 0.0:
            coef = -z[d] * (exp(-m) / (1.0 + exp(-m)))
        else:
            coef = -z[d] * (1.0 / (1.0 + exp(m)))
        for k in range(d):
            out[k] = out[k] + coef * z[k]


cdef inline double _loss(int kind, const double[::1] w, const double[::1] z) noexcept nogil:
    if kind == 0:
        return _quad_loss(w, z)
    return _logistic_loss(w, z)


def loss(int kind, const double[::1] w, const double[::1] z):
    return _loss(kind, w, z)


def add_gradient(int kind, const double[::1] w, const double[::1] z, double[::1] out):
    """Add the gradient of the loss at ``w`` into ``out`` in place."""
    _add_grad(kind, w, z, out)


def serve(int kind, const double[::1] pred, const double[::1] w,
          const double[::1] comp, const double[::1] z, double[::1] gsum):
    """Loss at ``pred``, loss at ``comp``; gradient at ``w`` added to ``gsum``."""
    cdef double lp = _loss(kind, pred, z)
    cdef double lc = _loss(kind, comp, z)
    _add_grad(kind, w, z, gsum)
    return lp, lc


def project(const double[::1] w, double radius):
    out = np.array(w, dtype=np.float64, copy=True)
    cdef double[::1] o = out
    _project(o, radius)
    return out


def pg_step(const double[::1] w, const double[::1] g, double eta, double radius):
    """Projected gradient step ``P(w - eta * g)``."""
    cdef Py_ssize_t k
    out = np.empty(w.shape[0], dtype=np.float64)
    cdef double[::1] o = out
    for k in range(w.shape[0]):
        o[k] = w[k] - eta * g[k]
    _project(o, radius)
    return out


def da_point(const double[::1] gsum, double beta, double radius):
    """Dual averaging point ``P(-gsum / beta)`` for a ball centred at 0."""
    cdef Py_ssize_t k
    out = np.empty(gsum.shape[0], dtype=np.float64)
    cdef double[::1] o = out
    for k in range(gsum.shape[0]):
        o[k] = -gsum[k] / beta
    _project(o, radius)
    return out


def mean_of(const double[::1] gsum, long count):
    cdef Py_ssize_t k
    out = np.empty(gsum.shape[0], dtype=np.float64)
    cdef double[::1] o = out
    for k in range(gsum.shape[0]):
        o[k] = gsum[k] / count
    return out


def run_serial(int kind, const double[:, ::1] payloads, const double[::1] w0,
               const double[::1] comp, double radius, double lipschitz,
               double diameter, double sigma_eff, long batch):
    """Serial (mini-batch) projected gradient over a whole stream.

    Returns ``(loss_pred, loss_comp, step_at_prediction, final_w)``.
    """
    cdef Py_ssize_t n = payloads.shape[0], d = w0.shape[0]
    cdef Py_ssize_t i, k
    cdef long count = 0, steps = 0
    cdef double eta
    lp_arr = np.empty(n, dtype=np.float64)
    lc_arr = np.empty(n, dtype=np.float64)
    st_arr = np.empty(n, dtype=np.int64)
    w_arr = np.array(w0, dtype=np.float64, copy=True)
    g_arr = np.zeros(d, dtype=np.float64)
    cdef double[::1] lp = lp_arr, lc = lc_arr, w = w_arr, g = g_arr
    cdef long long[::1] st = st_arr
    with nogil:
        for i in range(n):
            lp[i] = _loss(kind, w, payloads[i])
            lc[i] = _loss(kind, comp, payloads[i])
            st[i] = steps
            _add_grad(kind, w, payloads[i], g)
            count += 1
            if count >= batch:
                steps += 1
                eta = diameter / (lipschitz * diameter + sigma_eff * sqrt(<double>steps))
                for k in range(d):
                    g[k] = g[k] / count
                for k in range(d):
                    w[k] = w[k] - eta * g[k]
                _project(w, radius)
                for k in range(d):
                    g[k] = 0.0
                count = 0
    return lp_arr, lc_arr, st_arr, w_arr
