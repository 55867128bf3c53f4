# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the numpy_ops kernels.

Same call signatures, same semantics, fused loops instead of numpy
temporaries. In-place functions require C-contiguous inputs and raise
if handed anything else.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, pow, sin, sqrt

cnp.import_array()


def phase_modulator(double[:, ::1] theta):
    cdef Py_ssize_t n0 = theta.shape[0], n1 = theta.shape[1]
    cdef cnp.ndarray out = np.empty((n0, n1), dtype=np.complex128)
    cdef double complex[:, ::1] o = out
    cdef Py_ssize_t i, j
    for i in range(n0):
        for j in range(n1):
            o[i, j] = cos(theta[i, j]) + 1j * sin(theta[i, j])
    return out


def apply_modulator(double complex[:, :, ::1] u, double complex[:, ::1] mod):
    cdef Py_ssize_t nb = u.shape[0], n0 = u.shape[1], n1 = u.shape[2]
    cdef cnp.ndarray out = np.empty((nb, n0, n1), dtype=np.complex128)
    cdef double complex[:, :, ::1] o = out
    cdef Py_ssize_t b, i, j
    for b in range(nb):
        for i in range(n0):
            for j in range(n1):
                o[b, i, j] = u[b, i, j] * mod[i, j]
    return out


def apply_modulator_conj(double complex[:, :, ::1] g, double complex[:, ::1] mod):
    cdef Py_ssize_t nb = g.shape[0], n0 = g.shape[1], n1 = g.shape[2]
    cdef cnp.ndarray out = np.empty((nb, n0, n1), dtype=np.complex128)
    cdef double complex[:, :, ::1] o = out
    cdef double mr, mi
    cdef Py_ssize_t b, i, j
    for b in range(nb):
        for i in range(n0):
            for j in range(n1):
                mr = mod[i, j].real
                mi = mod[i, j].imag
                o[b, i, j] = g[b, i, j] * (mr - 1j * mi)
    return out


def phase_grad_accum(double complex[:, :, ::1] u_post,
                     double complex[:, :, ::1] g_post,
                     double[:, ::1] out):
    cdef Py_ssize_t nb = u_post.shape[0], n0 = u_post.shape[1], n1 = u_post.shape[2]
    cdef Py_ssize_t b, i, j
    cdef double acc
    for i in range(n0):
        for j in range(n1):
            acc = 0.0
            for b in range(nb):
                # Im(conj(a) * b) = re(a) im(b) - im(a) re(b)
                acc += (u_post[b, i, j].real * g_post[b, i, j].imag
                        - u_post[b, i, j].imag * g_post[b, i, j].real)
            out[i, j] += acc
    return np.asarray(out)


def intensity(double complex[:, :, ::1] u):
    cdef Py_ssize_t nb = u.shape[0], n0 = u.shape[1], n1 = u.shape[2]
    cdef cnp.ndarray out = np.empty((nb, n0, n1), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    cdef double re, im
    cdef Py_ssize_t b, i, j
    for b in range(nb):
        for i in range(n0):
            for j in range(n1):
                re = u[b, i, j].real
                im = u[b, i, j].imag
                o[b, i, j] = re * re + im * im
    return out


def intensity_cotangent(double complex[:, :, ::1] u, double[:, :, ::1] dldi):
    cdef Py_ssize_t nb = u.shape[0], n0 = u.shape[1], n1 = u.shape[2]
    cdef cnp.ndarray out = np.empty((nb, n0, n1), dtype=np.complex128)
    cdef double complex[:, :, ::1] o = out
    cdef Py_ssize_t b, i, j
    for b in range(nb):
        for i in range(n0):
            for j in range(n1):
                o[b, i, j] = u[b, i, j] * (2.0 * dldi[b, i, j])
    return out


def spectral_scale(spec, factors):
    cdef double complex[:, :, ::1] s = spec
    cdef double complex[:, ::1] f = factors
    cdef Py_ssize_t nb = s.shape[0], n0 = s.shape[1], n1 = s.shape[2]
    cdef Py_ssize_t b, i, j
    for b in range(nb):
        for i in range(n0):
            for j in range(n1):
                s[b, i, j] = s[b, i, j] * f[i, j]
    return spec


def pool_rects(double[:, :, ::1] scores_map, long long[:, ::1] rects):
    cdef Py_ssize_t nb = scores_map.shape[0], nr = rects.shape[0]
    cdef cnp.ndarray out = np.empty((nb, nr), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t b, r, i, j
    cdef long long r0, r1, c0, c1
    cdef double acc, area
    for r in range(nr):
        r0 = rects[r, 0]; r1 = rects[r, 1]; c0 = rects[r, 2]; c1 = rects[r, 3]
        area = <double>((r1 - r0) * (c1 - c0))
        for b in range(nb):
            acc = 0.0
            for i in range(r0, r1):
                for j in range(c0, c1):
                    acc += scores_map[b, i, j]
            o[b, r] = acc / area
    return out


def scatter_rects(double[:, ::1] coef, long long[:, ::1] rects, Py_ssize_t side):
    cdef Py_ssize_t nb = coef.shape[0], nr = rects.shape[0]
    cdef cnp.ndarray out = np.zeros((nb, side, side), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t b, r, i, j
    cdef long long r0, r1, c0, c1
    cdef double w
    for r in range(nr):
        r0 = rects[r, 0]; r1 = rects[r, 1]; c0 = rects[r, 2]; c1 = rects[r, 3]
        for b in range(nb):
            w = coef[b, r] / <double>((r1 - r0) * (c1 - c0))
            for i in range(r0, r1):
                for j in range(c0, c1):
                    o[b, i, j] += w
    return out


def penalty_terms(double[:, :, ::1] intensity_map, double[:, ::1] mask, double scale):
    cdef Py_ssize_t nb = intensity_map.shape[0]
    cdef Py_ssize_t n0 = intensity_map.shape[1], n1 = intensity_map.shape[2]
    cdef cnp.ndarray values = np.empty(nb, dtype=np.float64)
    cdef cnp.ndarray grad = np.empty((nb, n0, n1), dtype=np.float64)
    cdef double[::1] vv = values
    cdef double[:, :, ::1] gg = grad
    cdef double acc, x
    cdef Py_ssize_t b, i, j
    for b in range(nb):
        acc = 0.0
        for i in range(n0):
            for j in range(n1):
                x = intensity_map[b, i, j] * mask[i, j]
                acc += x * intensity_map[b, i, j]
                gg[b, i, j] = 2.0 * scale * x
        vv[b] = scale * acc
    return values, grad


def adam_update(param, grad, m, v, Py_ssize_t step, double lr,
                double beta1, double beta2, double eps):
    cdef double[::1] p = param.reshape(-1)
    cdef double[::1] g = grad.reshape(-1)
    cdef double[::1] mm = m.reshape(-1)
    cdef double[::1] vv = v.reshape(-1)
    cdef Py_ssize_t n = p.shape[0], i
    cdef double c1 = 1.0 - pow(beta1, <double>step)
    cdef double c2 = 1.0 - pow(beta2, <double>step)
    cdef double mhat, vhat
    for i in range(n):
        mm[i] = beta1 * mm[i] + (1.0 - beta1) * g[i]
        vv[i] = beta2 * vv[i] + (1.0 - beta2) * g[i] * g[i]
        mhat = mm[i] / c1
        vhat = vv[i] / c2
        p[i] -= lr * mhat / (sqrt(vhat) + eps)
    return param
