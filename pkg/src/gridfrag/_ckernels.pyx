# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Signatures mirror :mod:`gridfrag._pykernels`."""

import numpy as np

from libc.math cimport exp, floor, lgamma, log

cdef double CLAMP = 700.0
cdef double RATE_FLOOR = 1e-300
cdef double PMF_CUTOFF = 1e-30


cdef inline double _logistic(double eta) noexcept nogil:
    if eta > CLAMP:
        eta = CLAMP
    elif eta < -CLAMP:
        eta = -CLAMP
    return 1.0 / (1.0 + exp(-eta))


def logistic_sum(const double[::1] u, const double[::1] v):
    cdef Py_ssize_t n = u.shape[0], m = v.shape[0], i, j
    out = np.zeros(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef double acc, ui
    with nogil:
        for i in range(n):
            acc = 0.0
            ui = u[i]
            for j in range(m):
                acc = acc + _logistic(ui - v[j])
            o[i] = acc
    return out


def poisson_loglik(const double[:, ::1] x, const double[::1] counts,
                   const double[::1] hours, const double[::1] alpha,
                   const double[::1] beta, double n_components):
    cdef Py_ssize_t n = x.shape[0], p = x.shape[1], t, i
    cdef double total = 0.0, eta, lam
    with nogil:
        for t in range(n):
            eta = 0.0
            for i in range(p):
                eta = eta + beta[i] * (x[t, i] - alpha[i])
            lam = n_components * _logistic(eta)
            if lam < RATE_FLOOR:
                lam = RATE_FLOOR
            if counts[t] != 0.0:
                total = total + counts[t] * log(lam)
            total = total - hours[t] * lam
    return total


def poisson_mixture_pmf(const double[::1] lam, Py_ssize_t ymax):
    cdef Py_ssize_t n = lam.shape[0], d, k, mode
    mean = np.zeros(ymax + 1, dtype=np.float64)
    sq = np.zeros(ymax + 1, dtype=np.float64)
    cdef double[::1] acc = mean
    cdef double[::1] acc2 = sq
    cdef double rate, pk, pm
    with nogil:
        for d in range(n):
            rate = lam[d]
            if rate <= 0.0:
                acc[0] += 1.0
                acc2[0] += 1.0
                continue
            mode = <Py_ssize_t> floor(rate)
            if mode > ymax:
                mode = ymax
            pm = exp(mode * log(rate) - rate - lgamma(mode + 1.0))
            pk = pm
            k = mode
            while k <= ymax:
                acc[k] += pk
                acc2[k] += pk * pk
                k += 1
                pk = pk * rate / k
                if pk < PMF_CUTOFF and k > rate:
                    break
            pk = pm
            k = mode
            while k > 0:
                pk = pk * k / rate
                k -= 1
                acc[k] += pk
                acc2[k] += pk * pk
                if pk < PMF_CUTOFF:
                    break
    if n > 0:
        mean /= n
        sq /= n
    return mean, sq
