# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops.  Semantics match ``_kernels_py`` operation for operation."""

import numpy as np
cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport fabs, log, pow, INFINITY
from numpy.random cimport bitgen_t
from numpy.random.c_distributions cimport random_standard_gamma, random_uniform

cnp.import_array()


def queue_recursion(const double[::1] arrival_times, const double[::1] services, double dep_start):
    cdef Py_ssize_t n = arrival_times.shape[0]
    cdef Py_ssize_t j
    cdef double dep = dep_start
    cdef double w, d
    waits_arr = np.empty(n, dtype=np.float64)
    deps_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] waits = waits_arr
    cdef double[::1] deps = deps_arr
    for j in range(n):
        w = arrival_times[j] - dep
        if w < 0.0:
            w = 0.0
        d = w + services[j]
        dep = dep + d
        waits[j] = w
        deps[j] = d
    return waits_arr, deps_arr, dep


def buffer_walk(const double[::1] incoming, const double[::1] sends,
                const cnp.uint8_t[::1] overt, long initial):
    cdef Py_ssize_t n_in = incoming.shape[0]
    cdef Py_ssize_t n_out = sends.shape[0]
    cdef Py_ssize_t i = 0, k
    cdef long buf = initial
    cdef long first_fail = -1
    cdef long skipped = 0
    cdef double t
    sent_arr = np.ones(n_out, dtype=np.uint8)
    cdef cnp.uint8_t[::1] sent = sent_arr
    for k in range(n_out):
        t = sends[k]
        while i < n_in and incoming[i] <= t:
            buf += 1
            i += 1
        if overt[k]:
            if buf > 0:
                buf -= 1
            else:
                sent[k] = 0
                skipped += 1
                if first_fail < 0:
                    first_fail = k
    buf += n_in - i
    return sent_arr, first_fail, buf, skipped


def codebook_loglik(const double[:, ::1] codewords, double d0, const double[::1] departures, double mu):
    cdef Py_ssize_t M = codewords.shape[0]
    cdef Py_ssize_t n = codewords.shape[1]
    cdef Py_ssize_t m, i
    cdef double logmu = log(mu)
    cdef double acum, dep, w, s, ll
    out_arr = np.empty(M, dtype=np.float64)
    cdef double[::1] out = out_arr
    for m in range(M):
        acum = 0.0
        dep = d0
        ll = 0.0
        for i in range(n):
            acum = acum + codewords[m, i]
            w = acum - dep
            if w < 0.0:
                w = 0.0
            s = departures[i] - w
            if s <= 0.0:
                ll = -INFINITY
                break
            ll = ll + (logmu - mu * s)
            dep = dep + departures[i]
        out[m] = ll
    return out_arr


cdef inline double _draw(bitgen_t *rng, int kind, double p1, double p2, double p3) noexcept nogil:
    cdef double y
    while True:
        if kind == 0:
            y = random_standard_gamma(rng, p2)
            if p3 != 1.0:
                y = pow(y, p3)
            y = p1 * y
        else:
            y = random_uniform(rng, p1, p2 - p1)
        if y > 0.0:
            return y


def scan_fresh_competitors(object generator, int kind, double p1, double p2, double p3,
                           const double[::1] departures, double d0, double mu, double target,
                           long long max_codewords):
    cdef object bitgen_obj = generator.bit_generator
    cdef bitgen_t *rng = <bitgen_t *> PyCapsule_GetPointer(bitgen_obj.capsule, "BitGenerator")
    cdef Py_ssize_t n = departures.shape[0]
    cdef Py_ssize_t i
    cdef long long m, scanned = max_codewords
    cdef double logmu = log(mu)
    cdef double slack = 1e-9 * (fabs(target) + 1.0)
    cdef double acum, dep, w, s, ll
    cdef bint alive, beaten = False
    with bitgen_obj.lock, nogil:
        for m in range(max_codewords):
            acum = 0.0
            dep = d0
            ll = 0.0
            alive = True
            for i in range(n):
                acum = acum + _draw(rng, kind, p1, p2, p3)
                w = acum - dep
                if w < 0.0:
                    w = 0.0
                s = departures[i] - w
                if s <= 0.0:
                    alive = False
                    break
                ll = ll + (logmu - mu * s)
                if ll + (n - i - 1) * logmu < target - slack:
                    alive = False
                    break
                dep = dep + departures[i]
            if alive and ll > target:
                beaten = True
                scanned = m + 1
                break
    return bool(beaten), int(scanned)
