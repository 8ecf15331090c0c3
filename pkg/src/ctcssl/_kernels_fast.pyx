# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled CTC lattice and edit-distance kernels.

Must stay numerically interchangeable with ``_kernels_slow``; the test suite
runs both against each other.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log1p, INFINITY

cnp.import_array()


cdef inline double _lae(double a, double b) noexcept nogil:
    if a == -INFINITY:
        return b
    if b == -INFINITY:
        return a
    if a > b:
        return a + log1p(exp(b - a))
    return b + log1p(exp(a - b))


cdef inline Py_ssize_t _lab(const Py_ssize_t[::1] target, Py_ssize_t s, Py_ssize_t blank) noexcept nogil:
    if s % 2 == 0:
        return blank
    return target[s // 2]


cdef double _alpha(const double[:, ::1] logp, const Py_ssize_t[::1] target,
                   Py_ssize_t blank, double[:, ::1] alpha) noexcept nogil:
    cdef Py_ssize_t T = logp.shape[0]
    cdef Py_ssize_t S = 2 * target.shape[0] + 1
    cdef Py_ssize_t t, s, k
    cdef double a
    for s in range(S):
        alpha[0, s] = -INFINITY
    alpha[0, 0] = logp[0, blank]
    if S > 1:
        alpha[0, 1] = logp[0, target[0]]
    for t in range(1, T):
        for s in range(S):
            k = _lab(target, s, blank)
            a = alpha[t - 1, s]
            if s >= 1:
                a = _lae(a, alpha[t - 1, s - 1])
            if s >= 2 and k != blank and k != _lab(target, s - 2, blank):
                a = _lae(a, alpha[t - 1, s - 2])
            alpha[t, s] = a + logp[t, k] if a != -INFINITY else -INFINITY
    if S > 1:
        return _lae(alpha[T - 1, S - 1], alpha[T - 1, S - 2])
    return alpha[T - 1, S - 1]


def ctc_forward(const double[:, ::1] logp, const Py_ssize_t[::1] target, Py_ssize_t blank):
    """Return ln P(target | logp) via the alpha recursion (-inf if unreachable)."""
    cdef Py_ssize_t T = logp.shape[0]
    cdef Py_ssize_t S = 2 * target.shape[0] + 1
    alpha = np.empty((T, S), dtype=np.float64)
    cdef double[:, ::1] av = alpha
    cdef double ll
    with nogil:
        ll = _alpha(logp, target, blank, av)
    return ll


def ctc_occupancy(const double[:, ::1] logp, const Py_ssize_t[::1] target, Py_ssize_t blank):
    """Return ``(loglik, gamma)`` where gamma[t, k] is the posterior mass of label k at frame t.

    gamma rows sum to one whenever loglik is finite.
    """
    cdef Py_ssize_t T = logp.shape[0]
    cdef Py_ssize_t K = logp.shape[1]
    cdef Py_ssize_t S = 2 * target.shape[0] + 1
    cdef Py_ssize_t t, s, k, kn
    cdef double b, ll
    alpha = np.empty((T, S), dtype=np.float64)
    beta = np.empty((T, S), dtype=np.float64)
    acc = np.empty(K, dtype=np.float64)
    gamma = np.zeros((T, K), dtype=np.float64)
    cdef double[:, ::1] av = alpha
    cdef double[:, ::1] bv = beta
    cdef double[::1] cv = acc
    cdef double[:, ::1] gv = gamma
    with nogil:
        ll = _alpha(logp, target, blank, av)
        if ll != -INFINITY:
            # beta[t, s]: log mass of frames t+1.. given state s at t (emission at t excluded)
            for s in range(S):
                bv[T - 1, s] = -INFINITY
            bv[T - 1, S - 1] = 0.0
            if S > 1:
                bv[T - 1, S - 2] = 0.0
            for t in range(T - 2, -1, -1):
                for s in range(S):
                    k = _lab(target, s, blank)
                    b = bv[t + 1, s] + logp[t + 1, k]
                    if s + 1 < S:
                        b = _lae(b, bv[t + 1, s + 1] + logp[t + 1, _lab(target, s + 1, blank)])
                    if s + 2 < S:
                        kn = _lab(target, s + 2, blank)
                        if kn != blank and kn != k:
                            b = _lae(b, bv[t + 1, s + 2] + logp[t + 1, kn])
                    bv[t, s] = b
            for t in range(T):
                for k in range(K):
                    cv[k] = -INFINITY
                for s in range(S):
                    k = _lab(target, s, blank)
                    cv[k] = _lae(cv[k], av[t, s] + bv[t, s])
                for k in range(K):
                    if cv[k] != -INFINITY:
                        gv[t, k] = exp(cv[k] - ll)
    return ll, gamma


def edit_counts(const Py_ssize_t[::1] ref, const Py_ssize_t[::1] hyp):
    """Return ``(S, D, I)`` of a minimal unit-cost alignment, substitutions preferred on ties."""
    cdef Py_ssize_t n = ref.shape[0]
    cdef Py_ssize_t m = hyp.shape[0]
    cdef Py_ssize_t i, j, sub, dele, ins, best
    cdef Py_ssize_t ns = 0, nd = 0, ni = 0
    table = np.empty((n + 1, m + 1), dtype=np.intp)
    cdef Py_ssize_t[:, ::1] d = table
    with nogil:
        for i in range(n + 1):
            d[i, 0] = i
        for j in range(m + 1):
            d[0, j] = j
        for i in range(1, n + 1):
            for j in range(1, m + 1):
                sub = d[i - 1, j - 1] + (0 if ref[i - 1] == hyp[j - 1] else 1)
                dele = d[i - 1, j] + 1
                ins = d[i, j - 1] + 1
                best = sub
                if dele < best:
                    best = dele
                if ins < best:
                    best = ins
                d[i, j] = best
        i = n
        j = m
        while i > 0 or j > 0:
            if i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + (0 if ref[i - 1] == hyp[j - 1] else 1):
                if ref[i - 1] != hyp[j - 1]:
                    ns += 1
                i -= 1
                j -= 1
            elif i > 0 and d[i, j] == d[i - 1, j] + 1:
                nd += 1
                i -= 1
            else:
                ni += 1
                j -= 1
    return ns, nd, ni
